"""
bvi: solvers and an experiment harness for monotone stochastic finite-sum
variational inequalities in Bregman geometry, with matrix-game benchmarks and
duality-gap vs. oracle-calls evaluation.

"""
__version__ = "0.0.1"
