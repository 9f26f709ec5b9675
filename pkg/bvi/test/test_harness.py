"""
Tests for matrix generators, the experiment harness, trace aggregation and
the configuration schema.
"""
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from bvi.config import ConfigError, ExperimentSettings, load_settings
from bvi.generators import (generate, generate_policeman_burglar,
                            generate_ramp_matrix, standard_normals)
from bvi.harness import (GridSearchError, batches_to_target, frame_to_records,
                         grid_search, make_plan, make_problem, resolve_config,
                         run_method, sweep_batches)
from bvi.matrix_utils import write_matrix
from bvi.plotting import read_traces
from bvi.problems import MatrixGame
from bvi.solvers.base import RunRecord, TracePoint
from bvi.solvers import mirror_prox
from bvi.solvers.registry import (METHODS, UnknownMethodError,
                                  register_method)
from bvi.stats import aggregate


def make_record(gaps, calls, seed=0, method="optimistic", b=1):
    trace = tuple(TracePoint(c, g, 0.) for c, g in zip(calls, gaps))
    return RunRecord(method=method, trace=trace, x_S=np.empty(0),
                     fingerprint="", seed=seed, b=b, eta=.1, gamma=0.,
                     total_calls=calls[-1], n_inner_steps=0, n_refreshes=0)


@pytest.fixture
def sweep_settings(tmp_path):
    return ExperimentSettings(
        generator="ramp", n=6, methods=["optimistic", "mirror-prox",
                                        "vr-mirror-prox"],
        batches=[1, 2], seeds=[0, 1], budget=120, gap_every=6,
        out_dir=str(tmp_path))

# **************************************************************************** #
# Generators
# **************************************************************************** #

def test_policeman_burglar_structure():
    theta = .8
    A = generate_policeman_burglar(4, seed=3, theta=theta)
    assert A.shape == (4, 4)
    assert np.all(A >= 0)
    assert_array_equal(np.diag(A), np.zeros(4))

    wealth = np.abs(standard_normals(4, 3))
    index = np.arange(4)
    distance = np.abs(index[:, None] - index[None, :])
    assert_allclose(A, wealth[:, None] * (1 - np.exp(-theta * distance)),
                    rtol=1e-14)
    assert_array_equal(A, generate("policeman-burglar", 4, seed=3))
    assert not np.array_equal(A, generate_policeman_burglar(4, seed=4))


def test_standard_normals_are_finite_and_reproducible():
    draws = standard_normals(1000, 0)
    assert np.all(np.isfinite(draws))
    assert_array_equal(draws, standard_normals(1000, 0))
    assert abs(draws.mean()) < .2
    assert draws.std() == pytest.approx(1., abs=.1)


def test_ramp_matrix():
    assert_allclose(generate_ramp_matrix(2), [[1 / 3, 2 / 3], [2 / 3, 1.]])
    assert_array_equal(generate("ramp", 3, seed=5), generate_ramp_matrix(3))


def test_generator_errors():
    with pytest.raises(ValueError, match="policeman-burglar, ramp"):
        generate("unknown", 4)
    with pytest.raises(ValueError):
        generate_policeman_burglar(1, seed=0)
    with pytest.raises(ValueError):
        generate_policeman_burglar(4, seed=0, theta=0.)
    with pytest.raises(ValueError):
        generate_ramp_matrix(1)
    with pytest.raises(ValueError):
        standard_normals(3, -1)

# **************************************************************************** #
# Problems and parameters from settings
# **************************************************************************** #

def test_make_problem_from_files(tmp_path):
    A = generate_ramp_matrix(3)
    path = write_matrix(str(tmp_path / "ramp3.bvi"), A)
    problem = make_problem(ExperimentSettings(matrix=path))
    assert_array_equal(problem.A, A)
    assert problem.label == "ramp3"

    csv_path = tmp_path / "small.csv"
    csv_path.write_text("0,1\n-1,0\n")
    problem = make_problem(ExperimentSettings(matrix=str(csv_path),
                                              decomposition="columns"))
    assert_array_equal(problem.A, [[0., 1.], [-1., 0.]])
    assert problem.decomposition.value == "columns"


def test_make_problem_matrix_seed():
    settings = ExperimentSettings(n=5, seed=1, matrix_seed=2)
    assert_array_equal(make_problem(settings).A,
                       generate_policeman_burglar(5, seed=2))
    settings = ExperimentSettings(n=5, seed=1)
    assert_array_equal(make_problem(settings).A,
                       generate_policeman_burglar(5, seed=1))


def test_resolve_config():
    settings = ExperimentSettings(generator="ramp", n=6, budget=120)
    problem = make_problem(settings)

    config = resolve_config(problem, "optimistic", settings)
    assert config.K == 2
    assert config.gamma == 1. / 16
    assert config.S == 120 // 6 + 1

    explicit = settings.model_copy(update={"eta": .2, "S": 3})
    config = resolve_config(problem, "optimistic", explicit, b=1, seed=4)
    assert (config.eta, config.gamma, config.K, config.S, config.seed) \
        == (.2, 0., 2, 3, 4)

    config = resolve_config(problem, "mirror-prox", settings, b=2)
    assert config.eta == pytest.approx(1. / (2 * problem.lipschitz.L2))
    assert config.K == 10
    assert config.b == 2

    config = resolve_config(problem, "vr-mirror-prox", settings, b=1)
    assert config.K == 3
    assert config.eta == pytest.approx(.99 * min(
        np.sqrt(1. / 3) / problem.lipschitz.barL2, 1. / problem.lipschitz.L2))

    with pytest.raises(ValueError):
        resolve_config(problem, "optimistic",
                       settings.model_copy(update={"theory": None}))


def test_baselines_follow_the_dual_norm_variant():
    settings = ExperimentSettings(generator="ramp", n=6, budget=120,
                                  theory="cor2")
    problem = make_problem(settings)
    lip = problem.lipschitz
    config = resolve_config(problem, "mirror-prox", settings)
    assert config.eta == pytest.approx(1. / (2 * lip.L))

    config = resolve_config(problem, "vr-mirror-prox", settings, b=1)
    factor = lip.L * np.sqrt(1. + np.log(6))
    assert config.eta == pytest.approx(.99 * min(np.sqrt(1. / 3) / factor,
                                                 1. / factor))

    config = resolve_config(problem, "mirror-prox",
                            settings.model_copy(update={"eta": .3}))
    assert config.eta == .3

# **************************************************************************** #
# Sweeps
# **************************************************************************** #

def test_sweep_batches(sweep_settings, tmp_path):
    problem = make_problem(sweep_settings)
    plan = make_plan(sweep_settings, problem, out_dir=str(tmp_path))
    assert plan.budget == 120
    assert len(plan.cells) == 12
    records = sweep_batches(plan, problem)

    assert [(r.method, r.b, r.seed) for r in records] == plan.cells
    for record in records:
        assert record.total_calls <= 120
        assert record.matrix == "ramp"
        assert record.n == 6
        calls = [point.oracle_calls for point in record.trace]
        assert np.all(np.diff(calls) > 0)

    trace_df = read_traces(str(tmp_path / "sweep.csv"))
    reloaded = frame_to_records(trace_df)
    assert len(reloaded) == len(records)
    for original, copy in zip(records, reloaded):
        assert (copy.method, copy.b, copy.seed) \
            == (original.method, original.b, original.seed)
        assert copy.trace == original.trace


def test_sweep_is_independent_of_parallelism(sweep_settings):
    problem = make_problem(sweep_settings)
    plan = make_plan(sweep_settings, problem)
    sequential = sweep_batches(plan, problem, n_jobs=1)
    parallel = sweep_batches(plan, problem, n_jobs=2)
    for first, second in zip(sequential, parallel):
        assert first.trace == second.trace
        assert_array_equal(first.x_S, second.x_S)


def test_run_method_rejects_unknown_methods(sweep_settings):
    problem = make_problem(sweep_settings)
    config = resolve_config(problem, "optimistic", sweep_settings)
    with pytest.raises(ValueError):
        run_method(problem, "extragradient", sweep_settings, config=config)
    with pytest.raises(UnknownMethodError, match="mirror-prox"):
        resolve_config(problem, "extragradient", sweep_settings)
    with pytest.raises(ConfigError):
        load_settings(flags={"methods": ["optimistic", "extragradient"]})


def halved_mirror_prox(problem, config, gap_every, budget):
    record = mirror_prox(problem, config.eta / 2, budget // (2 * problem.M),
                         gap_every=gap_every, budget=budget,
                         seed=config.seed, b=config.b)
    return replace(record, method="halved-mirror-prox")


def test_registered_method_runs_in_sweeps_and_tuning(monkeypatch):
    monkeypatch.setitem(METHODS, "halved-mirror-prox", halved_mirror_prox)
    settings = ExperimentSettings(
        generator="ramp", n=4, methods=["mirror-prox", "halved-mirror-prox"],
        batches=[1], seeds=[0], eta=.4, budget=80)
    problem = make_problem(settings)
    records = sweep_batches(make_plan(settings, problem), problem)
    assert [record.method for record in records] \
        == ["mirror-prox", "halved-mirror-prox"]
    assert records[1].eta == .2
    assert records[1].trace == mirror_prox(problem, .2, 10,
                                           gap_every=4, budget=80).trace

    best, _ = grid_search(problem, "halved-mirror-prox", [.4], [0.],
                          budget=80, settings=settings)
    assert best.eta == .4

    with pytest.raises(ValueError, match="explicit eta"):
        resolve_config(problem, "halved-mirror-prox",
                       settings.model_copy(update={"eta": None}))
    with pytest.raises(ValueError, match="already registered"):
        register_method("mirror-prox", halved_mirror_prox)

# **************************************************************************** #
# Grid search
# **************************************************************************** #

def test_grid_search_singleton():
    settings = ExperimentSettings(generator="ramp", n=4)
    problem = make_problem(settings)
    best, leaderboard = grid_search(problem, "optimistic", [.1], [0.],
                                    budget=40, settings=settings)
    assert best.eta == .1
    assert best.gamma == 0.
    assert list(leaderboard.columns) == ["method", "eta", "gamma",
                                         "median_final_gap", "n_seeds"]
    assert len(leaderboard) == 1


def test_grid_search_matches_direct_runs():
    settings = ExperimentSettings(generator="ramp", n=4)
    problem = make_problem(settings)
    best, leaderboard = grid_search(problem, "optimistic", [.1, .5],
                                    [0., .05], budget=60, settings=settings)
    assert len(leaderboard) == 4
    for row in leaderboard.itertuples():
        point = settings.model_copy(update={"eta": row.eta, "gamma": row.gamma,
                                            "budget": 60})
        direct = run_method(problem, "optimistic", point, seed=0)
        assert row.median_final_gap == direct.final_gap
    assert leaderboard["median_final_gap"].is_monotonic_increasing
    assert (best.eta, best.gamma) == (leaderboard.loc[0, "eta"],
                                      leaderboard.loc[0, "gamma"])


def test_grid_search_breaks_ties_towards_small_steps():
    game = MatrixGame([[1., -1.], [-1., 1.]])
    best, leaderboard = grid_search(game, "optimistic", [.3, .1], [.2, 0.],
                                    budget=40, seeds=(0, 1))
    assert (best.eta, best.gamma) == (.1, 0.)
    assert list(leaderboard["eta"]) == [.1, .1, .3, .3]
    assert list(leaderboard["n_seeds"]) == [2, 2, 2, 2]


def test_grid_search_mirror_prox_ignores_momentum():
    settings = ExperimentSettings(generator="ramp", n=4)
    problem = make_problem(settings)
    _, leaderboard = grid_search(problem, "mirror-prox", [.1, .2], [0., .5],
                                 budget=40, settings=settings)
    assert list(leaderboard["gamma"]) == [0., 0.]


def test_grid_search_all_diverged(monkeypatch):
    monkeypatch.setattr("bvi.harness._final_gap", lambda *args: np.nan)
    settings = ExperimentSettings(generator="ramp", n=4)
    problem = make_problem(settings)
    with pytest.raises(GridSearchError):
        grid_search(problem, "optimistic", [.1, 1.], [0.], budget=40,
                    settings=settings)
    with pytest.raises(ValueError):
        grid_search(problem, "optimistic", [], [0.], budget=40)

# **************************************************************************** #
# Aggregation
# **************************************************************************** #

def test_aggregate_single_record():
    summary = aggregate([make_record([1., .5], [10, 20])])
    assert list(summary["oracle_calls"]) == [10, 20]
    assert list(summary["gap_median"]) == [1., .5]
    assert list(summary["n_seeds"]) == [1, 1]


def test_aggregate_identical_seeds():
    records = [make_record([1., .5], [10, 20], seed=s) for s in range(3)]
    summary = aggregate(records)
    assert_array_equal(summary["gap_q25"], summary["gap_median"])
    assert_array_equal(summary["gap_q75"], summary["gap_median"])
    assert list(summary["n_seeds"]) == [3, 3]


def test_aggregate_quartiles():
    records = [make_record([gap], [10], seed=s)
               for s, gap in enumerate([1., 2., 4.])]
    summary = aggregate(records)
    assert summary.loc[0, "gap_median"] == 2.
    assert summary.loc[0, "gap_q25"] == 1.5
    assert summary.loc[0, "gap_q75"] == 3.


def test_aggregate_separates_configurations():
    records = [make_record([1.], [10], b=1), make_record([3.], [10], b=2)]
    summary = aggregate(pd.concat([r.to_frame() for r in records]))
    assert list(summary["b"]) == [1, 2]
    assert list(summary["gap_median"]) == [1., 3.]


def test_aggregate_errors():
    with pytest.raises(ValueError):
        aggregate([])
    records = [make_record([1., .5], [10, 20], seed=0),
               make_record([1., .5], [10, 30], seed=1)]
    with pytest.raises(ValueError, match="different checkpoints"):
        aggregate(records)


def test_batches_to_target():
    records = [make_record([1., .5, .09, .05], [10, 20, 30, 40]),
               make_record([1., .5], [10, 20], seed=1)]
    targets = batches_to_target(records, target_ratio=.1)
    assert list(targets.columns) == ["method", "b", "seed", "calls_to_target"]
    assert targets.loc[0, "calls_to_target"] == 30
    assert np.isnan(targets.loc[1, "calls_to_target"])

# **************************************************************************** #
# Configuration
# **************************************************************************** #

def test_load_settings_precedence(tmp_path):
    path = tmp_path / "experiment.toml"
    path.write_text('[matrix]\ngenerator = "ramp"\nn = 8\n\n'
                    '[protocol]\nbatches = [1, 3]\neta = 0.5\n')
    settings = load_settings(str(path))
    assert (settings.generator, settings.n, settings.batches, settings.eta) \
        == ("ramp", 8, [1, 3], .5)

    settings = load_settings(str(path), pairs=["n=9", "eta=0.25"],
                             flags={"n": "10", "eta": None})
    assert settings.n == 10
    assert settings.eta == .25


def test_load_settings_errors(tmp_path):
    path = tmp_path / "experiment.toml"
    path.write_text("unknown_key = 1\n")
    with pytest.raises(ConfigError):
        load_settings(str(path))
    path.write_text("[a]\nn = 4\n[b]\nn = 5\n")
    with pytest.raises(ConfigError):
        load_settings(str(path))
    path.write_text("n = \n")
    with pytest.raises(ConfigError):
        load_settings(str(path))
    with pytest.raises(ConfigError):
        load_settings(pairs=["n"])
    with pytest.raises(ConfigError):
        load_settings(pairs=["n=1"])


def test_override_values_are_parsed():
    settings = load_settings(pairs=["generator=ramp",
                                    "methods=['optimistic', 'mirror-prox']",
                                    "shared_batch=true"])
    assert settings.generator == "ramp"
    assert settings.methods == ["optimistic", "mirror-prox"]
    assert settings.shared_batch is True


def test_parallel_from_environment(monkeypatch):
    monkeypatch.setenv("BVI_THREADS", "3")
    assert ExperimentSettings().parallel == 3
    assert load_settings(flags={"parallel": "2"}).parallel == 2
    monkeypatch.setenv("BVI_THREADS", "many")
    with pytest.raises(ValueError):
        ExperimentSettings()

# **************************************************************************** #
# Desk-scale reproduction
# **************************************************************************** #

@pytest.fixture
def desk_settings():
    return ExperimentSettings(
        generator="policeman-burglar", n=50, matrix_seed=0, theory="cor1",
        methods=["optimistic"], batches=[1], seeds=[0, 1, 2, 3, 4],
        budget=200 * 50, gap_every=50)


def median_final_ratio(records):
    return float(np.median([record.final_gap / record.initial_gap
                            for record in records]))


def median_final_gap(records, method):
    return float(np.median([record.final_gap for record in records
                            if record.method == method]))


@pytest.mark.slow
def test_theoretical_step_barely_moves_the_gap(desk_settings):
    problem = make_problem(desk_settings)
    records = sweep_batches(make_plan(desk_settings, problem), problem)
    config = resolve_config(problem, "optimistic", desk_settings)
    assert config.K == 17
    assert config.gamma == pytest.approx(1. / 17)
    assert config.eta == pytest.approx(6.6e-5, rel=.02)
    # far from a tenfold reduction at 200 M oracle calls
    assert median_final_ratio(records) == pytest.approx(.9927, abs=2e-3)
    assert all(record.final_gap < record.initial_gap for record in records)


@pytest.mark.slow
def test_theoretical_step_never_reaches_target(desk_settings):
    settings = desk_settings.model_copy(update={"batches": [1, 2, 5, 10]})
    problem = make_problem(settings)
    records = sweep_batches(make_plan(settings, problem), problem)
    to_target = batches_to_target(records, target_ratio=.1)
    assert len(to_target) == 4 * 5
    assert to_target["calls_to_target"].isna().all()


@pytest.mark.slow
def test_dual_norm_variant_stalls_before_target(desk_settings):
    settings = desk_settings.model_copy(
        update={"theory": "cor2", "batches": [1, 2, 5]})
    problem = make_problem(settings)
    records = sweep_batches(make_plan(settings, problem), problem)
    for b in (1, 2, 5):
        ratio = median_final_ratio([record for record in records
                                    if record.b == b])
        assert .59 <= ratio <= .65
    assert batches_to_target(records)["calls_to_target"].isna().all()


@pytest.mark.slow
def test_baselines_at_equal_budget(desk_settings):
    settings = desk_settings.model_copy(
        update={"methods": ["optimistic", "vr-mirror-prox"]})
    problem = make_problem(settings)
    records = sweep_batches(make_plan(settings, problem), problem)
    optimistic = median_final_gap(records, "optimistic")
    vr = median_final_gap(records, "vr-mirror-prox")
    assert optimistic == pytest.approx(1.247, rel=5e-3)
    assert vr == pytest.approx(1.166, rel=5e-3)
    assert optimistic / vr == pytest.approx(1.07, rel=.01)

    # Mirror Prox with the max-entry step is deterministic
    step = settings.model_copy(update={"eta": .5 / problem.lipschitz.L})
    mp = run_method(problem, "mirror-prox", step).final_gap
    assert mp == pytest.approx(.235, rel=5e-3)
    assert optimistic / mp == pytest.approx(5.31, rel=.01)


@pytest.mark.slow
def test_large_batch_calls_to_target(desk_settings):
    settings = desk_settings.model_copy(
        update={"methods": ["optimistic", "vr-mirror-prox"], "batches": [10]})
    problem = make_problem(settings)
    records = sweep_batches(make_plan(settings, problem), problem)
    to_target = batches_to_target(records).groupby("method")[
        "calls_to_target"].median()
    assert set(to_target.index) == {"optimistic", "vr-mirror-prox"}
    # the optimistic method never gets there, so no ratio is defined
    assert np.isnan(to_target["optimistic"])
