"""
General python utilities for automating the boring stuff.
"""

import os
import hashlib
import logging

import numpy as np


def create_dir(dir_path):
    if not os.path.exists(dir_path):
        os.makedirs(dir_path)
    return dir_path


def make_rng(seed: int) -> np.random.Generator:
    """
    Create the generator every stochastic component draws from: Philox, a
    counter-based 64-bit bit generator, so that streams are reproducible
    across platforms for the same integer seed.
    """
    if seed < 0:
        raise ValueError(f"Seeds must be non-negative, {seed} given")
    return np.random.Generator(np.random.Philox(int(seed)))


def file_checksum(path: str, chunk_size=1 << 16) -> str:
    """Returns the sha256 hex digest of a file, read in chunks."""
    digest = hashlib.sha256()
    with open(path, "rb") as fhandle:
        for chunk in iter(lambda: fhandle.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def set_logger(log_name, log_console=True, log_dir=None):

    logger_master = logging.getLogger(log_name)
    logger_master.setLevel(logging.DEBUG)

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    if log_console:
        ch = logging.StreamHandler()
        ch.setLevel(logging.INFO)
        ch.setFormatter(formatter)
        logger_master.addHandler(ch)

    if log_dir:
        fh = logging.FileHandler(
            os.path.join(log_dir,
            f'{log_name}.log'))
        fh.setLevel(logging.WARNING)
        fh.setFormatter(formatter)
        logger_master.addHandler(fh)

    return logger_master
