"""
Utility functions to write and read game matrices. The binary exchange format
is dense and row-major: a 16-byte header (magic "BVI1", u32 rows, u32 cols,
4 reserved zero bytes) followed by little-endian float64 entries. Small
instances can also be imported from headerless CSV files.

"""
import os
import json
import logging

import numpy as np
import pandas as pd

from bvi.utils import file_checksum

logger = logging.getLogger("bvi.matrix_utils")

MAGIC = b"BVI1"
HEADER_DTYPE = np.dtype("<u4")
PAYLOAD_DTYPE = np.dtype("<f8")
HEADER_SIZE = 16


class MatrixFormatError(ValueError):
    """Raised when a matrix file cannot be decoded."""
    pass


def encode_matrix(A) -> bytes:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"Only 2-D matrices can be encoded, got {A.ndim}-D")
    header = MAGIC + np.array([A.shape[0], A.shape[1], 0],
                              dtype=HEADER_DTYPE).tobytes()
    return header + np.ascontiguousarray(A, dtype=PAYLOAD_DTYPE).tobytes()


def decode_matrix(payload: bytes, source="<bytes>") -> np.ndarray:
    if len(payload) < HEADER_SIZE or payload[:4] != MAGIC:
        raise MatrixFormatError(f"{source} is not a BVI1 matrix file")
    rows, cols, _ = np.frombuffer(payload[4:HEADER_SIZE], dtype=HEADER_DTYPE)
    expected = HEADER_SIZE + int(rows) * int(cols) * PAYLOAD_DTYPE.itemsize
    if len(payload) != expected:
        raise MatrixFormatError(f"{source} has {len(payload)} bytes, "
                                f"expected {expected} for {rows}x{cols}")
    A = np.frombuffer(payload[HEADER_SIZE:], dtype=PAYLOAD_DTYPE)
    A = A.reshape(int(rows), int(cols)).astype(np.float64)
    if not np.all(np.isfinite(A)):
        raise MatrixFormatError(f"{source} contains non-finite entries")
    return A


def write_matrix(path: str, A) -> str:
    """Write a matrix in the binary format, returning the path."""
    with open(path, "wb") as fhandle:
        fhandle.write(encode_matrix(A))
    logger.info(f"Matrix {np.shape(A)} written in {path}")
    return path


def read_matrix(path: str) -> np.ndarray:
    with open(path, "rb") as fhandle:
        return decode_matrix(fhandle.read(), source=path)


def read_matrix_csv(path: str) -> np.ndarray:
    """Read a headerless, comma-separated matrix with '.' decimals."""
    A = pd.read_csv(path, header=None).to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(A)):
        raise MatrixFormatError(f"{path} contains missing or non-finite entries")
    return A


def load_matrix(path: str) -> np.ndarray:
    """Dispatch on the extension: CSV for '.csv', binary otherwise."""
    if os.path.splitext(path)[1].lower() == ".csv":
        return read_matrix_csv(path)
    return read_matrix(path)


def write_metadata(matrix_path: str, generator: str, params: dict) -> str:
    """
    Write the JSON sidecar of a matrix file, recording the generator, its
    parameters and the sha256 checksum of the binary file.
    """
    meta_path = matrix_path + ".json"
    metadata = {
        "generator": generator,
        "params": params,
        "sha256": file_checksum(matrix_path),
    }
    with open(meta_path, "w", encoding="utf-8") as fhandle:
        json.dump(metadata, fhandle, indent=2, sort_keys=True)
        fhandle.write("\n")
    return meta_path
