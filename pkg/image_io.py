"""
Reading and writing images and matrices: PGM (P2 ASCII, P5 binary) and comma-separated CSV.

Pixel values are mapped to [0, 1] on read and back to the integer range on write.
"""
import logging
import os
from pathlib import Path

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

PGM_SUFFIXES = (".pgm", ".pnm")
CSV_SUFFIXES = (".csv", ".txt")


def _require_file(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"File not found: {path}")
    return path


def read_pgm(path) -> np.ndarray:
    """
    Read a P2 or P5 PGM file into a float image with values in [0, 1].
    """
    path = _require_file(path)
    with Image.open(path) as img:
        mode = img.mode
        data = np.asarray(img, dtype=np.float64)

    if mode == "L":
        scale = 255.0
    elif mode in ("I", "I;16", "I;16B"):
        scale = 65535.0
    else:
        raise ValueError(f"{path} is not a grayscale PGM image (mode {mode}).")

    logger.debug(f"image_io: read {path} ({data.shape[0]}x{data.shape[1]}, mode {mode})")
    return data / scale


def _quantize(image: np.ndarray, maxval: int) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"Expected a 2D image, got shape {image.shape}.")
    return np.rint(np.clip(image, 0.0, 1.0) * maxval).astype(np.int64)


def write_pgm(path, image: np.ndarray, maxval: int = 255, binary: bool = True):
    """
    Write an image with values in [0, 1] as PGM. Values outside [0, 1] are clipped.

    :param maxval: 255 or 65535.
    :param binary: P5 when True, P2 (plain text) otherwise.
    """
    if maxval not in (255, 65535):
        raise ValueError(f"Unsupported PGM maxval {maxval}. Use 255 or 65535.")

    levels = _quantize(image, maxval)
    path = Path(path)

    if not binary:
        M, N = levels.shape
        with open(path, "w") as f:
            f.write(f"P2\n{N} {M}\n{maxval}\n")
            for row in levels:
                f.write(" ".join(str(v) for v in row) + "\n")
        return

    if maxval == 255:
        img = Image.fromarray(levels.astype(np.uint8), mode="L")
    else:
        img = Image.fromarray(levels.astype(np.int32), mode="I")
    img.save(path, format="PPM")


def read_csv_matrix(path) -> np.ndarray:
    """
    Read a matrix stored one row per line with comma-separated decimals.
    """
    path = _require_file(path)
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as e:
        raise ValueError(f"Could not parse {path} as a CSV matrix: {e}") from e


def write_csv_matrix(path, matrix: np.ndarray):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    np.savetxt(path, matrix, delimiter=",", fmt="%.17g")


def read_data(path) -> np.ndarray:
    """
    Read an image or matrix, choosing the format from the file extension.
    """
    suffix = os.path.splitext(str(path))[1].lower()
    if suffix in PGM_SUFFIXES:
        return read_pgm(path)
    if suffix in CSV_SUFFIXES:
        return read_csv_matrix(path)
    raise ValueError(f"Unsupported data file '{path}'. Use .pgm or .csv.")


def write_data(path, data: np.ndarray):
    suffix = os.path.splitext(str(path))[1].lower()
    if suffix in PGM_SUFFIXES:
        write_pgm(path, data)
    elif suffix in CSV_SUFFIXES:
        write_csv_matrix(path, data)
    else:
        raise ValueError(f"Unsupported output file '{path}'. Use .pgm or .csv.")
