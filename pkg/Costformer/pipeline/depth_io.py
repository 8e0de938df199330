"""Depth maps, images and camera files on disk."""

from __future__ import annotations

import pathlib

import cv2
import numpy as np

from Costformer.errors import DataFileError, ShapeError
from Costformer.geometry import CameraView

PNG_DEPTH_LEVELS = 65535


def write_pfm(path: str | pathlib.Path, depth: np.ndarray) -> None:
    """Write a single-channel little-endian portable float map."""
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim != 2:
        raise ShapeError(f"PFM depth must be 2-D, got {depth.shape}")
    height, width = depth.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    rows = np.flipud(depth).astype("<f4")
    pathlib.Path(path).write_bytes(header + rows.tobytes())


def read_pfm(path: str | pathlib.Path) -> np.ndarray:
    """Read a single-channel portable float map written by :func:`write_pfm`."""
    try:
        payload = pathlib.Path(path).read_bytes()
    except OSError as error:
        raise DataFileError(f"could not read depth map {path}") from error
    parts = payload.split(b"\n", 3)
    if len(parts) != 4 or parts[0].strip() != b"Pf":
        raise DataFileError(f"{path} is not a single-channel PFM")
    try:
        width, height = (int(v) for v in parts[1].split())
        scale = float(parts[2])
    except ValueError as error:
        raise DataFileError(f"{path} has a malformed PFM header") from error
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(parts[3], dtype=dtype)
    if data.size != width * height:
        raise DataFileError(
            f"{path} holds {data.size} values, need {width * height}"
        )
    return np.flipud(data.reshape(height, width)).astype(np.float32)


def write_depth_preview(
    path: str | pathlib.Path, depth: np.ndarray, d_min: float, d_max: float
) -> None:
    """Write depth quantized over ``[d_min, d_max]`` as a 16-bit PNG."""
    scaled = (np.asarray(depth, dtype=np.float64) - d_min) / (d_max - d_min)
    levels = np.round(np.clip(scaled, 0.0, 1.0) * PNG_DEPTH_LEVELS)
    if not cv2.imwrite(str(path), levels.astype(np.uint16)):
        raise DataFileError(f"could not write {path}")


def read_depth_preview(
    path: str | pathlib.Path, d_min: float, d_max: float
) -> np.ndarray:
    """Recover approximate depth from a 16-bit preview."""
    levels = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if levels is None or levels.dtype != np.uint16:
        raise DataFileError(f"{path} is not a 16-bit PNG")
    fraction = levels.astype(np.float64) / PNG_DEPTH_LEVELS
    return d_min + fraction * (d_max - d_min)


def write_image(path: str | pathlib.Path, image: np.ndarray) -> None:
    """Write an ``[H, W, 3]`` RGB image in ``[0, 1]`` as an 8-bit PNG."""
    rgb = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    if not cv2.imwrite(str(path), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR)):
        raise DataFileError(f"could not write {path}")


def read_image(path: str | pathlib.Path) -> np.ndarray:
    """Read an 8-bit PNG as ``[H, W, 3]`` RGB in ``[0, 1]``."""
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise DataFileError(f"could not read image {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0


def write_camera(path: str | pathlib.Path, view: CameraView) -> None:
    """Write ``K`` (3x3) then ``[R | t]`` (3x4), one row per line."""
    rows = [*view.K, *view.projection_matrix()]
    text = "\n".join(" ".join(f"{v:.17g}" for v in row) for row in rows)
    pathlib.Path(path).write_text(text + "\n", encoding="utf-8")


def read_camera(path: str | pathlib.Path) -> CameraView:
    """Read a camera file written by :func:`write_camera`."""
    try:
        text = pathlib.Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as error:
        raise DataFileError(f"could not read camera {path}") from error
    lines = [line.split() for line in text.splitlines() if line.strip()]
    try:
        K = np.array([[float(v) for v in row] for row in lines[:3]])
        extrinsics = np.array([[float(v) for v in row] for row in lines[3:6]])
    except ValueError as error:
        raise DataFileError(f"{path} holds a non-numeric entry") from error
    if K.shape != (3, 3) or extrinsics.shape != (3, 4):
        raise DataFileError(f"{path} is not a 3x3 K followed by a 3x4 [R|t]")
    return CameraView(K=K, R=extrinsics[:, :3], t=extrinsics[:, 3])
