"""Ray-cast synthetic scenes of textured slanted planes."""

from __future__ import annotations

import logging
import pathlib
import tomllib
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import tomli_w
from scipy.spatial.transform import Rotation

from Costformer.errors import DataFileError, DomainError, ShapeError
from Costformer.geometry import CameraView, pixel_grid
from Costformer.pipeline.config import SceneConfig
from Costformer.pipeline.depth_io import (
    read_camera,
    read_image,
    read_pfm,
    write_camera,
    write_image,
    write_pfm,
)

logger = logging.getLogger(__name__)

FOCAL_FACTOR = 0.9
ROTATION_SIGMA = 0.02
BASELINE_RANGE = (0.2, 0.3)
PLANE_OFFSET_RANGE = (3.2, 4.0)
MAX_SLOPE = 0.3
TEXTURE_WAVES = 4
TEXTURE_FREQUENCY = (4.0, 12.0)


@dataclass(frozen=True)
class Plane:
    """Surface ``Z = z0 + sx * X + sy * Y`` in reference coordinates."""

    z0: float
    sx: float
    sy: float
    frequencies: np.ndarray
    phases: np.ndarray

    def texture(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Sum-of-sines colour in ``[0, 1]`` at world points ``(X, Y)``."""
        fx, fy = self.frequencies[:, 0], self.frequencies[:, 1]
        x, y = X[..., None, None], Y[..., None, None]
        arg = x * fx[:, None] + y * fy[:, None]
        waves = np.sin(arg + self.phases)
        return 0.5 + 0.5 * waves.mean(axis=-2)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """Reference plus source images with exact cameras and depth.

    ``images[0]`` and ``cameras[0]`` belong to the reference view, whose
    pose is the identity; ``depth`` is its ground-truth ``Z`` per pixel.
    """

    images: tuple[np.ndarray, ...]
    cameras: tuple[CameraView, ...]
    depth: np.ndarray
    d_min: float
    d_max: float

    def __post_init__(self) -> None:
        """Check the views line up."""
        if len(self.images) != len(self.cameras) or len(self.images) < 2:
            raise ShapeError("need a reference and at least one source view")
        shape = self.images[0].shape
        if any(image.shape != shape for image in self.images):
            raise ShapeError("all views must share one image size")
        if self.depth.shape != shape[:2]:
            raise ShapeError(f"depth {self.depth.shape} does not match {shape}")

    @property
    def source_count(self) -> int:
        """Number of source views ``N``."""
        return len(self.images) - 1

    @property
    def valid(self) -> np.ndarray:
        """Pixels with finite, positive ground truth."""
        return np.isfinite(self.depth) & (self.depth > 0)


def _intrinsics(height: int, width: int) -> np.ndarray:
    """Pinhole ``K`` with focal ``0.9 W`` and the image centre."""
    focal = FOCAL_FACTOR * width
    return np.array(
        [
            [focal, 0.0, (width - 1) / 2.0],
            [0.0, focal, (height - 1) / 2.0],
            [0.0, 0.0, 1.0],
        ]
    )


def _random_plane(rng: np.random.Generator) -> Plane:
    """Draw a slanted plane and its texture."""
    low, high = TEXTURE_FREQUENCY
    magnitude = rng.uniform(low, high, size=TEXTURE_WAVES)
    angle = rng.uniform(0.0, np.pi, size=TEXTURE_WAVES)
    return Plane(
        z0=float(rng.uniform(*PLANE_OFFSET_RANGE)),
        sx=float(rng.uniform(-MAX_SLOPE, MAX_SLOPE)),
        sy=float(rng.uniform(-MAX_SLOPE, MAX_SLOPE)),
        frequencies=np.stack(
            [magnitude * np.cos(angle), magnitude * np.sin(angle)], axis=1
        ),
        phases=rng.uniform(0.0, 2.0 * np.pi, size=(TEXTURE_WAVES, 3)),
    )


def _source_camera(
    rng: np.random.Generator, K: np.ndarray, index: int
) -> CameraView:
    """Small rotation and a sideways baseline alternating left and right."""
    rotvec = rng.normal(0.0, ROTATION_SIGMA, size=3)
    R = Rotation.from_rotvec(rotvec).as_matrix()
    side = 1.0 if index % 2 == 0 else -1.0
    center = np.array(
        [
            side * rng.uniform(*BASELINE_RANGE),
            rng.uniform(-0.05, 0.05),
            rng.uniform(-0.05, 0.05),
        ]
    )
    return CameraView(K=K, R=R, t=-R @ center)


def render_view(
    camera: CameraView, planes: Sequence[Plane], height: int, width: int
) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast ``planes`` from ``camera``; the front-most hit wins.

    Returns the ``[H, W, 3]`` image and the ``[H, W]`` ray parameter of the
    hit, which is the ``Z`` depth for the reference camera. Pixels that
    hit nothing are black with infinite depth.
    """
    pixels = pixel_grid(height, width)
    homogeneous = np.concatenate([pixels, np.ones((len(pixels), 1))], axis=1)
    directions = homogeneous @ (camera.R.T @ camera.K_inv).T
    c = camera.center
    best = np.full(len(pixels), np.inf)
    colour = np.zeros((len(pixels), 3))
    for plane in planes:
        dx, dy, dz = directions.T
        denominator = dz - plane.sx * dx - plane.sy * dy
        numerator = plane.z0 + plane.sx * c[0] + plane.sy * c[1] - c[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = numerator / denominator
        hit = np.isfinite(lam) & (lam > 0) & (lam < best)
        points = c + lam[:, None] * directions
        colour[hit] = plane.texture(points[hit, 0], points[hit, 1])
        best = np.where(hit, lam, best)
    return colour.reshape(height, width, 3), best.reshape(height, width)


def generate_scene(
    config: SceneConfig, seed: int, index: int = 0
) -> SyntheticScene:
    """Build scene ``index`` of the stream selected by ``seed``."""
    sequence = np.random.SeedSequence(seed, spawn_key=(index,))
    rng = np.random.default_rng(sequence)
    height, width = config.height, config.width
    K = _intrinsics(height, width)
    planes = [_random_plane(rng) for _ in range(config.planes)]
    reference = CameraView.reference(K)
    cameras = [reference] + [
        _source_camera(rng, K, view) for view in range(config.sources)
    ]
    images = []
    depth = np.zeros((height, width))
    for view, camera in enumerate(cameras):
        image, hit = render_view(camera, planes, height, width)
        images.append(image.astype(np.float32))
        if view == 0:
            depth = hit
    if not np.isfinite(depth).all():
        raise DomainError("reference view sees past every plane")
    if depth.min() < config.d_min or depth.max() > config.d_max:
        logger.warning(
            "scene %d depth [%.3f, %.3f] exceeds the range [%s, %s]",
            index,
            depth.min(),
            depth.max(),
            config.d_min,
            config.d_max,
        )
    logger.debug("generated scene %d with %d planes", index, len(planes))
    return SyntheticScene(
        images=tuple(images),
        cameras=tuple(cameras),
        depth=depth.astype(np.float32),
        d_min=config.d_min,
        d_max=config.d_max,
    )


def generate_scenes(config: SceneConfig, seed: int) -> list[SyntheticScene]:
    """Build ``config.scenes`` scenes from one seed."""
    return [
        generate_scene(config, seed, index) for index in range(config.scenes)
    ]


def save_scene(scene: SyntheticScene, directory: str | pathlib.Path) -> None:
    """Write images, cameras, ground truth and ``scene.toml``."""
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for view, (image, camera) in enumerate(
        zip(scene.images, scene.cameras, strict=True)
    ):
        write_image(directory / f"image_{view:02d}.png", image)
        write_camera(directory / f"cam_{view:02d}.txt", camera)
    write_pfm(directory / "depth_gt.pfm", scene.depth)
    meta = {
        "views": len(scene.images),
        "height": scene.depth.shape[0],
        "width": scene.depth.shape[1],
        "d_min": scene.d_min,
        "d_max": scene.d_max,
    }
    (directory / "scene.toml").write_text(tomli_w.dumps(meta), encoding="utf-8")
    logger.info("wrote scene with %d views to %s", len(scene.images), directory)


def load_scene(directory: str | pathlib.Path) -> SyntheticScene:
    """Read a scene directory written by :func:`save_scene`."""
    directory = pathlib.Path(directory)
    try:
        text = (directory / "scene.toml").read_text(encoding="utf-8")
        meta = tomllib.loads(text)
        views = int(meta["views"])
        d_min, d_max = float(meta["d_min"]), float(meta["d_max"])
    except FileNotFoundError as error:
        raise DataFileError(f"{directory} holds no scene.toml") from error
    except (tomllib.TOMLDecodeError, KeyError, TypeError, ValueError) as error:
        raise DataFileError(f"{directory}/scene.toml is malformed") from error
    images = tuple(
        read_image(directory / f"image_{view:02d}.png") for view in range(views)
    )
    cameras = tuple(
        read_camera(directory / f"cam_{view:02d}.txt") for view in range(views)
    )
    return SyntheticScene(
        images=images,
        cameras=cameras,
        depth=read_pfm(directory / "depth_gt.pfm"),
        d_min=d_min,
        d_max=d_max,
    )
