"""Pinhole camera views relative to the reference camera."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from Costformer.errors import DomainError, ShapeError
from Costformer.tensor_core import Tensor

ORTHONORMAL_TOL = 1e-5


@dataclass(frozen=True, eq=False)
class CameraView:
    """Intrinsics ``K`` and the pose mapping reference to this view.

    A point ``X`` in reference-camera coordinates lands at ``R @ X + t``
    in this view. ``features`` is the ``[H, W, C]`` map seen by the view,
    absent for cameras that only describe geometry.
    """

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    features: Tensor | None = None

    def __post_init__(self) -> None:
        """Validate the calibration and store float64 copies."""
        K = np.array(self.K, dtype=np.float64)
        R = np.array(self.R, dtype=np.float64)
        t = np.array(self.t, dtype=np.float64).reshape(-1)
        if K.shape != (3, 3) or R.shape != (3, 3) or t.shape != (3,):
            raise ShapeError("K and R must be 3x3 and t a 3-vector")
        if not np.allclose(np.tril(K, -1), 0.0) or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise DomainError("K must be upper-triangular with positive focals")
        if abs(np.linalg.det(K)) < 1e-12:
            raise DomainError("K is singular")
        if not np.allclose(R @ R.T, np.eye(3), atol=ORTHONORMAL_TOL) or (
            abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL
        ):
            raise DomainError("R must be a rotation (orthonormal, det=+1)")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def reference(
        cls, K: np.ndarray, features: Tensor | None = None
    ) -> CameraView:
        """Build the reference view, whose pose is the identity."""
        return cls(K=K, R=np.eye(3), t=np.zeros(3), features=features)

    @property
    def K_inv(self) -> np.ndarray:
        """Inverse intrinsics."""
        return np.linalg.inv(self.K)

    @property
    def center(self) -> np.ndarray:
        """Camera centre in reference coordinates."""
        return -self.R.T @ self.t

    def scaled(self, factor: float) -> CameraView:
        """Return the view for an image resampled by ``factor``.

        Pixel ``x`` of the original maps to ``x * factor``, the convention
        of stride-2 sampling at even pixel centres.
        """
        S = np.diag([factor, factor, 1.0])
        return dataclasses.replace(self, K=S @ self.K)

    def with_features(self, features: Tensor) -> CameraView:
        """Return the same camera carrying ``features``."""
        return dataclasses.replace(self, features=features)

    def projection_matrix(self) -> np.ndarray:
        """Return the 3x4 ``[R | t]`` extrinsics."""
        return np.hstack([self.R, self.t[:, None]])
