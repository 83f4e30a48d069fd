"""Streaming sufficient statistics for the closed-form decomposition.

One pass over aligned rows (u, z) collects everything the solver needs:
counts, first-moment sums, the z second-moment sum, the u-z cross-moment
sum and the running squared norm of u. Accumulators merge by field-wise
addition, so shards can be processed independently and combined exactly.

Plain 64-bit summation, not compensated: at desk scale (n up to ~1e6)
the relative error stays far below test tolerances and plain sums keep
``merge`` an exact field-wise addition. The zz-sum is re-symmetrized
after every update so downstream eigendecompositions see an exactly
symmetric matrix.

Centering happens at ``finalize`` time, never in the accumulator, so a
single pass serves both the mean-subtracted solver and the bias-term
solver. All normalization is population-style (divide by count).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import (
    CorruptionError,
    DimensionError,
    EmptyAccumulatorError,
    FormatError,
    ValidationError,
)
from .store import AlignedView

SNAPSHOT_MAGIC = b"LMDMOM\x00\x01"
_SNAPSHOT_HEAD = struct.Struct("<IQQQ")  # version, d_u, kd, count


@dataclass
class MomentSummary:
    """Normalized moments ready for the solver.

    With ``centered=False``: ``zz`` is E[zz'], ``uz`` is E[uz'] and
    ``u_sq`` is E[u'u]. With ``centered=True`` they are the covariance
    cov(z,z), the cross-covariance cov(u,z) and the total variance
    E|u - E[u]|^2. Means are always the raw means.
    """

    zz: np.ndarray
    uz: np.ndarray
    mean_z: np.ndarray
    mean_u: np.ndarray
    u_sq: float
    count: int
    centered: bool
    dims: list[int] | None = None

    @property
    def kd(self) -> int:
        return self.zz.shape[0]

    @property
    def d_u(self) -> int:
        return self.uz.shape[0]


class MomentAccumulator:
    """Mergeable running sums over target rows u and stacked basis rows z."""

    def __init__(self, d_u: int, kd: int, dims: Sequence[int] | None = None) -> None:
        if d_u < 1 or kd < 1:
            raise DimensionError(f"dimensions must be positive, got d_u={d_u}, kd={kd}")
        if dims is not None and int(sum(dims)) != kd:
            raise DimensionError(f"basis dims {list(dims)} do not sum to kd={kd}")
        self.d_u = int(d_u)
        self.kd = int(kd)
        self.dims = list(int(x) for x in dims) if dims is not None else None
        self.count = 0
        self.sum_z = np.zeros(kd)
        self.sum_u = np.zeros(d_u)
        self.sum_zz = np.zeros((kd, kd))
        self.sum_uz = np.zeros((d_u, kd))
        self.sum_uu_trace = 0.0

    def observe(self, u_row: np.ndarray, z_row: np.ndarray) -> "MomentAccumulator":
        """Fold in a single (u, z) observation."""
        u = np.atleast_2d(np.asarray(u_row, dtype=np.float64))
        z = np.atleast_2d(np.asarray(z_row, dtype=np.float64))
        if u.shape != (1, self.d_u) or z.shape != (1, self.kd):
            raise DimensionError(
                f"row shapes {u.shape[1:]} / {z.shape[1:]} do not match "
                f"accumulator (d_u={self.d_u}, kd={self.kd})"
            )
        return self.update(u, z)

    def update(self, u: np.ndarray, z: np.ndarray) -> "MomentAccumulator":
        """Fold in a chunk of rows: u is m x d_u, z is m x kd."""
        u = np.ascontiguousarray(u, dtype=np.float64)
        z = np.ascontiguousarray(z, dtype=np.float64)
        if u.ndim != 2 or z.ndim != 2 or u.shape[0] != z.shape[0]:
            raise DimensionError(f"chunk shapes {u.shape} / {z.shape} are inconsistent")
        if u.shape[1] != self.d_u or z.shape[1] != self.kd:
            raise DimensionError(
                f"chunk widths {u.shape[1]} / {z.shape[1]} do not match "
                f"accumulator (d_u={self.d_u}, kd={self.kd})"
            )
        if not (np.isfinite(u).all() and np.isfinite(z).all()):
            raise ValidationError("non-finite values in observation chunk")
        self.sum_uu_trace += _kernels.accumulate_moments(
            u, z, self.sum_z, self.sum_u, self.sum_zz, self.sum_uz
        )
        _kernels.moments_symmetrize(self.sum_zz)
        self.count += u.shape[0]
        return self

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        """Return a new accumulator holding the field-wise sum of both."""
        if (self.d_u, self.kd) != (other.d_u, other.kd):
            raise DimensionError(
                f"cannot merge accumulators of shape (d_u={self.d_u}, kd={self.kd}) "
                f"and (d_u={other.d_u}, kd={other.kd})"
            )
        if self.dims is not None and other.dims is not None and self.dims != other.dims:
            raise DimensionError(f"basis partitions differ: {self.dims} vs {other.dims}")
        out = MomentAccumulator(self.d_u, self.kd, dims=self.dims or other.dims)
        out.count = self.count + other.count
        out.sum_z = self.sum_z + other.sum_z
        out.sum_u = self.sum_u + other.sum_u
        out.sum_zz = self.sum_zz + other.sum_zz
        out.sum_uz = self.sum_uz + other.sum_uz
        out.sum_uu_trace = self.sum_uu_trace + other.sum_uu_trace
        return out

    def finalize(self, center: bool = True) -> MomentSummary:
        """Normalize the sums into solver-ready moments.

        ``center=True`` needs at least 2 samples and returns covariances;
        otherwise raw second moments. Either way the z-moment matrix is
        exactly symmetric.
        """
        if self.count == 0:
            raise EmptyAccumulatorError("no observations accumulated")
        if center and self.count < 2:
            raise EmptyAccumulatorError("centering needs at least 2 observations")
        inv = 1.0 / self.count
        mean_z = self.sum_z * inv
        mean_u = self.sum_u * inv
        zz = self.sum_zz * inv
        uz = self.sum_uz * inv
        u_sq = self.sum_uu_trace * inv
        if center:
            zz = zz - np.outer(mean_z, mean_z)
            uz = uz - np.outer(mean_u, mean_z)
            u_sq = u_sq - float(mean_u @ mean_u)
        zz = 0.5 * (zz + zz.T)
        return MomentSummary(
            zz=zz,
            uz=uz,
            mean_z=mean_z,
            mean_u=mean_u,
            u_sq=float(u_sq),
            count=self.count,
            centered=center,
            dims=self.dims,
        )

    def save(self, destination: str | os.PathLike) -> Path:
        """Binary snapshot for resumable jobs (same header discipline as
        embedding files: magic, version, dims, then little-endian f64 sums)."""
        path = Path(destination)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as f:
            f.write(SNAPSHOT_MAGIC)
            f.write(_SNAPSHOT_HEAD.pack(1, self.d_u, self.kd, self.count))
            for arr in (self.sum_z, self.sum_u, self.sum_zz, self.sum_uz):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            f.write(struct.pack("<d", self.sum_uu_trace))
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, source: str | os.PathLike) -> "MomentAccumulator":
        path = Path(source)
        with open(path, "rb") as f:
            magic = f.read(len(SNAPSHOT_MAGIC))
            if magic != SNAPSHOT_MAGIC:
                raise FormatError(f"{path}: not a moment snapshot")
            version, d_u, kd, count = _SNAPSHOT_HEAD.unpack(f.read(_SNAPSHOT_HEAD.size))
            if version != 1:
                raise FormatError(f"{path}: unsupported snapshot version {version}")
            acc = cls(d_u, kd)
            acc.count = count

            def read_block(shape):
                size = int(np.prod(shape))
                raw = np.fromfile(f, dtype="<f8", count=size)
                if raw.size != size:
                    raise CorruptionError(f"{path}: snapshot truncated")
                return raw.reshape(shape)

            acc.sum_z = read_block((kd,))
            acc.sum_u = read_block((d_u,))
            acc.sum_zz = read_block((kd, kd))
            acc.sum_uz = read_block((d_u, kd))
            tail = f.read(8)
            if len(tail) != 8:
                raise CorruptionError(f"{path}: snapshot truncated")
            acc.sum_uu_trace = struct.unpack("<d", tail)[0]
        return acc


def accumulate(view: AlignedView, chunk_rows: int = 8192) -> MomentAccumulator:
    """Build an accumulator from an aligned view with a target."""
    if view.target is None:
        raise DimensionError("aligned view has no target; moments need (u, z) pairs")
    acc = MomentAccumulator(view.u_dim, view.z_dim, dims=view.dims)
    for u, z in view.chunks(chunk_rows):
        acc.update(u, z)
    return acc
