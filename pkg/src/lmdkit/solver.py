"""Closed-form solvers for the matrix-weighted linear decomposition.

Given moments of a target u and stacked bases z, the coefficient matrix
solving min E|u - Wz|^2 satisfies W E[zz'] = E[uz']. Four routes:

    full_rank      Cholesky solve of the normal equations; fails loudly
                   when the moment matrix is not numerically positive
                   definite.
    min_norm       symmetric eigendecomposition pseudoinverse; of the
                   infinitely many optima on a rank-deficient system this
                   returns the one with minimal Frobenius norm.
    ridge_fixed    solve against (lambda I + E[zz']) for a caller-chosen
                   lambda > 0; strictly convex, always unique.
    ridge_adaptive lambda = max(0, eig_target - lambda_min(E[zz'])), so
                   the regularized matrix's smallest eigenvalue lands on
                   eig_target whenever it started below it.

With ``center=True`` the same formulas run on covariances and the bias
b = E[u] - W E[z] comes along for free.

Everything solves via factorizations, never explicit inverses. Rank
decisions use only the eigenvalue cutoff relative to the largest
eigenvalue — no exact-zero tests.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigError, CorruptionError, DimensionError, FormatError, RankDeficiencyError
from .moments import MomentSummary, accumulate
from .store import EmbeddingDataset, align_datasets

SOLVER_MODES = ("full_rank", "min_norm", "ridge_fixed", "ridge_adaptive")

SOLUTION_MAGIC = b"LMDSOL\x00\x01"
_SOLUTION_HEAD = struct.Struct("<IQQ")  # version, d_u, kd

DEFAULT_EIG_TARGET = 1e-6
DEFAULT_PINV_CUTOFF = 1e-12


@dataclass
class SolverConfig:
    """How to invert the z-moment matrix.

    lambda_ is the fixed ridge weight (ridge_fixed only, must be > 0);
    eig_target is the adaptive floor for the smallest eigenvalue;
    pinv_cutoff is the relative eigenvalue cutoff for the pseudoinverse;
    center selects the bias-term variant (fit on covariances).
    """

    mode: str = "ridge_adaptive"
    lambda_: float = 0.0
    eig_target: float = DEFAULT_EIG_TARGET
    pinv_cutoff: float = DEFAULT_PINV_CUTOFF
    center: bool = True

    def __post_init__(self) -> None:
        if self.mode not in SOLVER_MODES:
            raise ConfigError(f"unknown solver mode {self.mode!r} (expected one of {SOLVER_MODES})")
        if self.lambda_ < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_}")
        if self.mode == "ridge_fixed" and self.lambda_ <= 0:
            raise ConfigError("ridge_fixed needs lambda > 0")
        if self.eig_target <= 0:
            raise ConfigError(f"eig_target must be > 0, got {self.eig_target}")
        if not (0.0 < self.pinv_cutoff < 1.0):
            raise ConfigError(f"pinv_cutoff must be in (0, 1), got {self.pinv_cutoff}")


@dataclass
class LmdSolution:
    """Fitted coefficient blocks plus solver metadata.

    W is d_u x kd, partitioned into per-basis blocks of widths ``dims``;
    bias is present iff the fit was centered. eig_floor is the smallest
    eigenvalue of the matrix that was actually solved against.
    """

    W: np.ndarray
    dims: list[int]
    bias: np.ndarray | None
    lambda_used: float
    eig_floor: float
    rank_deficient: bool
    solver_mode: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not np.isfinite(self.W).all():
            raise RankDeficiencyError("solver produced non-finite coefficients")
        if int(sum(self.dims)) != self.W.shape[1]:
            raise DimensionError(
                f"block widths {self.dims} do not partition W with {self.W.shape[1]} columns"
            )

    @property
    def d_u(self) -> int:
        return self.W.shape[0]

    @property
    def kd(self) -> int:
        return self.W.shape[1]

    def block(self, i: int) -> np.ndarray:
        """The coefficient block applied to basis i."""
        starts = np.cumsum([0] + self.dims)
        return self.W[:, starts[i] : starts[i + 1]]

    def predict(self, z: np.ndarray) -> np.ndarray:
        """Fitted values for stacked rows z (m x kd)."""
        out = z @ self.W.T
        if self.bias is not None:
            out += self.bias
        return out

    def save(self, destination: str | os.PathLike) -> tuple[Path, Path]:
        """Write the JSON metadata + binary coefficient payload pair.

        ``destination`` is the JSON path; the payload lands next to it
        with a ``.bin`` suffix (embedding-file payload layout: header
        then row-major little-endian f64).
        """
        json_path = Path(destination)
        bin_path = json_path.with_suffix(".bin")
        json_path.parent.mkdir(parents=True, exist_ok=True)
        with open(bin_path.with_name(bin_path.name + ".tmp"), "wb") as f:
            f.write(SOLUTION_MAGIC)
            f.write(_SOLUTION_HEAD.pack(1, self.d_u, self.kd))
            f.write(np.ascontiguousarray(self.W, dtype="<f8").tobytes())
        os.replace(bin_path.with_name(bin_path.name + ".tmp"), bin_path)
        payload = {
            "dims": self.dims,
            "d_u": self.d_u,
            "kd": self.kd,
            "bias": None if self.bias is None else [float(x) for x in self.bias],
            "lambda_used": self.lambda_used,
            "eig_floor": self.eig_floor,
            "rank_deficient": self.rank_deficient,
            "solver_mode": self.solver_mode,
            "weights_file": bin_path.name,
            "meta": self.meta,
        }
        tmp = json_path.with_name(json_path.name + ".tmp")
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, json_path)
        return json_path, bin_path

    @classmethod
    def load(cls, source: str | os.PathLike) -> "LmdSolution":
        json_path = Path(source)
        payload = json.loads(json_path.read_text())
        bin_path = json_path.with_name(payload["weights_file"])
        with open(bin_path, "rb") as f:
            magic = f.read(len(SOLUTION_MAGIC))
            if magic != SOLUTION_MAGIC:
                raise FormatError(f"{bin_path}: not a solution payload")
            version, d_u, kd = _SOLUTION_HEAD.unpack(f.read(_SOLUTION_HEAD.size))
            if version != 1:
                raise FormatError(f"{bin_path}: unsupported version {version}")
            W = np.fromfile(f, dtype="<f8", count=d_u * kd)
            if W.size != d_u * kd:
                raise CorruptionError(f"{bin_path}: payload truncated")
            W = W.reshape(d_u, kd)
        bias = payload.get("bias")
        return cls(
            W=W,
            dims=[int(x) for x in payload["dims"]],
            bias=None if bias is None else np.asarray(bias, dtype=np.float64),
            lambda_used=float(payload["lambda_used"]),
            eig_floor=float(payload["eig_floor"]),
            rank_deficient=bool(payload["rank_deficient"]),
            solver_mode=payload["solver_mode"],
            meta=payload.get("meta", {}),
        )


def solve(moments: MomentSummary, config: SolverConfig | None = None) -> LmdSolution:
    """Compute the coefficient matrix from moment statistics.

    Raises RankDeficiencyError in full_rank mode when the moment matrix
    is not numerically positive definite (use min_norm or a ridge mode).
    """
    config = config or SolverConfig()
    if config.center and not moments.centered:
        raise ConfigError("config.center=True but moments were finalized uncentered")
    if not config.center and moments.centered:
        raise ConfigError("config.center=False but moments were finalized centered")

    A = moments.zz
    B = moments.uz
    kd = A.shape[0]
    if kd < 1:
        raise DimensionError("empty system matrix")

    # Eigenvalues drive the adaptive rule, the pseudoinverse cutoff and
    # the rank flag; vectors are only needed for the min_norm solve.
    need_vectors = config.mode == "min_norm"
    if need_vectors:
        evals, evecs = scipy.linalg.eigh(A)
    else:
        evals = scipy.linalg.eigvalsh(A)
        evecs = None
    e_min = float(evals[0])
    e_max = float(evals[-1])
    cutoff = config.pinv_cutoff * max(e_max, 0.0)
    rank_deficient = e_min <= cutoff

    lambda_used = 0.0
    if config.mode == "ridge_fixed":
        lambda_used = config.lambda_
    elif config.mode == "ridge_adaptive":
        lambda_used = max(0.0, config.eig_target - e_min)

    if config.mode == "min_norm":
        nonzero = evals > cutoff
        inv = np.zeros_like(evals)
        inv[nonzero] = 1.0 / evals[nonzero]
        W = ((B @ evecs) * inv) @ evecs.T
    else:
        system = A if lambda_used == 0.0 else A + lambda_used * np.eye(kd)
        try:
            factor = scipy.linalg.cho_factor(system, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise RankDeficiencyError(
                "moment matrix is not numerically positive definite "
                f"(smallest eigenvalue {e_min:.3e}); use min_norm or a ridge mode"
            ) from exc
        W = scipy.linalg.cho_solve(factor, B.T, check_finite=False).T

    bias = None
    if config.center:
        bias = moments.mean_u - W @ moments.mean_z

    dims = moments.dims if moments.dims is not None else [kd]
    return LmdSolution(
        W=np.ascontiguousarray(W),
        dims=list(dims),
        bias=bias,
        lambda_used=float(lambda_used),
        eig_floor=e_min + float(lambda_used),
        rank_deficient=bool(rank_deficient),
        solver_mode=config.mode,
        meta={"count": moments.count, "centered": moments.centered},
    )


def loss_and_gradient(W: np.ndarray, moments: MomentSummary) -> tuple[float, np.ndarray]:
    """Quadratic objective E|u - Wz|^2 and its analytic gradient.

    Expanded through moments: loss = tr(E[zz'] W'W) - 2 tr(E[zu'] W) + E[u'u];
    gradient = 2 (W E[zz'] - E[uz']). On centered moments this is the
    objective of the mean-subtracted problem.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.shape != moments.uz.shape:
        raise DimensionError(f"W has shape {W.shape}, moments expect {moments.uz.shape}")
    WA = W @ moments.zz
    loss = float(np.einsum("ij,ij->", WA, W) - 2.0 * np.einsum("ij,ij->", moments.uz, W) + moments.u_sq)
    grad = 2.0 * (WA - moments.uz)
    return loss, grad


@dataclass
class DependenceVerdict:
    """Outcome of the representability sweep over a set of models."""

    dependent: bool
    tolerance: float
    r2_by_target: dict[str, float]
    representable: list[str]


def check_linear_dependence(
    datasets: Sequence[EmbeddingDataset], tolerance: float = 1e-6
) -> DependenceVerdict:
    """Test whether one model's embeddings are (numerically) a linear
    combination of the others'.

    Takes each dataset in turn as the target with the rest as basis,
    fits the exact minimum-norm solution (no ridge, no bias) and computes
    in-sample R2; the set is reported dependent when any target reaches
    R2 >= 1 - tolerance. A target whose rows are all zero is dependent
    by definition (the zero function) and short-circuits with R2 = 1.
    A constant nonzero target (zero total variance) is representable
    only if its residual is also ~0.
    """
    if len(datasets) < 2:
        raise DimensionError("need at least two datasets to test dependence")
    config = SolverConfig(mode="min_norm", lambda_=0.0, center=False)
    r2s: dict[str, float] = {}
    representable: list[str] = []
    for i, target in enumerate(datasets):
        bases = [ds for j, ds in enumerate(datasets) if j != i]
        u = target.values
        u_scale = float(np.einsum("ij,ij->", u, u)) / target.n
        if u_scale == 0.0:
            r2s[target.model_name] = 1.0
            representable.append(target.model_name)
            continue
        view = align_datasets(bases, target)
        summary = accumulate(view).finalize(center=False)
        solution = solve(summary, config)
        resid = u - view.z_matrix() @ solution.W.T
        ssr = float(np.einsum("ij,ij->", resid, resid)) / target.n
        mean_u = u.mean(axis=0)
        sst = u_scale - float(mean_u @ mean_u)
        if sst > 0.0:
            r2 = 1.0 - ssr / sst
        else:
            # constant target: fall back to the raw second moment
            r2 = 1.0 - ssr / u_scale
        r2s[target.model_name] = r2
        if r2 >= 1.0 - tolerance:
            representable.append(target.model_name)
    return DependenceVerdict(
        dependent=bool(representable),
        tolerance=tolerance,
        r2_by_target=r2s,
        representable=representable,
    )
