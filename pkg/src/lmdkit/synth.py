"""Synthetic embedding sets with controlled linear structure.

Every solver and metric property in the test suite is checked against
data produced here, where the ground truth (coefficient blocks, bias,
noise level, covariance rank) is known by construction.

Randomness comes from numpy's Philox bit generator, a counter-based
PRNG: given the same spec (seed included) the output is bitwise
identical, and independent substreams are derived with ``jumped`` rather
than by sharing mutable state. Parameter draws (the true coefficients,
bias and latent mixing matrix) use a stream that depends only on the
seed, so train/validation/test splits generated with different
``stream`` values share one underlying ground-truth mapping. The
algorithm identity (Philox, jumped substreams) is part of the golden-
test contract.

Base embeddings are standard Gaussian, which keeps the expected R2 under
additive noise in closed form: with signal variance S = tr(W Cov(z) W')
and per-coordinate noise sigma, the population R2 is S / (S + d_u
sigma^2). No attempt is made to mimic real embedding geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ValidationError
from .store import EmbeddingDataset

TARGET_RULES = ("exact_combination", "noisy_combination", "independent", "duplicate_of", "zero")


@dataclass
class SynthSpec:
    """Recipe for one aligned (target, bases) sample set.

    ``dims`` are the per-basis embedding dimensions (k = len(dims));
    ``stream`` partitions the value streams so that several splits can be
    drawn from one seed without overlap while sharing the same ground
    truth. ``latent_rank`` forces rank deficiency by drawing all basis
    columns from an r-dimensional latent factor.
    """

    seed: int
    n: int
    dims: list[int]
    d_u: int
    target_rule: str = "exact_combination"
    duplicate_index: int = 0
    noise_sigma: float = 0.0
    true_W: np.ndarray | None = None
    true_b: np.ndarray | None = None
    latent_rank: int | None = None
    stream: int = 0
    split: str = "train"
    seq_len: int = 128
    model_names: list[str] | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError(f"n must be positive, got {self.n}")
        if not self.dims or any(d < 1 for d in self.dims):
            raise ConfigError(f"dims must all be >= 1, got {self.dims}")
        if self.d_u < 1:
            raise ConfigError(f"d_u must be positive, got {self.d_u}")
        if self.target_rule not in TARGET_RULES:
            raise ConfigError(
                f"unknown target rule {self.target_rule!r} (expected one of {TARGET_RULES})"
            )
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        kd = int(sum(self.dims))
        if self.latent_rank is not None and not (1 <= self.latent_rank <= kd):
            raise ConfigError(f"latent_rank must be in [1, {kd}], got {self.latent_rank}")
        if self.true_W is not None and self.true_W.shape != (self.d_u, kd):
            raise ConfigError(
                f"true_W shape {self.true_W.shape} does not match (d_u={self.d_u}, kd={kd})"
            )
        if self.true_b is not None and np.asarray(self.true_b).shape != (self.d_u,):
            raise ConfigError(f"true_b must have shape ({self.d_u},)")
        if self.target_rule == "duplicate_of":
            if not (0 <= self.duplicate_index < len(self.dims)):
                raise ConfigError(f"duplicate_index {self.duplicate_index} out of range")
            if self.d_u != self.dims[self.duplicate_index]:
                raise ConfigError(
                    "duplicate_of target dimension must equal the duplicated basis dimension"
                )
        if self.model_names is not None and len(self.model_names) != len(self.dims) + 1:
            raise ConfigError("model_names must list the target followed by every basis")

    @property
    def k(self) -> int:
        return len(self.dims)

    @property
    def kd(self) -> int:
        return int(sum(self.dims))

    def names(self) -> list[str]:
        if self.model_names is not None:
            return list(self.model_names)
        return ["target"] + [f"basis{i + 1}" for i in range(self.k)]


@dataclass
class GroundTruth:
    """What the generator knows that a fitted model should recover."""

    W: np.ndarray | None
    b: np.ndarray | None
    noise_sigma: float
    z_cov: np.ndarray
    expected_r2: float | None
    rule: str
    dims: list[int] = field(default_factory=list)

    def block(self, i: int) -> np.ndarray:
        starts = np.cumsum([0] + self.dims)
        return self.W[:, starts[i] : starts[i + 1]]


def _param_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def _value_rng(spec: SynthSpec, purpose: int) -> np.random.Generator:
    stride = spec.k + 8
    return np.random.Generator(
        np.random.Philox(key=spec.seed).jumped(1 + spec.stream * stride + purpose)
    )


def expected_noisy_r2(W: np.ndarray, z_cov: np.ndarray, d_u: int, sigma: float) -> float:
    """Population R2 of the exact fit when iid N(0, sigma^2) noise is added."""
    signal = float(np.trace(W @ z_cov @ W.T))
    if sigma == 0.0:
        return 1.0
    return signal / (signal + d_u * sigma * sigma)


def sigma_for_expected_r2(W: np.ndarray, z_cov: np.ndarray, d_u: int, r2: float) -> float:
    """Noise level that makes the population R2 of the exact fit equal r2."""
    if not (0.0 < r2 < 1.0):
        raise ConfigError(f"target r2 must be in (0, 1), got {r2}")
    signal = float(np.trace(W @ z_cov @ W.T))
    return float(np.sqrt(signal * (1.0 - r2) / (r2 * d_u)))


def generate(spec: SynthSpec) -> tuple[EmbeddingDataset, list[EmbeddingDataset], GroundTruth]:
    """Draw (target, bases, truth) deterministically from the spec."""
    kd = spec.kd
    names = spec.names()
    rng_params = _param_rng(spec.seed)

    # Basis values: either independent per-model Gaussians or a common
    # low-rank latent factor when rank deficiency was requested. Parameter
    # draws come sequentially from the seed-only stream (mixing, then W,
    # then b) so splits with different ``stream`` share one ground truth.
    if spec.latent_rank is not None:
        mixing = rng_params.standard_normal((spec.latent_rank, kd))
        factors = _value_rng(spec, 0).standard_normal((spec.n, spec.latent_rank))
        z = factors @ mixing
        z_cov = mixing.T @ mixing
    else:
        blocks = [
            _value_rng(spec, i).standard_normal((spec.n, d)) for i, d in enumerate(spec.dims)
        ]
        z = np.concatenate(blocks, axis=1)
        z_cov = np.eye(kd)

    starts = np.cumsum([0] + list(spec.dims))
    basis_values = [z[:, starts[i] : starts[i + 1]] for i in range(spec.k)]

    if spec.true_W is not None:
        W = np.asarray(spec.true_W, dtype=np.float64)
    else:
        W = rng_params.standard_normal((spec.d_u, kd))
    if spec.true_b is not None:
        b = np.asarray(spec.true_b, dtype=np.float64)
    else:
        b = rng_params.standard_normal(spec.d_u)

    rule = spec.target_rule
    expected_r2: float | None
    if rule == "exact_combination":
        u = z @ W.T + b
        expected_r2 = 1.0
    elif rule == "noisy_combination":
        noise = _value_rng(spec, spec.k).standard_normal((spec.n, spec.d_u))
        u = z @ W.T + b + spec.noise_sigma * noise
        expected_r2 = expected_noisy_r2(W, z_cov, spec.d_u, spec.noise_sigma)
    elif rule == "independent":
        u = _value_rng(spec, spec.k + 1).standard_normal((spec.n, spec.d_u))
        W, b, expected_r2 = None, None, None
    elif rule == "duplicate_of":
        u = basis_values[spec.duplicate_index].copy()
        W, b, expected_r2 = None, None, 1.0
    elif rule == "zero":
        u = np.zeros((spec.n, spec.d_u))
        W, b, expected_r2 = None, None, None
    else:  # pragma: no cover - guarded in __post_init__
        raise ConfigError(f"unhandled rule {rule!r}")

    target = EmbeddingDataset(
        model_name=names[0], split=spec.split, seq_len=spec.seq_len, values=u
    )
    bases = [
        EmbeddingDataset(
            model_name=names[1 + i], split=spec.split, seq_len=spec.seq_len, values=basis_values[i]
        )
        for i in range(spec.k)
    ]
    truth = GroundTruth(
        W=W,
        b=b,
        noise_sigma=spec.noise_sigma if rule == "noisy_combination" else 0.0,
        z_cov=z_cov,
        expected_r2=expected_r2,
        rule=rule,
        dims=list(spec.dims),
    )
    return target, bases, truth


# --- perturbations for invariance tests ------------------------------------


@dataclass
class Scale:
    c: float


@dataclass
class Affine:
    A: np.ndarray
    b: np.ndarray


@dataclass
class PermuteRows:
    perm: np.ndarray


def perturb(dataset: EmbeddingDataset, transform: Scale | Affine | PermuteRows) -> EmbeddingDataset:
    """Deterministic transformed copy of a dataset.

    Affine transforms map each row v to A v + b and require A to be
    numerically invertible (smallest singular value at least 1e-10 of
    the largest).
    """
    if isinstance(transform, Scale):
        values = dataset.values * transform.c
    elif isinstance(transform, Affine):
        A = np.asarray(transform.A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != dataset.d:
            raise ValidationError(f"affine matrix shape {A.shape} does not match d={dataset.d}")
        svals = np.linalg.svd(A, compute_uv=False)
        if svals[-1] < 1e-10 * svals[0]:
            raise ValidationError(
                f"affine matrix is numerically singular (sigma_min/sigma_max = "
                f"{svals[-1] / svals[0]:.3e})"
            )
        values = dataset.values @ A.T + np.asarray(transform.b, dtype=np.float64)
    elif isinstance(transform, PermuteRows):
        perm = np.asarray(transform.perm)
        if sorted(perm.tolist()) != list(range(dataset.n)):
            raise ValidationError("perm must be a permutation of row indices")
        values = dataset.values[perm]
    else:
        raise ValidationError(f"unknown transform {transform!r}")
    return EmbeddingDataset(
        model_name=dataset.model_name,
        split=dataset.split,
        seq_len=dataset.seq_len,
        values=values,
    )
