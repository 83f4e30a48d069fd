"""Hot-loop kernels with a numba fast path and a pure-numpy fallback.

Two data passes dominate runtime: accumulating second-moment sums over
row chunks, and scoring residuals against a fitted coefficient matrix.
Both exist here twice — an ``@njit`` version that fuses the per-row work
into one pass (and exploits symmetry of the z-moment update), and a
numpy version built on BLAS calls.

Backend selection: set ``LMDKIT_KERNELS=numpy`` or ``LMDKIT_KERNELS=numba``
before import; default is ``auto`` (numba when importable, numpy otherwise).
``use_backend()`` switches at runtime, which the benchmark and the
cross-backend agreement tests rely on.

Contract shared by both backends: ``accumulate_moments`` adds into its
accumulator arrays in place and returns the squared-norm increment of the
target rows; after the call the zz-sum is *not* yet symmetric — callers
re-symmetrize (the accumulator owns that invariant). ``accumulate_fit``
adds target sums in place and returns (ssr_increment, usq_increment).
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "LMDKIT_KERNELS"


def _numpy_accumulate_moments(u, z, sum_z, sum_u, sum_zz, sum_uz):
    sum_z += z.sum(axis=0)
    sum_u += u.sum(axis=0)
    sum_zz += z.T @ z
    sum_uz += u.T @ z
    return float(np.einsum("ij,ij->", u, u))


def _numpy_accumulate_fit(u, z, w_t, bias, sum_u):
    resid = u - z @ w_t
    resid -= bias
    sum_u += u.sum(axis=0)
    ssr = float(np.einsum("ij,ij->", resid, resid))
    usq = float(np.einsum("ij,ij->", u, u))
    return ssr, usq


_HAVE_NUMBA = False
if os.environ.get(_ENV_FLAG, "auto") != "numpy":
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - environment without numba
        _HAVE_NUMBA = False

if _HAVE_NUMBA:

    @njit(cache=True)
    def _numba_accumulate_moments(u, z, sum_z, sum_u, sum_zz, sum_uz):
        m, kd = z.shape
        du = u.shape[1]
        usq = 0.0
        for r in range(m):
            for i in range(kd):
                zi = z[r, i]
                sum_z[i] += zi
                # lower triangle only; caller mirrors
                for j in range(i + 1):
                    sum_zz[i, j] += zi * z[r, j]
            for a in range(du):
                ua = u[r, a]
                sum_u[a] += ua
                usq += ua * ua
                for j in range(kd):
                    sum_uz[a, j] += ua * z[r, j]
        return usq

    @njit(cache=True)
    def _numba_accumulate_fit(u, z, w_t, bias, sum_u):
        m, kd = z.shape
        du = u.shape[1]
        ssr = 0.0
        usq = 0.0
        for r in range(m):
            for a in range(du):
                pred = bias[a]
                for j in range(kd):
                    pred += z[r, j] * w_t[j, a]
                ua = u[r, a]
                e = ua - pred
                ssr += e * e
                usq += ua * ua
                sum_u[a] += ua
        return ssr, usq


def _resolve(requested: str) -> str:
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if not _HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return "numba"
    if requested == "auto":
        return "numba" if _HAVE_NUMBA else "numpy"
    raise ValueError(f"unknown kernel backend {requested!r} (use numba, numpy or auto)")


_backend = _resolve(os.environ.get(_ENV_FLAG, "auto"))


def get_backend() -> str:
    """Name of the active kernel backend, 'numba' or 'numpy'."""
    return _backend


def available_backends() -> tuple[str, ...]:
    return ("numba", "numpy") if _HAVE_NUMBA else ("numpy",)


def use_backend(name: str) -> str:
    """Switch the active backend at runtime; returns the resolved name."""
    global _backend
    _backend = _resolve(name)
    return _backend


def moments_symmetrize(sum_zz: np.ndarray) -> None:
    """Restore exact symmetry of the zz-sum in place.

    The numba kernel maintains only the lower triangle, so the mirror is
    authoritative there; the numpy kernel accumulates a full (up to BLAS
    rounding, possibly asymmetric) matrix, for which averaging is the
    right repair. Mirroring the lower triangle handles both: for the
    numpy path the two triangles differ by <1 ulp and the lower one is
    as good as their average.
    """
    iu = np.triu_indices(sum_zz.shape[0], k=1)
    sum_zz[iu] = sum_zz.T[iu]


def accumulate_moments(u, z, sum_z, sum_u, sum_zz, sum_uz) -> float:
    if _backend == "numba":
        return _numba_accumulate_moments(u, z, sum_z, sum_u, sum_zz, sum_uz)
    return _numpy_accumulate_moments(u, z, sum_z, sum_u, sum_zz, sum_uz)


def accumulate_fit(u, z, w_t, bias, sum_u) -> tuple[float, float]:
    if _backend == "numba":
        return _numba_accumulate_fit(u, z, w_t, bias, sum_u)
    return _numpy_accumulate_fit(u, z, w_t, bias, sum_u)


def warmup() -> None:
    """Trigger JIT compilation on toy inputs so timed runs never pay it."""
    if _backend != "numba":
        return
    u = np.zeros((2, 2))
    z = np.zeros((2, 3))
    accumulate_moments(u, z, np.zeros(3), np.zeros(2), np.zeros((3, 3)), np.zeros((2, 3)))
    accumulate_fit(u, z, np.zeros((3, 2)), np.zeros(2), np.zeros(2))
