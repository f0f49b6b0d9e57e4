"""Discretized free loop space of R^{2n} times the real line.

A loop is stored as ``N`` samples at the uniform times ``t_j = j/N``.
Coordinates are ordered ``(q_1, ..., q_n, p_1, ..., p_n)`` and the standard
complex structure is ``J0 = [[0, -I], [I, 0]]``, so that
``omega0(a, b) = a^T Omega b`` with ``Omega = -J0`` and
``omega0(a, J0 b) = <a, b>``.

Integrals over the circle are rectangle-rule means, which is spectrally
accurate for smooth periodic integrands.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
DEFAULT_N = 128


def standard_j(n: int) -> np.ndarray:
    """The standard complex structure on R^{2n}."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, -eye], [eye, zero]])


def omega_matrix(n: int) -> np.ndarray:
    """Matrix of the standard symplectic form: omega0(a, b) = a @ Omega @ b."""
    return -standard_j(n)


def wavenumbers(N: int) -> np.ndarray:
    """Angular wavenumbers 2*pi*k for an FFT of length N, Nyquist mode zeroed."""
    k = np.fft.fftfreq(N, d=1.0 / N)
    k[N // 2] = 0.0
    return 2.0 * np.pi * k


def derivative_matrix(N: int) -> np.ndarray:
    """Dense spectral differentiation matrix on N periodic samples.

    It is real and antisymmetric because the Nyquist multiplier is zero.
    """
    return np.real(np.fft.ifft(1j * wavenumbers(N)[:, None] * np.fft.fft(np.eye(N), axis=0), axis=0))


def spectral_derivative(samples: np.ndarray, axis: int = -2) -> np.ndarray:
    """d/dt of periodic samples along ``axis`` (default: the time axis of (..., N, 2n))."""
    samples = np.asarray(samples, dtype=float)
    N = samples.shape[axis]
    shape = [1] * samples.ndim
    shape[axis] = N
    mult = 1j * wavenumbers(N).reshape(shape)
    return np.real(np.fft.ifft(mult * np.fft.fft(samples, axis=axis), axis=axis))


def _check_samples(samples: np.ndarray) -> np.ndarray:
    arr = np.array(samples, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"loop samples must have shape (N, 2n), got {arr.shape}")
    N, d = arr.shape
    if N < 8 or N % 2:
        raise ValueError(f"N must be even and at least 8, got {N}")
    if d < 2 or d % 2:
        raise ValueError(f"point dimension must be even and positive, got {d}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Loop:
    """A loop S^1 -> R^{2n} sampled at N uniform times."""

    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", _check_samples(self.samples))

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def dim_n(self) -> int:
        return self.samples.shape[1] // 2

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N) / self.N

    @cached_property
    def modes(self) -> np.ndarray:
        """Fourier coefficients c_k with samples = sum_k c_k exp(2 pi i k t)."""
        return np.fft.fft(self.samples, axis=0) / self.N

    @classmethod
    def from_modes(cls, modes: np.ndarray) -> "Loop":
        modes = np.asarray(modes)
        return cls(np.real(np.fft.ifft(modes * modes.shape[0], axis=0)))

    @classmethod
    def from_function(cls, f, N: int = DEFAULT_N) -> "Loop":
        """Sample a vectorized callable ``f(t) -> (N, 2n)`` on the uniform grid."""
        return cls(np.asarray(f(np.arange(N) / N), dtype=float))

    @classmethod
    def constant(cls, point, N: int = DEFAULT_N) -> "Loop":
        point = np.asarray(point, dtype=float)
        return cls(np.tile(point, (N, 1)))

    def derivative(self) -> "Loop":
        return time_derivative(self)

    def resample(self, N: int) -> "Loop":
        """Trigonometric interpolation onto a grid with N samples."""
        return Loop(resample_samples(self.samples, N))

    def __len__(self) -> int:
        return self.N


@dataclass(frozen=True, eq=False)
class LoopMultiplier:
    """A pair (v, eta): a loop and a Lagrange multiplier."""

    loop: Loop
    eta: float

    def __post_init__(self):
        if not isinstance(self.loop, Loop):
            object.__setattr__(self, "loop", Loop(self.loop))
        object.__setattr__(self, "eta", float(self.eta))

    @property
    def samples(self) -> np.ndarray:
        return self.loop.samples

    @property
    def N(self) -> int:
        return self.loop.N

    @property
    def dim_n(self) -> int:
        return self.loop.dim_n

    def shifted(self, xi, sigma: float = 0.0) -> "LoopMultiplier":
        if isinstance(xi, TangentVector):
            xi, sigma = xi.xi, xi.sigma
        return LoopMultiplier(Loop(self.samples + np.asarray(xi)), self.eta + sigma)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.samples.ravel(), [self.eta]])


@dataclass(frozen=True, eq=False)
class TangentVector:
    """A tangent vector (xi, sigma) at a point of loop space."""

    xi: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float)
        if xi.ndim != 2:
            raise ValueError(f"xi must have shape (N, 2n), got {xi.shape}")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def N(self) -> int:
        return self.xi.shape[0]

    def __add__(self, other: "TangentVector") -> "TangentVector":
        return TangentVector(self.xi + other.xi, self.sigma + other.sigma)

    def __sub__(self, other: "TangentVector") -> "TangentVector":
        return TangentVector(self.xi - other.xi, self.sigma - other.sigma)

    def __mul__(self, c: float) -> "TangentVector":
        return TangentVector(c * self.xi, c * self.sigma)

    __rmul__ = __mul__

    def __neg__(self) -> "TangentVector":
        return TangentVector(-self.xi, -self.sigma)


def _samples_of(x) -> np.ndarray:
    if isinstance(x, Loop):
        return x.samples
    if isinstance(x, TangentVector):
        return x.xi
    if isinstance(x, LoopMultiplier):
        return x.samples
    return np.asarray(x, dtype=float)


def l2_norm(x) -> float:
    """sqrt(mean_j |x_j|^2) of a loop or of the loop part of a tangent vector."""
    s = _samples_of(x)
    return float(np.sqrt(np.mean(np.sum(s * s, axis=-1))))


def l2r_norm(x, kind: str = "additive") -> float:
    """Norm on L^2 x R: ``additive`` is |xi| + |sigma|, ``quadratic`` is sqrt(|xi|^2 + sigma^2)."""
    if isinstance(x, TangentVector):
        a, b = l2_norm(x.xi), abs(x.sigma)
    elif isinstance(x, LoopMultiplier):
        a, b = l2_norm(x.loop), abs(x.eta)
    else:
        raise TypeError("l2r_norm expects a TangentVector or LoopMultiplier")
    if kind == "additive":
        return a + b
    if kind == "quadratic":
        return float(np.hypot(a, b))
    raise ValueError(f"unknown norm kind {kind!r}")


def time_derivative(v: Loop) -> Loop:
    return Loop(spectral_derivative(v.samples, axis=0))


def w12_norm(v) -> float:
    s = _samples_of(v)
    return l2_norm(s) + l2_norm(spectral_derivative(s, axis=0))


def mean(v) -> np.ndarray:
    return np.mean(_samples_of(v), axis=0)


def linf_norm(v) -> float:
    s = _samples_of(v)
    return float(np.max(np.linalg.norm(s, axis=-1)))


def l2r_distance(a: LoopMultiplier, b: LoopMultiplier, kind: str = "additive") -> float:
    if a.N != b.N:
        raise ValueError("loops must share the same grid")
    return l2r_norm(TangentVector(a.samples - b.samples, a.eta - b.eta), kind=kind)


def resample_samples(samples: np.ndarray, N_new: int, axis: int = 0) -> np.ndarray:
    """Band-limited interpolation of periodic samples to N_new points along ``axis``."""
    samples = np.asarray(samples, dtype=float)
    N = samples.shape[axis]
    if N_new == N:
        return samples.copy()
    c = np.fft.fft(samples, axis=axis)
    c = np.moveaxis(c, axis, 0)
    out = np.zeros((N_new,) + c.shape[1:], dtype=complex)
    half = min(N, N_new) // 2
    out[:half] = c[:half]
    out[-half + 1:] = c[-half + 1:]
    # split the shared Nyquist coefficient symmetrically so the result stays real
    if N_new > N:
        out[half] = 0.5 * c[half]
        out[-half] = 0.5 * c[half]
    out *= N_new / N
    return np.moveaxis(np.real(np.fft.ifft(out, axis=0)), 0, axis)


# ---------------------------------------------------------------- serialization

def loop_to_csv(loop: Loop, path) -> None:
    """Rows ``t_j, x^1, ..., x^{2n}``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        d = loop.samples.shape[1]
        w.writerow(["t"] + [f"x{i + 1}" for i in range(d)])
        for t, row in zip(loop.times, loop.samples):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])


def loop_from_csv(path) -> Loop:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Loop(data[:, 1:])


def loop_to_dict(loop: Loop) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "n": loop.dim_n,
        "N": loop.N,
        "samples": loop.samples.tolist(),
    }


def loop_from_dict(d: dict) -> Loop:
    loop = Loop(np.asarray(d["samples"], dtype=float))
    if loop.N != d["N"] or loop.dim_n != d["n"]:
        raise ValueError("loop container header does not match its samples")
    return loop


def loop_to_json(loop: Loop, path) -> None:
    Path(path).write_text(json.dumps(loop_to_dict(loop)))


def loop_from_json(path) -> Loop:
    return loop_from_dict(json.loads(Path(path).read_text()))
