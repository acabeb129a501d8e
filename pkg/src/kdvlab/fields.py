"""Trigonometric representation of zero-mean periodic fields.

A field is stored by its coefficients against the orthonormal basis

    e_k(x)  = sqrt(2) cos(2 pi k x),   k > 0,
    e_-k(x) = sqrt(2) sin(2 pi k x),   k > 0,

on the unit circle.  There is no k = 0 coefficient, so zero mean is
structural.  Coefficient space is the primary representation; collocation
values on a uniform grid are derived via the FFT and used only by the
dynamics and Hill-operator modules.

Sign conventions that the rest of the code relies on:

    d/dx e_k  = -2 pi k e_-k,      d/dx e_-k = +2 pi k e_k,

equivalently, with complex coefficients c_k = (u_k - i u_-k)/sqrt(2) for the
mode exp(2 pi i k x), differentiation is multiplication by 2 pi i k.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

FRAME_MAGIC = b"KDVF"
FRAME_VERSION = 1

# relative tolerance for the exact algebraic identities checked in tests
IDENTITY_RTOL = 1e-12


def _descending_sum(terms):
    # graded weights: sum in descending-k order to keep the compensation
    # pattern fixed and reproducible
    return float(np.sum(terms[::-1]))


@dataclass(frozen=True)
class Field:
    """Zero-mean real field; ``coeffs[k-1] = (u_k, u_{-k})`` for k = 1..m_max."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 2 or c.shape[1] != 2 or c.shape[0] < 1:
            raise ValueError("coeffs must have shape (m_max, 2)")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c = np.array(c, dtype=float)
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def m_max(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def zero(cls, m_max: int) -> "Field":
        return cls(np.zeros((m_max, 2)))

    @classmethod
    def basis(cls, k: int, m_max: int, amplitude: float = 1.0) -> "Field":
        """amplitude * e_k; negative k selects the sine component."""
        if k == 0 or abs(k) > m_max:
            raise ValueError("basis index out of range")
        c = np.zeros((m_max, 2))
        c[abs(k) - 1, 0 if k > 0 else 1] = amplitude
        return cls(c)

    def pair(self, k: int) -> tuple[float, float]:
        return float(self.coeffs[k - 1, 0]), float(self.coeffs[k - 1, 1])

    def resize(self, m_max: int) -> "Field":
        """Pad with zeros or truncate to a new spectral resolution."""
        if m_max == self.m_max:
            return self
        c = np.zeros((m_max, 2))
        keep = min(m_max, self.m_max)
        c[:keep] = self.coeffs[:keep]
        return Field(c)

    def __add__(self, other: "Field") -> "Field":
        if other.m_max != self.m_max:
            raise ValueError("resolution mismatch")
        return Field(self.coeffs + other.coeffs)

    def __sub__(self, other: "Field") -> "Field":
        if other.m_max != self.m_max:
            raise ValueError("resolution mismatch")
        return Field(self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.coeffs * float(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True)
class BirkhoffPoint:
    """Sequence of 2-vectors ``modes[j-1] = (v_j, v_{-j})``."""

    modes: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.modes, dtype=float)
        if m.ndim != 2 or m.shape[1] != 2 or m.shape[0] < 1:
            raise ValueError("modes must have shape (m, 2)")
        if not np.all(np.isfinite(m)):
            raise ValueError("mode entries must be finite")
        m = np.array(m, dtype=float)
        m.flags.writeable = False
        object.__setattr__(self, "modes", m)

    @property
    def m_max(self) -> int:
        return self.modes.shape[0]


@dataclass(frozen=True)
class ActionVector:
    """Nonnegative action sequence I_1..I_m (weighted-l1 norms take p as an
    argument, see :func:`action_norm`)."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 1 or e.shape[0] < 1:
            raise ValueError("entries must be a 1-d sequence")
        if not np.all(np.isfinite(e)):
            raise ValueError("entries must be finite")
        if np.any(e < 0):
            raise ValueError("actions must be nonnegative")
        e = np.array(e, dtype=float)
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    @property
    def m_max(self) -> int:
        return self.entries.shape[0]


# ---------------------------------------------------------------------------
# norms

def sobolev_norm(u: Field, p: float) -> float:
    """H^p norm: (sum_k (2 pi k)^{2p} (u_k^2 + u_{-k}^2))^{1/2}."""
    k = np.arange(1, u.m_max + 1, dtype=float)
    terms = (TWO_PI * k) ** (2 * p) * (u.coeffs[:, 0] ** 2 + u.coeffs[:, 1] ** 2)
    return float(np.sqrt(_descending_sum(terms)))


def h_norm(v: BirkhoffPoint, p: float) -> float:
    """h^p norm: (sum_j (2 pi j)^{2p+1} |v_j|^2)^{1/2}."""
    j = np.arange(1, v.m_max + 1, dtype=float)
    terms = (TWO_PI * j) ** (2 * p + 1) * (v.modes[:, 0] ** 2 + v.modes[:, 1] ** 2)
    return float(np.sqrt(_descending_sum(terms)))


def action_norm(I: ActionVector, p: float) -> float:
    """Weighted l1 norm 2 sum_j (2 pi j)^{2p+1} I_j.

    Rejects negative entries; they signal corrupted action data upstream.
    """
    e = np.asarray(I.entries, dtype=float)
    if np.any(e < 0):
        raise ValueError("negative action entry")
    j = np.arange(1, e.shape[0] + 1, dtype=float)
    return 2.0 * _descending_sum((TWO_PI * j) ** (2 * p + 1) * e)


# ---------------------------------------------------------------------------
# projections and the linearized normal-form map

def project(u: Field, m: int) -> Field:
    """Orthogonal projection onto modes k <= m (idempotent)."""
    if m < 0:
        raise ValueError("m must be >= 0")
    c = np.array(u.coeffs)
    c[m:] = 0.0
    return Field(c)


def linear_birkhoff(u: Field) -> BirkhoffPoint:
    """Linearized normal-form coordinates: v_{+-k} = (2 pi k)^{-1/2} u_{+-k}."""
    k = np.arange(1, u.m_max + 1, dtype=float)
    scale = (TWO_PI * k) ** -0.5
    return BirkhoffPoint(u.coeffs * scale[:, None])


def linear_birkhoff_inverse(v: BirkhoffPoint) -> Field:
    k = np.arange(1, v.m_max + 1, dtype=float)
    scale = (TWO_PI * k) ** 0.5
    return Field(v.modes * scale[:, None])


def actions_angles(v: BirkhoffPoint) -> tuple[ActionVector, np.ndarray]:
    """Actions I_j = |v_j|^2 / 2 and polar angles in [0, 2 pi).

    The angle of a zero mode is 0 by convention.
    """
    x, y = v.modes[:, 0], v.modes[:, 1]
    I = 0.5 * (x * x + y * y)
    phi = np.mod(np.arctan2(y, x), TWO_PI)
    phi[I == 0.0] = 0.0
    return ActionVector(I), phi


def linear_phases(u: Field) -> np.ndarray:
    """Angles of the linearized normal-form modes, in [0, 2 pi).

    The diagonal scaling does not change the polar angle, so these are just
    atan2(u_{-k}, u_k).
    """
    phi = np.mod(np.arctan2(u.coeffs[:, 1], u.coeffs[:, 0]), TWO_PI)
    zero = (u.coeffs[:, 0] == 0.0) & (u.coeffs[:, 1] == 0.0)
    phi[zero] = 0.0
    return phi


def actions_of_field_linear(u: Field) -> ActionVector:
    """Actions of the linearized map: I_k = (u_k^2 + u_{-k}^2) / (4 pi k)."""
    I, _ = actions_angles(linear_birkhoff(u))
    return I


# ---------------------------------------------------------------------------
# collocation transforms

def default_grid_size(m_max: int) -> int:
    """Smallest power of two >= 3 m_max + 1.

    Pointwise products of fields with modes <= m_max alias only onto modes
    above m_max on a grid this size, so truncation back to m_max is exact
    (the 2/3-style dealiasing rule).
    """
    n = 1
    while n < 3 * m_max + 1:
        n *= 2
    return n


def grid_points(n: int) -> np.ndarray:
    return np.arange(n) / float(n)


def to_complex(u: Field, n_grid: int) -> np.ndarray:
    """rfft-layout complex coefficients c_k = (u_k - i u_{-k}) / sqrt(2)."""
    if n_grid < 2 * u.m_max + 2:
        raise ValueError("grid too small for the stored modes")
    c = np.zeros(n_grid // 2 + 1, dtype=complex)
    c[1:u.m_max + 1] = (u.coeffs[:, 0] - 1j * u.coeffs[:, 1]) / np.sqrt(2.0)
    return c


def from_complex(c: np.ndarray, m_max: int) -> Field:
    pairs = np.empty((m_max, 2))
    pairs[:, 0] = np.sqrt(2.0) * c[1:m_max + 1].real
    pairs[:, 1] = -np.sqrt(2.0) * c[1:m_max + 1].imag
    return Field(pairs)


def to_values(u: Field, n_grid: int | None = None) -> np.ndarray:
    """Collocation values at n_grid equispaced points."""
    n = default_grid_size(u.m_max) if n_grid is None else n_grid
    return np.fft.irfft(to_complex(u, n) * n)


def from_values(values: np.ndarray, m_max: int) -> Field:
    """Projection of grid values onto the first m_max modes (mean dropped)."""
    c = np.fft.rfft(np.asarray(values, dtype=float)) / len(values)
    if m_max > len(values) // 2:
        raise ValueError("grid too small for the requested modes")
    return from_complex(c, m_max)


def evaluate(u: Field, x: np.ndarray) -> np.ndarray:
    """Direct evaluation of u at arbitrary points (dtype-preserving)."""
    x = np.asarray(x)
    k = np.arange(1, u.m_max + 1)
    phase = TWO_PI * np.multiply.outer(x, k).astype(x.dtype, copy=False)
    root2 = np.sqrt(np.asarray(2.0, dtype=x.dtype))
    return root2 * (np.cos(phase) @ u.coeffs[:, 0].astype(x.dtype)
                    + np.sin(phase) @ u.coeffs[:, 1].astype(x.dtype))


# ---------------------------------------------------------------------------
# serialization: JSON object and packed little-endian binary frame

def field_to_json(u: Field) -> dict:
    return {"m_max": u.m_max, "coeffs": [[float(a), float(b)] for a, b in u.coeffs]}


def field_from_json(obj: dict) -> Field:
    c = np.asarray(obj["coeffs"], dtype=float)
    if c.shape != (int(obj["m_max"]), 2):
        raise ValueError("coeffs shape inconsistent with m_max")
    return Field(c)


def field_to_bytes(u: Field) -> bytes:
    header = FRAME_MAGIC + struct.pack("<II", FRAME_VERSION, u.m_max)
    return header + u.coeffs.astype("<f8").tobytes()


def frame_size(m_max: int) -> int:
    return len(FRAME_MAGIC) + 8 + 16 * m_max


def field_from_bytes(buf: bytes, offset: int = 0) -> tuple[Field, int]:
    """Decode one frame; returns the field and the offset past it."""
    if buf[offset:offset + 4] != FRAME_MAGIC:
        raise ValueError("bad frame magic")
    version, m_max = struct.unpack_from("<II", buf, offset + 4)
    if version != FRAME_VERSION:
        raise ValueError(f"unsupported frame version {version}")
    start = offset + len(FRAME_MAGIC) + 8
    end = start + 16 * m_max
    c = np.frombuffer(buf[start:end], dtype="<f8").reshape(m_max, 2)
    return Field(c), end


def dumps_field(u: Field) -> str:
    return json.dumps(field_to_json(u))


def loads_field(s: str) -> Field:
    return field_from_json(json.loads(s))
