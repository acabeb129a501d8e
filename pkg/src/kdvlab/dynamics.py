"""Time integration of the perturbed KdV flow and the perturbation library.

The equation integrated here, in fast time t, is

    u_t = -u_xxx + 6 u u_x + eps * f(u),

with the slow time tau = eps * t used for reporting.  The Airy part is
applied exactly: in complex coefficients c_k it is multiplication by
exp(i (2 pi k)^3 t), i.e. a clockwise rotation of the (u_k, u_{-k}) pair by
the angle (2 pi k)^3 t.  The nonlinearity and the perturbation go through
classical Runge-Kutta stages in the rotated frame (integrating-factor RK4),
with the quadratic term computed as 3 d/dx P_m(u^2) on a padded collocation
grid so the truncation back to the retained band is alias-free.

Integrating in fast time sidesteps the stiff eps^{-1} factor of the
slow-time form; tau is attached to samples afterwards.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .errors import StepUnstable, Unresolved
from .fields import (
    TWO_PI,
    Field,
    default_grid_size,
    field_from_bytes,
    field_to_bytes,
    from_complex,
    sobolev_norm,
    to_complex,
)

log = logging.getLogger("kdvlab.dynamics")

PERTURBATION_KINDS = (
    "none",
    "derivative",
    "antiderivative",
    "double_antiderivative",
    "smoothing_quadratic",
)

# declared smoothing orders consistent with each kind
_KIND_ZETA0 = {
    "none": 0.0,
    "derivative": -1.0,
    "antiderivative": 1.0,
    "double_antiderivative": 2.0,
}


@dataclass(frozen=True)
class PerturbationSpec:
    """Declarative description of the perturbation operator f.

    kind
        one of ``none | derivative | antiderivative | double_antiderivative |
        smoothing_quadratic``.  The linear kinds act diagonally on the
        coefficient pairs; ``smoothing_quadratic`` is
        f(u) = dx^{-ceil(zeta0)} (u^2 - mean(u^2)).
    zeta0
        declared smoothing order (f maps H^q into H^{q + zeta0}).
    """

    kind: str = "none"
    zeta0: float | None = None
    params: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        declared = self.zeta0
        if self.kind == "smoothing_quadratic":
            if declared is None:
                declared = 2.0
            if declared < 2.0:
                raise ValueError("smoothing_quadratic requires zeta0 >= 2")
        else:
            fixed = _KIND_ZETA0[self.kind]
            if declared is None:
                declared = fixed
            elif declared != fixed:
                raise ValueError(
                    f"kind {self.kind!r} has smoothing order {fixed}, got {declared}")
        object.__setattr__(self, "zeta0", float(declared))

    def to_json(self) -> dict:
        return {"kind": self.kind, "zeta0": self.zeta0, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj: dict) -> "PerturbationSpec":
        return cls(kind=obj["kind"], zeta0=obj.get("zeta0"),
                   params=dict(obj.get("params", {})))


@dataclass(frozen=True)
class EvolveParams:
    """Integration parameters.

    Exactly one of ``t_end`` (fast-time horizon) or ``tau_end`` (slow-time
    horizon, requires eps > 0) must be set.  ``m`` restricts the flow to the
    first m modes (the projected system); None keeps the field's full band.
    """

    eps: float = 0.0
    dt: float = 1e-3
    t_end: float | None = None
    tau_end: float | None = None
    m: int | None = None
    dealias: bool = True
    growth_factor: float = 10.0
    tail_tol: float = 1e-3
    max_halvings: int = 8

    def __post_init__(self):
        if not (0.0 <= self.eps <= 1.0):
            raise ValueError("eps must lie in [0, 1]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if (self.t_end is None) == (self.tau_end is None):
            raise ValueError("set exactly one of t_end, tau_end")
        if self.tau_end is not None and self.eps == 0.0:
            raise ValueError("tau_end needs eps > 0 (slow time degenerates)")
        horizon = self.t_end if self.t_end is not None else self.tau_end
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.m is not None and self.m < 1:
            raise ValueError("m must be >= 1")

    @property
    def fast_horizon(self) -> float:
        return self.t_end if self.t_end is not None else self.tau_end / self.eps

    def to_json(self) -> dict:
        return {
            "eps": self.eps, "dt": self.dt, "t_end": self.t_end,
            "tau_end": self.tau_end, "m": self.m, "dealias": self.dealias,
            "growth_factor": self.growth_factor, "tail_tol": self.tail_tol,
            "max_halvings": self.max_halvings,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvolveParams":
        return cls(**obj)


@dataclass
class Trajectory:
    """Sampled flow: fast times ``t``, fields, and provenance.

    ``taus`` reports eps * t for eps > 0; for the unperturbed flow the fast
    time itself is used (slow time degenerates at eps = 0).
    """

    params: EvolveParams
    spec: PerturbationSpec
    t: np.ndarray
    fields: list
    provenance: dict = dataclass_field(default_factory=dict)
    partial: bool = False
    abort_reason: str | None = None

    @property
    def taus(self) -> np.ndarray:
        scale = self.params.eps if self.params.eps > 0 else 1.0
        return self.t * scale

    @property
    def m_max(self) -> int:
        return self.fields[0].m_max

    def __len__(self):
        return len(self.fields)


# ---------------------------------------------------------------------------
# right-hand sides

def _nonlinear_complex(c: np.ndarray, n_grid: int, keep: int) -> np.ndarray:
    """3 d/dx P_keep(u^2) in rfft layout; exact for n_grid >= 3*keep + 1."""
    u = np.fft.irfft(c * n_grid)
    w = np.fft.rfft(u * u) / n_grid
    k = np.arange(n_grid // 2 + 1)
    w *= 3.0 * (2j * np.pi * k)
    w[0] = 0.0
    w[keep + 1:] = 0.0
    return w


def kdv_rhs(u: Field, m: int | None = None) -> Field:
    """V(u) = -u_xxx + 6 u u_x with the product truncated at m (dealiased)."""
    keep = u.m_max if m is None else min(m, u.m_max)
    n_grid = default_grid_size(u.m_max)
    c = to_complex(u, n_grid)
    k = np.arange(n_grid // 2 + 1)
    out = 1j * (TWO_PI * k) ** 3 * c         # -u_xxx in rfft layout
    out += _nonlinear_complex(c, n_grid, keep)
    out[keep + 1:] = 0.0
    return from_complex(out, u.m_max)


def _perturbation_complex(spec: PerturbationSpec, c: np.ndarray,
                          n_grid: int, keep: int) -> np.ndarray:
    k = np.arange(n_grid // 2 + 1)
    out = np.zeros_like(c)
    if spec.kind == "none":
        return out
    if spec.kind == "derivative":
        out[1:] = (2j * np.pi * k[1:]) * c[1:]
    elif spec.kind == "antiderivative":
        out[1:] = c[1:] / (2j * np.pi * k[1:])
    elif spec.kind == "double_antiderivative":
        out[1:] = -c[1:] / (TWO_PI * k[1:]) ** 2
    elif spec.kind == "smoothing_quadratic":
        u = np.fft.irfft(c * n_grid)
        w = np.fft.rfft(u * u) / n_grid
        w[0] = 0.0                            # subtract the mean of u^2
        order = int(np.ceil(spec.zeta0))
        w[1:] = w[1:] / (2j * np.pi * k[1:]) ** order
        out = w
    out[keep + 1:] = 0.0
    out[0] = 0.0
    return out


def apply_perturbation(spec: PerturbationSpec, u: Field) -> Field:
    """f(u) as a zero-mean field at the resolution of u."""
    n_grid = default_grid_size(u.m_max)
    c = to_complex(u, n_grid)
    return from_complex(_perturbation_complex(spec, c, n_grid, u.m_max), u.m_max)


def divergence(spec: PerturbationSpec, u: Field, m: int) -> float:
    """Trace of the Jacobian of the projected perturbation over modes <= m.

    The derivative/antiderivative kinds couple u_k only to u_{-k}, so the
    diagonal vanishes identically.  The double antiderivative is diagonal
    with entries -(2 pi k)^{-2}.  The quadratic kind is differentiated by
    central differences.
    """
    if m < 1 or m > u.m_max:
        raise ValueError("m out of range")
    if spec.kind in ("none", "derivative", "antiderivative"):
        return 0.0
    if spec.kind == "double_antiderivative":
        k = np.arange(1, m + 1, dtype=float)
        return float(np.sum(-2.0 / (TWO_PI * k) ** 2))
    # smoothing_quadratic: probe the 2m basis directions
    h = 1e-6 * max(1.0, sobolev_norm(u, 0))
    trace = 0.0
    for k in range(1, m + 1):
        for comp in (0, 1):
            step = np.zeros((u.m_max, 2))
            step[k - 1, comp] = h
            fp = apply_perturbation(spec, Field(u.coeffs + step))
            fm = apply_perturbation(spec, Field(u.coeffs - step))
            trace += (fp.coeffs[k - 1, comp] - fm.coeffs[k - 1, comp]) / (2 * h)
    return float(trace)


# ---------------------------------------------------------------------------
# integration

def _tail_fraction(c: np.ndarray, keep: int) -> float:
    """Energy fraction carried by the top quarter of the retained band."""
    total = float(np.sum(np.abs(c[1:keep + 1]) ** 2))
    if total == 0.0:
        return 0.0
    cut = max(1, (3 * keep) // 4)
    return float(np.sqrt(np.sum(np.abs(c[cut + 1:keep + 1]) ** 2) / total))


def suggest_dt(u0: Field, dt_cap: float = 2e-3) -> float:
    """Step bound from the advective CFL 6 max|u| (2 pi m) dt <= 1/2."""
    umax = float(np.max(np.abs(np.fft.irfft(
        to_complex(u0, default_grid_size(u0.m_max)) * default_grid_size(u0.m_max)))))
    if umax == 0.0:
        return dt_cap
    return min(dt_cap, 0.5 / (6.0 * umax * TWO_PI * u0.m_max))


def evolve(u0: Field, params: EvolveParams, spec: PerturbationSpec | None = None,
           sample_stride: int | None = None) -> Trajectory:
    """Integrate the flow and return samples every ``sample_stride`` steps.

    The nominal step is ``params.dt``; a step whose H^0 norm grows by more
    than ``params.growth_factor`` (or goes non-finite) is retried with half
    the step, up to ``params.max_halvings`` times, after which StepUnstable
    is raised carrying the partial trajectory.  Tail energy above
    ``params.tail_tol`` at a sample time raises Unresolved the same way.
    """
    spec = spec if spec is not None else PerturbationSpec("none")
    keep = u0.m_max if params.m is None else min(params.m, u0.m_max)
    n_grid = default_grid_size(u0.m_max)
    kk = np.arange(n_grid // 2 + 1)
    omega = (TWO_PI * kk) ** 3

    c = to_complex(u0, n_grid)
    c[keep + 1:] = 0.0
    # resolution applies to full-band runs; a projected system is an exact
    # ODE whose state may legitimately fill its band
    monitor_tail = keep == u0.m_max
    if monitor_tail and _tail_fraction(c, keep) > params.tail_tol:
        raise Unresolved(
            f"initial tail fraction {_tail_fraction(c, keep):.2e} exceeds "
            f"tolerance {params.tail_tol:.2e}")

    t_end = params.fast_horizon
    dt = min(params.dt, t_end)
    n_steps = int(np.ceil(t_end / dt - 1e-12))
    dt = t_end / n_steps
    if sample_stride is None:
        sample_stride = max(1, n_steps // 200)

    eps = params.eps

    def rhs(cc):
        out = _nonlinear_complex(cc, n_grid, keep)
        if eps != 0.0 and spec.kind != "none":
            out += eps * _perturbation_complex(spec, cc, n_grid, keep)
        return out

    times = [0.0]
    samples = [from_complex(c, u0.m_max)]

    def make_traj(partial=False, reason=None):
        return Trajectory(params=params, spec=spec, t=np.asarray(times),
                          fields=samples, partial=partial, abort_reason=reason)

    t = 0.0
    halvings = 0
    step_dt = dt
    E = np.exp(1j * omega * step_dt / 2.0)
    E2 = E * E
    i = 0
    norm_prev = float(np.sqrt(np.sum(np.abs(c) ** 2)))
    while i < n_steps:
        Ec = E * c
        n1 = rhs(c)
        v2 = Ec + 0.5 * step_dt * E * n1
        n2 = rhs(v2)
        v3 = Ec + 0.5 * step_dt * n2
        n3 = rhs(v3)
        v4 = E * (Ec + step_dt * n3)
        n4 = rhs(v4)
        c_new = E2 * c + step_dt / 6.0 * (E2 * n1 + 2.0 * E * (n2 + n3) + n4)

        norm_new = float(np.sqrt(np.sum(np.abs(c_new) ** 2)))
        if not np.isfinite(norm_new) or (norm_prev > 0 and
                                         norm_new > params.growth_factor * norm_prev):
            halvings += 1
            if halvings > params.max_halvings:
                raise StepUnstable(
                    f"norm grew {norm_new / max(norm_prev, 1e-300):.2e}x at t={t:.4g} "
                    f"after {params.max_halvings} halvings", make_traj(True, "StepUnstable"))
            step_dt *= 0.5
            n_steps = i + int(np.ceil((t_end - t) / step_dt - 1e-12))
            sample_stride *= 2
            E = np.exp(1j * omega * step_dt / 2.0)
            E2 = E * E
            log.warning("halving dt to %.3g at t=%.4g", step_dt, t)
            continue

        c = c_new
        norm_prev = norm_new
        t += step_dt
        i += 1
        if i % sample_stride == 0 or i == n_steps:
            if monitor_tail and _tail_fraction(c, keep) > params.tail_tol:
                times.append(t)
                samples.append(from_complex(c, u0.m_max))
                raise Unresolved(
                    f"tail fraction exceeded {params.tail_tol:.2e} at t={t:.4g}",
                    make_traj(True, "Unresolved"))
            times.append(t)
            samples.append(from_complex(c, u0.m_max))

    return make_traj()


def galerkin_evolve(u0: Field, m: int, params: EvolveParams,
                    spec: PerturbationSpec | None = None,
                    sample_stride: int | None = None) -> Trajectory:
    """Flow of the m-mode projected system (state, product and perturbation
    all truncated at m).  With m = m_max this is exactly :func:`evolve`."""
    if params.m is not None and params.m != m:
        raise ValueError("params.m conflicts with the requested dimension")
    p = EvolveParams(**{**params.to_json(), "m": m})
    return evolve(u0, p, spec, sample_stride)


# ---------------------------------------------------------------------------
# persistence

TRAJECTORY_SCHEMA_VERSION = 1


def save_trajectory(traj: Trajectory, directory) -> Path:
    """Write manifest.json plus a binary stream of (tau, frame) records."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": TRAJECTORY_SCHEMA_VERSION,
        "params": traj.params.to_json(),
        "perturbation": traj.spec.to_json(),
        "provenance": traj.provenance,
        "n_samples": len(traj),
        "m_max": traj.m_max,
        "partial": traj.partial,
        "abort_reason": traj.abort_reason,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    with open(d / "trajectory.bin", "wb") as fh:
        for tau, f in zip(traj.taus, traj.fields):
            fh.write(struct.pack("<d", tau))
            fh.write(field_to_bytes(f))
    return d


def load_trajectory(directory) -> Trajectory:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest["schema_version"] != TRAJECTORY_SCHEMA_VERSION:
        raise ValueError("unsupported trajectory schema version")
    params = EvolveParams.from_json(manifest["params"])
    spec = PerturbationSpec.from_json(manifest["perturbation"])
    buf = (d / "trajectory.bin").read_bytes()
    taus, fields = [], []
    offset = 0
    while offset < len(buf):
        (tau,) = struct.unpack_from("<d", buf, offset)
        f, offset = field_from_bytes(buf, offset + 8)
        taus.append(tau)
        fields.append(f)
    scale = params.eps if params.eps > 0 else 1.0
    return Trajectory(params=params, spec=spec,
                      t=np.asarray(taus) / scale, fields=fields,
                      provenance=manifest.get("provenance", {}),
                      partial=manifest.get("partial", False),
                      abort_reason=manifest.get("abort_reason"))
