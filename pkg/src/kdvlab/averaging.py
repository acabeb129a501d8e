"""Averaging experiments: effective action dynamics and their diagnostics.

The action rate of a perturbation f at a field u is the pairing

    F_k(u) = <grad I_k(u), f(u)>_{L^2},

and the averaged field <F_k>(J) is its angle average at prescribed actions.
Since the exact angle action on the torus is not available, the average is
estimated as a time average along the unperturbed flow started from a
nonresonant representative; equidistribution of the phases makes the two
agree.  The remaining machinery compares true action evolution against
solutions of dJ/dtau = <F>(J), accumulates Weyl sums of the linearized
phases, measures occupation of the resonance/small-action zones, and
evaluates the phase-volume growth rate of the truncated systems.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .dynamics import (
    EvolveParams,
    PerturbationSpec,
    Trajectory,
    apply_perturbation,
    divergence,
    evolve,
    suggest_dt,
)
from .errors import ClosedGap, EvaluatorFailure, ResonantRepresentative
from .fields import ActionVector, Field, TWO_PI, linear_phases
from .hill import (
    action_gradient,
    actions,
    estimate_frequencies,
    periodic_spectrum,
)
from .measures import galerkin_drift

log = logging.getLogger("kdvlab.averaging")


def _signed_multi_indices(m: int, n: int):
    """Integer vectors s with 0 < |s|_1 <= n over m angles."""
    out = []
    for s in itertools.product(range(-n, n + 1), repeat=m):
        order = sum(abs(c) for c in s)
        if 0 < order <= n:
            out.append(s)
    return out


# ---------------------------------------------------------------------------
# action rates

def action_rate(u: Field, k: int, spec: PerturbationSpec,
                spectrum=None) -> float:
    """F_k(u) = <grad I_k, f(u)>; exactly 0 for a closed gap."""
    sp = spectrum if spectrum is not None else periodic_spectrum(u, k)
    try:
        g = action_gradient(u, k, spectrum=sp)
    except ClosedGap:
        return 0.0
    f = apply_perturbation(spec, u)
    return float(np.sum(g.coeffs * f.coeffs))


@dataclass(frozen=True)
class AveragedFieldEstimate:
    """Weyl time-average estimate of <F_k> with jackknife error bars."""

    rates: np.ndarray
    errors: np.ndarray
    actions_ref: np.ndarray
    T_avg: float
    n_samples: int
    blocks: int

    def to_json(self) -> dict:
        return {"rates": list(map(float, self.rates)),
                "errors": list(map(float, self.errors)),
                "actions_ref": list(map(float, self.actions_ref)),
                "T_avg": self.T_avg, "n_samples": self.n_samples,
                "blocks": self.blocks}


def check_nonresonant(u_rep: Field, k_max: int, resonance_order: int = 2,
                      resonance_tol: float = 0.5,
                      freq_horizon: float = 1.0) -> np.ndarray:
    """Frequency screen for an averaging representative.

    Returns the frequency estimates; raises ResonantRepresentative when some
    integer combination |s . W| with |s|_1 <= resonance_order falls below
    the tolerance.
    """
    W = estimate_frequencies(u_rep, k_max, horizon=freq_horizon)
    for s in _signed_multi_indices(k_max, resonance_order):
        if abs(float(np.dot(s, W))) < resonance_tol:
            raise ResonantRepresentative(
                f"|s.W| = {abs(float(np.dot(s, W))):.3g} below "
                f"{resonance_tol} for s = {s}")
    return W


def estimate_averaged_field(u_rep: Field, k_max: int, spec: PerturbationSpec,
                            T_avg: float, n_samples: int = 160,
                            blocks: int = 8, dt: float | None = None,
                            resonance_order: int = 2,
                            resonance_tol: float = 0.5,
                            screen: bool = True) -> AveragedFieldEstimate:
    """<F_k> at the actions of u_rep, by time-averaging F_k along the
    unperturbed flow.

    The error bars are leave-one-block-out jackknife estimates from
    ``blocks`` consecutive sub-intervals; doubling T_avg at fixed block
    count shrinks them roughly like 1/T.
    """
    if screen:
        check_nonresonant(u_rep, k_max, resonance_order, resonance_tol)
    step = dt if dt is not None else suggest_dt(u_rep)
    stride = max(1, int(np.ceil(T_avg / step / n_samples)))
    traj = evolve(u_rep, EvolveParams(eps=0.0, dt=step, t_end=T_avg,
                                      tail_tol=0.05),
                  sample_stride=stride)
    vals = np.empty((len(traj), k_max))
    for i, f in enumerate(traj.fields):
        sp = periodic_spectrum(f, k_max)
        vals[i] = [action_rate(f, k, spec, spectrum=sp)
                   for k in range(1, k_max + 1)]
    rates = vals.mean(axis=0)
    # jackknife over consecutive blocks
    cut = (len(vals) // blocks) * blocks
    bm = vals[:cut].reshape(blocks, -1, k_max).mean(axis=1)
    errors = np.sqrt(np.sum((bm - bm.mean(axis=0)) ** 2, axis=0)
                     / (blocks * (blocks - 1)))
    return AveragedFieldEstimate(rates=rates, errors=errors,
                                 actions_ref=actions(u_rep, k_max).entries,
                                 T_avg=T_avg, n_samples=len(vals),
                                 blocks=blocks)


# ---------------------------------------------------------------------------
# the averaged vector field as an evaluator

@dataclass
class AveragedField:
    """Rate vector J -> <F>(J) for the first k_max actions."""

    k_max: int
    evaluator: object
    est_params: dict = dataclass_field(default_factory=dict)

    def __call__(self, J: np.ndarray) -> np.ndarray:
        out = np.asarray(self.evaluator(np.asarray(J, dtype=float)), dtype=float)
        if out.shape != (self.k_max,):
            raise EvaluatorFailure("evaluator returned a wrong-shaped rate")
        return out

    @classmethod
    def zero(cls, k_max: int) -> "AveragedField":
        return cls(k_max, lambda J: np.zeros(k_max), {"model": "zero"})

    @classmethod
    def linear_diagonal(cls, k_max: int, coeffs: np.ndarray) -> "AveragedField":
        coeffs = np.asarray(coeffs, dtype=float)
        return cls(k_max, lambda J: coeffs * J, {"model": "linear_diagonal",
                                                 "coeffs": list(coeffs)})

    @classmethod
    def from_model(cls, spec: PerturbationSpec, k_max: int) -> "AveragedField":
        """Small-amplitude closed forms for the library perturbations.

        The two Hamiltonian kinds average to zero; the double antiderivative
        acts diagonally with rate -2 (2 pi k)^{-2} per action.
        """
        if spec.kind in ("none", "derivative", "antiderivative"):
            return cls.zero(k_max)
        if spec.kind == "double_antiderivative":
            k = np.arange(1, k_max + 1, dtype=float)
            return cls.linear_diagonal(k_max, -2.0 / (TWO_PI * k) ** 2)
        raise EvaluatorFailure(
            f"no closed-form averaged model for kind {spec.kind!r}")

    @classmethod
    def empirical(cls, u_rep: Field, spec: PerturbationSpec, k_max: int,
                  T_avg: float = 20.0, rescale_tol: float = 1e-6,
                  **est_kwargs) -> "AveragedField":
        """Monte Carlo evaluator: rescale the representative's mode pairs to
        hit the requested actions (fixed point on the gap actions), then
        Weyl-average along the unperturbed flow.  Expensive; every __call__
        runs a fresh time average."""

        def evaluator(J):
            u = _rescale_to_actions(u_rep, J, rescale_tol)
            est = estimate_averaged_field(u, k_max, spec, T_avg,
                                          screen=False, **est_kwargs)
            return est.rates

        return cls(k_max, evaluator, {"model": "empirical", "T_avg": T_avg})


def _rescale_to_actions(u_rep: Field, J: np.ndarray, tol: float,
                        max_iter: int = 30) -> Field:
    J = np.asarray(J, dtype=float)
    k_max = len(J)
    u = Field(np.array(u_rep.coeffs))
    for _ in range(max_iter):
        I = actions(u, k_max).entries
        if np.any((I == 0) & (J > 0)):
            raise EvaluatorFailure("representative has a dead mode; cannot "
                                   "reach the requested actions")
        err = np.abs(I - J) / np.maximum(J, 1e-12)
        if np.max(err) <= tol:
            return u
        scale = np.ones(u.m_max)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.sqrt(np.where(I > 0, J / np.maximum(I, 1e-300), 0.0))
        scale[:k_max] = s
        u = Field(u.coeffs * scale[:, None])
    raise EvaluatorFailure("action rescaling did not converge")


# ---------------------------------------------------------------------------
# averaged equation

_CK_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [3 / 10, -9 / 10, 6 / 5],
    [-11 / 54, 5 / 2, -70 / 27, 35 / 27],
    [1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096],
]
_CK_B5 = [37 / 378, 0, 250 / 621, 125 / 594, 0, 512 / 1771]
_CK_B4 = [2825 / 27648, 0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4]


def _weighted_l1(J: np.ndarray, p: float) -> float:
    k = np.arange(1, len(J) + 1, dtype=float)
    return 2.0 * float(np.sum((TWO_PI * k) ** (2 * p + 1) * np.abs(J)))


def solve_averaged(J0: ActionVector, tau_end: float, field: AveragedField,
                   p: float, ball_radius: float, rtol: float = 1e-10,
                   atol: float = 1e-14, max_steps: int = 200000):
    """Integrate dJ/dtau = <F>(J) with an embedded 4(5) pair.

    Actions are clamped at the octant boundary after every accepted step.
    Integration stops at the first tau where |J|~_p exceeds ball_radius;
    that tau is the reported stop time.  Returns (taus, J_path, stop_time).
    """
    J = np.array(J0.entries, dtype=float)
    if len(J) != field.k_max:
        raise ValueError("initial actions and field dimension differ")
    taus = [0.0]
    path = [J.copy()]
    if _weighted_l1(J, p) >= ball_radius:
        return np.array(taus), np.array(path), 0.0
    tau = 0.0
    dtau = min(tau_end / 16.0, 1e-2)
    stop_time = tau_end
    k_stages = np.zeros((6, len(J)))
    steps = 0
    while tau < tau_end - 1e-15:
        dtau = min(dtau, tau_end - tau)
        for s in range(6):
            y = J.copy()
            for j, a in enumerate(_CK_A[s]):
                y += dtau * a * k_stages[j]
            k_stages[s] = field(np.maximum(y, 0.0))
        j5 = J + dtau * sum(b * k_stages[i] for i, b in enumerate(_CK_B5))
        j4 = J + dtau * sum(b * k_stages[i] for i, b in enumerate(_CK_B4))
        scale = atol + rtol * np.maximum(np.abs(J), np.abs(j5))
        err = float(np.max(np.abs(j5 - j4) / scale))
        if err <= 1.0:
            tau += dtau
            J = np.maximum(j5, 0.0)
            taus.append(tau)
            path.append(J.copy())
            if _weighted_l1(J, p) > ball_radius:
                stop_time = tau
                break
        dtau *= float(np.clip(0.9 * (max(err, 1e-16)) ** -0.2, 0.2, 5.0))
        steps += 1
        if steps > max_steps:
            raise EvaluatorFailure("averaged equation: step budget exhausted")
    return np.array(taus), np.array(path), float(min(stop_time, tau_end))


# ---------------------------------------------------------------------------
# trajectory comparison

@dataclass
class ComparisonReport:
    """Deviation of measured actions from an averaged solution."""

    q: float
    rho_observed: float
    stop_time: float
    passed: bool | None
    taus: np.ndarray
    I_path: np.ndarray
    J_path: np.ndarray
    xi: np.ndarray
    threshold: float | None = None

    def to_json(self) -> dict:
        return {
            "q": self.q,
            "rho_observed": self.rho_observed,
            "stop_time": self.stop_time,
            "pass": self.passed,
            "threshold": self.threshold,
            "taus": list(map(float, self.taus)),
            "I": [list(map(float, row)) for row in self.I_path],
            "J": [list(map(float, row)) for row in self.J_path],
            "xi": [list(map(float, row)) for row in self.xi],
        }


def trajectory_actions(traj: Trajectory, k_max: int) -> np.ndarray:
    """Measured actions I_1..I_k along the trajectory samples."""
    out = np.empty((len(traj), k_max))
    for i, f in enumerate(traj.fields):
        out[i] = actions(f, k_max).entries
    return out


def compare(traj: Trajectory, J_taus: np.ndarray, J_path: np.ndarray,
            q: float, field: AveragedField | None = None,
            threshold: float | None = None,
            I_path: np.ndarray | None = None) -> ComparisonReport:
    """Compare measured actions against an averaged path on tau in [0, T].

    The averaged path is linearly resampled onto the trajectory's tau grid;
    the deviation is the weighted-l1 distance over the tracked modes, and
    the residual series follows the measured actions:

        xi_k(tau) = I_k(tau) - I_k(0) - int_0^tau <F_k>(I(s)) ds.
    """
    J_path = np.atleast_2d(np.asarray(J_path, dtype=float))
    k_max = J_path.shape[1]
    taus = traj.taus
    stop_time = float(J_taus[-1])
    keep = taus <= stop_time + 1e-12
    taus = taus[keep]
    if I_path is None:
        I_path = trajectory_actions(traj, k_max)
    I_path = I_path[keep]
    J_interp = np.column_stack([np.interp(taus, J_taus, J_path[:, k])
                                for k in range(k_max)])
    kk = np.arange(1, k_max + 1, dtype=float)
    weights = 2.0 * (TWO_PI * kk) ** (2 * q + 1)
    devs = np.sum(weights[None, :] * np.abs(I_path - J_interp), axis=1)
    rho = float(np.max(devs))

    if field is not None:
        rates = np.array([field(I_path[i]) for i in range(len(taus))])
    else:
        rates = np.zeros_like(I_path)
    integral = np.zeros_like(I_path)
    if len(taus) > 1:
        dt = np.diff(taus)
        mid = 0.5 * (rates[1:] + rates[:-1]) * dt[:, None]
        integral[1:] = np.cumsum(mid, axis=0)
    xi = I_path - I_path[0] - integral

    passed = None if threshold is None else bool(rho <= threshold)
    return ComparisonReport(q=q, rho_observed=rho, stop_time=stop_time,
                            passed=passed, taus=taus, I_path=I_path,
                            J_path=J_interp, xi=xi, threshold=threshold)


# ---------------------------------------------------------------------------
# equidistribution statistics

@dataclass
class WeylReport:
    """Time-then-ensemble averages of exp(i s . phi) over the first m angles."""

    epsilon: float
    m: int
    n: int
    statistics: dict
    n_members: int
    n_samples: int

    def moduli(self) -> dict:
        return {s: abs(v) for s, v in self.statistics.items() if any(s)}

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon, "m": self.m, "n": self.n,
            "n_members": self.n_members, "n_samples": self.n_samples,
            "statistics": {
                ",".join(map(str, s)): [float(v.real), float(v.imag)]
                for s, v in self.statistics.items()
            },
        }


def weyl_report(trajectories, m: int, n: int) -> WeylReport:
    """Empirical angle-distribution test against Haar measure.

    Every statistic is the ensemble mean over trajectories of the time mean
    of exp(i s . phi(tau)); the zero vector is included and equals 1
    exactly.  Conjugate symmetry (value at -s is the conjugate of the value
    at s) holds by construction.
    """
    svecs = [tuple([0] * m)] + _signed_multi_indices(m, n)
    acc = {s: 0.0 + 0.0j for s in svecs}
    n_samples = 0
    for traj in trajectories:
        phases = np.stack([linear_phases(f)[:m] for f in traj.fields])
        n_samples = max(n_samples, phases.shape[0])
        unit = np.exp(1j * phases)
        for s in svecs:
            term = np.ones(phases.shape[0], dtype=complex)
            for k, sk in enumerate(s):
                if sk:
                    term = term * unit[:, k] ** sk
            acc[s] += term.mean()
    count = len(trajectories)
    stats = {s: v / count for s, v in acc.items()}
    eps = trajectories[0].params.eps if trajectories else 0.0
    return WeylReport(epsilon=eps, m=m, n=n, statistics=stats,
                      n_members=count, n_samples=n_samples)


# ---------------------------------------------------------------------------
# resonance occupation and volume-growth diagnostics

def resonance_occupation(traj: Trajectory, m: int, n: int, alpha: float,
                         eps: float, freq_horizon: float = 1.0,
                         freq_dt: float | None = None,
                         max_samples: int | None = None) -> float:
    """Fraction of samples inside the resonant/small-action zone.

    A sample is in the zone when min_k I_k < eps^alpha or when some integer
    combination |s . W| with 0 < |s|_1 <= n drops below eps^alpha.
    ``max_samples`` caps the cost by thinning the sample set evenly.
    """
    if not alpha < 0.25:
        raise ValueError("alpha must be below 1/4")
    thresh = eps ** alpha
    svecs = _signed_multi_indices(m, n)
    in_window = [i for i in range(len(traj)) if traj.taus[i] <= 1.0 + 1e-12]
    if max_samples is not None and len(in_window) > max_samples:
        pick = np.unique(np.linspace(0, len(in_window) - 1,
                                     max_samples).astype(int))
        in_window = [in_window[i] for i in pick]
    hits = 0
    total = 0
    for i in in_window:
        f = traj.fields[i]
        total += 1
        I = actions(f, m).entries
        if float(np.min(I)) < thresh:
            hits += 1
            continue
        W = estimate_frequencies(f, m, horizon=freq_horizon, dt=freq_dt)
        combos = np.array([abs(float(np.dot(s, W))) for s in svecs])
        if combos.min() < thresh:
            hits += 1
    if total == 0:
        raise ValueError("trajectory has no samples in [0, 1]")
    return hits / total


def quasi_invariance_rate(traj: Trajectory, m: int, p: int, eps: float,
                          spec: PerturbationSpec) -> np.ndarray:
    """Instantaneous logarithmic volume-growth rate along a projected run:

        r(tau) = eps^{-1} E_{p+1} + E^f_{p+1} + sum_i d f_i / d u_i.

    Its time integral controls the two-sided quasi-invariance bound for the
    weighted volume carried by the order-(p+1) functional.
    """
    rates = np.empty(len(traj))
    div = None
    if spec.kind != "smoothing_quadratic":
        div = divergence(spec, traj.fields[0], m)
    for i, f in enumerate(traj.fields):
        e, ef = galerkin_drift(f, m, p + 1, spec)
        d = div if div is not None else divergence(spec, f, m)
        rates[i] = e / eps + ef + d
    return rates
