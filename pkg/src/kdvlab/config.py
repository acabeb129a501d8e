"""Experiment configuration: schema, validation, canonical digest.

Configs are YAML files with nested sections.  Validation is strict: unknown
keys anywhere are rejected, every value is type- and range-checked, and
cross-field constraints (resonance exponent below 1/4, admissible sigma
rules, the amplitude cap on angle-based experiments) are enforced before
anything runs.  The resolved config (defaults filled in) has a canonical
JSON serialization whose SHA-256 digest stamps every artifact, so reruns
into the same directory are refused on a digest mismatch unless forced.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import yaml

from .errors import ConfigInvalid

SCHEMA_VERSION = 1

EXPERIMENTS = (
    "simulate",
    "spectrum",
    "average",
    "theorem-i",
    "theorem-ii",
    "quasi-invariance",
    "galerkin-convergence",
)

PERTURBATION_KINDS = (
    "none",
    "derivative",
    "antiderivative",
    "double_antiderivative",
    "smoothing_quadratic",
)

# amplitude ceiling (H^3) for experiments that read linearized angles
ANGLE_AMPLITUDE_CAP = 0.25


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


class _Section:
    """Declarative per-section validator: key -> (checker, default)."""

    def __init__(self, name, fields):
        self.name = name
        self.fields = fields

    def resolve(self, raw, errors):
        raw = {} if raw is None else raw
        if not isinstance(raw, dict):
            errors.append(f"{self.name}: expected a mapping")
            return {}
        out = {}
        for key in raw:
            if key not in self.fields:
                errors.append(f"{self.name}.{key}: unknown key")
        for key, (check, default) in self.fields.items():
            if key in raw and not (raw[key] is None and default is not _REQUIRED):
                ok, val_or_msg = check(raw[key])
                if ok:
                    out[key] = val_or_msg
                else:
                    errors.append(f"{self.name}.{key}: {val_or_msg}")
            elif default is _REQUIRED:
                errors.append(f"{self.name}.{key}: required")
            else:
                out[key] = default
        return out


_REQUIRED = object()


def _positive(x):
    return (True, float(x)) if _is_num(x) and x > 0 else (False, "must be a positive number")


def _nonneg_int(x):
    return (True, int(x)) if _is_int(x) and x >= 0 else (False, "must be a nonnegative integer")


def _pos_int(x):
    return (True, int(x)) if _is_int(x) and x >= 1 else (False, "must be a positive integer")


def _number(x):
    return (True, float(x)) if _is_num(x) else (False, "must be a number")


def _optional_positive(x):
    if x is None:
        return True, None
    return _positive(x)


def _choice(options):
    def check(x):
        if x in options:
            return True, x
        return False, f"must be one of {', '.join(map(str, options))}"
    return check


def _eps_value(x):
    if _is_num(x) and 0 < x <= 1:
        return True, float(x)
    return False, "must lie in (0, 1]"


def _eps_sweep(x):
    if (isinstance(x, list) and len(x) >= 1
            and all(_is_num(v) and 0 < v <= 1 for v in x)):
        return True, [float(v) for v in x]
    return False, "must be a nonempty list of values in (0, 1]"


def _m_list(x):
    if (isinstance(x, list) and len(x) >= 2 and all(_is_int(v) and v >= 2 for v in x)
            and all(b == 2 * a for a, b in zip(x, x[1:]))):
        return True, [int(v) for v in x]
    return False, "must be a doubling chain of integers, e.g. [8, 16, 32]"


def _coeff_matrix(x):
    if (isinstance(x, list) and len(x) >= 1
            and all(isinstance(r, list) and len(r) == 2
                    and all(_is_num(v) for v in r) for r in x)):
        return True, [[float(a), float(b)] for a, b in x]
    return False, "must be a list of [u_k, u_minus_k] pairs"


def _measure_dict(x):
    if not isinstance(x, dict):
        return False, "must be a mapping"
    allowed = {"kind", "p", "m", "zeta0_prime", "sigma"}
    unknown = set(x) - allowed
    if unknown:
        return False, f"unknown keys {sorted(unknown)}"
    if x.get("kind") not in ("gaussian_h", "eta_p", "gibbs_p"):
        return False, "kind must be gaussian_h | eta_p | gibbs_p"
    out = {"kind": x["kind"], "p": float(x.get("p", 3.0)),
           "m": int(x.get("m", 16)),
           "zeta0_prime": float(x.get("zeta0_prime", 2.0)),
           "sigma": x.get("sigma")}
    return True, out


_FIELD = _Section("field", {
    "m_max": (_pos_int, _REQUIRED),
    "kind": (_choice(("zero", "sampled", "explicit")), "sampled"),
    "measure": (_measure_dict, None),
    "coeffs": (_coeff_matrix, None),
    "amplitude_h3": (_optional_positive, None),
})

_PERTURBATION = _Section("perturbation", {
    "kind": (_choice(PERTURBATION_KINDS), "none"),
    "zeta0": ((lambda x: (True, float(x)) if _is_num(x) else (False, "must be a number")), None),
})

_EVOLVE = _Section("evolve", {
    "dt": (_optional_positive, None),
    "eps": (_eps_value, 1e-2),
    "eps_sweep": (_eps_sweep, [1e-1, 1e-2, 1e-3]),
    "tau_end": (_positive, 1.0),
    "t_end": (_optional_positive, None),
    "sample_count": (_pos_int, 50),
    "tail_tol": (_positive, 1e-2),
})

_SPECTRUM = _Section("spectrum", {
    "n_gaps": (_pos_int, 5),
})

_AVERAGE = _Section("average", {
    "k_max": (_pos_int, 3),
    "T_avg": (_positive, 20.0),
    "n_samples": (_pos_int, 160),
    "blocks": (_pos_int, 8),
})

_COMPARE = _Section("compare", {
    "q": (_number, 1.0),
    "rho": (_optional_positive, None),
    "k_max": (_pos_int, 3),
})

_WEYL = _Section("weyl", {
    "members": (_pos_int, 50),
    "m_angles": (_pos_int, 3),
    "s_max": (_pos_int, 2),
})

_RESONANCE = _Section("resonance", {
    "alpha": (_positive, 0.2),
    "n": (_pos_int, 2),
    "m": (_pos_int, 2),
})

_QUASI = _Section("quasi_invariance", {
    "p": (_nonneg_int, 2),
    "m": (_pos_int, 16),
})

_GALERKIN = _Section("galerkin", {
    "m_list": (_m_list, [8, 16, 32]),
    "eps": (_eps_value, 1e-2),
    "tau_end": (_positive, 0.1),
    "norm_p": (_number, 3.0),
})

_SECTIONS = {s.name: s for s in (
    _FIELD, _PERTURBATION, _EVOLVE, _SPECTRUM, _AVERAGE, _COMPARE, _WEYL,
    _RESONANCE, _QUASI, _GALERKIN)}

# experiment -> sections that may appear (all resolve to defaults if absent)
_EXPERIMENT_SECTIONS = {
    "simulate": ("field", "perturbation", "evolve"),
    "spectrum": ("field", "spectrum"),
    "average": ("field", "perturbation", "average"),
    "theorem-i": ("field", "perturbation", "evolve", "compare"),
    "theorem-ii": ("field", "evolve", "weyl", "resonance"),
    "quasi-invariance": ("field", "perturbation", "evolve", "quasi_invariance"),
    "galerkin-convergence": ("field", "perturbation", "galerkin"),
}

_TOP_KEYS = ("schema_version", "experiment", "seed", "output")


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment configuration plus its canonical digest."""

    data: dict
    digest: str

    @property
    def experiment(self) -> str:
        return self.data["experiment"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def section(self, name: str) -> dict:
        return self.data.get(name, {})


def canonical_json(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_digest(data: dict) -> str:
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()


def resolve_config(raw: dict) -> ExperimentConfig:
    """Validate and fill defaults; raises ConfigInvalid with diagnostics."""
    errors = []
    if not isinstance(raw, dict):
        raise ConfigInvalid(["config root must be a mapping"])
    if raw.get("schema_version") != SCHEMA_VERSION:
        errors.append(f"schema_version: must equal {SCHEMA_VERSION}")
    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        errors.append("experiment: must be one of " + ", ".join(EXPERIMENTS))
        raise ConfigInvalid(errors)
    allowed_sections = _EXPERIMENT_SECTIONS[experiment]
    for key in raw:
        if key not in _TOP_KEYS and key not in allowed_sections:
            errors.append(f"{key}: unknown key for experiment {experiment}")

    seed = raw.get("seed", 0)
    if not _is_int(seed) or seed < 0:
        errors.append("seed: must be a nonnegative integer")
        seed = 0
    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        errors.append("output: must be a string path")

    resolved = {"schema_version": SCHEMA_VERSION, "experiment": experiment,
                "seed": int(seed), "output": output}
    for name in allowed_sections:
        resolved[name] = _SECTIONS[name].resolve(raw.get(name), errors)

    _cross_checks(experiment, resolved, errors)
    if errors:
        raise ConfigInvalid(errors)
    return ExperimentConfig(data=resolved, digest=config_digest(resolved))


def _cross_checks(experiment, resolved, errors):
    field = resolved.get("field", {})
    if field:
        kind = field.get("kind")
        if kind == "sampled" and field.get("measure") is None:
            errors.append("field.measure: required when field.kind is 'sampled'")
        if kind == "explicit" and field.get("coeffs") is None:
            errors.append("field.coeffs: required when field.kind is 'explicit'")
        measure = field.get("measure")
        if measure is not None and measure["kind"] == "gaussian_h":
            if measure["zeta0_prime"] <= 1.0:
                errors.append(
                    "field.measure.zeta0_prime: admissibility requires a "
                    "value above 1 (sum of sigma_j must converge)")
    pert = resolved.get("perturbation")
    if pert:
        try:
            from .dynamics import PerturbationSpec
            PerturbationSpec(pert["kind"], pert.get("zeta0"))
        except ValueError as exc:
            errors.append(f"perturbation: {exc}")
    res = resolved.get("resonance")
    if res and not res["alpha"] < 0.25:
        errors.append("resonance.alpha: must be below 1/4")
    if experiment == "theorem-ii":
        amp = field.get("amplitude_h3")
        if amp is not None and amp > ANGLE_AMPLITUDE_CAP:
            errors.append(
                "field.amplitude_h3: angle-based experiments are capped at "
                f"{ANGLE_AMPLITUDE_CAP} (linearized phases degrade beyond it)")
    ev = resolved.get("evolve")
    if ev and ev.get("t_end") is not None:
        errors.append("evolve.t_end: horizons are configured in slow time "
                      "(tau_end); t_end is derived")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigInvalid([f"cannot read config: {exc}"])
    except yaml.YAMLError as exc:
        raise ConfigInvalid([f"config is not valid YAML: {exc}"])
    return resolve_config(raw if raw is not None else {})


def validate_config(path) -> tuple[ExperimentConfig | None, list]:
    """Schema plus cross-field diagnostics without running anything."""
    try:
        cfg = load_config(path)
    except ConfigInvalid as exc:
        return None, exc.diagnostics
    return cfg, []
