"""Experiment runners: orchestration, persistence, reproducibility.

Every runner takes a resolved config and an output directory, executes the
experiment through the library modules, and writes

* ``manifest.json``: schema version, resolved config, digest, artifact list;
* delimited reports (CSV) and structured reports (JSON);
* rendered figures (PNG) alongside the data they visualize;
* binary trajectory directories where the experiment produces flows.

Identical (config, seed) produce byte-identical reports regardless of the
worker count: ensemble members and sweep cells are deterministic functions
of (seed, index), and results are merged in index order.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import plotting
from .averaging import (
    AveragedField,
    compare,
    estimate_averaged_field,
    quasi_invariance_rate,
    resonance_occupation,
    solve_averaged,
    trajectory_actions,
    weyl_report,
)
from .config import ExperimentConfig
from .dynamics import (
    EvolveParams,
    PerturbationSpec,
    divergence,
    evolve,
    galerkin_evolve,
    save_trajectory,
    suggest_dt,
)
from .errors import ConfigInvalid, KdvLabError
from .fields import (
    ActionVector,
    Field,
    TWO_PI,
    sobolev_norm,
)
from .hill import discriminant, periodic_spectrum, spectrum_rows, write_spectrum_csv
from .measures import MeasureSpec, conservation_functional, sample

log = logging.getLogger("kdvlab.experiments")

MANIFEST_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# shared plumbing

def _write_json(path: Path, obj) -> str:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))
    return path.name


def _write_csv(path: Path, header, rows) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                        else v for v in row])
    return path.name


def _pmap(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def build_initial_field(field_cfg: dict, seed: int) -> Field:
    """Initial datum from its config section (deterministic in the seed)."""
    m_max = field_cfg["m_max"]
    kind = field_cfg["kind"]
    if kind == "zero":
        u = Field.zero(m_max)
    elif kind == "explicit":
        u = Field(np.asarray(field_cfg["coeffs"], dtype=float)).resize(m_max)
    else:
        spec = MeasureSpec.from_json(field_cfg["measure"])
        u = sample(spec, seed, index=0).field.resize(m_max)
    amp = field_cfg.get("amplitude_h3")
    if amp is not None:
        nrm = sobolev_norm(u, 3)
        if nrm == 0.0:
            raise ConfigInvalid(["field.amplitude_h3: cannot rescale the zero field"])
        u = Field(u.coeffs * (amp / nrm))
    return u


def check_digest(out_dir: Path, digest: str, force: bool) -> None:
    manifest = out_dir / "manifest.json"
    if manifest.exists():
        try:
            prev = json.loads(manifest.read_text()).get("config_digest")
        except (OSError, json.JSONDecodeError):
            prev = None
        if prev is not None and prev != digest and not force:
            raise ConfigInvalid(
                [f"output directory holds results for digest {prev[:12]}..; "
                 "rerun with --force to overwrite"])


def write_manifest(out_dir: Path, cfg: ExperimentConfig, artifacts,
                   status="ok", extra=None) -> dict:
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config": cfg.data,
        "config_digest": cfg.digest,
        "artifacts": sorted(artifacts),
        "status": status,
    }
    if extra:
        manifest.update(extra)
    _write_json(out_dir / "manifest.json", manifest)
    return manifest


def _perturbation(cfg: ExperimentConfig) -> PerturbationSpec:
    sec = cfg.section("perturbation")
    return PerturbationSpec(sec.get("kind", "none"), sec.get("zeta0"))


def _evolve_params(ev: dict, eps: float, m: int | None, u0: Field) -> EvolveParams:
    dt = ev.get("dt") or suggest_dt(u0)
    return EvolveParams(eps=eps, dt=dt, tau_end=ev["tau_end"] if eps > 0 else None,
                        t_end=None if eps > 0 else ev["tau_end"],
                        m=m, tail_tol=ev.get("tail_tol", 1e-2))


def _stride_for(params: EvolveParams, n_samples: int) -> int:
    n_steps = int(np.ceil(params.fast_horizon / params.dt))
    return max(1, n_steps // max(1, n_samples))


# ---------------------------------------------------------------------------
# runners

def run_simulate(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list:
    ev = cfg.section("evolve")
    u0 = build_initial_field(cfg.section("field"), cfg.seed)
    spec = _perturbation(cfg)
    params = _evolve_params(ev, ev["eps"], None, u0)
    traj = evolve(u0, params, spec, sample_stride=_stride_for(params, ev["sample_count"]))
    traj.provenance = {"seed": cfg.seed, "config_digest": cfg.digest,
                       "schema_version": MANIFEST_SCHEMA_VERSION}
    artifacts = []
    save_trajectory(traj, out_dir / "trajectory")
    artifacts.append("trajectory")

    k_track = min(3, u0.m_max)
    I_path = trajectory_actions(traj, k_track)
    cons = {f"J{n}": [] for n in range(3)}
    base = {n: conservation_functional(u0, n) for n in range(3)}
    for f in traj.fields:
        for n in range(3):
            val = conservation_functional(f, n)
            cons[f"J{n}"].append((val - base[n]) / (1.0 + abs(base[n])))
    rows = [(tau, *I_path[i], *(cons[f"J{n}"][i] for n in range(3)))
            for i, tau in enumerate(traj.taus)]
    artifacts.append(_write_csv(out_dir / "actions.csv",
                                ["tau"] + [f"I_{k}" for k in range(1, k_track + 1)]
                                + [f"J{n}_drift" for n in range(3)], rows))
    artifacts.append(plotting.action_comparison_figure(
        traj.taus, I_path, np.repeat(I_path[:1], len(I_path), axis=0),
        params.eps, out_dir / "actions.png"))
    artifacts.append(plotting.conservation_figure(
        traj.taus, {k: np.array(v) for k, v in cons.items()},
        out_dir / "conservation.png"))
    return artifacts


def run_spectrum(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list:
    u = build_initial_field(cfg.section("field"), cfg.seed)
    n_gaps = cfg.section("spectrum")["n_gaps"]
    rows = spectrum_rows(u, n_gaps)
    artifacts = []
    write_spectrum_csv(rows, out_dir / "spectrum.csv")
    artifacts.append("spectrum.csv")
    sp = periodic_spectrum(u, n_gaps)
    lams = np.linspace(sp.lambdas[0] - 2.0, sp.lambdas[-1] + 5.0, 400)
    deltas = [discriminant(u, float(l)).delta for l in lams]
    artifacts.append(plotting.discriminant_figure(
        lams, deltas, sp, out_dir / "discriminant.png"))
    return artifacts


def run_average(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list:
    av = cfg.section("average")
    u = build_initial_field(cfg.section("field"), cfg.seed)
    spec = _perturbation(cfg)
    est = estimate_averaged_field(u, av["k_max"], spec, av["T_avg"],
                                  n_samples=av["n_samples"], blocks=av["blocks"])
    report = est.to_json()
    try:
        model = AveragedField.from_model(spec, av["k_max"])
        report["model_rates"] = list(map(float, model(est.actions_ref)))
    except KdvLabError:
        report["model_rates"] = None
    artifacts = [_write_json(out_dir / "averaged_rates.json", report)]
    rows = [(k + 1, est.rates[k], est.errors[k],
             report["model_rates"][k] if report["model_rates"] else float("nan"))
            for k in range(av["k_max"])]
    artifacts.append(_write_csv(out_dir / "averaged_rates.csv",
                                ["k", "rate", "jackknife_err", "model"], rows))
    artifacts.append(plotting.sweep_figure(
        np.arange(1, av["k_max"] + 1), np.abs(est.rates) + 1e-300,
        out_dir / "rates.png", ylabel="|averaged rate|"))
    return artifacts


def _theorem_i_cell(args):
    (u_coeffs, spec_json, eps, ev, comp, seed, digest) = args
    u0 = Field(np.asarray(u_coeffs))
    spec = PerturbationSpec.from_json(spec_json)
    params = _evolve_params(ev, eps, None, u0)
    traj = evolve(u0, params, spec,
                  sample_stride=_stride_for(params, ev["sample_count"]))
    traj.provenance = {"seed": seed, "config_digest": digest,
                       "schema_version": MANIFEST_SCHEMA_VERSION}
    k_max = comp["k_max"]
    I_path = trajectory_actions(traj, k_max)
    field = AveragedField.from_model(spec, k_max)
    J0 = ActionVector(I_path[0])
    ball = 10.0 * (1.0 + _weighted_norm(I_path[0], 3.0))
    taus_J, J_path, stop = solve_averaged(J0, ev["tau_end"], field, p=3.0,
                                          ball_radius=ball)
    rep = compare(traj, taus_J, J_path, q=comp["q"], field=field,
                  threshold=comp["rho"], I_path=I_path)
    return eps, traj, rep


def _weighted_norm(J, p):
    k = np.arange(1, len(J) + 1, dtype=float)
    return 2.0 * float(np.sum((TWO_PI * k) ** (2 * p + 1) * np.abs(J)))


def run_theorem_i(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list:
    ev = cfg.section("evolve")
    comp = cfg.section("compare")
    u0 = build_initial_field(cfg.section("field"), cfg.seed)
    spec = _perturbation(cfg)
    cells = [(u0.coeffs.tolist(), spec.to_json(), eps, ev, comp, cfg.seed,
              cfg.digest) for eps in ev["eps_sweep"]]
    results = _pmap(_theorem_i_cell, cells, jobs)

    artifacts = []
    rhos = []
    for eps, traj, rep in results:
        tag = f"eps{eps:g}".replace(".", "p").replace("-", "m")
        save_trajectory(traj, out_dir / f"trajectory_{tag}")
        artifacts.append(f"trajectory_{tag}")
        artifacts.append(_write_json(out_dir / f"comparison_{tag}.json",
                                     rep.to_json()))
        header = (["tau"] + [f"I_{k}" for k in range(1, rep.I_path.shape[1] + 1)]
                  + [f"J_{k}" for k in range(1, rep.J_path.shape[1] + 1)]
                  + [f"xi_{k}" for k in range(1, rep.xi.shape[1] + 1)])
        rows = [(rep.taus[i], *rep.I_path[i], *rep.J_path[i], *rep.xi[i])
                for i in range(len(rep.taus))]
        artifacts.append(_write_csv(out_dir / f"series_{tag}.csv", header, rows))
        artifacts.append(plotting.action_comparison_figure(
            rep.taus, rep.I_path, rep.J_path, eps,
            out_dir / f"actions_{tag}.png"))
        rhos.append(rep.rho_observed)
    eps_vals = [r[0] for r in results]
    summary = {
        "eps": eps_vals,
        "rho_observed": rhos,
        "monotone_decreasing": bool(all(a > b for a, b in zip(rhos, rhos[1:]))),
        "pass_flags": [r[2].passed for r in results],
        "q": comp["q"],
    }
    artifacts.append(_write_json(out_dir / "summary.json", summary))
    artifacts.append(plotting.sweep_figure(eps_vals, rhos,
                                           out_dir / "rho_vs_eps.png",
                                           ylabel="sup deviation"))
    return artifacts


def weyl_sample_stride(dt: float, eps: float, n_steps: int, n_samples: int,
                       m_angles: int, s_max: int) -> int:
    """Sampling stride that avoids aliasing the fast phase rotation.

    The linearized phases advance by about (2 pi k)^3 dt per step; a stride
    whose per-sample phase increments s . kappa * stride * dt sit near a
    multiple of 2 pi for some tracked s would freeze that statistic at its
    sampled value.  Scan a band of strides and keep the one maximizing the
    worst-case distance from resonance.
    """
    from .averaging import _signed_multi_indices
    from .hill import kdv_frequencies_linear

    base = max(1, n_steps // max(1, n_samples))
    kappa = kdv_frequencies_linear(m_angles)
    svals = np.array([abs(float(np.dot(s, kappa)))
                      for s in _signed_multi_indices(m_angles, s_max)])
    svals = np.unique(svals[svals > 0])
    best, best_margin = base, -1.0
    for stride in range(base, max(base + 1, (3 * base) // 2 + 1)):
        ph = np.mod(svals * stride * dt, TWO_PI)
        margin = float(np.min(np.minimum(ph, TWO_PI - ph)))
        if margin > best_margin:
            best, best_margin = stride, margin
    return best


def _theorem_ii_member(args):
    (measure_json, field_cfg, eps, ev, stride, seed, index) = args
    spec = MeasureSpec.from_json(measure_json)
    u = sample(spec, seed, index=index).field.resize(field_cfg["m_max"])
    amp = field_cfg.get("amplitude_h3")
    if amp is not None:
        nrm = sobolev_norm(u, 3)
        u = Field(u.coeffs * (amp / nrm)) if nrm > 0 else u
    params = _evolve_params(ev, eps, None, u)
    traj = evolve(u, params, spec=None, sample_stride=stride)
    return traj


def run_theorem_ii(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list:
    ev = cfg.section("evolve")
    wl = cfg.section("weyl")
    res = cfg.section("resonance")
    field_cfg = cfg.section("field")
    if field_cfg["kind"] != "sampled" or field_cfg.get("measure") is None:
        raise ConfigInvalid(["theorem-ii needs field.kind 'sampled' with a measure"])
    artifacts = []
    reports = []
    max_moduli = []
    for eps in ev["eps_sweep"]:
        u_probe = build_initial_field(field_cfg, cfg.seed)
        dt = ev.get("dt") or suggest_dt(u_probe)
        n_steps = int(np.ceil(ev["tau_end"] / eps / dt))
        stride = weyl_sample_stride(dt, eps, n_steps, ev["sample_count"],
                                    wl["m_angles"], wl["s_max"])
        members = [(field_cfg["measure"], field_cfg, eps, ev, stride,
                    cfg.seed, i) for i in range(wl["members"])]
        trajs = _pmap(_theorem_ii_member, members, jobs)
        rep = weyl_report(trajs, wl["m_angles"], wl["s_max"])
        reports.append(rep)
        tag = f"eps{eps:g}".replace(".", "p").replace("-", "m")
        artifacts.append(_write_json(out_dir / f"weyl_{tag}.json", rep.to_json()))
        moduli = rep.moduli()
        rows = [(",".join(map(str, s)), moduli[s]) for s in sorted(moduli)]
        artifacts.append(_write_csv(out_dir / f"weyl_{tag}.csv",
                                    ["s", "modulus"], rows))
        max_moduli.append(max(moduli.values()))
        if res:
            frac = resonance_occupation(trajs[0], res["m"], res["n"],
                                        res["alpha"], eps, max_samples=40)
            artifacts.append(_write_json(out_dir / f"resonance_{tag}.json",
                                         {"eps": eps, "fraction": frac,
                                          "alpha": res["alpha"],
                                          "m": res["m"], "n": res["n"]}))
    summary = {
        "eps": list(ev["eps_sweep"]),
        "max_modulus": list(map(float, max_moduli)),
        "monotone_decreasing": bool(all(a > b for a, b in
                                        zip(max_moduli, max_moduli[1:]))),
        "m_angles": wl["m_angles"],
        "s_max": wl["s_max"],
        "members": wl["members"],
    }
    artifacts.append(_write_json(out_dir / "summary.json", summary))
    artifacts.append(plotting.weyl_figure(reports, out_dir / "weyl_moduli.png"))
    return artifacts


def _quasi_cell(args):
    (u_coeffs, spec_json, eps, ev, m, p, seed) = args
    u0 = Field(np.asarray(u_coeffs))
    spec = PerturbationSpec.from_json(spec_json)
    params = _evolve_params(ev, eps, m, u0)
    traj = galerkin_evolve(u0, m, params, spec,
                           sample_stride=_stride_for(params, ev["sample_count"]))
    rates = quasi_invariance_rate(traj, m, p, eps, spec)
    return eps, traj.taus, rates


def run_quasi_invariance(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list:
    ev = cfg.section("evolve")
    qi = cfg.section("quasi_invariance")
    u0 = build_initial_field(cfg.section("field"), cfg.seed)
    if qi["m"] > u0.m_max:
        raise ConfigInvalid(["quasi_invariance.m exceeds field.m_max"])
    spec = _perturbation(cfg)
    cells = [(u0.coeffs.tolist(), spec.to_json(), eps, ev, qi["m"], qi["p"],
              cfg.seed) for eps in ev["eps_sweep"]]
    results = _pmap(_quasi_cell, cells, jobs)
    artifacts = []
    series = []
    sups = []
    for eps, taus, rates in results:
        tag = f"eps{eps:g}".replace(".", "p").replace("-", "m")
        artifacts.append(_write_csv(out_dir / f"rates_{tag}.csv",
                                    ["tau", "r"],
                                    list(zip(taus, rates))))
        series.append((eps, taus, rates))
        sups.append(float(np.max(np.abs(rates))))
    div0 = divergence(PerturbationSpec("derivative"), u0, qi["m"])
    summary = {
        "eps": [r[0] for r in results],
        "sup_rate": sups,
        "uniformly_bounded": bool(max(sups) <= 2.0 * max(min(sups), 1e-300)
                                  + 1e-6),
        "hamiltonian_truncation_divergence": div0,
        "p": qi["p"],
        "m": qi["m"],
    }
    artifacts.append(_write_json(out_dir / "summary.json", summary))
    artifacts.append(plotting.rate_series_figure(series, out_dir / "rates.png"))
    return artifacts


def _galerkin_cell(args):
    (u_coeffs, spec_json, eps, tau_end, dt, m) = args
    u0 = Field(np.asarray(u_coeffs))
    spec = PerturbationSpec.from_json(spec_json)
    params = EvolveParams(eps=eps, dt=dt, tau_end=tau_end, m=m)
    return galerkin_evolve(u0, m, params, spec, sample_stride=1)


def run_galerkin_convergence(cfg: ExperimentConfig, out_dir: Path,
                             jobs: int = 1) -> list:
    gl = cfg.section("galerkin")
    u0 = build_initial_field(cfg.section("field"), cfg.seed)
    spec = _perturbation(cfg)
    m_list = gl["m_list"]
    if 2 * m_list[-1] > u0.m_max:
        raise ConfigInvalid(["field.m_max must be at least twice the largest "
                             "entry of galerkin.m_list"])
    dt = suggest_dt(u0)
    dims = m_list + [2 * m_list[-1]]
    cells = [(u0.coeffs.tolist(), spec.to_json(), gl["eps"], gl["tau_end"],
              dt, m) for m in dims]
    trajs = _pmap(_galerkin_cell, cells, jobs)
    errors = []
    for m, tm, t2m in zip(m_list, trajs[:-1], trajs[1:]):
        sup = max(sobolev_norm(a - b, gl["norm_p"])
                  for a, b in zip(tm.fields, t2m.fields))
        errors.append(sup)
    artifacts = [_write_csv(out_dir / "errors.csv",
                            ["m", "sup_error_vs_2m"],
                            list(zip(m_list, errors)))]
    summary = {
        "m_list": m_list,
        "sup_errors": list(map(float, errors)),
        "monotone_decreasing": bool(all(a > b for a, b in
                                        zip(errors, errors[1:]))),
        "eps": gl["eps"],
        "norm_p": gl["norm_p"],
    }
    artifacts.append(_write_json(out_dir / "summary.json", summary))
    artifacts.append(plotting.convergence_figure(m_list, errors,
                                                 out_dir / "convergence.png"))
    return artifacts


_RUNNERS = {
    "simulate": run_simulate,
    "spectrum": run_spectrum,
    "average": run_average,
    "theorem-i": run_theorem_i,
    "theorem-ii": run_theorem_ii,
    "quasi-invariance": run_quasi_invariance,
    "galerkin-convergence": run_galerkin_convergence,
}


def run_experiment(cfg: ExperimentConfig, out_dir, jobs: int = 1,
                   force: bool = False) -> dict:
    """Execute the configured experiment; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    check_digest(out_dir, cfg.digest, force)
    runner = _RUNNERS[cfg.experiment]
    try:
        artifacts = runner(cfg, out_dir, jobs=jobs)
    except KdvLabError as exc:
        if isinstance(exc, ConfigInvalid):
            raise
        (out_dir / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
        write_manifest(out_dir, cfg, ["FAILED"], status="failed",
                       extra={"error": f"{type(exc).__name__}: {exc}"})
        raise
    return write_manifest(out_dir, cfg, artifacts)
