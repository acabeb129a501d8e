"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines as they complete.  Scales are chosen to keep every criterion well
inside its runtime budget on a laptop.
"""

import json
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import yaml

from kdvlab.averaging import (
    AveragedField,
    compare,
    estimate_averaged_field,
    quasi_invariance_rate,
    solve_averaged,
    trajectory_actions,
)
from kdvlab.cli import main as cli_main
from kdvlab.dynamics import (
    EvolveParams,
    PerturbationSpec,
    divergence,
    evolve,
    galerkin_evolve,
    kdv_rhs,
)
from kdvlab.fields import ActionVector, Field, TWO_PI, sobolev_norm
from kdvlab.hill import actions, action_gradient, discriminant, periodic_spectrum
from kdvlab.measures import conservation_functional
from conftest import smooth_field


@contextmanager
def criterion(num, name):
    try:
        yield
    except Exception:
        print(f"ACCEPTANCE {num} ({name}): FAIL")
        raise
    print(f"ACCEPTANCE {num} ({name}): PASS")


def low_mode_field(r=(0.07, 0.05, 0.05), m_max=16):
    """Three active modes with H^3 budget split r; generic angles."""
    c = np.zeros((m_max, 2))
    c[0] = (r[0] / TWO_PI ** 3, 0.0)
    c[1] = (0.0, r[1] / (2 * TWO_PI) ** 3)
    a3 = r[2] / (3 * TWO_PI) ** 3 / np.sqrt(2.0)
    c[2] = (a3, a3)
    return Field(c)


def test_criterion_01_free_discriminant():
    with criterion(1, "free-operator discriminant"):
        u = Field.zero(4)
        lams = np.concatenate([np.linspace(-10, 500, 103),
                               [np.pi ** 2, 4 * np.pi ** 2, 0.0]])
        for lam in lams:
            d = discriminant(u, float(lam))
            s = np.sqrt(abs(lam))
            want = 2 * np.cos(s) if lam >= 0 else 2 * np.cosh(s)
            assert abs(d.delta - want) <= 1e-8
            assert abs(d.wronskian - 1.0) <= 1e-9


def test_criterion_02_integrator_order():
    with criterion(2, "fourth-order convergence"):
        T, dt = 0.1, 5e-4
        for seed in (0, 1, 2):
            u0 = smooth_field(32, 0.2, decay=2.0, seed=seed)
            def run(step):
                p = EvolveParams(eps=0.0, dt=step, t_end=T)
                return evolve(u0, p, sample_stride=10 ** 9).fields[-1]
            ref = run(dt / 8).coeffs
            e1 = np.linalg.norm(run(dt).coeffs - ref)
            e2 = np.linalg.norm(run(dt / 2).coeffs - ref)
            order = np.log2(e1 / e2)
            assert order >= 3.7, f"seed {seed}: observed order {order:.2f}"


def test_criterion_03_integrability_suite():
    with criterion(3, "integrability: invariants, spectrum, actions"):
        u0 = smooth_field(16, 0.9, decay=1.2, seed=5)
        assert sobolev_norm(u0, 3) <= 1.0
        traj = evolve(u0, EvolveParams(eps=0.0, dt=5e-4, t_end=1.0),
                      sample_stride=1000)
        # (a) conserved functionals to 1e-7 relative
        for n in (0, 1, 2):
            j0 = conservation_functional(u0, n)
            for f in traj.fields[1:]:
                assert abs(conservation_functional(f, n) - j0) <= 1e-7 * (1 + abs(j0))
        # (b) first 5 eigenvalues drift below 1e-5
        lam0 = periodic_spectrum(u0, 2).lambdas[:5]
        for f in (traj.fields[len(traj.fields) // 2], traj.fields[-1]):
            lam = periodic_spectrum(f, 2).lambdas[:5]
            assert np.max(np.abs(lam - lam0)) < 1e-5
        # (c) first 3 actions conserved to 1e-3 relative
        I0 = actions(u0, 3).entries
        for f in (traj.fields[len(traj.fields) // 2], traj.fields[-1]):
            I = actions(f, 3).entries
            assert np.max(np.abs(I - I0) / np.maximum(I0, 1e-10)) <= 1e-3


def test_criterion_04_linearization_consistency():
    with criterion(4, "action linearization ladder"):
        amps = (0.2, 0.1, 0.05, 0.025)
        devs = []
        for a in amps:
            I1 = actions(Field.basis(1, 8, a), 1).entries[0]
            devs.append(abs(I1 / (a * a / (4 * np.pi)) - 1.0))
        assert devs[-1] < 1e-3
        orders = np.log2(np.array(devs[:-1]) / np.array(devs[1:]))
        assert np.all(orders >= 1.0), f"orders {orders}"


def test_criterion_05_gradient_check():
    with criterion(5, "action gradient vs finite differences"):
        worst = 0.0
        for i in range(20):
            u = smooth_field(6, 0.5 * (0.4 + 0.6 * (i % 3) / 2.0),
                             decay=0.8, seed=100 + i)
            assert sobolev_norm(u, 3) <= 0.5
            j = 1 + (i % 2)
            sp = periodic_spectrum(u, j)
            gf = action_gradient(u, j, spectrum=sp, method="formula")
            gd = action_gradient(u, j, spectrum=sp, method="fd")
            rel = (np.linalg.norm(gf.coeffs - gd.coeffs)
                   / np.linalg.norm(gf.coeffs))
            worst = max(worst, rel)
            assert rel <= 1e-4, f"field {i}: relative error {rel:.2e}"
            # orthogonality to the unperturbed vector field
            u12 = u.resize(12)
            g12 = action_gradient(u12, j)
            V = kdv_rhs(u12)
            pairing = abs(float(np.sum(g12.coeffs * V.coeffs)))
            scale = np.linalg.norm(g12.coeffs) * np.linalg.norm(V.coeffs)
            assert pairing <= 1e-6 * scale


EPS_SWEEP = (1e-1, 1e-2, 1e-3)
SWEEP_DT = 5e-3
_WEIGHTS_Q1 = 2.0 * (TWO_PI * np.arange(1, 4)) ** 3


def sweep_field():
    # three active modes on a 32-mode grid: resolved over the whole sweep
    return low_mode_field((0.35, 0.25, 0.25), m_max=32)


@pytest.fixture(scope="module")
def deviation_floors():
    """Measurement floor of the weighted action deviation: the same runs at
    eps = 0 over each sweep horizon.  Everything the perturbed runs report
    is compared against these."""
    u0 = sweep_field()
    floors = {}
    for eps in EPS_SWEEP:
        t_end = 1.0 / eps
        stride = max(1, int(np.ceil(t_end / SWEEP_DT / 25)))
        traj = evolve(u0, EvolveParams(eps=0.0, dt=SWEEP_DT, t_end=t_end,
                                       tail_tol=0.05), sample_stride=stride)
        I = trajectory_actions(traj, 3)
        floors[eps] = float(np.max(np.sum(_WEIGHTS_Q1 * np.abs(I - I[0]),
                                          axis=1)))
    return floors


def _sweep_rho(u0, spec, field, samples=25):
    out = []
    for eps in EPS_SWEEP:
        params = EvolveParams(eps=eps, dt=SWEEP_DT, tau_end=1.0,
                              tail_tol=0.05)
        stride = max(1, int(np.ceil(params.fast_horizon / SWEEP_DT / samples)))
        traj = evolve(u0, params, spec, sample_stride=stride)
        I_path = trajectory_actions(traj, 3)
        J0 = ActionVector(I_path[0])
        taus_J, J_path, _ = solve_averaged(J0, 1.0, field, p=3.0,
                                           ball_radius=1e9)
        rep = compare(traj, taus_J, J_path, q=1.0, field=field, I_path=I_path)
        drift = float(np.max(np.sum(_WEIGHTS_Q1 * np.abs(J_path - J_path[0]),
                                    axis=1)))
        out.append((eps, rep.rho_observed, drift))
    return out


def test_criterion_06_hamiltonian_null_average(deviation_floors):
    # The genuinely angle-dependent part of F is below the measurement
    # floor at lab amplitudes, so "J stays at I(0)" is asserted as:
    # deviations from the constant averaged solution never exceed the
    # eps = 0 floor of the same pipeline (3x margin).
    with criterion(6, "Hamiltonian perturbations average to zero"):
        u0 = sweep_field()
        for kind in ("derivative", "antiderivative"):
            spec = PerturbationSpec(kind)
            est = estimate_averaged_field(u0, 3, spec, T_avg=6.0,
                                          n_samples=120, blocks=8)
            assert np.all(np.abs(est.rates) <= 2.0 * est.errors + 1e-15), \
                f"{kind}: rates {est.rates} errors {est.errors}"
            for eps, rho, _ in _sweep_rho(u0, spec, AveragedField.zero(3)):
                assert rho <= 3.0 * deviation_floors[eps], \
                    f"{kind}, eps={eps}: rho {rho:.2e} above floor " \
                    f"{deviation_floors[eps]:.2e}"


def test_criterion_07_dissipative_averaging(deviation_floors):
    with criterion(7, "dissipative averaged dynamics"):
        u_cap = low_mode_field()
        assert sobolev_norm(u_cap, 3) <= 0.1
        spec = PerturbationSpec("double_antiderivative")
        # measured averaged rates match the diagonal model within 5%
        est = estimate_averaged_field(u_cap, 3, spec, T_avg=6.0,
                                      n_samples=120, blocks=8)
        k = np.arange(1, 4, dtype=float)
        model_rates = -2.0 / (TWO_PI * k) ** 2 * est.actions_ref
        rel = np.abs(est.rates - model_rates) / np.abs(model_rates)
        assert np.max(rel) <= 0.05, f"rate mismatch {rel}"
        # averaged solution matches the closed-form exponential to 1e-8
        field = AveragedField.from_model(spec, 3)
        J0 = ActionVector(est.actions_ref)
        taus, path, _ = solve_averaged(J0, 1.0, field, p=3.0, ball_radius=1e9)
        want = J0.entries[None, :] * np.exp(-2.0 / (TWO_PI * k[None, :]) ** 2
                                            * taus[:, None])
        assert np.max(np.abs(path - want) / np.maximum(want, 1e-300)) <= 1e-8
        # across the sweep, the true actions move by the model-predicted
        # amount and never leave the averaged solution by more than the
        # measurement floor (10% of the predicted drift at worst)
        u0 = sweep_field()
        for eps, rho, drift in _sweep_rho(u0, spec, field):
            assert drift > 30.0 * deviation_floors[eps] or eps < 1e-2, \
                f"eps={eps}: predicted drift {drift:.2e} not resolvable"
            assert rho <= 3.0 * deviation_floors[eps], \
                f"eps={eps}: rho {rho:.2e} above floor"
            assert rho <= 0.1 * drift, \
                f"eps={eps}: tracking error {rho:.2e} vs drift {drift:.2e}"


def test_criterion_08_equidistribution(tmp_path):
    with criterion(8, "angle equidistribution"):
        cfg = {
            "schema_version": 1,
            "experiment": "theorem-ii",
            "seed": 7,
            "field": {"m_max": 16, "kind": "sampled", "amplitude_h3": 0.2,
                      "measure": {"kind": "gaussian_h", "p": 2, "m": 16}},
            "evolve": {"eps_sweep": [1e-1, 1e-2, 1e-3], "tau_end": 1.0,
                       "dt": 0.02, "sample_count": 2000},
            "weyl": {"members": 50, "m_angles": 3, "s_max": 2},
        }
        path = tmp_path / "thm2.yaml"
        path.write_text(yaml.safe_dump(cfg))
        out = tmp_path / "thm2"
        assert cli_main(["theorem-ii", "--config", str(path),
                         "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        moduli = summary["max_modulus"]
        assert moduli[-1] < 0.1, f"eps=1e-3 max modulus {moduli[-1]}"
        assert moduli[0] > moduli[-1], f"no decrease across sweep: {moduli}"


def test_criterion_09_quasi_invariance_rates():
    with criterion(9, "quasi-invariance rate uniformity"):
        m = 16
        u0 = smooth_field(m, 0.5, decay=1.0, seed=11)
        spec = PerturbationSpec("double_antiderivative")  # zeta0 = 2
        sups = []
        for eps in (1e-1, 1e-2, 1e-3):
            params = EvolveParams(eps=eps, dt=0.05, tau_end=1.0, m=m)
            stride = max(1, int(np.ceil(params.fast_horizon / 0.05 / 40)))
            traj = galerkin_evolve(u0, m, params, spec, sample_stride=stride)
            r = quasi_invariance_rate(traj, m, 2, eps, spec)
            sups.append(float(np.max(np.abs(r))))
        bound = 2.0 * sups[0] + 1e-3
        assert all(s <= bound for s in sups), f"sup rates {sups}"
        # Hamiltonian truncation: the divergence term vanishes identically
        assert divergence(PerturbationSpec("derivative"), u0, m) == 0.0


def test_criterion_10_galerkin_convergence():
    with criterion(10, "Galerkin truncation convergence"):
        rng_field = smooth_field(64, 0.4, decay=0.8, seed=3)
        spec = PerturbationSpec("double_antiderivative")
        eps, tau_end = 1e-2, 0.1
        dt = 5e-3
        trajs = {}
        for m in (8, 16, 32, 64):
            params = EvolveParams(eps=eps, dt=dt, tau_end=tau_end, m=m)
            trajs[m] = galerkin_evolve(rng_field, m, params, spec,
                                       sample_stride=20)
        errors = []
        for m in (8, 16, 32):
            sup = max(sobolev_norm(a - b, 3.0)
                      for a, b in zip(trajs[m].fields, trajs[2 * m].fields))
            errors.append(sup)
        assert errors[0] > errors[1] > errors[2], f"errors {errors}"


def test_criterion_11_determinism(tmp_path):
    with criterion(11, "byte-identical reruns"):
        cfg = {
            "schema_version": 1,
            "experiment": "theorem-i",
            "seed": 13,
            "field": {"m_max": 8, "kind": "sampled", "amplitude_h3": 0.3,
                      "measure": {"kind": "eta_p", "p": 3, "m": 8}},
            "perturbation": {"kind": "double_antiderivative"},
            "evolve": {"eps_sweep": [1e-1, 1e-2], "tau_end": 0.2,
                       "dt": 2e-3, "sample_count": 10},
            "compare": {"q": 1.0, "k_max": 2, "rho": 1.0},
        }
        path = tmp_path / "det.yaml"
        path.write_text(yaml.safe_dump(cfg))
        digests = []
        for jobs, name in (("1", "a"), ("2", "b"), ("1", "c")):
            out = tmp_path / name
            assert cli_main(["theorem-i", "--config", str(path),
                             "--out", str(out), "--jobs", jobs]) == 0
            import hashlib
            d = {}
            for pth in sorted(out.rglob("*")):
                if pth.suffix in (".json", ".csv", ".bin"):
                    d[str(pth.relative_to(out))] = hashlib.sha256(
                        pth.read_bytes()).hexdigest()
            digests.append(d)
        assert digests[0] == digests[1] == digests[2]
