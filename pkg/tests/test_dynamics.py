import numpy as np
import pytest

from kdvlab.dynamics import (
    EvolveParams,
    PerturbationSpec,
    apply_perturbation,
    divergence,
    evolve,
    galerkin_evolve,
    kdv_rhs,
    load_trajectory,
    save_trajectory,
    suggest_dt,
)
from kdvlab.errors import StepUnstable, Unresolved
from kdvlab.fields import TWO_PI, Field, default_grid_size, to_values
from conftest import smooth_field


def test_kdv_rhs_zero_and_linear_sign():
    assert not np.any(kdv_rhs(Field.zero(8)).coeffs)
    # -d^3/dx^3 (a e_1) = -a (2 pi)^3 e_{-1}; the k=1 pair sees no quadratic
    # contribution since (a e_1)^2 has only k in {0, 2}
    a = 0.3
    rhs = kdv_rhs(Field.basis(1, 8, a))
    assert rhs.coeffs[0, 1] == pytest.approx(-a * TWO_PI ** 3, rel=1e-13)
    assert rhs.coeffs[0, 0] == pytest.approx(0.0, abs=1e-13)


def test_kdv_quadratic_term_is_a_gradient(rng):
    # <u, 6 u u_x> = 2 int (u^3)_x = 0; quadrature oracle at 4x resolution
    u = smooth_field(12, 0.8, decay=0.5, seed=5)
    # pair u against the full rhs minus the airy part
    airy = np.zeros_like(u.coeffs)
    k = np.arange(1, 13)
    airy[:, 0] = TWO_PI ** 3 * k ** 3 * u.coeffs[:, 1]
    airy[:, 1] = -TWO_PI ** 3 * k ** 3 * u.coeffs[:, 0]
    quad = kdv_rhs(u).coeffs - airy
    pairing = float(np.sum(u.coeffs * quad))
    assert abs(pairing) < 1e-10 * max(1.0, float(np.sum(u.coeffs ** 2)))


def test_apply_perturbation_diagonal_examples():
    e1 = Field.basis(1, 4)
    anti = apply_perturbation(PerturbationSpec("antiderivative"), e1)
    assert anti.coeffs[0, 1] == pytest.approx(1.0 / TWO_PI, rel=1e-13)
    assert abs(anti.coeffs[0, 0]) < 1e-15

    double = apply_perturbation(PerturbationSpec("double_antiderivative"), e1)
    assert double.coeffs[0, 0] == pytest.approx(-TWO_PI ** -2, rel=1e-13)

    der = apply_perturbation(PerturbationSpec("derivative"), Field.basis(-1, 4))
    assert der.coeffs[0, 0] == pytest.approx(TWO_PI, rel=1e-13)
    assert abs(der.coeffs[0, 1]) < 1e-15


def test_perturbation_spec_validation():
    with pytest.raises(ValueError):
        PerturbationSpec("antiderivative", zeta0=2.0)
    with pytest.raises(ValueError):
        PerturbationSpec("smoothing_quadratic", zeta0=1.0)
    with pytest.raises(ValueError):
        PerturbationSpec("unknown_kind")
    assert PerturbationSpec("smoothing_quadratic").zeta0 == 2.0


def test_smoothing_quadratic_zero_mean(rng):
    u = smooth_field(8, 0.6, seed=9)
    f = apply_perturbation(PerturbationSpec("smoothing_quadratic"), u)
    # zero mean is structural; also smoothness: k-th pair damped by (2 pi k)^-2
    assert np.all(np.isfinite(f.coeffs))
    assert np.any(f.coeffs)  # quadratic in u, nonzero for generic u


def test_divergence_examples(rng):
    u = smooth_field(6, 0.4, seed=2)
    assert divergence(PerturbationSpec("derivative"), u, 6) == 0.0
    assert divergence(PerturbationSpec("antiderivative"), u, 6) == 0.0
    d1 = divergence(PerturbationSpec("double_antiderivative"), u, 1)
    assert d1 == pytest.approx(-2.0 * TWO_PI ** -2, rel=1e-13)
    dq = divergence(PerturbationSpec("smoothing_quadratic"), Field.zero(6), 6)
    assert dq == pytest.approx(0.0, abs=1e-12)


def test_evolve_zero_field_stays_zero():
    traj = evolve(Field.zero(8), EvolveParams(eps=0.5, dt=1e-3, t_end=0.05),
                  PerturbationSpec("smoothing_quadratic"))
    assert all(not np.any(f.coeffs) for f in traj.fields)


def test_evolve_airy_rotation():
    # eps = 0, tiny amplitude: the k=1 pair rotates clockwise by (2 pi)^3 t
    a, t_end = 1e-4, 0.01
    traj = evolve(Field.basis(1, 8, a), EvolveParams(eps=0.0, dt=1e-3, t_end=t_end))
    angle = TWO_PI ** 3 * t_end
    want = np.array([a * np.cos(angle), -a * np.sin(angle)])
    got = traj.fields[-1].coeffs[0]
    assert np.max(np.abs(got - want)) < 1e-6 * a


def test_galerkin_equals_full_on_bandlimited():
    u0 = smooth_field(16, 0.4, seed=11)
    p = EvolveParams(eps=0.0, dt=5e-4, t_end=0.02)
    full = evolve(u0, p)
    gal = galerkin_evolve(u0, 16, p)
    assert all(np.array_equal(a.coeffs, b.coeffs)
               for a, b in zip(full.fields, gal.fields))


def test_galerkin_m1_pure_rotation():
    # m = 1: P_1 annihilates the k=2 content of u u_x, motion is exact
    # rotation at rate (2 pi)^3
    a, t_end = 0.4, 0.0123
    traj = galerkin_evolve(Field.basis(1, 4, a), 1,
                           EvolveParams(eps=0.0, dt=1e-4, t_end=t_end))
    angle = TWO_PI ** 3 * t_end
    want = np.array([a * np.cos(angle), -a * np.sin(angle)])
    np.testing.assert_allclose(traj.fields[-1].coeffs[0], want, rtol=1e-12)
    assert not np.any(traj.fields[-1].coeffs[1:])


def test_galerkin_rhs_matches_full_at_t0():
    # when m covers all product content, the projected rhs equals the full one
    u = smooth_field(6, 0.4, seed=4).resize(16)
    assert np.array_equal(kdv_rhs(u, m=12).coeffs[:6], kdv_rhs(u).coeffs[:6])


def test_step_instability_halves_then_raises():
    # absurdly large field and step: halving cannot save it
    u0 = Field.basis(1, 8, 50.0)
    with pytest.raises(StepUnstable) as exc:
        evolve(u0, EvolveParams(eps=0.0, dt=0.3, t_end=3.0, max_halvings=2))
    assert exc.value.trajectory is not None


def test_unresolved_rejected_at_start(rng):
    c = np.zeros((16, 2))
    c[15, 0] = 1.0  # all energy at the top mode
    with pytest.raises(Unresolved):
        evolve(Field(c), EvolveParams(eps=0.0, dt=1e-4, t_end=0.01))


def test_params_validation():
    with pytest.raises(ValueError):
        EvolveParams(eps=0.0, dt=1e-3)  # no horizon
    with pytest.raises(ValueError):
        EvolveParams(eps=0.0, dt=1e-3, t_end=1.0, tau_end=1.0)
    with pytest.raises(ValueError):
        EvolveParams(eps=0.0, dt=1e-3, tau_end=1.0)  # slow horizon needs eps
    p = EvolveParams(eps=0.1, dt=1e-3, tau_end=0.5)
    assert p.fast_horizon == pytest.approx(5.0)


def test_trajectory_roundtrip(tmp_path):
    u0 = smooth_field(8, 0.3, decay=1.5, seed=7)
    traj = evolve(u0, EvolveParams(eps=0.01, dt=1e-3, tau_end=0.001),
                  PerturbationSpec("double_antiderivative"), sample_stride=10)
    traj.provenance = {"seed": 7, "config_digest": "abc"}
    save_trajectory(traj, tmp_path / "run")
    back = load_trajectory(tmp_path / "run")
    assert back.params == traj.params
    assert back.spec == traj.spec
    np.testing.assert_allclose(back.t, traj.t, rtol=0, atol=1e-15)
    for a, b in zip(back.fields, traj.fields):
        assert np.array_equal(a.coeffs, b.coeffs)
    assert back.provenance["seed"] == 7


def test_suggest_dt_cfl():
    u = Field.basis(1, 16, 0.5)
    dt = suggest_dt(u)
    umax = 0.5 * np.sqrt(2)
    assert dt <= 0.5 / (6 * umax * TWO_PI * 16) + 1e-15
