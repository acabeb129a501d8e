import numpy as np
import pytest

from kdvlab.averaging import (
    AveragedField,
    ComparisonReport,
    action_rate,
    check_nonresonant,
    compare,
    estimate_averaged_field,
    quasi_invariance_rate,
    resonance_occupation,
    solve_averaged,
    trajectory_actions,
    weyl_report,
)
from kdvlab.dynamics import EvolveParams, PerturbationSpec, Trajectory, evolve, galerkin_evolve
from kdvlab.errors import EvaluatorFailure
from kdvlab.fields import ActionVector, Field, TWO_PI
from kdvlab.hill import actions
from conftest import smooth_field


def synthetic_rotation(omegas, phi0, T, dt, m_max=None):
    """Trajectory whose linearized phases advance as phi0 + omega * t."""
    m = len(omegas) if m_max is None else m_max
    t = np.arange(0.0, T + dt / 2, dt)
    fields = []
    for ti in t:
        c = np.zeros((m, 2))
        for k in range(len(omegas)):
            ang = phi0[k] + omegas[k] * ti
            c[k] = (np.cos(ang), np.sin(ang))
        fields.append(Field(c))
    params = EvolveParams(eps=1.0, dt=dt, t_end=T)
    return Trajectory(params=params, spec=PerturbationSpec("none"),
                      t=t, fields=fields)


def test_action_rate_trivial_and_linearized():
    assert action_rate(Field.zero(6), 1, PerturbationSpec("smoothing_quadratic")) == 0.0
    a = 0.08
    u = Field.basis(1, 8, a)
    F1 = action_rate(u, 1, PerturbationSpec("double_antiderivative"))
    I1 = actions(u, 1).entries[0]
    assert F1 == pytest.approx(-2.0 * TWO_PI ** -2 * I1, rel=0.05)


def test_hamiltonian_kinds_average_to_zero():
    u = smooth_field(8, 0.35, decay=1.0, seed=17)
    for kind in ("antiderivative", "derivative"):
        est = estimate_averaged_field(u, 2, PerturbationSpec(kind),
                                      T_avg=8.0, n_samples=64)
        assert np.all(np.abs(est.rates) <= 2.0 * est.errors + 1e-12)


def test_dissipative_kind_matches_model():
    u = smooth_field(8, 0.3, decay=1.2, seed=23)
    est = estimate_averaged_field(u, 2, PerturbationSpec("double_antiderivative"),
                                  T_avg=8.0, n_samples=64)
    k = np.arange(1, 3, dtype=float)
    model = -2.0 / (TWO_PI * k) ** 2 * est.actions_ref
    np.testing.assert_allclose(est.rates, model, rtol=0.05)


def test_jackknife_shrinks_with_horizon():
    u = smooth_field(8, 0.3, decay=1.2, seed=29)
    spec = PerturbationSpec("antiderivative")
    e_short = estimate_averaged_field(u, 1, spec, T_avg=4.0, n_samples=64)
    e_long = estimate_averaged_field(u, 1, spec, T_avg=16.0, n_samples=64)
    assert e_long.errors[0] < e_short.errors[0]


def test_estimate_invariant_under_time_shift():
    u = smooth_field(8, 0.3, decay=1.2, seed=31)
    spec = PerturbationSpec("double_antiderivative")
    shifted = evolve(u, EvolveParams(eps=0.0, dt=2e-4, t_end=0.37,
                                     tail_tol=0.05)).fields[-1]
    e0 = estimate_averaged_field(u, 2, spec, T_avg=10.0, n_samples=64)
    e1 = estimate_averaged_field(shifted, 2, spec, T_avg=10.0, n_samples=64)
    gap = np.abs(e0.rates - e1.rates)
    assert np.all(gap <= 3.0 * (e0.errors + e1.errors) + 1e-12)


def test_solve_averaged_zero_field_constant():
    J0 = ActionVector(np.array([0.3, 0.1]))
    taus, path, stop = solve_averaged(J0, 1.0, AveragedField.zero(2),
                                      p=1.0, ball_radius=1e9)
    assert stop == 1.0
    np.testing.assert_array_equal(path[-1], J0.entries)


def test_solve_averaged_matches_exponential():
    k = np.arange(1, 4, dtype=float)
    coeffs = -2.0 / (TWO_PI * k) ** 2
    field = AveragedField.linear_diagonal(3, coeffs)
    J0 = ActionVector(np.array([2e-3, 1e-3, 5e-4]))
    taus, path, stop = solve_averaged(J0, 1.0, field, p=1.0, ball_radius=1e9)
    want = J0.entries[None, :] * np.exp(coeffs[None, :] * taus[:, None])
    assert np.max(np.abs(path - want) / np.maximum(want, 1e-300)) < 1e-8
    assert stop == 1.0


def test_solve_averaged_stops_at_ball():
    J0 = ActionVector(np.array([1.0]))
    field = AveragedField.zero(1)
    taus, path, stop = solve_averaged(J0, 1.0, field, p=1.0,
                                      ball_radius=0.5 * 4 * np.pi)
    assert stop == 0.0 and len(taus) == 1
    # growing actions leave the ball mid-run
    grow = AveragedField.linear_diagonal(1, np.array([2.0]))
    radius = 4 * np.pi * 1.5  # |J|~_0 = 4 pi J crosses this at J = 1.5
    taus, path, stop = solve_averaged(ActionVector(np.array([1.0])), 1.0,
                                      grow, p=0.0, ball_radius=radius)
    assert 0.0 < stop < 1.0
    assert path[-1][0] == pytest.approx(1.5, rel=0.05)


def test_solve_averaged_octant_preserved():
    field = AveragedField.linear_diagonal(2, np.array([-50.0, -80.0]))
    J0 = ActionVector(np.array([1e-4, 2e-4]))
    taus, path, stop = solve_averaged(J0, 2.0, field, p=1.0, ball_radius=1e9)
    assert np.all(path >= 0.0)


def test_compare_identical_is_zero():
    u = smooth_field(8, 0.3, decay=1.2, seed=3)
    traj = evolve(u, EvolveParams(eps=0.1, dt=1e-3, tau_end=0.02), sample_stride=10)
    I = trajectory_actions(traj, 2)
    rep = compare(traj, traj.taus, I, q=1.0, I_path=I)
    assert rep.rho_observed == 0.0


def test_compare_unperturbed_vs_constant():
    u = smooth_field(8, 0.35, decay=1.2, seed=5)
    traj = evolve(u, EvolveParams(eps=0.0, dt=5e-4, t_end=0.4), sample_stride=200)
    I0 = actions(u, 2).entries
    J_taus = np.array([0.0, traj.taus[-1]])
    J_path = np.vstack([I0, I0])
    rep = compare(traj, J_taus, J_path, q=1.0, threshold=1e-3)
    assert rep.passed
    assert rep.rho_observed < 1e-4


def test_weyl_zero_vector_and_conjugate_symmetry():
    traj = synthetic_rotation([3.7, 9.2], [0.3, 1.1], T=30.0, dt=0.01)
    rep = weyl_report([traj], m=2, n=2)
    assert rep.statistics[(0, 0)] == pytest.approx(1.0 + 0.0j, abs=0)
    for s, v in rep.statistics.items():
        neg = tuple(-c for c in s)
        assert rep.statistics[neg] == pytest.approx(np.conj(v), abs=1e-14)


def test_weyl_pure_rotation_bound():
    om = np.array([3.7, 9.2])
    T = 50.0
    traj = synthetic_rotation(om, [0.3, 1.1], T=T, dt=0.01)
    rep = weyl_report([traj], m=2, n=2)
    for s, v in rep.statistics.items():
        so = abs(float(np.dot(s, om)))
        if so > 0:
            assert abs(v) <= 2.0 / (T * so) + 2e-2


def test_resonance_occupation_degenerate_cases():
    # zero field: the small-action zone is always active
    zero_traj = Trajectory(params=EvolveParams(eps=1e-3, dt=1e-3, tau_end=1.0),
                           spec=PerturbationSpec("none"),
                           t=np.linspace(0, 1000.0, 5),
                           fields=[Field.zero(6)] * 5)
    assert resonance_occupation(zero_traj, 2, 2, 0.2, 1e-3) == 1.0
    # dead first mode, lively second: still trapped by min_k I_k
    u = Field.basis(2, 6, 0.8)
    traj = Trajectory(params=EvolveParams(eps=1e-3, dt=1e-3, tau_end=1.0),
                      spec=PerturbationSpec("none"),
                      t=np.linspace(0, 1000.0, 4),
                      fields=[u] * 4)
    assert resonance_occupation(traj, 2, 2, 0.2, 1e-3) == 1.0
    with pytest.raises(ValueError):
        resonance_occupation(zero_traj, 2, 2, 0.3, 1e-3)


def test_quasi_invariance_rate_zero_field_and_hamiltonian_divergence():
    m = 8
    traj = galerkin_evolve(Field.zero(m), m,
                           EvolveParams(eps=0.1, dt=1e-3, tau_end=0.01, m=m),
                           PerturbationSpec("derivative"))
    r = quasi_invariance_rate(traj, m, 2, 0.1, PerturbationSpec("derivative"))
    assert np.max(np.abs(r)) == 0.0
    # the derivative kind is the Hamiltonian truncation: divergence is 0
    from kdvlab.dynamics import divergence
    assert divergence(PerturbationSpec("derivative"), Field.zero(m), m) == 0.0


def test_check_nonresonant_flags_synthetic_resonance():
    u = smooth_field(6, 0.2, decay=1.2, seed=40)
    W = check_nonresonant(u, 2, resonance_order=2, resonance_tol=0.5)
    assert W[0] > 200.0


def test_rescale_evaluator_reaches_requested_actions():
    u = smooth_field(8, 0.3, decay=1.2, seed=41)
    I = actions(u, 2).entries
    field = AveragedField.empirical(u, PerturbationSpec("double_antiderivative"),
                                    2, T_avg=4.0, n_samples=32)
    target = 0.5 * I
    rates = field(target)
    k = np.arange(1, 3, dtype=float)
    np.testing.assert_allclose(rates, -2.0 / (TWO_PI * k) ** 2 * target, rtol=0.08)
    with pytest.raises(EvaluatorFailure):
        AveragedField.empirical(Field.basis(2, 8, 0.1),
                                PerturbationSpec("none"), 2)(np.array([0.1, 0.1]))
