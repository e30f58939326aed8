import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from predsel.dynamics import (
    ForcingKind,
    IntegratorConfig,
    OscillatorState,
    SpringKind,
    Trajectory,
    forcing_value,
    integrate,
    integrate_batch,
    observable_force,
    observable_kinetic_energy,
    qoi_max_velocity,
    spring_stiffness,
)
from predsel.errors import DivergenceError, DomainError, SchemaError

TRUTH_SPRING = {"k5_0": 4.0, "k5_2": -5.0, "k5_4": 1.0}
TRUTH_FORCE = {"F0": 1.0, "tau": 2 * math.pi, "alpha": 0.2, "omega": 2.0}
TRUTH = {"m": 1.0, "c": 0.1, **TRUTH_SPRING, **TRUTH_FORCE}


def harmonic(h=1e-3, T=2 * math.pi):
    return integrate(SpringKind.OLS, None, {"c": 0.0, "k1_0": 4.0, "m": 1.0}, OscillatorState(1.0, 0.0),
                     IntegratorConfig(step=h, horizon=T))


class TestStiffness:
    def test_truth_at_origin(self):
        assert spring_stiffness(SpringKind.OQS, TRUTH_SPRING, 0.0) == 4.0

    def test_linear_is_constant(self):
        assert spring_stiffness(SpringKind.OLS, {"k1_0": 4.0}, 7.3) == 4.0

    def test_truth_vanishes_at_one(self):
        assert spring_stiffness(SpringKind.OQS, TRUTH_SPRING, 1.0) == 0.0

    def test_cubic(self):
        assert spring_stiffness("OCS", {"k3_0": 2.0, "k3_2": 3.0}, 2.0) == 14.0

    def test_missing_parameter_named(self):
        with pytest.raises(SchemaError, match="k5_4"):
            spring_stiffness(SpringKind.OQS, {"k5_0": 1.0, "k5_2": 1.0}, 0.3)

    def test_parameter_counts(self):
        assert [len(k.parameter_names) for k in SpringKind] == [1, 2, 3]
        assert [len(k.parameter_names) for k in ForcingKind] == [2, 4, 4]


class TestForcing:
    def test_oed_at_zero(self):
        assert forcing_value(ForcingKind.OED, TRUTH_FORCE, 0.0) == 1.0

    def test_old_after_tau(self):
        assert forcing_value(ForcingKind.OLD, TRUTH_FORCE, 7.0) == 0.0

    def test_sed(self):
        assert forcing_value(ForcingKind.SED, {"F0": 2.0, "tau": 1.0}, 1.0) == pytest.approx(0.7357589, abs=1e-7)

    def test_negative_time(self):
        with pytest.raises(DomainError):
            forcing_value(ForcingKind.SED, {"F0": 2.0, "tau": 1.0}, -0.1)
        with pytest.raises(DomainError):
            observable_force(ForcingKind.SED, {"F0": 2.0, "tau": 1.0}, [0.0, -1.0])

    def test_observable_oed_truth(self):
        assert observable_force(ForcingKind.OED, TRUTH_FORCE, [0.0]).tolist() == [1.0]

    def test_old_zero_at_and_after_tau(self):
        tau = TRUTH_FORCE["tau"]
        np.testing.assert_allclose(observable_force(ForcingKind.OLD, TRUTH_FORCE, [tau, tau + 1]), [0.0, 0.0], atol=1e-15)

    def test_sed_at_tau(self):
        out = observable_force(ForcingKind.SED, {"F0": 1.0, "tau": 2 * math.pi}, [2 * math.pi])
        assert out[0] == pytest.approx(math.exp(-1))

    def test_old_continuous_at_tau(self):
        tau = TRUTH_FORCE["tau"]
        left = forcing_value(ForcingKind.OLD, TRUTH_FORCE, tau * (1 - 1e-12))
        right = forcing_value(ForcingKind.OLD, TRUTH_FORCE, tau * (1 + 1e-12))
        assert abs(left) < 1e-10 and right == 0.0


class TestIntegrate:
    def test_harmonic_period(self):
        assert abs(harmonic().x[-1] - 1.0) < 1e-6

    def test_equilibrium_stays_zero(self):
        traj = integrate(SpringKind.OLS, None, {"c": 0.3, "k1_0": 2.0}, OscillatorState(), IntegratorConfig(horizon=1.0))
        assert not traj.x.any() and not traj.v.any()
        assert qoi_max_velocity(traj) == 0.0
        assert not observable_kinetic_energy(traj, [0.1, 0.5]).any()

    def test_grid(self):
        traj = harmonic(h=0.01, T=1.0)
        assert len(traj.times) == 101 and traj.times[-1] == pytest.approx(1.0)

    def test_truth_convergence_factor(self):
        cfg = lambda h: IntegratorConfig(step=h, horizon=2.0)
        ic = OscillatorState(0.0, 0.0)

        def end(h):
            t = integrate(SpringKind.OQS, ForcingKind.OED, TRUTH, ic, cfg(h))
            return np.array([t.x[-1], t.v[-1]])

        ref = end(1e-5)
        ratio = np.linalg.norm(end(1e-2) - ref) / np.linalg.norm(end(5e-3) - ref)
        assert 12 <= ratio <= 20

    def test_harmonic_error_ratio(self):
        err = [abs(harmonic(h=h, T=2.0).x[-1] - math.cos(4.0)) for h in (0.02, 0.01)]
        assert 12 <= err[0] / err[1] <= 20

    def test_max_velocity_analytic(self):
        assert abs(qoi_max_velocity(harmonic()) - 2.0) < 1e-4

    def test_max_velocity_fine_grid(self):
        cfg = IntegratorConfig(step=1e-3, horizon=8 * math.pi)
        q = qoi_max_velocity(integrate(SpringKind.OQS, ForcingKind.OED, TRUTH, OscillatorState(), cfg))
        fine = integrate(SpringKind.OQS, ForcingKind.OED, TRUTH, OscillatorState(), IntegratorConfig(1e-5, 8 * math.pi))
        assert abs(q - qoi_max_velocity(fine)) < 1e-3

    def test_divergence_reports_time(self):
        with pytest.raises(DivergenceError) as info:
            integrate(SpringKind.OCS, None, {"c": 0.0, "k3_0": 1.0, "k3_2": -10.0}, OscillatorState(3.0, 0.0),
                      IntegratorConfig(step=1e-2, horizon=10.0))
        assert 0 < info.value.time <= 10.0
        assert "t=" in str(info.value)

    def test_kinetic_energy_quarter_period(self):
        assert observable_kinetic_energy(harmonic(), [math.pi / 4])[0] == pytest.approx(2.0, abs=1e-3)

    def test_kinetic_energy_on_node(self):
        traj = harmonic(h=0.01, T=1.0)
        assert observable_kinetic_energy(traj, [traj.times[37]])[0] == 0.5 * traj.v[37] ** 2

    def test_kinetic_energy_outside_horizon(self):
        with pytest.raises(DomainError):
            observable_kinetic_energy(harmonic(h=0.01, T=1.0), [1.5])

    def test_energy_non_increasing_with_damping(self):
        p = {"c": 0.1, **TRUTH_SPRING}
        traj = integrate(SpringKind.OQS, None, p, OscillatorState(0.9, 0.0), IntegratorConfig(1e-3, 10.0))
        x = traj.x
        energy = 0.5 * traj.v ** 2 + 2.0 * x ** 2 - 1.25 * x ** 4 + x ** 6 / 6
        assert np.all(np.diff(energy) <= 1e-6)

    def test_quiescent_tail_leaves_qoi(self):
        traj = harmonic(h=0.01, T=1.0)
        t2 = np.concatenate([traj.times, traj.times[-1] + np.arange(1, 50) * 0.01])
        tail = Trajectory(t2, np.concatenate([traj.x, np.zeros(49)]), np.concatenate([traj.v, np.zeros(49)]))
        assert qoi_max_velocity(tail) == qoi_max_velocity(traj)

    def test_trajectory_validation(self):
        with pytest.raises(DomainError):
            Trajectory(np.array([0.0]), np.array([0.0]), np.array([0.0]))
        with pytest.raises(DomainError):
            Trajectory(np.array([0.0, 0.0]), np.zeros(2), np.zeros(2))

    def test_config_validation(self):
        with pytest.raises(DomainError):
            IntegratorConfig(step=2.0, horizon=1.0)
        with pytest.raises(DomainError):
            IntegratorConfig(step=-1e-3)


class TestBatch:
    def test_matches_scalar(self):
        rng = np.random.default_rng(0)
        n = 5
        params = {"m": np.ones(n), "c": rng.uniform(0, 0.3, n), "k5_0": rng.uniform(2, 5, n),
                  "k5_2": rng.uniform(-5, 0, n), "k5_4": rng.uniform(0.5, 2, n), "F0": rng.uniform(0.5, 2, n),
                  "tau": rng.uniform(3, 8, n), "alpha": rng.uniform(0, 0.5, n), "omega": rng.uniform(1, 3, n)}
        cfg = IntegratorConfig(1e-3, 5.0)
        res = integrate_batch(SpringKind.OQS, ForcingKind.OED, params, OscillatorState(), cfg, record_times=[1.0, 2.5])
        for i in range(n):
            p = {k: float(v[i]) for k, v in params.items()}
            traj = integrate(SpringKind.OQS, ForcingKind.OED, p, OscillatorState(), cfg)
            assert res.v_max[i] == pytest.approx(qoi_max_velocity(traj), rel=1e-12)
            assert res.v_at[i, 0] == pytest.approx(traj.v[1000], rel=1e-10, abs=1e-14)

    def test_divergent_particles_flagged(self):
        params = {"c": np.array([0.0, 0.0]), "k3_0": np.array([1.0, 1.0]), "k3_2": np.array([1.0, -10.0])}
        res = integrate_batch(SpringKind.OCS, None, params, OscillatorState(3.0, 0.0), IntegratorConfig(1e-2, 10.0))
        assert res.diverged.tolist() == [False, True]
        assert np.isfinite(res.v_max[0]) and np.isnan(res.v_max[1])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 8.0), st.floats(-2.0, 2.0))
def test_undamped_linear_amplitude(k, x0):
    traj = integrate(SpringKind.OLS, None, {"c": 0.0, "k1_0": k}, OscillatorState(x0, 0.0), IntegratorConfig(1e-2, 3.0))
    energy = 0.5 * traj.v ** 2 + 0.5 * k * traj.x ** 2
    np.testing.assert_allclose(energy, energy[0], rtol=1e-6, atol=1e-12)
