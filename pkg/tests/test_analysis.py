import numpy as np
import pytest

from hybridsim.fock import Ket, TruncationScheme, basis_ket, displacement_matrix
from hybridsim.model import SystemParams, build_h_rwa, build_h_total, f_factor, qed2_space
from hybridsim.dynamics import EvolutionRecord, TimeGrid, evolve_unitary, observables
from hybridsim.analysis import (
    RevivalReport,
    SweepSpec,
    displaced_thermal_variance,
    measure_f,
    perturbative_pe,
    perturbative_state,
    revival_report,
    run_sweep,
    rwa_mixing,
    rwa_reduced_states,
    rwa_weights,
)


class TestRwaStates:
    def test_initial_condition(self):
        p = SystemParams.from_beta(1.0, g=0.01)
        mec, ac = rwa_reduced_states(0.0, p, 20)
        assert mec.matrix[0, 0] == pytest.approx(1.0)
        assert ac.matrix[1, 1] == pytest.approx(1.0)  # |e,0>

    def test_full_transfer_at_beta_one(self):
        # sin^2(theta) = 1 at beta = 1; half an exchange period moves all
        # weight onto |g,1> with the mirror in the displaced one-phonon state
        p = SystemParams.from_beta(1.0, g=0.01)
        omega_x, _delta, sin2 = rwa_mixing(p)
        assert sin2 == pytest.approx(1.0)
        t_half = np.pi / abs(omega_x)
        mec, ac = rwa_reduced_states(t_half, p, 40)
        assert ac.matrix[0, 0] == pytest.approx(1.0, abs=1e-12)
        col = displacement_matrix(1.0, 40)[:, 1]
        expected = np.outer(col, col.conj())
        assert np.abs(mec.matrix - expected).max() < 1e-6

    def test_weights_sum_to_one(self):
        for beta in (0.8, 1.0, 1.3):
            p = SystemParams.from_beta(beta, g=0.02)
            for t in np.linspace(0, 300, 7):
                w0, w1 = rwa_weights(t, p)
                assert w0 + w1 == pytest.approx(1.0, abs=1e-14)
                assert -1e-14 <= w1 <= 1 + 1e-14

    def test_rwa_hamiltonian_propagation_matches_weights(self):
        # propagating the reduced-model Hamiltonian reproduces the analytic
        # populations over one exchange period
        p = SystemParams.from_beta(1.0, g=0.01)
        trunc = TruncationScheme(n_cav=2, n_mec=40)
        h = build_h_rwa(p, trunc)
        amp = np.zeros(2 * 40, dtype=complex)
        amp[40] = 1.0  # |e,0>|0>
        omega_x, _, _ = rwa_mixing(p)
        t_end_tau = (2 * np.pi / abs(omega_x)) / (2 * np.pi)
        grid = TimeGrid(0.0, t_end_tau, 801)
        rec = evolve_unitary(h, Ket(amp, qed2_space(trunc)), grid)
        analytic = np.array([rwa_weights(t, p)[0] for t in grid.times()])
        assert np.abs(rec.observables["P_e"] - analytic).max() < 2e-2

    def test_full_model_matches_weights(self):
        p = SystemParams.from_beta(1.0, g=0.01)
        trunc = TruncationScheme(n_cav=2, n_mec=40)
        omega_x, _, _ = rwa_mixing(p)
        t_end_tau = (2 * np.pi / abs(omega_x)) / (2 * np.pi)
        grid = TimeGrid(0.0, t_end_tau, 801)
        rec = evolve_unitary(build_h_total(p, trunc), basis_ket(trunc, 1, 0, 0), grid)
        analytic = np.array([rwa_weights(t, p)[0] for t in grid.times()])
        assert np.abs(rec.observables["P_e"] - analytic).max() < 2e-2


class TestPerturbative:
    def test_pe_at_zero(self):
        p = SystemParams.from_beta(0.1, g=0.5)
        assert perturbative_pe(0.0, p) == 1.0

    def test_pe_reference_value(self):
        # beta = 0.1 at nu t = pi: (1 - cos(0.05 pi))/2
        p = SystemParams.from_beta(0.1, g=0.5)
        expected = 0.5 * (1 - np.cos(0.05 * np.pi))
        assert perturbative_pe(np.pi, p) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.00616, abs=5e-6)

    def test_pe_bounded(self):
        for beta in (0.0, 0.1, 0.7, 2.0):
            p = SystemParams.from_beta(beta, g=0.5)
            vals = perturbative_pe(np.linspace(0, 200, 2000), p)
            assert vals.min() >= 0.0 and vals.max() <= 1.0

    def test_full_model_matches_beat_formula(self):
        # one beat of the modulation at 2g = nu, beta = 0.1
        p = SystemParams.from_beta(0.1, g=0.5)
        trunc = TruncationScheme(n_cav=2, n_mec=16)
        grid = TimeGrid(0.0, 20.0, 3001)
        rec = evolve_unitary(build_h_total(p, trunc), basis_ket(trunc, 1, 0, 0), grid)
        assert np.abs(rec.observables["P_e"] - perturbative_pe(grid.times(), p)).max() < 5e-2

    def test_state_initial_condition(self):
        p = SystemParams.from_beta(0.1, g=0.5)
        ket = perturbative_state(0.0, p, 4, 20)
        # |e,0> = (|+> - |->)/sqrt(2) with the mirror at rest
        ref = np.zeros(40, dtype=complex)
        ref[0] = 1 / np.sqrt(2)
        ref[20] = -1 / np.sqrt(2)
        assert abs(np.vdot(ket.amplitudes, ref)) == pytest.approx(1.0, abs=1e-10)

    def test_series_converges_fast(self):
        p = SystemParams.from_beta(0.1, g=0.5)
        t = np.pi / (0.1 * p.nu)
        k6 = perturbative_state(t, p, 6, 24)
        k12 = perturbative_state(t, p, 12, 24)
        assert abs(np.vdot(k6.amplitudes, k12.amplitudes)) > 1 - 1e-8

    def test_dressed_populations_match_full_model(self):
        beta = 0.1
        p = SystemParams.from_beta(beta, g=0.5)
        trunc = TruncationScheme(n_cav=2, n_mec=24)
        t_abs = np.pi / (beta * p.nu)
        ket = perturbative_state(t_abs, p, 10, 24)
        pe_pert = observables(ket)["P_e"]
        grid = TimeGrid(0.0, t_abs / (2 * np.pi), 11)
        rec = evolve_unitary(build_h_total(p, trunc), basis_ket(trunc, 1, 0, 0),
                             grid, snapshot_times_tau=(grid.t_end_tau,))
        pe_full = observables(rec.snapshots[0][1])["P_e"]
        assert pe_pert == pytest.approx(pe_full, abs=5e-2)


class TestRevivalReport:
    def synthetic_rabi(self, g=1.0, t_end_tau=5.0, n=2001):
        grid = TimeGrid(0.0, t_end_tau, n)
        pe = np.cos(g * grid.times()) ** 2
        return EvolutionRecord(grid.times_tau, {"P_e": pe})

    def test_unperturbed_maxima(self):
        p = SystemParams(g=1.0)
        rec = self.synthetic_rabi()
        rep = revival_report(rec, p)
        dt = rec.times_tau[1] - rec.times_tau[0]
        for n, t_g in enumerate(rep.t_maxima_g, start=1):
            assert abs(t_g - n * np.pi) <= 2 * np.pi * dt * p.g * 1.5
        assert all(m == 0.0 for m in rep.m_tilde) or p.beta > 0

    def test_m_tilde_inversion(self):
        # synthetic trace with maxima at T_n = n pi (1 - m~ beta^2/2)/g
        p = SystemParams.from_beta(0.4, g=1.0)
        m_tilde = 0.7
        scale = 1 - m_tilde * 0.4 ** 2 / 2
        grid = TimeGrid(0.0, 3.0, 4001)
        pe = np.cos(grid.times() / scale) ** 2
        rep = revival_report(EvolutionRecord(grid.times_tau, {"P_e": pe}), p)
        assert rep.m_tilde[0] == pytest.approx(m_tilde, abs=0.05)

    def test_strictly_increasing(self):
        p = SystemParams.from_beta(1.0, g=1.0)
        trunc = TruncationScheme(n_cav=2, n_mec=40)
        rec = evolve_unitary(build_h_total(p, trunc), basis_ket(trunc, 1, 0, 0),
                             TimeGrid(0.0, 5.0, 2001))
        rep = revival_report(rec, p)
        assert np.all(np.diff(rep.t_maxima_tau) > 0)
        assert 0.0 <= rep.suppression_min <= 1.0

    def test_no_maxima_diagnostic(self):
        p = SystemParams(g=1.0)
        grid = TimeGrid(0.0, 5.0, 500)
        flat = EvolutionRecord(grid.times_tau, {"P_e": np.full(500, 0.5)})
        rep = revival_report(flat, p)
        assert rep.t_maxima_tau == ()
        assert rep.diagnostic is not None

    def test_requires_pe(self):
        grid = TimeGrid(0.0, 5.0, 100)
        rec = EvolutionRecord(grid.times_tau, {"n_mec": np.zeros(100)})
        with pytest.raises(ValueError):
            revival_report(rec, SystemParams(g=1.0))


class TestMeasureF:
    def test_variance_overlay(self):
        assert displaced_thermal_variance(1.0, 2.0) == pytest.approx(11.0)
        assert displaced_thermal_variance(0.0, 0.0) == 0.0

    def test_zero_point_is_exactly_zero(self):
        # same-rate reference: the quadrature sees two identical runs
        p = SystemParams.from_beta(1.0, g=1.0, kappa=0.05, Gamma=0.05)
        trunc = TruncationScheme(n_cav=2, n_mec=14)
        value = measure_f(0.0, 0.0, p, trunc, n_samples=601, t_end_tau=0.4)
        assert value == 0.0

    def test_reference_recomputation_is_stable(self):
        p = SystemParams.from_beta(1.0, g=1.0, kappa=0.05, Gamma=0.05)
        trunc = TruncationScheme(n_cav=2, n_mec=12)
        kwargs = dict(n_angles=2, n_samples=601, t_end_tau=0.3)
        first = measure_f(0.3, 0.2, p, trunc, **kwargs)
        second = measure_f(0.3, 0.2, p, trunc, **kwargs)
        assert abs(first - second) < 1e-10

    def test_quadrature_needs_samples(self):
        p = SystemParams.from_beta(1.0, g=1.0)
        trunc = TruncationScheme(n_cav=2, n_mec=8)
        with pytest.raises(ValueError):
            measure_f(0.0, 0.0, p, trunc, n_samples=100)

    def test_mismatched_reference_grid_rejected(self):
        p = SystemParams.from_beta(1.0, g=1.0)
        trunc = TruncationScheme(n_cav=2, n_mec=8)
        grid = TimeGrid(0.0, 0.5, 601)
        ref = evolve_unitary(build_h_total(p, trunc), basis_ket(trunc, 1, 0, 0), grid)
        with pytest.raises(ValueError):
            measure_f(0.1, 0.0, p, trunc, t_end_tau=1.2, n_samples=601, reference=ref)


class TestRunSweep:
    def test_single_beta_zero_point(self):
        base = SystemParams(g=1.0)
        trunc = TruncationScheme(n_cav=2, n_mec=8)
        spec = SweepSpec("beta", (0.0,), base, trunc, TimeGrid(0.0, 3.0, 601))
        rows = run_sweep(spec)
        assert len(rows) == 1 and rows[0].error is None
        pe = rows[0].record.observables["P_e"]
        grid = TimeGrid(0.0, 3.0, 601)
        assert np.abs(pe - np.cos(grid.times()) ** 2).max() < 1e-8

    def test_failures_recorded_per_row(self):
        base = SystemParams(g=1.0)
        trunc = TruncationScheme(n_cav=2, n_mec=8)
        # beta = 3 overflows n_mec = 8 badly enough to trip state norms
        spec = SweepSpec("beta", (0.0, np.nan), base, trunc, TimeGrid(0.0, 1.0, 11))
        with pytest.raises(ValueError):
            SweepSpec("beta", (), base, trunc, TimeGrid(0.0, 1.0, 11))
        with pytest.raises(ValueError):
            spec = SweepSpec("beta", (0.0, np.nan), base, trunc, TimeGrid(0.0, 1.0, 11))

    def test_points_run_isolated(self):
        base = SystemParams(g=1.0)
        trunc = TruncationScheme(n_cav=2, n_mec=8)
        grid = TimeGrid(0.0, 1.0, 101)
        spec = SweepSpec("beta", (0.0, 2.5, 0.1), base, trunc, grid)
        rows = run_sweep(spec)
        assert [r.value for r in rows] == [0.0, 2.5, 0.1]
        assert rows[0].error is None
        assert rows[2].error is None

    def test_unknown_parameter(self):
        with pytest.raises(ValueError):
            SweepSpec("omega", (1.0,), SystemParams(), TruncationScheme(n_cav=2, n_mec=8),
                      TimeGrid(0.0, 1.0, 11))
