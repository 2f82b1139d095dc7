import numpy as np
import pytest

from hybridsim.fock import (
    DensityOperator,
    Ket,
    TruncationScheme,
    basis_ket,
    coherent_state,
    make_fock,
    tensor_kets,
)
from hybridsim.model import SystemParams, build_h_total, excitation_number
from hybridsim.dynamics import (
    EvolutionRecord,
    PropagationError,
    TimeGrid,
    evolve_lindblad,
    evolve_unitary,
    lindblad_jumps,
    liouvillian_action,
    observables,
    reduced_mechanics,
    truncation_gap,
)
from hybridsim.analysis import initial_density


def random_density(trunc, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(trunc.dim, trunc.dim)) + 1j * rng.normal(size=(trunc.dim, trunc.dim))
    mat = a @ a.conj().T
    return DensityOperator(mat / mat.trace().real, trunc.space())


class TestTimeGrid:
    def test_uniform_times(self):
        grid = TimeGrid(0.0, 2.0, 5)
        assert np.allclose(grid.times_tau, [0, 0.5, 1.0, 1.5, 2.0])
        assert np.allclose(grid.times(), grid.times_tau * 2 * np.pi)

    def test_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(1.0, 1.0, 10)
        with pytest.raises(ValueError):
            TimeGrid(0.0, 1.0, 1)


class TestObservables:
    def test_excited_bare_state(self):
        trunc = TruncationScheme(n_cav=3, n_mec=5)
        obs = observables(basis_ket(trunc, 1, 0, 0))
        assert obs["P_e"] == pytest.approx(1.0)
        assert obs["x_over_xi"] == pytest.approx(0.0)
        assert obs["purity"] == 1.0

    def test_equal_superposition(self):
        trunc = TruncationScheme(n_cav=2, n_mec=3)
        amp = (basis_ket(trunc, 1, 0, 0).amplitudes
               + basis_ket(trunc, 0, 1, 0).amplitudes) / np.sqrt(2)
        obs = observables(Ket(amp, trunc.space()))
        assert obs["P_e"] == pytest.approx(0.5)
        assert obs["n_cav"] == pytest.approx(0.5)

    def test_coherent_mechanics_displacement(self):
        ket = coherent_state(2.0, 40)
        obs = observables(ket)
        assert obs["x_over_xi"] == pytest.approx(4.0, abs=1e-8)
        assert obs["n_mec"] == pytest.approx(4.0, abs=1e-8)
        assert "P_e" not in obs

    def test_mixed_state_purity(self):
        trunc = TruncationScheme(n_cav=2, n_mec=3)
        rho = random_density(trunc, 3)
        obs = observables(rho)
        assert obs["purity"] == pytest.approx(np.trace(rho.matrix @ rho.matrix).real)


class TestEvolveUnitary:
    def test_stationary_excited_state(self):
        trunc = TruncationScheme(n_cav=2, n_mec=2)
        p = SystemParams(g=0.0, omega=1.0)
        rec = evolve_unitary(build_h_total(p, trunc), basis_ket(trunc, 1, 0, 0),
                             TimeGrid(0, 2.0, 50))
        assert np.abs(rec.observables["P_e"] - 1.0).max() < 1e-12

    def test_rabi_oscillation_closed_form(self):
        # chi = 0, g = nu: P_e = cos^2(g t)
        trunc = TruncationScheme(n_cav=2, n_mec=2)
        p = SystemParams(g=1.0)
        grid = TimeGrid(0, 5.0, 501)
        rec = evolve_unitary(build_h_total(p, trunc), basis_ket(trunc, 1, 0, 0), grid)
        assert np.abs(rec.observables["P_e"] - np.cos(grid.times()) ** 2).max() < 1e-8

    def test_mechanical_coherent_trajectory(self):
        # g = 0, one photon: <b>(t) = beta (1 - exp(-i nu t))
        trunc = TruncationScheme(n_cav=2, n_mec=40)
        p = SystemParams.from_beta(1.0, g=0.0)
        grid = TimeGrid(0, 1.0, 101)
        rec = evolve_unitary(build_h_total(p, trunc), basis_ket(trunc, 0, 1, 0), grid)
        eta = 1.0 - np.exp(-1j * grid.times())
        assert np.abs(rec.observables["x_over_xi"] - 2 * eta.real).max() < 1e-8

    def test_energy_and_excitation_conserved(self):
        trunc = TruncationScheme(n_cav=2, n_mec=30)
        p = SystemParams.from_beta(1.0, g=1.0)
        h = build_h_total(p, trunc)
        grid = TimeGrid(0, 5.0, 301)
        rec = evolve_unitary(h, basis_ket(trunc, 1, 0, 0), grid,
                             snapshot_times_tau=(1.0, 2.5))
        assert rec.meta["energy_drift"] < 1e-8
        assert rec.meta["norm_drift"] < 1e-8
        n_op = excitation_number(trunc)
        for _t, ket in rec.snapshots:
            n_val = np.vdot(ket.amplitudes, n_op.matrix @ ket.amplitudes).real
            assert n_val == pytest.approx(1.0, abs=1e-8)

    def test_snapshots_at_exact_times(self):
        trunc = TruncationScheme(n_cav=2, n_mec=2)
        p = SystemParams(g=1.0)
        rec = evolve_unitary(build_h_total(p, trunc), basis_ket(trunc, 1, 0, 0),
                             TimeGrid(0, 1.0, 11), snapshot_times_tau=(0.125,))
        t_tau, ket = rec.snapshots[0]
        expected_pe = np.cos(0.125 * 2 * np.pi) ** 2
        assert observables(ket)["P_e"] == pytest.approx(expected_pe, abs=1e-10)

    def test_rejects_nonhermitian(self):
        trunc = TruncationScheme(n_cav=2, n_mec=2)
        from hybridsim.fock import OperatorMatrix, annihilator, embed
        bad = embed(annihilator("cav", trunc), "cav", trunc)
        with pytest.raises(PropagationError):
            evolve_unitary(bad, basis_ket(trunc, 0, 0, 0), TimeGrid(0, 1, 10))


class TestLindbladJumps:
    def test_combined_mirror_jump_built_as_written(self):
        trunc = TruncationScheme(n_cav=2, n_mec=4)
        p = SystemParams.from_beta(1.5, gamma=0.2, mbar=0.5)
        terms = dict()
        for c, x in lindblad_jumps(p, trunc):
            terms[round(c, 10)] = x
        from hybridsim.fock import annihilator, embed, number_operator
        b = embed(annihilator("mec", trunc), "mec", trunc).matrix
        n_cav = embed(number_operator("cav", trunc), "cav", trunc).matrix
        down = terms[round(0.2 / 2 * 1.5, 10)]
        assert np.abs(down - (b - 1.5 * n_cav)).max() < 1e-12
        up = terms[round(0.2 / 2 * 0.5, 10)]
        assert np.abs(up - (b.conj().T - 1.5 * n_cav)).max() < 1e-12

    def test_zero_rates_no_jumps(self):
        trunc = TruncationScheme(n_cav=2, n_mec=3)
        assert lindblad_jumps(SystemParams.from_beta(1.0), trunc) == []

    def test_generator_annihilates_trace(self):
        # Tr(L rho) = 0 for random rho: trace preservation of the generator
        trunc = TruncationScheme(n_cav=2, n_mec=4)
        p = SystemParams.from_beta(0.8, g=0.7, kappa=0.3, Gamma=0.2,
                                   gamma=0.15, mbar=0.4)
        for seed in range(3):
            rho = random_density(trunc, seed)
            out = liouvillian_action(p, trunc, rho.matrix)
            assert abs(np.trace(out)) < 1e-10


class TestEvolveLindblad:
    def test_closed_system_matches_unitary(self):
        trunc = TruncationScheme(n_cav=2, n_mec=12)
        p = SystemParams.from_beta(1.0, g=1.0)
        grid = TimeGrid(0, 2.0, 101)
        rec_u = evolve_unitary(build_h_total(p, trunc), basis_ket(trunc, 1, 0, 0), grid)
        rho0 = basis_ket(trunc, 1, 0, 0).to_density()
        rec_l = evolve_lindblad(p, rho0, grid, method="expm")
        for key in ("P_e", "x_over_xi", "n_cav", "n_mec"):
            assert np.abs(rec_u.observables[key] - rec_l.observables[key]).max() < 1e-7

    def test_pure_atomic_decay(self):
        trunc = TruncationScheme(n_cav=2, n_mec=2)
        p = SystemParams(Gamma=0.4)
        grid = TimeGrid(0, 2.0, 81)
        rec = evolve_lindblad(p, initial_density(0.0, 0.0, trunc), grid)
        assert np.abs(rec.observables["P_e"] - np.exp(-0.4 * grid.times())).max() < 1e-7

    @pytest.mark.parametrize("method", ["eig", "ode", "expm"])
    def test_methods_agree_on_damped_exchange(self, method):
        trunc = TruncationScheme(n_cav=2, n_mec=3)
        p = SystemParams.from_beta(0.5, g=1.0, kappa=0.2, Gamma=0.1,
                                   gamma=0.05, mbar=0.3)
        grid = TimeGrid(0, 1.5, 61)
        reference = evolve_lindblad(p, initial_density(0.0, 0.0, trunc), grid,
                                    method="eig")
        rec = evolve_lindblad(p, initial_density(0.0, 0.0, trunc), grid,
                              method=method)
        assert np.abs(rec.observables["P_e"] - reference.observables["P_e"]).max() < 1e-7
        assert rec.meta["trace_drift"] < 1e-7
        assert rec.meta["hermiticity_drift"] < 1e-8

    def test_thermal_equilibration_of_free_mirror(self):
        # g = chi = 0, gamma > 0: the mirror relaxes to mean mbar
        trunc = TruncationScheme(n_cav=2, n_mec=14)
        p = SystemParams(gamma=0.8, mbar=0.6)
        grid = TimeGrid(0, 4.0, 101)
        rec = evolve_lindblad(p, initial_density(0.0, 0.0, trunc), grid)
        assert rec.observables["n_mec"][-1] == pytest.approx(0.6, abs=1e-4)

    def test_snapshots_are_valid_states(self):
        trunc = TruncationScheme(n_cav=2, n_mec=8)
        p = SystemParams.from_beta(0.7, g=1.0, kappa=0.1)
        rec = evolve_lindblad(p, initial_density(0.0, 0.0, trunc),
                              TimeGrid(0, 1.0, 51), snapshot_times_tau=(0.5, 1.0))
        assert len(rec.snapshots) == 2
        for t_tau, rho in rec.snapshots:
            assert rho.trace == pytest.approx(1.0, abs=1e-9)
            assert rho.min_eigenvalue() > -1e-8

    def test_rejects_subspace_states(self):
        p = SystemParams(Gamma=0.1)
        mec = make_fock("mec", 0, TruncationScheme(n_cav=2, n_mec=4)).to_density()
        with pytest.raises(ValueError):
            evolve_lindblad(p, mec, TimeGrid(0, 1, 10))


class TestReducedMechanics:
    def test_product_state(self):
        trunc = TruncationScheme(n_cav=2, n_mec=6)
        ket = tensor_kets(make_fock("atom", 1, trunc), make_fock("cav", 0, trunc),
                          make_fock("mec", 3, trunc))
        rho = reduced_mechanics(ket, trunc)
        assert rho.matrix[3, 3] == pytest.approx(1.0)
        assert rho.trace == pytest.approx(1.0, abs=1e-12)

    def test_trace_one_for_entangled_state(self):
        trunc = TruncationScheme(n_cav=2, n_mec=10)
        p = SystemParams.from_beta(1.0, g=1.0)
        rec = evolve_unitary(build_h_total(p, trunc), basis_ket(trunc, 1, 0, 0),
                             TimeGrid(0, 1.0, 11), snapshot_times_tau=(0.6,))
        rho = reduced_mechanics(rec.snapshots[0][1])
        assert rho.trace == pytest.approx(1.0, abs=1e-10)


class TestTruncationGap:
    def test_converged_run_has_small_gap(self):
        p = SystemParams.from_beta(1.0, g=1.0)
        gap = truncation_gap(p, TruncationScheme(n_cav=2, n_mec=40),
                             TimeGrid(0, 5.0, 201))
        assert gap < 1e-5

    def test_starved_cutoff_is_flagged(self):
        p = SystemParams.from_beta(1.0, g=1.0)
        gap = truncation_gap(p, TruncationScheme(n_cav=2, n_mec=6),
                             TimeGrid(0, 5.0, 201))
        assert gap > 1e-5


class TestEvolutionRecord:
    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            EvolutionRecord(np.array([0.0, 1.0]), {"P_e": np.array([1.0])})

    def test_pe_range_enforced(self):
        with pytest.raises(ValueError):
            EvolutionRecord(np.array([0.0, 1.0]), {"P_e": np.array([0.5, 1.5])})
