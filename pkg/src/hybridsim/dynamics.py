"""Time evolution: spectral propagation of kets, Lindblad propagation of
density operators, and observable extraction.

Time is handled in units of the mechanical period tau = 2*pi/nu on the
outside (grids, records, snapshots) and converted to 1/nu units only when
phases are computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import pi

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from .fock import (
    ATOM,
    CAV,
    MEC,
    DensityOperator,
    Ket,
    OperatorMatrix,
    Space,
    TruncationScheme,
    annihilator,
    basis_ket,
    embed,
    number_operator,
    partial_trace,
    projector,
)
from .model import DRESSED, QED2, SystemParams, build_h_total

OBSERVABLE_KEYS = ("P_e", "x_over_xi", "n_cav", "n_mec", "purity")

_COMPOSITE = (ATOM, CAV, MEC)


class PropagationError(RuntimeError):
    """Propagator failed to meet its accuracy contract."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling grid in units of the mechanical period."""

    t_start_tau: float
    t_end_tau: float
    n_samples: int

    def __post_init__(self):
        if self.t_end_tau <= self.t_start_tau:
            raise ValueError("grid end must exceed start")
        if self.n_samples < 2:
            raise ValueError("need at least two samples")

    @property
    def times_tau(self) -> np.ndarray:
        return np.linspace(self.t_start_tau, self.t_end_tau, self.n_samples)

    def times(self, nu: float = 1.0) -> np.ndarray:
        return self.times_tau * (2 * pi / nu)

    @property
    def dt_tau(self) -> float:
        return (self.t_end_tau - self.t_start_tau) / (self.n_samples - 1)


@dataclass
class EvolutionRecord:
    """Sampled observables of one evolution, plus optional stored states."""

    times_tau: np.ndarray
    observables: dict[str, np.ndarray]
    snapshots: list = field(default_factory=list)  # (t_tau, Ket | DensityOperator)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.times_tau)
        for key, vec in self.observables.items():
            if len(vec) != n:
                raise ValueError(f"observable {key!r} length {len(vec)} != {n}")
        pe = self.observables.get("P_e")
        if pe is not None and (pe.min() < -1e-8 or pe.max() > 1 + 1e-8):
            raise ValueError(f"P_e out of [0,1]: range [{pe.min()}, {pe.max()}]")
        pur = self.observables.get("purity")
        if pur is not None and (pur.min() <= 0 or pur.max() > 1 + 1e-8):
            raise ValueError("purity out of (0, 1]")

    def observable(self, key: str) -> np.ndarray:
        return self.observables[key]


# --------------------------------------------------------------------------
# observables
# --------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _observable_matrices(space: Space) -> dict[str, np.ndarray]:
    """Measurement operators appropriate to a state space, keyed like the
    record columns (purity is handled separately)."""
    ops: dict[str, np.ndarray] = {}
    factors = space.factors

    def lift(mat, pos):
        pieces = [np.eye(d, dtype=complex) for d in space.dims]
        pieces[pos] = mat
        out = pieces[0]
        for piece in pieces[1:]:
            out = np.kron(out, piece)
        return out

    if MEC in factors:
        nm = space.dim_of(MEC)
        pos = factors.index(MEC)
        b = np.diag(np.sqrt(np.arange(1, nm, dtype=float)), k=1).astype(complex)
        ops["x_over_xi"] = lift(b + b.conj().T, pos)
        ops["n_mec"] = lift(np.diag(np.arange(nm, dtype=float)).astype(complex), pos)
    if ATOM in factors:
        pos = factors.index(ATOM)
        ops["P_e"] = lift(np.diag([0.0, 1.0]).astype(complex), pos)
    if CAV in factors:
        nc = space.dim_of(CAV)
        pos = factors.index(CAV)
        ops["n_cav"] = lift(np.diag(np.arange(nc, dtype=float)).astype(complex), pos)
    if QED2 in factors:
        # index 0 = |g,1>, 1 = |e,0>
        pos = factors.index(QED2)
        ops["P_e"] = lift(np.diag([0.0, 1.0]).astype(complex), pos)
        ops["n_cav"] = lift(np.diag([1.0, 0.0]).astype(complex), pos)
    if DRESSED in factors:
        # |e,0> = (|+> - |->)/sqrt(2), |g,1> = (|+> + |->)/sqrt(2)
        pos = factors.index(DRESSED)
        sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        eye2 = np.eye(2, dtype=complex)
        ops["P_e"] = lift(0.5 * (eye2 - sx), pos)
        ops["n_cav"] = lift(0.5 * (eye2 + sx), pos)
    return ops


def observables(state) -> dict[str, float]:
    """P_e, <x>/xi, photon and phonon numbers, and purity of a Ket or
    DensityOperator; keys not defined on the state's space are omitted."""
    mats = _observable_matrices(state.space)
    out: dict[str, float] = {}
    if isinstance(state, Ket):
        v = state.amplitudes
        for key, mat in mats.items():
            out[key] = float(np.vdot(v, mat @ v).real)
        out["purity"] = 1.0
    else:
        rho = state.matrix
        for key, mat in mats.items():
            out[key] = float(np.sum(mat.T * rho).real)
        out["purity"] = float(np.sum(np.abs(rho) ** 2))
    return out


def reduced_mechanics(state, trunc: TruncationScheme | None = None) -> DensityOperator:
    """Mechanical reduced density operator of a composite state."""
    if trunc is not None and state.space != trunc.space():
        raise ValueError("state does not live on the given truncation's space")
    rho = state.to_density() if isinstance(state, Ket) else state
    return partial_trace(rho, MEC)


def _tail_weights(populations: np.ndarray, space: Space) -> dict[str, float]:
    """Worst-case occupation of the highest retained levels, used as a
    truncation witness.  populations: (n_samples, dim) real array."""
    out = {}
    dims = space.dims
    if MEC in space.factors:
        pos = space.factors.index(MEC)
        nm = dims[pos]
        top = max(2, nm // 8)
        resh = populations.reshape((-1,) + dims)
        mec_pop = resh.sum(axis=tuple(i + 1 for i in range(len(dims)) if i != pos))
        out["mec_tail_max"] = float(mec_pop[:, nm - top:].sum(axis=1).max())
    if CAV in space.factors:
        pos = space.factors.index(CAV)
        resh = populations.reshape((-1,) + dims)
        cav_pop = resh.sum(axis=tuple(i + 1 for i in range(len(dims)) if i != pos))
        out["cav_top_max"] = float(cav_pop[:, -1].max())
    return out


# --------------------------------------------------------------------------
# unitary propagation
# --------------------------------------------------------------------------

def evolve_unitary(H: OperatorMatrix, psi0: Ket, grid: TimeGrid, nu: float = 1.0,
                   snapshot_times_tau=()) -> EvolutionRecord:
    """Propagate exp(-iHt) psi0 over the grid by eigendecomposition.

    H must be Hermitian (residual below 1e-10) and time independent.
    Snapshots are evaluated at the exact requested times, independent of
    the grid.
    """
    if H.hermiticity_defect() > 1e-10:
        raise PropagationError(
            f"Hamiltonian not Hermitian (residual {H.hermiticity_defect():.2e})")
    if psi0.space != H.space:
        raise ValueError("initial state and Hamiltonian live on different spaces")
    if abs(psi0.norm - 1.0) > 1e-8:
        raise ValueError("initial state must be normalized")

    energies, modes = np.linalg.eigh(H.matrix)
    c0 = modes.conj().T @ psi0.amplitudes

    times_tau = grid.times_tau
    t_abs = grid.times(nu)
    phases = np.exp(-1j * energies[:, None] * t_abs[None, :])
    states = modes @ (c0[:, None] * phases)  # (dim, n_samples)

    norms = np.linalg.norm(states, axis=0)
    norm_drift = float(np.max(np.abs(norms - 1.0)))
    if norm_drift > 1e-8:
        raise PropagationError(f"norm drift {norm_drift:.2e} exceeds 1e-8")

    mats = _observable_matrices(H.space)
    obs = {key: np.einsum("it,it->t", states.conj(), mat @ states).real
           for key, mat in mats.items()}
    obs["purity"] = np.ones_like(times_tau)

    energy_samples = np.einsum("it,it->t", states.conj(), H.matrix @ states).real
    meta = {
        "method": "eigh",
        "norm_drift": norm_drift,
        "energy_drift": float(np.ptp(energy_samples)),
    }
    meta.update(_tail_weights(np.abs(states.T) ** 2, H.space))

    snapshots = []
    for t_tau in snapshot_times_tau:
        amp = modes @ (c0 * np.exp(-1j * energies * t_tau * 2 * pi / nu))
        amp = amp / np.linalg.norm(amp)
        snapshots.append((float(t_tau), Ket(amp, H.space)))

    return EvolutionRecord(times_tau, obs, snapshots, meta)


# --------------------------------------------------------------------------
# Lindblad propagation
# --------------------------------------------------------------------------

def lindblad_jumps(p: SystemParams, trunc: TruncationScheme):
    """Jump operators and their prefactors c in the damping part
    sum_j c_j (2 X rho X† - X†X rho - rho X†X).

    Cavity and mirror damping share the photon-number-shifted jump
    operators b - beta a†a and b† - beta a†a; they are built exactly in
    that combined form.
    """
    sigma = embed(annihilator(ATOM, trunc), ATOM, trunc).matrix
    a = embed(annihilator(CAV, trunc), CAV, trunc).matrix
    b = embed(annihilator(MEC, trunc), MEC, trunc).matrix
    n_cav = embed(number_operator(CAV, trunc), CAV, trunc).matrix

    terms = []
    if p.Gamma > 0:
        terms.append((p.Gamma / 2, sigma))
    if p.kappa > 0:
        terms.append((p.kappa / 2, a))
    coeff_deph = 4 * p.gamma * p.bath_temperature_scale
    if coeff_deph > 0 and p.beta > 0:
        terms.append((coeff_deph, p.beta * n_cav))
    shifted = b - p.beta * n_cav
    if p.gamma > 0:
        if p.mbar > 0:
            terms.append((p.gamma / 2 * p.mbar, b.conj().T - p.beta * n_cav))
        terms.append((p.gamma / 2 * (p.mbar + 1), shifted))
    return terms


def liouvillian_action(p: SystemParams, trunc: TruncationScheme,
                       rho_matrix: np.ndarray,
                       h_matrix: np.ndarray | None = None) -> np.ndarray:
    """Apply the full generator (commutator plus dissipators) once."""
    if h_matrix is None:
        h_matrix = build_h_total(p, trunc).matrix
    out = -1j * (h_matrix @ rho_matrix - rho_matrix @ h_matrix)
    for c, x in lindblad_jumps(p, trunc):
        xd = x.conj().T
        xdx = xd @ x
        out += c * (2 * (x @ rho_matrix @ xd) - xdx @ rho_matrix - rho_matrix @ xdx)
    return out


def liouvillian_sparse(h_matrix: np.ndarray, jumps) -> sp.csr_matrix:
    """Superoperator matrix acting on row-major flattened rho."""
    d = h_matrix.shape[0]
    eye = sp.identity(d, dtype=complex, format="csr")
    h = sp.csr_matrix(h_matrix)
    lsup = -1j * (sp.kron(h, eye) - sp.kron(eye, h.T))
    for c, x in jumps:
        xs = sp.csr_matrix(x)
        xdx = sp.csr_matrix(x.conj().T @ x)
        lsup = lsup + c * (2 * sp.kron(xs, xs.conj())
                           - sp.kron(xdx, eye) - sp.kron(eye, xdx.T))
    return sp.csr_matrix(lsup)


def _pick_method(dim: int) -> str:
    return "eig" if dim <= 32 else "expm"


def evolve_lindblad(p: SystemParams, rho0: DensityOperator, grid: TimeGrid,
                    method: str = "auto", snapshot_times_tau=(),
                    check_positivity: bool = True) -> EvolutionRecord:
    """Propagate the master equation with the full Hamiltonian and the
    damping channels configured in p.

    method:
      "eig"  - diagonalize the superoperator (reference path, small spaces)
      "expm" - sparse Taylor stepping of exp(L t) (default for larger spaces)
      "ode"  - adaptive DOP853 on the vectorized generator (cross-check)
      "auto" - eig below dimension 33, expm otherwise

    Snapshots are taken at the nearest grid sample.  Trace drift beyond
    1e-7, Hermiticity drift beyond 1e-8, or negativity beyond 1e-6 raise
    PropagationError.
    """
    if rho0.space.factors != _COMPOSITE:
        raise ValueError("Lindblad propagation runs on the full composite space")
    trunc = TruncationScheme(n_cav=rho0.space.dims[1], n_mec=rho0.space.dims[2])
    h = build_h_total(p, trunc).matrix
    jumps = lindblad_jumps(p, trunc)
    dim = rho0.space.dim
    if method == "auto":
        method = _pick_method(dim)
    if method not in ("eig", "expm", "ode"):
        raise ValueError(f"unknown method {method!r}")

    times_tau = grid.times_tau
    t_abs = grid.times(p.nu)
    n = len(t_abs)

    snap_idx = {}
    for t_tau in snapshot_times_tau:
        snap_idx.setdefault(int(np.argmin(np.abs(times_tau - t_tau))), float(t_tau))

    if method == "eig":
        rho_samples = _propagate_eig(h, jumps, rho0.matrix, t_abs)
    elif method == "ode":
        rho_samples = _propagate_ode(h, jumps, rho0.matrix, t_abs)
    else:
        rho_samples = None  # streamed below

    mats = _observable_matrices(rho0.space)
    obs = {key: np.empty(n) for key in mats}
    obs["purity"] = np.empty(n)
    populations = np.empty((n, dim))
    trace_drift = 0.0
    herm_drift = 0.0
    min_eig = np.inf
    check_every = max(1, n // 12)
    snapshots_raw: dict[int, np.ndarray] = {}

    def ingest(i, rho):
        nonlocal trace_drift, herm_drift, min_eig
        tr = rho.trace().real
        trace_drift = max(trace_drift, abs(tr - 1.0))
        herm = np.max(np.abs(rho - rho.conj().T))
        herm_drift = max(herm_drift, float(herm))
        for key, mat in mats.items():
            obs[key][i] = np.sum(mat.T * rho).real
        obs["purity"][i] = np.sum(np.abs(rho) ** 2)
        populations[i] = np.diag(rho).real
        if check_positivity and (i % check_every == 0 or i == n - 1 or i in snap_idx):
            lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
            min_eig = min(min_eig, float(lam))
            if lam < -1e-6:
                raise PropagationError(
                    f"state lost positivity at t={times_tau[i]:.4g} tau "
                    f"(eigenvalue {lam:.3e})")
        if i in snap_idx:
            snapshots_raw[i] = rho.copy()

    if method in ("eig", "ode"):
        for i in range(n):
            ingest(i, rho_samples[i])
    else:
        lsup = liouvillian_sparse(h, jumps)
        v = rho0.matrix.reshape(-1).astype(complex)
        ingest(0, v.reshape(dim, dim))
        chunk = max(2, min(48, n - 1))
        i = 0
        while i < n - 1:
            k = min(chunk, n - 1 - i)
            span = t_abs[i + k] - t_abs[i]
            block = expm_multiply(lsup, v, start=0.0, stop=span, num=k + 1,
                                  endpoint=True)
            for j in range(1, k + 1):
                ingest(i + j, block[j].reshape(dim, dim))
            v = block[k]
            i += k

    if trace_drift > 1e-7:
        raise PropagationError(f"trace drift {trace_drift:.3e} exceeds 1e-7")
    if herm_drift > 1e-8:
        raise PropagationError(f"hermiticity drift {herm_drift:.3e} exceeds 1e-8")

    meta = {
        "method": method,
        "trace_drift": trace_drift,
        "hermiticity_drift": herm_drift,
        "min_eigenvalue": None if min_eig is np.inf else min_eig,
    }
    meta.update(_tail_weights(populations, rho0.space))

    snapshots = []
    for i in sorted(snapshots_raw):
        rho = snapshots_raw[i]
        rho = 0.5 * (rho + rho.conj().T)
        rho = rho / rho.trace().real
        snapshots.append((float(times_tau[i]), DensityOperator(rho, rho0.space)))

    return EvolutionRecord(times_tau, obs, snapshots, meta)


def _propagate_eig(h, jumps, rho0, t_abs):
    """Dense spectral decomposition of the superoperator."""
    d = h.shape[0]
    lsup = np.asarray(liouvillian_sparse(h, jumps).todense())
    try:
        lam, vecs = np.linalg.eig(lsup)
        coeff = np.linalg.solve(vecs, rho0.reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise PropagationError(f"superoperator diagonalization failed: {exc}")
    out = np.empty((len(t_abs), d, d), dtype=complex)
    for i, t in enumerate(t_abs):
        v = vecs @ (coeff * np.exp(lam * t))
        out[i] = v.reshape(d, d)
    return out


def _propagate_ode(h, jumps, rho0, t_abs):
    """Adaptive high-order Runge-Kutta on the vectorized generator."""
    d = h.shape[0]
    xs = [(c, x, x.conj().T) for c, x in jumps]
    k_eff = 1j * h
    for c, x, xd in xs:
        k_eff = k_eff + c * (xd @ x)

    def rhs(_t, y):
        rho = y.reshape(d, d)
        out = -(k_eff @ rho + rho @ k_eff.conj().T)
        for c, x, xd in xs:
            out += (2 * c) * (x @ rho @ xd)
        return out.reshape(-1)

    sol = solve_ivp(rhs, (t_abs[0], t_abs[-1]), rho0.reshape(-1).astype(complex),
                    t_eval=t_abs, method="DOP853", rtol=1e-10, atol=1e-12)
    if not sol.success:
        raise PropagationError(f"ODE propagation failed: {sol.message}")
    return sol.y.T.reshape(len(t_abs), d, d)


# --------------------------------------------------------------------------
# truncation witness
# --------------------------------------------------------------------------

def truncation_gap(p: SystemParams, trunc: TruncationScheme, grid: TimeGrid,
                   psi0_indices=(1, 0, 0)) -> float:
    """Sup-norm change of P_e(t) when the mechanical cutoff is doubled.

    The certified-convergence criterion for coherent runs: below 1e-5 the
    truncation is considered converged.
    """
    doubled = TruncationScheme(n_cav=trunc.n_cav, n_mec=2 * trunc.n_mec)
    records = []
    for tr in (trunc, doubled):
        psi0 = basis_ket(tr, *psi0_indices)
        rec = evolve_unitary(build_h_total(p, tr), psi0, grid, nu=p.nu)
        records.append(rec.observables["P_e"])
    return float(np.max(np.abs(records[0] - records[1])))
