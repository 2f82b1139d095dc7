"""Hamiltonians of the hybrid system and their analytic eigenstructure.

Units: hbar = 1 and all frequencies are quoted in units of the mechanical
frequency nu (so nu defaults to 1 and the mechanical period is
tau = 2*pi/nu).  Mirror position is reported as <x>/xi = <b + b†> with xi
the ground-state width, so mass never enters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import log, pi

import numpy as np
from scipy.special import eval_genlaguerre

from .fock import (
    ATOM,
    CAV,
    MEC,
    Ket,
    OperatorMatrix,
    Space,
    TruncationError,
    TruncationScheme,
    annihilator,
    displacement_matrix,
    embed,
    number_operator,
    projector,
)

# Factor labels of the reduced single-excitation spaces.  QED2 orders the
# retained atom-cavity states as index 0 = |g,1>, 1 = |e,0>; DRESSED uses
# their symmetric/antisymmetric combinations, index 0 = |+>, 1 = |->.
QED2 = "qed2"
DRESSED = "dressed"


@dataclass(frozen=True)
class SystemParams:
    """Model frequencies, couplings, and dissipation rates, all in units
    of the mechanical frequency nu."""

    g: float = 0.0       # dipole (atom-cavity) coupling
    chi: float = 0.0     # radiation-pressure coupling
    omega: float = 0.0   # shared atom/cavity frequency; 0 drops a pure global phase
    nu: float = 1.0      # mechanical frequency, the unit
    kappa: float = 0.0   # cavity decay rate
    Gamma: float = 0.0   # atomic decay rate
    gamma: float = 0.0   # mechanical decay rate
    mbar: float = 0.0    # mean thermal occupation of the mechanical bath

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("mechanical frequency must be positive")
        for name in ("g", "chi", "omega", "kappa", "Gamma", "gamma", "mbar"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_beta(cls, beta: float, **kwargs) -> "SystemParams":
        """Construct with the coupling ratio beta = chi/nu given directly."""
        nu = kwargs.get("nu", 1.0)
        return cls(chi=beta * nu, **kwargs)

    def with_beta(self, beta: float) -> "SystemParams":
        return replace(self, chi=beta * self.nu)

    @property
    def beta(self) -> float:
        return self.chi / self.nu

    @property
    def tau(self) -> float:
        return 2 * pi / self.nu

    def effective_detuning(self, n: int) -> float:
        """Atom-cavity detuning induced by the mirror at its maximal
        elongation under n photons: 4*n*beta*chi."""
        return 4 * n * self.beta * self.chi

    @property
    def bath_temperature_scale(self) -> float:
        """k_B T / (hbar nu) of the mechanical bath implied by mbar,
        via mbar = 1/(exp(hbar nu / k_B T) - 1); zero for mbar = 0."""
        if self.mbar == 0:
            return 0.0
        return 1.0 / log(1.0 + 1.0 / self.mbar)


# --------------------------------------------------------------------------
# full-space builders
# --------------------------------------------------------------------------

def build_h_om(p: SystemParams, trunc: TruncationScheme) -> OperatorMatrix:
    """Optomechanical part on the composite space:
    omega a†a + nu b†b - chi a†a (b + b†)."""
    n_cav = embed(number_operator(CAV, trunc), CAV, trunc)
    n_mec = embed(number_operator(MEC, trunc), MEC, trunc)
    b = embed(annihilator(MEC, trunc), MEC, trunc)
    x = b + b.dag()
    return p.omega * n_cav + p.nu * n_mec - p.chi * (n_cav @ x)


def build_h_total(p: SystemParams, trunc: TruncationScheme) -> OperatorMatrix:
    """Full Hamiltonian: optomechanics + omega |e><e| + dipole coupling
    g (a†|g><e| + a|e><g|).  Commutes with a†a + |e><e|."""
    sigma = embed(annihilator(ATOM, trunc), ATOM, trunc)
    a = embed(annihilator(CAV, trunc), CAV, trunc)
    proj_e = embed(projector(ATOM, 1, trunc), ATOM, trunc)
    h_jc = p.g * (a.dag() @ sigma + a @ sigma.dag())
    return build_h_om(p, trunc) + p.omega * proj_e + h_jc


def excitation_number(trunc: TruncationScheme) -> OperatorMatrix:
    """Conserved excitation count a†a + |e><e| of the full Hamiltonian."""
    n_cav = embed(number_operator(CAV, trunc), CAV, trunc)
    proj_e = embed(projector(ATOM, 1, trunc), ATOM, trunc)
    return n_cav + proj_e


def polaron_state(n: int, m: int, p: SystemParams, trunc: TruncationScheme):
    """Exact eigenstate of the optomechanical part with n photons and the
    mirror in the n-photon-displaced number state m.

    Returns (ket, energy) with energy omega*n + nu*m - chi^2 n^2 / nu; the
    atom factor is set to |g>.  Raises TruncationError when the displaced
    number state leaks more than 1e-6 past the mechanical cutoff.
    """
    if not 0 <= n < trunc.n_cav:
        raise IndexError(f"photon number {n} outside cutoff {trunc.n_cav}")
    if not 0 <= m < trunc.n_mec:
        raise IndexError(f"phonon number {m} outside cutoff {trunc.n_mec}")
    col = displacement_matrix(n * p.beta, trunc.n_mec)[:, m]
    leak = 1.0 - float(np.sum(np.abs(col) ** 2))
    if leak > 1e-6:
        raise TruncationError(
            f"displaced number state (n={n}, m={m}) leaks {leak:.3e} past "
            f"n_mec={trunc.n_mec}")
    amp = np.zeros(trunc.dim, dtype=complex)
    base = trunc.index(0, n, 0)
    amp[base:base + trunc.n_mec] = col / np.linalg.norm(col)
    energy = p.omega * n + p.nu * m - p.chi ** 2 * n ** 2 / p.nu
    return Ket(amp, trunc.space()), float(energy)


def optomech_trajectory(n: int, t: float, p: SystemParams) -> complex:
    """Coherent mechanical amplitude n*beta*(1 - exp(-i nu t)) driven by n
    photons from an initially resting mirror; 2*Re peaks at 4*n*beta
    (units of xi) at t = pi/nu."""
    return n * p.beta * (1.0 - np.exp(-1j * p.nu * t))


# --------------------------------------------------------------------------
# single-excitation limit spaces
# --------------------------------------------------------------------------

def f_factor(m: int, beta: float) -> float:
    """Phonon-dependent coupling reduction of the slow-exchange limit:
    -beta/(m+1) * exp(-beta^2/2) * L_m^(1)(beta^2).

    Satisfies f(m)*sqrt(m+1) = <m|D(beta)|m+1>.
    """
    if m < 0:
        raise ValueError("phonon index must be non-negative")
    if beta == 0:
        return 0.0
    x = beta * beta
    return float(-beta / (m + 1) * np.exp(-x / 2) * eval_genlaguerre(m, 1, x))


def qed2_space(trunc: TruncationScheme) -> Space:
    return Space((QED2, MEC), (2, trunc.n_mec))


def dressed_space(trunc: TruncationScheme) -> Space:
    return Space((DRESSED, MEC), (2, trunc.n_mec))


def build_h_rwa(p: SystemParams, trunc: TruncationScheme) -> OperatorMatrix:
    """Excitation-conserving Hamiltonian of the slow-exchange limit
    (g << nu, chi) on the span{|g,1>, |e,0>} ⊗ mechanics space:

        nu b†b - chi |g,1><g,1| (b + b†)
        + g [ f(b†b) b D†(beta) |e,0><g,1| + h.c. ]

    No regime check is applied; validity is the caller's concern.
    """
    nm = trunc.n_mec
    space = qed2_space(trunc)
    b = np.diag(np.sqrt(np.arange(1, nm, dtype=float)), k=1).astype(complex)
    num = np.diag(np.arange(nm, dtype=float)).astype(complex)
    f_diag = np.diag([f_factor(m, p.beta) for m in range(nm)]).astype(complex)
    d_dag = displacement_matrix(p.beta, nm).conj().T
    coupling = f_diag @ b @ d_dag

    p_g1 = np.zeros((2, 2), dtype=complex)
    p_g1[0, 0] = 1.0
    raise_e0 = np.zeros((2, 2), dtype=complex)
    raise_e0[1, 0] = 1.0  # |e,0><g,1|

    h = p.nu * np.kron(np.eye(2), num)
    h -= p.chi * np.kron(p_g1, b + b.conj().T)
    coup_full = np.kron(raise_e0, coupling)
    h += p.g * (coup_full + coup_full.conj().T)
    return OperatorMatrix(h, space)


def build_h_beta(p: SystemParams, trunc: TruncationScheme) -> OperatorMatrix:
    """Weak-optomechanics Hamiltonian (beta << 1, near 2g = nu) on the
    dressed-state ⊗ mechanics space:

        nu b†b + g (|+><+| - |-><-|) - (beta/2) nu (b |+><-| + h.c.)
    """
    nm = trunc.n_mec
    space = dressed_space(trunc)
    b = np.diag(np.sqrt(np.arange(1, nm, dtype=float)), k=1).astype(complex)
    num = np.diag(np.arange(nm, dtype=float)).astype(complex)
    sz = np.diag([1.0, -1.0]).astype(complex)
    raise_pm = np.zeros((2, 2), dtype=complex)
    raise_pm[0, 1] = 1.0  # |+><-|

    h = p.nu * np.kron(np.eye(2), num)
    h += p.g * np.kron(sz, np.eye(nm))
    coup_full = np.kron(raise_pm, b)
    h -= 0.5 * p.beta * p.nu * (coup_full + coup_full.conj().T)
    return OperatorMatrix(h, space)
