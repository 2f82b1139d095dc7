"""Truncated Fock-space backbone: composite basis bookkeeping, elementary
operators, and state factories (Fock, coherent, displaced thermal).

Basis convention for the composite space atom ⊗ cavity ⊗ mechanics:
the state |i_atom, i_cav, i_mec> sits at linear index
((i_atom * n_cav) + i_cav) * n_mec + i_mec, with atom index 0 = |g>,
1 = |e>.  Everything downstream (propagators, file writers) relies on
this ordering.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import prod

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

ATOM = "atom"
CAV = "cav"
MEC = "mec"

_COMPOSITE_ORDER = (ATOM, CAV, MEC)


class TruncationError(RuntimeError):
    """Requested state or operator does not fit in the retained basis."""


class TruncationWarning(UserWarning):
    """Non-fatal probability weight leaked past the cutoff."""


@dataclass(frozen=True)
class Space:
    """Ordered tensor factors with their retained dimensions."""

    factors: tuple[str, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.factors) != len(self.dims) or not self.factors:
            raise ValueError("factors and dims must be non-empty and aligned")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"non-positive dimension in {self.dims}")

    @property
    def dim(self) -> int:
        return prod(self.dims)

    def dim_of(self, factor: str) -> int:
        return self.dims[self.factors.index(factor)]

    def __repr__(self):
        inner = ", ".join(f"{f}:{d}" for f, d in zip(self.factors, self.dims))
        return f"Space({inner})"


@dataclass(frozen=True)
class TruncationScheme:
    """Cutoffs of the composite space: 2-level atom, n_cav photon states,
    n_mec phonon states."""

    n_cav: int
    n_mec: int
    n_atom: int = 2

    def __post_init__(self):
        if self.n_atom != 2:
            raise ValueError("the electronic system is a two-level atom")
        if self.n_cav < 2 or self.n_mec < 2:
            raise ValueError("need at least two states per bosonic factor")

    @property
    def dim(self) -> int:
        return self.n_atom * self.n_cav * self.n_mec

    def index(self, i_atom: int, i_cav: int, i_mec: int) -> int:
        return (i_atom * self.n_cav + i_cav) * self.n_mec + i_mec

    def dim_of(self, factor: str) -> int:
        return {ATOM: self.n_atom, CAV: self.n_cav, MEC: self.n_mec}[factor]

    def space(self) -> Space:
        return Space(_COMPOSITE_ORDER, (self.n_atom, self.n_cav, self.n_mec))

    def subspace(self, *factors: str) -> Space:
        if not factors:
            raise ValueError("empty factor selection")
        bad = [f for f in factors if f not in _COMPOSITE_ORDER]
        if bad:
            raise ValueError(f"unknown factors {bad}")
        ordered = tuple(f for f in _COMPOSITE_ORDER if f in factors)
        return Space(ordered, tuple(self.dim_of(f) for f in ordered))


def single_factor_space(factor: str, dim: int) -> Space:
    return Space((factor,), (dim,))


# --------------------------------------------------------------------------
# value types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Ket:
    """Pure state vector over a Space. Factories hand out unit vectors."""

    amplitudes: np.ndarray
    space: Space

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex)
        if amp.shape != (self.space.dim,):
            raise ValueError(f"amplitude length {amp.shape} != dim {self.space.dim}")
        object.__setattr__(self, "amplitudes", amp)
        n = np.linalg.norm(amp)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"ket norm {n!r} deviates from 1 beyond tolerance")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def overlap(self, other: "Ket") -> complex:
        self._check_space(other.space)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def to_density(self) -> "DensityOperator":
        return DensityOperator(np.outer(self.amplitudes, self.amplitudes.conj()), self.space)

    def _check_space(self, other: Space):
        if other != self.space:
            raise ValueError(f"space mismatch: {self.space} vs {other}")


@dataclass(frozen=True)
class DensityOperator:
    """Mixed state over a Space; Hermitian with unit trace up to numerics."""

    matrix: np.ndarray
    space: Space

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        d = self.space.dim
        if mat.shape != (d, d):
            raise ValueError(f"matrix shape {mat.shape} != ({d}, {d})")
        object.__setattr__(self, "matrix", mat)
        herm = np.max(np.abs(mat - mat.conj().T))
        if herm > 1e-7:
            raise ValueError(f"density matrix not Hermitian (residual {herm:.2e})")
        tr = mat.trace().real
        if abs(tr - 1.0) > 1e-6:
            raise ValueError(f"density matrix trace {tr!r} deviates from 1")

    @property
    def trace(self) -> float:
        return float(self.matrix.trace().real)

    @property
    def purity(self) -> float:
        return float(np.sum(np.abs(self.matrix) ** 2))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense operator on a Space, with just enough algebra for assembling
    Hamiltonians and jump operators."""

    matrix: np.ndarray
    space: Space

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        d = self.space.dim
        if mat.shape != (d, d):
            raise ValueError(f"matrix shape {mat.shape} != ({d}, {d})")
        object.__setattr__(self, "matrix", mat)

    def dag(self) -> "OperatorMatrix":
        return OperatorMatrix(self.matrix.conj().T, self.space)

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        return self.hermiticity_defect() <= tol

    def _check_space(self, other):
        if other.space != self.space:
            raise ValueError(f"space mismatch: {self.space} vs {other.space}")

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self._check_space(other)
        return OperatorMatrix(self.matrix + other.matrix, self.space)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self._check_space(other)
        return OperatorMatrix(self.matrix - other.matrix, self.space)

    def __neg__(self) -> "OperatorMatrix":
        return OperatorMatrix(-self.matrix, self.space)

    def __mul__(self, scalar) -> "OperatorMatrix":
        return OperatorMatrix(self.matrix * scalar, self.space)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            self._check_space(other)
            return OperatorMatrix(self.matrix @ other.matrix, self.space)
        if isinstance(other, Ket):
            if other.space != self.space:
                raise ValueError("operator/ket space mismatch")
            return self.matrix @ other.amplitudes
        return NotImplemented


def expectation(op: OperatorMatrix, state) -> complex:
    """<O> for a Ket or DensityOperator on the same space."""
    if isinstance(state, Ket):
        if state.space != op.space:
            raise ValueError("space mismatch in expectation")
        return complex(np.vdot(state.amplitudes, op.matrix @ state.amplitudes))
    if state.space != op.space:
        raise ValueError("space mismatch in expectation")
    return complex(np.trace(op.matrix @ state.matrix))


# --------------------------------------------------------------------------
# elementary operators
# --------------------------------------------------------------------------

def identity(space: Space) -> OperatorMatrix:
    return OperatorMatrix(np.eye(space.dim, dtype=complex), space)


def _boson_destroy(n: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), k=1).astype(complex)


def annihilator(factor: str, trunc: TruncationScheme) -> OperatorMatrix:
    """Lowering operator of a single factor: |g><e| for the atom, the
    truncated boson ladder for cavity and mechanics."""
    space = trunc.subspace(factor)
    if factor == ATOM:
        mat = np.zeros((2, 2), dtype=complex)
        mat[0, 1] = 1.0
        return OperatorMatrix(mat, space)
    return OperatorMatrix(_boson_destroy(space.dim), space)


def number_operator(factor: str, trunc: TruncationScheme) -> OperatorMatrix:
    space = trunc.subspace(factor)
    return OperatorMatrix(np.diag(np.arange(space.dim, dtype=float)).astype(complex), space)


def projector(factor: str, level: int, trunc: TruncationScheme) -> OperatorMatrix:
    space = trunc.subspace(factor)
    if not 0 <= level < space.dim:
        raise IndexError(f"level {level} outside factor of dimension {space.dim}")
    mat = np.zeros((space.dim, space.dim), dtype=complex)
    mat[level, level] = 1.0
    return OperatorMatrix(mat, space)


def embed(op: OperatorMatrix, factor: str, trunc: TruncationScheme) -> OperatorMatrix:
    """Kronecker-lift a single-factor operator to the full atom ⊗ cavity ⊗
    mechanics space."""
    if factor not in _COMPOSITE_ORDER:
        raise ValueError(f"unknown factor {factor!r}")
    if op.space.dim != trunc.dim_of(factor):
        raise ValueError(
            f"operator dim {op.space.dim} != {factor} cutoff {trunc.dim_of(factor)}")
    pieces = []
    for f in _COMPOSITE_ORDER:
        if f == factor:
            pieces.append(op.matrix)
        else:
            pieces.append(np.eye(trunc.dim_of(f), dtype=complex))
    lifted = pieces[0]
    for p in pieces[1:]:
        lifted = np.kron(lifted, p)
    return OperatorMatrix(lifted, trunc.space())


def tensor_ops(*ops: OperatorMatrix) -> OperatorMatrix:
    mat = ops[0].matrix
    factors = list(ops[0].space.factors)
    dims = list(ops[0].space.dims)
    for op in ops[1:]:
        mat = np.kron(mat, op.matrix)
        factors += op.space.factors
        dims += op.space.dims
    return OperatorMatrix(mat, Space(tuple(factors), tuple(dims)))


def tensor_kets(*kets: Ket) -> Ket:
    amp = kets[0].amplitudes
    factors = list(kets[0].space.factors)
    dims = list(kets[0].space.dims)
    for k in kets[1:]:
        amp = np.kron(amp, k.amplitudes)
        factors += k.space.factors
        dims += k.space.dims
    return Ket(amp, Space(tuple(factors), tuple(dims)))


def tensor_densities(*rhos: DensityOperator) -> DensityOperator:
    mat = rhos[0].matrix
    factors = list(rhos[0].space.factors)
    dims = list(rhos[0].space.dims)
    for r in rhos[1:]:
        mat = np.kron(mat, r.matrix)
        factors += r.space.factors
        dims += r.space.dims
    return DensityOperator(mat, Space(tuple(factors), tuple(dims)))


# --------------------------------------------------------------------------
# state factories
# --------------------------------------------------------------------------

def make_fock(factor: str, m: int, trunc: TruncationScheme) -> Ket:
    """Number state |m> of one factor."""
    space = trunc.subspace(factor)
    if not 0 <= m < space.dim:
        raise IndexError(f"Fock index {m} outside cutoff {space.dim} of {factor!r}")
    amp = np.zeros(space.dim, dtype=complex)
    amp[m] = 1.0
    return Ket(amp, space)


def basis_ket(trunc: TruncationScheme, i_atom: int, i_cav: int, i_mec: int) -> Ket:
    """Composite basis state |i_atom, i_cav, i_mec>."""
    for i, f in zip((i_atom, i_cav, i_mec), _COMPOSITE_ORDER):
        if not 0 <= i < trunc.dim_of(f):
            raise IndexError(f"{f} index {i} outside cutoff {trunc.dim_of(f)}")
    amp = np.zeros(trunc.dim, dtype=complex)
    amp[trunc.index(i_atom, i_cav, i_mec)] = 1.0
    return Ket(amp, trunc.space())


def displacement_matrices(alphas, n: int) -> np.ndarray:
    """Stack of displacement matrices <m|D(alpha)|k>, shape (len(alphas), n, n).

    Closed-form associated-Laguerre expression, evaluated in log magnitude
    so large cutoffs stay finite; preferred over exponentiating the
    generator because it keeps the rows near the cutoff accurate.
    """
    if n < 2:
        raise ValueError("cutoff must be at least 2")
    alphas = np.atleast_1d(np.asarray(alphas, dtype=complex))
    mags = np.abs(alphas)
    idx = np.arange(n)
    row = idx[:, None] * np.ones(n, dtype=int)[None, :]
    col = np.ones(n, dtype=int)[:, None] * idx[None, :]
    lo = np.minimum(row, col)
    d = np.abs(row - col)
    safe_mags = np.where(mags > 0, mags, 1.0)
    x = (mags ** 2)[:, None, None]
    logmag = (0.5 * (gammaln(lo + 1) - gammaln(lo + d + 1))[None, :, :]
              + d[None, :, :] * np.log(safe_mags)[:, None, None] - x / 2)
    lag = eval_genlaguerre(lo[None, :, :], d[None, :, :], x)
    unit = np.where(mags > 0, alphas / safe_mags, 1.0)
    phase = np.where((col >= row)[None, :, :],
                     (-np.conj(unit))[:, None, None] ** d[None, :, :],
                     unit[:, None, None] ** d[None, :, :])
    out = np.exp(logmag) * lag * phase
    eye = np.eye(n, dtype=complex)
    out[mags == 0] = eye
    return out


def displacement_matrix(alpha: complex, n: int) -> np.ndarray:
    """Matrix elements <m|D(alpha)|k> on the n lowest number states."""
    return displacement_matrices([alpha], n)[0]


def displacement_operator(alpha: complex, n: int) -> OperatorMatrix:
    """Mechanical displacement D(alpha) = exp(alpha b† - alpha* b) on the
    truncated space; unitary up to leakage past the cutoff."""
    return OperatorMatrix(displacement_matrix(alpha, n), single_factor_space(MEC, n))


def coherent_amplitudes(alpha: complex, n: int) -> np.ndarray:
    """Unnormalized coherent-state amplitudes e^{-|a|^2/2} a^m / sqrt(m!)."""
    alpha = complex(alpha)
    m = np.arange(n)
    if alpha == 0:
        amp = np.zeros(n, dtype=complex)
        amp[0] = 1.0
        return amp
    logmag = -abs(alpha) ** 2 / 2 + m * np.log(abs(alpha)) - 0.5 * gammaln(m + 1)
    return np.exp(logmag) * (alpha / abs(alpha)) ** m


def coherent_state(alpha: complex, n: int) -> Ket:
    """Normalized coherent state on the n lowest number states.

    Warns (carrying the leaked weight) if the Poisson tail beyond the
    cutoff exceeds 1e-8.
    """
    amp = coherent_amplitudes(alpha, n)
    leak = 1.0 - float(np.sum(np.abs(amp) ** 2))
    if leak > 1e-8:
        warnings.warn(
            f"coherent state |alpha|={abs(alpha):.3g} leaks weight {leak:.3e} "
            f"past cutoff {n}", TruncationWarning, stacklevel=2)
    amp /= np.linalg.norm(amp)
    return Ket(amp, single_factor_space(MEC, n))


def thermal_weights(mbar: float, n: int) -> np.ndarray:
    """Geometric number distribution with mean mbar on n levels (unnormalized)."""
    if mbar < 0:
        raise ValueError("mean occupation must be non-negative")
    if mbar == 0:
        w = np.zeros(n)
        w[0] = 1.0
        return w
    r = mbar / (mbar + 1.0)
    return r ** np.arange(n) / (mbar + 1.0)


def displaced_thermal(alpha: complex, mbar: float, n: int) -> DensityOperator:
    """D(alpha) · thermal(mbar) · D†(alpha), renormalized on the retained basis.

    Raises TruncationError when the geometric tail past the cutoff exceeds
    1e-6 or the displacement pushes more than 1e-6 of the trace out of the
    basis; silent truncation here would corrupt the number variance.
    """
    w = thermal_weights(mbar, n)
    tail = 1.0 - float(w.sum())
    if tail > 1e-6:
        raise TruncationError(
            f"thermal state mbar={mbar} leaks {tail:.3e} past cutoff {n}")
    if (mbar + 1.0) * tail > 1e-8:
        warnings.warn(
            f"thermal tail weight {tail:.3e} at cutoff {n} may bias number "
            "moments", TruncationWarning, stacklevel=2)
    w = w / w.sum()
    rho = np.diag(w).astype(complex)
    if alpha != 0:
        dmat = displacement_matrix(alpha, n)
        rho = dmat @ rho @ dmat.conj().T
        tr = rho.trace().real
        if abs(tr - 1.0) > 1e-6:
            raise TruncationError(
                f"displacement |alpha|={abs(alpha):.3g} loses trace {1 - tr:.3e} "
                f"at cutoff {n}")
        rho /= tr
    rho = 0.5 * (rho + rho.conj().T)
    return DensityOperator(rho, single_factor_space(MEC, n))


# --------------------------------------------------------------------------
# partial trace
# --------------------------------------------------------------------------

def partial_trace(rho: DensityOperator, keep) -> DensityOperator:
    """Trace out every factor not in `keep`; kept factors stay in their
    original order."""
    if isinstance(keep, str):
        keep = (keep,)
    keep = tuple(keep)
    if not keep:
        raise ValueError("must keep at least one factor")
    factors = rho.space.factors
    for f in keep:
        if f not in factors:
            raise ValueError(f"factor {f!r} not present in {rho.space}")
    dims = rho.space.dims
    nf = len(dims)
    tensor = rho.matrix.reshape(dims + dims)
    remaining = list(factors)
    while len(remaining) > len(keep):
        i = next(j for j, f in enumerate(remaining) if f not in keep)
        k = len(remaining)
        tensor = np.trace(tensor, axis1=i, axis2=i + k)
        remaining.pop(i)
    kept_dims = tuple(rho.space.dims[factors.index(f)] for f in remaining)
    d = prod(kept_dims)
    return DensityOperator(tensor.reshape(d, d), Space(tuple(remaining), kept_dims))
