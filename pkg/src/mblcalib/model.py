"""Quasiperiodic site potentials, Fock bases, and the sparse Bose-Hubbard
Hamiltonian in the frame rotating at the base qubit frequency.

Conventions fixed here and relied on everywhere else:

* All Hamiltonian entries are ordinary frequencies in MHz; the propagator
  supplies the 2*pi (phases are -i*2*pi*H*t with t in microseconds).
* On-site detunings in the rotating frame are the quasiperiodic potential
  values themselves; the uniform base frequency only contributes phases that
  are tracked separately.
* Fock states are ordered lexicographically over occupation strings with
  site 0 most significant, which for the full space coincides with the
  base-d integer value of the string.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import lattice
from .errors import BasisMismatchError, ConfigError, GuardError

GOLDEN_RATIO_CONJUGATE = (math.sqrt(5) - 1) / 2
SQRT7_CONJUGATE = (math.sqrt(7) - 1) / 2

# Largest basis we will materialize occupation tables for (memory guard).
MAX_BASIS_DIMENSION = 1 << 22


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the Bose-Hubbard model.

    The quasiperiodic amplitude is derived: w_mhz = h_mhz / r. The
    anharmonicity term (v_mhz/2) n (n-1) vanishes identically for
    local_dim == 2.
    """

    r: float
    h_mhz: float = 5.0
    v_mhz: float = -200.0
    local_dim: int = 2
    alpha: float = GOLDEN_RATIO_CONJUGATE
    alpha_x: float = GOLDEN_RATIO_CONJUGATE
    alpha_y: float = SQRT7_CONJUGATE
    phi: float = 0.0
    w_base_ghz: float = 4.889

    def __post_init__(self):
        if self.r <= 0:
            raise ConfigError(f"ratio r must be positive, got {self.r}")
        if self.local_dim < 2:
            raise ConfigError(f"local_dim must be >= 2, got {self.local_dim}")

    @property
    def w_mhz(self) -> float:
        return self.h_mhz / self.r


@dataclass(frozen=True)
class SitePotential:
    """Per-site detuning values in MHz."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self) -> int:
        return len(self.values)


def quasiperiodic_potential_1d(w_mhz: float, alpha: float, phi: float,
                               n_sites: int) -> SitePotential:
    """values[i] = w * cos(2*pi*alpha*i + phi) for i = 0..n_sites-1."""
    if n_sites < 1:
        raise ConfigError("n_sites must be >= 1")
    i = np.arange(n_sites)
    return SitePotential(w_mhz * np.cos(2 * np.pi * alpha * i + phi))


def quasiperiodic_potential_2d(w_mhz: float, alpha_x: float, alpha_y: float,
                               spec: lattice.LatticeSpec) -> SitePotential:
    """values[i] = w * (cos(2*pi*alpha_x*x_i) + cos(2*pi*alpha_y*y_i)).

    x and y are the row and column of site i; only grid lattices are
    accepted.
    """
    if spec.kind != "grid":
        raise ConfigError("2D quasiperiodic potential requires a grid lattice")
    rows, cols = np.divmod(np.arange(spec.n_sites), spec.n_cols)
    vals = w_mhz * (np.cos(2 * np.pi * alpha_x * rows) + np.cos(2 * np.pi * alpha_y * cols))
    return SitePotential(vals)


def _occupation_strings(n_sites, local_dim, total):
    """Yield occupation tuples with the given total, lexicographically."""
    if n_sites == 1:
        if 0 <= total < local_dim:
            yield (total,)
        return
    for v in range(min(local_dim - 1, total) + 1):
        rest = total - v
        if rest <= (n_sites - 1) * (local_dim - 1):
            for tail in _occupation_strings(n_sites - 1, local_dim, rest):
                yield (v,) + tail


@dataclass(frozen=True, eq=False)
class FockBasis:
    """Ordered Fock basis, either a fixed-total-number sector or the full
    product space.

    n_total is None for the full space. rank/unrank are inverse bijections
    between basis indices and occupation strings.
    """

    n_sites: int
    local_dim: int
    n_total: int | None
    codes: np.ndarray | None = field(repr=False, default=None)
    _occ: np.ndarray | None = field(repr=False, default=None)

    @property
    def dimension(self) -> int:
        if self.n_total is None:
            return self.local_dim ** self.n_sites
        return len(self.codes)

    @property
    def powers(self) -> np.ndarray:
        d, n = self.local_dim, self.n_sites
        return d ** np.arange(n - 1, -1, -1, dtype=np.int64)

    @property
    def occupations(self) -> np.ndarray:
        """dimension x n_sites int8 matrix of site occupations."""
        if self._occ is not None:
            return self._occ
        codes = np.arange(self.dimension, dtype=np.int64)
        occ = ((codes[:, None] // self.powers) % self.local_dim).astype(np.int8)
        object.__setattr__(self, "_occ", occ)
        return occ

    def __eq__(self, other) -> bool:
        return (isinstance(other, FockBasis)
                and self.n_sites == other.n_sites
                and self.local_dim == other.local_dim
                and self.n_total == other.n_total)

    def __hash__(self):
        return hash((self.n_sites, self.local_dim, self.n_total))

    def rank(self, occupations) -> int:
        """Basis index of an occupation string."""
        occ = np.asarray(occupations, dtype=np.int64)
        if occ.shape != (self.n_sites,):
            raise ConfigError(f"occupation string must have length {self.n_sites}")
        if occ.min() < 0 or occ.max() >= self.local_dim:
            raise ConfigError("occupation out of range for local dimension")
        code = int(occ @ self.powers)
        if self.n_total is None:
            return code
        k = int(np.searchsorted(self.codes, code))
        if k >= len(self.codes) or self.codes[k] != code:
            raise ConfigError("occupation string not in this number sector")
        return k

    def unrank(self, k: int) -> np.ndarray:
        """Occupation string of basis index k."""
        if not 0 <= k < self.dimension:
            raise ConfigError(f"basis index {k} out of range")
        if self.n_total is None:
            return ((k // self.powers) % self.local_dim).astype(np.int8)
        return self.occupations[k].copy()

    def indices_of_codes(self, codes: np.ndarray) -> np.ndarray:
        """Basis indices for an array of base-d codes (codes must exist)."""
        if self.n_total is None:
            return codes
        return np.searchsorted(self.codes, codes)


def enumerate_basis(n_sites: int, local_dim: int, n_total: int | None) -> FockBasis:
    """Build a Fock basis.

    n_total selects the fixed-occupation sector; None selects the full
    local_dim**n_sites product space.
    """
    if n_sites < 1:
        raise ConfigError("n_sites must be >= 1")
    if local_dim < 2:
        raise ConfigError("local_dim must be >= 2")
    if n_total is None:
        dim = local_dim ** n_sites
        if dim > MAX_BASIS_DIMENSION:
            raise GuardError(f"full-space dimension {dim} exceeds {MAX_BASIS_DIMENSION}")
        return FockBasis(n_sites, local_dim, None)
    if not 0 <= n_total <= n_sites * (local_dim - 1):
        raise ConfigError(
            f"sector total {n_total} outside 0..{n_sites * (local_dim - 1)}")
    occ = np.array(list(_occupation_strings(n_sites, local_dim, n_total)), dtype=np.int8)
    powers = local_dim ** np.arange(n_sites - 1, -1, -1, dtype=np.int64)
    codes = occ.astype(np.int64) @ powers
    # lexicographic enumeration already yields ascending codes
    return FockBasis(n_sites, local_dim, n_total, codes=codes, _occ=occ)


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized complex amplitudes over a specific Fock basis."""

    basis: FockBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (self.basis.dimension,):
            raise BasisMismatchError(
                f"amplitude vector of length {amps.shape} does not match basis "
                f"dimension {self.basis.dimension}")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.basis, self.amplitudes.copy())


def basis_state(basis: FockBasis, occupations) -> StateVector:
    """Unit amplitude on a single occupation string."""
    amps = np.zeros(basis.dimension, dtype=np.complex128)
    amps[basis.rank(occupations)] = 1.0
    return StateVector(basis, amps)


def neel_state(basis: FockBasis) -> StateVector:
    """Alternating |0101...> product state (site 0 empty), row-major order."""
    occ = np.arange(basis.n_sites) % 2
    if basis.n_total is not None and basis.n_total != int(occ.sum()):
        raise ConfigError(
            f"Neel state has {int(occ.sum())} excitations, sector holds {basis.n_total}")
    return basis_state(basis, occ)


@dataclass(frozen=True, eq=False)
class SparseHamiltonian:
    """Hermitian operator in CSR form over a Fock basis, entries in MHz."""

    basis: FockBasis
    matrix: sp.csr_matrix

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()


def build_hamiltonian(params: ModelParams, spec: lattice.LatticeSpec,
                      pot: SitePotential, basis: FockBasis,
                      edge_kinds: tuple[str, ...] = (lattice.NN,)) -> SparseHamiltonian:
    """Assemble the rotating-frame Bose-Hubbard Hamiltonian.

    Diagonal: sum_i pot[i]*n_i + (v/2)*n_i*(n_i-1). Off-diagonal: for every
    included edge (j,k), matrix element h*sqrt(n_j*(n_k+1)) between Fock
    states related by moving one boson from j to k. All listed edge kinds
    use the same coupling strength h.
    """
    n = spec.n_sites
    if len(pot) != n:
        raise ConfigError(f"potential has {len(pot)} entries for {n} sites")
    if basis.n_sites != n or basis.local_dim != params.local_dim:
        raise BasisMismatchError("basis does not match lattice/model parameters")
    if basis.dimension > MAX_BASIS_DIMENSION:
        raise GuardError("basis too large to assemble")

    occ = basis.occupations.astype(np.int64)
    d = params.local_dim
    diag = occ @ pot.values + 0.5 * params.v_mhz * np.einsum("ij,ij->i", occ, occ - 1)

    if basis.n_total is None:
        codes = np.arange(basis.dimension, dtype=np.int64)
    else:
        codes = basis.codes
    powers = basis.powers

    edge_list: list[lattice.Edge] = []
    for kind in edge_kinds:
        edge_list.extend(lattice.edges(spec, kind))

    rows, cols, vals = [np.arange(basis.dimension)], [np.arange(basis.dimension)], [diag]
    for (i, j, _) in edge_list:
        for a, b in ((i, j), (j, i)):
            mask = (occ[:, a] > 0) & (occ[:, b] < d - 1)
            src = np.nonzero(mask)[0]
            if len(src) == 0:
                continue
            amp = params.h_mhz * np.sqrt(occ[src, a] * (occ[src, b] + 1.0))
            new_codes = codes[src] - powers[a] + powers[b]
            dst = basis.indices_of_codes(new_codes)
            rows.append(src)
            cols.append(dst)
            vals.append(amp)

    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(basis.dimension, basis.dimension), dtype=float).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return SparseHamiltonian(basis, mat)


def write_triplets(ham: SparseHamiltonian, path) -> None:
    """Dump the sparse matrix as 0-indexed "row col value" text lines."""
    coo = ham.matrix.tocoo()
    with open(path, "w", encoding="ascii") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
