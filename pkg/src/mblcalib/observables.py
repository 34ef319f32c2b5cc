"""State and spectrum diagnostics: fidelity, inverse participation ratio,
second Renyi entropy of a subsystem, and adjacent-gap-ratio statistics.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BasisMismatchError, ConfigError, GuardError
from .model import FockBasis, SparseHamiltonian, StateVector

GAP_RATIO_MAX_DIM = 20000
POISSON_GAP_RATIO = 2 * np.log(2) - 1  # ~0.3863, localized reference
GOE_GAP_RATIO = 0.5307  # orthogonal-ensemble reference (numerical)

_SCHMIDT_MAX_SIDE = 1 << 16


@dataclass(frozen=True)
class Bipartition:
    """Ordered subsystem site indices; must be a nonempty proper subset."""

    subsystem_a: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "subsystem_a", tuple(int(s) for s in self.subsystem_a))
        if len(set(self.subsystem_a)) != len(self.subsystem_a):
            raise ConfigError("bipartition contains duplicate sites")
        if not self.subsystem_a:
            raise ConfigError("bipartition must be nonempty")


@dataclass(frozen=True)
class SpectralStats:
    mean_gap_ratio: float
    level_count: int
    zero_gap_count: int = 0


def fidelity(psi_a: StateVector, psi_b: StateVector) -> float:
    """|<a|b>|^2."""
    if psi_a.basis != psi_b.basis:
        raise BasisMismatchError("states use different bases")
    return float(abs(np.vdot(psi_a.amplitudes, psi_b.amplitudes)) ** 2)


def ipr(psi: StateVector) -> float:
    """Sum of |c_n|^4 over the Fock basis; 1 for a single basis state."""
    p = np.abs(psi.amplitudes) ** 2
    return float(np.sum(p * p))


def _split_sites(basis: FockBasis, part: Bipartition):
    n = basis.n_sites
    sites_a = part.subsystem_a
    if any(not 0 <= s < n for s in sites_a):
        raise ConfigError("bipartition site index out of range")
    if len(sites_a) >= n:
        raise ConfigError("bipartition must be a proper subset of the sites")
    in_a = np.zeros(n, dtype=bool)
    in_a[list(sites_a)] = True
    sites_b = tuple(np.nonzero(~in_a)[0])
    return sites_a, sites_b


def renyi2(psi: StateVector, part: Bipartition) -> float:
    """Second Renyi entropy -log2 Tr rho_A^2 of the reduced state, in bits.

    Works for sector bases too: amplitudes are scattered into the product
    space through their occupation strings before the Schmidt contraction.
    """
    basis = psi.basis
    sites_a, sites_b = _split_sites(basis, part)
    d = basis.local_dim
    dim_a = d ** len(sites_a)
    dim_b = d ** len(sites_b)
    if max(dim_a, dim_b) > _SCHMIDT_MAX_SIDE:
        raise GuardError("bipartition too large for dense Schmidt contraction")
    occ = basis.occupations
    pow_a = d ** np.arange(len(sites_a) - 1, -1, -1, dtype=np.int64)
    pow_b = d ** np.arange(len(sites_b) - 1, -1, -1, dtype=np.int64)
    row = occ[:, list(sites_a)].astype(np.int64) @ pow_a
    col = occ[:, list(sites_b)].astype(np.int64) @ pow_b
    M = np.zeros((dim_a, dim_b), dtype=np.complex128)
    np.add.at(M, (row, col), psi.amplitudes)
    # Tr rho_A^2 = ||M M^dagger||_F^2, evaluated on the smaller side
    G = M @ M.conj().T if dim_a <= dim_b else M.conj().T @ M
    purity = float(np.real(np.sum(G * G.conj())))
    return float(-np.log2(purity))


def gap_ratio(ham: SparseHamiltonian) -> SpectralStats:
    """Mean adjacent-gap ratio over the middle half of the sorted spectrum.

    r_n = min(g_n, g_{n+1}) / max(g_n, g_{n+1}) for consecutive gaps g;
    exact ties (both gaps zero) contribute r = 0 and are counted separately.
    """
    if ham.dimension > GAP_RATIO_MAX_DIM:
        raise GuardError(
            f"gap_ratio limited to dimension {GAP_RATIO_MAX_DIM}, got {ham.dimension}")
    energies = np.sort(np.linalg.eigvalsh(ham.matrix.toarray()))
    dim = len(energies)
    lo, hi = dim // 4, dim - dim // 4
    window = energies[lo:hi]
    if len(window) < 3:
        raise GuardError("spectrum too small for gap statistics")
    gaps = np.diff(window)
    lead, trail = gaps[:-1], gaps[1:]
    hi_gap = np.maximum(lead, trail)
    lo_gap = np.minimum(lead, trail)
    ties = hi_gap == 0
    ratios = np.where(ties, 0.0, lo_gap / np.where(hi_gap == 0, 1.0, hi_gap))
    return SpectralStats(
        mean_gap_ratio=float(np.mean(ratios)),
        level_count=len(window),
        zero_gap_count=int(np.count_nonzero(ties)),
    )
