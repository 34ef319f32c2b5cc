"""Monte Carlo wavefunction (quantum trajectory) evolution for T1 relaxation
and pure dephasing.

Rates are plain inverse microseconds (1/t1 etc.), while Hamiltonians carry
MHz with the 2*pi applied at the propagator, so the non-Hermitian decay term
enters the effective Hamiltonian as -i * sum(L^dag L) / (4*pi): the
propagator's -i*2*pi then reproduces the standard exp(-t/2 * sum L^dag L)
norm decay.

Jumps are detected by norm-threshold crossing: draw u ~ U(0,1), propagate
until ||psi||^2 <= u, refine the crossing time by bisection, apply a jump
operator sampled by its instantaneous weight, renormalize, redraw u.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import engine
from .errors import BasisMismatchError, ConfigError, ConvergenceError
from .model import FockBasis, SparseHamiltonian, StateVector


@dataclass(frozen=True)
class NoiseParams:
    """T1/T2 coherence times in microseconds."""

    t1_us: float
    t2_us: float

    def __post_init__(self):
        if self.t1_us <= 0 or self.t2_us <= 0:
            raise ConfigError("coherence times must be positive")
        if self.t2_us > 2 * self.t1_us + 1e-12:
            raise ConfigError(
                f"unphysical noise: t2={self.t2_us} exceeds 2*t1={2 * self.t1_us}")

    @property
    def gamma1(self) -> float:
        return 1.0 / self.t1_us

    @property
    def gamma_phi(self) -> float:
        g = 1.0 / self.t2_us - 0.5 / self.t1_us
        return 0.0 if abs(g) < 1e-15 else g


@dataclass(frozen=True)
class TrajectoryConfig:
    n_traj: int = 200
    seed: int = 0
    dt_us: float | None = None  # jump-detection substep; default horizon/50

    def __post_init__(self):
        if self.n_traj < 1:
            raise ConfigError("n_traj must be >= 1")
        if self.dt_us is not None and self.dt_us <= 0:
            raise ConfigError("dt_us must be positive")


_NS_TABLE = {0: None, 1: (50.0, 69.0), 2: (25.0, 34.5)}


def noise_from_ns(ns: int) -> NoiseParams | None:
    """Map the discrete noise-strength label to coherence times.

    ns=0 is noiseless unitary evolution; ns=1 is (T1, T2) = (50, 69) us;
    ns=2 is (25, 34.5) us.
    """
    if ns not in _NS_TABLE:
        raise ConfigError(f"unsupported noise strength ns={ns}")
    pair = _NS_TABLE[ns]
    return None if pair is None else NoiseParams(*pair)


def jump_operators(params: NoiseParams, n_sites: int,
                   basis: FockBasis) -> list[sp.csr_matrix]:
    """Per-site relaxation sqrt(1/t1)*a_j and, when gamma_phi > 0, dephasing
    sqrt(gamma_phi/2)*Z_j with Z_j = I - 2*min(n_j, 1).
    """
    if basis.n_total is not None:
        raise BasisMismatchError("jump operators require the full space "
                                 "(they break number conservation)")
    if basis.n_sites != n_sites:
        raise BasisMismatchError("basis size does not match n_sites")
    occ = basis.occupations
    dim = basis.dimension
    powers = basis.powers
    ops: list[sp.csr_matrix] = []
    amp_relax = math.sqrt(params.gamma1)
    for j in range(n_sites):
        src = np.nonzero(occ[:, j] > 0)[0]
        dst = src - powers[j]  # full space: index == code
        vals = amp_relax * np.sqrt(occ[src, j].astype(float))
        ops.append(sp.csr_matrix((vals, (dst, src)), shape=(dim, dim),
                                 dtype=np.complex128))
    if params.gamma_phi > 0:
        amp_deph = math.sqrt(params.gamma_phi / 2)
        for j in range(n_sites):
            z = 1.0 - 2.0 * np.minimum(occ[:, j], 1)
            ops.append(sp.csr_matrix(
                (amp_deph * z, (np.arange(dim), np.arange(dim))),
                shape=(dim, dim), dtype=np.complex128))
    return ops


class TrajectorySolver:
    """Stochastic pure-state stepper bound to one Hamiltonian and one set of
    jump operators; reuse across layers/trajectories amortizes setup."""

    def __init__(self, ham: SparseHamiltonian, params: NoiseParams,
                 prop_cfg: engine.PropagatorConfig | None = None,
                 jump_ops: list[sp.csr_matrix] | None = None):
        self.ham = ham
        self.params = params
        self.cfg = prop_cfg or engine.PropagatorConfig()
        basis = ham.basis
        self.ops = jump_ops if jump_ops is not None else jump_operators(
            params, basis.n_sites, basis)
        decay = None
        for op in self.ops:
            term = (op.getH() @ op).tocsr()
            decay = term if decay is None else decay + term
        mat = engine._complex_matrix(ham)
        diag = ham.diagonal
        self.mu = float(0.5 * (diag.max() + diag.min())) if len(diag) else 0.0
        scale = 1.0 / (4.0 * np.pi)
        mu = self.mu

        def matvec(x):
            return mat.dot(x) - mu * x - (1j * scale) * decay.dot(x)

        bound = (engine._spectral_bound(ham.matrix, mu)
                 + scale * float(np.asarray(abs(decay).sum(axis=1)).max()))
        self._core = engine.KrylovPropagator(matvec, self.cfg,
                                             hermitian=False, norm_bound=bound)

    def _step(self, vec, duration):
        if duration <= 0:
            return vec.copy()
        return self._core.advance(vec, duration)

    def _jump(self, vec, rng):
        weights = np.array([np.linalg.norm(op.dot(vec)) ** 2 for op in self.ops])
        total = weights.sum()
        if total <= 0:
            raise ConvergenceError("norm decayed with zero jump weight")
        k = rng.choice(len(self.ops), p=weights / total)
        jumped = self.ops[k].dot(vec)
        return jumped / np.linalg.norm(jumped)

    def advance(self, psi: StateVector, t: float, rng: np.random.Generator,
                dt_us: float | None = None) -> StateVector:
        """One trajectory segment of duration t; returns a normalized state."""
        if psi.basis != self.ham.basis:
            raise BasisMismatchError("state and Hamiltonian use different bases")
        if t < 0:
            raise ConfigError("evolution time must be non-negative")
        if t == 0:
            return psi.copy()
        dt = dt_us if dt_us is not None else t / 50
        if dt <= 0:
            raise ConfigError("substep must be positive")
        vec = psi.amplitudes.copy()
        threshold = rng.uniform()
        elapsed = 0.0
        bisect_tol = dt / 100
        while elapsed < t * (1 - 1e-12):
            sub = min(dt, t - elapsed)
            advanced = self._step(vec, sub)
            if np.linalg.norm(advanced) ** 2 > threshold:
                vec = advanced
                elapsed += sub
                continue
            # locate the norm-threshold crossing inside [0, sub]
            lo, hi = 0.0, sub
            while hi - lo > bisect_tol:
                mid = 0.5 * (lo + hi)
                if np.linalg.norm(self._step(vec, mid)) ** 2 > threshold:
                    lo = mid
                else:
                    hi = mid
            crossing = 0.5 * (lo + hi)
            vec = self._jump(self._step(vec, crossing), rng)
            threshold = rng.uniform()
            elapsed += crossing
        nrm = np.linalg.norm(vec)
        if not 0 < nrm <= 1 + 1e-9:
            raise ConvergenceError(f"trajectory norm {nrm} outside (0, 1]")
        # restore the diagonal-midpoint phase for the whole window
        vec *= np.exp(-2j * np.pi * self.mu * t)
        return StateVector(psi.basis, vec / nrm)


def evolve_trajectory(ham: SparseHamiltonian, psi0: StateVector, t: float,
                      params: NoiseParams, rng: np.random.Generator,
                      dt_us: float | None = None,
                      prop_cfg: engine.PropagatorConfig | None = None,
                      jump_ops: list[sp.csr_matrix] | None = None) -> StateVector:
    """One Monte Carlo wavefunction trajectory over time t."""
    if abs(psi0.norm - 1.0) > 1e-9:
        raise ConfigError("initial state is not normalized")
    solver = TrajectorySolver(ham, params, prop_cfg, jump_ops)
    return solver.advance(psi0, t, rng, dt_us)


def average_fidelity(states: list[StateVector], psi_ref: StateVector):
    """Sample mean and standard error of |<ref|state>|^2 over trajectories."""
    if not states:
        raise ConfigError("average_fidelity needs at least one trajectory")
    fids = np.array([abs(np.vdot(psi_ref.amplitudes, s.amplitudes)) ** 2
                     for s in states])
    mean = float(fids.mean())
    stderr = float(fids.std(ddof=1) / math.sqrt(len(fids))) if len(fids) > 1 else 0.0
    return mean, stderr
