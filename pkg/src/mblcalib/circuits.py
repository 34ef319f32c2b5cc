"""Seeded XEB random circuits and their execution.

Circuits act on the full product space (single-qubit gates break number
conservation). Two execution modes are provided: ideal (gates only) and
device (gates interleaved with evolution under the residual-coupling
Hamiltonian for the layer duration, optionally with the known diagonal
phases compensated away, mimicking virtual-Z frame tracking).

Sampling uses counter-based Philox streams keyed on (seed, stream id), so
identical inputs regenerate identical circuits and trajectory results do
not depend on execution order.
"""

import enum
import re
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from numpy.random import Generator, Philox

from . import engine, noise as noise_mod
from .errors import BasisMismatchError, ConfigError
from .lattice import NN, LatticeSpec, edges
from .model import SparseHamiltonian, StateVector

_CIRCUIT_STREAM = 0x5A17C1
_TRAJ_STREAM_BASE = 0x7E57A9


class SingleGate(enum.Enum):
    """Half-turn pi/2 rotations plus identity; letters match serialization."""

    XHALF = "X"
    YHALF = "Y"
    WHALF = "W"
    IDENTITY = "I"


@dataclass(frozen=True)
class ISwapLike:
    """fSim-form excitation exchange: swap angle theta, conditional phase phi."""

    theta: float = np.pi / 2
    phi: float = 0.0


@dataclass(frozen=True)
class Layer:
    single_gates: tuple[SingleGate, ...]
    pairs: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class CircuitSpec:
    lattice: LatticeSpec
    layers: tuple[Layer, ...]
    seed: int | None
    layer_duration_us: float = 0.05
    two_qubit: ISwapLike = field(default_factory=ISwapLike)

    @property
    def n_layers(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class ExecutionMode:
    kind: str = "device"  # "ideal" | "device"
    compensate_diagonal: bool = True

    def __post_init__(self):
        if self.kind not in ("ideal", "device"):
            raise ConfigError(f"unknown execution mode {self.kind!r}")


def _rng(seed: int, stream: int) -> Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return Generator(Philox(key=key))


_GATE_DRAW_ORDER = (SingleGate.XHALF, SingleGate.YHALF, SingleGate.WHALF,
                    SingleGate.IDENTITY)


def max_matching_size(spec: LatticeSpec) -> int:
    graph = nx.Graph((e.i, e.j) for e in edges(spec, NN))
    return len(nx.max_weight_matching(graph, maxcardinality=True))


def sample_xeb_circuit(spec: LatticeSpec, n_layers: int, seed: int,
                       pairs_per_layer: int = 4, layer_duration_us: float = 0.05,
                       two_qubit: ISwapLike | None = None) -> CircuitSpec:
    """Draw a seeded random circuit: per layer, one uniform single-qubit gate
    per site from {X/2, Y/2, W/2, I} plus a random disjoint matching of
    pairs_per_layer NN edges (shuffled greedy selection with rejection).
    """
    if n_layers < 1:
        raise ConfigError("n_layers must be >= 1")
    nn_edges = [(e.i, e.j) for e in edges(spec, NN)]
    if pairs_per_layer > max_matching_size(spec):
        raise ConfigError(
            f"lattice admits no disjoint matching of size {pairs_per_layer}")
    rng = _rng(seed, _CIRCUIT_STREAM)
    layers = []
    for _ in range(n_layers):
        draws = rng.integers(0, len(_GATE_DRAW_ORDER), size=spec.n_sites)
        gates = tuple(_GATE_DRAW_ORDER[k] for k in draws)
        while True:
            order = rng.permutation(len(nn_edges))
            used = np.zeros(spec.n_sites, dtype=bool)
            picked = []
            for idx in order:
                a, b = nn_edges[idx]
                if not used[a] and not used[b]:
                    used[a] = used[b] = True
                    picked.append((a, b))
                    if len(picked) == pairs_per_layer:
                        break
            if len(picked) == pairs_per_layer:
                break
        layers.append(Layer(gates, tuple(sorted(picked))))
    return CircuitSpec(spec, tuple(layers), seed, layer_duration_us,
                       two_qubit or ISwapLike())


_INV_SQRT2 = 1 / np.sqrt(2)
_SINGLE_UNITARIES = {
    SingleGate.XHALF: _INV_SQRT2 * np.array([[1, -1j], [-1j, 1]]),
    SingleGate.YHALF: _INV_SQRT2 * np.array([[1, -1], [1, 1]]),
    # pi/2 rotation about the (x+y)/sqrt(2) axis
    SingleGate.WHALF: _INV_SQRT2 * np.array([[1, -0.5 * (1 + 1j) * np.sqrt(2)],
                                             [0.5 * (1 - 1j) * np.sqrt(2), 1]]),
    SingleGate.IDENTITY: np.eye(2, dtype=complex),
}


def gate_unitary(kind) -> np.ndarray:
    """2x2 (single gates) or 4x4 (ISwapLike, basis |00>,|01>,|10>,|11>)."""
    if isinstance(kind, SingleGate):
        return _SINGLE_UNITARIES[kind].copy()
    if isinstance(kind, ISwapLike):
        c, s = np.cos(kind.theta), np.sin(kind.theta)
        u = np.eye(4, dtype=complex)
        u[1, 1] = u[2, 2] = c
        u[1, 2] = u[2, 1] = -1j * s
        u[3, 3] = np.exp(-1j * kind.phi)
        return u
    raise ConfigError(f"not a gate kind: {kind!r}")


def _embed_levels(u: np.ndarray, d: int, k: int) -> np.ndarray:
    """Embed a qubit unitary into d-level sites (identity on levels >= 2)."""
    if d == 2:
        return u
    full = np.eye(d ** k, dtype=complex)
    idx = [sum(b * d ** (k - 1 - pos) for pos, b in enumerate(bits))
           for bits in np.ndindex(*([2] * k))]
    full[np.ix_(idx, idx)] = u
    return full


def _apply_unitary(amps: np.ndarray, d: int, n: int, u: np.ndarray,
                   sites: tuple[int, ...]) -> np.ndarray:
    k = len(sites)
    u = _embed_levels(u, d, k)
    psi = amps.reshape([d] * n)
    ut = u.reshape([d] * (2 * k))
    psi = np.tensordot(ut, psi, axes=(list(range(k, 2 * k)), list(sites)))
    psi = np.moveaxis(psi, range(k), sites)
    return np.ascontiguousarray(psi).reshape(-1)


def apply_gate(psi: StateVector, kind, sites) -> StateVector:
    """Apply a gate unitary on the given site(s) of a full-space state."""
    basis = psi.basis
    if basis.n_total is not None:
        raise BasisMismatchError("gates require a full-space basis")
    sites = tuple(int(s) for s in (sites if hasattr(sites, "__len__") else (sites,)))
    u = gate_unitary(kind)
    if 2 ** len(sites) != u.shape[0]:
        raise ConfigError(
            f"gate of dimension {u.shape[0]} cannot act on sites {sites}")
    amps = _apply_unitary(psi.amplitudes, basis.local_dim, basis.n_sites, u, sites)
    return StateVector(basis, amps)


def _apply_layer(amps: np.ndarray, basis, layer: Layer, two_qubit: ISwapLike):
    d, n = basis.local_dim, basis.n_sites
    for site, g in enumerate(layer.single_gates):
        if g is SingleGate.IDENTITY:
            continue
        amps = _apply_unitary(amps, d, n, _SINGLE_UNITARIES[g], (site,))
    if layer.pairs:
        u2 = gate_unitary(two_qubit)
        for (a, b) in layer.pairs:
            amps = _apply_unitary(amps, d, n, u2, (a, b))
    return amps


def run_ideal(circuit: CircuitSpec, psi0: StateVector) -> list[StateVector]:
    """Gates only: returns the state after each layer."""
    basis = psi0.basis
    if basis.n_total is not None:
        raise BasisMismatchError("circuit execution requires the full space")
    if basis.n_sites != circuit.lattice.n_sites:
        raise BasisMismatchError("state and circuit lattice sizes differ")
    amps = psi0.amplitudes.copy()
    out = []
    for layer in circuit.layers:
        amps = _apply_layer(amps, basis, layer, circuit.two_qubit)
        out.append(StateVector(basis, amps.copy()))
    return out


def _check_device_inputs(circuit, psi0, h_res):
    if h_res.basis != psi0.basis:
        raise BasisMismatchError("residual Hamiltonian and state bases differ")
    if psi0.basis.n_total is not None:
        raise BasisMismatchError("device execution requires the full space")
    if psi0.basis.n_sites != circuit.lattice.n_sites:
        raise BasisMismatchError("state and circuit lattice sizes differ")


def run_device(circuit: CircuitSpec, psi0: StateVector, h_res: SparseHamiltonian,
               mode: ExecutionMode = ExecutionMode(),
               prop_cfg: engine.PropagatorConfig | None = None) -> list[StateVector]:
    """Gates interleaved with residual evolution for each layer duration.

    With compensate_diagonal the known detuning/anharmonicity phases are
    removed after each layer (exp(+i*2*pi*D*tau) with D the diagonal part),
    leaving only the hopping-induced error.
    """
    _check_device_inputs(circuit, psi0, h_res)
    tau = circuit.layer_duration_us
    basis = psi0.basis
    comp = None
    if mode.compensate_diagonal:
        comp = np.exp(2j * np.pi * h_res.diagonal * tau)
    prop = engine.BoundPropagator(h_res, prop_cfg)
    state = psi0
    out = []
    for layer in circuit.layers:
        amps = _apply_layer(state.amplitudes.copy(), basis, layer, circuit.two_qubit)
        state = prop.advance(StateVector(basis, amps), tau)
        if comp is not None:
            state = StateVector(basis, comp * state.amplitudes)
        out.append(state)
    return out


def _run_device_trajectory(circuit, psi0, h_res, mode, solver, rng, dt_us=None):
    """One stochastic trajectory of the device run (noise during the
    residual-evolution window of each layer, gates noiseless)."""
    _check_device_inputs(circuit, psi0, h_res)
    tau = circuit.layer_duration_us
    basis = psi0.basis
    comp = None
    if mode.compensate_diagonal:
        comp = np.exp(2j * np.pi * h_res.diagonal * tau)
    state = psi0
    out = []
    for layer in circuit.layers:
        amps = _apply_layer(state.amplitudes.copy(), basis, layer, circuit.two_qubit)
        state = solver.advance(StateVector(basis, amps), tau, rng, dt_us)
        if comp is not None:
            state = StateVector(basis, comp * state.amplitudes)
        out.append(state)
    return out


def xeb_fidelity_curve(circuit: CircuitSpec, psi0: StateVector,
                       h_res: SparseHamiltonian, mode: ExecutionMode = ExecutionMode(),
                       noise: "noise_mod.NoiseParams | None" = None,
                       n_traj: int = 1, dt_us: float | None = None,
                       prop_cfg: engine.PropagatorConfig | None = None):
    """Per-depth fidelity between the device run and the ideal circuit.

    Returns a list of (depth, mean_fidelity, standard_error) tuples; without
    noise the run is deterministic and the error is zero.
    """
    if n_traj < 1:
        raise ConfigError("n_traj must be >= 1")
    ideal = run_ideal(circuit, psi0)
    if noise is None:
        device = run_device(circuit, psi0, h_res, mode, prop_cfg)
        return [(k + 1, observable, 0.0) for k, observable in enumerate(
            float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)
            for a, b in zip(ideal, device))]
    seed = circuit.seed if circuit.seed is not None else 0
    jump_ops = noise_mod.jump_operators(noise, psi0.basis.n_sites, psi0.basis)
    fid = np.empty((n_traj, circuit.n_layers))
    for traj in range(n_traj):
        rng = _rng(seed, _TRAJ_STREAM_BASE + traj)
        solver = noise_mod.TrajectorySolver(h_res, noise, prop_cfg, jump_ops)
        states = _run_device_trajectory(circuit, psi0, h_res, mode, solver, rng,
                                        dt_us=dt_us)
        for k, (ref, dev) in enumerate(zip(ideal, states)):
            fid[traj, k] = abs(np.vdot(ref.amplitudes, dev.amplitudes)) ** 2
    means = fid.mean(axis=0)
    if n_traj > 1:
        stderr = fid.std(axis=0, ddof=1) / np.sqrt(n_traj)
    else:
        stderr = np.zeros(circuit.n_layers)
    return [(k + 1, float(means[k]), float(stderr[k]))
            for k in range(circuit.n_layers)]


def serialize_circuit(circuit: CircuitSpec) -> str:
    """One layer per line: `S 0:X 1:W ...; T (i,j) (k,l) ...`."""
    lines = []
    for layer in circuit.layers:
        gates = " ".join(f"{q}:{g.value}" for q, g in enumerate(layer.single_gates))
        pairs = " ".join(f"({a},{b})" for a, b in layer.pairs)
        lines.append(f"S {gates}; T {pairs}".rstrip())
    return "\n".join(lines) + "\n"


_PAIR_RE = re.compile(r"\((\d+),(\d+)\)")


def parse_circuit(text: str, spec: LatticeSpec,
                  layer_duration_us: float = 0.05) -> CircuitSpec:
    """Inverse of serialize_circuit; the seed is not part of the format."""
    letter_to_gate = {g.value: g for g in SingleGate}
    layers = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if not line.startswith("S "):
            raise ConfigError(f"line {lineno}: expected 'S' gate section")
        body = line[2:]
        gate_part, _, pair_part = body.partition(";")
        gates: dict[int, SingleGate] = {}
        for tok in gate_part.split():
            q, _, letter = tok.partition(":")
            gates[int(q)] = letter_to_gate[letter]
        if sorted(gates) != list(range(spec.n_sites)):
            raise ConfigError(f"line {lineno}: gate list does not cover all sites")
        pair_part = pair_part.strip()
        if pair_part and not pair_part.startswith("T"):
            raise ConfigError(f"line {lineno}: expected 'T' pair section")
        pairs = tuple((int(a), int(b))
                      for a, b in _PAIR_RE.findall(pair_part))
        layers.append(Layer(tuple(gates[q] for q in range(spec.n_sites)), pairs))
    return CircuitSpec(spec, tuple(layers), seed=None,
                       layer_duration_us=layer_duration_us)
