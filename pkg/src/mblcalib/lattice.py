"""Qubit connectivity: open 1D chains and 2D grids with NN/NNN edge sets.

Sites are indexed 0..n_sites-1 in row-major order. Edges are undirected,
stored once with i < j, and returned sorted, so identical lattice parameters
always produce identical edge lists.
"""

from dataclasses import dataclass
from typing import NamedTuple

from .errors import ConfigError

NN = "NN"
NNN = "NNN"


class Edge(NamedTuple):
    i: int
    j: int
    kind: str


@dataclass(frozen=True)
class LatticeSpec:
    """Connectivity graph of the qubit array.

    kind is "chain" (n_rows == 1) or "grid". NN edges connect sites at
    Manhattan distance 1; NNN edges are diagonal neighbours on grids and
    distance-2 pairs on chains.
    """

    kind: str
    n_rows: int
    n_cols: int

    def __post_init__(self):
        if self.kind not in ("chain", "grid"):
            raise ConfigError(f"unknown lattice kind {self.kind!r}")
        if self.kind == "chain" and self.n_rows != 1:
            raise ConfigError("chain lattices must have n_rows == 1")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ConfigError("lattice dimensions must be positive")

    @property
    def n_sites(self) -> int:
        return self.n_rows * self.n_cols


def build_chain(n_sites: int) -> LatticeSpec:
    """Open chain of n_sites qubits (n_sites >= 2)."""
    if n_sites < 2:
        raise ConfigError(f"chain needs at least 2 sites, got {n_sites}")
    return LatticeSpec("chain", 1, n_sites)


def build_grid(rows: int, cols: int) -> LatticeSpec:
    """Open rows x cols grid, row-major site indexing (both dims >= 2)."""
    if rows < 2 or cols < 2:
        raise ConfigError(f"grid needs both dimensions >= 2, got {rows}x{cols}")
    return LatticeSpec("grid", rows, cols)


def site_coords(spec: LatticeSpec, i: int) -> tuple[int, int]:
    """(row, col) of site i under row-major indexing."""
    if not 0 <= i < spec.n_sites:
        raise ConfigError(f"site index {i} out of range for {spec.n_sites} sites")
    return divmod(i, spec.n_cols)


def site_index(spec: LatticeSpec, row: int, col: int) -> int:
    """Inverse of site_coords."""
    if not (0 <= row < spec.n_rows and 0 <= col < spec.n_cols):
        raise ConfigError(f"coordinates ({row},{col}) outside {spec.n_rows}x{spec.n_cols}")
    return row * spec.n_cols + col


def edges(spec: LatticeSpec, kind: str = NN) -> list[Edge]:
    """All edges of the given kind, sorted by (i, j), each pair listed once."""
    if kind not in (NN, NNN):
        raise ConfigError(f"unknown edge kind {kind!r}")
    out: list[Edge] = []
    if spec.kind == "chain":
        step = 1 if kind == NN else 2
        out = [Edge(i, i + step, kind) for i in range(spec.n_sites - step)]
        return out
    r, c = spec.n_rows, spec.n_cols
    if kind == NN:
        for row in range(r):
            for col in range(c):
                i = row * c + col
                if col + 1 < c:
                    out.append(Edge(i, i + 1, kind))
                if row + 1 < r:
                    out.append(Edge(i, i + c, kind))
    else:
        for row in range(r - 1):
            for col in range(c):
                i = row * c + col
                if col + 1 < c:
                    out.append(Edge(i, i + c + 1, kind))
                if col > 0:
                    out.append(Edge(min(i, i + c - 1), max(i, i + c - 1), kind))
    out.sort()
    return out
