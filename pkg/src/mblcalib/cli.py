"""Experiment runner: structured JSON configs in, deterministic CSV out.

Three experiment modes:

* idle      -- no gates; fidelity/IPR/Renyi-2 of the Neel state vs time,
               one sweep per r value, in the half-filling number sector.
* xeb       -- seeded random circuits on the full space; per-depth fidelity
               between device and ideal runs, across r, noise level, seed.
* spectrum  -- mean adjacent-gap ratio of the sector spectrum per r value.

CSV schema (versioned in the leading comment line):
experiment,r,ns,seed,step,time_us,fidelity,ipr,renyi2,gap_ratio,stderr
"""

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import circuits, engine, lattice, model, noise, observables
from .errors import ConfigError, ConvergenceError, GuardError, MblCalibError

SCHEMA_VERSION = 1
CSV_COLUMNS = ("experiment", "r", "ns", "seed", "step", "time_us",
               "fidelity", "ipr", "renyi2", "gap_ratio", "stderr")
DEFAULT_R_GRID = (0.03, 0.05, 0.1, 0.3, 0.5, 1.0, 2.0)
DEFAULT_SEEDS = tuple(range(1, 11))
THREADS_ENV_VAR = "MBL_CALIB_THREADS"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_LATTICE_KEYS = {"kind", "rows", "cols"}
_MODEL_KEYS = {"h_mhz", "v_mhz", "local_dim", "alpha", "alpha_x", "alpha_y",
               "phi", "w_base_ghz"}
_TOP_KEYS = {"schema_version", "mode", "preset", "lattice", "model", "r_values",
             "ns_values", "n_layers", "tau_us", "horizon", "seeds", "n_traj",
             "bipartition", "include_nnn", "compensate_diagonal",
             "pairs_per_layer", "output_path", "threads"}
_MODES = ("idle", "xeb", "spectrum")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    lattice_kind: str = "chain"
    rows: int = 1
    cols: int = 16
    h_mhz: float = 5.0
    v_mhz: float = -200.0
    local_dim: int = 2
    alpha: float = model.GOLDEN_RATIO_CONJUGATE
    alpha_x: float = model.GOLDEN_RATIO_CONJUGATE
    alpha_y: float = model.SQRT7_CONJUGATE
    phi: float = 0.0
    w_base_ghz: float = 4.889
    r_values: tuple[float, ...] = DEFAULT_R_GRID
    ns_values: tuple[int, ...] = (0,)
    n_layers: int = 20
    tau_us: float = 0.05
    horizon: int = 50
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    n_traj: int = 200
    bipartition: tuple[int, ...] | None = None
    include_nnn: bool = False
    compensate_diagonal: bool = True
    pairs_per_layer: int = 4
    output_path: str | None = None
    threads: int = 1
    preset: str | None = None

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if not self.r_values:
            raise ConfigError("r_values must be nonempty")
        if any(r <= 0 for r in self.r_values):
            raise ConfigError("all r values must be positive")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.tau_us < 0:
            raise ConfigError("tau_us must be non-negative")
        if self.n_traj < 1:
            raise ConfigError("n_traj must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for ns in self.ns_values:
            noise.noise_from_ns(ns)

    def lattice_spec(self) -> lattice.LatticeSpec:
        if self.lattice_kind == "chain":
            return lattice.build_chain(self.cols)
        return lattice.build_grid(self.rows, self.cols)

    def model_params(self, r: float) -> model.ModelParams:
        return model.ModelParams(
            r=r, h_mhz=self.h_mhz, v_mhz=self.v_mhz, local_dim=self.local_dim,
            alpha=self.alpha, alpha_x=self.alpha_x, alpha_y=self.alpha_y,
            phi=self.phi, w_base_ghz=self.w_base_ghz)

    def potential(self, r: float, spec: lattice.LatticeSpec) -> model.SitePotential:
        params = self.model_params(r)
        if spec.kind == "chain":
            return model.quasiperiodic_potential_1d(
                params.w_mhz, params.alpha, params.phi, spec.n_sites)
        return model.quasiperiodic_potential_2d(
            params.w_mhz, params.alpha_x, params.alpha_y, spec)

    def edge_kinds(self) -> tuple[str, ...]:
        return (lattice.NN, lattice.NNN) if self.include_nnn else (lattice.NN,)

    def default_bipartition(self, spec: lattice.LatticeSpec) -> tuple[int, ...]:
        if self.bipartition is not None:
            return self.bipartition
        if spec.kind == "chain":
            return tuple(range(spec.n_sites // 2))
        half_cols = spec.n_cols // 2
        return tuple(i for i in range(spec.n_sites)
                     if i % spec.n_cols < half_cols)


def _mean_adjacent_potential_gap(n_sites: int, alpha: float, phi: float) -> float:
    vals = np.cos(2 * np.pi * alpha * np.arange(n_sites) + phi)
    return float(np.mean(np.abs(np.diff(vals))))


def load_preset(name: str) -> dict:
    """Config fragments for the four named parameter regimes.

    The hardware-like presets choose W (hence r = h/W) so that the average
    detuning difference between adjacent chain qubits lands near the target
    value (about 100 MHz google-like, about 500 MHz ibm-like).
    """
    golden = model.GOLDEN_RATIO_CONJUGATE
    if name == "paper-1d":
        return {
            "lattice": {"kind": "chain", "rows": 1, "cols": 16},
            "model": {"h_mhz": 5.0, "alpha": golden, "phi": 0.0,
                      "w_base_ghz": 4.889},
        }
    if name == "paper-2d":
        return {
            "lattice": {"kind": "grid", "rows": 4, "cols": 4},
            "model": {"h_mhz": 5.0, "alpha_x": golden,
                      "alpha_y": model.SQRT7_CONJUGATE, "phi": 0.0,
                      "w_base_ghz": 4.889},
        }
    if name in ("google-like", "ibm-like"):
        target = 100.0 if name == "google-like" else 500.0
        h = 5.0
        factor = _mean_adjacent_potential_gap(16, golden, 0.0)
        w = target / factor
        return {
            "lattice": {"kind": "chain", "rows": 1, "cols": 16},
            "model": {"h_mhz": h, "alpha": golden, "phi": 0.0,
                      "w_base_ghz": 4.889},
            "r_values": [h / w],
        }
    raise ConfigError(f"unknown preset {name!r}")


def _require_keys(section: dict, allowed: set, label: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown {label} key(s): {sorted(unknown)}")


def _expect(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def parse_config(doc: dict, mode: str | None = None) -> ExperimentConfig:
    """Validate a raw config document (strict: unknown keys are errors)."""
    _expect(isinstance(doc, dict), "config must be a JSON object")
    _require_keys(doc, _TOP_KEYS, "config")
    version = doc.get("schema_version", SCHEMA_VERSION)
    _expect(version == SCHEMA_VERSION,
            f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")

    merged: dict = {}
    preset = doc.get("preset")
    if preset is not None:
        fragment = load_preset(preset)
        for key, value in fragment.items():
            merged[key] = dict(value) if isinstance(value, dict) else value
    for key, value in doc.items():
        if key in ("schema_version", "preset"):
            continue
        if key in ("lattice", "model") and key in merged:
            merged[key].update(value)
        else:
            merged[key] = value

    doc_mode = merged.pop("mode", None)
    if mode is not None and doc_mode is not None and doc_mode != mode:
        raise ConfigError(f"config mode {doc_mode!r} conflicts with command {mode!r}")
    final_mode = mode or doc_mode
    _expect(final_mode is not None, "experiment mode is required")

    kwargs = {"mode": final_mode, "preset": preset}
    lat = merged.pop("lattice", None)
    if lat is not None:
        _expect(isinstance(lat, dict), "lattice must be an object")
        _require_keys(lat, _LATTICE_KEYS, "lattice")
        if "kind" in lat:
            kwargs["lattice_kind"] = lat["kind"]
        if "rows" in lat:
            kwargs["rows"] = int(lat["rows"])
        if "cols" in lat:
            kwargs["cols"] = int(lat["cols"])
    mdl = merged.pop("model", None)
    if mdl is not None:
        _expect(isinstance(mdl, dict), "model must be an object")
        _require_keys(mdl, _MODEL_KEYS, "model")
        for key in _MODEL_KEYS & set(mdl):
            kwargs[key] = int(mdl[key]) if key == "local_dim" else float(mdl[key])

    def _as_bool(value):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}")
        return value

    for key, caster in (("r_values", lambda v: tuple(float(x) for x in v)),
                        ("ns_values", lambda v: tuple(int(x) for x in v)),
                        ("seeds", lambda v: tuple(int(x) for x in v)),
                        ("bipartition", lambda v: tuple(int(x) for x in v)),
                        ("n_layers", int), ("horizon", int), ("n_traj", int),
                        ("pairs_per_layer", int), ("threads", int),
                        ("tau_us", float), ("include_nnn", _as_bool),
                        ("compensate_diagonal", _as_bool), ("output_path", str)):
        if key in merged:
            value = merged.pop(key)
            if value is None and key in ("bipartition", "output_path"):
                kwargs[key] = None
                continue
            try:
                kwargs[key] = caster(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid value for {key!r}: {exc}") from exc
    return ExperimentConfig(**kwargs)


def canonical_document(config: ExperimentConfig) -> dict:
    """Fully materialized nested form; parse(canonical(c)) == c."""
    return {
        "schema_version": SCHEMA_VERSION,
        "mode": config.mode,
        "lattice": {"kind": config.lattice_kind, "rows": config.rows,
                    "cols": config.cols},
        "model": {"h_mhz": config.h_mhz, "v_mhz": config.v_mhz,
                  "local_dim": config.local_dim, "alpha": config.alpha,
                  "alpha_x": config.alpha_x, "alpha_y": config.alpha_y,
                  "phi": config.phi, "w_base_ghz": config.w_base_ghz},
        "r_values": list(config.r_values),
        "ns_values": list(config.ns_values),
        "n_layers": config.n_layers,
        "tau_us": config.tau_us,
        "horizon": config.horizon,
        "seeds": list(config.seeds),
        "n_traj": config.n_traj,
        "bipartition": None if config.bipartition is None
        else list(config.bipartition),
        "include_nnn": config.include_nnn,
        "compensate_diagonal": config.compensate_diagonal,
        "pairs_per_layer": config.pairs_per_layer,
        "output_path": config.output_path,
        "threads": config.threads,
    }


def config_hash(config: ExperimentConfig) -> str:
    doc = canonical_document(config)
    doc.pop("output_path")  # the hash identifies the physics, not the file name
    doc.pop("threads")
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _row(experiment, r=None, ns=None, seed=None, step=None, time_us=None,
         fidelity=None, ipr=None, renyi2=None, gap_ratio=None, stderr=None):
    return {"experiment": experiment, "r": r, "ns": ns, "seed": seed,
            "step": step, "time_us": time_us, "fidelity": fidelity,
            "ipr": ipr, "renyi2": renyi2, "gap_ratio": gap_ratio,
            "stderr": stderr}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        if not np.isfinite(value):
            raise ConvergenceError(f"non-finite value in results: {value}")
        return format(value, ".12g")
    return str(value)


def write_csv(path, rows, config: ExperimentConfig):
    chash = config_hash(config)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# mbl-calib csv-schema={SCHEMA_VERSION} config_hash={chash}\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in CSV_COLUMNS) + "\n")


def write_summary(path, rows, config: ExperimentConfig, aggregates):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "mode": config.mode,
        "config_hash": config_hash(config),
        "config": canonical_document(config),
        "row_count": len(rows),
        "aggregates": aggregates,
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# idle


def idle_sweep(config: ExperimentConfig, r: float):
    """Fidelity/IPR/Renyi-2 of the Neel state at each step k*tau."""
    spec = config.lattice_spec()
    n = spec.n_sites
    basis = model.enumerate_basis(n, config.local_dim, n // 2)
    neel = model.neel_state(basis)
    part = observables.Bipartition(config.default_bipartition(spec))
    ham = model.build_hamiltonian(config.model_params(r), spec,
                                  config.potential(r, spec), basis,
                                  config.edge_kinds())
    rows = []
    state = neel
    for k in range(1, config.horizon + 1):
        state = engine.evolve(ham, state, config.tau_us)
        rows.append(_row(
            "idle", r=r, step=k, time_us=k * config.tau_us,
            fidelity=observables.fidelity(neel, state),
            ipr=observables.ipr(state),
            renyi2=observables.renyi2(state, part)))
    return rows


def run_idle(config: ExperimentConfig):
    rows = []
    for r in config.r_values:
        rows.extend(idle_sweep(config, r))
    terminal = [row for row in rows if row["step"] == config.horizon]
    aggregates = {"terminal": [
        {"r": row["r"], "fidelity": row["fidelity"], "ipr": row["ipr"],
         "renyi2": row["renyi2"]} for row in terminal]}
    return rows, aggregates


# ---------------------------------------------------------------------------
# xeb


def xeb_point(config: ExperimentConfig, r: float, ns: int, seed: int):
    """Fidelity curve of one (r, ns, seed) parameter point."""
    spec = config.lattice_spec()
    basis = model.enumerate_basis(spec.n_sites, config.local_dim, None)
    psi0 = model.basis_state(basis, [0] * spec.n_sites)
    ham = model.build_hamiltonian(config.model_params(r), spec,
                                  config.potential(r, spec), basis,
                                  config.edge_kinds())
    circuit = circuits.sample_xeb_circuit(
        spec, config.n_layers, seed, pairs_per_layer=config.pairs_per_layer,
        layer_duration_us=config.tau_us)
    params = noise.noise_from_ns(ns)
    mode = circuits.ExecutionMode("device", config.compensate_diagonal)
    n_traj = config.n_traj if params is not None else 1
    return circuits.xeb_fidelity_curve(circuit, psi0, ham, mode,
                                       noise=params, n_traj=n_traj)


def _xeb_task(doc_json: str, r: float, ns: int, seed: int):
    config = parse_config(json.loads(doc_json))
    return r, ns, seed, xeb_point(config, r, ns, seed)


def run_xeb(config: ExperimentConfig):
    tasks = [(r, ns, seed) for r in config.r_values
             for ns in config.ns_values for seed in config.seeds]
    doc_json = json.dumps(canonical_document(config))
    results = {}
    if config.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            futures = [pool.submit(_xeb_task, doc_json, *task) for task in tasks]
            for fut in futures:
                r, ns, seed, curve = fut.result()
                results[(r, ns, seed)] = curve
    else:
        for task in tasks:
            r, ns, seed, curve = _xeb_task(doc_json, *task)
            results[(r, ns, seed)] = curve

    rows = []
    for (r, ns, seed) in tasks:
        for depth, mean, stderr in results[(r, ns, seed)]:
            rows.append(_row("xeb", r=r, ns=ns, seed=seed, step=depth,
                             time_us=depth * config.tau_us,
                             fidelity=mean, stderr=stderr))
    # seed-averaged summary rows
    aggregates = {"final_depth": []}
    for r in config.r_values:
        for ns in config.ns_values:
            curves = np.array([[f for (_, f, _) in results[(r, ns, s)]]
                               for s in config.seeds])
            means = curves.mean(axis=0)
            if len(config.seeds) > 1:
                errs = curves.std(axis=0, ddof=1) / np.sqrt(len(config.seeds))
            else:
                errs = np.zeros(config.n_layers)
            for k in range(config.n_layers):
                rows.append(_row("xeb_mean", r=r, ns=ns, step=k + 1,
                                 time_us=(k + 1) * config.tau_us,
                                 fidelity=float(means[k]), stderr=float(errs[k])))
            aggregates["final_depth"].append(
                {"r": r, "ns": ns, "mean_fidelity": float(means[-1]),
                 "stderr": float(errs[-1])})
    return rows, aggregates


# ---------------------------------------------------------------------------
# spectrum


def run_spectrum(config: ExperimentConfig):
    spec = config.lattice_spec()
    n = spec.n_sites
    basis = model.enumerate_basis(n, config.local_dim, n // 2)
    rows = []
    for r in config.r_values:
        ham = model.build_hamiltonian(config.model_params(r), spec,
                                      config.potential(r, spec), basis,
                                      config.edge_kinds())
        stats = observables.gap_ratio(ham)
        rows.append(_row("spectrum", r=r, gap_ratio=stats.mean_gap_ratio))
    aggregates = {"gap_ratios": [
        {"r": row["r"], "gap_ratio": row["gap_ratio"]} for row in rows]}
    return rows, aggregates


_RUNNERS = {"idle": run_idle, "xeb": run_xeb, "spectrum": run_spectrum}


def run_experiment(config: ExperimentConfig, out_path: str):
    rows, aggregates = _RUNNERS[config.mode](config)
    write_csv(out_path, rows, config)
    write_summary(out_path + ".summary.json", rows, config, aggregates)
    return len(rows)


def _build_argparser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbl-calib",
        description="Bose-Hubbard MBL calibration experiments")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in _MODES:
        p = sub.add_parser(mode, help=f"run the {mode} experiment")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", help="named parameter preset")
        p.add_argument("--out", help="output CSV path")
        p.add_argument("--threads", type=int, help="worker pool size")
    return parser


def main(argv=None) -> int:
    args = _build_argparser().parse_args(argv)
    try:
        doc = {}
        if args.config:
            try:
                with open(args.config, "r", encoding="utf-8") as fh:
                    doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if args.preset:
            doc["preset"] = args.preset
        config = parse_config(doc, mode=args.mode)
        threads = config.threads
        if args.threads is not None:
            threads = args.threads
        env_threads = os.environ.get(THREADS_ENV_VAR)
        if env_threads is not None:
            try:
                threads = int(env_threads)
            except ValueError as exc:
                raise ConfigError(
                    f"{THREADS_ENV_VAR} must be an integer: {env_threads!r}") from exc
        if threads != config.threads:
            doc_full = canonical_document(config)
            doc_full["threads"] = threads
            config = parse_config(doc_full)
        out_path = args.out or config.output_path or f"{config.mode}_results.csv"
        n_rows = run_experiment(config, out_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GuardError, ConvergenceError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MblCalibError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {n_rows} rows to {out_path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
