"""Command-line driver: configuration, runs, sweeps, and file outputs.

Every command reads a single JSON configuration document (``--config``),
over which individual keys can be overridden from the command line
(``--set key=value`` and a few dedicated flags).  Each run writes its
outputs into one directory together with a ``manifest.json`` recording the
fully-merged configuration, the code version, the precision, and the
seeds, so a run can be reproduced bit-for-bit.  No output contains
timestamps: identical configurations produce byte-identical files.

Exit codes: 0 success, 2 configuration error, 3 memory-budget refusal,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .beams_metrics import BeamSpec, beam_drive, collect_metrics, target_mode
from .collective2d import LatticeConstants
from .disorder import METALENS_DISORDER_PREFACTOR, DisorderSpec, displace, predicted_gamma_dis
from .errors import ConfigError, MemoryBudgetError, NumericalError
from .greens import EmitterRates
from .metalens import (
    DEFAULT_D_MIN,
    EmitterEnsemble,
    MetalensParams,
    assemble_metalens,
    build_rings,
    load_design,
    save_design,
)
from .multilayer import build_phase_table
from .optimize import PsoConfig, optimize_lens, save_optimization_log, save_optimum
from .solver import field_map, memory_estimate, save_field_map, solve_dipoles

__all__ = [
    "RunConfig",
    "cmd_design",
    "cmd_simulate",
    "cmd_scan_detuning",
    "cmd_scan_magnification",
    "cmd_gamma_sweep",
    "cmd_disorder_sweep",
    "cmd_optimize",
    "main",
]

_COMMON_KEYS = {"output", "precision", "budget_fraction", "seed", "parallel"}
_LENS_KEYS = {"f", "r_lens", "delta_r", "phi0", "alpha", "d_min", "gamma_prime"}
_LENS_REQUIRED = {"f", "r_lens", "delta_r", "phi0", "alpha"}
_PSO_KEYS = {
    "swarm_size",
    "iterations",
    "inertia",
    "cognitive",
    "social",
    "seed",
    "phi0_bounds",
    "delta_r_bounds",
    "alpha_bounds",
}

_KNOWN_KEYS: Dict[str, set] = {
    "design": _COMMON_KEYS | _LENS_KEYS,
    "simulate": _COMMON_KEYS
    | _LENS_KEYS
    | {"design", "w0", "delta", "field_maps", "extent", "z_range", "spacing"},
    "scan-detuning": _COMMON_KEYS
    | _LENS_KEYS
    | {"design", "w0", "deltas", "delta_min", "delta_max", "n_delta"},
    "scan-magnification": _COMMON_KEYS
    | _LENS_KEYS
    | {"w0", "f_list", "optimize", "fidelity", "pso"},
    "gamma-sweep": _COMMON_KEYS
    | _LENS_KEYS
    | {"design", "w0", "gamma_list", "gamma_min", "gamma_max", "n_gamma"},
    "disorder-sweep": _COMMON_KEYS
    | _LENS_KEYS
    | {"design", "w0", "delta_d_list", "n_configs", "gamma_sweep"},
    "optimize": _COMMON_KEYS | {"f", "r_lens", "w0", "d_min", "gamma_prime", "fidelity", "pso"},
}

_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "design": {"d_min": DEFAULT_D_MIN, "gamma_prime": 0.0},
    "simulate": {
        "d_min": DEFAULT_D_MIN,
        "gamma_prime": 0.0,
        "delta": 0.0,
        "field_maps": ["y=0", "z=z_f"],
        "spacing": 0.125,
    },
    "scan-detuning": {"d_min": DEFAULT_D_MIN, "gamma_prime": 0.0},
    "scan-magnification": {
        "d_min": DEFAULT_D_MIN,
        "gamma_prime": 0.0,
        "optimize": False,
        "fidelity": "table-model",
        "pso": {},
    },
    "gamma-sweep": {"d_min": DEFAULT_D_MIN, "gamma_prime": 0.0},
    "disorder-sweep": {"d_min": DEFAULT_D_MIN, "gamma_prime": 0.0, "n_configs": 10},
    "optimize": {
        "d_min": DEFAULT_D_MIN,
        "gamma_prime": 0.0,
        "fidelity": "table-model",
        "pso": {},
    },
}


@dataclass(frozen=True)
class RunConfig:
    """One validated run: command, merged key-value map, and common fields."""

    command: str
    values: Mapping[str, Any]
    output_dir: Path
    precision: str
    budget_fraction: float
    seed: int
    parallel: int

    @classmethod
    def build(
        cls,
        command: str,
        config_file: Optional[str] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        if command not in _KNOWN_KEYS:
            raise ConfigError(f"unknown command {command!r}")
        user: Dict[str, Any] = {}
        if config_file is not None:
            try:
                with open(config_file) as fh:
                    loaded = json.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config file: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
            if not isinstance(loaded, dict):
                raise ConfigError("config file must contain a JSON object")
            user.update(loaded)
        if overrides:
            user.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(user) - _KNOWN_KEYS[command]
        if unknown:
            raise ConfigError(
                f"unknown configuration keys for {command}: {sorted(unknown)}"
            )
        if command != "design" and "design" in user and (set(user) & _LENS_REQUIRED):
            raise ConfigError(
                "give either a 'design' directory to load or inline lens "
                "parameters, not both"
            )
        values: Dict[str, Any] = dict(_DEFAULTS[command])
        values.update(user)
        values.setdefault("precision", "double")
        values.setdefault("budget_fraction", 0.75)
        values.setdefault("seed", 0)
        values.setdefault("parallel", 1)
        if "output" not in values:
            raise ConfigError("an output directory is required ('output' key or --output)")
        precision = values["precision"]
        if precision not in ("double", "single"):
            raise ConfigError(f"precision must be 'double' or 'single', got {precision!r}")
        budget = float(values["budget_fraction"])
        if not 0.0 < budget <= 1.0:
            raise ConfigError(f"budget_fraction must lie in (0, 1], got {budget}")
        seed = values["seed"]
        if int(seed) != seed:
            raise ConfigError(f"seed must be an integer, got {seed!r}")
        parallel = values["parallel"]
        if int(parallel) != parallel or parallel < 1:
            raise ConfigError(f"parallel must be a positive integer, got {parallel!r}")
        return cls(
            command=command,
            values=values,
            output_dir=Path(values["output"]),
            precision=precision,
            budget_fraction=budget,
            seed=int(seed),
            parallel=int(parallel),
        )

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def require(self, key: str) -> Any:
        if key not in self.values or self.values[key] is None:
            raise ConfigError(f"configuration key {key!r} is required for {self.command}")
        return self.values[key]


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_manifest(cfg: RunConfig) -> None:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": cfg.command,
        "code_version": __version__,
        "precision": cfg.precision,
        "seed": cfg.seed,
        "budget_fraction": cfg.budget_fraction,
        "parallel": cfg.parallel,
        "config": _jsonable(dict(cfg.values)),
    }
    with open(cfg.output_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


_SWEEP_UNIT_NOTE = (
    "# lengths in wavelength units; rates and detunings in single-emitter "
    "linewidth units; efficiencies dimensionless\n"
)


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_SWEEP_UNIT_NOTE)
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [f"{v:.12g}" if isinstance(v, float) else v for v in row]
            )


def _read_csv(path: Path) -> Tuple[List[str], np.ndarray]:
    """Read one of this package's CSVs: comment lines, a column row, data."""
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ConfigError(f"{path} contains no data")
    columns = [c.strip() for c in lines[0].split(",")]
    data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    return columns, data


def _lens_params(cfg: RunConfig) -> MetalensParams:
    for key in sorted(_LENS_REQUIRED):
        cfg.require(key)
    return MetalensParams(
        f=float(cfg.get("f")),
        r_lens=float(cfg.get("r_lens")),
        delta_r=float(cfg.get("delta_r")),
        phi0=float(cfg.get("phi0")),
        alpha=float(cfg.get("alpha")),
        d_min=float(cfg.get("d_min")),
        gamma_prime=float(cfg.get("gamma_prime")),
    )


def _ensemble(cfg: RunConfig) -> Tuple[EmitterEnsemble, Dict[str, float]]:
    """The emitter ensemble of this run plus its lens parameters as a dict."""
    design_dir = cfg.get("design")
    if design_dir is not None:
        ens, meta = load_design(design_dir)
        return ens, dict(meta["params"])
    params = _lens_params(cfg)
    ens = assemble_metalens(params)
    return ens, {
        "f": params.f,
        "r_lens": params.r_lens,
        "delta_r": params.delta_r,
        "phi0": params.phi0,
        "alpha": params.alpha,
        "d_min": params.d_min,
        "gamma_prime": params.gamma_prime,
    }


def _solve_metrics(
    cfg: RunConfig,
    ens: EmitterEnsemble,
    w0: float,
    f: float,
    delta: float = 0.0,
    gamma_prime: Optional[float] = None,
    seed: Optional[int] = None,
) -> dict:
    rates = None if gamma_prime is None else EmitterRates(gamma_prime=gamma_prime)
    sol = solve_dipoles(
        ens,
        drive=beam_drive(BeamSpec(w0)),
        delta=delta,
        precision=cfg.precision,
        budget_fraction=cfg.budget_fraction,
        rates=rates,
    )
    reported_gp = ens.rates.gamma_prime if gamma_prime is None else gamma_prime
    return collect_metrics(
        ens, sol, target_mode(w0, f), w0, gamma_prime=reported_gp, seed=seed
    )


def _map_points(fn: Callable, items: Sequence, parallel: int) -> list:
    if parallel <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(fn, items))


def _float_list(cfg: RunConfig, key: str) -> List[float]:
    raw = cfg.require(key)
    if not isinstance(raw, (list, tuple)) or not raw:
        raise ConfigError(f"{key} must be a non-empty list of numbers")
    return [float(v) for v in raw]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_design(cfg: RunConfig) -> int:
    """Build a lens design and write its positions and metadata."""
    params = _lens_params(cfg)
    table = build_phase_table(d_min=params.d_min)
    rings = build_rings(params, table)
    ens = assemble_metalens(params, table)
    save_design(cfg.output_dir, ens, params, rings)
    _write_manifest(cfg)
    n = ens.n_atoms
    if n == 0:
        print(
            "warning: every ring phase falls in the unreachable band; "
            "the design is empty",
            file=sys.stderr,
        )
    n_buffer = int(np.sum(ens.buffer_mask))
    est = memory_estimate(n, cfg.precision)
    print(f"N = {n} emitters ({n_buffer} buffer)")
    print(
        f"full-system solve estimate ({cfg.precision}): "
        f"{est / 1e9:.3g} GB for {n} unknowns"
    )
    if ens.symmetric and n:
        reduced = _reduced_count(ens)
        est_r = memory_estimate(reduced, cfg.precision)
        print(
            f"mirror-reduced solve estimate ({cfg.precision}): "
            f"{est_r / 1e9:.3g} GB for {reduced} unknowns"
        )
    return 0


def _reduced_count(ens: EmitterEnsemble) -> int:
    from .solver import _mirror_orbits

    rep_pos, _, _ = _mirror_orbits(ens.positions)
    return len(rep_pos)


def _plane_file_name(plane: str) -> str:
    return "field_" + plane.replace(" ", "").replace("=", "").replace(".", "p").replace(
        "-", "m"
    )


def cmd_simulate(cfg: RunConfig) -> int:
    """Solve one configuration: metrics JSON plus field-map CSVs."""
    ens, params = _ensemble(cfg)
    w0 = float(cfg.require("w0"))
    delta = float(cfg.get("delta"))
    target = target_mode(w0, params["f"])
    sol = solve_dipoles(
        ens,
        drive=beam_drive(BeamSpec(w0)),
        delta=delta,
        precision=cfg.precision,
        budget_fraction=cfg.budget_fraction,
    )
    metrics = collect_metrics(
        ens,
        sol,
        target,
        w0,
        gamma_prime=ens.rates.gamma_prime,
        seed=cfg.seed,
    )
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    metrics["delta"] = delta
    with open(cfg.output_dir / "metrics.json", "w") as fh:
        json.dump(_jsonable(metrics), fh, indent=2, sort_keys=True)
        fh.write("\n")

    half_width = cfg.get("extent")
    if half_width is None:
        half_width = max(params["r_lens"] + 1.0, 2.0 * w0)
    half_width = float(half_width)
    z_range = cfg.get("z_range")
    if z_range is None:
        z_range = (-2.0, target.z_f + 4.0)
    z_range = (float(z_range[0]), float(z_range[1]))
    spacing = float(cfg.get("spacing"))

    for plane in cfg.get("field_maps"):
        plane = str(plane).replace("z_f", f"{target.z_f:.6g}")
        if plane.startswith("z="):
            extent: Any = half_width
        else:
            extent = ((-half_width, half_width), z_range)
        fmap = field_map(ens, sol, plane, extent, spacing=spacing)
        save_field_map(cfg.output_dir, _plane_file_name(plane), fmap)
    _write_manifest(cfg)
    print(
        f"eta = {metrics['eta']:.6g}  epsilon = {metrics['epsilon']:.6g}  "
        f"eta_tilde = {metrics['eta_tilde']:.6g}  (N = {metrics['N']})"
    )
    return 0


def _delta_grid(cfg: RunConfig) -> List[float]:
    if cfg.get("deltas") is not None:
        return _float_list(cfg, "deltas")
    lo = float(cfg.require("delta_min"))
    hi = float(cfg.require("delta_max"))
    n = int(cfg.require("n_delta"))
    if n < 2 or hi <= lo:
        raise ConfigError("detuning grid needs delta_min < delta_max and n_delta >= 2")
    return list(np.linspace(lo, hi, n))


def cmd_scan_detuning(cfg: RunConfig) -> int:
    """Sweep the drive detuning; one fresh solve per point."""
    ens, params = _ensemble(cfg)
    w0 = float(cfg.require("w0"))
    deltas = _delta_grid(cfg)

    def point(delta: float) -> list:
        m = _solve_metrics(cfg, ens, w0, params["f"], delta=delta, seed=cfg.seed)
        return [float(delta), m["eta"], m["epsilon"], m["eta_tilde"]]

    rows = _map_points(point, deltas, cfg.parallel)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        cfg.output_dir / "detuning_scan.csv",
        ["delta", "eta", "epsilon", "eta_tilde"],
        rows,
    )
    _write_manifest(cfg)
    print(f"wrote {len(rows)} detunings to detuning_scan.csv")
    return 0


def cmd_scan_magnification(cfg: RunConfig) -> int:
    """Sweep the focal length; optionally re-optimize the lens per point."""
    w0 = float(cfg.require("w0"))
    f_list = _float_list(cfg, "f_list")
    for key in ("r_lens",):
        cfg.require(key)
    d_min = float(cfg.get("d_min"))
    gamma_prime = float(cfg.get("gamma_prime"))
    do_optimize = bool(cfg.get("optimize"))
    if not do_optimize:
        for key in ("delta_r", "phi0", "alpha"):
            cfg.require(key)
    table = build_phase_table(d_min=d_min)
    rows = []
    for f in f_list:
        if do_optimize:
            pso = _pso_config(cfg)
            best = optimize_lens(
                {
                    "f": f,
                    "r_lens": float(cfg.get("r_lens")),
                    "w0": w0,
                    "d_min": d_min,
                    "gamma_prime": gamma_prime,
                },
                pso,
                fidelity=str(cfg.get("fidelity")),
                table=table,
                precision=cfg.precision,
            )
            triple = (best.phi0, best.delta_r, best.alpha)
        else:
            triple = (
                float(cfg.get("phi0")),
                float(cfg.get("delta_r")),
                float(cfg.get("alpha")),
            )
        params = MetalensParams(
            f=f,
            r_lens=float(cfg.get("r_lens")),
            delta_r=triple[1],
            phi0=triple[0],
            alpha=triple[2],
            d_min=d_min,
            gamma_prime=gamma_prime,
        )
        ens = assemble_metalens(params, table)
        m = _solve_metrics(cfg, ens, w0, f, seed=cfg.seed)
        rows.append(
            [
                float(f),
                m["M"],
                m["eta"],
                m["epsilon"],
                m["eta_tilde"],
                triple[0],
                triple[1],
                triple[2],
                m["N"],
            ]
        )
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        cfg.output_dir / "magnification_scan.csv",
        ["f", "magnification", "eta", "epsilon", "eta_tilde", "phi0", "delta_r", "alpha", "n_atoms"],
        rows,
    )
    _write_manifest(cfg)
    print(f"wrote {len(rows)} focal lengths to magnification_scan.csv")
    return 0


def _gamma_grid(cfg: RunConfig) -> List[float]:
    if cfg.get("gamma_list") is not None:
        values = _float_list(cfg, "gamma_list")
        if any(g < 0 for g in values):
            raise ConfigError("gamma_list entries must be non-negative")
        return values
    lo = float(cfg.require("gamma_min"))
    hi = float(cfg.require("gamma_max"))
    n = int(cfg.require("n_gamma"))
    if lo <= 0 or hi <= lo or n < 2:
        raise ConfigError(
            "log-spaced broadening grid needs 0 < gamma_min < gamma_max and n_gamma >= 2"
        )
    return list(np.geomspace(lo, hi, n))


def cmd_gamma_sweep(cfg: RunConfig) -> int:
    """Sweep the extra single-emitter broadening on a fixed geometry."""
    ens, params = _ensemble(cfg)
    w0 = float(cfg.require("w0"))
    gammas = _gamma_grid(cfg)

    def point(gamma: float) -> list:
        m = _solve_metrics(cfg, ens, w0, params["f"], gamma_prime=gamma, seed=cfg.seed)
        return [float(gamma), m["eta"], m["epsilon"], m["eta_tilde"]]

    rows = _map_points(point, gammas, cfg.parallel)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        cfg.output_dir / "gamma_sweep.csv",
        ["gamma_prime", "eta", "epsilon", "eta_tilde"],
        rows,
    )
    _write_manifest(cfg)
    print(f"wrote {len(rows)} broadening values to gamma_sweep.csv")
    return 0


def _disorder_prediction(
    cfg: RunConfig, delta_d_list: Sequence[float], d_min: float, gamma_prime: float
) -> Optional[Dict[str, np.ndarray]]:
    """Map a broadening sweep onto predicted disorder curves, if requested."""
    sweep_path = cfg.get("gamma_sweep")
    if sweep_path is None:
        return None
    columns, data = _read_csv(Path(sweep_path))
    if "gamma_prime" not in columns:
        raise ConfigError(f"{sweep_path} lacks a gamma_prime column")
    gamma_axis = data[:, columns.index("gamma_prime")]
    if np.any(gamma_axis <= 0) or len(gamma_axis) < 2:
        raise ConfigError(
            "the broadening sweep used for the disorder overlay needs at least "
            "two positive gamma_prime points"
        )
    lat = LatticeConstants(d_min, d_min)
    total = np.array(
        [
            gamma_prime
            + METALENS_DISORDER_PREFACTOR * predicted_gamma_dis(dd, lat)
            for dd in delta_d_list
        ]
    )
    log_axis = np.log10(gamma_axis)
    out: Dict[str, np.ndarray] = {}
    for name in ("eta", "epsilon", "eta_tilde"):
        if name in columns:
            out[name + "_predicted"] = np.interp(
                np.log10(np.maximum(total, gamma_axis[0])),
                log_axis,
                data[:, columns.index(name)],
            )
    return out


def cmd_disorder_sweep(cfg: RunConfig) -> int:
    """Average metrics over random position displacements per disorder radius."""
    ens, params = _ensemble(cfg)
    w0 = float(cfg.require("w0"))
    delta_d_list = _float_list(cfg, "delta_d_list")
    if any(dd < 0 for dd in delta_d_list):
        raise ConfigError("delta_d_list entries must be non-negative")
    n_configs = int(cfg.get("n_configs"))
    if n_configs < 1:
        raise ConfigError(f"n_configs must be positive, got {n_configs}")

    rows = []
    for delta_d in delta_d_list:
        spec = DisorderSpec(delta_d=delta_d, seed=cfg.seed)
        reps = 1 if delta_d == 0.0 else n_configs

        def one(index: int) -> Tuple[float, float, float]:
            shaken = displace(ens, spec, config_index=index)
            m = _solve_metrics(cfg, shaken, w0, params["f"], seed=cfg.seed)
            return m["eta"], m["epsilon"], m["eta_tilde"]

        samples = np.array(_map_points(one, range(reps), cfg.parallel))
        if reps == 1:
            samples = np.repeat(samples, 2, axis=0)  # std exactly 0 for the clean point
        mean = samples.mean(axis=0)
        std = samples.std(axis=0, ddof=1)
        rows.append(
            [
                float(delta_d),
                float(mean[0]),
                float(std[0]),
                float(mean[1]),
                float(std[1]),
                float(mean[2]),
                float(std[2]),
                reps,
                cfg.seed,
            ]
        )

    columns = [
        "delta_d",
        "eta_mean",
        "eta_std",
        "eps_mean",
        "eps_std",
        "eta_tilde_mean",
        "eta_tilde_std",
        "n_configs",
        "seed0",
    ]
    predicted = _disorder_prediction(
        cfg, delta_d_list, params["d_min"], params["gamma_prime"]
    )
    if predicted is not None:
        for name, values in sorted(predicted.items()):
            columns.append(name)
            for row, value in zip(rows, values):
                row.append(float(value))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(cfg.output_dir / "disorder_sweep.csv", columns, rows)
    _write_manifest(cfg)
    print(f"wrote {len(rows)} disorder radii to disorder_sweep.csv")
    return 0


def _pso_config(cfg: RunConfig) -> PsoConfig:
    pso = dict(cfg.get("pso") or {})
    unknown = set(pso) - _PSO_KEYS
    if unknown:
        raise ConfigError(f"unknown pso keys: {sorted(unknown)}")
    pso.setdefault("seed", cfg.seed)
    for key in ("phi0_bounds", "delta_r_bounds", "alpha_bounds"):
        if key in pso:
            pso[key] = tuple(float(v) for v in pso[key])
    return PsoConfig(**pso)


def cmd_optimize(cfg: RunConfig) -> int:
    """Run the particle-swarm search and write its log and best triple."""
    fixed = {
        "f": float(cfg.require("f")),
        "r_lens": float(cfg.require("r_lens")),
        "w0": float(cfg.require("w0")),
        "d_min": float(cfg.get("d_min")),
        "gamma_prime": float(cfg.get("gamma_prime")),
    }
    pso = _pso_config(cfg)
    table = build_phase_table(d_min=fixed["d_min"])
    result = optimize_lens(
        fixed, pso, fidelity=str(cfg.get("fidelity")), table=table, precision=cfg.precision
    )
    save_optimization_log(cfg.output_dir, "optimization_log", result)
    save_optimum(cfg.output_dir, "best", result, fixed)
    _write_manifest(cfg)
    print(
        f"best: phi0 = {result.phi0:.6g}, delta_r = {result.delta_r:.6g}, "
        f"alpha = {result.alpha:.6g}, eta = {result.eta:.6g} ({result.fidelity})"
    )
    return 0


_DISPATCH: Dict[str, Callable[[RunConfig], int]] = {
    "design": cmd_design,
    "simulate": cmd_simulate,
    "scan-detuning": cmd_scan_detuning,
    "scan-magnification": cmd_scan_magnification,
    "gamma-sweep": cmd_gamma_sweep,
    "disorder-sweep": cmd_disorder_sweep,
    "optimize": cmd_optimize,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _parse_set(pairs: Sequence[str]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atomlens",
        description="Design, simulate, and optimize three-layer emitter metalenses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in _DISPATCH:
        p = sub.add_parser(command, help=f"run the {command} command")
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--output", help="output directory (overrides the config)")
        p.add_argument(
            "--precision", choices=("double", "single"), help="solver precision"
        )
        p.add_argument("--seed", type=int, help="base random seed")
        p.add_argument(
            "--budget-fraction",
            type=float,
            dest="budget_fraction",
            help="fraction of system memory a solve may claim",
        )
        p.add_argument(
            "--parallel", type=int, help="worker threads for sweep points (default 1)"
        )
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one configuration key (JSON-parsed value); repeatable",
        )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        overrides = _parse_set(args.set)
        for key in ("output", "precision", "seed", "budget_fraction", "parallel"):
            value = getattr(args, key)
            if value is not None:
                overrides[key] = value
        cfg = RunConfig.build(args.command, args.config, overrides)
        return _DISPATCH[cfg.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except MemoryBudgetError as exc:
        print(f"memory budget refusal: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
