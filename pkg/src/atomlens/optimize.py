"""Particle-swarm search over the free lens parameters (phi0, delta_r, alpha).

The optimizer maximizes the focusing efficiency ``eta`` of a ring lens at
fixed ``f``, ``r_lens``, ``w0``, ``d_min``, and ``gamma_prime``.  Two
objective fidelities are offered:

``"table-model"``
    A fast ring-resolved model: the lens plane is treated as a piecewise
    transmission mask whose value on each ring is the tabulated three-layer
    transmission of the nearest realizable design, and ``eta`` is the
    squared overlap of the masked input beam with the ideal focused mode.
    No emitter ensemble is ever assembled.

``"full-solve"``
    The swarm explores with the table model, then the few best candidates
    are re-ranked by assembling the full ensemble and solving the coupled
    dipole equations.  This keeps the expensive solves out of the inner
    loop while scoring the winner at full fidelity.

The swarm itself is a standard global-best particle swarm.  ``phi0`` is a
periodic coordinate (differences and positions wrap on the circle); the
other two parameters are clamped to their bounds, zeroing the velocity
component on contact.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson

from .beams_metrics import BeamSpec, beam_drive, efficiency_eta, gaussian_field, target_field, target_mode
from .errors import ConfigError, MemoryBudgetError, NumericalError
from .metalens import DEFAULT_D_MIN, MetalensParams, assemble_metalens, ring_layout, wrap_phase
from .multilayer import PhaseTable, build_phase_table, nearest_row, phase_in_gap, table_transmission
from .solver import solve_dipoles

__all__ = [
    "PsoConfig",
    "OptimizationResult",
    "ring_transmissions",
    "table_model_eta",
    "full_solve_eta",
    "optimize_lens",
    "save_optimization_log",
    "save_optimum",
]

_FIDELITIES = ("table-model", "full-solve")
_FIXED_KEYS = ("f", "r_lens", "w0", "d_min", "gamma_prime")
_RERANK_SUCCESSES = 3
_RERANK_MAX_ATTEMPTS = 8
_NODES_PER_RING = 65
_NODES_TAIL = 257


@dataclass(frozen=True)
class PsoConfig:
    """Hyperparameters and search bounds of the particle swarm.

    Attributes
    ----------
    swarm_size:
        Number of particles (at least 5).
    iterations:
        Number of swarm sweeps; every particle is scored once per sweep,
        so the total objective-evaluation budget is exactly
        ``swarm_size * iterations``.
    inertia, cognitive, social:
        Velocity-update coefficients ``v <- inertia*v + cognitive*u1*(pbest-x)
        + social*u2*(gbest-x)`` with fresh uniform draws ``u1, u2`` per
        particle, sweep, and coordinate.
    seed:
        Seeds the per-particle random streams; a fixed seed reproduces the
        full trajectory.
    phi0_bounds:
        Search interval for the global phase offset.  The default spans the
        whole circle, in which case ``phi0`` is treated as periodic; a
        narrower interval is treated as a clamped box like the others.
    delta_r_bounds, alpha_bounds:
        Clamped search intervals for the ring width and buffer fraction.
    """

    swarm_size: int = 24
    iterations: int = 40
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    seed: int = 0
    phi0_bounds: Tuple[float, float] = (-np.pi, np.pi)
    delta_r_bounds: Tuple[float, float] = (0.2, 1.0)
    alpha_bounds: Tuple[float, float] = (0.0, 0.5)

    def __post_init__(self) -> None:
        if int(self.swarm_size) != self.swarm_size or self.swarm_size < 5:
            raise ConfigError(f"swarm_size must be an integer >= 5, got {self.swarm_size}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ConfigError(f"iterations must be a positive integer, got {self.iterations}")
        if not 0.0 < self.inertia < 1.0:
            raise ConfigError(f"inertia must lie strictly between 0 and 1, got {self.inertia}")
        for name in ("cognitive", "social"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0.0:
                raise ConfigError(f"{name} must be a non-negative number, got {val}")
        lo, hi = self.phi0_bounds
        if not (-np.pi - 1e-12 <= lo < hi <= np.pi + 1e-12):
            raise ConfigError(f"phi0 bounds must satisfy -pi <= lo < hi <= pi, got {self.phi0_bounds}")
        lo, hi = self.delta_r_bounds
        if not (0.2 - 1e-12 <= lo < hi <= 1.0 + 1e-12):
            raise ConfigError(f"delta_r bounds must lie inside [0.2, 1.0], got {self.delta_r_bounds}")
        lo, hi = self.alpha_bounds
        if not (-1e-12 <= lo < hi <= 0.5 + 1e-12):
            raise ConfigError(f"alpha bounds must lie inside [0, 0.5], got {self.alpha_bounds}")

    @property
    def phi0_periodic(self) -> bool:
        """True when the phi0 interval spans the whole circle."""
        lo, hi = self.phi0_bounds
        return abs((hi - lo) - 2.0 * np.pi) < 1e-9


@dataclass(frozen=True)
class OptimizationResult:
    """Outcome of a swarm run.

    ``eta`` is at the fidelity requested: the table-model value for
    ``"table-model"`` runs, the full coupled-dipole value for
    ``"full-solve"`` runs.  ``log`` holds one row per objective evaluation
    as ``(iteration, particle, phi0, delta_r, alpha, eta)``; ``reranked``
    lists the candidates scored at full fidelity as
    ``(phi0, delta_r, alpha, table_eta, full_eta)``.
    """

    phi0: float
    delta_r: float
    alpha: float
    eta: float
    fidelity: str
    evaluations: int
    log: Tuple[Tuple[int, int, float, float, float, float], ...]
    reranked: Tuple[Tuple[float, float, float, float, float], ...] = ()


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


def ring_transmissions(
    table: PhaseTable,
    phis: Sequence[float],
    gamma_prime: float = 0.0,
    _cache: Optional[dict] = None,
) -> np.ndarray:
    """Complex transmission assigned to each requested ring phase.

    Each phase is served by the nearest tabulated design without local
    refinement (adjacent rows sit a few hundredths of a radian apart,
    ample for ranking candidate lenses); phases in the unreachable band
    transmit unchanged (coefficient 1, the empty ring).  A mutable
    ``_cache`` avoids re-solving rows that recur across evaluations.
    """
    out = np.empty(len(phis), dtype=complex)
    for i, phi in enumerate(phis):
        if phase_in_gap(phi, table):
            out[i] = 1.0
            continue
        row = nearest_row(phi, table)
        key = (row, gamma_prime)
        if _cache is not None and key in _cache:
            out[i] = _cache[key]
            continue
        t = table_transmission(table, row, 0.0, gamma_prime)
        if _cache is not None:
            _cache[key] = t
        out[i] = t
    return out


def _ring_overlap(
    layout: Sequence[Tuple[float, float, float]],
    transmissions: np.ndarray,
    w0: float,
    f: float,
    r_lens: float,
) -> Tuple[complex, float]:
    """Overlap amplitude of the masked beam with the focused mode.

    Treats the lens plane as a radial transmission mask that is constant on
    each ring and 1 outside the lens, and integrates
    ``conj(E_target) * t(R) * E_in`` over the plane, normalized to the
    input beam power.  Also returns the power-weighted mean transmittance
    of the rings, the scalar figure the mask reduces to when phases are
    ignored.
    """
    beam = BeamSpec(w0)
    target = target_mode(w0, f)

    def piece(r_lo: float, r_hi: float, t: complex, nodes: int) -> Tuple[complex, float, float]:
        radii = np.linspace(r_lo, r_hi, nodes)
        e_in = gaussian_field(beam, radii, 0.0, 0.0)
        e_tg = target_field(target, radii, 0.0, 0.0)
        weight = 2.0 * np.pi * radii
        amp = t * simpson(np.conj(e_tg) * e_in * weight, x=radii)
        power = float(simpson(np.abs(e_in) ** 2 * weight, x=radii))
        return amp, power, float(np.abs(t) ** 2) * power

    overlap = 0.0 + 0.0j
    power_in_rings = 0.0
    weighted_trans = 0.0
    for (r_in, r_out, _), t in zip(layout, transmissions):
        amp, power, wtrans = piece(r_in, r_out, t, _NODES_PER_RING)
        overlap += amp
        power_in_rings += power
        weighted_trans += wtrans
    r_max = max(r_lens, 4.0 * w0)
    if r_max > r_lens:
        amp, _, _ = piece(r_lens, r_max, 1.0 + 0.0j, _NODES_TAIL)
        overlap += amp
    overlap /= np.pi * w0 * w0 / 2.0
    mean_trans = weighted_trans / power_in_rings if power_in_rings > 0.0 else 1.0
    return overlap, mean_trans


def table_model_eta(
    params: MetalensParams,
    w0: float,
    table: Optional[PhaseTable] = None,
    _cache: Optional[dict] = None,
) -> Tuple[float, float]:
    """Ring-model efficiency of a lens design, without assembling emitters.

    Returns ``(eta, mean_transmittance)``: the squared overlap of the
    ring-masked beam with the ideal focused mode, and the power-weighted
    mean ring transmittance (a phase-blind summary, reported for
    diagnostics).
    """
    if table is None:
        table = build_phase_table(d_min=params.d_min)
    if abs(table.d_min - params.d_min) > 1e-12:
        raise ConfigError(
            f"table d_min {table.d_min} does not match lens d_min {params.d_min}"
        )
    layout = ring_layout(params)
    trans = ring_transmissions(table, [phi for _, _, phi in layout], params.gamma_prime, _cache)
    overlap, mean_trans = _ring_overlap(layout, trans, w0, params.f, params.r_lens)
    return float(np.abs(overlap) ** 2), float(mean_trans)


def full_solve_eta(
    params: MetalensParams,
    w0: float,
    table: Optional[PhaseTable] = None,
    precision: str = "double",
    budget_fraction: float = 0.75,
) -> float:
    """Efficiency of a lens design from the full coupled-dipole solve."""
    ens = assemble_metalens(params, table)
    sol = solve_dipoles(
        ens,
        drive=beam_drive(BeamSpec(w0)),
        delta=0.0,
        precision=precision,
        budget_fraction=budget_fraction,
    )
    return efficiency_eta(ens, sol, target_mode(w0, params.f), w0)


# ---------------------------------------------------------------------------
# Swarm
# ---------------------------------------------------------------------------


def _parse_fixed(fixed: Mapping[str, float]) -> Tuple[float, float, float, float, float]:
    unknown = set(fixed) - set(_FIXED_KEYS)
    if unknown:
        raise ConfigError(f"unknown fixed parameters: {sorted(unknown)}; expected {_FIXED_KEYS}")
    try:
        f = float(fixed["f"])
        r_lens = float(fixed["r_lens"])
        w0 = float(fixed["w0"])
    except KeyError as exc:
        raise ConfigError(f"fixed parameters must include {exc.args[0]!r}") from None
    d_min = float(fixed.get("d_min", DEFAULT_D_MIN))
    gamma_prime = float(fixed.get("gamma_prime", 0.0))
    return f, r_lens, w0, d_min, gamma_prime


def optimize_lens(
    fixed: Mapping[str, float],
    cfg: PsoConfig = PsoConfig(),
    fidelity: str = "table-model",
    table: Optional[PhaseTable] = None,
    initial_positions: Optional[np.ndarray] = None,
    precision: str = "double",
) -> OptimizationResult:
    """Maximize the lens efficiency over (phi0, delta_r, alpha).

    Parameters
    ----------
    fixed:
        Mapping with keys ``f``, ``r_lens``, ``w0`` and optionally
        ``d_min``, ``gamma_prime``; these are held constant.
    cfg:
        Swarm hyperparameters and bounds.
    fidelity:
        ``"table-model"`` scores every particle with the ring model;
        ``"full-solve"`` additionally re-ranks the best few candidates with
        full coupled-dipole solves and reports the winner's full-fidelity
        efficiency.
    table:
        Prebuilt design table for ``d_min``; built once here when omitted.
    initial_positions:
        Optional ``(swarm_size, 3)`` array of starting ``(phi0, delta_r,
        alpha)`` positions (velocities start at zero).  By default
        particles start uniformly inside the bounds with small random
        velocities.
    precision:
        Solver precision for full-fidelity evaluations.

    Notes
    -----
    A particle whose objective evaluation fails (for example a geometry
    rejected by the assembly audit) is marked infeasible for that sweep
    with objective ``-inf``; the run continues.  The global best never
    decreases, and the number of ring-model evaluations is exactly
    ``swarm_size * iterations``.
    """
    if fidelity not in _FIDELITIES:
        raise ConfigError(f"fidelity must be one of {_FIDELITIES}, got {fidelity!r}")
    f, r_lens, w0, d_min, gamma_prime = _parse_fixed(fixed)
    if table is None:
        table = build_phase_table(d_min=d_min)

    lows = np.array([cfg.phi0_bounds[0], cfg.delta_r_bounds[0], cfg.alpha_bounds[0]])
    highs = np.array([cfg.phi0_bounds[1], cfg.delta_r_bounds[1], cfg.alpha_bounds[1]])
    spans = highs - lows
    n = cfg.swarm_size
    streams = [
        np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(p,)))
        for p in range(n)
    ]

    if initial_positions is not None:
        x = np.array(initial_positions, dtype=float)
        if x.shape != (n, 3):
            raise ConfigError(
                f"initial_positions must have shape ({n}, 3), got {x.shape}"
            )
        v = np.zeros_like(x)
    else:
        x = np.stack([lows + streams[p].uniform(size=3) * spans for p in range(n)])
        v = np.stack([0.5 * spans * streams[p].uniform(-1.0, 1.0, size=3) for p in range(n)])

    cache: dict = {}

    def params_at(pos: np.ndarray) -> MetalensParams:
        return MetalensParams(
            f=f,
            r_lens=r_lens,
            delta_r=float(pos[1]),
            phi0=float(pos[0]),
            alpha=float(pos[2]),
            d_min=d_min,
            gamma_prime=gamma_prime,
        )

    def objective(pos: np.ndarray) -> float:
        try:
            eta, _ = table_model_eta(params_at(pos), w0, table, cache)
        except (ConfigError, MemoryBudgetError, NumericalError):
            return -np.inf
        return eta if np.isfinite(eta) else -np.inf

    pbest = x.copy()
    pbest_val = np.full(n, -np.inf)
    gbest = x[0].copy()
    gbest_val = -np.inf
    log: list = []
    evaluations = 0

    for it in range(1, cfg.iterations + 1):
        for p in range(n):
            val = objective(x[p])
            evaluations += 1
            log.append((it, p, float(x[p, 0]), float(x[p, 1]), float(x[p, 2]), float(val)))
            if val > pbest_val[p]:
                pbest_val[p] = val
                pbest[p] = x[p]
        best_p = int(np.argmax(pbest_val))
        if pbest_val[best_p] > gbest_val:
            gbest_val = float(pbest_val[best_p])
            gbest = pbest[best_p].copy()
        if it == cfg.iterations:
            break
        for p in range(n):
            u1 = streams[p].uniform(size=3)
            u2 = streams[p].uniform(size=3)
            dp = pbest[p] - x[p]
            dg = gbest - x[p]
            if cfg.phi0_periodic:
                dp[0] = wrap_phase(dp[0])
                dg[0] = wrap_phase(dg[0])
            v[p] = cfg.inertia * v[p] + cfg.cognitive * u1 * dp + cfg.social * u2 * dg
            x[p] = x[p] + v[p]
            if cfg.phi0_periodic:
                x[p, 0] = wrap_phase(x[p, 0])
            else:
                if x[p, 0] < lows[0]:
                    x[p, 0] = lows[0]
                    v[p, 0] = 0.0
                elif x[p, 0] > highs[0]:
                    x[p, 0] = highs[0]
                    v[p, 0] = 0.0
            for k in (1, 2):
                if x[p, k] < lows[k]:
                    x[p, k] = lows[k]
                    v[p, k] = 0.0
                elif x[p, k] > highs[k]:
                    x[p, k] = highs[k]
                    v[p, k] = 0.0

    if not np.isfinite(gbest_val):
        raise NumericalError(
            "every objective evaluation failed; no feasible lens design found "
            "within the search bounds"
        )

    reranked: Tuple[Tuple[float, float, float, float, float], ...] = ()
    if fidelity == "full-solve":
        order = np.argsort(pbest_val)[::-1]
        candidates: list = []
        seen: set = set()
        for p in order:
            if not np.isfinite(pbest_val[p]):
                break
            key = tuple(np.round(pbest[p], 9))
            if key in seen:
                continue
            seen.add(key)
            candidates.append((pbest[p].copy(), float(pbest_val[p])))
        # walk the shortlist best-first until enough designs survive the
        # full-fidelity evaluation (an assembly audit can reject a design
        # the ring model cannot see)
        scored: list = []
        successes = 0
        for pos, table_eta in candidates[:_RERANK_MAX_ATTEMPTS]:
            try:
                full = full_solve_eta(params_at(pos), w0, table, precision=precision)
                successes += 1
            except (ConfigError, MemoryBudgetError, NumericalError):
                full = -np.inf
            scored.append((float(pos[0]), float(pos[1]), float(pos[2]), table_eta, float(full)))
            if successes == _RERANK_SUCCESSES:
                break
        reranked = tuple(scored)
        feasible = [s for s in scored if np.isfinite(s[4])]
        if not feasible:
            raise NumericalError(
                "all full-fidelity re-evaluations of the shortlisted designs failed"
            )
        best = max(feasible, key=lambda s: s[4])
        return OptimizationResult(
            phi0=best[0],
            delta_r=best[1],
            alpha=best[2],
            eta=best[4],
            fidelity=fidelity,
            evaluations=evaluations,
            log=tuple(log),
            reranked=reranked,
        )

    return OptimizationResult(
        phi0=float(gbest[0]),
        delta_r=float(gbest[1]),
        alpha=float(gbest[2]),
        eta=gbest_val,
        fidelity=fidelity,
        evaluations=evaluations,
        log=tuple(log),
        reranked=reranked,
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_optimization_log(directory, name: str, result: OptimizationResult) -> Path:
    """Write the per-evaluation swarm log as CSV; returns the file path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.csv"
    with open(path, "w", newline="") as fh:
        fh.write("# phi0 in radians; delta_r in wavelength units; eta dimensionless\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "particle", "phi0", "delta_r", "alpha", "eta"])
        for row in result.log:
            writer.writerow(
                [row[0], row[1], f"{row[2]:.12g}", f"{row[3]:.12g}", f"{row[4]:.12g}", f"{row[5]:.12g}"]
            )
    return path


def save_optimum(directory, name: str, result: OptimizationResult,
                 fixed: Optional[Mapping[str, float]] = None) -> Path:
    """Write the best triple (and run summary) as JSON; returns the file path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.json"
    payload = {
        "phi0": result.phi0,
        "delta_r": result.delta_r,
        "alpha": result.alpha,
        "eta": result.eta,
        "fidelity": result.fidelity,
        "evaluations": result.evaluations,
        "reranked": [
            {
                "phi0": c[0],
                "delta_r": c[1],
                "alpha": c[2],
                "table_eta": c[3],
                "full_eta": c[4] if np.isfinite(c[4]) else None,
            }
            for c in result.reranked
        ],
    }
    if fixed is not None:
        payload["fixed"] = {k: float(v) for k, v in fixed.items()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
