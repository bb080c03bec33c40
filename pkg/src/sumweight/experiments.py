"""Monte Carlo studies: MSE curves, empirical slopes against the spectral rate,
clock-management sweeps and link-failure sweeps.

Sweep points may run on a thread pool; results are always assembled in
parameter order so outputs do not depend on completion order.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .config import ExperimentConfig, build_family, build_graph, build_x0
from .engine import BatchResult, run_batch
from .graph import Graph, connected_rgg
from .models import bwgossip_failure_set, bwgossip_set, check_assumptions, random_gossip_set
from .spectral import AssumptionError, contraction_matrix, gelfand_radius, kappa

MSE_FLOOR = 1e-24
TRANSIENT_FRACTION = 0.2

FAMILIES = {"bwgossip": bwgossip_set, "random_gossip": random_gossip_set}


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if math.isinf(v):
        return "inf"
    return f"{v:.17g}"


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(row[c]) for c in columns) + "\n")
    return buf.getvalue()


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class MseCurve:
    t: np.ndarray
    mse: np.ndarray
    batch: Optional[BatchResult] = field(default=None, repr=False)

    def to_csv(self) -> str:
        return _csv(["t", "mse"], [{"t": int(t), "mse": float(m)} for t, m in zip(self.t, self.mse)])


@dataclass(frozen=True)
class SlopeEstimate:
    slope: float
    fit_window: tuple
    r_squared: float


def monte_carlo_mse(cfg: ExperimentConfig, graph: Optional[Graph] = None) -> MseCurve:
    """Average squared error over ``cfg.replicas`` independent replicas.

    Assumptions are checked first, except for the biased broadcast-gossip
    baseline.
    """
    if cfg.ticks < 1:
        raise ValueError("Monte Carlo curves need ticks >= 1")
    if graph is None and cfg.graph is not None:
        graph, _ = build_graph(cfg.graph)
    fam = build_family(cfg, graph)
    if cfg.algorithm != "broadcast_gossip" or cfg.family_path is not None:
        report = check_assumptions(fam)
        if not report.ok:
            raise AssumptionError(f"assumption(s) {', '.join(report.failing())} fail")
    x0 = build_x0(cfg.x0, fam.n)
    batch = run_batch(fam, x0, cfg.mode, cfg.ticks, cfg.alpha, cfg.seed, cfg.replicas,
                      trigger=cfg.trigger, diagnostics=cfg.diagnostics)
    return MseCurve(np.arange(cfg.ticks + 1), batch.mse, batch)


def default_window(mse) -> tuple[int, int]:
    """Late region: skip the first 20% of the horizon, stop before the float floor."""
    mse = np.asarray(mse)
    horizon = len(mse) - 1
    start = int(math.ceil(TRANSIENT_FRACTION * horizon))
    below = np.flatnonzero(mse[start:] < MSE_FLOOR)
    end = start + int(below[0]) - 1 if len(below) else horizon
    return start, end


def empirical_slope(curve, window: Optional[Sequence[int]] = None) -> SlopeEstimate:
    """Least-squares slope of ``ln(mse)`` against ``t`` over ``window`` (inclusive)."""
    mse = np.asarray(curve.mse if isinstance(curve, MseCurve) else curve, dtype=float)
    t0, t1 = default_window(mse) if window is None else (int(window[0]), int(window[1]))
    if not 0 <= t0 < t1 < len(mse):
        raise ValueError(f"window [{t0}, {t1}] is not inside the horizon [0, {len(mse) - 1}]")
    seg = mse[t0: t1 + 1]
    if np.any(seg <= 0):
        raise ValueError("non-positive MSE inside the regression window; end it before the floor")
    fit = stats.linregress(np.arange(t0, t1 + 1), np.log(seg))
    return SlopeEstimate(float(fit.slope), (t0, t1), float(min(1.0, fit.rvalue**2)))


def _horizon(k: float, ticks: Optional[int], factor: float) -> int:
    if ticks is not None:
        return ticks
    return max(10, int(math.ceil(factor / k)))


def _kappa_gelfand(fam) -> float:
    rho = gelfand_radius(contraction_matrix(fam))
    return math.inf if rho == 0.0 else -math.log(rho)


def slope_vs_bound_study(
    n_values: Sequence[int],
    r0: float,
    algorithm: str,
    replicas: int,
    seed: int = 0,
    ticks: Optional[int] = None,
    horizon_factor: float = 25.0,
    workers: int = 1,
) -> list[dict]:
    """Empirical ``|slope|`` of the MSE against ``kappa`` (and the deflation bound) per ``n``.

    The RGG for size ``n`` is drawn from seed ``seed + 1000 * n`` and redrawn
    with incremented seeds until connected; ``resamples`` records how often.
    """
    make = FAMILIES[algorithm]

    def point(n):
        g, resamples = connected_rgg(n, r0, seed + 1000 * n)
        fam = make(g)
        rep = kappa(fam)
        row = {
            "n": n, "graph_seed": g.seed, "resamples": resamples,
            "kappa": rep.kappa, "boyd_kappa": rep.boyd_kappa,
            "kappa_gelfand": _kappa_gelfand(fam), "ticks": 0, "r_squared": None,
        }
        if rep.exact_finite_time:
            row["slope"] = "exact"
            return row
        t = _horizon(rep.kappa, ticks, horizon_factor)
        x0 = np.random.default_rng(seed + n).standard_normal(n)
        batch = run_batch(fam, x0, "average", t, 1.0, seed + n, replicas)
        est = empirical_slope(batch.mse)
        row.update(slope=abs(est.slope), ticks=t, r_squared=est.r_squared)
        return row

    return _map(point, list(n_values), workers)


SLOPE_COLUMNS = ["n", "graph_seed", "resamples", "ticks", "slope", "kappa", "boyd_kappa", "kappa_gelfand", "r_squared"]


def failure_study(
    g: Graph,
    p_e_values: Sequence[float],
    replicas: int,
    ticks: Optional[int] = None,
    seed: int = 0,
    horizon_factor: float = 25.0,
    workers: int = 1,
    x0=None,
) -> list[dict]:
    """Slope and ``kappa`` of BWGossip under i.i.d. link failures, per ``p_e``."""
    if x0 is None:
        x0 = np.random.default_rng(seed).standard_normal(g.n)

    def point(p_e):
        fam = bwgossip_failure_set(g, p_e, seed=seed)
        rep = kappa(fam)
        t = _horizon(rep.kappa, ticks, horizon_factor)
        batch = run_batch(fam, x0, "average", t, 1.0, seed, replicas)
        est = empirical_slope(batch.mse)
        return {
            "p_e": p_e, "ticks": t, "slope": abs(est.slope), "kappa": rep.kappa,
            "kappa_gelfand": _kappa_gelfand(fam), "r_squared": est.r_squared,
            "moments": fam.moments_source, "mse": batch.mse,
        }

    return _map(point, list(p_e_values), workers)


FAILURE_COLUMNS = ["p_e", "ticks", "slope", "kappa", "kappa_gelfand", "r_squared", "moments"]


def clock_sweep(
    g: Graph,
    alphas: Sequence[float],
    replicas: int,
    ticks: int,
    seed: int = 0,
    x0=None,
    workers: int = 1,
) -> dict:
    """One BWGossip MSE curve per clock coefficient, all under the same seeds."""
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {a}")
    fam = bwgossip_set(g)
    if x0 is None:
        x0 = np.random.default_rng(seed).standard_normal(g.n)
    batches = _map(lambda a: run_batch(fam, x0, "average", ticks, a, seed, replicas), list(alphas), workers)
    return {a: b for a, b in zip(alphas, batches)}


def clock_sweep_csv(curves: dict) -> str:
    alphas = list(curves)
    cols = ["t"] + [f"mse_alpha{a:g}" for a in alphas]
    ticks = next(iter(curves.values())).ticks
    rows = [{"t": t, **{f"mse_alpha{a:g}": float(curves[a].mse[t]) for a in alphas}} for t in range(ticks + 1)]
    return _csv(cols, rows)


def table_csv(rows: list[dict], columns: Sequence[str]) -> str:
    return _csv(list(columns), rows)


def write_outputs(output_dir, config: dict, files: dict) -> Path:
    """Write ``files`` (name -> text) and a manifest with their SHA-256 hashes.

    Names must be plain file names; nothing is written outside ``output_dir``.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, text in files.items():
        if Path(name).name != name:
            raise ValueError(f"output name {name!r} must be a bare file name")
        data = text.encode()
        (out / name).write_bytes(data)
        hashes[name] = hashlib.sha256(data).hexdigest()
    manifest = {"config": config, "outputs": hashes}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
