"""Command-line front end.

Every subcommand takes a JSON config (see README) and writes its machine
outputs into the configured output directory together with a manifest.
Exit status: 0 success, 1 invalid input or usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import experiments as ex
from .config import ExperimentConfig, build_family, build_graph, build_x0
from .engine import InvariantViolation, run_batch
from .graph import GraphError
from .models import FamilyError, check_assumptions
from .spectral import AssumptionError, DegenerateFamilyError, kappa

SUBCOMMANDS = ("gen-graph", "check", "spectral", "simulate", "slope-study", "failure-study", "clock-sweep")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _nice(x: float) -> str:
    f = Fraction(x).limit_denominator(1000)
    if f.denominator > 1 and abs(float(f) - x) < 1e-12:
        return f"{f.numerator}/{f.denominator}"
    return f"{x:.6g}"


def _mark(ok: bool) -> str:
    return "✓" if ok else "✗"


def _graph(cfg):
    if cfg.graph is None:
        return None, 0
    return build_graph(cfg.graph)


def cmd_gen_graph(cfg: ExperimentConfig):
    g, resamples = _graph(cfg)
    if g is None:
        raise ValueError("gen-graph needs a 'graph' section")
    ex.write_outputs(cfg.output_dir, cfg.model_dump(), {"graph.json": json.dumps(g.to_dict(), sort_keys=True) + "\n"})
    print(f"graph: n={g.n} edges={len(g.edges())} d_max={g.d_max} resamples={resamples}")


def cmd_check(cfg: ExperimentConfig):
    g, _ = _graph(cfg)
    rep = check_assumptions(build_family(cfg, g))
    ex.write_outputs(cfg.output_dir, cfg.model_dump(), {"assumptions.json": json.dumps(rep.to_dict(), sort_keys=True) + "\n"})
    print(f"A1 {_mark(rep.a1_row_stochastic)} A2 {_mark(rep.a2_positive_diagonal)} B {_mark(rep.b_primitive)}")
    print(f"m_K = {_nice(rep.m_K)}, p_K = {_nice(rep.p_K)}, witness exponent = {rep.witness_exponent}")


def cmd_spectral(cfg: ExperimentConfig):
    g, _ = _graph(cfg)
    rep = kappa(build_family(cfg, g))
    ex.write_outputs(cfg.output_dir, cfg.model_dump(), {"spectral.json": json.dumps(rep.to_dict(), sort_keys=True) + "\n"})
    print(f"n = {rep.n}")
    print(f"rho_R = {rep.rho_R:.12g}  kappa = {rep.kappa:.12g}")
    print(f"rho_Sv = {rep.rho_Sv:.12g}  boyd_kappa = {rep.boyd_kappa:.12g}")


def cmd_simulate(cfg: ExperimentConfig):
    g, _ = _graph(cfg)
    fam = build_family(cfg, g)
    x0 = build_x0(cfg.x0, fam.n)
    batch = run_batch(fam, x0, cfg.mode, cfg.ticks, cfg.alpha, cfg.seed, cfg.replicas,
                      trigger=cfg.trigger, diagnostics=cfg.diagnostics)
    files = {"trace.csv": batch.trace(0).to_csv()}
    if cfg.replicas > 1:
        files["mse.csv"] = ex.MseCurve(range(batch.ticks + 1), batch.mse).to_csv()
    ex.write_outputs(cfg.output_dir, cfg.model_dump(), files)
    print(f"{fam.name}: {cfg.replicas} replica(s), {cfg.ticks} ticks")
    print(f"mse: initial {batch.mse[0]:.6g}, final {batch.mse[-1]:.6g}")
    print("invariants: " + ", ".join(f"{k} {_mark(v)}" for k, v in batch.invariants.items()))


def cmd_slope_study(cfg: ExperimentConfig):
    st = cfg.study
    if cfg.algorithm not in ex.FAMILIES:
        raise ValueError(f"slope-study supports {sorted(ex.FAMILIES)}, not {cfg.algorithm!r}")
    rows = ex.slope_vs_bound_study(st.n_values, st.r0, cfg.algorithm, cfg.replicas, cfg.seed,
                                   st.ticks, st.horizon_factor, st.workers)
    ex.write_outputs(cfg.output_dir, cfg.model_dump(), {"slope_study.csv": ex.table_csv(rows, ex.SLOPE_COLUMNS)})
    for r in rows:
        slope = r["slope"] if isinstance(r["slope"], str) else f"{r['slope']:.5g}"
        print(f"n={r['n']}: |slope|={slope} kappa={r['kappa']:.5g} boyd_kappa={r['boyd_kappa']:.5g}")


def cmd_failure_study(cfg: ExperimentConfig):
    g, _ = _graph(cfg)
    if g is None:
        raise ValueError("failure-study needs a 'graph' section")
    st = cfg.study
    rows = ex.failure_study(g, st.p_e_values, cfg.replicas, st.ticks, cfg.seed, st.horizon_factor,
                            st.workers, x0=build_x0(cfg.x0, g.n))
    ex.write_outputs(cfg.output_dir, cfg.model_dump(), {"failure_study.csv": ex.table_csv(rows, ex.FAILURE_COLUMNS)})
    for r in rows:
        print(f"p_e={r['p_e']:g}: |slope|={r['slope']:.5g} kappa={r['kappa']:.5g}")


def cmd_clock_sweep(cfg: ExperimentConfig):
    g, _ = _graph(cfg)
    if g is None:
        raise ValueError("clock-sweep needs a 'graph' section")
    curves = ex.clock_sweep(g, cfg.study.alphas, cfg.replicas, cfg.ticks, cfg.seed,
                            x0=build_x0(cfg.x0, g.n), workers=cfg.study.workers)
    ex.write_outputs(cfg.output_dir, cfg.model_dump(), {"clock_sweep.csv": ex.clock_sweep_csv(curves)})
    for a, b in curves.items():
        print(f"alpha={a:g}: final mse {b.mse[-1]:.6g}")


COMMANDS = {
    "gen-graph": cmd_gen_graph,
    "check": cmd_check,
    "spectral": cmd_spectral,
    "simulate": cmd_simulate,
    "slope-study": cmd_slope_study,
    "failure-study": cmd_failure_study,
    "clock-sweep": cmd_clock_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sumweight", description="Sum-weight gossip simulator and spectral analyzer.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--output-dir", default=None, help="override the config output directory")
    return parser


def load(args) -> ExperimentConfig:
    path = Path(args.config)
    doc = json.loads(path.read_text())
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.output_dir is not None:
        doc["output_dir"] = args.output_dir
    if doc.get("family_path"):
        doc["family_path"] = str((path.parent / doc["family_path"]).resolve())
    return ExperimentConfig.model_validate(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args)
    except (OSError, ValueError) as exc:  # covers JSON decode and schema errors
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](cfg)
    except (DegenerateFamilyError, InvariantViolation) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except (GraphError, FamilyError, AssumptionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
