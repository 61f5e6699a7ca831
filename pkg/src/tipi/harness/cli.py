"""Command line interface.

    python -m tipi run --preset fig4a --out results/
    python -m tipi run --config my.toml --seed 3 --out results/
    python -m tipi sweep --preset chain-sweep --threads 4 --out results/
    python -m tipi analyze dimension results/run.csv --chunks 10,30,100
    python -m tipi analyze overlap results/run.csv --chunk-length 100
    python -m tipi analyze cluster a.csv b.csv c.csv --clusters 2
    python -m tipi presets list

Exit status is 0 on success, 2 on invalid input and 3 on a numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from ..analysis import (BehaviorLog, dimension_curve, distance_matrix, hierarchical_cluster,
                        overlap_matrix, param_distance)
from ..errors import ConfigError, ContractError, NumericalError
from . import presets
from .config import ExperimentConfig
from .runner import METRICS, SweepSpec, export, run, sweep_raw, summarize

EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tipi", description="TiPI exploration experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def source(p):
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--config", type=Path, help="TOML experiment file")
        g.add_argument("--preset", help="name of a shipped preset (see 'presets list')")
        p.add_argument("--seed", type=int, default=None, help="override the base seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")

    p_run = sub.add_parser("run", help="run one experiment or study preset")
    source(p_run)
    p_run.add_argument("--steps", type=int, default=None, help="override the number of steps")

    p_sw = sub.add_parser("sweep", help="sweep one config parameter with replicates")
    source(p_sw)
    p_sw.add_argument("--param", help="dotted parameter path, e.g. exploration.epsilon")
    p_sw.add_argument("--values", type=_floats, help="comma separated values")
    p_sw.add_argument("--replicates", type=int, default=None)
    p_sw.add_argument("--metric", choices=METRICS, default=None)
    p_sw.add_argument("--metric-start", type=int, default=None)
    p_sw.add_argument("--threads", type=int, default=1, help="worker processes")

    p_an = sub.add_parser("analyze", help="post-hoc analyses of logged runs")
    an = p_an.add_subparsers(dest="analysis", required=True)
    a_dim = an.add_parser("dimension", help="effective dimension versus chunk length")
    a_dim.add_argument("log", type=Path)
    a_dim.add_argument("--chunks", type=_ints, default=presets.DIMENSION_CHUNKS)
    a_dim.add_argument("--ratio", type=float, default=0.95)
    a_dim.add_argument("--block", default="s", help="column block to analyse (s or a)")
    a_dim.add_argument("--start", type=int, default=0, help="first time step used")
    a_ov = an.add_parser("overlap", help="chunk overlap distance matrix")
    a_ov.add_argument("log", type=Path)
    a_ov.add_argument("--chunk-length", type=int, required=True)
    a_ov.add_argument("--components", type=int, default=6)
    a_ov.add_argument("--block", default="s")
    a_cl = an.add_parser("cluster", help="cluster runs by their time-averaged controller matrix")
    a_cl.add_argument("logs", type=Path, nargs="+")
    a_cl.add_argument("--clusters", type=int, default=None, help="cut the dendrogram into k groups")
    a_cl.add_argument("--start", type=int, default=0, help="first time step averaged")
    a_cl.add_argument("--linkage", choices=("average", "single", "complete"), default="average")
    for p in (a_dim, a_ov, a_cl):
        p.add_argument("--out", type=Path, default=None)

    p_pr = sub.add_parser("presets", help="inspect shipped presets")
    p_pr.add_argument("action", choices=("list",))
    return parser


def _load(args) -> tuple[str, ExperimentConfig | None]:
    if args.config is not None:
        cfg = ExperimentConfig.from_toml(args.config)
        kind = "run"
    else:
        p = presets.get_preset(args.preset)
        kind = p.kind if p.kind != "study" else p.name
        cfg = presets.preset_config(p.name)
    if args.seed is not None:
        cfg = cfg.with_overrides({"seed": args.seed})
    return kind, cfg


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _write_table(path: Path | None, header: list[str], rows) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    text = ",".join(header) + "\n" + "".join(",".join(f"{v:.10g}" for v in r) + "\n" for r in rows)
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)
        print(f"wrote {path}")


def cmd_run(args) -> int:
    kind, cfg = _load(args)
    if args.steps is not None:
        cfg = cfg.with_overrides({"steps": args.steps})
    out = _out_dir(args)
    if kind == "dimension-study":
        curves = presets.dimension_study(cfg.seed, steps=args.steps)
        for name, rows in curves.items():
            print(f"{name}: " + " ".join(f"{L:g}:{m:.3f}" for L, m, _ in rows))
            if out is not None:
                _write_table(out / f"dimension_{name}.csv", ["length", "mean", "std"], rows)
        return 0
    if kind == "environment-clustering":
        res = presets.environment_clustering(cfg.seed, steps=args.steps)
        for lab, c in zip(res.labels, res.assignment):
            print(f"{lab}\t{c}")
        print(f"environment partition recovered: {res.recovered}")
        print(res.dendrogram.newick())
        if out is not None:
            (out / "dendrogram.nwk").write_text(res.dendrogram.newick() + "\n")
        return 0
    if kind == "sweep":
        print("preset is a sweep; use the 'sweep' command", file=sys.stderr)
        return EXIT_USAGE
    log = run(cfg)
    name = cfg.name or "run"
    if out is not None:
        export(log, out / f"{name}.csv")
    s = log.block("s")
    print(f"{name}: {log.rows.shape[0]} rows, seed {cfg.seed}, final s {np.round(s[-1], 4).tolist()}")
    if "com" in log.columns:
        com = log.column("com")
        print(f"displacement {com[-1] - com[0]:.4f}")
    return 0


def cmd_sweep(args) -> int:
    if args.preset is not None:
        spec = presets.preset_sweep(args.preset, args.seed)
    else:
        _, cfg = _load(args)
        if args.param is None or not args.values:
            print("--param and --values are required with --config", file=sys.stderr)
            return EXIT_USAGE
        spec = SweepSpec(cfg, args.param, args.values)
    for attr, val in (("parameter", args.param), ("values", args.values),
                      ("replicates", args.replicates), ("metric", args.metric),
                      ("metric_start", args.metric_start)):
        if val is not None:
            setattr(spec, attr, val)
    spec.__post_init__()
    raw = sweep_raw(spec, args.threads)
    table = summarize(spec.values, raw)
    out = _out_dir(args)
    _write_table(out / "sweep.csv" if out else None, ["value", "mean", "std", "n"], table)
    if out is not None:
        _write_table(out / "sweep_raw.csv", [f"r{i}" for i in range(raw.shape[1])], raw)
    return 0


def _read_log(path: Path) -> BehaviorLog:
    return BehaviorLog.from_csv(path)


def cmd_analyze(args) -> int:
    out = args.out
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
    if args.analysis == "dimension":
        log = _read_log(args.log)
        X = log.block(args.block)[log.column("t") >= args.start]
        _write_table(out, ["length", "mean", "std"], dimension_curve(X, args.chunks, args.ratio))
    elif args.analysis == "overlap":
        log = _read_log(args.log)
        M = overlap_matrix(log.block(args.block), args.chunk_length, args.components)
        _write_table(out, [f"c{i}" for i in range(M.shape[0])], M)
    else:
        Cs = []
        for p in args.logs:
            log = _read_log(p)
            sel = log.column("t") >= args.start
            Cs.append(np.abs(log.block("C")[sel]).mean(axis=0))
        D = distance_matrix(Cs, param_distance)
        dend = hierarchical_cluster(D, [p.stem for p in args.logs], args.linkage)
        for a, b, hgt, size in dend.merges:
            print(f"merge {a} {b} height {hgt:.6g} size {size}")
        if args.clusters:
            for p, c in zip(args.logs, dend.cut(args.clusters)):
                print(f"{p.stem}\t{c}")
        print(dend.newick())
        if out is not None:
            out.write_text(dend.newick() + "\n")
    return 0


def cmd_presets(args) -> int:
    for p in presets.PRESETS.values():
        print(f"{p.name:24s} {p.kind:6s} {p.description}")
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "analyze": cmd_analyze, "presets": cmd_presets}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
