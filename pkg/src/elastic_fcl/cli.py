"""Command-line front end.

    elastic-fcl generate --config exp.cfg --out data.txt
    elastic-fcl run      --config exp.cfg [--seed N] [--out DIR] [--quiet]
    elastic-fcl sweep    --config exp.cfg --grid grid.txt [--jobs N]

Exit status: 0 on success, 2 for configuration errors, 3 when training
diverges. The seed comes from ``--seed``, then ``FCL_SEED``, then the config.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import config as cfgmod
from .engine import ConfigError, DivergenceError, run_experiment
from .metrics import param_account, summarize, write_matrix
from .scenario import ScenarioError, generate_synthetic, write_records

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

log = logging.getLogger("elastic_fcl")


def _resolve(config_path: Optional[str], seed: Optional[int],
             out: Optional[str]) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load_config(config_path) if config_path else cfgmod.ExperimentConfig()
    cfg.validate()
    if seed is None and os.environ.get("FCL_SEED"):
        try:
            seed = int(os.environ["FCL_SEED"])
        except ValueError:
            raise ConfigError(f"FCL_SEED is not an integer: {os.environ['FCL_SEED']!r}") from None
    if seed is not None:
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        cfg = cfg.with_seed(seed)
    if out is not None:
        cfg = replace(cfg, output_dir=out)
    return cfg


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def execute(cfg: cfgmod.ExperimentConfig) -> Dict[str, object]:
    """Run one experiment and return its flat metrics record."""
    result = run_experiment(cfg)
    scenario_shape = (cfg.scenario.clients, cfg.scenario.tasks)
    if cfg.data_path is not None:
        scenario_shape = (len(result.clients), result.P.shape[0])
    account = param_account(cfg.algorithm.family, result.n_params, *scenario_shape)
    stats = summarize(result.P)
    record = {
        "amse": stats["amse"], "bwt": stats["bwt"], "fwt": stats["fwt"],
        "static": account.static_count, "trainable": account.trainable_count,
        "static_formula": account.formula, "model_params": result.n_params,
        "messages_p2p": result.messages.p2p, "messages_star": result.messages.star,
    }
    return {"record": record, "result": result}


def write_reports(cfg: cfgmod.ExperimentConfig, record: Dict[str, object], result,
                  out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_matrix(result.P, out_dir / "pmatrix.csv")
    lines = [f"{k} = {_fmt(v)}" for k, v in record.items()]
    # output_dir is where the report lives, not part of the experiment
    lines.extend(f"config.{k} = {v}" for k, v in cfgmod.to_pairs(cfg).items()
                 if k != "output_dir")
    (out_dir / "metrics.txt").write_text("\n".join(lines) + "\n", encoding="ascii")
    (out_dir / "trainlog.csv").write_text(result.log.to_csv(), encoding="ascii")


def cmd_generate(config_path: Optional[str], out_path: str, seed: Optional[int] = None) -> None:
    cfg = _resolve(config_path, seed, None)
    if cfg.data_path is not None:
        raise ConfigError("generate needs a synthetic scenario, not scenario.data")
    scenario = generate_synthetic(cfg.scenario)
    out = Path(out_path)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    write_records(scenario, out)


def cmd_run(config_path: Optional[str], seed: Optional[int] = None,
            out: Optional[str] = None) -> Dict[str, object]:
    cfg = _resolve(config_path, seed, out)
    ran = execute(cfg)
    write_reports(cfg, ran["record"], ran["result"], Path(cfg.output_dir))
    return ran["record"]


def parse_grid(text: str) -> List[Tuple[str, List[str]]]:
    """Grid lines are ``key = v1, v2, ...`` using config keys."""
    grid = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"grid line {lineno}: expected 'key = v1, v2, ...'")
        key, values = (s.strip() for s in line.split("=", 1))
        if key not in cfgmod.KEYS:
            raise ConfigError(f"grid line {lineno}: unknown parameter {key!r}")
        if key in seen:
            raise ConfigError(f"grid line {lineno}: duplicate parameter {key!r}")
        seen.add(key)
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"grid line {lineno}: no values for {key!r}")
        grid.append((key, vals))
    if not grid:
        raise ConfigError("grid is empty")
    return grid


def _sort_key(values: Sequence[str]):
    key = []
    for v in values:
        try:
            key.append((0, float(v), ""))
        except ValueError:
            key.append((1, 0.0, v))
    return tuple(key)


def _sweep_point(args):
    pairs, base_dir = args
    cfg = cfgmod.from_pairs(pairs, base_dir)
    return execute(cfg)["record"]


def cmd_sweep(config_path: str, grid_path: str, seed: Optional[int] = None,
              out: Optional[str] = None, jobs: int = 1) -> List[Dict[str, object]]:
    base = _resolve(config_path, seed, out)
    try:
        grid = parse_grid(Path(grid_path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read grid {grid_path}: {exc}") from None
    keys = [k for k, _ in grid]
    combos = sorted(itertools.product(*(v for _, v in grid)), key=_sort_key)
    base_pairs = cfgmod.to_pairs(base)
    points = []
    for combo in combos:
        pairs = dict(base_pairs)
        pairs.update(zip(keys, combo))
        if "seed" in keys and "scenario.seed" not in keys:
            pairs["scenario.seed"] = pairs["seed"]
        cfgmod.from_pairs(pairs)          # reject bad points before any run
        points.append((pairs, None))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_sweep_point, points))
    else:
        records = [_sweep_point(p) for p in points]
    names = [k.rsplit(".", 1)[-1] for k in keys]
    rows = []
    lines = [",".join(names + ["amse", "bwt", "fwt"])]
    for combo, rec in zip(combos, records):
        row = dict(zip(names, combo))
        row.update(amse=rec["amse"], bwt=rec["bwt"], fwt=rec["fwt"])
        rows.append(row)
        lines.append(",".join(list(combo) + [repr(rec["amse"]), repr(rec["bwt"]),
                                             repr(rec["fwt"])]))
    out_dir = Path(base.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="ascii")
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elastic-fcl",
                                     description="Federated continual learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value experiment config")
        p.add_argument("--seed", type=int, help="overrides FCL_SEED and the config seed")
        p.add_argument("--quiet", action="store_true")

    g = sub.add_parser("generate", help="write a synthetic scenario as line records")
    common(g)
    g.add_argument("--out", required=True, help="output data file")
    r = sub.add_parser("run", help="run one experiment and write reports")
    common(r)
    r.add_argument("--out", help="report directory (overrides output_dir)")
    s = sub.add_parser("sweep", help="run a Cartesian grid of experiments")
    common(s)
    s.add_argument("--grid", required=True, help="grid file: key = v1, v2, ...")
    s.add_argument("--out", help="report directory (overrides output_dir)")
    s.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    try:
        if args.command == "generate":
            cmd_generate(args.config, args.out, args.seed)
            log.info("wrote %s", args.out)
        elif args.command == "run":
            record = cmd_run(args.config, args.seed, args.out)
            log.info("amse=%.6f bwt=%.6f fwt=%.6f", record["amse"], record["bwt"],
                     record["fwt"])
        else:
            rows = cmd_sweep(args.config, args.grid, args.seed, args.out, args.jobs)
            for row in rows:
                log.info(", ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
