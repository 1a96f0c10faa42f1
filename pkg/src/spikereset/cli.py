"""Command line entry point: ``spikereset {validate,simulate,verify,report}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, config_hash, load_config
from .model import InvalidParams, UnknownFamily, make_builtin_model, validate_model, FAMILIES

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

SUITE_NAMES = ["e1", "e2", "counts", "transforms", "asymptotics", "limit-compare", "intensity-constant"]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_reports(path: Path, reports, cfg: ExperimentConfig, suite: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    with open(path, "w") as fh:
        for r in reports:
            d = r.to_dict()
            d["suite"] = suite
            d["config_hash"] = h
            d["seed"] = cfg.seed
            fh.write(json.dumps(d, sort_keys=True) + "\n")


def _load(args) -> ExperimentConfig:
    return load_config(args.config, seed=args.seed)


def cmd_validate(args) -> int:
    cfg = _load(args)
    fam, params = cfg.model.family, cfg.model.params
    if fam not in FAMILIES:
        print(f"unknown model family {fam!r}", file=sys.stderr)
        return EXIT_FAIL
    try:
        m = make_builtin_model(fam, params)
    except InvalidParams as exc:
        print(f"invalid model: {exc}", file=sys.stderr)
        return EXIT_FAIL
    rep = validate_model(m, 1000)
    print(json.dumps({"model": m.describe(), "ok": rep.ok, "violations": [list(v) for v in rep.violations]}))
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_simulate(args) -> int:
    from .flow import FlowContext
    from .sampler import RngStream, simulate, simulate_trajectory
    from .experiments import sub_seed

    cfg = _load(args)
    out = Path(args.out or cfg.out)
    m = make_builtin_model(cfg.model.family, cfg.model.params)
    h = config_hash(cfg)
    for eps in cfg.eps:
        ctx = FlowContext(m, eps, cfg.beta)
        stream = RngStream(sub_seed(cfg.seed, "simulate", float(eps)), 0)
        pat = simulate(ctx, stream, cfg.horizon)
        rows = [["spike", t, x] for t, x in pat.points]
        rows += [["e_odd", t, ""] for t, _ in pat.jump_epochs] + [["e_even", t, ""] for _, t in pat.jump_epochs]
        rows.sort(key=lambda r: (r[1], r[0]))
        write_csv(out / f"points_eps{eps:g}.csv", ["kind", "t", "x"], rows)
        if cfg.horizon > 0:
            traj = simulate_trajectory(ctx, stream, cfg.horizon, cfg.grid_n)
        else:
            traj = np.empty((0, 2))
        write_csv(out / f"trajectory_eps{eps:g}.csv", ["t", "x"], traj.tolist())
    (out / "simulate_meta.json").write_text(json.dumps({"config_hash": h, "seed": cfg.seed,
                                                        "eps": cfg.eps, "horizon": cfg.horizon}, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .experiments import run_suite

    cfg = _load(args)
    out = Path(args.out or cfg.out)
    res = run_suite(args.suite, cfg, args.threads)
    for name, tab in res.tables.items():
        write_csv(out / f"{args.suite}_{name}.csv", tab.header, tab.rows)
    write_reports(out / f"{args.suite}_reports.jsonl", res.reports, cfg, args.suite)
    for r in res.reports:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  statistic={r.statistic:.6g}  "
              f"threshold={r.threshold_or_pvalue:.6g}")
    return EXIT_OK if res.ok else EXIT_FAIL


def cmd_report(args) -> int:
    cfg = _load(args)
    out = Path(args.out or cfg.out)
    files = sorted(out.glob("*_reports.jsonl"))
    if not files:
        print(f"no report files in {out}", file=sys.stderr)
        return EXIT_FAIL
    rows, ok = [], True
    for f in files:
        for line in f.read_text().splitlines():
            d = json.loads(line)
            rows.append([d["suite"], d["name"], d["statistic"], d["threshold_or_pvalue"], d["pass"]])
            ok &= bool(d["pass"])
    write_csv(out / "summary.csv", ["suite", "name", "statistic", "threshold_or_pvalue", "pass"], rows)
    for r in rows:
        print(",".join(str(_fmt(v)) for v in r))
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    common.add_argument("--out", help="output directory (default: config 'out')")
    p = argparse.ArgumentParser(prog="spikereset", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check the model admissibility conditions")
    sub.add_parser("simulate", parents=[common], help="write pre-spike and trajectory CSVs")
    v = sub.add_parser("verify", parents=[common], help="run a verification suite")
    v.add_argument("--suite", required=True, choices=SUITE_NAMES)
    sub.add_parser("report", parents=[common], help="summarise report files in the output directory")
    return p


COMMANDS = {"validate": cmd_validate, "simulate": cmd_simulate, "verify": cmd_verify, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (UnknownFamily, InvalidParams) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
