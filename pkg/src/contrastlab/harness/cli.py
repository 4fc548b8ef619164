"""Command line entry point.

Exit codes: 0 success, 1 a check or assertion failed, 2 configuration error
(with a JSON error object on stderr).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .._rng import derive_seed
from ..dpopt import DivergenceError
from ..loss import cross_covariance
from ..oracle import convexity_certificate, empirical_minimizer
from ..privacy import (ACCOUNTANT_LABEL, CalibrationConstants, PrivacyBudget, calibrate_sigma,
                       preconditions, rdp_epsilon)
from ..synthdata import PairedDataset, SpikedModelSpec, build_model_spec, generate_pairs
from . import checks
from .config import ConfigError, ExperimentConfig, ModelParams, n_sweep_config
from .experiments import (Problem, build_spec, make_problem, run_statistical_sweep,
                          run_tradeoff_sweep, train_once)
from .io import dumps, render_markdown, write_report


def apply_overrides(cfg: ExperimentConfig, assignments: Sequence[str]) -> ExperimentConfig:
    """Apply ``dotted.key=value`` overrides; values are parsed as JSON when possible."""
    data = cfg.to_dict()
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        *parents, leaf = key.split(".")
        for part in parents:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config section {part!r} in {key!r}")
            node = node[part]
        if leaf not in node:
            raise ConfigError(f"unknown config field {key!r}")
        node[leaf] = value
    return ExperimentConfig.from_dict(data)


def _load_config(args, default: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else (default or ExperimentConfig())
    cfg = apply_overrides(cfg, args.set or [])
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out=args.out)
    return cfg


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    m, n = cfg.model, cfg.n
    fields = {f.name: getattr(args, f.name) for f in dataclasses.fields(ModelParams)
              if getattr(args, f.name, None) is not None}
    m = dataclasses.replace(m, **fields)
    n = args.n if args.n is not None else n
    data_seed = args.data_seed if args.data_seed is not None else m.seed
    spec = build_model_spec(m.d1, m.d2, m.r, m.snr1, m.snr2, m.kappa, m.seed)
    ds = generate_pairs(spec, n, data_seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    spec.to_json(out / "spec.json")
    ds.to_csv(out / "data.csv")
    print(dumps({"spec": str(out / "spec.json"), "data": str(out / "data.csv"), "n": n}), end="")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    tp = cfg.train
    if args.spec:
        spec = SpikedModelSpec.from_json(args.spec)
    else:
        spec = build_spec(cfg)
    data_seed = derive_seed(cfg.seed, 0, 0)
    train_seed = derive_seed(cfg.seed, 1, 0)
    if args.data:
        ds = PairedDataset.from_csv(args.data)
        S = cross_covariance(ds)
        prob = Problem(ds, empirical_minimizer(S, spec.r, tp.alpha), convexity_certificate(S, spec.r, tp.alpha))
    else:
        prob = make_problem(spec, cfg.n, tp.alpha, data_seed)
    b = min(tp.b, prob.ds.n)
    G, trace, tcfg = train_once(prob, dataclasses.replace(tp, b=b), tp.sigma, train_seed, with_oracle=True)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "trace.csv")
    (out / "final.json").write_text(dumps({
        "G1": G.G1.tolist(), "G2": G.G2.tolist(), "eta": tcfg.eta, "final_dist": trace.final_dist,
        "config": cfg.provenance_dict(), "seeds": {"data": data_seed, "train": train_seed},
    }))
    print(dumps({"trace": str(out / "trace.csv"), "final_dist": trace.final_dist}), end="")
    return 0


def cmd_calibrate(args) -> int:
    budget = PrivacyBudget(args.eps, args.delta)
    consts = CalibrationConstants(args.c_sigma, args.c_eps)
    pre = preconditions(args.n, args.b, args.T, budget, consts)
    sigma = calibrate_sigma(args.n, args.b, args.T, budget, consts, strict=False)
    acc = rdp_epsilon(sigma / 2.0, args.b / args.n, args.T, args.delta)
    out = {
        "sigma": sigma,
        "preconditions": pre,
        "constants": {"c_sigma": consts.c_sigma, "c_eps": consts.c_eps},
        "accountant_epsilon": acc,
        "accountant_note": ACCOUNTANT_LABEL,
    }
    print(dumps(out), end="")
    if args.strict and not all(p["ok"] for p in pre.values()):
        raise ConfigError("calibration preconditions violated")
    return 0


def _sweep(args, runner, default, stem) -> int:
    cfg = _load_config(args, default)
    report = runner(cfg)
    write_report(report, cfg.out, stem)
    print(render_markdown(report.to_dict()), end="")
    return 0 if report.passed else 1


def cmd_sweep_epsilon(args) -> int:
    return _sweep(args, run_tradeoff_sweep, None, "sweep_epsilon")


def cmd_sweep_n(args) -> int:
    return _sweep(args, run_statistical_sweep, n_sweep_config(), "sweep_n")


def cmd_verify(args) -> int:
    results = checks.run_all()
    for r in results:
        print(f"[{'PASS' if r['passed'] else 'FAIL'}] {r['name']}")
    if args.json:
        Path(args.json).write_text(dumps(results))
    return 0 if all(r["passed"] for r in results) else 1


def cmd_report(args) -> int:
    try:
        data = json.loads(Path(args.path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {args.path}: {exc}") from exc
    print(render_markdown(data), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contrastlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="override the root seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field, e.g. train.T=200 (repeatable)")

    g = sub.add_parser("gen", help="write a synthetic dataset (CSV) and its model (JSON)")
    common(g)
    for f in dataclasses.fields(ModelParams):
        if f.name != "seed":
            g.add_argument(f"--{f.name}", type=int if f.type in ("int", int) else float)
    g.add_argument("--n", type=int)
    g.add_argument("--data-seed", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="run private training and write trace.csv")
    common(t)
    t.add_argument("--data", help="dataset CSV from `gen` (default: generate)")
    t.add_argument("--spec", help="model JSON from `gen`")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("calibrate", help="noise multiplier for an (eps, delta) budget")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--b", type=int, required=True)
    c.add_argument("--T", type=int, required=True)
    c.add_argument("--eps", type=float, required=True)
    c.add_argument("--delta", type=float, required=True)
    c.add_argument("--c-sigma", type=float, default=1.0)
    c.add_argument("--c-eps", type=float, default=1.0)
    c.add_argument("--strict", action="store_true", help="exit 2 if a precondition fails")
    c.set_defaults(func=cmd_calibrate)

    se = sub.add_parser("sweep-epsilon", help="privacy-utility sweep")
    common(se)
    se.set_defaults(func=cmd_sweep_epsilon)
    sn = sub.add_parser("sweep-n", help="statistical error versus sample size")
    common(sn)
    sn.set_defaults(func=cmd_sweep_n)

    v = sub.add_parser("verify", help="run the invariant suite")
    v.add_argument("--json", help="also write results to this file")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", help="render a report JSON as markdown")
    r.add_argument("path")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    except (AssertionError, DivergenceError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
