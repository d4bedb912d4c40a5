"""Command-line interface: ``quacc {test,graph,pairwise,bench,simulate}``.

Exit codes: 0 success, 2 invalid configuration, 3 data error, 4 estimation failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .citest import CITestError, PartialCorrTest, QuaccTest
from .dataset import DataError, Dataset, jitter, load_csv, qq_transform, write_csv
from .estimator import QuaccError, quacc_test
from .experiments import (
    GraphBenchConfig,
    RejectionConfig,
    config_dict,
    rejection_rates,
    run_graph_bench,
    run_rejection_grid,
    summarize_graph,
)
from .metrics import curve_csv, matrix_csv, recovery_csv, recovery_text
from .pc import SkeletonError, majority_vote, pc_skeleton
from .quantreg import QuantRegError
from .synth import SynthError, gen_graph, gen_pairwise

log = logging.getLogger("quacc")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- parsing


def parse_floats(text: str) -> list[float]:
    """``"0.1,0.5,0.9"`` or an inclusive range ``"start:stop:step"``."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if step <= 0 or stop < start:
                raise ConfigError(f"bad range {text!r}")
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 10) for i in range(count)]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list {text!r}") from exc


def parse_names(text: str | None) -> list[str]:
    if not text:
        return []
    return [p.strip() for p in text.split(",") if p.strip()]


def validate(args: argparse.Namespace) -> None:
    for tau in getattr(args, "tau", None) or []:
        if not 0.0 < tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {tau:g}")
    K = getattr(args, "K", None)
    if K is not None and K < 2:
        raise ConfigError("K must be at least 2")
    alpha = getattr(args, "alpha", None)
    if alpha is not None and not 0.0 < alpha <= 0.5:
        raise ConfigError("alpha must lie in (0, 0.5]")
    for name in ("replicates", "n", "subsample", "workers"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise ConfigError(f"--{name} must be positive")


def _tau_list(text: str) -> list[float]:
    try:
        return parse_floats(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quacc", description="Quantile association tests and graph learning.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, taus="0.1,0.5,0.9", seed_required=True):
        sp.add_argument("--tau", "--taus", dest="tau", type=_tau_list, default=parse_floats(taus))
        sp.add_argument("--K", type=int, default=5, help="cross-fitting folds")
        sp.add_argument("--alpha", type=float, default=0.05)
        sp.add_argument("--seed", type=int, required=seed_required)
        sp.add_argument("--bandwidth", choices=("hall_sheather", "bofinger"), default="hall_sheather")

    def prep(sp):
        sp.add_argument("csv", type=Path)
        sp.add_argument("--delimiter", default=",")
        sp.add_argument("--jitter", default="", help="comma-separated columns to jitter, or 'all'")
        sp.add_argument("--qq", action="store_true", help="rank-based normal-scores transform")

    t = sub.add_parser("test", help="QuACC test of one pair at each tau")
    prep(t)
    common(t)
    t.add_argument("--y", required=True)
    t.add_argument("--x", required=True)
    t.add_argument("--z", default="", help="comma-separated conditioning columns")
    t.add_argument("--theta", type=float, default=None, help="test rho = theta instead of independence")
    t.add_argument("--json", dest="json_out", default=None, help="write the JSON report here ('-' for stdout)")
    t.add_argument("--dump-models", type=Path, default=None, help="write per-fold quantile fits as JSON")

    g = sub.add_parser("graph", help="PC skeleton per tau, optionally majority-voted over subsamples")
    prep(g)
    common(g)
    g.add_argument("--vars", default="", help="columns to use (default: all)")
    g.add_argument("--backend", choices=("quacc", "pcorr"), default="quacc")
    g.add_argument("--max-order", type=int, default=None)
    g.add_argument("--replicates", type=int, default=1)
    g.add_argument("--subsample", type=int, default=None, help="rows per replicate (default: all)")
    g.add_argument("--accept-on-insufficient", action="store_true")
    g.add_argument("--out", type=Path, required=True)

    pw = sub.add_parser("pairwise", help="QuACC matrix over all pairs")
    prep(pw)
    common(pw)
    pw.add_argument("--vars", default="")
    pw.add_argument("--mode", choices=("marginal", "maximal"), default="marginal")
    pw.add_argument("--out", type=Path, required=True)

    b = sub.add_parser("bench", help="simulation benchmarks")
    bsub = b.add_subparsers(dest="bench", required=True)
    br = bsub.add_parser("reject", help="rejection rates over a copula-parameter or tau grid")
    common(br, taus="0.1,0.5,0.9")
    br.add_argument("--setting", choices=("S1", "S2", "S3"), default="S1")
    br.add_argument("--n", type=int, default=400)
    br.add_argument("--thetas", type=_tau_list, default=None, help="copula parameters (default: setting value)")
    br.add_argument("--replicates", type=int, default=100)
    br.add_argument("--workers", type=int, default=None)
    br.add_argument("--out", type=Path, required=True)
    bg = bsub.add_parser("graph", help="skeleton recovery on the ten-variable system")
    common(bg)
    bg.add_argument("--n", type=int, default=5000)
    bg.add_argument("--backend", choices=("quacc", "pcorr", "both"), default="both")
    bg.add_argument("--replicates", type=int, default=20)
    bg.add_argument("--mean-effects", action="store_true")
    bg.add_argument("--max-order", type=int, default=None)
    bg.add_argument("--workers", type=int, default=None)
    bg.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("simulate", help="write a synthetic dataset with a JSON sidecar")
    s.add_argument("--setting", choices=("S1", "S2", "S3", "graph", "graph-mean"), required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--theta", type=float, default=None)
    s.add_argument("--out", type=Path, required=True)
    return p


# ---------------------------------------------------------------- helpers


def _load(args: argparse.Namespace, needed: Sequence[str] = ()) -> Dataset:
    if not args.csv.is_file():
        raise DataError(f"no such file: {args.csv}")
    data = load_csv(args.csv, args.delimiter)
    for name in needed:
        if name not in data:
            raise DataError(f"unknown column {name!r}")
    cols = data.names if args.jitter == "all" else parse_names(args.jitter)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0x717]))
    for name in cols:
        if name not in data:
            raise DataError(f"unknown column {name!r}")
        v = data.column(name).copy()
        ok = ~np.isnan(v)
        v[ok] = jitter(v[ok], rng)
        data = data.with_column(name, v)
    if args.qq:
        for name in needed or data.names:
            data = data.with_column(name, qq_transform(data.column(name)))
    return data


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _tau_tag(tau: float) -> str:
    return f"{tau:g}".replace(".", "p")


# ---------------------------------------------------------------- commands


def cmd_test(args: argparse.Namespace) -> int:
    Z = parse_names(args.z)
    data = _load(args, [args.y, args.x, *Z])
    results, models = [], {}
    for tau in args.tau:
        cache: dict = {}
        res = quacc_test(
            data, args.y, args.x, Z, tau, args.K, args.seed, args.alpha,
            bandwidth_rule=args.bandwidth, theta=args.theta, cache=cache,
        )
        results.append(res)
        if args.dump_models:
            per_var: dict = {}
            for key, mm in sorted(cache.items(), key=lambda kv: (kv[0][3], kv[0][7])):
                per_var.setdefault(key[3], []).append(
                    {"fold": key[7], "h": mm.h, "fit": mm.fit.to_dict(), "lo": mm.lo.to_dict(), "hi": mm.hi.to_dict()}
                )
            models[f"{tau:g}"] = per_var
    report = {
        "command": "test",
        "input": str(args.csv),
        "y": args.y,
        "x": args.x,
        "Z": Z,
        "K": args.K,
        "alpha": args.alpha,
        "seed": args.seed,
        "results": [r.to_dict() for r in results],
    }
    if args.json_out == "-":
        print(json.dumps(report, indent=2))
    else:
        print(f"{'tau':>5}  {'rho':>8}  {'rho*':>8}  {'z':>8}  {'p':>10}  {'n':>6}")
        for r in results:
            print(f"{r.tau:>5g}  {r.rho_hat:>8.4f}  {r.rho_star:>+8.4f}  {r.z:>+8.3f}  {r.p_value:>10.4g}  {r.n_effective:>6d}")
        if args.json_out:
            _write(Path(args.json_out), json.dumps(report, indent=2) + "\n")
    if args.dump_models:
        _write(args.dump_models, json.dumps(models, indent=2) + "\n")
    return EXIT_OK


def cmd_graph(args: argparse.Namespace) -> int:
    names = parse_names(args.vars)
    data = _load(args, names)
    names = names or list(data.names)
    if args.subsample is not None and args.subsample > data.n_rows:
        raise ConfigError(f"--subsample {args.subsample} exceeds {data.n_rows} rows")
    taus = args.tau if args.backend == "quacc" else [None]
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0x5B]))
    samples = []
    for _ in range(args.replicates):
        if args.subsample is None:
            samples.append(data)
        else:
            rows = np.sort(rng.choice(data.n_rows, args.subsample, replace=False))
            samples.append(data.select_rows(rows))
    summary = []
    for tau in taus:
        skeletons = []
        for d in samples:
            if tau is None:
                test = PartialCorrTest()
            else:
                test = QuaccTest(tau, args.K, args.seed, args.accept_on_insufficient, args.bandwidth)
            skeletons.append(pc_skeleton(d, names, test, args.alpha, args.max_order))
        tag = "pcorr" if tau is None else f"tau{_tau_tag(tau)}"
        _write(args.out / f"skeleton_{tag}.json", skeletons[0].to_json() + "\n")
        _write(args.out / f"skeleton_{tag}.dot", skeletons[0].to_dot(tag))
        entry = {"tau": tau, "edges": [list(e) for e in skeletons[0].edge_list()]}
        if args.replicates > 1:
            vote = majority_vote(skeletons)
            _write(args.out / f"vote_{tag}.json", vote.to_json() + "\n")
            _write(args.out / f"vote_{tag}.dot", vote.to_dot(f"vote_{tag}"))
            entry["vote_edges"] = [list(e) for e in vote.edge_list()]
        summary.append(entry)
        shown = entry.get("vote_edges", entry["edges"])
        print(f"{tag}: {len(shown)} edges: " + ", ".join(f"{a}-{b}" for a, b in shown))
    return EXIT_OK


def cmd_pairwise(args: argparse.Namespace) -> int:
    names = parse_names(args.vars)
    data = _load(args, names)
    names = names or list(data.names)
    if len(names) < 2:
        raise ConfigError("need at least two variables")
    p = len(names)
    report = {"command": "pairwise", "mode": args.mode, "variables": names, "results": []}
    for tau in args.tau:
        mats = {k: np.full((p, p), np.nan) for k in ("rho", "rho_star", "p_value")}
        for i, j in combinations(range(p), 2):
            Z = [] if args.mode == "marginal" else [v for k, v in enumerate(names) if k not in (i, j)]
            res = quacc_test(data, names[i], names[j], Z, tau, args.K, args.seed, args.alpha, bandwidth_rule=args.bandwidth)
            for key, val in (("rho", res.rho_hat), ("rho_star", res.rho_star), ("p_value", res.p_value)):
                mats[key][i, j] = mats[key][j, i] = val
            report["results"].append(res.to_dict())
        for key, m in mats.items():
            _write(args.out / f"{args.mode}_tau{_tau_tag(tau)}_{key}.csv", matrix_csv(names, m))
    _write(args.out / f"{args.mode}_report.json", json.dumps(report, indent=2) + "\n")
    print(f"wrote {len(report['results'])} tests to {args.out}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    if args.bench == "reject":
        thetas = tuple(args.thetas) if args.thetas else (None,)
        if None in thetas:
            from .synth import PAIRWISE_THETA

            thetas = (PAIRWISE_THETA[args.setting],)
        cfg = RejectionConfig(args.setting, args.n, thetas, tuple(args.tau), args.replicates, args.alpha, args.K, args.seed, args.workers)
        records = run_rejection_grid(cfg)
        rows = [
            f"{r.setting},{r.theta:.6g},{r.tau:.6g},{r.rep},{int(r.rejected)},{r.p_value:.6g},{r.rho_hat:.6g},{r.error}"
            for r in records
        ]
        _write(args.out / "records.csv", "setting,theta,tau,rep,rejected,p_value,rho_hat,error\n" + "\n".join(rows) + "\n")
        _write(args.out / "curve_theta.csv", curve_csv(rejection_rates(records, "theta"), "theta"))
        _write(args.out / "curve_tau.csv", curve_csv(rejection_rates(records, "tau"), "tau"))
        _write(args.out / "config.json", json.dumps(config_dict(cfg), indent=2) + "\n")
        failed = sum(bool(r.error) for r in records)
        for name, pts in rejection_rates(records, "theta").items():
            print(name + ": " + ", ".join(f"theta={t:g}:{rate:.3f}" for t, rate in pts))
        if failed:
            print(f"{failed} replicate tests failed and were excluded", file=sys.stderr)
        return EXIT_OK
    backends = ("quacc", "pcorr") if args.backend == "both" else (args.backend,)
    cfg = GraphBenchConfig(
        args.n, tuple(args.tau), backends, args.replicates, args.mean_effects, args.alpha,
        args.K, args.seed, args.max_order, args.workers,
    )
    records = run_graph_bench(cfg)
    table = summarize_graph(records, args.n)
    _write(args.out / "recovery.csv", recovery_csv(table))
    _write(args.out / "recovery.txt", recovery_text(table))
    reps = [
        {"rep": r.rep, "backend": r.backend, "tau": r.tau, "error": r.error,
         "metrics": r.metrics.to_dict() if r.metrics else None, "edges": [list(e) for e in r.edges]}
        for r in records
    ]
    _write(args.out / "replicates.json", json.dumps({"config": config_dict(cfg), "replicates": reps}, indent=2) + "\n")
    print(recovery_text(table), end="")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    truth = None
    if args.setting.startswith("graph"):
        if args.theta is not None:
            raise ConfigError("--theta applies to pairwise settings only")
        data, truth, spec = gen_graph(args.n, args.setting == "graph-mean", rng, seed=args.seed)
    else:
        data, spec = gen_pairwise(args.setting, args.n, rng, theta=args.theta)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(data, args.out)
    side = {"seed": args.seed, "dgp": spec.to_dict(), "truth": truth.to_dict() if truth else None}
    side["dgp"]["seed"] = args.seed
    _write(args.out.with_suffix(args.out.suffix + ".json"), json.dumps(side, indent=2) + "\n")
    print(f"wrote {data.n_rows} rows to {args.out}")
    return EXIT_OK


COMMANDS = {
    "test": cmd_test,
    "graph": cmd_graph,
    "pairwise": cmd_pairwise,
    "bench": cmd_bench,
    "simulate": cmd_simulate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        validate(args)
        return COMMANDS[args.command](args)
    except (ConfigError, SynthError) as exc:
        print(f"quacc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"quacc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (QuaccError, CITestError, QuantRegError, SkeletonError) as exc:
        print(f"quacc: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
