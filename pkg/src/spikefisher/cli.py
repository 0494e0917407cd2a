"""Command-line interface: ``spikefisher {test-spikes, regress, changepoint, simulate}``.

Exit codes: ``test-spikes`` 0 accept / 1 reject; ``regress`` 0 count found / 1
none accepted up to ``--M-max``; ``changepoint`` 0 no change / 1 change found;
``simulate`` 0 on success. Every command returns 2 on error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np

from . import __version__
from .changepoint import WindowPlan, calibrate_threshold, detect_change_point
from .csvio import read_config, read_matrix, read_vector
from .model import FisherEigs, MomentProfile, SpectrumH, estimate_beta, fisher_from_samples
from .regress import RegressionDesign, count_significant_variables
from .simharness import (
    CHANGEPOINT_MODELS,
    PROFILES,
    ExperimentSpec,
    run_changepoint_benchmark,
    run_null_histogram,
    run_size_power,
    write_manifest,
)
from .spiketest import test_spike_count

EXIT_ERROR = 2


def _parse_bulk(text: str) -> SpectrumH:
    """``"1:0.5,2:0.5"`` (location:weight pairs) or ``"delta"``."""
    if text in ("delta", "1"):
        return SpectrumH.delta()
    locs, weights = [], []
    for item in text.split(","):
        loc, _, w = item.partition(":")
        locs.append(float(loc))
        weights.append(float(w) if w else 1.0)
    return SpectrumH.from_weights(locs, weights)


def _emit(payload: dict, output: Optional[str]) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    if output:
        with open(output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, tuple)):
        return sorted(obj) if isinstance(obj, set) else list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="primary CSV input")
    p.add_argument("--output", help="write the report here instead of stdout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, help="significance level")
    p.add_argument("--orientation", choices=("rows", "columns"), default="rows", help="rows (default) or columns are observations")
    p.add_argument("--header", action="store_true", help="skip the first CSV line")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikefisher", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test-spikes", help="test H0: M = M0 spikes of a two-sample Fisher matrix")
    _shared(t)
    t.add_argument("--input2", help="second sample CSV (denominator covariance)")
    t.add_argument("--eigenvalues", help="precomputed Fisher eigenvalues instead of samples")
    t.add_argument("--n1", type=int, help="numerator degrees of freedom, with --eigenvalues")
    t.add_argument("--n2", type=int, help="denominator degrees of freedom, with --eigenvalues")
    t.add_argument("--M0", type=int, default=0)
    t.add_argument("--f", choices=("x", "log"), default="log")
    t.add_argument("--method", choices=("auto", "closed", "contour", "general"), default="auto")
    t.add_argument("--bulk", default="delta", help="bulk spectrum as loc:weight pairs, e.g. 1:0.5,2:0.5")
    t.add_argument("--moments", choices=("gaussian", "gamma", "estimate"), default="gaussian")

    r = sub.add_parser("regress", help="count significant regression variables")
    _shared(r)
    r.add_argument("--design", required=True, help="design matrix W CSV (same orientation as --input)")
    r.add_argument("--r1", type=int, required=True, help="number of leading design rows under test")
    r.add_argument("--M-max", dest="M_max", type=int, default=10)
    r.add_argument("--centering", choices=("deflated", "lsd"), default="deflated")

    c = sub.add_parser("changepoint", help="sliding-window change-point detection")
    _shared(c)
    c.add_argument("--q11", type=int, help="group-1 length (default 2p)")
    c.add_argument("--q12", type=int, help="initial group-2 length (default 2p)")
    c.add_argument("--s", type=int, default=20, help="consecutive anomalies defining a change")
    c.add_argument("--calibrate", help="anomaly-free reference CSV for an empirical threshold")
    c.add_argument("--h2-form", dest="h2_form", choices=("derived", "printed"), default="derived")

    s = sub.add_parser("simulate", help="run a simulation experiment")
    s.add_argument("--input", help="experiment spec file (key = value lines)")
    s.add_argument("--profile", choices=sorted(PROFILES), help="named experiment")
    s.add_argument("--output", required=True, help="output directory")
    s.add_argument("--seed", type=int, help="override the spec seed")
    s.add_argument("--reps", type=int, help="override the replication count")
    s.add_argument("--kind", choices=("auto", "table", "histogram", "benchmark"), default="auto")
    return parser


def cmd_test_spikes(args) -> int:
    moments = MomentProfile.gamma() if args.moments == "gamma" else MomentProfile.gaussian()
    if args.eigenvalues:
        if args.n1 is None or args.n2 is None:
            raise ValueError("--eigenvalues needs --n1 and --n2")
        if args.moments == "estimate":
            raise ValueError("--moments estimate needs sample data")
        ev = read_vector(args.eigenvalues, args.header)
        eigs = FisherEigs(ev, len(ev), args.n1, args.n2)
    else:
        if not (args.input and args.input2):
            raise ValueError("give --input and --input2, or --eigenvalues")
        x = read_matrix(args.input, args.orientation, args.header)
        y = read_matrix(args.input2, args.orientation, args.header)
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]} variables")
        eigs = fisher_from_samples(x, y)
        if args.moments == "estimate":
            moments = MomentProfile(1, max(estimate_beta(x), -2.0), max(estimate_beta(y), -2.0))
    alpha = 0.05 if args.alpha is None else args.alpha
    rep = test_spike_count(eigs, args.M0, args.f, None, _parse_bulk(args.bulk), moments, alpha, args.method)
    payload = rep.as_dict()
    payload.update(p=eigs.p, n1=eigs.n1, n2=eigs.n2, method=rep.details.get("method"), spikes=[[float(a), int(m)] for a, m in rep.details.get("spikes", ())])
    _emit(payload, args.output)
    return 1 if rep.rejected else 0


def cmd_regress(args) -> int:
    if not args.input:
        raise ValueError("--input (responses Z) is required")
    Z = read_matrix(args.input, args.orientation, args.header)
    W = read_matrix(args.design, args.orientation, args.header)
    design = RegressionDesign(Z, W, args.r1)
    alpha = 0.05 if args.alpha is None else args.alpha
    res = count_significant_variables(design, alpha, args.M_max, args.centering)
    _emit(
        {
            "count": res.count,
            "found": res.found,
            "trace": [{"M0": rep.M0, "z_score": rep.z_score, "p_value": rep.p_value, "decision": rep.decision} for rep in res.reports],
        },
        args.output,
    )
    return 0 if res.found else 1


def cmd_changepoint(args) -> int:
    if not args.input:
        raise ValueError("--input (sequence) is required")
    X = read_matrix(args.input, args.orientation, args.header)
    p = X.shape[0]
    alpha = 0.0005 if args.alpha is None else args.alpha
    plan = WindowPlan(args.q11 or 2 * p, args.q12 or 2 * p, args.s, alpha)
    plan.check(p, X.shape[1])
    threshold = None
    if args.calibrate:
        threshold = calibrate_threshold(read_matrix(args.calibrate, args.orientation, args.header), plan)
    state = detect_change_point(X, plan, threshold, h2_form=args.h2_form)
    _emit(
        {
            "change_point": state.change_point,
            "anomaly_set": state.anomaly_set,
            "windows": state.window_index,
            "threshold": threshold,
            "z_scores": state.z_scores,
        },
        args.output,
    )
    return 1 if state.detected else 0


def cmd_simulate(args) -> int:
    if args.profile and args.input:
        raise ValueError("give either --profile or --input")
    if args.profile:
        spec = PROFILES[args.profile]
    elif args.input:
        cfg = read_config(args.input)
        profile = cfg.pop("profile", None)
        if profile is not None and profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}")
        spec = ExperimentSpec.from_mapping(cfg, PROFILES.get(profile))
    else:
        raise ValueError("give --profile or --input")
    changes = {k: v for k, v in (("seed", args.seed), ("reps", args.reps)) if v is not None}
    if changes:
        spec = replace(spec, **changes)
    kind = args.kind
    if kind == "auto":
        kind = "benchmark" if spec.model in CHANGEPOINT_MODELS else "table"
    os.makedirs(args.output, exist_ok=True)
    if kind == "table":
        result = run_size_power(spec)
        result.write_csv(os.path.join(args.output, "size_power.csv"))
        summary = {"rows": [[r.M0, r.frequency, r.std_error] for r in result.rows], "failures": result.failures}
    elif kind == "histogram":
        result = run_null_histogram(spec)
        result.write_csv(os.path.join(args.output, "null_histogram.csv"))
        summary = {"ks_distance": result.ks_distance, "failures": result.failures}
    else:
        result = run_changepoint_benchmark(spec)
        result.write_csv(os.path.join(args.output, "changepoint.csv"))
        summary = {"accuracy": result.accuracy, "outlier_hits": result.outlier_hits}
    write_manifest(os.path.join(args.output, "manifest.json"), spec, kind=kind, summary=summary)
    _emit({"kind": kind, "scenario": spec.scenario, **summary}, None)
    return 0


COMMANDS = {
    "test-spikes": cmd_test_spikes,
    "regress": cmd_regress,
    "changepoint": cmd_changepoint,
    "simulate": cmd_simulate,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else EXIT_ERROR
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"spikefisher {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
