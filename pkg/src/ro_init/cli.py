"""Command-line entry point: ``ro-init bench | solve | discover``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .extraction import HomogenizationCollapse, NotSolved, estimate, pose_errors
from .local import lm_solve, random_init
from .qcqp import make_layout
from .redundancy import discover_constraints, save_basis
from .scenario import PRESETS, dumps_json, load_scenario, make_trial, preset
from .sdp import SdpStatus

log = logging.getLogger("ro_init")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ro-init", description="Range-only pose initialization tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="Monte Carlo comparison of SDP and LS")
    b.add_argument("--preset", required=True, choices=sorted(PRESETS) + [bench.REAL_LIKE])
    b.add_argument("--sigma", type=_floats, default=None, help="noise levels, comma or space separated")
    b.add_argument("--trials", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.add_argument("--exact-dynamic", action="store_true", help="use the approximation-free dynamic builder")
    b.add_argument("--no-refine", action="store_true", help="skip LM polishing of the SDP estimate")
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--no-timings", action="store_true", help="leave time columns blank (byte-stable output)")

    s = sub.add_parser("solve", help="estimate the pose of one scenario file")
    s.add_argument("--scenario", required=True)
    s.add_argument("--method", choices=("sdp", "ls"), default="sdp")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0, help="LS start seed")
    s.add_argument("--exact-dynamic", action="store_true")
    s.add_argument("--no-refine", action="store_true")

    d = sub.add_parser("discover", help="discover and save the redundant constraint basis of a preset")
    d.add_argument("--preset", required=True, choices=sorted(PRESETS))
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    return p


def _bench(args) -> int:
    kw = dict(
        trials=args.trials,
        seed=args.seed,
        exact_dynamic=args.exact_dynamic,
        refine=False if args.no_refine else None,
        threads=args.threads,
    )
    if args.preset == bench.REAL_LIKE:
        spec = bench.real_like(**kw)
        if args.sigma is not None:
            spec = bench.ExperimentSpec(spec.preset, args.sigma, label=spec.label, **kw)
        print(f"{spec.label}: preset {spec.preset}, sigma_r {spec.noise_levels}")
    else:
        sigma = bench.DEFAULT_NOISE if args.sigma is None else args.sigma
        spec = bench.ExperimentSpec(args.preset, sigma, **kw)
    exp = bench.run_experiment(spec)
    paths = bench.emit_outputs(exp.records, args.out, summary=exp.summary, timings=not args.no_timings)
    for row in exp.summary:
        extra = ""
        if row["method"] == bench.SDP:
            extra = f"  f_eig median {row['f_eig_median']:.2f}  rank-1 {row['rank1_fraction']:.0%}"
        print(
            f"sigma {row['sigma_r']:<6g} {row['method']:<3}  pos median {row['pos_median']:.3e}"
            f"  rot median {row['rot_median']:.3e}{extra}"
        )
    for p in paths:
        log.info("wrote %s", p)
    n_fail = sum(r.status == SdpStatus.NUMERICAL_FAILURE.value for r in exp.records)
    if n_fail:
        print(f"{n_fail} trial(s) ended in NumericalFailure", file=sys.stderr)
        return 1
    return 0


def _pose_doc(pose, twist) -> dict:
    doc = {"rotation": pose.rotation.tolist(), "translation": pose.translation.tolist()}
    if twist is not None:
        doc["twist"] = {"angular": np.atleast_1d(twist.angular).tolist(), "linear": twist.linear.tolist()}
    return doc


def _solve(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.method == "ls":
        rep = lm_solve(scenario, scenario.measurements, random_init(scenario, args.seed))
        st = rep.final_state
        doc = {
            "method": "ls",
            "estimate": _pose_doc(st.pose, st.twist),
            "cost": rep.final_cost,
            "iterations": rep.iterations,
            "converged": rep.converged,
        }
        if scenario.truth is not None:
            doc["position_error"], doc["rotation_error"] = pose_errors(scenario, st.pose, st.twist)
        status = 0
    else:
        try:
            rep = estimate(scenario, exact=args.exact_dynamic, refine=False if args.no_refine else None)
        except (HomogenizationCollapse, NotSolved) as exc:
            print(f"no estimate: {exc}", file=sys.stderr)
            return 1
        cert = rep.certificate
        doc = {
            "method": "sdp",
            "estimate": _pose_doc(rep.pose, rep.twist),
            "status": rep.status.value,
            "certificate": {
                "f_eig": cert.f_eig,
                "rank1": cert.rank1,
                "threshold": cert.threshold,
                "duality_gap_rel": cert.duality_gap_rel,
                "relaxation_gap": cert.relaxation_gap,
            },
            "sdp_cost": rep.sdp_cost,
            "cost": rep.map_cost,
            "timing": rep.timing,
        }
        if rep.position_error is not None:
            doc["position_error"] = rep.position_error
            doc["rotation_error"] = rep.rotation_error
        status = 1 if rep.status is SdpStatus.NUMERICAL_FAILURE else 0
    Path(args.out).write_text(dumps_json(doc))
    print(f"{args.method}: wrote {args.out}")
    return status


def _discover(args) -> int:
    scenario = make_trial(preset(args.preset), args.seed)
    layout = make_layout(scenario)
    basis = discover_constraints(scenario, layout=layout)
    save_basis(basis, args.out)
    print(f"{args.preset}: n={basis.n}, {basis.dim} constraints, layout {basis.layout_key}; wrote {args.out}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handler = {"bench": _bench, "solve": _solve, "discover": _discover}[args.command]
    try:
        return handler(args)
    except (OSError, ValueError) as exc:
        print(f"ro-init {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
