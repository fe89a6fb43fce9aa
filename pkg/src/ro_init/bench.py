"""Monte Carlo comparison of the relaxation pipeline against LM from random starts.

Every trial draws its scenario, noise draw and LM start from seeds derived
from ``(seed, trial)`` only, so the same trial id sees the same geometry and
the same standard-normal noise at every noise level (common random numbers),
and results do not depend on how trials are spread over threads.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .extraction import (
    HomogenizationCollapse,
    NotSolved,
    estimate,
    pose_errors,
    relaxation_model,
)
from .local import lm_solve, random_init
from .objective import map_cost
from .qcqp import make_layout
from .scenario import PRESETS, Scenario, make_trial, preset
from .sdp import SdpStatus, min_eig

DEFAULT_NOISE = (0.01, 0.03, 0.05, 0.08, 0.1)
SDP = "SDP"
LS = "LS"
CSV_HEADER = (
    "trial",
    "sigma_r",
    "method",
    "pos_err",
    "rot_err",
    "f_eig",
    "gap",
    "cost",
    "t_build",
    "t_sdp",
    "t_extract",
    "status",
)
TIME_COLUMNS = ("t_build", "t_sdp", "t_extract")
REAL_LIKE = "real-like"
REAL_LIKE_SIGMA = 0.08


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    preset: str
    noise_levels: tuple = DEFAULT_NOISE
    trials: int = 100
    seed: int = 0
    exact_dynamic: bool = False
    refine: Optional[bool] = None
    max_iter: int = 100
    tol: float = 1e-9
    out_dir: Optional[str] = None
    threads: int = 1
    methods: tuple = (SDP, LS)
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "noise_levels", tuple(float(s) for s in self.noise_levels))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.preset not in PRESETS:
            raise SpecError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.trials < 1:
            raise SpecError("trials must be at least 1")
        if not self.noise_levels:
            raise SpecError("at least one noise level is needed")
        if any(not (s >= 0.0 and math.isfinite(s)) for s in self.noise_levels):
            raise SpecError(f"noise levels must be finite and nonnegative: {self.noise_levels}")
        if self.exact_dynamic and PRESETS[self.preset].mode.value == "dynamic25":
            raise SpecError("the approximation-free builder covers 2D dynamic windows only")
        if self.threads < 1:
            raise SpecError("threads must be at least 1")
        bad = set(self.methods) - {SDP, LS}
        if bad or not self.methods:
            raise SpecError(f"methods must be a nonempty subset of {SDP}, {LS}")


def real_like(trials: int = 10, seed: int = 0, **kw) -> ExperimentSpec:
    """2.5D dynamic simulation at the noise level of the hardware runs."""
    return ExperimentSpec(
        "dynamic25d",
        (REAL_LIKE_SIGMA,),
        trials,
        seed,
        label="real-like (simulation, not hardware data)",
        **kw,
    )


@dataclass(eq=False)
class TrialRecord:
    trial: int
    sigma_r: float
    method: str
    position_error: float
    rotation_error: float
    f_eig: float
    duality_gap_rel: float
    cost: float
    t_build: float
    t_sdp: float
    t_extract: float
    status: str
    rank1: Optional[bool] = None
    # cost of the final estimate under the model the relaxation bounds, and
    # the relaxation's primal value: the lower-bound check compares these
    bound_cost: float = math.nan
    sdp_primal: float = math.nan
    state_dim: int = 0
    # solver-level checks; the full report is not kept because its solution
    # holds the constraint matrix and large sweeps would pile those up
    solver_gap: float = math.nan
    slack_min_eig: float = math.nan
    slack_norm: float = math.nan

    def row(self, timings: bool = True) -> list:
        t = (self.t_build, self.t_sdp, self.t_extract) if timings else (math.nan,) * 3
        return [
            str(self.trial),
            _num(self.sigma_r),
            self.method,
            _num(self.position_error),
            _num(self.rotation_error),
            _num(self.f_eig),
            _num(self.duality_gap_rel),
            _num(self.cost),
            *(_num(x) for x in t),
            self.status,
        ]


@dataclass(eq=False)
class Experiment:
    spec: ExperimentSpec
    records: list
    summary: list

    @property
    def failed(self) -> bool:
        return any(r.status == SdpStatus.NUMERICAL_FAILURE.value for r in self.records)


def _num(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.9g}"


def trial_seed(seed: int, trial: int, stream: int = 0) -> int:
    """Seed for one trial's randomness, independent of noise level and threads."""
    return int(np.random.SeedSequence([seed, trial, stream]).generate_state(1)[0])


def trial_scenario(spec: ExperimentSpec, trial: int, sigma_r: float) -> Scenario:
    return make_trial(preset(spec.preset, sigma_r), trial_seed(spec.seed, trial))


def _sdp_record(spec: ExperimentSpec, scenario: Scenario, trial: int) -> TrialRecord:
    sigma = scenario.sigma_r
    try:
        rep = estimate(
            scenario,
            exact=spec.exact_dynamic,
            refine=spec.refine,
            max_iter=spec.max_iter,
            tol=spec.tol,
        )
    except (HomogenizationCollapse, NotSolved, np.linalg.LinAlgError) as exc:
        nan = math.nan
        return TrialRecord(trial, sigma, SDP, nan, nan, nan, nan, nan, nan, nan, nan, type(exc).__name__)
    t = rep.timing
    cert = rep.certificate
    layout = make_layout(scenario, exact=spec.exact_dynamic)
    bound = map_cost(scenario, scenario.measurements, rep.pose, rep.twist, relaxation_model(layout))
    return TrialRecord(
        trial,
        sigma,
        SDP,
        rep.position_error,
        rep.rotation_error,
        cert.f_eig,
        cert.duality_gap_rel,
        rep.map_cost,
        t["build"] + t["discover"],
        t["sdp"],
        t["extract"],
        rep.status.value,
        rank1=cert.rank1,
        bound_cost=bound,
        sdp_primal=rep.sdp_cost,
        state_dim=layout.n,
        solver_gap=rep.solution.rel_gap,
        slack_min_eig=min_eig(rep.solution.S),
        slack_norm=float(np.linalg.norm(rep.solution.S, 2)),
    )


def _ls_record(spec: ExperimentSpec, scenario: Scenario, trial: int) -> TrialRecord:
    init = random_init(scenario, np.random.default_rng(trial_seed(spec.seed, trial, 1)))
    t0 = time.perf_counter()
    rep = lm_solve(scenario, scenario.measurements, init)
    elapsed = time.perf_counter() - t0
    state = rep.final_state
    pos, rot = pose_errors(scenario, state.pose, state.twist)
    layout = make_layout(scenario, exact=spec.exact_dynamic)
    bound = map_cost(scenario, scenario.measurements, state.pose, state.twist, relaxation_model(layout))
    return TrialRecord(
        trial,
        scenario.sigma_r,
        LS,
        pos,
        rot,
        math.nan,
        math.nan,
        rep.final_cost,
        0.0,
        0.0,
        elapsed,
        "Converged" if rep.converged else "MaxIter",
        bound_cost=bound,
    )


def run_trial(spec: ExperimentSpec, trial: int, sigma_r: float) -> list:
    """Records for every method of one trial, all on the same measurements."""
    scenario = trial_scenario(spec, trial, sigma_r)
    out = []
    for method in spec.methods:
        out.append(_sdp_record(spec, scenario, trial) if method == SDP else _ls_record(spec, scenario, trial))
    return out


def _quartiles(values) -> tuple:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return (math.nan,) * 3
    q1, med, q3 = np.percentile(v, [25.0, 50.0, 75.0])
    return float(q1), float(med), float(q3)


SUMMARY_HEADER = (
    "sigma_r",
    "method",
    "n",
    "pos_q1",
    "pos_median",
    "pos_q3",
    "rot_q1",
    "rot_median",
    "rot_q3",
    "f_eig_median",
    "rank1_fraction",
    "failures",
)


def summarize(records: Sequence[TrialRecord]) -> list:
    """Per (noise level, method) quartiles of the errors, f_eig and rank-1 share."""
    groups = {}
    for r in records:
        groups.setdefault((r.sigma_r, r.method), []).append(r)
    out = []
    for (sigma, method), rs in sorted(groups.items()):
        pos = _quartiles([r.position_error for r in rs])
        rot = _quartiles([r.rotation_error for r in rs])
        row = {
            "sigma_r": sigma,
            "method": method,
            "n": len(rs),
            "pos_q1": pos[0],
            "pos_median": pos[1],
            "pos_q3": pos[2],
            "rot_q1": rot[0],
            "rot_median": rot[1],
            "rot_q3": rot[2],
            "f_eig_median": math.nan,
            "rank1_fraction": math.nan,
            "failures": sum(math.isnan(r.position_error) for r in rs),
        }
        if method == SDP:
            row["f_eig_median"] = _quartiles([r.f_eig for r in rs])[1]
            row["rank1_fraction"] = float(np.mean([bool(r.rank1) for r in rs]))
        out.append(row)
    return out


def run_experiment(spec: ExperimentSpec) -> Experiment:
    jobs = [(t, s) for s in spec.noise_levels for t in range(spec.trials)]
    if spec.threads == 1:
        results = [run_trial(spec, t, s) for t, s in jobs]
    else:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            results = list(pool.map(lambda job: run_trial(spec, *job), jobs))
    records = [r for group in results for r in group]
    exp = Experiment(spec, records, summarize(records))
    if spec.out_dir is not None:
        emit_outputs(records, spec.out_dir, summary=exp.summary)
    return exp


@dataclass(frozen=True)
class TightnessRow:
    sigma_r: float
    n: int
    f_eig_q1: float
    f_eig_median: float
    f_eig_q3: float
    f_eig_min: float
    rank1_fraction: float


@dataclass(eq=False)
class TightnessSweep:
    rows: list
    records: list

    @property
    def monotone(self) -> bool:
        """Median f_eig nonincreasing in the noise level."""
        med = [r.f_eig_median for r in sorted(self.rows, key=lambda r: r.sigma_r)]
        return all(b <= a for a, b in zip(med, med[1:]))


def noise_tightness_sweep(spec: ExperimentSpec) -> TightnessSweep:
    """f_eig distribution of the relaxation per noise level (relaxation only)."""
    exp = run_experiment(replace(spec, methods=(SDP,), out_dir=None))
    rows = []
    for sigma in sorted(set(spec.noise_levels)):
        rs = [r for r in exp.records if r.sigma_r == sigma]
        fe = [r.f_eig for r in rs]
        q1, med, q3 = _quartiles(fe)
        rows.append(
            TightnessRow(
                sigma,
                len(rs),
                q1,
                med,
                q3,
                float(np.nanmin(fe)) if not all(math.isnan(x) for x in fe) else math.nan,
                float(np.mean([bool(r.rank1) for r in rs])),
            )
        )
    return TightnessSweep(rows, exp.records)


# -- outputs ----------------------------------------------------------------------------


def write_trials_csv(records: Sequence[TrialRecord], path, timings: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.row(timings))


def write_summary_csv(summary: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for row in summary:
            w.writerow([row[k] if k in ("method", "n", "failures") else _num(row[k]) for k in SUMMARY_HEADER])


def read_trials_csv(path) -> list:
    """Rows of a trials CSV as dicts with numeric fields parsed (blank = nan)."""
    text = ("pos_err", "rot_err", "f_eig", "gap", "cost", "sigma_r") + TIME_COLUMNS
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for k in text:
                row[k] = float(row[k]) if row[k] else math.nan
            row["trial"] = int(row["trial"])
            out.append(row)
    return out


def _box_plot(records: Sequence[TrialRecord], sigma: float, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    methods = sorted({r.method for r in records if r.sigma_r == sigma}, key=lambda m: (m != SDP, m))
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
    for ax, attr, title in (
        (axes[0], "position_error", "position error [m]"),
        (axes[1], "rotation_error", "rotation error"),
    ):
        data = []
        for m in methods:
            v = [getattr(r, attr) for r in records if r.sigma_r == sigma and r.method == m]
            v = [x for x in v if not math.isnan(x)]
            data.append(np.maximum(v, 1e-16) if v else [math.nan])
        ax.boxplot(data, tick_labels=methods)
        ax.set_yscale("log")
        ax.set_title(title)
    fig.suptitle(f"sigma_r = {sigma:g}")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_outputs(records: Sequence[TrialRecord], out_dir, summary=None, timings: bool = True) -> list:
    """Write trials.csv, summary.csv and one box-plot SVG per noise level.

    With ``timings=False`` the time columns are left blank so that repeated
    runs produce byte-identical files.
    """
    import matplotlib

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    summary = summarize(records) if summary is None else summary
    paths = [out / "trials.csv", out / "summary.csv"]
    try:
        write_trials_csv(records, paths[0], timings=timings)
        write_summary_csv(summary, paths[1])
        with matplotlib.rc_context({"svg.hashsalt": "ro-init", "svg.fonttype": "none"}):
            for sigma in sorted({r.sigma_r for r in records}):
                p = out / f"box_sigma_{sigma:g}.svg"
                _box_plot(records, sigma, p)
                paths.append(p)
    except OSError as exc:
        raise OSError(f"writing outputs under {out}: {exc}") from exc
    return paths


def default_threads() -> int:
    return max(1, min(8, os.cpu_count() or 1))
