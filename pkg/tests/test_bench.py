import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from ro_init.bench import (
    CSV_HEADER,
    LS,
    SDP,
    ExperimentSpec,
    SpecError,
    emit_outputs,
    noise_tightness_sweep,
    read_trials_csv,
    real_like,
    run_experiment,
    trial_scenario,
    trial_seed,
)

SMALL = dict(trials=3, seed=5)


@pytest.fixture(scope="module")
def small_run():
    return run_experiment(ExperimentSpec("static2d", (0.01, 0.05), **SMALL))


def test_empty_records_give_header_only_csv(tmp_path):
    emit_outputs([], tmp_path)
    assert (tmp_path / "trials.csv").read_text() == ",".join(CSV_HEADER) + "\n"
    assert len((tmp_path / "summary.csv").read_text().splitlines()) == 1


def test_csv_roundtrip_matches_summary(small_run, tmp_path):
    emit_outputs(small_run.records, tmp_path, summary=small_run.summary)
    rows = read_trials_csv(tmp_path / "trials.csv")
    assert len(rows) == len(small_run.records) == 2 * 3 * 2
    for s in small_run.summary:
        pos = [r["pos_err"] for r in rows if r["sigma_r"] == s["sigma_r"] and r["method"] == s["method"]]
        # the CSV keeps 9 significant digits
        assert float(np.median(pos)) == pytest.approx(s["pos_median"], rel=1e-8)
    for sigma in (0.01, 0.05):
        svg = tmp_path / f"box_sigma_{sigma:g}.svg"
        assert ET.parse(svg).getroot().tag.endswith("svg")


def test_records_are_complete(small_run):
    for r in small_run.records:
        assert r.method in (SDP, LS)
        assert not math.isnan(r.position_error)
        if r.method == SDP:
            assert r.status in ("Optimal", "MaxIter")
            assert r.f_eig > 0 and r.rank1 is not None
        else:
            assert r.status in ("Converged", "MaxIter")


def test_common_random_numbers():
    spec = ExperimentSpec("dynamic2d", (0.01, 0.1), **SMALL)
    a = trial_scenario(spec, 1, 0.01)
    b = trial_scenario(spec, 1, 0.1)
    assert np.array_equal(a.anchors, b.anchors)
    assert a.truth.initial_pose.allclose(b.truth.initial_pose, atol=0.0)
    assert trial_seed(5, 1) != trial_seed(5, 2) != trial_seed(5, 1, 1)


def test_fixed_seed_reproducible_and_thread_independent(tmp_path):
    spec = ExperimentSpec("static2d", (0.05,), trials=4, seed=2)
    one = run_experiment(spec)
    two = run_experiment(ExperimentSpec("static2d", (0.05,), trials=4, seed=2, threads=3))
    emit_outputs(one.records, tmp_path / "a", timings=False)
    emit_outputs(two.records, tmp_path / "b", timings=False)
    for name in ("trials.csv", "summary.csv", "box_sigma_0.05.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_single_level_sweep():
    sweep = noise_tightness_sweep(ExperimentSpec("static2d", (0.01,), trials=3, seed=0))
    assert len(sweep.rows) == 1
    assert sweep.rows[0].n == 3
    assert sweep.monotone
    assert all(r.method == SDP for r in sweep.records)


@pytest.mark.parametrize(
    "kw",
    [
        dict(preset="nope"),
        dict(preset="static2d", trials=0),
        dict(preset="static2d", noise_levels=()),
        dict(preset="static2d", noise_levels=(-0.1,)),
        dict(preset="static2d", noise_levels=(float("nan"),)),
        dict(preset="dynamic25d", exact_dynamic=True),
        dict(preset="static2d", threads=0),
        dict(preset="static2d", methods=("GN",)),
    ],
)
def test_spec_validation(kw):
    with pytest.raises(SpecError):
        ExperimentSpec(**kw)


def test_real_like_spec():
    spec = real_like(trials=2, seed=1)
    assert spec.preset == "dynamic25d" and spec.noise_levels == (0.08,)
    assert "simulation" in spec.label


def test_unwritable_output_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_outputs([], blocker / "sub")


@pytest.mark.xfail(strict=True, reason="first-order model mismatch keeps some windows below the threshold")
def test_dynamic2d_moderate_noise_all_rank_one():
    exp = run_experiment(ExperimentSpec("dynamic2d", (0.05,), trials=20, seed=1, methods=(SDP,)))
    assert all(r.f_eig >= 5.0 for r in exp.records)


def test_noiseless_static_positions_exact():
    exp = run_experiment(ExperimentSpec("static3d", (0.0,), trials=5, seed=3, methods=(SDP,)))
    assert all(r.position_error < 1e-4 for r in exp.records)
