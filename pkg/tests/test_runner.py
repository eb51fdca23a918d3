import json

import pytest

from aaptlink import runner
from aaptlink.config import dump_config, preset, ScenarioConfig, AaptSettings
from aaptlink.runner import compare_traces, main

SMALL = ScenarioConfig(
    duration_s=2 * 163.0,
    perturbation_events=((170.0, 2.5),),
    aapt=AaptSettings(mode="both", n_steps=2048),
    seed=3,
    choi_dump_times=(200.0,),
)


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(dump_config(SMALL))
    return p


def read(path):
    return path.read_bytes()


def test_run_writes_all_artifacts(tmp_path, small_config):
    out = tmp_path / "run"
    assert main(["run", "--config", str(small_config), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    for f in summary["files"]:
        assert (out / f).exists()
    assert summary["tomograms"] == {"AAPT_SEG": 2, "AAPT_SLIDE": 17}
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header == "time_s,estimator,fidelity,fidelity_std,purity,window_id"
    rows = runner.read_csv(out / "trace.csv")
    assert {r["estimator"] for r in rows} == {"REF", "TRUTH", "AAPT_SEG", "AAPT_SLIDE"}
    for r in rows:
        if r["estimator"] in ("REF", "TRUTH"):
            assert r["fidelity_std"] == "" and r["window_id"] == ""
        if r["estimator"] == "REF":
            assert r["purity"] == ""
    dumps = list((out / "choi").glob("*.json"))
    assert dumps
    d = json.loads(dumps[0].read_text())
    seg = d["estimates"]["AAPT_SEG"]
    assert len(seg["raw"]) == 16 and len(seg["raw"][0]) == 2 and len(seg["gauge_fixed"]) == 16
    assert seg["t_end"] <= 200.0 and d["truth"]["time_s"] <= 200.0
    assert not list(tmp_path.glob(".run.staging-*"))


def test_seed_override_is_deterministic(tmp_path, small_config):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run", "--config", str(small_config), "--seed", "7", "--out", str(out)]) == 0
    for name in ("trace.csv", "tracker.csv", "tomograms.csv", "truth.csv", "events.ndjson"):
        assert read(a / name) == read(b / name)
    assert json.loads((a / "summary.json").read_text())["seed"] == 7


def test_global_flags_after_subcommand(tmp_path, small_config):
    out = tmp_path / "x"
    assert main(["--out", str(out), "simulate", "--config", str(small_config)]) == 0
    assert (out / "tracker.csv").exists()
    assert not (out / "tomograms.csv").exists()


def test_estimate_replays_bit_identically(tmp_path, small_config):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(small_config), "--out", str(a)])
    assert main(["estimate", "--events", str(a / "events.ndjson"), "--out", str(b)]) == 0
    assert read(a / "tomograms.csv") == read(b / "tomograms.csv")
    assert read(a / "trace.csv") == read(b / "trace.csv")


def test_config_error_exit_and_no_outputs(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("duration_s: -1\nwhatever: 3\n")
    out = tmp_path / "o"
    assert main(["run", "--config", str(bad), "--out", str(out)]) == 2
    err = capsys.readouterr().err
    assert "duration_s" in err and "whatever" in err
    assert not out.exists()
    assert main(["run", "--config", str(tmp_path / "missing.yaml"), "--out", str(out)]) == 2
    assert main(["run", "--preset", "alice-bob", "--config", str(bad), "--out", str(out)]) == 2


def test_failure_removes_partial_outputs(tmp_path, monkeypatch, small_config):
    def boom(*a, **k):
        raise RuntimeError("estimator crashed")

    monkeypatch.setattr(runner, "estimate_stream", boom)
    out = tmp_path / "o"
    with pytest.raises(RuntimeError):
        main(["run", "--config", str(small_config), "--out", str(out)])
    assert not out.exists()
    assert not list(tmp_path.glob(".o.staging-*"))


def test_compare_without_events(tmp_path, small_config):
    cfg = tmp_path / "quiet.yaml"
    cfg.write_text(dump_config(ScenarioConfig(duration_s=20.0)))
    out = tmp_path / "q"
    main(["simulate", "--config", str(cfg), "--out", str(out)])
    assert main(["compare", str(out / "trace.csv"), "--out", str(tmp_path / "cmp")]) == 0
    assert json.loads((tmp_path / "cmp" / "compare.json").read_text())["note"]
    assert compare_traces([], [])["note"]


def test_compare_identical_traces(tmp_path, small_config, capsys):
    out = tmp_path / "r"
    main(["run", "--config", str(small_config), "--out", str(out)])
    capsys.readouterr()
    assert main(["compare", str(out / "trace.csv"), str(out / "trace.csv"), "--out", str(tmp_path / "cmp")]) == 0
    report = json.loads(capsys.readouterr().out)
    (ev,) = report["events"]
    for v in ev["detect_difference_s"].values():
        assert v in (None, 0.0)
    assert ev["a"]["REF"]["detect_s"] is not None
    assert ev["a"]["REF"]["recover_s"] is not None


def test_event_latency_rules():
    series = [(0.0, 0.99), (10.0, 0.5), (20.0, 0.6), (30.0, 0.99)]
    assert runner.event_latency(series, 5.0, 100.0, 0.9, 0.98) == {"detect_s": 5.0, "recover_s": 25.0}
    assert runner.event_latency(series, 35.0, 100.0, 0.9, 0.98) == {"detect_s": None, "recover_s": None}


def test_sliding_no_later_flag():
    rows = []
    for t, seg, sl in [(0, 0.97, 0.97), (10, 0.97, 0.5), (20, 0.5, 0.5)]:
        rows.append({"time_s": t, "estimator": "AAPT_SEG", "fidelity": seg})
        rows.append({"time_s": t, "estimator": "AAPT_SLIDE", "fidelity": sl})
    (ev,) = compare_traces(rows, [(5.0, 1.0)])["events"]
    assert ev["sliding_minus_segmented_s"] == -10.0
    assert ev["sliding_no_later"]


@pytest.mark.slow
def test_converged_preset_tomograms(tmp_path):
    out = tmp_path / "c"
    assert main(["run", "--preset", "alice-bob-converged", "--out", str(out)]) == 0
    rows = [r for r in runner.read_csv(out / "tomograms.csv") if r["kind"] == "segmented"]
    assert len(rows) == 25
    truth = 1 - 3 * preset("alice-bob-converged").depol_p / 4
    assert all(abs(float(r["fq_mean"]) - truth) <= 0.02 for r in rows)
