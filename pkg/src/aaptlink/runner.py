"""Command-line orchestration: simulate a scenario, run both estimators,
export tables and Choi dumps, compare detection latencies, run the
acceptance suite.

Every command writes into a staging directory next to ``--out`` and moves
the files into place only on success, ``summary.json`` last. A failed run
leaves nothing behind.
"""
from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .aapt import (
    McmcSettings,
    ScheduleWarning,
    TomogramResult,
    attach_gauge_fidelity,
    estimate_windows,
    segmented_schedule,
    sliding_schedule,
)
from .channels import gauge_fix, local_rotate_choi
from .config import PRESETS, ScenarioConfig, config_from_dict, load_config, preset, with_seed
from .errors import ConfigError
from .linksim import EventStream, run_scenario, source_state

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SELFTEST = 3

TRACE_COLUMNS = ("time_s", "estimator", "fidelity", "fidelity_std", "purity", "window_id")
TRACKER_COLUMNS = ("time_s", "f_r", "theta", "psi", "lam", "v1", "v2", "v3", "v4", "step", "event", "probe")
TOMOGRAM_COLUMNS = (
    "kind", "window_id", "t_start", "t_end", "fq_mean", "fq_std", "fq_gauge", "purity",
    "purity_of_mean", "n_samples", "acceptance", "rhat", "k0",
)
TRUTH_COLUMNS = ("index", "time_s", "fq", "purity")
KIND_LABEL = {"segmented": "AAPT_SEG", "sliding": "AAPT_SLIDE"}

DETECT_LEVEL = 0.9
# AAPT never reaches F_th = 0.98 with F_Q capped near 1 - 3p/4
QUANTUM_RECOVERY_LEVEL = 0.93


@dataclass(frozen=True)
class RunManifest:
    config: ScenarioConfig
    out: Path
    mode: str = "both"  # track-only | aapt-only | both
    config_path: str | None = None
    events_path: Path | None = None


# ---------------------------------------------------------------------------
# table writers

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def tracker_rows(stream: EventStream):
    for r in stream.of_kind("trace"):
        v = r["voltages"]
        yield {
            "time_s": r["time_s"], "f_r": r["f_r"], "theta": r["theta"], "psi": r["psi"], "lam": r["lam"],
            "v1": v[0], "v2": v[1], "v3": v[2], "v4": v[3], "step": r["step"], "event": r["event"],
            "probe": r["probe"],
        }


def truth_rows(stream: EventStream):
    for r in stream.of_kind("truth"):
        yield {"index": r["index"], "time_s": r["time_s"], "fq": r["fq"], "purity": r["purity"]}


def ref_trace_rows(stream: EventStream):
    for r in stream.of_kind("trace"):
        yield {"time_s": r["time_s"], "estimator": "REF", "fidelity": r["f_r"]}
    for r in stream.of_kind("truth"):
        yield {"time_s": r["time_s"], "estimator": "TRUTH", "fidelity": r["fq"], "purity": r["purity"]}


def tomogram_trace_rows(results: list[TomogramResult]):
    for r in results:
        yield {
            "time_s": r.t_end, "estimator": KIND_LABEL[r.kind], "fidelity": r.fq_mean,
            "fidelity_std": r.fq_std, "purity": r.purity, "window_id": r.window_id,
        }


def tomogram_rows(results: list[TomogramResult]):
    for r in results:
        yield {c: getattr(r, c) for c in TOMOGRAM_COLUMNS}


# ---------------------------------------------------------------------------
# estimation

def mcmc_settings(cfg: ScenarioConfig) -> McmcSettings:
    a = cfg.aapt
    return McmcSettings(n_steps=a.n_steps, burn_in=a.burn_in, thin=a.thin, beta0=a.beta0, likelihood=a.likelihood)


def estimate_stream(cfg: ScenarioConfig, stream: EventStream) -> dict[str, list[TomogramResult]]:
    """Segmented and/or sliding tomography of a persisted event stream."""
    records = stream.measurements()
    rho_in = source_state(cfg.source.eta, cfg.source.mix_eps)
    settings = mcmc_settings(cfg)
    kinds = ("segmented", "sliding") if cfg.aapt.mode == "both" else (cfg.aapt.mode,)
    out = {}
    for kind in kinds:
        with warnings.catch_warnings():
            # a trailing partial block is expected at the end of every run
            warnings.simplefilter("ignore", ScheduleWarning)
            windows = segmented_schedule(records) if kind == "segmented" else sliding_schedule(records)
        res = estimate_windows(windows, settings, cfg.seed, rho_in=rho_in, n_chains=cfg.aapt.n_chains, kind=kind)
        attach_gauge_fidelity(res)
        out[kind] = res
    return out


def _pairs(phi) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(phi).ravel()]


def choi_dumps(cfg: ScenarioConfig, stream: EventStream, results: dict) -> dict[str, dict]:
    """One dump per requested time: latest finished window of each kind plus truth."""
    truths = stream.of_kind("truth")
    dumps = {}
    for t in cfg.choi_dump_times:
        entry = {"time_s": float(t), "estimates": {}, "truth": None}
        for kind, res in results.items():
            done = [r for r in res if r.t_end <= t + 1e-9]
            if not done:
                continue
            V, _ = gauge_fix([r.choi for r in res])
            r = done[-1]
            entry["estimates"][KIND_LABEL[kind]] = {
                "window_id": r.window_id, "t_start": r.t_start, "t_end": r.t_end,
                "raw": _pairs(r.choi), "gauge_fixed": _pairs(local_rotate_choi(r.choi, V)),
            }
        past = [r for r in truths if r["time_s"] <= t + 1e-9]
        if past:
            entry["truth"] = {"time_s": past[-1]["time_s"], "raw": past[-1]["choi"]}
        dumps[f"choi_{t:010.3f}s.json"] = entry
    return dumps


# ---------------------------------------------------------------------------
# latency comparison

def _series(rows, estimator):
    pts = [(float(r["time_s"]), float(r["fidelity"])) for r in rows if r["estimator"] == estimator]
    pts.sort()
    return pts


def event_latency(series, t_event: float, t_next: float, detect: float, recover: float) -> dict:
    """Delay from ``t_event`` to the first point below ``detect`` and then back above ``recover``."""
    det = rec = None
    for t, f in series:
        if t < t_event or t >= t_next:
            continue
        if det is None:
            if f < detect:
                det = t - t_event
        elif f >= recover:
            rec = t - t_event
            break
    return {"detect_s": det, "recover_s": rec}


def compare_traces(rows_a, events, rows_b=None, detect: float = DETECT_LEVEL, f_th: float = 0.98,
                   quantum_recover: float = QUANTUM_RECOVERY_LEVEL) -> dict:
    if not events:
        return {"events": [], "note": "trace has no scripted perturbation events"}
    times = sorted(float(t) for t, _ in events)
    estimators = sorted({r["estimator"] for r in rows_a})
    report = {"detect_level": detect, "f_th": f_th, "quantum_recovery_level": quantum_recover, "events": []}
    for i, te in enumerate(times):
        nxt = times[i + 1] if i + 1 < len(times) else float("inf")
        item = {"time_s": te, "a": {}}
        for est in estimators:
            recover = f_th if est == "REF" else quantum_recover
            item["a"][est] = event_latency(_series(rows_a, est), te, nxt, detect, recover)
        if rows_b is not None:
            item["b"] = {}
            item["detect_difference_s"] = {}
            for est in estimators:
                recover = f_th if est == "REF" else quantum_recover
                lb = event_latency(_series(rows_b, est), te, nxt, detect, recover)
                item["b"][est] = lb
                la = item["a"][est]
                both = la["detect_s"] is not None and lb["detect_s"] is not None
                item["detect_difference_s"][est] = lb["detect_s"] - la["detect_s"] if both else None
        if "AAPT_SEG" in item["a"] and "AAPT_SLIDE" in item["a"]:
            s, g = item["a"]["AAPT_SLIDE"]["detect_s"], item["a"]["AAPT_SEG"]["detect_s"]
            item["sliding_minus_segmented_s"] = None if s is None or g is None else s - g
            # undetected counts as infinite latency
            item["sliding_no_later"] = g is None or (s is not None and s <= g)
        report["events"].append(item)
    return report


# ---------------------------------------------------------------------------
# commands

class _Staging:
    """Collect outputs in a temporary sibling directory; publish on success."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.staging-", dir=self.out.parent))

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def publish(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        names = sorted(p.relative_to(self.dir) for p in self.dir.rglob("*") if p.is_file())
        # summary last: its presence marks a complete run
        names.sort(key=lambda n: str(n) == "summary.json")
        for n in names:
            dst = self.out / n
            dst.parent.mkdir(parents=True, exist_ok=True)
            (self.dir / n).replace(dst)
        shutil.rmtree(self.dir, ignore_errors=True)

    def discard(self) -> None:
        shutil.rmtree(self.dir, ignore_errors=True)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def execute(man: RunManifest) -> dict:
    """Run the scenario described by ``man`` and publish its artifacts."""
    cfg = man.config.validate()
    stage = _Staging(man.out)
    try:
        files = []
        if man.events_path is not None:
            stream = EventStream.read(man.events_path)
        else:
            stream = run_scenario(cfg)
            stream.write(stage.path("events.ndjson"))
            files.append("events.ndjson")
        trace = list(ref_trace_rows(stream))
        if man.events_path is None:
            write_csv(stage.path("tracker.csv"), TRACKER_COLUMNS, tracker_rows(stream))
            write_csv(stage.path("truth.csv"), TRUTH_COLUMNS, truth_rows(stream))
            files += ["tracker.csv", "truth.csv"]
        tomo_counts = {}
        if man.mode != "track-only":
            results = estimate_stream(cfg, stream)
            all_res = [r for kind in results for r in results[kind]]
            write_csv(stage.path("tomograms.csv"), TOMOGRAM_COLUMNS, tomogram_rows(all_res))
            files.append("tomograms.csv")
            trace += list(tomogram_trace_rows(all_res))
            for name, d in choi_dumps(cfg, stream, results).items():
                _dump_json(stage.path(f"choi/{name}"), d)
                files.append(f"choi/{name}")
            tomo_counts = {KIND_LABEL[k]: len(v) for k, v in results.items()}
        if man.mode != "track-only" or man.events_path is None:
            write_csv(stage.path("trace.csv"), TRACE_COLUMNS, trace)
            files.append("trace.csv")
        summary = {
            "version": __version__,
            "mode": man.mode,
            "seed": cfg.seed,
            "config_path": man.config_path,
            "config": cfg.to_dict(),
            "events_source": str(man.events_path) if man.events_path else None,
            "perturbation_events": [list(e) for e in cfg.perturbation_events],
            "n_ticks": len(stream.of_kind("trace")),
            "n_records": len(stream.of_kind("measurement")),
            "tomograms": tomo_counts,
            "files": sorted(files),
        }
        _dump_json(stage.path("summary.json"), summary)
        stage.publish()
        return summary
    except BaseException:
        stage.discard()
        raise


def _resolve_config(args) -> tuple[ScenarioConfig, str | None]:
    if args.config and args.preset:
        raise ConfigError(["--config", "--preset"], "give either --config or --preset, not both")
    if args.config:
        if not Path(args.config).exists():
            raise ConfigError(["--config"], f"config file {args.config} does not exist")
        cfg, src = load_config(args.config), str(args.config)
    elif args.preset:
        cfg, src = preset(args.preset), f"preset:{args.preset}"
    else:
        cfg, src = ScenarioConfig().validate(), None
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError(["--seed"], "seed override must be a 64-bit unsigned integer")
        cfg = with_seed(cfg, args.seed)
    return cfg, src


def _config_from_summary(path: Path) -> ScenarioConfig:
    data = json.loads(Path(path).read_text())
    return config_from_dict(data["config"])


def cmd_simulate(args) -> int:
    cfg, src = _resolve_config(args)
    execute(RunManifest(cfg, Path(args.out), mode="track-only", config_path=src))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg, src = _resolve_config(args)
    execute(RunManifest(cfg, Path(args.out), mode="both", config_path=src))
    return EXIT_OK


def cmd_estimate(args) -> int:
    events = Path(args.events)
    if not events.exists():
        raise ConfigError(["--events"], f"event stream {events} does not exist")
    if args.config or args.preset:
        cfg, src = _resolve_config(args)
    else:
        summary = events.parent / "summary.json"
        if not summary.exists():
            raise ConfigError(["--config"], "no --config/--preset and no summary.json beside the event stream")
        cfg, src = _config_from_summary(summary), str(summary)
        if args.seed is not None:
            cfg = with_seed(cfg, args.seed)
    execute(RunManifest(cfg, Path(args.out), mode="aapt-only", config_path=src, events_path=events))
    return EXIT_OK


def _events_for(trace_path: Path, summary_arg):
    summary = Path(summary_arg) if summary_arg else trace_path.parent / "summary.json"
    if not summary.exists():
        return []
    return json.loads(summary.read_text()).get("perturbation_events", [])


def cmd_compare(args) -> int:
    a = Path(args.trace_a)
    if not a.exists():
        raise ConfigError(["trace_a"], f"{a} does not exist")
    rows_a = read_csv(a)
    rows_b = None
    if args.trace_b:
        b = Path(args.trace_b)
        if not b.exists():
            raise ConfigError(["trace_b"], f"{b} does not exist")
        rows_b = read_csv(b)
    report = compare_traces(rows_a, _events_for(a, args.summary), rows_b, detect=args.detect_level,
                            f_th=args.f_th, quantum_recover=args.quantum_recovery_level)
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "compare.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .acceptance import run_suite

    results = run_suite(quick=args.quick, only=args.only)
    for r in results:
        print(r.line(), flush=True)
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # repeated on every subcommand; SUPPRESS keeps flags given before the subcommand
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=d(None), help="scenario YAML file")
    g.add_argument("--preset", default=d(None), choices=sorted(PRESETS), help="built-in scenario")
    g.add_argument("--seed", default=d(None), type=int, help="override the scenario seed")
    g.add_argument("--out", default=d("out"), help="output directory (default: out)")
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(True)
    p = argparse.ArgumentParser(prog="aaptlink", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="link simulation and tracker only")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("run", parents=[common], help="simulation plus both AAPT estimators")
    s.set_defaults(func=cmd_run)
    s = sub.add_parser("estimate", parents=[common], help="AAPT from a persisted event stream")
    s.add_argument("--events", required=True, help="events.ndjson written by simulate/run")
    s.set_defaults(func=cmd_estimate)
    s = sub.add_parser("compare", parents=[common], help="detection/recovery latency per scripted event")
    s.add_argument("trace_a")
    s.add_argument("trace_b", nargs="?")
    s.add_argument("--summary", help="summary.json holding the perturbation schedule")
    s.add_argument("--detect-level", type=float, default=DETECT_LEVEL)
    s.add_argument("--f-th", type=float, default=0.98)
    s.add_argument("--quantum-recovery-level", type=float, default=QUANTUM_RECOVERY_LEVEL)
    s.set_defaults(func=cmd_compare)
    s = sub.add_parser("selftest", parents=[common], help="acceptance suite")
    s.add_argument("--quick", action="store_true", help="reduced seeds and chain lengths")
    s.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
