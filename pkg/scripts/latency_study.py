"""Detection latency of segmented vs sliding AAPT on the perturbed Alice-Bob link.

Runs the ``alice-bob-perturbed`` preset for several seeds and prints, per
scripted event, how long each estimator takes to fall below the detection
level and to come back.

    python3 scripts/latency_study.py --seeds 3 --steps 16384
"""
import argparse
import dataclasses

from aaptlink.acceptance import _estimates, _latency_rows
from aaptlink.aapt import McmcSettings
from aaptlink.config import preset
from aaptlink.linksim import run_scenario
from aaptlink.runner import compare_traces, ref_trace_rows


def fmt(v):
    return "-" if v is None else f"{v:7.1f}"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--steps", type=int, default=2**16)
    ap.add_argument("--detect", type=float, default=0.9)
    args = ap.parse_args()

    base = preset("alice-bob-perturbed")
    print(f"{'seed':>4} {'event_s':>8} {'REF det':>8} {'SEG det':>8} {'SLIDE det':>9} {'SEG rec':>8} {'SLIDE rec':>9}")
    for s in range(args.seeds):
        cfg = dataclasses.replace(base, seed=s).validate()
        res = _estimates(cfg, McmcSettings(n_steps=args.steps), kinds=("segmented", "sliding"))
        rows = _latency_rows(res["segmented"] + res["sliding"]) + list(ref_trace_rows(run_scenario(cfg)))
        for ev in compare_traces(rows, cfg.perturbation_events, detect=args.detect)["events"]:
            a = ev["a"]
            print(
                f"{s:4d} {ev['time_s']:8.0f} {fmt(a['REF']['detect_s']):>8} {fmt(a['AAPT_SEG']['detect_s']):>8} "
                f"{fmt(a['AAPT_SLIDE']['detect_s']):>9} {fmt(a['AAPT_SEG']['recover_s']):>8} "
                f"{fmt(a['AAPT_SLIDE']['recover_s']):>9}",
                flush=True,
            )


if __name__ == "__main__":
    main()
