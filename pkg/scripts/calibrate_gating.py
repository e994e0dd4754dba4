"""Calibrate th_differ on a clean sequence, then count BAD verdicts on the degraded one.

The threshold is the lowest tracking-phase score on an undegraded "wander"
run, so every clean frame passes by construction. Takes a few minutes.
"""
import argparse

from dynavo.config import load_config
from dynavo.pipeline import run_scene
from dynavo.synth import default_intrinsics, degraded_frames, make_scenario


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--frames", type=int, default=900)
    p.add_argument("--clean-frames", type=int, default=300)
    p.add_argument("--scale", type=int, default=2, choices=(1, 2, 4, 8))
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    K = default_intrinsics(args.scale)

    clean = run_scene(make_scenario("wander", args.clean_frames, seed=args.seed + 1, K=K), load_config())
    th = min(r["s_final"] for r in clean.rows if r["phase"] == "track")
    print(f"calibrated th_differ = {th:.6f}")

    sc = make_scenario("mixed", args.frames, seed=args.seed, K=K)
    degraded = degraded_frames(sc)
    for label, cfg in (("default", load_config()), ("calibrated", load_config(th_differ=round(th, 6)))):
        res = run_scene(sc, cfg)
        bad = [i for i, v in res.verdicts.items() if v == "BAD"]
        inside = sum(i in degraded for i in bad)
        share = inside / len(bad) if bad else float("nan")
        print(f"{label:>10}: th_differ {cfg.th_differ:.4f}  BAD {len(bad)} / {len(sc)} "
              f"({len(bad) / len(sc):.1%}), inside degraded segments {share:.0%}")


if __name__ == "__main__":
    main()
