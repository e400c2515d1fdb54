"""Margin calibration for the acceptance claims.

Runs the variant pairs the acceptance suite compares (transfer on similar
streams, ordering on heterogeneous streams, forgetting on dissimilar streams)
over several seeds and prints per-seed numbers so margins can be locked in.

Usage: python3 scripts/calibrate.py [--seeds 1,2,3,4,5] [--tasks 10]
"""

import argparse
import statistics
import sys
import time

from tss import eval as eval_mod
from tss.cli import ExperimentConfig, StreamConfig
from tss.model import ModelConfig
from tss.taskgen import make_stream
from tss.trainer import TrainConfig, Variant, run_sequence


def run(kind, variant, seed, cfg):
    stream = make_stream(
        kind, cfg.stream.n_tasks, seed,
        input_dim=cfg.stream.input_dim, n_classes=cfg.stream.n_classes,
        sizes=(cfg.stream.n_train, cfg.stream.n_val, cfg.stream.n_test),
        noise_std=cfg.stream.noise_std, max_angle=cfg.stream.max_angle)
    return run_sequence(stream, variant, cfg.model, cfg.train, seed).run


def mean_final(run_result):
    m = run_result.matrices["accuracy"]
    return sum(m.final_row()) / m.n_tasks


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", default="1,2,3,4,5")
    parser.add_argument("--tasks", type=int, default=10)
    args = parser.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    cfg = ExperimentConfig()
    cfg.stream = StreamConfig(n_tasks=args.tasks)
    cfg.model = ModelConfig()
    cfg.train = TrainConfig()
    t0 = time.time()

    print("== similar stream: TSS vs ONE (transfer) and vs WO_SM ==")
    deltas, tss_finals, wosm_finals = [], [], []
    for s in seeds:
        tss = run("similar", Variant.TSS, s, cfg)
        one = run("similar", Variant.ONE, s, cfg)
        wosm = run("similar", Variant.TSS_WO_SM, s, cfg)
        _, mean_delta = eval_mod.transfer_delta(tss.matrices["accuracy"],
                                                one.matrices["accuracy"])
        deltas.append(mean_delta)
        tss_finals.append(mean_final(tss))
        wosm_finals.append(mean_final(wosm))
        print(f"  seed {s}: delta_vs_one {mean_delta:+.4f}  "
              f"tss {tss_finals[-1]:.4f}  wo_sm {wosm_finals[-1]:.4f}")
    print(f"  mean delta {statistics.fmean(deltas):+.4f}  "
          f"positive on {sum(d > 0 for d in deltas)}/{len(seeds)} seeds")
    print(f"  mean tss {statistics.fmean(tss_finals):.4f} vs "
          f"wo_sm {statistics.fmean(wosm_finals):.4f}")

    print("== heterogeneous stream: TSS vs WO_SM_NAIVE (ordering) ==")
    tss_h, naive_h = [], []
    for s in seeds:
        tss = run("heterogeneous", Variant.TSS, s, cfg)
        naive = run("heterogeneous", Variant.TSS_WO_SM_NAIVE, s, cfg)
        tss_h.append(mean_final(tss))
        naive_h.append(mean_final(naive))
        print(f"  seed {s}: tss {tss_h[-1]:.4f}  naive {naive_h[-1]:.4f}  "
              f"gap {tss_h[-1] - naive_h[-1]:+.4f}")
    print(f"  mean tss {statistics.fmean(tss_h):.4f} vs "
          f"naive {statistics.fmean(naive_h):.4f}")

    print("== dissimilar stream: forgetting for NCL / TSS_WO_SD ==")
    for s in seeds[:3]:
        ncl = run("dissimilar", Variant.NCL, s, cfg)
        wosd = run("dissimilar", Variant.TSS_WO_SD, s, cfg)
        fr_ncl = eval_mod.forgetting_rate(ncl.matrices["accuracy"])
        fr_wosd = eval_mod.forgetting_rate(wosd.matrices["accuracy"])
        print(f"  seed {s}: FR ncl {fr_ncl:+.4f}  wo_sd {fr_wosd:+.4f}")

    print(f"total {time.time() - t0:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
