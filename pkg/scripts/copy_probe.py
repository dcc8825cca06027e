"""Copy task with a wide and a narrow reach.

With l_max=16 the causal window can span the copy distance and the model
learns the task; with l_max=1 it cannot see the symbol it must emit.
"""

import argparse
import logging
import time

from talkconv.training import TrainConfig, train_loop


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reach", type=int, nargs="+", default=[16, 1])
    p.add_argument("--report-dir", default="", help="write one CSV per reach here")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    for reach in args.reach:
        cfg = TrainConfig(task="copy", vocab=16, seq_len=32, l_max=[reach, reach], r_max=[0, 0],
                          total_steps=args.steps, warmup_steps=min(200, args.steps // 5), seed=args.seed,
                          target_accuracy=0.99,
                          report_path=f"{args.report_dir}/copy_lmax{reach}.csv" if args.report_dir else "")
        t0 = time.perf_counter()
        rep = train_loop(cfg)
        print(f"l_max={reach:3d} final_loss={rep.final_loss:.4f} accuracy={rep.final_accuracy:.4f} "
              f"reached_99%_at={rep.reached_at} steps={rep.steps_run} ({time.perf_counter() - t0:.0f}s)")


if __name__ == "__main__":
    main()
