"""Output-normalization ablation on the copy task, several seeds.

Trains a 4-block causal stack with and without the 1/(l_max+r_max+1) output
scale and prints, per seed, both final losses and whether the unnormalized
run diverged or ended at >= 2x the normalized loss.
"""

import argparse
import time

from talkconv.training import TrainConfig, train_loop


def ablation_pair(seed: int, steps: int, blocks: int = 4, reach: int = 16):
    base = dict(task="copy", vocab=16, seq_len=32, l_max=[reach] * blocks, r_max=[0] * blocks,
                total_steps=steps, warmup_steps=min(200, steps // 5), seed=seed, log_every=steps)
    on = train_loop(TrainConfig(normalize=True, **base))
    off = train_loop(TrainConfig(normalize=False, **base))
    ok = off.diverged or off.final_loss >= 2 * on.final_loss
    return on, off, ok


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--steps", type=int, default=1000)
    args = p.parse_args()
    hits = 0
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        on, off, ok = ablation_pair(seed, args.steps)
        hits += ok
        print(f"seed={seed} norm_loss={on.final_loss:.4f} raw_loss={off.final_loss:.4f} "
              f"raw_diverged={off.diverged} holds={ok} ({time.perf_counter() - t0:.0f}s)", flush=True)
    print(f"ablation holds in {hits}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
