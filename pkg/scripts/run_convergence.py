"""Train the default config on several seeds and print test metrics per seed."""

import argparse
import time

from hierrec.data import SplitSpec, generate_synthetic, make_splits, preset
from hierrec.taxonomy import default_taxonomy
from hierrec.trainpipe import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--preset", default="default", choices=["default", "hard", "chance"])
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args()

    tax = default_taxonomy()
    print("seed  loss0    lossT    c1_top1  c2_coherent  secs")
    for seed in range(args.seeds):
        ds = generate_synthetic(preset(args.preset, seed=seed), tax)
        t0 = time.perf_counter()
        rep = train(ds, make_splits(ds, SplitSpec(seed=seed)), tax, TrainConfig(seed=seed, epochs=args.epochs))
        m = rep.final["test"]
        print(f"{seed:4d}  {rep.initial_train_loss:.4f}  {rep.final_train_loss:.4f}  "
              f"{m['c1_top1']:.4f}   {m['c2_top1_coherent']:.4f}       {time.perf_counter() - t0:.1f}")


if __name__ == "__main__":
    main()
