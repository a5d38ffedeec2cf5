"""Overfit one synthetic 32x32 image with the toy configuration and print the loss curve.

    python3 scripts/train_toy.py --steps 200 --lr 1e-3 --decoder fc_gelu_fc_tanh
"""

import argparse
import time

import numpy as np

from pptfuse.data import synthetic_scene
from pptfuse.imageio import normalize
from pptfuse.model import DECODER_VARIANTS, ModelConfig, TrainConfig, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--decoder", choices=DECODER_VARIANTS, default="fc_gelu_fc_tanh")
    args = ap.parse_args()
    cfg = ModelConfig(size=32, patch=8, channels=8, blocks=1, heads=1, decoder=args.decoder)
    image = normalize(synthetic_scene(np.random.default_rng(args.seed), 32, 32))
    start = time.perf_counter()
    _, curve = train([image], cfg, TrainConfig(lr=args.lr, epochs=args.steps, seed=args.seed))
    elapsed = time.perf_counter() - start
    for rec in curve[:: max(1, len(curve) // 10)]:
        print(f"step {rec.step:4d}  loss {rec.loss:.6f}")
    print(f"{args.decoder}: {curve[0].loss:.5f} -> {curve[-1].loss:.6f} "
          f"({curve[-1].loss / curve[0].loss:.2%} of initial) in {elapsed:.1f} s")


if __name__ == "__main__":
    main()
