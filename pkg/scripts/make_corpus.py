"""Write a synthetic training corpus and one infrared/visible test pair.

    python3 scripts/make_corpus.py --out data --count 20 --size 256
"""

import argparse
from pathlib import Path

from pptfuse.data import write_synthetic_corpus, write_synthetic_pair


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="data")
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--pair-height", type=int, default=270)
    ap.add_argument("--pair-width", type=int, default=360)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    paths = write_synthetic_corpus(out / "corpus", args.count, args.size, args.size, args.seed)
    ir, vis = write_synthetic_pair(out / "pair", args.pair_height, args.pair_width, args.seed)
    print(f"{len(paths)} scenes in {out / 'corpus'}; pair {ir} {vis}")


if __name__ == "__main__":
    main()
