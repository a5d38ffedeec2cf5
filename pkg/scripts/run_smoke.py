"""End-to-end run through the ``ppt`` command line: corpus, train, fuse with every strategy, evaluate.

    python3 scripts/run_smoke.py --work smoke --epochs 2
"""

import argparse
import json
import sys
import time
from pathlib import Path

from pptfuse.cli import EXIT_OK, main as ppt
from pptfuse.config import RunConfig, save_config
from pptfuse.data import write_synthetic_corpus, write_synthetic_pair


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--work", default="smoke")
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    work = Path(args.work)
    start = time.perf_counter()
    write_synthetic_corpus(work / "corpus", args.count, 256, 256, args.seed)
    ir, vis = write_synthetic_pair(work / "pair", 270, 360, args.seed)
    cfg = RunConfig(epochs=args.epochs, seed=args.seed, corpus=str(work / "corpus"), output_dir=str(work / "run"))
    save_config(cfg, work / "smoke.txt")
    code = ppt(["train", "--config", str(work / "smoke.txt"), "--out", str(work / "run")])
    if code != EXIT_OK:
        return code
    for strategy in ("average", "max", "softmax"):
        fused = work / f"fused_{strategy}.png"
        report = work / f"report_{strategy}.json"
        for argv in (["fuse", "--model", str(work / "run" / "model.pptm"), "--a", str(ir), "--b", str(vis),
                      "--strategy", strategy, "--out", str(fused)],
                     ["eval", "--fused", str(fused), "--a", str(ir), "--b", str(vis), "--report", str(report)]):
            code = ppt(argv)
            if code != EXIT_OK:
                return code
        row = json.loads(report.read_text())[0]
        print(strategy, " ".join(f"{k}={v:.4f}" for k, v in row.items() if k != "name"))
    print(f"done in {(time.perf_counter() - start) / 60:.1f} min")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
