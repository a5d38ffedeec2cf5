"""``ppt`` command line: train, fuse, eval, features."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .config import ConfigError, RunConfig, load_config, save_config
from .data import fit_square, list_images, load_corpus
from .fusion import FusionStrategy, fuse_images
from .imageio import ImageFormatError, load_image, normalize, save_image, to_gray
from .model import ModelFileError, NumericError, load_model, save_model, train, write_loss_csv
from .tensor import ContractError, DimensionError, Tensor

log = logging.getLogger("pptfuse")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

EPILOG = """exit codes:
  0  success
  2  configuration or input error (bad config key/value, mismatched extents)
  3  I/O error (missing file or directory, unreadable image or model file)
  4  numeric failure (NaN/Inf detected)

environment:
  PPT_THREADS  maximum worker threads for tile-parallel fusion (default 1)
"""


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k: getattr(args, k, None) for k in ("lr", "epochs", "seed", "max_steps", "corpus", "strategy")}
    return cfg.replace(**overrides)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if not cfg.corpus:
        raise ConfigError("no corpus directory given (--corpus or 'corpus' key)")
    out = Path(args.out)
    corpus = load_corpus(cfg.corpus, cfg.size)
    if not corpus:
        raise ConfigError(f"corpus directory {cfg.corpus} holds no .png/.pgm images")
    out.mkdir(parents=True, exist_ok=True)
    log.info("training on %d images for %d epochs", len(corpus), cfg.epochs)

    def report(rec):
        log.debug("step %d epoch %d loss %.6f", rec.step, rec.epoch, rec.loss)

    model, curve = train(corpus, cfg.model_config(), cfg.train_config(), on_step=report)
    save_model(model, out / "model.pptm")
    write_loss_csv(curve, out / "loss.csv")
    save_config(cfg.replace(output_dir=str(out)), out / "config.txt")
    if curve:
        log.info("loss %.6f -> %.6f over %d steps", curve[0].loss, curve[-1].loss, len(curve))
    return EXIT_OK


def _read_pair(a_path, b_path):
    a, b = load_image(a_path), load_image(b_path)
    if a.ndim != b.ndim:
        a, b = to_gray(a), to_gray(b)
    if a.shape != b.shape:
        raise DimensionError(f"source extents differ: {a.shape} vs {b.shape}")
    return a, b


def cmd_fuse(args) -> int:
    model = load_model(args.model)
    a, b = _read_pair(args.a, args.b)
    fused = fuse_images(a, b, model, FusionStrategy.parse(args.strategy))
    save_image(fused, args.out)
    return EXIT_OK


def _eval_one(f_path, a_path, b_path) -> metrics.MetricReport:
    f = to_gray(load_image(f_path))
    return metrics.evaluate_all(f, to_gray(load_image(a_path)), to_gray(load_image(b_path)))


def _write_report(rows, path: Path) -> None:
    if path.suffix.lower() == ".json":
        metrics.write_json(rows, path)
    else:
        metrics.write_csv(rows, path)


def cmd_eval(args) -> int:
    fused, a, b = Path(args.fused), Path(args.a), Path(args.b)
    if fused.is_dir():
        rows = []
        for fp in list_images(fused):
            matches = [d / fp.name for d in (a, b)]
            for m in matches:
                if not m.exists():
                    raise FileNotFoundError(f"no source image {m} for fused image {fp.name}")
            rows.append((fp.name, _eval_one(fp, *matches)))
        if not rows:
            raise FileNotFoundError(f"no fused images in {fused}")
        rows.append(("mean", metrics.average_reports([r for _, r in rows])))
    else:
        rows = [(fused.name, _eval_one(fused, a, b))]
    if any(not np.isfinite(v) for _, r in rows for v in r.as_dict().values()):
        raise NumericError("metric evaluation produced a non-finite value")
    _write_report(rows, Path(args.report))
    for name, rep in rows:
        log.info("%s: %s", name, " ".join(f"{k}={v:.4f}" for k, v in rep.as_dict().items()))
    return EXIT_OK


def channel_to_u8(ch: np.ndarray) -> np.ndarray:
    """Min-max stretch one feature channel to 0..255; a constant channel becomes 128."""
    lo, hi = float(ch.min()), float(ch.max())
    if hi == lo:
        return np.full(ch.shape, 128, dtype=np.uint8)
    v = (ch.astype(np.float64) - lo) / (hi - lo) * 255.0
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)


def cmd_features(args) -> int:
    model = load_model(args.model)
    m = model.config.depth
    if not 0 <= args.level <= m:
        raise ConfigError(f"level {args.level} out of range; this model has levels 0..{m}")
    img = fit_square(to_gray(load_image(args.image)), model.config.size)
    stack = model.encode(Tensor(normalize(img), dtype=model.dtype))
    block = stack.level(args.level)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for c in range(block.shape[-1]):
        save_image(channel_to_u8(block[..., c]), out / f"level{args.level}_ch{c:02d}.png")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ppt", description="Pyramid Patch Transformer auto-encoder and image fusion",
                                 epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the auto-encoder on a directory of images",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True, help="output directory for model, loss CSV and config snapshot")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", help="fuse two source images with a trained model",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--model", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--strategy", choices=[s.value for s in FusionStrategy], default="average")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="compute EN, SD, CC, MI, SSIM, SCD for fused images",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--fused", required=True, help="fused image, or a directory of them")
    p.add_argument("--a", required=True, help="source A image or directory (matched by file name)")
    p.add_argument("--b", required=True, help="source B image or directory")
    p.add_argument("--report", required=True, help="output .csv or .json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("features", help="dump one pyramid level's feature channels as images",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(func=cmd_features)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (ModelFileError, ImageFormatError, OSError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (ConfigError, ContractError, DimensionError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
