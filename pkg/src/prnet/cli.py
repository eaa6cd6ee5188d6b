"""``prnet`` command line: count-params, train, interpolate, eval, viz, bench, selftest.

Exit status: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import tensor as T

log = logging.getLogger("prnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _model_flags(p):
    p.add_argument("--variant", choices=("prnet", "baseline"), default="prnet")
    p.add_argument("--encoders", type=int, default=4)
    p.add_argument("--rotate", action="store_true")


def _resolution(text: str) -> tuple[int, int]:
    w, _, h = text.lower().partition("x")
    try:
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad resolution {text!r}; expected WxH") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prnet", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS threads (falls back to $PRNET_THREADS)")
    parser.add_argument("--precision", choices=("f32", "f64"), default="f32")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("count-params", help="print parameter count and reduction vs baseline")
    _model_flags(p)

    p = sub.add_parser("train", help="train on a triplet directory")
    _model_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--crop", type=int, default=256)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--init", help="resume from this checkpoint")

    p = sub.add_parser("interpolate", help="synthesize the middle frame")
    _model_flags(p)
    p.add_argument("--model", help="checkpoint; an untrained seeded model if omitted")
    p.add_argument("--frame1", required=True)
    p.add_argument("--frame2", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="PSNR/SSIM over a triplet directory")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="output prefix for .csv/.json")
    p.add_argument("--ssim-channels", choices=("luma", "rgb"), default="luma")

    p = sub.add_parser("viz", help="occlusion or attention rendering")
    p.add_argument("kind", choices=("occlusion", "attention"))
    _model_flags(p)
    p.add_argument("--model")
    p.add_argument("--frame1", required=True)
    p.add_argument("--frame2", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--montage", action="store_true", help="write frame1 | map | frame2")

    p = sub.add_parser("bench", help="runtime / peak-memory table")
    p.add_argument("--variants", default="PRNet_4,PRNet_4*,AdaCoFNet",
                   help="comma-separated labels, e.g. PRNet_1,PRNet_4*,AdaCoFNet")
    p.add_argument("--resolutions", default="4096x2160,2048x1080,1280x720,640x360,320x180")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--budget-mb", type=float, default=2048)
    p.add_argument("--out", required=True, help="CSV path; a .md mirror is written alongside")

    p = sub.add_parser("selftest", help="run the acceptance checks")
    p.add_argument("--skip-slow", action="store_true", help="skip training and benchmark checks")
    return parser


def _config(args):
    from .model import ModelConfig
    if args.variant == "baseline":
        return ModelConfig(variant="adacof_baseline")
    return ModelConfig(encoders=args.encoders, rotate=args.rotate)


def _load_model(args):
    from .checkpoint import load_checkpoint
    from .model import build
    dtype = np.float64 if args.precision == "f64" else np.float32
    if getattr(args, "model", None):
        return load_checkpoint(args.model, dtype=dtype)
    return build(_config(args), seed=args.seed, dtype=dtype)


def _run(args) -> int:
    from .data import read_png, write_png

    if args.command == "count-params":
        from .model import count_params, reduction_percent
        cfg = _config(args)
        print(count_params(cfg))
        print(f"{reduction_percent(cfg):.1f}%")
        return 0

    if args.command == "train":
        from .checkpoint import load_checkpoint
        from .model import build
        from .train import train_loop
        dtype = np.float64 if args.precision == "f64" else np.float32
        model = load_checkpoint(args.init, dtype) if args.init else build(_config(args), args.seed, dtype)
        report = train_loop(model, args.data, epochs=args.epochs, batch_size=args.batch,
                            crop=args.crop, seed=args.seed, checkpoint_dir=args.out)
        for rec in report.epochs:
            print(f"epoch {rec['epoch']}: mean L1 {rec['mean_loss']:.6f} (lr {rec['lr']:.3g})")
        if report.skipped:
            print(f"skipped {report.skipped} unreadable triplet(s)")
        return 0

    if args.command == "interpolate":
        from .pipeline import interpolate
        model = _load_model(args)
        write_png(args.out, interpolate(model, read_png(args.frame1), read_png(args.frame2)))
        return 0

    if args.command == "eval":
        from .metrics import evaluate
        model = _load_model(args)
        rep = evaluate(model, args.data, args.report, ssim_channels=args.ssim_channels)
        print(f"{len(rep.rows)} frames  PSNR {rep.mean_psnr:.4f} dB  SSIM {rep.mean_ssim:.4f}")
        return 0

    if args.command == "viz":
        from . import viz
        model = _load_model(args)
        f1, f2 = read_png(args.frame1), read_png(args.frame2)
        if args.kind == "occlusion":
            img, legend = viz.occlusion_for(model, f1, f2), viz.OCCLUSION_LEGEND
        else:
            img, legend = viz.render_attention(model, f1, f2), viz.ATTENTION_LEGEND
        if args.montage:
            img = viz.montage(f1, img, f2)
        write_png(args.out, img, text={"legend": legend})
        print(legend)
        return 0

    if args.command == "bench":
        from .bench import bench, check_runtime_ordering, to_markdown, write_csv
        from .model import ModelConfig
        configs = [ModelConfig.from_label(v) for v in args.variants.split(",") if v.strip()]
        try:
            resolutions = [_resolution(r) for r in args.resolutions.split(",") if r.strip()]
        except argparse.ArgumentTypeError as exc:
            raise UsageError(str(exc)) from None
        if args.reps < 3:
            raise UsageError("--reps must be at least 3")
        rows = bench(configs, resolutions, reps=args.reps, seed=args.seed,
                     memory_budget=int(args.budget_mb * 2 ** 20))
        path = write_csv(rows, args.out)
        md = to_markdown(rows)
        path.with_suffix(".md").write_text(md)
        print(md, end="")
        check_runtime_ordering(rows)
        return 0

    if args.command == "selftest":
        from .selftest import run_all
        results = run_all(skip_slow=args.skip_slow)
        return 0 if all(r.passed for r in results) else 2

    raise UsageError(f"unknown command {args.command}")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads or (int(os.environ["PRNET_THREADS"]) if os.environ.get("PRNET_THREADS") else None)
    if args.precision == "f64":
        T.set_default_dtype(np.float64)
    try:
        if threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=threads):
                return _run(args)
        return _run(args)
    except UsageError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001  (reported with the failing operation)
        op = getattr(exc, "op", args.command)
        print(f"{op}: error: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
