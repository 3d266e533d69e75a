"""Command-line entry point: ``bistream-sod <command> [flags]``.

Exit codes: 0 success, 1 invalid input or flags, 2 runtime failure.
Diagnostics go to stderr; results go to files or stdout.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
RANGE_FLAGS = ("--xs",)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_range(text: str) -> list[float]:
    """``start:stop:step`` with start included and stop excluded."""
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"range must look like start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"range must look like start:stop:step, got {text!r}") from None
    if not step > 0 or not all(map(math.isfinite, (start, stop, step))):
        raise UsageError(f"range step must be a positive finite number, got {text!r}")
    n = max(0, math.ceil((stop - start) / step - 1e-9))
    return [start + k * step for k in range(n)]


def _write(text: str, out: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} is not a directory: {path}")
    return p


def _require_out_parent(path: str) -> None:
    if path != "-" and not Path(path).resolve().parent.is_dir():
        raise UsageError(f"output directory does not exist for {path}")


def _positive(name: str, value) -> None:
    if value <= 0:
        raise UsageError(f"--{name} must be positive, got {value}")


# -- commands -----------------------------------------------------------------


def cmd_curate(args) -> int:
    from . import curation

    _require_file(args.manifest, "manifest")
    _require_out_parent(args.out)
    for name in ("k_top", "quota_top", "quota_rest"):
        _positive(name.replace("_", "-"), getattr(args, name))
    try:
        records = curation.load_manifest(args.manifest)
        plan = curation.SamplingPlan(args.k_top, args.quota_top, args.quota_rest, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cleaned = curation.clean(records)
    if not cleaned:
        raise UsageError("manifest has no clean records")
    dist = curation.histogram(cleaned)
    if args.k_top > len(dist.order):
        raise UsageError(f"--k-top {args.k_top} exceeds the {len(dist.order)} categories in the manifest")

    selected = curation.balanced_sample(cleaned, plan)
    curation.write_manifest(selected, args.out)
    print(f"top-{args.k_top} coverage: {curation.pareto_report(dist, args.k_top):.4f}")
    print(
        f"kept {len(cleaned)} of {len(records)} records, {len(dist.order)} categories; "
        f"selected {len(selected)} -> {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import metrics

    _require_dir(args.pred, "--pred")
    _require_dir(args.gt, "--gt")
    _require_out_parent(args.out)
    if args.curves:
        _require_out_parent(args.curves)
    _positive("workers", args.workers)
    try:
        report = metrics.evaluate_dataset(args.pred, args.gt, workers=args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for err in report.errors:
        print(f"warning: {err}", file=sys.stderr)
    _write(report.to_json(), args.out)
    if args.curves:
        _write(report.curve_csv(), args.curves)
    print(
        f"{len(report.per_image)} images: mae={report.mae:.4f} max_f={report.max_f:.4f} "
        f"avg_f={report.avg_f:.4f} weighted_f={report.weighted_f:.4f} s_measure={report.s_measure:.4f}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_curves(args) -> int:
    from . import metrics

    _require_dir(args.pred, "--pred")
    _require_dir(args.gt, "--gt")
    _require_out_parent(args.out)
    try:
        report = metrics.evaluate_dataset(args.pred, args.gt)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for err in report.errors:
        print(f"warning: {err}", file=sys.stderr)
    _write(report.curve_csv(), args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    _require_out_parent(args.out)
    results = gradcheck.run_suite(seed=args.seed, include_network=not args.skip_network)
    _write(gradcheck.results_csv(results), args.out)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("gradient check failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{len(results)} gradient checks passed", file=sys.stderr)
    return EXIT_OK


def cmd_gatereport(args) -> int:
    from .fusion import gate_gradient_report, gate_report_csv

    xs = parse_range(args.xs)
    _positive("eps", args.eps)
    _require_out_parent(args.out)
    _write(gate_report_csv(gate_gradient_report(xs, eps=args.eps)), args.out)
    return EXIT_OK


def _load_image_dir(root: Path) -> list[tuple[np.ndarray, np.ndarray]]:
    from . import imageio

    img_dir, mask_dir = root / "images", root / "masks"
    for d in (img_dir, mask_dir):
        if not d.is_dir():
            raise UsageError(f"training data needs {d}")
    masks = {p.stem: p for p in sorted(mask_dir.iterdir()) if p.suffix.lower() in imageio.SUPPORTED_SUFFIXES}
    data = []
    for p in sorted(img_dir.iterdir()):
        if p.suffix.lower() not in imageio.SUPPORTED_SUFFIXES:
            continue
        if p.stem not in masks:
            raise UsageError(f"no mask for training image {p.name}")
        data.append((imageio.read_rgb(p), imageio.to_mask(imageio.read_gray(masks[p.stem]))))
    if not data:
        raise UsageError(f"no training images in {img_dir}")
    return data


def cmd_train(args) -> int:
    from . import model as M

    _require_out_parent(args.out)
    if args.loss_csv:
        _require_out_parent(args.loss_csv)
    try:
        cfg = M.TrainConfig(args.lr, args.momentum, args.weight_decay, args.batch_size, args.iters, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.data:
        data = _load_image_dir(_require_dir(args.data, "--data"))
    else:
        _positive("synthetic", args.synthetic)
        _positive("size", args.size)
        if args.size % 16:
            raise UsageError(f"--size must be a multiple of 16, got {args.size}")
        data = M.blob_dataset(args.synthetic, args.size, args.seed)
    for image, _ in data:
        if image.shape[1] % 16 or image.shape[2] % 16:
            raise UsageError(f"training images must have sides divisible by 16, got {image.shape[1:]}")

    result = M.train(M.build(args.seed), data, cfg)
    M.save_checkpoint(result.net, args.out)
    if args.loss_csv:
        _write(result.loss_csv(), args.loss_csv)
    if result.losses:
        print(f"loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f} over {len(result.losses)} iterations", file=sys.stderr)
    return EXIT_OK


def cmd_infer(args) -> int:
    from . import imageio
    from . import model as M

    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.image, "image")
    _require_out_parent(args.out)
    try:
        net = M.load_checkpoint(args.checkpoint)
        image = imageio.read_rgb(args.image)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if image.shape[1] % 16 or image.shape[2] % 16:
        raise UsageError(f"image sides must be divisible by 16, got {image.shape[1:]}")
    final, branches = M.infer(net, image)
    imageio.write_gray(args.out, imageio.from_saliency(final))
    if args.branches:
        base = Path(args.branches)
        for name, arr in branches.items():
            imageio.write_gray(base.with_name(f"{base.name}_{name}.pgm"), imageio.from_saliency(arr))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="bistream-sod", description="Bi-stream saliency toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("curate", help="balanced sampling over a category manifest", formatter_class=fmt)
    p.add_argument("--manifest", required=True, help="input manifest CSV")
    p.add_argument("--k-top", type=int, default=50, help="number of most populous categories")
    p.add_argument("--quota-top", type=int, default=40, help="images per top category")
    p.add_argument("--quota-rest", type=int, default=20, help="images per remaining category")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--out", required=True, help="output manifest CSV")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("eval", help="score predictions against ground truth", formatter_class=fmt)
    p.add_argument("--pred", required=True, help="directory of predicted maps")
    p.add_argument("--gt", required=True, help="directory of ground-truth masks")
    p.add_argument("--out", default="-", help="JSON report path, '-' for stdout")
    p.add_argument("--curves", default=None, help="optional PR/F curve CSV path")
    p.add_argument("--workers", type=int, default=1, help="per-image worker threads")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curves", help="write the 256-threshold PR/F curve", formatter_class=fmt)
    p.add_argument("--pred", required=True, help="directory of predicted maps")
    p.add_argument("--gt", required=True, help="directory of ground-truth masks")
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every gradient", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0, help="seed for random inputs")
    p.add_argument("--skip-network", action="store_true", default=False, help="skip the end-to-end network check")
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gatereport", help="sigmoid(x)*x vs tanh(x)*sigmoid(x) gradient table", formatter_class=fmt)
    p.add_argument("--xs", default="-10:10:0.5", help="start:stop:step, stop excluded")
    p.add_argument("--eps", type=float, default=1e-6, help="finite-difference step")
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    p.set_defaults(func=cmd_gatereport)

    p = sub.add_parser("train", help="train the toy network", formatter_class=fmt)
    p.add_argument("--data", default=None, help="directory with images/ and masks/; synthetic blobs if omitted")
    p.add_argument("--synthetic", type=int, default=4, help="number of synthetic blob images")
    p.add_argument("--size", type=int, default=64, help="synthetic image side")
    p.add_argument("--iters", type=int, default=20, help="SGD iterations")
    p.add_argument("--lr", type=float, default=1e-2, help="learning rate")
    p.add_argument("--momentum", type=float, default=0.99, help="SGD momentum")
    p.add_argument("--weight-decay", type=float, default=5e-4, help="L2 weight decay")
    p.add_argument("--batch-size", type=int, default=2, help="images per iteration")
    p.add_argument("--seed", type=int, default=0, help="init, data and shuffle seed")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", default=None, help="optional iter,loss CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict a saliency map", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint from 'train'")
    p.add_argument("--image", required=True, help="input PGM or PNG")
    p.add_argument("--out", required=True, help="output saliency map (.pgm or .png)")
    p.add_argument("--branches", default=None, help="path prefix for per-branch stage-5 maps")
    p.set_defaults(func=cmd_infer)
    return parser


def _join_range_flags(argv: Sequence[str]) -> list[str]:
    # "--xs -10:10:0.5" would otherwise be read as two flags
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok in RANGE_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = _join_range_flags(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
