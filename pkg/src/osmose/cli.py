"""``osmose`` command line entry point."""

from __future__ import annotations

import argparse
import sys

from .grid_image import DEFAULT_OFFSET
from .pipeline import MODES, PipelineConfig, PipelineError, run_shadow_removal

FLAGS = ("validate",)


def parse_scales(text: str):
    try:
        scales = tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid scale list {text!r}") from exc
    if not scales:
        raise argparse.ArgumentTypeError("scale list is empty")
    return scales


def read_config(path) -> list:
    """Turn a flat ``key = value`` file into command line arguments.

    Blank lines and ``#`` comments are ignored; ``validate = true`` becomes
    the bare ``--validate`` flag.
    """
    args = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key = key.strip().replace("_", "-")
            value = value.strip()
            if key in FLAGS:
                if value.lower() in ("1", "true", "yes", "on"):
                    args.append(f"--{key}")
                continue
            args += [f"--{key}", value]
    return args


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="osmose",
                                description="Remove shadows by anisotropic osmosis.")
    p.add_argument("--input", help="input PNG/PGM/PPM")
    p.add_argument("--mask", help="shadow-boundary mask (white = band)")
    p.add_argument("--output", help="output PNG")
    p.add_argument("--mode", choices=MODES, default="anisotropic")
    p.add_argument("--tau", type=float, default=1000.0, help="time step")
    p.add_argument("--T", type=float, default=100000.0, help="final time")
    p.add_argument("--epsilon", type=float, default=0.05,
                   help="small eigenvalue of the weight tensor on the band")
    p.add_argument("--sigma", type=float, default=0.5, help="pre-smoothing for tensor voting")
    p.add_argument("--scales", type=parse_scales, default=(5.0, 10.0, 15.0),
                   help="comma separated voting scales")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--offset", type=float, default=DEFAULT_OFFSET,
                   help="positive lift added before processing")
    p.add_argument("--threshold", type=float, default=0.5, help="mask binarisation threshold")
    p.add_argument("--dilate", type=int, default=0, help="mask dilation radius in pixels")
    p.add_argument("--steady-tol", type=float, default=1e-8,
                   help="relative change below which the evolution stops")
    p.add_argument("--theta-map", help="write an orientation overlay PNG")
    p.add_argument("--trace", help="write per-step mean/min/residual CSV")
    p.add_argument("--config", help="flat key = value file; command line flags win")
    p.add_argument("--validate", action="store_true", help="print the generator report")
    return p


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = parser.parse_args(argv)
    if pre.config:
        try:
            argv = read_config(pre.config) + argv
        except (OSError, ValueError) as exc:
            parser.error(f"[config] {exc}")
    args = parser.parse_args(argv)
    missing = [k for k in ("input", "mask", "output") if not getattr(args, k)]
    if missing:
        parser.error("missing required option(s): " + ", ".join("--" + k for k in missing))
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        cfg = PipelineConfig(input=args.input, mask=args.mask, output=args.output,
                             mode=args.mode, tau=args.tau, T=args.T, epsilon=args.epsilon,
                             sigma=args.sigma, scales=args.scales, seed=args.seed,
                             offset=args.offset, threshold=args.threshold, dilate=args.dilate,
                             theta_map=args.theta_map, trace=args.trace,
                             validate=args.validate, steady_tol=args.steady_tol)
    except ValueError as exc:
        print(f"osmose: [config] {exc}", file=sys.stderr)
        return 2
    try:
        result = run_shadow_removal(cfg)
    except PipelineError as exc:
        print(f"osmose: {exc}", file=sys.stderr)
        return 1
    for c, report in enumerate(result.reports):
        print(f"channel {c}")
        for line in report.lines():
            print("  " + line)
    for c, trace in enumerate(result.traces):
        print(f"channel {c}: {trace.steps} steps, final residual {trace.final_residual:.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
