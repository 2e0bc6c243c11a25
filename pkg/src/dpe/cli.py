"""Command-line surface.

Subcommands: deconv, inpaint, sr, dehaze (restore an observation from
disk), bench (run a synthesis manifest), selftest (built-in invariant
suite). Exit codes: 0 success, 1 configuration errors, 2 I/O errors,
3 solver errors, 4 monitor violations under --strict.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import PREDICTOR_MODES, RunConfig, parse_config
from .errors import ConfigError, DpeError, FormatError, MonitorViolation, SolverError
from .operators import Convolution, Downsample, Identity, Mask, load_kernel

from .pnm import read_image, write_image
from .predictor import classical_bank, convnet_bank, identity_bank
from .propagation import monitor, run, write_trace_csv
from .selftest import run_selftest
from .tasks import (
    dark_channel_transmission,
    estimate_atmospheric_light,
    recover_radiance,
    run_bench,
    write_bench_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_SOLVER = 3
EXIT_MONITOR = 4


class _Parser(argparse.ArgumentParser):
    """argparse that raises ConfigError instead of exiting with code 2."""

    def error(self, message):
        raise ConfigError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="dpe", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def add_common(p, needs_input=True):
        if needs_input:
            p.add_argument("--input", required=True, help="observation image (PGM/PPM)")
            p.add_argument("--output", required=True, help="restored image path")
        p.add_argument("--config", help="'key = value' config file")
        p.add_argument("--truth", help="reference image for PSNR logging")
        p.add_argument("--trace", help="write the per-stage trace CSV here")
        p.add_argument("--report", help="write the monitor report here")
        p.add_argument("--predictor", choices=PREDICTOR_MODES)
        p.add_argument("--weights-dir", dest="weights_dir",
                       help="directory of level*.dpew files (convnet mode)")
        p.add_argument("--seed", type=int)
        p.add_argument("--strict", action="store_true", default=None,
                       help="exit 4 on any monitor violation")
        p.add_argument("--lambda", dest="lam_flag", type=float,
                       help="prior weight")
        p.add_argument("--theta", type=float, help="prior shape")
        p.add_argument("--eta", type=float, help="stage proximal weight")
        p.add_argument("--c-ratio", dest="c_ratio", type=float)
        p.add_argument("--t-max", dest="t_max", type=int)
        p.add_argument("--k-max", dest="k_max", type=int)
        p.add_argument("--stop-tol", dest="stop_tol", type=float)
        p.add_argument("--variant", choices=("c-dpe", "s-dpe", "pg", "gd"))

    p = sub.add_parser("deconv", help="non-blind deconvolution")
    p.add_argument("--kernel", required=True, help="text kernel file")
    add_common(p)

    p = sub.add_parser("inpaint", help="masked-pixel interpolation")
    p.add_argument("--mask", required=True,
                   help="mask image; >= 0.5 marks observed pixels")
    add_common(p)

    p = sub.add_parser("sr", help="single-image super-resolution")
    p.add_argument("--scale", type=int, help="upsampling factor (default 2)")
    add_common(p)

    p = sub.add_parser("dehaze", help="haze removal via transmission refinement")
    p.add_argument("--transmission", help="optionally write the refined transmission here")
    add_common(p)

    p = sub.add_parser("bench", help="run a synthesis benchmark manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", required=True, help="results CSV path")
    add_common(p, needs_input=False)

    sub.add_parser("selftest", help="run the built-in invariant suite")
    return parser


def _flags_from_args(args) -> dict:
    mapping = {
        "input": "input", "output": "output", "truth": "truth",
        "kernel": "kernel", "mask": "mask", "trace": "trace",
        "report": "report", "weights_dir": "weights_dir",
        "manifest": "manifest", "predictor": "predictor", "seed": "seed",
        "strict": "strict", "scale": "scale", "lam_flag": "lambda",
        "theta": "theta", "eta": "eta", "c_ratio": "c_ratio",
        "t_max": "t_max", "k_max": "k_max", "stop_tol": "stop_tol",
        "variant": "variant",
    }
    flags = {}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            flags[key] = value
    return flags


def _bank(cfg: RunConfig):
    if cfg.predictor_mode == "classical":
        return classical_bank()
    if cfg.predictor_mode == "identity":
        return identity_bank()
    weights_dir = cfg.paths.get("weights_dir")
    if weights_dir is None:
        raise ConfigError("key predictor: convnet mode needs weights_dir")
    return convnet_bank(weights_dir)


def _binary_mask(path) -> np.ndarray:
    plane = read_image(path)
    return (plane.data >= 0.5).astype(np.float64)


def _finish_run(cfg: RunConfig, trace, prop_config) -> int:
    if cfg.paths.get("trace"):
        write_trace_csv(trace, cfg.paths["trace"])
    report = monitor(trace, prop_config)
    text = report.to_text()
    if cfg.paths.get("report"):
        with open(cfg.paths["report"], "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if cfg.strict and not report.ok:
        raise MonitorViolation(text)
    return EXIT_OK


def _cmd_restore(kind: str, cfg: RunConfig) -> int:
    y = read_image(cfg.paths["input"])
    truth = read_image(cfg.paths["truth"]) if cfg.paths.get("truth") else None
    task_cfg = cfg.effective_task_config(kind)
    bank = _bank(cfg)

    if kind == "deconv":
        op = Convolution(load_kernel(cfg.paths["kernel"]), y.shape)
        out, trace = run(y, op, task_cfg.energy, bank, task_cfg.propagation,
                         schedule=task_cfg.schedule, reference=truth)
    elif kind == "inpaint":
        mask = _binary_mask(cfg.paths["mask"])
        if mask.shape != y.shape:
            if mask.shape[1:] == y.shape[1:] and mask.shape[0] == 1:
                mask = np.broadcast_to(mask, y.shape).copy()
            else:
                raise ConfigError(
                    f"key mask: shape {mask.shape} does not match input {y.shape}"
                )
        op = Mask(mask)
        out, trace = run(y, op, task_cfg.energy, bank, task_cfg.propagation,
                         schedule=task_cfg.schedule, reference=truth)
    elif kind == "sr":
        from .tasks import TaskInstance, restore

        op = Downsample(
            (y.channels, y.height * cfg.scale, y.width * cfg.scale), cfg.scale
        )
        instance = TaskInstance(kind="sr", y=y, op=op, truth=truth,
                                noise_std=0.0, spec=None)
        out, trace = restore(instance, bank, task_cfg)
    elif kind == "dehaze":
        if y.channels != 3:
            raise ConfigError("key input: dehazing needs an RGB (P6) image")
        airlight = estimate_atmospheric_light(y, task_cfg.light_fraction)
        t0 = dark_channel_transmission(
            y, airlight, task_cfg.dark_patch, task_cfg.dark_omega, task_cfg.t_floor
        )
        t_ref, trace = run(t0, Identity(t0.shape), task_cfg.energy, bank,
                           task_cfg.propagation, schedule=task_cfg.schedule)
        out = recover_radiance(y, t_ref, airlight, task_cfg.t_floor)
        if cfg.paths.get("transmission"):
            write_image(t_ref, cfg.paths["transmission"])
    else:
        raise ConfigError(f"unknown task kind {kind!r}")

    write_image(out, cfg.paths["output"])
    return _finish_run(cfg, trace, task_cfg.propagation)


def _cmd_bench(cfg: RunConfig) -> int:
    bank = _bank(cfg)
    rows = run_bench(cfg.paths["manifest"], bank)
    write_bench_csv(rows, cfg.paths["output"])
    for row in rows:
        print(f"{row.ident}: {row.psnr_in:.2f} -> {row.psnr_out:.2f} dB "
              f"({row.stages} stages, {row.seconds:.2f}s)")
    return EXIT_OK


def main(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError(parser.format_usage())
        if args.command == "selftest":
            failures = run_selftest()
            return EXIT_OK if failures == 0 else EXIT_CONFIG
        cfg = parse_config(getattr(args, "config", None), _flags_from_args(args))
        if args.command == "bench":
            return _cmd_bench(cfg)
        if getattr(args, "transmission", None):
            cfg.paths["transmission"] = args.transmission
        return _cmd_restore(args.command, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except MonitorViolation as exc:
        print(f"monitor violation:\n{exc}", file=sys.stderr)
        return EXIT_MONITOR
    except DpeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
