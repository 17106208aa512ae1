"""Command-line front end.

Exit codes: 0 success, 1 validation report with violations, 2 usage, shape,
format or configuration error, 3 capacity exceeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .config import TUNED_CONFIGS, GeneralConfig, SpecialConfig
from .costmodel import (CostReport, SearchBounds, enumerate_configs, enumerate_special_configs,
                        predict_general, predict_special, validate_config)
from .errors import CapacityError, ConfigError, ConvSimError, TensorFormatError
from .kernel_general import run_general
from .kernel_special import run_special, run_special_unmatched
from .memsim import MemModel, Metrics
from .tensors import FilterBank, Image, gen_problem, naive_convolve, read_tensor, write_tensor

THREADS_ENV = "CONV_MEMSIM_THREADS"


class UsageError(ConvSimError):
    pass


def _fail(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _model(args) -> MemModel:
    return MemModel(bank_width_bytes=args.bank_width, elem_width_bytes=args.elem_width)


def _config(args, model: MemModel):
    need = ["W", "H"] if args.kernel == "special" else ["W", "H", "F_TB", "W_T", "F_T", "C_SH"]
    missing = [f"--{k}" for k in need if getattr(args, k) is None]
    if missing:
        raise UsageError(f"{args.kernel} kernel needs {' '.join(missing)}")
    if args.kernel == "special":
        n = args.n if args.n is not None else model.n
        return SpecialConfig(args.W, args.H, n)
    return GeneralConfig(args.W, args.H, args.F_TB, args.W_T, args.F_T, args.C_SH, args.pad)


def _load_inputs(args) -> tuple[Image, FilterBank]:
    if args.gen:
        dims = _int_list(args.gen)
        if len(dims) != 4 or min(dims) < 1:
            raise UsageError("--gen expects four positive integers N,C,K,F")
        N, C, K, F = dims
        if N < K:
            raise ConfigError(f"image {N}x{N} smaller than filter {K}x{K}")
        return gen_problem(N, C, K, F, args.seed)
    if not (args.image and args.filters):
        raise UsageError("give --image and --filters, or --gen N,C,K,F")
    return Image(read_tensor(args.image)), FilterBank(read_tensor(args.filters))


def cmd_oracle(args) -> int:
    try:
        image, filters = Image(read_tensor(args.image)), FilterBank(read_tensor(args.filters))
        out = naive_convolve(image, filters)
    except (ConfigError, TensorFormatError, OSError) as exc:
        return _fail(str(exc), 2)
    write_tensor(args.out, out)
    return 0


def _phase_cycles(trace, phase: str) -> int:
    return sum(rec.sim.sm_cycles_by_phase[phase] for rec in trace)


def cmd_run(args) -> int:
    try:
        model = _model(args)
        cfg = _config(args, model)
        image, filters = _load_inputs(args)
        if args.unmatched and args.kernel != "special":
            raise UsageError("--unmatched applies to the special kernel only")
        trace: list = []
        if args.kernel == "special":
            runner = run_special_unmatched if args.unmatched else run_special
            out, metrics = runner(image, filters, cfg, model, trace=trace)
        else:
            out, metrics = run_general(image, filters, cfg, model, trace=trace)
    except CapacityError as exc:
        return _fail(str(exc), 3)
    except (ConvSimError, OSError) as exc:
        return _fail(str(exc), 2)

    if args.out:
        write_tensor(args.out, out)
    if args.metrics:
        with open(args.metrics, "w", newline="") as fh:
            fh.write(metrics.csv_header() + "\n" + metrics.csv_row() + "\n")
    store_phase = "row_store" if args.kernel == "special" else "image_store"
    kernel = args.kernel + ("-unmatched" if args.unmatched else "")
    print(f"kernel={kernel} gm_tx={metrics.gm_transactions} sm_cycles={metrics.sm_cycles} "
          f"conflicts={metrics.sm_conflict_excess} row_load_cycles={_phase_cycles(trace, store_phase)}")
    return 0


def cmd_validate(args) -> int:
    try:
        model = _model(args)
        cfg = _config(args, model)
    except ConvSimError as exc:
        return _fail(str(exc), 2)
    F = args.F if args.F is not None else (cfg.F_TB if isinstance(cfg, GeneralConfig) else 1)
    problems = validate_config(cfg, args.K, args.C, F, model)
    if not problems:
        print("ok")
        return 0
    for v in problems:
        print(v)
    return 1


# --- sweeps -----------------------------------------------------------------

_LIST_KEYS = ("N", "K", "C", "F")
_INT_KEYS = ("W", "H", "n", "F_TB", "W_T", "F_T", "C_SH", "pad", "bank_width", "elem_width", "seed")
_CONFIG_SOURCES = ("explicit", "enumerate-best", "tuned")


@dataclass
class SweepSpec:
    kernel: str = "special"
    N: list = field(default_factory=list)
    K: list = field(default_factory=list)
    C: list = field(default_factory=lambda: [1])
    F: list = field(default_factory=list)
    config: str = "explicit"
    params: dict = field(default_factory=dict)
    bank_width: int = 8
    elem_width: int = 4
    seed: int = 0
    unmatched: bool = False
    output: Optional[str] = None

    def kernels(self) -> list[str]:
        return ["general", "special"] if self.kernel == "both" else [self.kernel]


def parse_sweep_spec(text: str) -> SweepSpec:
    """Parse ``key = value`` lines; lists are comma separated, ``#`` starts a comment."""
    spec = SweepSpec()
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        seen[key] = lineno
        try:
            if key in _LIST_KEYS:
                vals = _int_list(value)
                if not vals:
                    raise UsageError(f"line {lineno}: {key} list is empty")
                if min(vals) < 1:
                    raise UsageError(f"line {lineno}: {key} values must be positive")
                setattr(spec, key, vals)
            elif key == "kernel":
                if value not in ("special", "general", "both"):
                    raise UsageError(f"line {lineno}: kernel must be special, general or both")
                spec.kernel = value
            elif key == "config":
                if value not in _CONFIG_SOURCES:
                    raise UsageError(f"line {lineno}: config must be one of {', '.join(_CONFIG_SOURCES)}")
                spec.config = value
            elif key in ("bank_width", "elem_width", "seed"):
                setattr(spec, key, int(value))
            elif key in _INT_KEYS:
                spec.params[key] = int(value)
            elif key == "unmatched":
                spec.unmatched = value.lower() in ("1", "true", "yes")
            elif key == "output":
                spec.output = value
            else:
                raise UsageError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConvSimError):
                raise
            raise UsageError(f"line {lineno}: bad value for {key}: {value!r}") from None
    for key in ("N", "K", "F"):
        if not getattr(spec, key):
            where = f"line {seen[key]}" if key in seen else "spec"
            raise UsageError(f"{where}: {key} list is empty")
    return spec


PARAM_COLUMNS = ["kernel", "N", "K", "C", "F", "config"]
EXTRA_COLUMNS = ["sm_pixel_loads", "agree_gm_reads", "agree_sm_pixel_loads", "agree_registers",
                 "agree_sm_bytes", "status"]


def sweep_columns() -> list[str]:
    return PARAM_COLUMNS + Metrics.columns() + CostReport.columns() + EXTRA_COLUMNS


def _sweep_config(spec: SweepSpec, kernel: str, N: int, K: int, C: int, F: int, model: MemModel):
    p = spec.params
    if spec.config == "tuned":
        if kernel != "general" or K not in TUNED_CONFIGS:
            raise UsageError(f"no tuned configuration for kernel={kernel} K={K}")
        base = TUNED_CONFIGS[K]
        return GeneralConfig(base.W, base.H, base.F_TB, base.W_T, base.F_T, base.C_SH, p.get("pad"))
    if spec.config == "enumerate-best":
        bounds = SearchBounds(output_size=N - K + 1)
        found = (enumerate_special_configs(K, F, model, bounds) if kernel == "special"
                 else enumerate_configs(K, C, F, model, bounds))
        if not found:
            raise UsageError(f"no valid configuration for kernel={kernel} N={N} K={K} C={C} F={F}")
        return found[0][0]
    try:
        if kernel == "special":
            return SpecialConfig(p["W"], p["H"], p.get("n", model.n))
        return GeneralConfig(p["W"], p["H"], p["F_TB"], p["W_T"], p["F_T"], p["C_SH"], p.get("pad"))
    except KeyError as exc:
        raise UsageError(f"explicit {kernel} config is missing {exc.args[0]}") from None


def _measured_pixel_loads(trace, cfg, kernel: str) -> int:
    full = [r for r in trace if r.eff == (cfg.H, cfg.W)] or trace
    best = max(int(r.pixel_loads.max()) for r in full)
    return best if kernel == "special" else best // full[0].channels


def sweep_row(job) -> list[str]:
    spec, kernel, N, K, C, F = job
    model = MemModel(bank_width_bytes=spec.bank_width, elem_width_bytes=spec.elem_width)
    cfg = _sweep_config(spec, kernel, N, K, C, F, model)
    head = [kernel, str(N), str(K), str(C), str(F), cfg.describe()]
    blank = [""] * (len(Metrics.columns()) + len(CostReport.columns()) + len(EXTRA_COLUMNS) - 1)
    problems = validate_config(cfg, K, C, F, model)
    if problems:
        return head + blank + ["invalid: " + "; ".join(str(v) for v in problems).replace(",", ";")]

    image, filters = gen_problem(N, C, K, F, spec.seed)
    trace: list = []
    dims = (N, N)
    if kernel == "special":
        runner = run_special_unmatched if spec.unmatched else run_special
        _, metrics = runner(image, filters, cfg, model, trace=trace)
        pred = predict_special(cfg.unmatched() if spec.unmatched else cfg, K, F, dims, model)
    else:
        cfg = cfg.with_pad(model)
        _, metrics = run_general(image, filters, cfg, model, trace=trace)
        pred = predict_general(cfg, K, C, F, dims, model)
    loads = _measured_pixel_loads(trace, cfg if not spec.unmatched else cfg.unmatched(), kernel)
    flags = [metrics.gm_pixel_reads == pred.gm_reads_pred,
             loads == pred.sm_pixel_loads_pred,
             metrics.registers_per_thread == pred.registers_pred,
             metrics.sm_bytes_used == pred.sm_bytes_pred]
    return (head + [str(v) for v in metrics.as_row()] + pred.csv_row().split(",") + [str(loads)]
            + ["true" if f else "false" for f in flags] + ["ok"])


def sweep_jobs(spec: SweepSpec) -> list:
    jobs = set()
    for kernel in spec.kernels():
        chans = [1] if kernel == "special" else spec.C
        for N, K, C, F in itertools.product(spec.N, spec.K, chans, spec.F):
            if N >= K:
                jobs.add((kernel, N, K, C, F))
    return [(spec, *key) for key in sorted(jobs)]


def thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        val = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if val < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return val


def run_sweep(spec: SweepSpec, workers: int = 1) -> str:
    jobs = sweep_jobs(spec)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(sweep_row, jobs))
    else:
        rows = [sweep_row(job) for job in jobs]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(sweep_columns())
    writer.writerows(rows)
    return buf.getvalue()


def cmd_sweep(args) -> int:
    try:
        spec = parse_sweep_spec(Path(args.spec).read_text())
        text = run_sweep(spec, thread_cap())
    except CapacityError as exc:
        return _fail(str(exc), 3)
    except (ConvSimError, OSError) as exc:
        return _fail(str(exc), 2)
    out = args.out or spec.output
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


# --- argument parsing ---------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kernel", choices=("special", "general"), required=True)
    for name in ("W", "H", "n", "F_TB", "W_T", "F_T", "C_SH", "pad"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--bank-width", type=int, choices=(4, 8), default=8)
    p.add_argument("--elem-width", type=int, choices=(1, 2, 4), default=4)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conv-memsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("oracle", help="reference convolution of tensor files")
    p.add_argument("--image", required=True)
    p.add_argument("--filters", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("run", help="emulate a kernel and report memory metrics")
    _add_config_flags(p)
    p.add_argument("--image")
    p.add_argument("--filters")
    p.add_argument("--gen", metavar="N,C,K,F")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unmatched", action="store_true")
    p.add_argument("--metrics")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter grid from a key = value spec file")
    p.add_argument("--spec", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="check a tiling configuration")
    _add_config_flags(p)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--C", type=int, default=1)
    p.add_argument("--F", type=int)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
