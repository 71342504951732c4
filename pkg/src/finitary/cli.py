"""Command line: ``finitary {simulate,verify,scan,sharpness}``.

Exit codes: 0 all checks pass, 2 some check failed, 3 invalid input data or
an unresolved replica under the abort policy.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import runners, toeplitz
from .cftp import UnresolvedError
from .config import ExperimentConfig, load_config
from .parallel import THREADS_ENV, default_threads
from .records import (
    SCAN_COLUMNS, RecordError, read_samples, tabulate, write_csv, write_report, write_samples,
)

log = logging.getLogger("finitary")

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 2, 3
MARGIN_COLUMNS = ("check", "point", "empirical", "bound", "status")
RATIO_COLUMNS = ("L", "ratio", "closed_form", "l1", "error_bound", "truncated")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


class _Parser(argparse.ArgumentParser):
    # usage errors are invalid input, not failed checks
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="experiment TOML file")
    common.add_argument("--seed", type=_u64, help="override sampler.seed")
    common.add_argument("--replicas", type=_positive, help="override sampler.replicas")
    common.add_argument("--threads", type=_positive, default=None,
                        help=f"worker threads (default ${THREADS_ENV} or 1)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--unresolved", choices=("abort", "flag"), help="override sampler.unresolved")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="finitary", description="Finitary coding experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="draw exact samples to JSON Lines")
    v = sub.add_parser("verify", parents=[common], help="check concentration bounds on sample files")
    v.add_argument("samples", nargs="*", type=Path, help="sample files (default: output.samples in --out)")
    sub.add_parser("scan", parents=[common], help="parameter grid to a long-format CSV")
    s = sub.add_parser("sharpness", parents=[common], help="overlap kernel and block ratios")
    s.add_argument("samples", nargs="?", type=Path, help="joint sample file for the kernel")
    return p


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    upd = {k: getattr(args, k) for k in ("seed", "replicas", "unresolved") if getattr(args, k) is not None}
    if not upd:
        return cfg
    return cfg.model_copy(update={"sampler": cfg.sampler.model_copy(update=upd)})


def cmd_simulate(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    try:
        records = runners.simulate_records(cfg, threads)
    except UnresolvedError as exc:
        log.error("unresolved: %s (replica %s)", exc, exc.replica)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    n = write_samples(out / cfg.output.samples, records)
    log.info("wrote %d records to %s", n, out / cfg.output.samples)
    return EXIT_OK


def _load_records(paths):
    records = []
    for p in paths:
        records.extend(read_samples(p))
    return records


def cmd_verify(cfg: ExperimentConfig, out: Path, paths: list[Path]) -> int:
    paths = paths or [out / cfg.output.samples]
    try:
        table = tabulate(_load_records(paths))
        sections, rows, ok = runners.verify_table(cfg, table)
    except (RecordError, UnresolvedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    write_report(out / cfg.output.report, sections)
    write_csv(out / cfg.output.margins, MARGIN_COLUMNS, rows)
    for r in rows:
        print(",".join(str(x) for x in r))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_scan(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    rows = runners.run_scan(cfg, threads)
    write_csv(out / cfg.output.scan, SCAN_COLUMNS, rows)
    bad = any(str(r[-1]).startswith("ERROR") for r in rows)
    return EXIT_FAIL if bad else EXIT_OK


def kernel_from_records(records) -> toeplitz.Kernel:
    table = tabulate(records)
    if table.unresolved:
        raise UnresolvedError(f"{table.unresolved} unresolved records")
    joint = toeplitz.JointRadii(tuple(table.sites), table.radii, table.replicas, table.seed)
    return toeplitz.overlap_kernel(joint)


def cmd_sharpness(cfg: ExperimentConfig, out: Path, path: Path | None) -> int:
    sh = cfg.sharpness
    if sh is None:
        print("error: config has no [sharpness] section", file=sys.stderr)
        return EXIT_INVALID
    src = path or (Path(sh.from_samples) if sh.from_samples else None)
    try:
        if src is not None:
            kern = kernel_from_records(read_samples(src))
        elif sh.kernel:
            kern = toeplitz.Kernel({tuple(e.offset): e.value for e in sh.kernel})
        else:
            print("error: sharpness needs a kernel or a sample file", file=sys.stderr)
            return EXIT_INVALID
    except (RecordError, UnresolvedError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    (out / cfg.output.kernel).write_text(kern.to_csv(), encoding="utf-8")
    rows = toeplitz.block_ratio_scan(kern, sh.L)
    write_csv(out / cfg.output.ratios, RATIO_COLUMNS,
              [(r.L, r.ratio, r.closed_form, r.l1, r.error_bound, int(kern.truncated)) for r in rows])
    # the ratio can never exceed ||b||_1; anything else is a numerical fault
    ok = all(r.ratio <= r.l1 * (1 + 1e-12) and np.isfinite(r.ratio) for r in rows)
    return EXIT_OK if ok else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except ValidationError as exc:
        print(f"error: invalid config {args.config}:\n{exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError) as exc:
        print(f"error: cannot read config {args.config}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    threads = args.threads or default_threads()
    args.out.mkdir(parents=True, exist_ok=True)
    if args.command == "simulate":
        return cmd_simulate(cfg, args.out, threads)
    if args.command == "verify":
        return cmd_verify(cfg, args.out, args.samples)
    if args.command == "scan":
        return cmd_scan(cfg, args.out, threads)
    return cmd_sharpness(cfg, args.out, args.samples)


if __name__ == "__main__":
    sys.exit(main())
