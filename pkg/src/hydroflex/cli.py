"""Command line entry point: ``run``, ``validate`` and ``matrix``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import REFERENCE_PLANT, TESTED_SERVICES, ConfigError, load_manifest, validate

EXIT_OK, EXIT_CONFIG, EXIT_SIMULATION = 0, 1, 2
OUT_ENV = "HYDROFLEX_OUT"

log = logging.getLogger("hydroflex")


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not simulation failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _formats(text: str) -> list[str]:
    from .campaign import FORMATS
    out = [f.strip() for f in text.split(",") if f.strip()]
    for f in out:
        if f not in FORMATS:
            raise argparse.ArgumentTypeError(f"unknown format {f!r}; choose from {', '.join(FORMATS)}")
    return out


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hydroflex", description="Ancillary service qualification for pumped storage plants.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run the test battery and write reports and the matrix")
    r.add_argument("manifest", nargs="?", help="campaign manifest (TOML); flags override its values")
    r.add_argument("--plant", help="plant configuration (default: the bundled reference plant)")
    r.add_argument("--stacks", nargs="+", metavar="STACK", help="technology stacks, e.g. FS VS+SPPS+HSC")
    r.add_argument("--services", nargs="+", choices=TESTED_SERVICES, metavar="SERVICE",
                   help=f"services to test: {', '.join(TESTED_SERVICES)}")
    r.add_argument("--dt", type=float, help="solver time step in seconds")
    r.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./hydroflex-out)")
    r.add_argument("--format", type=_formats, help="matrix formats, comma separated (default: all)")
    r.add_argument("--parallel", type=int, help="worker processes")
    r.add_argument("--trace-every", type=int, default=1, help="keep every k-th trace sample in CSV output")

    v = sub.add_parser("validate", help="check a plant or manifest file without simulating")
    v.add_argument("path")

    m = sub.add_parser("matrix", help="re-render the matrix from a run directory or a score file")
    m.add_argument("source", help="run output directory (or its capabilities.json) or a long-format score CSV")
    m.add_argument("--format", type=_formats, default=["csv"], help="csv, json or markdown")
    m.add_argument("--out", help="write here instead of stdout")
    return p


def _cmd_run(a) -> int:
    from .campaign import FORMATS, FRADES_STACKS, run_campaign
    camp = load_manifest(a.manifest) if a.manifest else {}
    plant = a.plant or camp.get("plant_path") or REFERENCE_PLANT
    if not Path(plant).is_file():
        raise ConfigError(f"plant file {str(plant)!r} not found")
    problems = validate(plant)
    if problems:
        raise ConfigError("\n".join(problems))
    out = a.out or camp.get("out") or os.environ.get(OUT_ENV) or "hydroflex-out"
    dt = a.dt if a.dt is not None else camp.get("dt")
    if dt is not None:
        if not dt > 0:
            raise ConfigError("dt must be positive")
        from .config import load_plant
        from .hydraulics import NetworkError
        try:
            load_plant(plant).network().check_discretisation(dt)
        except NetworkError as exc:
            raise ConfigError(f"--dt {dt}: {exc}") from None
    parallel = a.parallel or camp.get("parallel", 1)
    if parallel < 1:
        raise ConfigError("--parallel must be at least 1")
    res = run_campaign(plant, a.stacks or camp.get("stacks") or FRADES_STACKS,
                       a.services or camp.get("services") or TESTED_SERVICES, out, dt, parallel,
                       a.format or FORMATS, a.trace_every)
    for c in res.cells:
        if c.error:
            log.error("%s / %s: %s", c.stack, c.service, c.error)
        else:
            caps = ", ".join(f"{m} {r.capability:.1f} MW" + ("" if r.passed else " (fail)") for m, r in c.reports.items())
            log.info("%s / %s: %s", c.stack, c.service, caps)
    log.info("artifacts in %s", res.out)
    return res.exit_code


def _cmd_validate(a) -> int:
    problems = validate(a.path)
    for d in problems:
        print(d)
    if not problems:
        print(f"{a.path}: ok")
    return EXIT_CONFIG if problems else EXIT_OK


def _cmd_matrix(a) -> int:
    from .campaign import matrix_from_summary
    from .matrix import read_score_file, render_matrix
    src = Path(a.source)
    if src.is_dir():
        src = src / "capabilities.json"
    if not src.is_file():
        raise ConfigError(f"{a.source}: no run directory or score file found")
    matrix = matrix_from_summary(src) if src.suffix == ".json" else read_score_file(src)
    text = "".join(render_matrix(matrix, f) for f in a.format)
    if a.out:
        from .artifacts import write_text
        write_text(a.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    a = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return {"run": _cmd_run, "validate": _cmd_validate, "matrix": _cmd_matrix}[a.command](a)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
