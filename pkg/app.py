#!/usr/bin/env python3
"""
Metasurface BEM - Main Application

Command-line interface to the periodic metasurface engine: Green's function evaluations, NP spectra,
polarization tensors, frequency sweeps, reflected fields, the validation suite and mesh export.
Results go to stdout (or --out); errors are reported as JSON on stderr with a distinct exit code.
"""

import argparse
import json
import sys
from typing import List, Optional, Sequence

from metasurface_bem import MetasurfaceEngine
from metasurface_bem.core.engine import GREEN_MODES, SPECTRUM_COLUMNS
from metasurface_bem.core.scattering import SWEEP_COLUMNS
from metasurface_bem.core.validation import SUITES
from metasurface_bem.utils.error_handling import (
    EXIT_INTERNAL,
    EXIT_OK,
    EXIT_USAGE,
    MetasurfaceError,
    ValidationFailed,
    exit_code_table,
    get_error_handler,
)
from metasurface_bem.utils.output import FORMATS, open_output, to_json, write_records


class UsageError(Exception):
    """Malformed command line."""


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors as exit code 64 instead of 2"""

    def error(self, message: str):
        raise UsageError(message)


def parse_vector(text: str, length: int = 3) -> List[float]:
    """'0,0,5' -> [0.0, 0.0, 5.0]"""
    try:
        values = [float(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected {length} comma-separated numbers, got {text!r}")
    if len(values) != length:
        raise argparse.ArgumentTypeError(f"expected {length} comma-separated numbers, got {text!r}")
    return values


def _epilog() -> str:
    lines = [
        "Examples:",
        "  python app.py green --point 0,0,5 --k 0 --mode static",
        "  python app.py --config config.yaml spectrum --kind e --n-eigs 10",
        "  python app.py --config config.yaml --threads 4 sweep --out sweep.csv",
        "  python app.py --config config.yaml validate --suite all",
        "",
        "Exit codes:",
        f"  {EXIT_OK:>3}  success",
    ]
    for row in exit_code_table():
        lines.append(f"  {row['exit_code']:>3}  {row['error']}")
    lines.append(f"  {EXIT_USAGE:>3}  usage error")
    lines.append(f"  {EXIT_INTERNAL:>3}  unexpected internal error")
    return "\n".join(lines)


def build_parser() -> CliParser:
    parser = CliParser(
        prog="app.py",
        description="Periodic plasmonic metasurface boundary element engine",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=_epilog(),
    )
    # Global options are accepted before or after the command
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', default=argparse.SUPPRESS, help='Scenario file (YAML or JSON)')
    common.add_argument('--out', '-o', default=argparse.SUPPRESS, help='Output file (default stdout)')
    common.add_argument('--threads', type=int, default=argparse.SUPPRESS, help='Worker threads for sweeps')
    common.add_argument('--seed', type=int, default=argparse.SUPPRESS, help='Seed of randomized checks')
    common.add_argument('--format', choices=FORMATS, default=argparse.SUPPRESS,
                        help='Record format for spectrum and sweep output')

    parser.add_argument('--config', '-c', help='Scenario file (YAML or JSON)')
    parser.add_argument('--out', '-o', help='Output file (default stdout)')
    parser.add_argument('--threads', type=int, help='Worker threads for sweeps')
    parser.add_argument('--seed', type=int, help='Seed of randomized checks')
    parser.add_argument('--format', choices=FORMATS, default="csv",
                        help='Record format for spectrum and sweep output')

    commands = parser.add_subparsers(dest="command", metavar="command", parser_class=CliParser)
    commands.required = True

    green = commands.add_parser('green', parents=[common], help="Evaluate the quasi-periodic Green's function")
    green.add_argument('--point', type=parse_vector, required=True, help='Evaluation point x1,x2,x3')
    green.add_argument('--k', type=float, default=0.0, help='Wavenumber (0 for the static kernel)')
    green.add_argument('--mode', choices=GREEN_MODES, default="spectral", help='Evaluation method')

    spectrum = commands.add_parser('spectrum', parents=[common], help='Eigenvalues of the NP operator')
    spectrum.add_argument('--kind', default="e", help='Operator kind, e or m')
    spectrum.add_argument('--n-eigs', type=int, help='Number of leading eigenvalues to print')
    spectrum.add_argument('--incident-correction', action='store_true',
                          help='Apply the oblique-incidence correction (kind m)')
    spectrum.add_argument('--dump', help='Also write the operator in binary form to this path')

    tensors = commands.add_parser('tensors', parents=[common], help='Tensors, dipoles and R at one frequency')
    tensors.add_argument('--omega', type=float, help='Frequency (default sweep.omega_min)')

    commands.add_parser('sweep', parents=[common], help='Frequency sweep of the configured scenario')

    field = commands.add_parser('field', parents=[common], help='Reflected field of all layers at a point')
    field.add_argument('--point', type=parse_vector, required=True, help='Evaluation point x1,x2,x3')
    field.add_argument('--omega', type=float, help='Frequency (default sweep.omega_min)')

    validate = commands.add_parser('validate', parents=[common], help='Run the validation suite')
    validate.add_argument('--suite', choices=SUITES + ("all",), default="all", help='Checks to run')

    export = commands.add_parser('export-mesh', parents=[common], help='Write a layer mesh as OBJ')
    export.add_argument('--layer', type=int, default=0, help='Layer index (0 is the main geometry)')

    return parser


def run_green(engine: MetasurfaceEngine, args) -> int:
    record = engine.green(args.point, args.k, args.mode)
    with open_output(args.out) as stream:
        stream.write(to_json(record) + "\n")
    return EXIT_OK


def run_spectrum(engine: MetasurfaceEngine, args) -> int:
    rows = engine.spectrum(args.kind, args.n_eigs, args.incident_correction, args.dump)
    write_records(rows, SPECTRUM_COLUMNS, args.format, args.out)
    return EXIT_OK


def run_tensors(engine: MetasurfaceEngine, args) -> int:
    omega = args.omega if args.omega is not None else engine.config.sweep.omega_min
    with open_output(args.out) as stream:
        stream.write(to_json(engine.tensors(omega), indent=2) + "\n")
    return EXIT_OK


def run_sweep(engine: MetasurfaceEngine, args) -> int:
    rows = engine.sweep(threads=args.threads)
    write_records((row.to_record() for row in rows), SWEEP_COLUMNS, args.format, args.out)
    return EXIT_OK


def run_field(engine: MetasurfaceEngine, args) -> int:
    omega = args.omega if args.omega is not None else engine.config.sweep.omega_min
    with open_output(args.out) as stream:
        stream.write(to_json(engine.field(args.point, omega)) + "\n")
    return EXIT_OK


def run_validate(engine: MetasurfaceEngine, args) -> int:
    results = engine.validate(args.suite, args.seed)
    with open_output(args.out) as stream:
        for result in results:
            stream.write(to_json(result.to_dict()) + "\n")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise ValidationFailed(f"{len(failed)} of {len(results)} checks failed", failed=failed)
    return EXIT_OK


def run_export_mesh(engine: MetasurfaceEngine, args) -> int:
    if not args.out or args.out == "-":
        raise UsageError("export-mesh needs --out <path>")
    path = engine.export_mesh(args.out, args.layer)
    engine.logger.info(f"Mesh exported: {json.dumps({'path': str(path), 'layer': args.layer})}")
    return EXIT_OK


COMMANDS = {
    "green": run_green,
    "spectrum": run_spectrum,
    "tensors": run_tensors,
    "sweep": run_sweep,
    "field": run_field,
    "validate": run_validate,
    "export-mesh": run_export_mesh,
}


def report_error(error: Exception, command: Optional[str]) -> int:
    """Log the failure, print its JSON record on stderr and return the exit code."""
    get_error_handler().handle_error(error, {"component": "cli", "operation": command or "parse"})
    if isinstance(error, MetasurfaceError):
        record = error.to_dict()
    else:
        record = {"error": type(error).__name__, "message": str(error), "exit_code": EXIT_INTERNAL}
    print(json.dumps(record), file=sys.stderr)
    return record["exit_code"]


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main application entry point"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(json.dumps({"error": "UsageError", "message": str(e), "exit_code": EXIT_USAGE}), file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        engine = MetasurfaceEngine(args.config)
        return COMMANDS[args.command](engine, args)
    except UsageError as e:
        print(json.dumps({"error": "UsageError", "message": str(e), "exit_code": EXIT_USAGE}), file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        return report_error(e, args.command)


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        sys.exit(130)
