"""``ontic`` command line: one subcommand per experiment kind, plus validate/manifest."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigParse, InvariantViolation, OnticError
from .harness import KINDS, OUTPUT_ENV, environment, load_config, resolve_output, run

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def _error_record(exc: Exception, code: int, out: Path | None) -> int:
    record = {
        "error": type(exc).__name__,
        "message": str(exc),
        "where": getattr(exc, "where", None),
        "exit_code": code,
    }
    text = json.dumps(record)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass
    return code


def _run(path: str, kind: str | None, output: str | None) -> int:
    out = None
    try:
        cfg = load_config(path)
        if kind is not None and cfg.kind != kind:
            raise ConfigParse(f"config is for kind {cfg.kind!r}, not {kind!r}", cfg.where("experiment", "kind"))
        out = resolve_output(cfg, output)
        out, manifest = run(cfg, out)
    except ConfigParse as exc:
        return _error_record(exc, EXIT_CONFIG, out)
    except InvariantViolation as exc:
        return _error_record(exc, EXIT_INVARIANT, out)
    except OnticError as exc:
        return _error_record(exc, EXIT_ERROR, out)
    print(json.dumps({"output": str(out), "summary": manifest["summary"]}, default=str))
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="ontic", description="Ontic state counting experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in KINDS + ("run",):
        p = sub.add_parser(kind, help="run any config" if kind == "run" else f"run a {kind} experiment")
        p.add_argument("config")
        p.add_argument("-o", "--output", help=f"output directory (default: ${OUTPUT_ENV}/<config name>)")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    sub.add_parser("manifest", help="print the runtime environment")
    args = ap.parse_args(argv)

    if args.command == "manifest":
        print(json.dumps(environment(), indent=2))
        return EXIT_OK
    if args.command == "validate":
        try:
            cfg = load_config(args.config)
        except ConfigParse as exc:
            return _error_record(exc, EXIT_CONFIG, None)
        print(json.dumps({"valid": True, "kind": cfg.kind, "seed": cfg.seed}))
        return EXIT_OK
    return _run(args.config, None if args.command == "run" else args.command, args.output)


if __name__ == "__main__":
    sys.exit(main())
