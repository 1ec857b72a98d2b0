"""
Command-line runner.

``securemimo run <config> [--seed N] [--set section.key=value ...] [--out DIR]``
writes ``<name>.csv`` and ``<name>.manifest.json`` to ``DIR``.
``securemimo validate <config>`` lists every configuration issue.

Exit status: 0 on success, 2 on configuration errors, 3 on numerical
failure. Progress lines on stdout are ``key=value`` pairs.
"""
import argparse
import json
import os
import subprocess
import sys
from importlib import metadata
from importlib import resources
from pathlib import Path

import numpy as np

from .config import ConfigError, apply_override, parse_config_text, validate_config_text
from .design import NoConvergence
from .numerics import SingularMatrix
from .simkit import SCHEMA_VERSION, write_csv

__all__ = ["main", "version_string", "preset_path", "PRESETS"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
THREADS_ENV = "SECUREMIMO_THREADS"
PRESETS = ("fig3_ber", "fig3_ber_caption", "fig4_mse", "fig5_gap", "fig6_an", "fig7_threshold", "fig8_system")


def version_string():
    """``git describe`` of the source tree, else the installed version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def preset_path(name):
    """Path of a bundled preset configuration."""
    return resources.files("securemimo") / "presets" / f"{name}.ini"


def _read(path):
    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        p = Path(str(preset_path(str(path))))
    try:
        return p.read_text(), str(p)
    except OSError as exc:
        raise ConfigError([f"cannot read config file {path}: {exc.strerror}"]) from None


def _progress(row):
    keys = ("experiment", "policy", "kind", "x_name", "x_value", "ber_legit", "ber_eve", "mse_legit", "gap_db")
    parts = []
    for k in keys:
        v = row.get(k, "")
        if v == "" or v is None:
            continue
        if isinstance(v, (float, np.floating)):
            v = f"{float(v):.6g}"
        parts.append(f"{k}={v}")
    print(" ".join(parts), flush=True)


def cmd_validate(args):
    try:
        text, source = _read(args.config)
    except ConfigError as exc:
        for issue in exc.issues:
            print(issue)
        return EXIT_CONFIG
    issues = validate_config_text(text, source)
    for issue in issues:
        print(issue)
    print(f"{len(issues)} issues")
    return EXIT_OK if not issues else EXIT_CONFIG


def cmd_run(args):
    from .experiments import run_experiment

    try:
        text, source = _read(args.config)
        for assignment in args.set or []:
            text = apply_override(text, assignment)
        cfg = parse_config_text(text, source)
    except ConfigError as exc:
        for issue in exc.issues:
            print(f"config error: {issue}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    name = cfg.values["experiment"]["name"] or Path(source).stem
    out_dir = Path(args.out)
    print(f"event=start experiment={cfg.kind} seed={cfg.seed} config={source}", flush=True)
    try:
        result = run_experiment(cfg, on_row=None if args.quiet else _progress)
    except (SingularMatrix, NoConvergence, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    write_csv(result.rows, csv_path)
    manifest = {
        "name": name,
        "experiment": cfg.kind,
        "seed": cfg.seed,
        "version": version_string(),
        "csv": csv_path.name,
        "csv_schema_version": SCHEMA_VERSION,
        "config_source": source,
        "config_sha256": cfg.digest(),
        "config": cfg.values,
        "resolved_config_text": cfg.to_text(),
    }
    with open(out_dir / f"{name}.manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"event=done rows={len(result.rows)} csv={csv_path}", flush=True)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="securemimo", description="Secure multicast MIMO transceiver experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment configuration")
    r.add_argument("config", help="config file path or preset name")
    r.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    r.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    r.add_argument("--out", default="results", help="output directory (default: results)")
    r.add_argument("--quiet", action="store_true", help="suppress per-row progress lines")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a configuration without running it")
    v.add_argument("config", help="config file path or preset name")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
