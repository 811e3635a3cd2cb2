"""Command-line front end: ``cvcluster {simulate,analyze,theory,verify,presets}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dsp, pipeline
from .experiment import PRESETS, ConfigError, ExperimentConfig, preset

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        raise ConfigError("a --config file or --preset name is required")
    d = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        if args.runs < 0:
            raise ConfigError("--runs must be nonnegative")
        d["runs"]["signal"] = args.runs
        d["runs"]["eom_off"] = args.runs
        if args.runs == 0:
            d["runs"]["elec"] = 0
    if getattr(args, "threshold", None) is not None:
        d["analysis"]["threshold"] = args.threshold
    if getattr(args, "method", None) is not None:
        d["analysis"]["method"] = args.method
    return ExperimentConfig.from_dict(d)


def _print(data: dict) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = Path(args.out or cfg.output_dir)
    manifest = pipeline.simulate(cfg, out)
    print(f"wrote {len(manifest['files'])} trace files and {out / 'manifest.json'}")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    summary = pipeline.analyze(args.manifest, args.out, method=args.method)
    _print(summary)
    return EXIT_OK


def cmd_theory(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    summary = pipeline.theory(cfg, Path(args.out or Path(cfg.output_dir) / "theory"))
    _print(summary)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    report = pipeline.verify(args.covariance, cfg, args.threshold, args.out)
    _print(report.to_dict())
    print("PASS" if report.passed else "FAIL", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_presets(args: argparse.Namespace) -> int:
    if args.name:
        print(preset(args.name).to_json(), end="")
    else:
        for name in PRESETS:
            print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvcluster", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def config_flags(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--preset", choices=sorted(PRESETS), help="named parameter set")

    s = sub.add_parser("simulate", help="generate trace files and a manifest")
    config_flags(s)
    s.add_argument("--out", help="output directory (default: config output_dir)")
    s.add_argument("--runs", type=int, help="signal runs per quadrature configuration")
    s.add_argument("--seed", type=int, help="master seed")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="covariance, nullifiers and spectra from a manifest")
    a.add_argument("manifest", help="manifest.json or the directory holding it")
    a.add_argument("--out", help="output directory (default: <manifest dir>/analysis)")
    a.add_argument("--method", choices=["matrix", "lockin", "both"])
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("theory", help="analytic covariance, nullifiers, V/U and error vector")
    config_flags(t)
    t.add_argument("--out", help="output directory (default: <output_dir>/theory)")
    t.add_argument("--threshold", type=float, help="edge threshold for the exported graph")
    t.set_defaults(func=cmd_theory)

    v = sub.add_parser("verify", help="check a covariance file against the configured hypercube")
    v.add_argument("covariance", help="CSV or CVL1 covariance file")
    config_flags(v)
    v.add_argument("--threshold", type=float, help="edge threshold in shot units")
    v.add_argument("--out", help="directory for structure.json and graph exports")
    v.set_defaults(func=cmd_verify)

    ps = sub.add_parser("presets", help="list presets or print one as JSON")
    ps.add_argument("name", nargs="?", choices=sorted(PRESETS))
    ps.set_defaults(func=cmd_presets)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except dsp.MissingSectorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
