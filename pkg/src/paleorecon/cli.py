"""Command-line entry point: ``paleorecon <stage> --config <file>``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION, load_config
from .errors import CalibrationError, ConfigError, DataError, DomainError, EstimationError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

SYNTH_CONFIG = """\
schema_version: {version}
paths:
  reaches: reaches.csv
  lme: lme.csv
  ghcn: ghcn_monthly.csv
output_dir: out
years: [{first}, {last}]
seed: {seed}
locations:
{locations}
validate:
  years: [{vfirst}, {last}]
"""


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paleorecon",
                                description="Reconstruct temperature series from ordinal proxy records.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="pipeline YAML file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", type=Path, help="override the output directory")
    common.add_argument("--threads", type=int, help="worker count for per-year and per-grid-point jobs")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("variogram", parents=[common], help="fit and bias-correct the spatial covariance")
    k = sub.add_parser("krige", parents=[common], help="krige a grid for one year or series at locations")
    k.add_argument("--year", type=int)
    k.add_argument("--location")
    for name, text in (("qmap", "calibrate kriged series to temperature"),
                       ("prior", "fit the AR(1) prior to the ensemble"),
                       ("assimilate", "Kalman filter and smoother")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--location", help="one configured location (default: all)")
    sub.add_parser("validate", parents=[common], help="correlate reconstructions with station records")
    sub.add_parser("run", parents=[common], help="every stage in order")
    s = sub.add_parser("synth", parents=[common], help="write a synthetic data set and a config for it")
    s.add_argument("--sites", type=int, default=200, help="proxy records per year")
    s.add_argument("--years", type=int, default=120, help="number of years, ending in 1911")
    return p


def _synth(args) -> int:
    from .synth import SynthConfig, generate_world, write_world

    out = args.out or Path("synthetic")
    kw = {}
    if args.config is not None:
        cfg = load_config(args.config)
        kw["seed"] = cfg.seed
        if cfg.locations:
            kw["targets"] = tuple((t.name, t.lon, t.lat) for t in cfg.locations)
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.years < 10 or args.sites < 3:
        raise ConfigError("synth needs at least 10 years and 3 sites per year")
    scfg = SynthConfig(n_sites=args.sites, n_years=args.years, first_year=1911 - args.years + 1, **kw)
    write_world(generate_world(scfg), scfg, out)
    locs = "\n".join(f"  - {{name: {n}, lon: {lo}, lat: {la}}}" for n, lo, la in scfg.targets)
    (Path(out) / "config.yaml").write_text(SYNTH_CONFIG.format(
        version=SCHEMA_VERSION, first=scfg.first_year, last=1911, seed=scfg.seed, locations=locs,
        vfirst=1911 - scfg.station_years + 1), encoding="utf-8")
    print(f"wrote synthetic data and config.yaml to {out}")
    return EXIT_OK


def _dispatch(args) -> int:
    from . import pipeline as pl

    if args.command == "synth":
        return _synth(args)
    if args.config is None:
        raise ConfigError("--config is required")
    cfg = pl.with_overrides(load_config(args.config), args.seed, args.out, args.threads)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    names = [args.location] if getattr(args, "location", None) else [t.name for t in cfg.locations]
    if args.command == "variogram":
        pl.cmd_variogram(cfg)
    elif args.command == "krige":
        pl.cmd_krige(cfg, args.year, args.location)
    elif args.command in ("qmap", "prior", "assimilate"):
        if not names:
            raise ConfigError("no locations configured")
        stage = getattr(pl, f"cmd_{args.command}")
        for name in names:
            stage(cfg, name)
    elif args.command == "validate":
        pl.cmd_validate(cfg)
    elif args.command == "run":
        pl.run_all(cfg)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    warnings.simplefilter("default")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EstimationError, CalibrationError, DomainError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
