"""Pipeline stages: each reads declared inputs, writes declared outputs and a
manifest naming the config hash, seed and output checksums."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .assimilate import assimilate_series
from .config import PipelineConfig, dump_json
from .errors import DataError
from .ingest import (
    ProxyTable,
    monthly_to_annual,
    nearest_cell,
    parse_ghcn_csv,
    parse_lme_csv,
    parse_proxy_csv,
    pearson_correlation,
    read_table,
)
from .prior.model import EnsembleMatrix, PriorModel, cross_validate, fit_prior
from .qmap import CalibratedSeries, CalibrationMap, calibrate_series, qmap
from .spatial.censoring import CensoredCovariance, bias_correct
from .spatial.covariance import CovarianceParams
from .spatial.kriging import CensoredKriger
from .spatial.variogram import empirical_variogram, variogram_model, wls_fit_variogram

log = logging.getLogger(__name__)


class MissingArtifact(DataError):
    """An upstream output needed by this stage has not been produced yet."""


def _artifact(cfg: PipelineConfig, name: str, producer: str) -> Path:
    path = cfg.output_dir / name
    if not path.exists():
        raise MissingArtifact(f"{path} not found; run `paleorecon {producer}` with this config first")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: PipelineConfig, command: str, outputs: list, params: dict, tag: str = "") -> Path:
    name = f"manifest_{command}{'_' + tag if tag else ''}.json"
    body = {
        "command": command,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "version": __version__,
        "parameters": params,
        "outputs": {p.name: _sha256(p) for p in sorted(outputs)},
    }
    path = cfg.output_dir / name
    path.write_text(dump_json(body), encoding="utf-8")
    return path


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, str):
        return v
    v = float(v)
    return repr(v) if np.isfinite(v) else ("nan" if np.isnan(v) else ("inf" if v > 0 else "-inf"))


def _plot(cfg, fn, *args, **kwargs):
    if not cfg.plots:
        return None
    from . import plots
    return getattr(plots, fn)(*args, **kwargs)


def load_proxies(cfg: PipelineConfig) -> ProxyTable:
    path = cfg.require("reaches")
    table = parse_proxy_csv(path)
    for r in table.rejects:
        print(r.format(str(path)), file=sys.stderr)
    keep = (table.years >= cfg.years[0]) & (table.years <= cfg.years[1])
    return ProxyTable(table.years[keep], table.lat[keep], table.lon[keep], table.index[keep])


def load_fit(cfg: PipelineConfig):
    path = _artifact(cfg, "variogram.json", "variogram")
    data = json.loads(path.read_text(encoding="utf-8"))
    return CovarianceParams(**data["initial"]), CovarianceParams(**data["corrected"])


# ---------------------------------------------------------------------------
# stages


def cmd_variogram(cfg: PipelineConfig) -> list:
    table = load_proxies(cfg)
    if len(table) == 0:
        raise DataError("no proxy records inside the configured year span")
    ev = empirical_variogram(table.years, table.lon, table.lat, table.index, cfg.bin_edges)
    initial = wls_fit_variogram(ev)
    fit = bias_correct(initial, cfg.mc)
    out = cfg.output_dir
    body = {
        "initial": initial.as_dict(),
        "corrected": fit.corrected.as_dict(),
        "bins": ev.as_dict(),
        "monte_carlo": cfg.mc.as_dict(),
        "seed": cfg.seed,
        "n_records": len(table),
        "years": list(cfg.years),
        "calibration_tables": {f.name: f.as_dict() for f in (fit.f1, fit.f2, fit.f3)},
    }
    outputs = [out / "variogram.json"]
    outputs[0].write_text(dump_json(body), encoding="utf-8")

    # tidy table of the binned values next to both model curves on the index scale
    c = fit.corrected
    cov = CensoredCovariance(c.var_y, c.var_eps, cfg.mc)
    lags, gamma, counts = ev.lags, ev.gamma, ev.counts
    safe = np.where(np.isfinite(lags), lags, 0.0)
    implied = cov.var_z - cov.cov_z(safe, c.range_alpha)
    rows = [(lo, hi, lag, g, n, variogram_model(initial, l0), imp)
            for lo, hi, lag, g, n, l0, imp in zip(ev.bin_edges[:-1], ev.bin_edges[1:], lags, gamma,
                                                    counts, safe, implied)]
    outputs.append(_write_csv(out / "variogram_bins.csv",
                              ["bin_lo", "bin_hi", "lag", "gamma", "count", "initial_model",
                               "corrected_implied"], rows))
    h = np.linspace(cfg.bin_edges[0] + 1e-9, cfg.bin_edges[-1], 300)
    svg = _plot(cfg, "variogram_figure", out / "variogram.svg", lags, gamma, h,
                {"naive fit": variogram_model(initial, h),
                 "implied by corrected": cov.var_z - cov.cov_z(h, c.range_alpha)})
    if svg:
        outputs.append(svg)
    write_manifest(cfg, "variogram", outputs,
                   {"initial": initial.as_dict(), "corrected": c.as_dict(), "monte_carlo": cfg.mc.as_dict()})
    return outputs


def _krige_years(cfg, kriger, table, years, t_lon, t_lat):
    groups = {int(y): np.nonzero(table.years == y)[0] for y in np.unique(table.years)}

    def one(y):
        idx = groups.get(int(y), np.zeros(0, dtype=int))
        est, mspe, jitter = kriger.predict(table.lon[idx], table.lat[idx], table.index[idx], t_lon, t_lat)
        return est, mspe, jitter, len(idx)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            return list(ex.map(one, years))
    return [one(y) for y in years]


def cmd_krige(cfg: PipelineConfig, year: int | None = None, location: str | None = None) -> list:
    """Grid surface for one year, or per-location series over the year span."""
    _, corrected = load_fit(cfg)
    table = load_proxies(cfg)
    kriger = CensoredKriger(corrected, cfg.mc)
    if kriger.warning:
        log.warning(kriger.warning)
    out = cfg.output_dir
    if year is not None:
        if not cfg.years[0] <= year <= cfg.years[1]:
            raise DataError(f"year {year} lies outside the configured span {cfg.years}")
        lon, lat = np.meshgrid(cfg.grid_lon, cfg.grid_lat)
        est, mspe, jitter, n = _krige_years(cfg, kriger, table, [year], lon.ravel(), lat.ravel())[0]
        path = _write_csv(out / f"kriged_{year}.csv", ["lat", "lon", "estimate", "mspe"],
                          zip(lat.ravel(), lon.ravel(), est, mspe))
        write_manifest(cfg, "krige", [path], {"year": year, "n_sites": n, "jitter": jitter,
                                              "params": corrected.as_dict()}, tag=str(year))
        return [path]
    targets = [cfg.location(location)] if location else cfg.locations
    if not targets:
        raise DataError("no locations configured")
    years = np.arange(cfg.years[0], cfg.years[1] + 1)
    t_lon = np.array([t.lon for t in targets])
    t_lat = np.array([t.lat for t in targets])
    results = _krige_years(cfg, kriger, table, years, t_lon, t_lat)
    outputs = []
    for k, t in enumerate(targets):
        rows = [(y, r[0][k], r[1][k], r[3]) for y, r in zip(years, results)]
        path = _write_csv(out / f"kriged_{t.name}.csv", ["year", "estimate", "mspe", "n_sites"], rows)
        outputs.append(path)
        write_manifest(cfg, "krige", [path], {"location": t.name, "params": corrected.as_dict(),
                                              "max_jitter": max(r[2] for r in results)}, tag=t.name)
    return outputs


def _lme_cell(cfg, t):
    grid = parse_lme_csv(cfg.require("lme"))
    cell = nearest_cell(grid, t.loc)
    keep = (cell.years >= cfg.years[0]) & (cell.years <= cfg.years[1])
    if not keep.any():
        raise DataError(f"ensemble file has no years inside {cfg.years}")
    return cell.years[keep], cell.temp[keep], cell.members


def cmd_qmap(cfg: PipelineConfig, location: str) -> list:
    t = cfg.location(location)
    kriged = read_table(_artifact(cfg, f"kriged_{t.name}.csv", "krige"),
                        ["year", "estimate", "mspe", "n_sites"])
    seen = kriged["n_sites"] > 0
    if seen.sum() < 2:
        raise DataError(f"{t.name}: fewer than two years with proxy records")
    _, temp, _ = _lme_cell(cfg, t)
    target = temp.mean(axis=1) if cfg.qmap_target == "mean" else temp.ravel()
    years = kriged["year"][seen].astype(int)
    series, cmap = calibrate_series(years, kriged["estimate"][seen], kriged["mspe"][seen], target,
                                    ceiling=cfg.err_var_ceiling)
    out = cfg.output_dir
    outputs = [_write_csv(out / f"calibrated_{t.name}.csv", ["year", "x_star", "err_var"],
                          zip(series.years, series.values, series.err_var))]
    body = {"location": t.name, **cmap.as_dict(), "target_sample": cfg.qmap_target,
            "n_observed": int(seen.sum()),
            "clamped_years": series.years[series.clamped].tolist(),
            "capped_years": series.years[series.capped].tolist(),
            "err_var_ceiling": cfg.err_var_ceiling}
    outputs.append(out / f"calibration_{t.name}.json")
    outputs[-1].write_text(dump_json(body), encoding="utf-8")
    y = np.linspace(cmap.source.mean - 4 * cmap.source.sd, cmap.source.mean + 4 * cmap.source.sd, 201)
    outputs.append(_write_csv(out / f"calibration_curve_{t.name}.csv", ["index", "temp_c"], zip(y, qmap(cmap, y))))
    svg = _plot(cfg, "calibration_figure", out / f"calibration_{t.name}.svg", y, qmap(cmap, y))
    if svg:
        outputs.append(svg)
    write_manifest(cfg, "qmap", outputs, {"location": t.name, **cmap.as_dict()}, tag=t.name)
    return outputs


def cmd_prior(cfg: PipelineConfig, location: str) -> list:
    t = cfg.location(location)
    years, temp, members = _lme_cell(cfg, t)
    X = EnsembleMatrix(years, temp, members)
    report = cross_validate(X, cfg.cv_grid, max_sweeps=cfg.max_sweeps, workers=cfg.threads)
    model, trace = fit_prior(X, report.best, max_sweeps=cfg.max_sweeps, return_trace=True)
    model.check()
    out = cfg.output_dir
    body = {"location": t.name, **model.as_dict(),
            "lambda": dict(zip(("lambda1", "lambda2", "lambda3"), report.best.as_tuple())),
            "cv": report.as_rows(), "converged": trace.converged, "sweeps": len(trace.objectives) - 1,
            "members": list(members)}
    outputs = [out / f"prior_{t.name}.json"]
    outputs[0].write_text(dump_json(body), encoding="utf-8")
    svg = _plot(cfg, "prior_figure", out / f"prior_{t.name}.svg", model.years, model.mu, model.m)
    if svg:
        outputs.append(svg)
    write_manifest(cfg, "prior", outputs, {"location": t.name, "lambda": body["lambda"]}, tag=t.name)
    return outputs


def load_prior(cfg, name) -> PriorModel:
    path = _artifact(cfg, f"prior_{name}.json", "prior")
    return PriorModel.from_dict(json.loads(path.read_text(encoding="utf-8")))


def load_calibrated(cfg, name) -> CalibratedSeries:
    path = _artifact(cfg, f"calibrated_{name}.csv", "qmap")
    t = read_table(path, ["year", "x_star", "err_var"])
    return CalibratedSeries(t["year"].astype(int), t["x_star"], t["err_var"])


def cmd_assimilate(cfg: PipelineConfig, location: str) -> list:
    t = cfg.location(location)
    prior = load_prior(cfg, t.name)
    obs = load_calibrated(cfg, t.name)
    post = assimilate_series(prior, obs)
    out = cfg.output_dir
    outputs = [_write_csv(out / f"posterior_{t.name}.csv", ["year", "mean", "var", "k_gain"],
                          zip(post.years, post.mean, post.var, post.meta["gain"]))]
    svg = _plot(cfg, "series_figure", out / f"posterior_{t.name}.svg", post.years, post.mean,
                sd=np.sqrt(post.var), points=(obs.years, obs.values), reference=prior.mu)
    if svg:
        outputs.append(svg)
    write_manifest(cfg, "assimilate", outputs, {"location": t.name, "n_observed": post.meta["n_observed"]},
                   tag=t.name)
    return outputs


def validation_table(cfg: PipelineConfig) -> list:
    """Correlations with station annual means for the three reconstructions."""
    annual = monthly_to_annual(parse_ghcn_csv(cfg.require("ghcn")), cfg.min_months)
    rows = []
    for t in cfg.locations:
        station = annual.get(t.station_id)
        if station is None or len(station.years) < 3:
            log.warning("no usable station series %r for %s; skipped", t.station_id, t.name)
            continue
        s_years, s_temp = station.years, station.annual_temp
        if cfg.validate_years is not None:
            keep = (s_years >= cfg.validate_years[0]) & (s_years <= cfg.validate_years[1])
            s_years, s_temp = s_years[keep], s_temp[keep]
        cal = load_calibrated(cfg, t.name)
        post = read_table(_artifact(cfg, f"posterior_{t.name}.csv", "assimilate"), ["year", "mean"])
        e_years, temp, _ = _lme_cell(cfg, t)
        series = {"calibrated": (cal.years, cal.values),
                  "ensemble": (e_years, temp.mean(axis=1)),
                  "assimilated": (post["year"].astype(int), post["mean"])}
        for method, (yrs, vals) in series.items():
            n = len(np.intersect1d(yrs, s_years))
            r = pearson_correlation(vals, s_temp, yrs, s_years) if n >= 3 else float("nan")
            rows.append((t.name, method, r, n))
    if not rows:
        raise DataError("no location has a usable station series")
    return rows


def cmd_validate(cfg: PipelineConfig) -> list:
    rows = validation_table(cfg)
    out = cfg.output_dir
    outputs = [_write_csv(out / "validation.csv", ["location", "method", "correlation", "n_years"], rows)]
    locs = list(dict.fromkeys(r[0] for r in rows))
    table = {m: [next(r[2] for r in rows if r[0] == loc and r[1] == m) for loc in locs]
             for m in ("calibrated", "ensemble", "assimilated")}
    svg = _plot(cfg, "correlation_figure", out / "validation.svg", locs, table)
    if svg:
        outputs.append(svg)
    write_manifest(cfg, "validate", outputs, {"min_months": cfg.min_months,
                                              "years": None if cfg.validate_years is None else list(cfg.validate_years)})
    return outputs


def run_all(cfg: PipelineConfig) -> None:
    """Every stage in order for every configured location."""
    cmd_variogram(cfg)
    cmd_krige(cfg)
    for t in cfg.locations:
        cmd_qmap(cfg, t.name)
        cmd_prior(cfg, t.name)
        cmd_assimilate(cfg, t.name)
    cmd_validate(cfg)


def with_overrides(cfg: PipelineConfig, seed=None, out=None, threads=None) -> PipelineConfig:
    changes = {}
    if seed is not None:
        changes["seed"] = int(seed)
        changes["mc"] = replace(cfg.mc, seed=int(seed))
    if out is not None:
        changes["output_dir"] = Path(out).resolve()
    if threads is not None:
        changes["threads"] = int(threads)
    return replace(cfg, **changes) if changes else cfg
