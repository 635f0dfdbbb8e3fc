"""Command-line driver: simulate, fit, predict, cv, score, cov and cf.

Data files are long-format CSV with header ``loc_id,x[,y],dim,value``
(dimensions 1-based; extra columns are per-location covariates; an empty
or ``NA`` value marks a missing observation).  Configs and parameter
files are JSON.  Every command writes its outputs plus ``manifest.json``
into ``--out``.

Exit status is 0 on success, 2 for invalid input and 3 for numerical
failures.
"""

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .dists import gaussian_crps
from .inference import DivergenceError, FitConfig, Observations, SpdeSystem, fit
from .mesh import MeshError, assemble_fem, grid_mesh, interval_mesh, load_mesh
from .model import VARIANTS, ModelParams, n_pairs
from .predict import kriging, loo_cv, make_targets
from .simulate import cross_covariance, marginal_density_via_cf, simulate_field, simulate_observations
from .sparse import CholeskyError

log = logging.getLogger("typeg")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

CONFIG_SCHEMA = {
    "seed": int,
    "threads": int,
    "mass": str,
    "mesh": dict,
    "params": (dict, str),
    "fit": dict,
    "simulate": dict,
    "predict": dict,
    "cv": dict,
    "cov": dict,
    "cf": dict,
}
SECTION_KEYS = {
    "mesh": {"file", "interval", "grid"},
    "fit": {f.name for f in fields(FitConfig)} | {"variant"},
    "simulate": {"n_locations", "locations", "missing_fraction"},
    "predict": {"n_samples", "burn_in", "median"},
    "cv": {"n_samples", "burn_in"},
    "cov": {"h_max", "n_points", "method"},
    "cf": {"dims", "grid", "n_freq"},
}


class ConfigError(ValueError):
    """Invalid configuration or input file."""


# ---------------------------------------------------------------------------
# configuration


def validate_config(doc):
    """Check a RunConfig document; unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for key, value in doc.items():
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        if not isinstance(value, CONFIG_SCHEMA[key]):
            raise ConfigError(f"config key {key!r} has the wrong type")
        if key in SECTION_KEYS:
            bad = set(value) - SECTION_KEYS[key]
            if bad:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(bad)}")
    if isinstance(doc.get("params"), str) and doc["params"] != "auto":
        raise ConfigError("params must be an object or 'auto'")
    if doc.get("mass", "lumped") not in ("lumped", "diagonal_consistent"):
        raise ConfigError("mass must be 'lumped' or 'diagonal_consistent'")
    if "fit" in doc:
        f = {k: v for k, v in doc["fit"].items() if k != "variant"}
        try:
            FitConfig(**f)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid fit section: {exc}") from exc
        if doc["fit"].get("variant", "gaussian") not in VARIANTS:
            raise ConfigError(f"fit.variant must be one of {VARIANTS}")
    if isinstance(doc.get("params"), dict):
        try:
            ModelParams.from_dict(doc["params"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid params: {exc}") from exc
    return doc


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate_config(doc)


def load_params(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read parameters {path}: {exc}") from exc
    try:
        return ModelParams.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid parameters in {path}: {exc}") from exc


def resolve_seed(args, config):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("TYPEG_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError("TYPEG_SEED must be an integer") from exc
    return int(config.get("seed", 0))


def resolve_mesh(args, config):
    spec = dict(config.get("mesh", {}))
    if getattr(args, "mesh", None):
        spec = {"file": args.mesh}
    if getattr(args, "mesh_interval", None):
        spec = {"interval": args.mesh_interval}
    if getattr(args, "mesh_grid", None):
        spec = {"grid": args.mesh_grid}
    if len(spec) != 1:
        raise ConfigError("give exactly one mesh source (--mesh, --mesh-interval or --mesh-grid)")
    try:
        if "file" in spec:
            return load_mesh(spec["file"])
        if "interval" in spec:
            a, b, n = spec["interval"]
            return interval_mesh(float(a), float(b), int(n))
        x0, x1, y0, y1, nx, ny = spec["grid"]
        return grid_mesh(float(x0), float(x1), float(y0), float(y1), int(nx), int(ny))
    except (OSError, TypeError) as exc:
        raise ConfigError(f"cannot build mesh: {exc}") from exc


# ---------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    """Observations grouped by location.

    ``values`` has one row per location and one column per dimension;
    ``mask`` is true where a value is observed.
    """

    loc_ids: list
    locations: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    covariates: np.ndarray
    covariate_names: list

    @property
    def p(self):
        return self.values.shape[1]

    @property
    def d(self):
        return self.locations.shape[1]

    def long_rows(self):
        """(location index, 0-based dim) of every observed value."""
        li, di = np.nonzero(self.mask)
        return li, di

    def to_observations(self, mesh, intercept=True):
        """Observations and a location-group id per row."""
        li, di = self.long_rows()
        cov = self.covariates[li] if self.covariates.shape[1] else None
        obs = Observations.from_points(mesh, self.locations[li], di, self.values[li, di], self.p,
                                       covariates=cov, intercept=intercept)
        return obs, li


def _coord_columns(header):
    if header[:1] != ["loc_id"] or "dim" not in header or "value" not in header:
        raise ConfigError("data header must start with loc_id and contain dim and value")
    coords = header[1:header.index("dim")]
    if coords not in (["x"], ["x", "y"]):
        raise ConfigError("coordinate columns must be x or x,y")
    if header.index("value") != header.index("dim") + 1:
        raise ConfigError("value must follow dim")
    return coords, header[header.index("value") + 1:]


def _float(text, what, line):
    try:
        x = float(text)
    except ValueError as exc:
        raise ConfigError(f"line {line}: {what} is not a number") from exc
    if not np.isfinite(x):
        raise ConfigError(f"line {line}: {what} is not finite")
    return x


def ingest(path, p=None):
    """Read a long-format data CSV into a :class:`Dataset`.

    Parameters
    ----------
    path : str or Path
    p : int, optional
        Number of dimensions; inferred from the largest dim when omitted.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"cannot read data {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        coords, cov_names = _coord_columns(header)
        nc = len(coords)
        ids, where, recs = [], {}, []
        locs, covs = [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ConfigError(f"line {line}: expected {len(header)} fields")
            lid = row[0].strip()
            xy = [_float(row[1 + c], coords[c], line) for c in range(nc)]
            try:
                dim = int(row[1 + nc])
            except ValueError as exc:
                raise ConfigError(f"line {line}: dim must be an integer") from exc
            if dim < 1 or (p is not None and dim > p):
                raise ConfigError(f"line {line}: dim {dim} out of range")
            raw = row[2 + nc].strip()
            val = np.nan if raw in ("", "NA", "NaN", "nan") else _float(raw, "value", line)
            cv = [_float(c, "covariate", line) for c in row[3 + nc:]]
            if lid not in where:
                where[lid] = len(ids)
                ids.append(lid)
                locs.append(xy)
                covs.append(cv)
            k = where[lid]
            if locs[k] != xy:
                raise ConfigError(f"line {line}: location {lid} has inconsistent coordinates")
            if covs[k] != cv:
                raise ConfigError(f"line {line}: location {lid} has inconsistent covariates")
            recs.append((k, dim - 1, val, line))
    if not recs:
        raise ConfigError("data file has no rows")
    p = p or max(r[1] for r in recs) + 1
    values = np.full((len(ids), p), np.nan)
    seen = np.zeros((len(ids), p), dtype=bool)
    for k, j, val, line in recs:
        if seen[k, j]:
            raise ConfigError(f"line {line}: duplicate observation of dim {j + 1} at {ids[k]}")
        seen[k, j] = True
        values[k, j] = val
    mask = ~np.isnan(values)
    ds = Dataset(loc_ids=ids, locations=np.array(locs, dtype=np.float64), values=values, mask=mask,
                 covariates=np.array(covs, dtype=np.float64).reshape(len(ids), -1),
                 covariate_names=cov_names)
    log.info("read %d locations; observations per dimension: %s", len(ids), mask.sum(axis=0).tolist())
    return ds


def _fmt(x):
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_data(path, loc_ids, locations, dims, values):
    """Long-format data CSV (dims 0-based in, 1-based out)."""
    d = locations.shape[1]
    header = ["loc_id", "x", "y"][: 1 + d] + ["dim", "value"]
    rows = [[lid, *loc, int(k) + 1, "NA" if np.isnan(v) else float(v)]
            for lid, loc, k, v in zip(loc_ids, locations.tolist(), dims, values)]
    write_csv(path, header, rows)


def read_table(path, required):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path} has no rows")
    missing = set(required) - set(rows[0])
    if missing:
        raise ConfigError(f"{path} lacks columns {sorted(missing)}")
    return rows


def _targets(path, d):
    rows = read_table(path, ["x", "dim"] + (["y"] if d == 2 else []))
    coords = ["x", "y"][:d]
    try:
        locs = np.array([[float(r[c]) for c in coords] for r in rows])
        dims = np.array([int(r["dim"]) for r in rows]) - 1
    except ValueError as exc:
        raise ConfigError(f"bad number in {path}: {exc}") from exc
    return locs, dims


# ---------------------------------------------------------------------------
# commands


def auto_params(ds, d, variant):
    """Starting values from the data: range a quarter of the extent."""
    ext = float(np.max(np.ptp(ds.locations, axis=0))) or 1.0
    p = ds.p
    sd = np.array([np.nanstd(ds.values[:, k]) if ds.mask[:, k].sum() > 1 else 1.0 for k in range(p)])
    sd = np.where(sd > 0, sd, 1.0)
    q = 1 + ds.covariates.shape[1]
    beta = np.zeros(p * q)
    for k in range(p):
        beta[k * q] = np.nanmean(ds.values[:, k]) if ds.mask[:, k].any() else 0.0
    return ModelParams(p=p, d=d, kappa=np.full(p, 4.0 * np.sqrt(8.0) / ext), sigma=sd,
                       alpha=2.0 if d == 1 else 4.0, sigma_e=0.3 * sd, rho=np.zeros(n_pairs(p)),
                       mu=0.0, eta=1.0, beta=beta, variant=variant)


def cmd_simulate(args, config, seed, out):
    if not isinstance(config.get("params"), dict):
        raise ConfigError("simulate needs a params object in the config")
    params = ModelParams.from_dict(config["params"])
    sim = config.get("simulate", {})
    mesh = resolve_mesh(args, config)
    if mesh.dimension != params.d:
        raise ConfigError("mesh and parameter dimensions differ")
    n_loc = int(sim.get("n_locations", 50))
    miss = float(sim.get("missing_fraction", 0.0))
    if n_loc < 1 or not 0 <= miss < 1:
        raise ConfigError("need n_locations >= 1 and missing_fraction in [0, 1)")
    q = 1
    if params.beta.size not in (0, params.p * q):
        raise ConfigError("simulate supports intercept-only regression (beta of length p)")
    fem = assemble_fem(mesh, mass=config.get("mass", "lumped"))
    ss = np.random.SeedSequence(seed)
    field_ss, loc_ss, obs_ss = ss.spawn(3)
    sample = simulate_field(params, fem, np.random.default_rng(field_ss))
    rng = np.random.default_rng(loc_ss)
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    if "locations" in sim:
        locs = np.asarray(sim["locations"], dtype=np.float64).reshape(-1, mesh.dimension)
    else:
        locs = lo + (hi - lo) * rng.random((n_loc, mesh.dimension))
    L = locs.shape[0]
    dims = np.tile(np.arange(params.p), L)
    pts = np.repeat(locs, params.p, axis=0)
    ids = [f"s{i + 1}" for i in np.repeat(np.arange(L), params.p)]
    obs = Observations.from_points(mesh, pts, dims, np.zeros(L * params.p), params.p)
    y = simulate_observations(sample, obs, params, np.random.default_rng(obs_ss))
    if miss > 0:
        y[rng.random(y.shape[0]) < miss] = np.nan
    write_data(out / "data.csv", ids, pts, dims, y)
    n = fem.n
    header = ["node_id", "x", "y"][: 1 + mesh.dimension] + ["dim", "value"]
    rows = [[i, *mesh.nodes[i].tolist(), k + 1, float(sample.w[k * n + i])]
            for k in range(params.p) for i in range(n)]
    write_csv(out / "nodes.csv", header, rows)
    params.to_json(out / "params.json")
    return {"n_nodes": n, "n_locations": L}


def _fit_inputs(args, config):
    mesh = resolve_mesh(args, config)
    ds = ingest(args.data)
    if ds.d != mesh.dimension:
        raise ConfigError("data and mesh dimensions differ")
    return mesh, ds


def cmd_fit(args, config, seed, out):
    mesh, ds = _fit_inputs(args, config)
    fsec = dict(config.get("fit", {}))
    variant = fsec.pop("variant", None)
    fcfg = FitConfig(**{**fsec, "seed": seed})
    praw = config.get("params", "auto")
    if praw == "auto":
        init = auto_params(ds, mesh.dimension, variant or "gaussian")
    else:
        init = ModelParams.from_dict(praw)
        if variant:
            init = init.replace(variant=variant)
    if init.p != ds.p or init.d != mesh.dimension:
        raise ConfigError("initial parameters do not match the data")
    fem = assemble_fem(mesh, mass=config.get("mass", "lumped"))
    obs, _ = ds.to_observations(mesh)
    if init.beta.size == 0:
        init = init.replace(beta=np.zeros(obs.B.shape[1]))
    system = SpdeSystem(fem, obs, alpha=init.alpha)
    res = fit(system, init, fcfg)
    res.params.to_json(out / "params.json")
    rows = []
    for i in range(1, res.trace.shape[0]):
        for name, val in zip(res.names, res.trace[i]):
            rows.append([i, name, float(val), float(res.steps[i - 1])])
    write_csv(out / "trace.csv", ["iteration", "parameter", "value", "step"], rows)
    return {"n_iterations": fcfg.n_iterations, "variant": init.variant}


def cmd_predict(args, config, seed, out):
    params = load_params(args.params)
    mesh, ds = _fit_inputs(args, config)
    locs, dims = _targets(args.targets, mesh.dimension)
    psec = config.get("predict", {})
    n_samples = int(psec.get("n_samples", 100))
    median = psec.get("median", "draws")
    if ds.covariates.shape[1]:
        raise ConfigError("prediction with covariates needs target covariates; not supported by the CLI")
    if np.any(dims < 0) or np.any(dims >= params.p):
        raise ConfigError("target dim out of range")
    if median not in ("draws", "means"):
        raise ConfigError("predict.median must be 'draws' or 'means'")
    fem = assemble_fem(mesh, mass=config.get("mass", "lumped"))
    obs, _ = ds.to_observations(mesh)
    system = SpdeSystem(fem, obs, alpha=params.alpha)
    targets = make_targets(mesh, locs, dims, params.p)
    res = kriging(system, params, targets, n_samples, np.random.default_rng(seed),
                  burn_in=int(psec.get("burn_in", 20)), median=median)
    header = ["x", "y"][: mesh.dimension] + ["dim", "mean", "var_total", "var_within", "median", "sigma_e"]
    rows = [[*locs[t].tolist(), int(dims[t]) + 1, res.mean[t], res.var_total[t], res.var_within[t],
             res.median[t], float(params.sigma_e[dims[t]])] for t in range(locs.shape[0])]
    write_csv(out / "predictions.csv", header, rows)
    return {"n_targets": int(locs.shape[0]), "n_samples": res.n_samples}


def cmd_cv(args, config, seed, out):
    models = {}
    for item in args.params_list:
        # NAME=path labels a model explicitly; otherwise the file stem is used
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        if name in models:
            raise ConfigError(f"duplicate model name {name!r}")
        models[name] = load_params(path)
    mesh, ds = _fit_inputs(args, config)
    csec = config.get("cv", {})
    for m in models.values():
        if m.p != ds.p or m.d != mesh.dimension:
            raise ConfigError("model parameters do not match the data")
    fem = assemble_fem(mesh, mass=config.get("mass", "lumped"))
    obs, groups = ds.to_observations(mesh)
    alpha = np.max([m.alpha for m in models.values()], axis=0)
    system = SpdeSystem(fem, obs, alpha=alpha)
    table, details = loo_cv(system, models, int(csec.get("n_samples", 50)), seed=seed, groups=groups,
                            burn_in=int(csec.get("burn_in", 20)), threads=args.threads)
    write_csv(out / "cv.csv", ["model", "dim", "mae", "crps", "n"],
              [[r["model"], r["dim"], r["mae"], r["crps"], r["n"]] for r in table])
    rows = []
    for name, (pred, crps) in details.items():
        for j in range(obs.m):
            rows.append([name, ds.loc_ids[groups[j]], int(obs.dim[j]) + 1, float(obs.y[j]),
                         float(pred[j]), float(crps[j])])
    write_csv(out / "cv_details.csv", ["model", "loc_id", "dim", "value", "prediction", "crps"], rows)
    return {"models": list(models), "n_locations": len(ds.loc_ids)}


def cmd_score(args, config, seed, out):
    pred = read_table(args.pred, ["dim", "mean", "var_total"])
    truth = read_table(args.truth, ["dim", "value"])
    coords = [c for c in ("x", "y") if c in pred[0]]

    def key(r):
        return tuple(round(float(r[c]), 9) for c in coords) + (int(r["dim"]),)

    try:
        tmap = {key(r): float(r["value"]) for r in truth if r["value"] not in ("", "NA")}
        per_dim = {}
        for r in pred:
            k = key(r)
            if k not in tmap:
                continue
            m, v = float(r["mean"]), float(r["var_total"])
            if "sigma_e" in r and r["sigma_e"]:
                v += float(r["sigma_e"]) ** 2
            per_dim.setdefault(k[-1], []).append((abs(m - tmap[k]), float(gaussian_crps(tmap[k], m, np.sqrt(v)))))
    except ValueError as exc:
        raise ConfigError(f"bad number in score inputs: {exc}") from exc
    if not per_dim:
        raise ConfigError("no prediction rows match the truth file")
    rows = []
    for k in sorted(per_dim):
        a = np.array(per_dim[k])
        rows.append([k, float(np.median(a[:, 0])), float(np.median(a[:, 1])), a.shape[0]])
    write_csv(out / "score.csv", ["dim", "mae", "crps", "n"], rows)
    return {"n_matched": int(sum(len(v) for v in per_dim.values()))}


def cmd_cov(args, config, seed, out):
    params = load_params(args.params)
    sec = config.get("cov", {})
    h_max = float(args.h_max if args.h_max is not None else sec.get("h_max", 4.0 / float(np.min(params.kappa))))
    n_pts = int(args.n_points if args.n_points is not None else sec.get("n_points", 101))
    if not h_max > 0 or n_pts < 2:
        raise ConfigError("need h_max > 0 and n_points >= 2")
    h = np.linspace(0.0, h_max, n_pts)
    rows = []
    for i in range(params.p):
        for j in range(i, params.p):
            c = cross_covariance(params, h, i, j, method=sec.get("method", "auto"))
            rows += [[float(a), i + 1, j + 1, float(b)] for a, b in zip(h, c)]
    write_csv(out / "cov.csv", ["h", "i", "j", "value"], rows)
    return {"n_points": n_pts}


def cmd_cf(args, config, seed, out):
    params = load_params(args.params)
    if params.variant != "G4":
        raise ConfigError("the characteristic-function density needs a G4 parameter file")
    sec = config.get("cf", {})
    dims = args.dims or sec.get("dims", [1])
    lo, hi, n = args.grid or sec.get("grid", [-4.0, 4.0, 81])
    dims = [int(k) - 1 for k in dims]
    if len(dims) not in (1, 2) or any(not 0 <= k < params.p for k in dims):
        raise ConfigError("dims must be one or two valid 1-based dimensions")
    g = np.linspace(float(lo), float(hi), int(n))
    nf = int(sec.get("n_freq", 256))
    if len(dims) == 1:
        f = marginal_density_via_cf(params, dims[0], g, n_freq=nf)
        write_csv(out / "cf_density.csv", ["x", "density"], [[float(a), float(b)] for a, b in zip(g, f)])
    else:
        f = marginal_density_via_cf(params, tuple(dims), (g, g), n_freq=nf)
        rows = [[float(g[a]), float(g[b]), float(f[a, b])] for a in range(g.size) for b in range(g.size)]
        write_csv(out / "cf_density.csv", ["x", "y", "density"], rows)
    return {"dims": [k + 1 for k in dims]}


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict, "cv": cmd_cv,
            "score": cmd_score, "cov": cmd_cov, "cf": cmd_cf}


def build_parser():
    parser = argparse.ArgumentParser(prog="typeg", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, mesh=False, data=False):
        sp.add_argument("--config", help="RunConfig JSON")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1)
        if mesh:
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--mesh", help="mesh file")
            g.add_argument("--mesh-interval", nargs=3, type=float, metavar=("A", "B", "N"))
            g.add_argument("--mesh-grid", nargs=6, type=float, metavar=("X0", "X1", "Y0", "Y1", "NX", "NY"))
        if data:
            sp.add_argument("--data", required=True, help="long-format data CSV")

    common(sub.add_parser("simulate", help="simulate a field and observations"), mesh=True)
    common(sub.add_parser("fit", help="stochastic-gradient maximum likelihood"), mesh=True, data=True)
    sp = sub.add_parser("predict", help="kriging at target locations")
    common(sp, mesh=True, data=True)
    sp.add_argument("--params", required=True)
    sp.add_argument("--targets", required=True, help="CSV with x[,y],dim")
    sp = sub.add_parser("cv", help="leave-one-location-out cross-validation")
    common(sp, mesh=True, data=True)
    sp.add_argument("--params-list", nargs="+", required=True, metavar="[NAME=]PATH")
    sp = sub.add_parser("score", help="MAE and Gaussian CRPS of predictions")
    common(sp)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp = sub.add_parser("cov", help="cross-covariance curves")
    common(sp)
    sp.add_argument("--params", required=True)
    sp.add_argument("--h-max", type=float, default=None)
    sp.add_argument("--n-points", type=int, default=None)
    sp = sub.add_parser("cf", help="G4 marginal density by CF inversion")
    common(sp)
    sp.add_argument("--params", required=True)
    sp.add_argument("--dims", nargs="+", type=int, default=None)
    sp.add_argument("--grid", nargs=3, type=float, default=None, metavar=("LO", "HI", "N"))
    return parser


def _mesh_args(args):
    for name in ("mesh_interval", "mesh_grid"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(args, name, [int(x) if i >= (2 if name == "mesh_interval" else 4) else x
                                 for i, x in enumerate(v)])


def run(argv=None):
    """Parse ``argv``, execute one command and return the exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        config = load_config(args.config)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        seed = resolve_seed(args, config)
        _mesh_args(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        info = COMMANDS[args.command](args, config, seed, out)
    except (CholeskyError, DivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        # LinAlgError derives from ValueError, so this clause must come first
        print(f"typeg {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, MeshError, ValueError, KeyError, TypeError) as exc:
        print(f"typeg {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    manifest = {
        "command": args.command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "config": config,
        "seed": seed,
        "threads": args.threads,
        "version": __version__,
        "mass": config.get("mass", "lumped"),
        "wall_time_s": time.perf_counter() - t0,
        "result": info,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")
    return EXIT_OK


def main():
    sys.exit(run())
