"""Kriging, CRPS estimators and leave-one-out cross-validation.

Predictions average the conditional Gaussian laws of w given (y, v) over
Gibbs draws of v.  The predictive variance is the law of total variance:
the average conditional variance (``var_within``) plus the variance of
the conditional means (``var_between``).
"""

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dists import folded_normal_mean
from .inference import Observations, condition, gibbs_step, init_state, _mean_state

__all__ = [
    "PredictionResult",
    "make_targets",
    "kriging",
    "crps_mc",
    "crps_rb",
    "loo_cv",
    "score_table",
]


@dataclass
class PredictionResult:
    """Predictive summaries per target.

    ``cond_means`` and ``cond_vars`` hold the per-draw conditional moments
    (shape (N, T)) on the latent scale; add σ_e² to the variances for the
    observation scale.
    """

    mean: np.ndarray
    var_total: np.ndarray
    var_within: np.ndarray
    var_between: np.ndarray
    median: np.ndarray
    dims: np.ndarray
    cond_means: np.ndarray
    cond_vars: np.ndarray
    n_samples: int
    seed: object = None
    meta: dict = field(default_factory=dict)


def make_targets(mesh, locations, dims, p, covariates=None, intercept=True):
    """Prediction targets as an :class:`Observations` with zero values."""
    locations = np.asarray(locations, dtype=np.float64)
    m = locations.shape[0]
    return Observations.from_points(mesh, locations, dims, np.zeros(m), p,
                                    covariates=covariates, intercept=intercept)


def kriging(system, params, targets, n_samples, rng, burn_in=20, median="draws", seed=None):
    """Monte Carlo kriging at ``targets``.

    Parameters
    ----------
    system : SpdeSystem
        Data and mesh.
    params : ModelParams
    targets : Observations
        Rows of A (and B) for the prediction locations; values ignored.
    n_samples : int
        Gibbs draws of v to average over (ignored for the Gaussian
        variant, whose prediction is exact).
    median : {"draws", "means"}
        Sample median of predictive draws (one Gaussian draw per Gibbs
        sample) or of the conditional means.

    Returns
    -------
    PredictionResult
        Latent-plus-regression scale (measurement noise not included).
    """
    if median not in ("draws", "means"):
        raise ValueError("median must be 'draws' or 'means'")
    beta = params.beta if params.beta.size else np.zeros(targets.B.shape[1])
    offset = targets.B @ beta
    At = targets.A
    if params.variant == "gaussian":
        cond = condition(system, params, _mean_state(params, system.h))
        m = offset + At @ cond.xi_hat
        var = cond.factor.selected_inverse().row_quadratic(At)
        return PredictionResult(mean=m, var_total=var, var_within=var, var_between=np.zeros_like(var),
                                median=m.copy(), dims=targets.dim, cond_means=m[None, :],
                                cond_vars=var[None, :], n_samples=1, seed=seed)
    if n_samples < 1:
        raise ValueError("need at least one sample")
    state = init_state(system, params, rng, from_prior=False)
    for _ in range(burn_in):
        state = gibbs_step(state, system, params, rng)
    means = np.empty((n_samples, targets.m))
    vars_ = np.empty((n_samples, targets.m))
    for i in range(n_samples):
        state = gibbs_step(state, system, params, rng)
        cond = state.cond
        means[i] = offset + At @ cond.xi_hat
        vars_[i] = cond.factor.selected_inverse().row_quadratic(At)
    within = vars_.mean(axis=0)
    between = means.var(axis=0)
    if median == "draws":
        draws = means + np.sqrt(np.maximum(vars_, 0.0)) * rng.standard_normal(means.shape)
        med = np.median(draws, axis=0)
    else:
        med = np.median(means, axis=0)
    return PredictionResult(mean=means.mean(axis=0), var_total=within + between, var_within=within,
                            var_between=between, median=med, dims=targets.dim, cond_means=means,
                            cond_vars=vars_, n_samples=n_samples, seed=seed)


def crps_mc(draws1, draws2, y):
    """CRPS estimate from paired independent predictive draws.

    (1/N) Σ |Y1 - y| - (1/2N) Σ |Y1 - Y2|.
    """
    d1 = np.asarray(draws1, dtype=np.float64)
    d2 = np.asarray(draws2, dtype=np.float64)
    if d1.shape[0] < 1 or d1.shape != d2.shape:
        raise ValueError("need N >= 1 pairs of draws with matching shapes")
    return np.mean(np.abs(d1 - y), axis=0) - 0.5 * np.mean(np.abs(d1 - d2), axis=0)


def crps_rb(m1, s1, m2, s2, y):
    """Rao-Blackwellised CRPS from paired conditional Gaussian moments.

    (1/N) Σ [M(m1 - y, s1) - ½ M(m1 - m2, s1 + s2)] with M the folded
    normal mean and s1, s2 conditional variances.
    """
    m1, s1, m2, s2 = (np.asarray(a, dtype=np.float64) for a in (m1, s1, m2, s2))
    if m1.shape[0] < 1 or not (m1.shape == s1.shape == m2.shape == s2.shape):
        raise ValueError("need N >= 1 moment pairs with matching shapes")
    if np.any(s1 < 0) or np.any(s2 < 0):
        raise ValueError("conditional variances must be non-negative")
    return np.mean(folded_normal_mean(m1 - y, s1) - 0.5 * folded_normal_mean(m1 - m2, s1 + s2), axis=0)


def _crps_from_result(res, y, sigma_e2, rng):
    N = res.cond_means.shape[0]
    s = res.cond_vars + sigma_e2[None, :]
    if N == 1:
        return crps_rb(res.cond_means, s, res.cond_means, s, y)
    perm = rng.permutation(N)
    while N > 1 and np.any(perm == np.arange(N)):
        perm = rng.permutation(N)
    return crps_rb(res.cond_means, s, res.cond_means[perm], s[perm], y)


def _fold(system, params, groups, g, n_samples, seed_seq, burn_in, refit, fit_config):
    rng = np.random.default_rng(seed_seq)
    obs = system.obs
    held = groups == g
    train = system.with_observations(obs.subset(~held))
    if refit:
        from .inference import fit

        params = fit(train, params, fit_config).params
    targets = Observations(A=obs.A[held], y=np.zeros(held.sum()), dim=obs.dim[held], B=obs.B[held], p=obs.p)
    res = kriging(train, params, targets, n_samples, rng, burn_in=burn_in)
    y = obs.y[held]
    s2 = params.sigma_e[obs.dim[held]] ** 2
    crps = _crps_from_result(res, y, s2, rng)
    return np.flatnonzero(held), res.mean, crps


def loo_cv(system, models, n_samples, seed=0, groups=None, burn_in=20, threads=1,
           refit=False, fit_config=None):
    """Leave-one-location-out cross-validation with fixed parameters.

    Parameters
    ----------
    system : SpdeSystem
    models : dict
        Model name -> ModelParams.
    groups : array_like of int, optional
        Location id per observation; all observations sharing an id are
        held out together.  Defaults to one group per observation.
    threads : int
        Folds run in a thread pool; every fold owns an RNG substream, so
        results do not depend on the thread count.
    refit : bool
        Re-estimate parameters within each fold (slow; off by default).

    Returns
    -------
    (table, details)
        ``table`` is a list of dicts with keys model, dim, mae, crps, n;
        ``details`` maps model name to (prediction, crps) arrays aligned
        with the observations.
    """
    obs = system.obs
    groups = np.arange(obs.m) if groups is None else np.asarray(groups)
    ids = np.unique(groups)
    if ids.shape[0] < 2:
        raise ValueError("cross-validation needs at least two locations")
    root = np.random.SeedSequence(seed)
    details = {}
    for name, params in models.items():
        streams = np.random.SeedSequence(root.entropy, spawn_key=(zlib.crc32(name.encode()),)).spawn(ids.shape[0])
        pred = np.empty(obs.m)
        crps = np.empty(obs.m)

        def job(t):
            return _fold(system, params, groups, ids[t], n_samples, streams[t], burn_in, refit, fit_config)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                results = list(ex.map(job, range(ids.shape[0])))
        else:
            results = [job(t) for t in range(ids.shape[0])]
        for idx, m, c in results:
            pred[idx] = m
            crps[idx] = c
        details[name] = (pred, crps)
    return score_table(obs, details), details


def score_table(obs, details):
    """Median absolute error and median CRPS per model and dimension."""
    rows = []
    for name, (pred, crps) in details.items():
        for k in range(obs.p):
            sel = obs.dim == k
            if not sel.any():
                continue
            rows.append({"model": name, "dim": k + 1,
                         "mae": float(np.median(np.abs(pred[sel] - obs.y[sel]))),
                         "crps": float(np.median(crps[sel])), "n": int(sel.sum())})
    return rows
