"""Gibbs sampling, likelihood gradients and stochastic-gradient fitting.

Observation model (stacked over all observations j)::

    y_j = (B β)_j + (A w)_j + ε_j,   ε_j ~ N(0, σ_e,dim(j)²)
    K w | v ~ N(μ̃, diag(v)),         μ̃ = (μ ⊗ 1_n) ∘ (v - h)

Given v, w is Gaussian with precision Q̂ = Kᵀ V⁻¹ K + Aᵀ Σ_e⁻¹ A and mean
ξ̂ = Q̂⁻¹ (Aᵀ Σ_e⁻¹ (y - Bβ) + Kᵀ V⁻¹ μ̃).  Integrating w out gives
log π(y | v, Ψ) in closed form; adding the log prior of the free mixing
variances gives the target whose gradient is averaged over Gibbs draws
of v (Fisher's identity) in :func:`estimate_gradient`.
"""

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dists import gig_sample
from .model import (
    ModelParams,
    assemble_K,
    n_pairs,
    operator_blocks,
    pair_index,
    raw_derivatives,
    raw_to_rho,
    rho_to_raw,
    scaling_constant,
    dependence_matrix,
)
from .mesh import observation_matrix
from .noise import (
    VarianceState,
    sample_variance_prior,
    variance_from_free,
    variance_prior_grad_log_eta,
    variance_prior_logpdf,
)
from .sparse import CholeskyError, SymbolicCholesky

__all__ = [
    "Observations",
    "SpdeSystem",
    "ConditionalGaussian",
    "GibbsState",
    "FitConfig",
    "FitResult",
    "ParamLayout",
    "condition",
    "init_state",
    "gibbs_step",
    "posterior_gig_params",
    "sample_v_conditional",
    "mh_variance_update",
    "log_pv_given_y",
    "gradient_given_v",
    "estimate_gradient",
    "gaussian_loglik",
    "fit_gaussian",
    "fit",
    "DivergenceError",
]

log = logging.getLogger(__name__)
LOG2PI = np.log(2 * np.pi)


class DivergenceError(RuntimeError):
    """Stochastic-gradient iterates left any sensible range."""


# ---------------------------------------------------------------------------
# data and mesh-level cache


@dataclass
class Observations:
    """Stacked observations of a p-variate field.

    Attributes
    ----------
    A : csr_matrix, shape (M, n p)
        Row j interpolates block ``dim[j]`` of w at the j-th location.
    y : ndarray, shape (M,)
    dim : ndarray of int, shape (M,)
        0-based field dimension of each observation.
    B : ndarray, shape (M, p q)
        Per-dimension design: covariates of dimension k occupy columns
        k q, ..., k q + q - 1.
    p : int
    """

    A: sp.csr_matrix
    y: np.ndarray
    dim: np.ndarray
    B: np.ndarray
    p: int

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.dim = np.asarray(self.dim, dtype=np.int64)
        self.B = np.asarray(self.B, dtype=np.float64).reshape(self.y.shape[0], -1)
        M = self.y.shape[0]
        if self.A.shape[0] != M or self.dim.shape != (M,):
            raise ValueError("A, y and dim disagree on the number of observations")
        if M and (self.dim.min() < 0 or self.dim.max() >= self.p):
            raise ValueError(f"observation dimensions must lie in [0, {self.p})")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("observations must be finite")

    @classmethod
    def from_points(cls, mesh, locations, dims, values, p, covariates=None, intercept=True):
        """Build from point observations.

        Parameters
        ----------
        mesh : Mesh
        locations : array_like, shape (M, d)
        dims : array_like of int
            0-based dimension per observation.
        values : array_like
        covariates : array_like, shape (M, q0), optional
            Extra covariates; an intercept column is prepended when
            ``intercept`` is true.
        """
        dims = np.asarray(dims, dtype=np.int64)
        A0 = observation_matrix(mesh, locations)
        M, n = A0.shape
        coo = A0.tocoo()
        A = sp.csr_matrix((coo.data, (coo.row, coo.col + n * dims[coo.row])), shape=(M, n * p))
        cov = np.zeros((M, 0)) if covariates is None else np.asarray(covariates, dtype=np.float64).reshape(M, -1)
        if intercept:
            cov = np.column_stack([np.ones(M), cov])
        q = cov.shape[1]
        B = np.zeros((M, p * q))
        for k in range(p):
            sel = dims == k
            B[sel, k * q:(k + 1) * q] = cov[sel]
        return cls(A=A, y=values, dim=dims, B=B, p=p)

    @property
    def m(self):
        return self.y.shape[0]

    def counts(self):
        return np.bincount(self.dim, minlength=self.p)

    def subset(self, keep):
        keep = np.asarray(keep)
        return Observations(A=self.A[keep], y=self.y[keep], dim=self.dim[keep], B=self.B[keep], p=self.p)


def _same_design(a, b):
    return (a.A.shape == b.A.shape and np.array_equal(a.dim, b.dim) and np.array_equal(a.B, b.B)
            and np.array_equal(a.A.indptr, b.A.indptr) and np.array_equal(a.A.indices, b.A.indices)
            and np.array_equal(a.A.data, b.A.data))


def _abs_pattern(M):
    M = sp.csr_matrix(M, copy=True)
    M.data = np.abs(M.data) + 1.0
    return M


class SpdeSystem:
    """Mesh, observations and reusable symbolic factorisations.

    Parameters
    ----------
    fem : FemMatrices
    obs : Observations
    alpha : array_like
        Operator exponents; the structural pattern covers α = 4 blocks when
        any entry equals 4.
    ordering : str
        Fill-reducing ordering for the posterior precision.
    """

    def __init__(self, fem, obs, alpha=2.0, ordering="auto"):
        self.fem = fem
        self.obs = obs
        self.p = p = obs.p
        self.n = n = fem.n
        self.h = fem.h
        self.h_rep = np.tile(fem.h, p)
        alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (p,))
        base = _abs_pattern(fem.G + fem.C)
        PL = base
        if np.any(alpha == 4.0):
            PL = PL + base @ base
        PL = _abs_pattern(PL)
        blk = _abs_pattern(PL.T @ PL)
        S = sp.kron(np.ones((p, p)), blk, format="csr")
        if obs.m:
            S = S + _abs_pattern(obs.A.T @ obs.A)
        self.alpha = alpha
        self.q_symbolic = SymbolicCholesky(S, ordering)
        self.base_symbolic = SymbolicCholesky(base, ordering)
        self._prep_key = None
        self._prep = None

    def with_observations(self, obs):
        """Shallow copy sharing symbolic analyses, with other observations.

        The new observations' AᵀA must lie in the analysed pattern, which
        holds for any point observations on the same mesh.
        """
        new = object.__new__(SpdeSystem)
        new.__dict__.update(self.__dict__)
        new.obs = obs
        new._prep_key = None
        new._prep = None
        if self._prep is not None and _same_design(self.obs, obs):
            # only y changed: reuse the parameter-dependent work
            prep = copy.copy(self._prep)
            prep.resid0 = obs.y - obs.B @ prep.beta
            prep.Aty = obs.A.T @ (prep.resid0 * prep.s2inv)
            new._prep, new._prep_key = prep, self._prep_key
        return new

    def prepare(self, params):
        """Parameter-dependent, v-independent quantities (cached)."""
        key = params.to_json()
        if key != self._prep_key:
            self._prep = _Prepared(self, params)
            self._prep_key = key
        return self._prep


class _Prepared:
    def __init__(self, system, params):
        if params.p != system.p:
            raise ValueError("parameter dimension does not match the data")
        fem = system.fem
        self.params = params
        self.blocks = operator_blocks(params, fem)
        self.K = assemble_K(params, fem, self.blocks)
        self.mu_rep = np.repeat(params.mu, system.n)
        obs = system.obs
        self.s2inv = 1.0 / params.sigma_e[obs.dim] ** 2
        nbeta = obs.B.shape[1]
        beta = params.beta if params.beta.size else np.zeros(nbeta)
        if beta.shape[0] != nbeta:
            raise ValueError(f"beta must have length {nbeta} for this design")
        self.beta = beta
        self.resid0 = obs.y - obs.B @ beta
        self.AtSA = (obs.A.T @ sp.diags(self.s2inv) @ obs.A).tocsr()
        self.Aty = obs.A.T @ (self.resid0 * self.s2inv)
        # log|det K| and its derivatives in unconstrained coordinates
        n = system.n
        D = dependence_matrix(params).D
        c = scaling_constant(params.sigma, params.kappa, params.alpha, params.d)
        logdetC = float(np.sum(np.log(fem.c_diag)))
        logdet = n * np.linalg.slogdet(D)[1]
        self.dlogdet = {}
        for k in range(params.p):
            kap = params.kappa[k]
            fac = system.base_symbolic.factor(fem.G + kap**2 * fem.C)
            a = params.alpha[k] / 2.0
            logdet += n * np.log(c[k]) + a * fac.logdet() - (a - 1.0) * logdetC
            diag_inv = fac.selected_inverse().diag()
            self.dlogdet[("log_kappa", k)] = (-n * params.nu[k]
                                              + 2 * a * kap**2 * float(np.dot(fem.c_diag, diag_inv)))
            self.dlogdet[("log_sigma", k)] = -float(n)
        r = rho_to_raw(params.rho, params.p)
        T = np.eye(params.p)
        for (j, i), val in zip(pair_index(params.p), r):
            T[j, i] = val
        k2 = np.sum(T**2, axis=1)
        for a_, (j, i) in enumerate(pair_index(params.p)):
            self.dlogdet[("r", a_)] = n * r[a_] / k2[j]
        for a_ in range(params.n_theta):
            self.dlogdet[("theta", a_)] = 0.0
        self.logdetK = float(logdet)
        self._derivs = None
        self._fem = fem

    @property
    def derivs(self):
        if self._derivs is None:
            self._derivs = raw_derivatives(self.params, self._fem, self.blocks)
        return self._derivs


# ---------------------------------------------------------------------------
# conditional Gaussian and Gibbs


@dataclass
class ConditionalGaussian:
    """Law of w given (y, v): mean ``xi_hat`` and precision ``Q_hat``."""

    vs: VarianceState
    Q_hat: sp.csr_matrix
    factor: object
    xi_hat: np.ndarray
    mu_tilde: np.ndarray
    prep: object

    def sample(self, rng):
        z = rng.standard_normal(self.xi_hat.shape[0])
        return self.xi_hat + self.factor.sample(z)


def condition(system, params, vs, prep=None):
    """Conditional Gaussian of w given the observations and variances ``vs``."""
    prep = prep or system.prepare(params)
    v = vs.v
    if v.shape[0] != system.n * system.p:
        raise ValueError("variance vector has the wrong length")
    K = prep.K
    Vinv = 1.0 / v
    Q = (K.T @ sp.diags(Vinv) @ K + prep.AtSA).tocsr()
    try:
        fac = system.q_symbolic.factor(Q)
    except CholeskyError as exc:
        raise CholeskyError(f"posterior precision not positive definite: {exc}") from exc
    mut = prep.mu_rep * (v - system.h_rep)
    rhs = prep.Aty + K.T @ (mut * Vinv)
    xi = fac.solve(rhs)
    return ConditionalGaussian(vs=vs, Q_hat=Q, factor=fac, xi_hat=xi, mu_tilde=mut, prep=prep)


@dataclass
class GibbsState:
    """Current (w, v) and the conditional law of w given the current v."""

    w: np.ndarray
    vs: VarianceState
    cond: ConditionalGaussian

    @property
    def xi_hat(self):
        return self.cond.xi_hat

    @property
    def Q_hat(self):
        return self.cond.Q_hat


def init_state(system, params, rng, from_prior=True):
    """Start a chain at a prior draw of v (or at v = h) and w = ξ̂."""
    if from_prior:
        vs = sample_variance_prior(params, system.h, rng)
    else:
        vs = _mean_state(params, system.h)
    cond = condition(system, params, vs)
    return GibbsState(w=cond.xi_hat.copy(), vs=vs, cond=cond)


def _mean_state(params, h):
    free = {"gaussian": np.zeros(0), "G1": np.ones(1), "G2": np.ones(params.p),
            "G3": np.asarray(h, dtype=np.float64).copy(),
            "G4": np.tile(h, params.p)}[params.variant]
    return variance_from_free(free, params.variant, h, params.p)


def posterior_gig_params(E, params, h):
    """GIG (c, a, b) of the free variances given E = K w.

    Returns three arrays aligned with the free variables of the variant.
    """
    p = params.p
    h = np.asarray(h, dtype=np.float64)
    n = h.shape[0]
    E = np.asarray(E, dtype=np.float64).reshape(p, n)
    mu = params.mu
    eta = params.eta_per_dim()
    xi = E + mu[:, None] * h[None, :]
    v = params.variant
    if v == "G1":
        c = np.array([-(n * p + 1) / 2.0])
        a = np.array([eta[0] + np.sum(mu**2) * h.sum()])
        b = np.array([eta[0] + np.sum(xi**2 / h[None, :])])
    elif v == "G2":
        c = np.full(p, -(n + 1) / 2.0)
        a = eta + mu**2 * h.sum()
        b = eta + np.sum(xi**2 / h[None, :], axis=1)
    elif v == "G3":
        c = np.full(n, -(p + 1) / 2.0)
        a = np.full(n, eta[0] + np.sum(mu**2))
        b = eta[0] * h**2 + np.sum(xi**2, axis=0)
    elif v == "G4":
        c = np.full(p * n, -1.0)
        a = np.repeat(eta + mu**2, n)
        b = (eta[:, None] * h[None, :] ** 2 + xi**2).ravel()
    else:
        raise ValueError("the Gaussian variant has no variance posterior")
    return c, a, b


def sample_v_conditional(E, params, h, rng):
    """Draw the mixing variances given E = K w (GIG conditionals)."""
    if params.variant == "gaussian":
        return _mean_state(params, h)
    c, a, b = posterior_gig_params(E, params, h)
    free = gig_sample(c, a, b, rng)
    return variance_from_free(np.atleast_1d(free), params.variant, h, params.p)


def _noise_loglik_free(E, params, h, variant):
    """Per-free-variable log N(E | μ̃, v) as a function of the free values."""
    p = params.p
    n = h.shape[0]
    E = np.asarray(E).reshape(p, n)
    mu = params.mu

    def ll(free):
        vexp = variance_from_free(free, variant, h, p).v.reshape(p, n)
        terms = -0.5 * np.log(vexp) - 0.5 * (E - mu[:, None] * (vexp - h[None, :])) ** 2 / vexp
        if variant == "G1":
            return np.array([terms.sum()])
        if variant == "G2":
            return terms.sum(axis=1)
        if variant == "G3":
            return terms.sum(axis=0)
        return terms.ravel()

    return ll


def mh_variance_update(vs, E, params, h, rng, log_prior, scale):
    """Random-walk Metropolis on log v for priors without GIG conditionals.

    Parameters
    ----------
    vs : VarianceState
        Current state; every free variable is updated by its own
        accept/reject step (they are conditionally independent).
    E : ndarray
        K w.
    log_prior : callable
        Elementwise log prior density of the free variables.
    scale : float or ndarray
        Proposal standard deviation on the log scale.

    Returns
    -------
    (VarianceState, ndarray of bool)
        New state and per-variable acceptance indicators.
    """
    h = np.asarray(h, dtype=np.float64)
    ll = _noise_loglik_free(E, params, h, vs.variant)
    x = vs.free
    prop = x * np.exp(scale * rng.standard_normal(x.shape[0]))
    # Jacobian of the log transform: + log x' - log x
    logr = (ll(prop) + log_prior(prop) + np.log(prop)) - (ll(x) + log_prior(x) + np.log(x))
    accept = np.log(rng.random(x.shape[0])) < logr
    new = np.where(accept, prop, x)
    return variance_from_free(new, vs.variant, h, params.p), accept


def gibbs_step(state, system, params, rng):
    """One sweep: w | v, y then v | w.

    The returned state carries the conditional Gaussian for the new v,
    which is exactly what the next sweep (and the gradient at v) needs.
    """
    cond = state.cond
    w = cond.sample(rng)
    E = cond.prep.K @ w
    vs = sample_v_conditional(E, params, system.h, rng)
    if params.variant == "gaussian":
        new_cond = cond
    else:
        new_cond = condition(system, params, vs, cond.prep)
    return GibbsState(w=w, vs=vs, cond=new_cond)


# ---------------------------------------------------------------------------
# parameter layout


_NATURAL = {"log_kappa": "kappa", "log_sigma": "sigma", "r": "rho", "theta": "theta",
            "log_sigma_e": "sigma_e", "mu": "mu", "log_eta": "eta", "beta": "beta"}


class ParamLayout:
    """Mapping between ModelParams and an unconstrained vector.

    Coordinates are log κ_k, log σ_k, r_a (unconstrained cross-correlation
    entries), θ_a, log σ_e,k, μ_k, log η_j and β_j.  Entries named in
    ``fixed`` (natural names, optionally indexed as ``"theta[0]"``) are
    held at the template value.
    """

    def __init__(self, template, fixed=()):
        self.template = template
        p = template.p
        entries = [("log_kappa", k) for k in range(p)] + [("log_sigma", k) for k in range(p)]
        entries += [("r", a) for a in range(n_pairs(p))]
        entries += [("theta", a) for a in range(template.n_theta)]
        entries += [("log_sigma_e", k) for k in range(p)]
        if template.variant != "gaussian":
            entries += [("mu", k) for k in range(p)]
            entries += [("log_eta", j) for j in range(template.eta.shape[0])]
        entries += [("beta", j) for j in range(template.beta.shape[0])]
        fixed = set(fixed)
        valid = set(_NATURAL.values())
        for f in fixed:
            if f.split("[")[0] not in valid:
                raise ValueError(f"unknown parameter name {f!r} in fixed list")
        self.entries = [e for e in entries
                        if _NATURAL[e[0]] not in fixed and f"{_NATURAL[e[0]]}[{e[1]}]" not in fixed]

    def __len__(self):
        return len(self.entries)

    def names(self):
        return [f"{name}[{i}]" for name, i in self.entries]

    def to_vector(self, params):
        r = rho_to_raw(params.rho, params.p)
        out = np.empty(len(self.entries))
        for t, (name, i) in enumerate(self.entries):
            out[t] = {
                "log_kappa": lambda: np.log(params.kappa[i]),
                "log_sigma": lambda: np.log(params.sigma[i]),
                "r": lambda: r[i],
                "theta": lambda: params.theta[i],
                "log_sigma_e": lambda: np.log(params.sigma_e[i]),
                "mu": lambda: params.mu[i],
                "log_eta": lambda: np.log(params.eta[i]),
                "beta": lambda: params.beta[i],
            }[name]()
        return out

    def from_vector(self, x, base=None):
        base = base or self.template
        vals = {k: np.array(getattr(base, k), dtype=np.float64)
                for k in ("kappa", "sigma", "theta", "sigma_e", "mu", "eta", "beta")}
        r = rho_to_raw(base.rho, base.p)
        for t, (name, i) in enumerate(self.entries):
            v = float(x[t])
            if name == "r":
                r[i] = v
            elif name == "theta":
                vals["theta"][i] = np.mod(v, 2 * np.pi)
            elif name.startswith("log_"):
                vals[name[4:]][i] = np.exp(v)
            else:
                vals[name][i] = v
        return base.replace(rho=raw_to_rho(r, base.p), **vals)

    def unpack(self, grad_dict):
        return np.array([grad_dict.get(e, 0.0) for e in self.entries])


# ---------------------------------------------------------------------------
# marginal density of v and its gradient


def _evaluate(system, params, vs, want_grad, cond=None):
    prep = system.prepare(params)
    if cond is None or cond.prep is not prep or cond.vs is not vs:
        cond = condition(system, params, vs, prep)
    obs = system.obs
    v = vs.v
    xi = cond.xi_hat
    resid = prep.resid0 - obs.A @ xi
    e = prep.K @ xi - cond.mu_tilde
    u = e / v
    sig_obs = params.sigma_e[obs.dim]
    value = (-0.5 * obs.m * LOG2PI - np.sum(np.log(sig_obs)) - 0.5 * np.sum(resid**2 * prep.s2inv)
             - 0.5 * float(e @ u) + prep.logdetK - 0.5 * np.sum(np.log(v)) - 0.5 * cond.factor.logdet()
             + variance_prior_logpdf(vs, params, system.h))
    if not want_grad:
        return float(value), None, cond
    grad = {}
    Sigma = cond.factor.selected_inverse()
    p, n = params.p, system.n
    # measurement noise
    quad = Sigma.row_quadratic(obs.A) if obs.m else np.zeros(0)
    for k in range(p):
        sel = obs.dim == k
        s = params.sigma_e[k]
        g = -sel.sum() / s + (np.sum(resid[sel] ** 2) + np.sum(quad[sel])) / s**3
        grad[("log_sigma_e", k)] = g * s
    # regression
    gb = obs.B.T @ (resid * prep.s2inv)
    for j in range(params.beta.shape[0]):
        grad[("beta", j)] = float(gb[j])
    # noise asymmetry and mixing shape
    if params.variant != "gaussian":
        dv = (v - system.h_rep) * u
        for k in range(p):
            grad[("mu", k)] = float(dv[k * n:(k + 1) * n].sum())
        ge = variance_prior_grad_log_eta(vs, params, system.h)
        for j in range(params.eta.shape[0]):
            grad[("log_eta", j)] = float(ge[j])
    # operator parameters
    VinvK = sp.diags(1.0 / v) @ prep.K
    for key, Kd in prep.derivs.items():
        tr = Sigma.trace_product(Kd.T @ VinvK)
        grad[key] = prep.dlogdet[key] - float(u @ (Kd @ xi)) - tr
    return float(value), grad, cond


def log_pv_given_y(vs, system, params):
    """log π(y | v, Ψ) + log π(v | Ψ) (the log density of v given y up to a
    constant that depends on neither v nor Ψ)."""
    return _evaluate(system, params, vs, False)[0]


def gradient_given_v(vs, system, params, layout=None, cond=None):
    """Gradient of :func:`log_pv_given_y` in the unconstrained coordinates.

    Returns
    -------
    (ndarray, float)
        Gradient over ``layout`` entries and the function value.
    """
    layout = layout or ParamLayout(params)
    value, grad, _ = _evaluate(system, params, vs, True, cond)
    return layout.unpack(grad), value


def estimate_gradient(system, params, state, n_samples, rng, layout=None):
    """Average ``gradient_given_v`` over ``n_samples`` Gibbs sweeps.

    Returns
    -------
    (mean gradient, per-sample gradients, final state)
    """
    layout = layout or ParamLayout(params)
    if state.cond.prep is not system.prepare(params):
        state = GibbsState(w=state.w, vs=state.vs, cond=condition(system, params, state.vs))
    grads = np.empty((n_samples, len(layout)))
    for i in range(n_samples):
        state = gibbs_step(state, system, params, rng)
        grads[i], _ = gradient_given_v(state.vs, system, params, layout, state.cond)
    return grads.mean(axis=0), grads, state


# ---------------------------------------------------------------------------
# Gaussian likelihood


def gaussian_loglik(system, params):
    """Exact log-likelihood of the Gaussian model (v = h, μ = 0)."""
    g = params if params.variant == "gaussian" else params.replace(variant="gaussian", eta=1.0)
    return log_pv_given_y(_mean_state(g, system.h), system, g)


def fit_gaussian(system, init, fixed=("theta",), maxiter=500, tol=1e-9):
    """Maximum-likelihood fit of the Gaussian model with L-BFGS-B.

    Returns the fitted Gaussian ModelParams and the scipy result.
    """
    from scipy.optimize import minimize

    g0 = init.replace(variant="gaussian", eta=1.0, mu=np.zeros(init.p))
    layout = ParamLayout(g0, fixed=fixed)
    vs = _mean_state(g0, system.h)

    def fun(x):
        try:
            par = layout.from_vector(x, g0)
            grad, val = gradient_given_v(vs, system, par, layout)
        except (CholeskyError, ValueError, FloatingPointError):
            return np.inf, np.zeros_like(x)
        return -val, -grad

    x0 = layout.to_vector(g0)
    res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": maxiter, "ftol": tol, "gtol": 1e-7})
    return layout.from_vector(res.x, g0), res


# ---------------------------------------------------------------------------
# stochastic gradient


@dataclass
class FitConfig:
    """Settings of the stochastic-gradient fit.

    Step size at iteration i is ``a0 * (t0 / (t0 + i)) ** power`` applied
    to the preconditioned gradient.  The diagonal preconditioner is the
    inverse observed information estimated from ``precondition_samples``
    Gibbs states (complete-data curvature minus score variance, floored at
    ``min_information`` times the curvature), recomputed every
    ``precondition_every`` iterations when that is positive.
    """

    n_iterations: int = 1000
    n_gibbs_samples: int = 10
    burn_in: int = 5
    a0: float = 0.5
    t0: float = 50.0
    power: float = 0.8
    max_step: float = 0.5
    average_fraction: float = 0.2
    precondition_samples: int = 10
    precondition_every: int = 0
    min_information: float = 0.05
    fixed: tuple = ()
    gaussian_init: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.5 < self.power <= 1.0:
            raise ValueError("power must lie in (0.5, 1] for a convergent step sequence")
        if self.n_iterations < 0 or self.n_gibbs_samples < 1 or self.burn_in < 0:
            raise ValueError("iteration and sample counts must be non-negative (N >= 1)")
        if not self.a0 > 0 or not self.t0 > 0:
            raise ValueError("a0 and t0 must be positive")
        if self.precondition_every < 0 or not 0 < self.min_information <= 1:
            raise ValueError("precondition_every must be >= 0 and min_information in (0, 1]")
        if not 0 <= self.average_fraction < 1:
            raise ValueError("average_fraction must lie in [0, 1)")
        self.fixed = tuple(self.fixed)

    def step(self, i):
        return self.a0 * (self.t0 / (self.t0 + i)) ** self.power


@dataclass
class FitResult:
    """Output of :func:`fit`."""

    params: ModelParams
    last: ModelParams
    names: list
    trace: np.ndarray
    steps: np.ndarray
    gradients: np.ndarray
    seed: int
    initial: ModelParams
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)


def _diag_curvature(system, params, layout, states, h=1e-4):
    """|diag Hessian| of the complete-data objective, averaged over states."""
    x0 = layout.to_vector(params)
    out = np.zeros(len(layout))
    for j in range(len(layout)):
        e = np.zeros_like(x0)
        e[j] = h
        gp = gm = 0.0
        pp, pm = layout.from_vector(x0 + e, params), layout.from_vector(x0 - e, params)
        for vs in states:
            gp += gradient_given_v(vs, system, pp, layout)[0][j]
            gm += gradient_given_v(vs, system, pm, layout)[0][j]
        out[j] = abs(gp - gm) / (2 * h * len(states))
    return out


def _preconditioner(system, params, layout, state, n_states, min_information, rng):
    """Inverse diagonal observed information and the advanced chain state.

    Louis' identity: observed information = complete-data information minus
    the conditional variance of the complete-data score.  The variance is
    taken over successive Gibbs states, and the difference is floored at a
    fraction of the complete-data curvature.
    """
    states, grads = [], []
    st = state
    if st.cond.prep is not system.prepare(params):
        st = GibbsState(w=st.w, vs=st.vs, cond=condition(system, params, st.vs))
    for _ in range(n_states):
        st = gibbs_step(st, system, params, rng)
        states.append(st.vs)
        grads.append(gradient_given_v(st.vs, system, params, layout, st.cond)[0])
    curv = _diag_curvature(system, params, layout, states)
    if n_states > 1:
        info = np.maximum(curv - np.var(grads, axis=0, ddof=1), min_information * curv)
    else:
        info = curv
    floor = max(1e-8, 1e-6 * float(np.max(info)) if info.size else 1e-8)
    return 1.0 / np.maximum(info, floor), st


def fit(system, init, config=None, callback=None):
    """Stochastic-gradient maximum likelihood.

    Parameters
    ----------
    system : SpdeSystem
    init : ModelParams
        Starting values; its variant selects the model.  With
        ``config.gaussian_init`` and a non-Gaussian variant, the start is
        first replaced by the Gaussian maximum-likelihood fit (μ = 0).
    config : FitConfig
    callback : callable, optional
        Called as ``callback(i, params, gradient)`` after each iteration.

    Returns
    -------
    FitResult
        ``params`` is the Polyak average over the last
        ``average_fraction`` of iterations (the last iterate when the
        fraction is 0); ``last`` the final iterate.
    """
    config = config or FitConfig()
    t_start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    fixed = tuple(config.fixed)
    if init.variant == "gaussian" and "theta" not in fixed:
        fixed = fixed + ("theta",)
    start = init
    if config.gaussian_init and config.n_iterations > 0:
        gfit, _ = fit_gaussian(system, init, fixed=tuple(set(fixed) | {"theta"}))
        if init.variant == "gaussian":
            start = gfit
        else:
            start = init.replace(kappa=gfit.kappa, sigma=gfit.sigma, rho=gfit.rho,
                                 sigma_e=gfit.sigma_e, beta=gfit.beta)
    layout = ParamLayout(start, fixed=fixed)
    names = layout.names()
    x = layout.to_vector(start)
    trace = [x.copy()]
    steps = []
    gradients = []
    if config.n_iterations == 0:
        return FitResult(params=init, last=init, names=names, trace=np.array(trace),
                         steps=np.zeros(0), gradients=np.zeros((0, len(layout))),
                         seed=config.seed, initial=init, wall_time=0.0)
    params = start
    state = init_state(system, params, rng, from_prior=False)
    for _ in range(config.burn_in):
        state = gibbs_step(state, system, params, rng)
    # the Gaussian complete-data score does not depend on v: one state suffices
    n_pre = max(1, config.precondition_samples) if params.variant != "gaussian" else 1
    precond, state = _preconditioner(system, params, layout, state, n_pre, config.min_information, rng)
    x0_norm = np.linalg.norm(x)
    for i in range(config.n_iterations):
        if config.precondition_every and i and i % config.precondition_every == 0 and n_pre > 1:
            precond, state = _preconditioner(system, params, layout, state, n_pre, config.min_information,
                                             rng)
        g, _, state = estimate_gradient(system, params, state, config.n_gibbs_samples, rng, layout)
        a = config.step(i)
        dx = np.clip(a * precond * g, -config.max_step, config.max_step)
        x = x + dx
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > 100 + 10 * x0_norm:
            raise DivergenceError(f"parameter vector diverged at iteration {i}")
        try:
            params = layout.from_vector(x, params)
        except ValueError as exc:
            raise DivergenceError(f"invalid parameters at iteration {i}: {exc}") from exc
        trace.append(x.copy())
        steps.append(a)
        gradients.append(g)
        if callback is not None:
            callback(i, params, g)
    trace = np.array(trace)
    n_avg = int(np.floor(config.average_fraction * config.n_iterations))
    if n_avg >= 1:
        xbar = trace[-n_avg:].mean(axis=0)
        averaged = layout.from_vector(xbar, params)
    else:
        averaged = params
    return FitResult(params=averaged, last=params, names=names, trace=trace,
                     steps=np.array(steps), gradients=np.array(gradients), seed=config.seed,
                     initial=start, wall_time=time.perf_counter() - t_start,
                     extra={"preconditioner": precond})
