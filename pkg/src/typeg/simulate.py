"""Field simulation and analytic/numerical covariance and CF oracles.

Simulation draws v from its prior, forms the noise vector and solves
``K w = noise``.  Because ``K = (D ⊗ I) blockdiag(L_k)`` with symmetric
positive definite ``L_k``, the solve is a small dense ``D⁻¹`` mix followed
by sparse Cholesky solves with ``G + κ² C``; no inverse is ever formed.

The covariance and characteristic-function oracles work with the
continuous model on ℝ^d and are independent of the finite-element code.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln, j0, jn_zeros, kv

from .model import dependence_matrix, scaling_constant, correlation_matrix
from .noise import VarianceState, sample_noise_vector, sample_variance_prior
from .sparse import SymbolicCholesky

__all__ = [
    "FieldSample",
    "OperatorSolver",
    "simulate_field",
    "simulate_replicates",
    "simulate_observations",
    "matern_correlation",
    "cross_covariance",
    "green_function",
    "char_function_G4",
    "marginal_density_via_cf",
]


@dataclass
class FieldSample:
    """Simulated weights ``w`` (length n p), the variances and the seed."""

    w: np.ndarray
    vs: VarianceState
    seed: object = None

    def blocks(self):
        return self.w.reshape(self.vs.p, -1)


class OperatorSolver:
    """Solves ``K w = b`` for the operator of ``params`` on ``fem``."""

    def __init__(self, params, fem, symbolic=None):
        for a in params.alpha:
            if a not in (2.0, 4.0):
                raise ValueError(f"simulation supports alpha in {{2, 4}}, got {a}")
        self.params = params
        self.fem = fem
        self.R = dependence_matrix(params).R
        self.c = scaling_constant(params.sigma, params.kappa, params.alpha, params.d)
        sym = symbolic or SymbolicCholesky(fem.G + fem.C)
        self.factors = [sym.factor(fem.G + k**2 * fem.C) for k in params.kappa]

    def solve(self, b):
        """Solve for a vector (n p) or a matrix (n p, m) of right-hand sides."""
        p, n = self.params.p, self.fem.n
        b = np.asarray(b, dtype=np.float64)
        vec = b.ndim == 1
        B = b.reshape(p, n, -1)
        mixed = np.einsum("kj,jnm->knm", self.R, B)
        out = np.empty_like(mixed)
        cdiag = self.fem.c_diag[:, None]
        for k in range(p):
            x = self.factors[k].solve(mixed[k])
            if self.params.alpha[k] == 4.0:
                x = self.factors[k].solve(cdiag * x)
            out[k] = x / self.c[k]
        out = out.reshape(p * n, -1)
        return out[:, 0] if vec else out


def simulate_field(params, fem, rng, solver=None):
    """Draw (w, v) from the discretised model."""
    solver = solver or OperatorSolver(params, fem)
    vs = sample_variance_prior(params, fem.h, rng)
    noise = sample_noise_vector(vs, params, fem.h, rng)
    return FieldSample(w=solver.solve(noise), vs=vs)


def simulate_replicates(params, fem, seed, n_replicates, rows=None, threads=1, batch=256):
    """Independent replicates with one RNG substream per replicate.

    Parameters
    ----------
    seed : int or SeedSequence
    rows : array_like of int, optional
        Entries of w to keep (all when None).
    threads : int
        Worker threads for the batched solves; results do not depend on it.

    Returns
    -------
    W : ndarray, shape (n_replicates, len(rows))
    free : list of ndarray
        Free mixing variances of each replicate.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(n_replicates)
    solver = OperatorSolver(params, fem)
    npn = params.p * fem.n
    rows = np.arange(npn) if rows is None else np.asarray(rows)
    W = np.empty((n_replicates, rows.shape[0]))
    free = [None] * n_replicates

    def run(lo):
        hi = min(lo + batch, n_replicates)
        noise = np.empty((npn, hi - lo))
        for t in range(lo, hi):
            rng = np.random.default_rng(children[t])
            vs = sample_variance_prior(params, fem.h, rng)
            noise[:, t - lo] = sample_noise_vector(vs, params, fem.h, rng)
            free[t] = vs.free
        W[lo:hi] = solver.solve(noise)[rows].T

    starts = range(0, n_replicates, batch)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(run, starts))
    else:
        for lo in starts:
            run(lo)
    return W, free


def simulate_observations(sample, obs, params, rng):
    """Observations ``y = B β + A w + ε`` at the rows described by ``obs``.

    ``obs`` supplies A, B and the dimension of each row (its values are
    ignored).
    """
    if obs.A.shape[1] != sample.w.shape[0]:
        raise ValueError("observation matrix does not match the field dimension")
    beta = params.beta if params.beta.size else np.zeros(obs.B.shape[1])
    if beta.shape[0] != obs.B.shape[1]:
        raise ValueError("beta does not match the design matrix")
    eps = params.sigma_e[obs.dim] * rng.standard_normal(obs.m)
    return obs.B @ beta + obs.A @ sample.w + eps


# ---------------------------------------------------------------------------
# covariance oracles


def matern_correlation(h, kappa, nu):
    """Matérn correlation 2^{1-ν}/Γ(ν) (κh)^ν K_ν(κh), equal to 1 at h = 0."""
    if not kappa > 0 or not nu > 0:
        raise ValueError("kappa and nu must be positive")
    h = np.asarray(h, dtype=np.float64)
    if np.any(h < 0):
        raise ValueError("distance must be non-negative")
    x = kappa * h
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        val = np.exp((1 - nu) * np.log(2.0) - gammaln(nu) + nu * np.log(x)) * kv(nu, x)
    val = np.where(x == 0, 1.0, val)
    val = np.where(np.isfinite(val), val, 0.0)
    return val if val.ndim else float(val)


def _spectral(params, i, j):
    c = scaling_constant(params.sigma, params.kappa, params.alpha, params.d)
    P = correlation_matrix(params.rho, params.p)
    d = params.d
    ai, aj = params.alpha[i], params.alpha[j]
    ki, kj = params.kappa[i], params.kappa[j]
    const = P[i, j] / ((2 * np.pi) ** d * c[i] * c[j])

    def S(w):
        return const * (ki**2 + w**2) ** (-ai / 2) * (kj**2 + w**2) ** (-aj / 2)

    return S


def _hankel0(f, r, n_seg=80, order=20):
    """∫_0^∞ f(w) J0(w r) w dw for r > 0 by summing between zeros of J0."""
    zeros = jn_zeros(0, n_seg) / r
    edges = np.concatenate([[0.0], zeros])
    x, wts = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    t = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
    seg = np.sum(0.5 * (b - a) * wts[None, :] * f(t) * j0(t * r) * t, axis=1)
    partial = np.cumsum(seg)
    # repeated averaging of the alternating partial sums
    s = partial[n_seg // 2:]
    while s.shape[0] > 1:
        s = 0.5 * (s[1:] + s[:-1])
    return float(s[0])


def cross_covariance(params, h, i, j, method="auto"):
    """Covariance Cov(x_i(s), x_j(s + h)) of the stationary Gaussian model.

    Parameters
    ----------
    h : float or array_like
        Non-negative distances.
    i, j : int
        0-based dimensions.
    method : {"auto", "quadrature"}
        ``auto`` uses the closed-form Matérn for i = j; ``quadrature``
        always inverts the spectral density numerically.
    """
    h_arr = np.atleast_1d(np.asarray(h, dtype=np.float64))
    if np.any(h_arr < 0):
        raise ValueError("distance must be non-negative")
    p = params.p
    if not (0 <= i < p and 0 <= j < p):
        raise ValueError("dimension index out of range")
    if i == j and method == "auto":
        out = params.sigma[i] ** 2 * matern_correlation(h_arr, params.kappa[i], params.nu[i])
        return out if np.ndim(h) else float(out[0])
    S = _spectral(params, i, j)
    d = params.d
    out = np.empty_like(h_arr)
    for t, r in enumerate(h_arr):
        if d == 1:
            if r == 0:
                val, err = integrate.quad(S, 0, np.inf, epsabs=0, epsrel=1e-10, limit=500)
            else:
                val, err = integrate.quad(S, 0, np.inf, weight="cos", wvar=r, epsabs=1e-13, limlst=200)
            out[t] = 2 * val
        else:
            if r == 0:
                val, err = integrate.quad(lambda w: S(w) * w, 0, np.inf, epsabs=0, epsrel=1e-10, limit=500)
            else:
                val = _hankel0(S, r)
                err = 0.0
            out[t] = 2 * np.pi * val
        if not np.isfinite(out[t]):
            raise ArithmeticError("cross-covariance quadrature did not converge")
    return out if np.ndim(h) else float(out[0])


# ---------------------------------------------------------------------------
# characteristic function of type-G4 NIG fields


def green_function(params, k, r):
    """Green function of c_k (κ_k² - Δ)^{α_k/2} on ℝ^d at distance ``r``.

    Γ(ν')/(c (4π)^{d/2} Γ(α/2) κ^{2ν'}) · Matérn(r; κ, ν'), ν' = (α - d)/2,
    finite at r = 0 only when α > d.
    """
    d = params.d
    a = params.alpha[k]
    if a <= d:
        raise ValueError("the Green function is unbounded at 0 unless alpha > d")
    nu = (a - d) / 2.0
    kap = params.kappa[k]
    c = scaling_constant(params.sigma[k], kap, a, d)
    const = np.exp(gammaln(nu) - gammaln(a / 2.0)) / (c * (4 * np.pi) ** (d / 2.0) * kap ** (2 * nu))
    return const * matern_correlation(np.asarray(r, dtype=np.float64), kap, nu)


class _RadialRule:
    """Composite Gauss-Legendre rule for ∫_{ℝ^d} F(|t|) dt."""

    def __init__(self, params, panels=100, order=8, reach=45.0):
        rmax = reach / params.kappa.min()
        # denser panels near the origin, where the Green functions peak
        edges = rmax * np.linspace(0.0, 1.0, panels + 1) ** 2
        x, w = np.polynomial.legendre.leggauss(order)
        a, b = edges[:-1, None], edges[1:, None]
        self.r = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
        wt = (0.5 * (b - a) * w).ravel()
        self.w = 2.0 * wt if params.d == 1 else 2 * np.pi * wt * self.r


def _g4_check(params):
    if params.variant != "G4":
        raise ValueError("the closed-form CF is for type-G4 NIG fields")


def char_function_G4(params, u, rule=None):
    """Characteristic function E exp(i uᵀ x(s)) of a type-G4 NIG field.

    Parameters
    ----------
    u : array_like, shape (p,) or (m, p)
    rule : optional quadrature rule (reused across calls)

    Returns
    -------
    complex or ndarray of complex
    """
    _g4_check(params)
    u = np.asarray(u, dtype=np.float64)
    single = u.ndim == 1
    U = np.atleast_2d(u)
    if U.shape[1] != params.p:
        raise ValueError("u must have one entry per field dimension")
    rule = rule or _RadialRule(params)
    R = dependence_matrix(params).R
    G = np.stack([green_function(params, k, rule.r) for k in range(params.p)])  # (p, nr)
    eta = params.eta_per_dim()
    out = np.empty(U.shape[0], dtype=np.complex128)
    chunk = max(1, 2_000_000 // rule.r.shape[0])
    for lo in range(0, U.shape[0], chunk):
        Uc = U[lo:lo + chunk]
        total = np.zeros(Uc.shape[0], dtype=np.complex128)
        for k in range(params.p):
            f = (Uc * R[:, k]) @ G  # Σ_r u_r R_rk G_r
            mu, e = params.mu[k], eta[k]
            integrand = -1j * mu * f + np.sqrt(e) * (np.sqrt(e) - np.sqrt(e + f * f - 2j * mu * f))
            total += integrand @ rule.w
        out[lo:lo + chunk] = np.exp(total)
    return complex(out[0]) if single else out


def _marginal_sd(params, rule):
    R = dependence_matrix(params).R
    G2 = np.stack([green_function(params, k, rule.r) ** 2 @ rule.w for k in range(params.p)])
    eta = params.eta_per_dim()
    scale = 1 + params.mu**2 / eta
    var = (R**2 * scale[None, :]).sum(axis=1) * G2
    return np.sqrt(var)


def marginal_density_via_cf(params, dims, grid, n_freq=256, rule=None):
    """Density of one or two field components at a point via CF inversion.

    Parameters
    ----------
    dims : int or tuple of int
        One dimension (univariate density) or a pair (bivariate density).
    grid : array_like or tuple of array_like
        Evaluation points: a 1-D array, or (x_grid, y_grid) for pairs.
    n_freq : int
        Frequencies per axis of the inversion grid.

    Returns
    -------
    ndarray
        Density values, shape (len(x),) or (len(x_grid), len(y_grid)).
    """
    _g4_check(params)
    rule = rule or _RadialRule(params)
    dims = (dims,) if np.isscalar(dims) else tuple(dims)
    if len(dims) not in (1, 2) or len(set(dims)) != len(dims):
        raise ValueError("dims must be one index or a pair of distinct indices")
    sd = _marginal_sd(params, rule)
    grids = [np.asarray(grid, dtype=np.float64)] if len(dims) == 1 else [np.asarray(g, dtype=np.float64) for g in grid]
    # frequency spacing avoids aliasing over ±20 SD; the range covers the CF decay
    freqs = []
    for k in dims:
        umax = 30.0 / sd[k]
        freqs.append(np.linspace(-umax, umax, n_freq))
    if len(dims) == 1:
        U = np.zeros((n_freq, params.p))
        U[:, dims[0]] = freqs[0]
        phi = char_function_G4(params, U, rule)
        du = freqs[0][1] - freqs[0][0]
        E = np.exp(-1j * np.outer(grids[0], freqs[0]))
        dens = (E @ phi).real * du / (2 * np.pi)
        return dens
    U1, U2 = np.meshgrid(freqs[0], freqs[1], indexing="ij")
    U = np.zeros((U1.size, params.p))
    U[:, dims[0]] = U1.ravel()
    U[:, dims[1]] = U2.ravel()
    phi = char_function_G4(params, U, rule).reshape(n_freq, n_freq)
    du1 = freqs[0][1] - freqs[0][0]
    du2 = freqs[1][1] - freqs[1][0]
    E1 = np.exp(-1j * np.outer(grids[0], freqs[0]))
    E2 = np.exp(-1j * np.outer(grids[1], freqs[1]))
    dens = (E1 @ phi @ E2.T).real * du1 * du2 / (2 * np.pi) ** 2
    return dens
