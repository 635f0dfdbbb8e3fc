"""GIG, IG and NIG distributions and CRPS helpers.

Parametrisations
----------------
GIG(c, a, b):  density ∝ v^{c-1} exp(-(a v + b / v) / 2), v > 0.
IG(η1, η2):    GIG(-1/2, η1, η2); mean sqrt(η2/η1).
NIG:           law of γ + μV + σ sqrt(V) Z with V ~ IG(η, η), Z ~ N(0, 1).

Bessel functions are evaluated in log space through the exponentially
scaled ``scipy.special.kve``.
"""

import math

import numpy as np
from scipy.special import kve, log_ndtr, ndtr

from ._accel import jit

__all__ = [
    "log_bessel_k",
    "gig_logpdf",
    "gig_sample",
    "gig_mean",
    "ig_logpdf",
    "ig_sample",
    "ig_mean",
    "nig_logpdf",
    "folded_normal_mean",
    "gaussian_crps",
]

_ZTOL = 1e-12


def log_bessel_k(order, x):
    """log K_order(x) for x > 0, stable for large x."""
    order = np.abs(np.asarray(order, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore", over="ignore"):
        val = np.log(kve(order, x)) - x
    bad = ~np.isfinite(val) & (x > 0)
    if np.any(bad):
        # small argument, large order: K_c(x) ~ Γ(c)/2 (2/x)^c
        from scipy.special import gammaln

        o, xx = np.broadcast_arrays(order, x)
        approx = gammaln(o) - np.log(2.0) + o * np.log(2.0 / xx)
        val = np.where(bad, approx, val)
    return val


def _check_gig(c, a, b):
    c, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (c, a, b)))
    if np.any(~np.isfinite(c)) or np.any(~np.isfinite(a)) or np.any(~np.isfinite(b)):
        raise ValueError("GIG parameters must be finite")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("GIG requires a >= 0 and b >= 0")
    ok = ((a > 0) & (b > 0)) | ((a > 0) & (b == 0) & (c > 0)) | ((a == 0) & (b > 0) & (c < 0))
    if not np.all(ok):
        raise ValueError("invalid GIG parameters: need a,b > 0, or b = 0 with c > 0, or a = 0 with c < 0")
    return c, a, b


def gig_logpdf(v, c, a, b):
    """Log density of GIG(c, a, b) at ``v``.

    Parameters
    ----------
    v : array_like
        Positive evaluation points.
    c : array_like
        Index.
    a, b : array_like
        Non-negative rates multiplying v and 1/v.
    """
    v = np.asarray(v, dtype=np.float64)
    if np.any(~(v > 0)):
        raise ValueError("GIG density is defined for v > 0 only")
    c, a, b = _check_gig(c, a, b)
    c, a, b, v = np.broadcast_arrays(c, a, b, v)
    out = np.empty(v.shape)
    from scipy.special import gammaln

    both = (a > 0) & (b > 0)
    if np.any(both):
        cc, aa, bb, vv = c[both], a[both], b[both], v[both]
        w = np.sqrt(aa * bb)
        out[both] = (0.5 * cc * (np.log(aa) - np.log(bb)) - np.log(2.0)
                     - log_bessel_k(cc, w) + (cc - 1) * np.log(vv) - 0.5 * (aa * vv + bb / vv))
    gam = b == 0
    if np.any(gam):
        cc, aa, vv = c[gam], a[gam], v[gam]
        out[gam] = cc * np.log(aa / 2) - gammaln(cc) + (cc - 1) * np.log(vv) - 0.5 * aa * vv
    inv = a == 0
    if np.any(inv):
        cc, bb, vv = -c[inv], b[inv], v[inv]
        out[inv] = cc * np.log(bb / 2) - gammaln(cc) - (cc + 1) * np.log(vv) - 0.5 * bb / vv
    return out if out.ndim else float(out)


def gig_mean(c, a, b):
    """E[V] for V ~ GIG(c, a, b)."""
    c, a, b = _check_gig(c, a, b)
    w = np.sqrt(a * b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(b / a) * np.exp(log_bessel_k(c + 1, w) - log_bessel_k(c, w))
        out = np.where(b == 0, 2 * c / a, out)
        out = np.where((a == 0) & (c < -1), b / (2 * (-c - 1)), out)
        out = np.where((a == 0) & (c >= -1), np.inf, out)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# sampler kernels (Hörmann & Leydold 2014 three-regime rejection scheme)


@jit
def _gig_mode(lam, omega):
    if lam >= 1.0:
        return (math.sqrt((lam - 1.0) ** 2 + omega * omega) + (lam - 1.0)) / omega
    return omega / (math.sqrt((1.0 - lam) ** 2 + omega * omega) + (1.0 - lam))


@jit
def _rou_noshift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + math.sqrt((lam + 1.0) ** 2 + omega * omega)) / omega
    um = math.exp(0.5 * (lam + 1.0) * math.log(ym) - s * (ym + 1.0 / ym) - nc)
    while True:
        u = um * rng.random()
        v = rng.random()
        if u <= 0.0 or v <= 0.0:
            continue
        x = u / v
        if math.log(v) <= t * math.log(x) - s * (x + 1.0 / x) - nc:
            return x


@jit
def _rou_shift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    # extrema of (x - xm) sqrt(f(x)) are roots of a depressed cubic
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    c = xm
    p = b - a * a / 3.0
    q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c
    fi = math.acos(-q / (2.0 * math.sqrt(-(p * p * p) / 27.0)))
    fak = 2.0 * math.sqrt(-p / 3.0)
    y1 = fak * math.cos(fi / 3.0) - a / 3.0
    y2 = fak * math.cos(fi / 3.0 + 4.0 / 3.0 * math.pi) - a / 3.0
    uplus = (y1 - xm) * math.exp(t * math.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * math.exp(t * math.log(y2) - s * (y2 + 1.0 / y2) - nc)
    while True:
        u = uminus + rng.random() * (uplus - uminus)
        v = rng.random()
        if v <= 0.0:
            continue
        x = u / v + xm
        if x <= 0.0:
            continue
        if math.log(v) <= t * math.log(x) - s * (x + 1.0 / x) - nc:
            return x


@jit
def _concave(lam, omega, rng):
    # 0 <= lam < 1 and small omega: piecewise hat on [0, x0], [x0, 2/ω], [2/ω, ∞)
    xm = _gig_mode(lam, omega)
    x0 = omega / (1.0 - lam)
    k0 = math.exp((lam - 1.0) * math.log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    A0 = k0 * x0
    if x0 >= 2.0 / omega:
        k1 = 0.0
        A1 = 0.0
        k2 = x0 ** (lam - 1.0)
        A2 = k2 * 2.0 * math.exp(-omega * x0 / 2.0) / omega
    else:
        k1 = math.exp(-omega)
        if lam == 0.0:
            A1 = k1 * math.log(2.0 / (omega * omega))
        else:
            A1 = k1 / lam * ((2.0 / omega) ** lam - x0 ** lam)
        k2 = (2.0 / omega) ** (lam - 1.0)
        A2 = k2 * 2.0 * math.exp(-1.0) / omega
    total = A0 + A1 + A2
    while True:
        V = total * rng.random()
        if V <= A0:
            x = x0 * V / A0
            hx = k0
        elif V - A0 <= A1:
            V -= A0
            if lam == 0.0:
                x = omega * math.exp(math.exp(omega) * V)
                hx = k1 / x
            else:
                x = (x0 ** lam + lam / k1 * V) ** (1.0 / lam)
                hx = k1 * x ** (lam - 1.0)
        else:
            V -= A0 + A1
            lo = x0 if x0 > 2.0 / omega else 2.0 / omega
            arg = math.exp(-omega / 2.0 * lo) - omega / (2.0 * k2) * V
            if arg <= 0.0:
                continue
            x = -2.0 / omega * math.log(arg)
            hx = k2 * math.exp(-omega / 2.0 * x)
        if x <= 0.0:
            continue
        u = rng.random() * hx
        if u > 0.0 and math.log(u) <= (lam - 1.0) * math.log(x) - omega / 2.0 * (x + 1.0 / x):
            return x


@jit
def _gig_one(c, a, b, rng):
    if b <= _ZTOL * a and c > 0.0:
        return rng.standard_gamma(c) * 2.0 / a
    if a <= _ZTOL * b and c < 0.0:
        return 0.5 * b / rng.standard_gamma(-c)
    lam = abs(c)
    omega = math.sqrt(a * b)
    scale = math.sqrt(b / a)
    if lam > 2.0 or omega > 3.0:
        x = _rou_shift(lam, omega, rng)
    elif lam >= 1.0 - 2.25 * omega * omega or omega > 0.2:
        x = _rou_noshift(lam, omega, rng)
    else:
        x = _concave(lam, omega, rng)
    if c < 0.0:
        return scale / x
    return scale * x


@jit
def _gig_fill(c, a, b, rng, out):
    for i in range(out.shape[0]):
        out[i] = _gig_one(c[i], a[i], b[i], rng)


def gig_sample(c, a, b, rng, size=None):
    """Draw from GIG(c, a, b).

    Parameters
    ----------
    c, a, b : array_like
        Parameters, broadcast against each other and ``size``.
    rng : numpy.random.Generator
    size : int or tuple, optional

    Returns
    -------
    float or ndarray
    """
    c, a, b = _check_gig(c, a, b)
    shape = np.broadcast_shapes(c.shape, () if size is None else (size if isinstance(size, tuple) else (size,)))
    cf, af, bf = (np.ascontiguousarray(np.broadcast_to(v, shape), dtype=np.float64).ravel()
                  for v in (c, a, b))
    out = np.empty(cf.shape[0])
    _gig_fill(cf, af, bf, rng, out)
    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# IG and NIG


def _positive(name, *vals):
    for v in vals:
        if np.any(~(np.asarray(v, dtype=np.float64) > 0)):
            raise ValueError(f"{name} arguments must be positive")


def ig_logpdf(v, eta1, eta2):
    """Log density of IG(η1, η2).

    ½log η2 - ½log(2π v³) - η1 v/2 - η2/(2v) + sqrt(η1 η2).
    """
    _positive("ig_logpdf", v, eta1, eta2)
    v, eta1, eta2 = (np.asarray(x, dtype=np.float64) for x in (v, eta1, eta2))
    out = (0.5 * np.log(eta2) - 0.5 * np.log(2 * np.pi * v**3) - 0.5 * eta1 * v
           - 0.5 * eta2 / v + np.sqrt(eta1 * eta2))
    return out if out.ndim else float(out)


def ig_mean(eta1, eta2):
    _positive("ig_mean", eta1, eta2)
    return np.sqrt(np.asarray(eta2, dtype=np.float64) / eta1)


def ig_sample(eta1, eta2, rng, size=None):
    """Draw from IG(η1, η2) (Wald law with mean sqrt(η2/η1), shape η2)."""
    _positive("ig_sample", eta1, eta2)
    eta1 = np.asarray(eta1, dtype=np.float64)
    eta2 = np.asarray(eta2, dtype=np.float64)
    return rng.wald(np.sqrt(eta2 / eta1), eta2, size=size)


def nig_logpdf(x, gamma, mu, sigma, eta):
    """Log density of γ + μV + σ sqrt(V) Z, V ~ IG(η, η).

    With A = η + μ²/σ² and B = η + (x-γ)²/σ² the density is
    sqrt(η)/(πσ) exp(η + μ(x-γ)/σ²) sqrt(A/B) K_1(sqrt(AB)).
    """
    _positive("nig_logpdf sigma/eta", sigma, eta)
    x, gamma, mu, sigma, eta = (np.asarray(v, dtype=np.float64) for v in (x, gamma, mu, sigma, eta))
    z = (x - gamma) / sigma
    A = eta + (mu / sigma) ** 2
    B = eta + z**2
    out = (0.5 * np.log(eta) - np.log(np.pi * sigma) + eta + mu * z / sigma
           + 0.5 * (np.log(A) - np.log(B)) + log_bessel_k(1.0, np.sqrt(A * B)))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# CRPS helpers


def folded_normal_mean(mu, sigma2):
    """E|X| for X ~ N(μ, σ²): 2σφ(μ/σ) + μ(2Φ(μ/σ) - 1); |μ| when σ² = 0."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 < 0):
        raise ValueError("sigma2 must be non-negative")
    mu, sigma2 = np.broadcast_arrays(mu, sigma2)
    out = np.array(np.abs(mu), dtype=np.float64)
    pos = sigma2 > 0
    if np.any(pos):
        s = np.sqrt(sigma2[pos])
        with np.errstate(over="ignore"):
            z = mu[pos] / s
            out[pos] = 2 * s * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi) + mu[pos] * (2 * ndtr(z) - 1)
    return out if out.ndim else float(out)


def gaussian_crps(y, mu, sigma):
    """CRPS of N(μ, σ²) at ``y`` (negatively oriented, smaller is better)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(~(sigma > 0)):
        raise ValueError("sigma must be positive")
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    return folded_normal_mean(mu - y, sigma**2) - 0.5 * folded_normal_mean(0.0, 2 * sigma**2)
