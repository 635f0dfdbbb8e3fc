"""Discretised mixing variances and driving-noise vectors.

For a mesh with dual-cell areas ``h`` the np-vector ``v`` of noise
variances is built from a small set of free IG variables:

========  ==========================  ================================
variant   free variables              expanded block k
========  ==========================  ================================
G1        one V ~ IG(η, η)            h · V
G2        V_k ~ IG(η_k, η_k)          h · V_k
G3        V_i ~ IG(η, η h_i²)         (V_1, ..., V_n), same for all k
G4        V_ki ~ IG(η_k, η_k h_i²)    (V_k1, ..., V_kn)
gaussian  none                        h
========  ==========================  ================================

Every expanded entry has mean h_i, so with γ_k = -μ_k the noise entries
γ_k h_i + μ_k v_ki + sqrt(v_ki) z are centred.
"""

from dataclasses import dataclass

import numpy as np

from .dists import ig_logpdf, ig_sample
from .model import VARIANTS

__all__ = [
    "VarianceState",
    "expand_variance",
    "variance_from_free",
    "sample_variance_prior",
    "variance_prior_logpdf",
    "variance_prior_grad_log_eta",
    "sample_noise_vector",
]


def _n_free(variant, p, n):
    return {"gaussian": 0, "G1": 1, "G2": p, "G3": n, "G4": p * n}[variant]


def expand_variance(free, variant, h, p):
    """Expanded np-vector from the free variables of ``variant``."""
    h = np.asarray(h, dtype=np.float64)
    free = np.asarray(free, dtype=np.float64)
    n = h.shape[0]
    if free.shape != (_n_free(variant, p, n),):
        raise ValueError(f"{variant} needs {_n_free(variant, p, n)} free variances, got {free.shape}")
    if variant == "gaussian":
        return np.tile(h, p)
    if variant == "G1":
        return np.tile(h * free[0], p)
    if variant == "G2":
        return (free[:, None] * h[None, :]).ravel()
    if variant == "G3":
        return np.tile(free, p)
    return free.copy()


@dataclass
class VarianceState:
    """Mixing variances in compact (``free``) and expanded (``v``) form.

    The expanded vector is ordered (v_1ᵀ, ..., v_pᵀ) with one block of
    length n per field dimension.
    """

    variant: str
    free: np.ndarray
    v: np.ndarray
    p: int

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        self.free = np.asarray(self.free, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.v.ndim != 1 or self.v.shape[0] % self.p:
            raise ValueError("expanded variance vector must have length n·p")
        if np.any(~(self.v > 0)):
            raise ValueError("variances must be positive")

    @property
    def n(self):
        return self.v.shape[0] // self.p

    def blocks(self):
        """Expanded variances reshaped to (p, n)."""
        return self.v.reshape(self.p, -1)

    def check(self, h):
        """Raise if ``v`` is not the expansion of ``free`` for this variant."""
        expected = expand_variance(self.free, self.variant, h, self.p)
        if expected.shape != self.v.shape or not np.allclose(expected, self.v, rtol=1e-12, atol=0):
            raise ValueError(f"variance vector does not have {self.variant} structure")


def variance_from_free(free, variant, h, p):
    """VarianceState from free variables."""
    return VarianceState(variant, np.array(free, dtype=np.float64, ndmin=1),
                         expand_variance(np.array(free, dtype=np.float64, ndmin=1), variant, h, p), p)


def _prior_rates(params, h):
    """(η1, η2) arrays matching the free variables."""
    eta = params.eta_per_dim()
    h = np.asarray(h, dtype=np.float64)
    v = params.variant
    if v == "G1":
        return eta[:1], eta[:1]
    if v == "G2":
        return eta, eta
    if v == "G3":
        return np.full(h.shape, eta[0]), eta[0] * h**2
    if v == "G4":
        e = np.repeat(eta, h.shape[0])
        return e, e * np.tile(h, params.p) ** 2
    return np.zeros(0), np.zeros(0)


def sample_variance_prior(params, h, rng):
    """Draw the mixing variances from their prior."""
    if params.variant == "gaussian":
        return variance_from_free(np.zeros(0), "gaussian", h, params.p)
    e1, e2 = _prior_rates(params, h)
    free = ig_sample(e1, e2, rng)
    return variance_from_free(free, params.variant, h, params.p)


def variance_prior_logpdf(vs, params, h):
    """Log prior density of the free variances (0 for the Gaussian variant)."""
    if vs.variant != params.variant:
        raise ValueError("variance state and parameters use different variants")
    vs.check(h)
    if vs.variant == "gaussian":
        return 0.0
    e1, e2 = _prior_rates(params, h)
    return float(np.sum(ig_logpdf(vs.free, e1, e2)))


def variance_prior_grad_log_eta(vs, params, h):
    """Gradient of :func:`variance_prior_logpdf` with respect to log η."""
    v = vs.variant
    if v == "gaussian":
        return np.zeros(0)
    eta = params.eta_per_dim()
    h = np.asarray(h, dtype=np.float64)
    if v in ("G1", "G2"):
        x = vs.free
        g = 0.5 / eta[: x.shape[0]] - 0.5 * x - 0.5 / x + 1.0
        return eta[: x.shape[0]] * g
    x = vs.free.reshape(-1, h.shape[0])
    g = (0.5 / eta[: x.shape[0], None] - 0.5 * x - 0.5 * h**2 / x + h).sum(axis=1)
    return eta[: x.shape[0]] * g


def sample_noise_vector(vs, params, h, rng):
    """Noise vector with block-k entries -μ_k h_i + μ_k v_ki + sqrt(v_ki) z."""
    h = np.asarray(h, dtype=np.float64)
    mu = np.repeat(params.mu, h.shape[0])
    z = rng.standard_normal(vs.v.shape[0])
    return mu * (vs.v - np.tile(h, params.p)) + np.sqrt(vs.v) * z
