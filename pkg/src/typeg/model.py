"""Model parameters, dependence matrices and the discretised operator.

The field x = (x_1, ..., x_p) solves ``D L x = noise`` with
``L = diag(L_1, ..., L_p)`` and ``L_k = c_k (κ_k² - Δ)^{α_k/2}``.  The
dependence matrix ``D = Q(θ) D_l(r)`` is a rotation times a lower
triangular factor; rotations change only non-Gaussian features of the law.

Cross-correlations are exposed through ``ModelParams.rho``, the lag-zero
correlations of the driving noise (equal to those of the field when all
dimensions share α and κ).  Internally D_l is built from the unconstrained
entries ``r`` of its unit-lower-triangular factor; :func:`rho_to_raw` and
:func:`raw_to_rho` convert between the two.
"""

import json
import re
from dataclasses import dataclass, field, replace, fields

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

__all__ = [
    "VARIANTS",
    "ModelParams",
    "DependenceMatrix",
    "pair_index",
    "correlation_matrix",
    "rho_to_raw",
    "raw_to_rho",
    "raw_to_rho_jacobian",
    "build_Dl",
    "build_Dl_derivatives",
    "build_Q",
    "build_Q_derivatives",
    "build_D",
    "dependence_matrix",
    "cholesky_canonical",
    "scaling_constant",
    "operator_blocks",
    "assemble_K",
    "K_derivative",
    "log_abs_det_K",
]

VARIANTS = ("gaussian", "G1", "G2", "G3", "G4")
SHARED_ETA = ("gaussian", "G1", "G3")


def n_pairs(p):
    return p * (p - 1) // 2


def pair_index(p):
    """Ordered (j, i) pairs, j > i, for the lower-triangular parameters.

    The order is (1,0), (2,0), (2,1): the same for ``rho``, ``r`` and
    correlation-matrix entries.
    """
    return [(j, i) for i in range(p) for j in range(i + 1, p)]


def _as_array(x, name, length=None):
    a = np.atleast_1d(np.asarray(x, dtype=np.float64)).copy()
    if a.ndim != 1:
        raise ValueError(f"{name} must be a vector")
    if length is not None and a.shape[0] != length:
        if a.shape[0] == 1:
            a = np.repeat(a, length)
        else:
            raise ValueError(f"{name} must have length {length}, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


@dataclass
class ModelParams:
    """All parameters of the multivariate model.

    Parameters
    ----------
    p, d : int
        Number of field dimensions and spatial dimension.
    kappa, sigma, alpha, mu, sigma_e : array_like
        Per-dimension values (scalars are broadcast).
    eta : array_like
        Mixing shape: one value for ``gaussian``/``G1``/``G3``, p values
        for ``G2``/``G4``.
    rho : array_like
        Lag-zero noise correlations, length p(p-1)/2 in :func:`pair_index`
        order.
    theta : array_like
        Rotation angles: 1 for p = 2, 3 for p = 3.
    beta : array_like
        Regression coefficients, stacked per dimension.
    variant : str
        One of ``gaussian``, ``G1``, ``G2``, ``G3``, ``G4``.
    """

    p: int
    d: int
    kappa: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray = None
    mu: np.ndarray = None
    eta: np.ndarray = None
    sigma_e: np.ndarray = None
    rho: np.ndarray = None
    theta: np.ndarray = None
    beta: np.ndarray = field(default=None)
    variant: str = "gaussian"

    def __post_init__(self):
        p, d = int(self.p), int(self.d)
        if p < 1:
            raise ValueError("p must be >= 1")
        if d not in (1, 2):
            raise ValueError("d must be 1 or 2")
        self.p, self.d = p, d
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        m = n_pairs(p)
        self.kappa = _as_array(self.kappa, "kappa", p)
        self.sigma = _as_array(self.sigma, "sigma", p)
        self.alpha = _as_array(2.0 if self.alpha is None else self.alpha, "alpha", p)
        self.mu = _as_array(0.0 if self.mu is None else self.mu, "mu", p)
        self.sigma_e = _as_array(1.0 if self.sigma_e is None else self.sigma_e, "sigma_e", p)
        n_eta = 1 if self.variant in SHARED_ETA else p
        self.eta = _as_array(1.0 if self.eta is None else self.eta, "eta", n_eta)
        self.rho = _as_array(np.zeros(m) if self.rho is None else self.rho, "rho", m or None)
        if m == 0 and self.rho.size:
            raise ValueError("rho must be empty for p = 1")
        n_theta = {1: 0, 2: 1, 3: 3}.get(p, 0)
        self.theta = _as_array([] if self.theta is None else self.theta, "theta")
        if p > 3 and np.any(self.theta != 0):
            raise ValueError("rotations are only parametrised for p <= 3")
        if p > 3 or (self.theta.size == 0 and n_theta):
            self.theta = np.zeros(n_theta)
        if self.theta.shape[0] != n_theta:
            raise ValueError(f"theta must have length {n_theta}")
        self.beta = _as_array([] if self.beta is None else self.beta, "beta")
        for name in ("kappa", "sigma", "sigma_e", "eta"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"{name} must be positive")
        if np.any(self.alpha - d / 2.0 <= 0):
            raise ValueError("alpha must exceed d/2")
        if self.variant == "gaussian":
            self.mu = np.zeros(p)
        if m:
            P = correlation_matrix(self.rho, p)
            if np.any(np.abs(self.rho) >= 1) or np.linalg.eigvalsh(P).min() <= 0:
                raise ValueError("rho does not define a positive definite correlation matrix")

    @property
    def nu(self):
        return self.alpha - self.d / 2.0

    @property
    def n_theta(self):
        return self.theta.shape[0]

    def eta_per_dim(self):
        """η broadcast to one value per dimension."""
        return np.broadcast_to(self.eta, (self.p,)).copy()

    def replace(self, **changes):
        """Copy with some fields changed (validated).

        When only ``variant`` changes, η is collapsed to its mean or
        broadcast so that it fits the new variant.
        """
        new_variant = changes.get("variant", self.variant)
        if "eta" not in changes and new_variant in VARIANTS:
            if new_variant in SHARED_ETA and self.eta.shape[0] != 1:
                changes["eta"] = [float(np.mean(self.eta))]
            elif new_variant not in SHARED_ETA:
                changes["eta"] = self.eta_per_dim()
        return replace(self, **changes)

    def copy(self):
        return self.replace()

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown parameter fields: {sorted(unknown)}")
        return cls(**doc)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class DependenceMatrix:
    """Dependence matrix ``D`` and its inverse ``R``."""

    D: np.ndarray
    R: np.ndarray


# ---------------------------------------------------------------------------
# cross-correlation parametrisation


def correlation_matrix(rho, p):
    """Symmetric correlation matrix from the pair vector ``rho``."""
    P = np.eye(p)
    for (j, i), v in zip(pair_index(p), np.atleast_1d(rho)):
        P[j, i] = P[i, j] = v
    return P


def _lower_unit(r, p):
    T = np.eye(p)
    for (j, i), v in zip(pair_index(p), np.atleast_1d(r)):
        T[j, i] = v
    return T


def rho_to_raw(rho, p):
    """Unconstrained entries ``r`` whose D_l yields noise correlations ``rho``."""
    if p == 1:
        return np.zeros(0)
    Lc = np.linalg.cholesky(correlation_matrix(rho, p))
    return np.array([Lc[j, i] / Lc[j, j] for j, i in pair_index(p)])


def raw_to_rho(r, p):
    """Noise correlations implied by the unconstrained entries ``r``."""
    if p == 1:
        return np.zeros(0)
    T = _lower_unit(r, p)
    N = T / np.linalg.norm(T, axis=1)[:, None]
    P = N @ N.T
    return np.array([P[j, i] for j, i in pair_index(p)])


def raw_to_rho_jacobian(r, p):
    """Matrix J with J[a, b] = d rho_a / d r_b."""
    pairs = pair_index(p)
    m = len(pairs)
    T = _lower_unit(r, p)
    k = np.linalg.norm(T, axis=1)
    N = T / k[:, None]
    J = np.zeros((m, m))
    for b, (jb, ib) in enumerate(pairs):
        dT = np.zeros((p, p))
        dT[jb, ib] = 1.0
        dk = np.zeros(p)
        dk[jb] = T[jb, ib] / k[jb]
        dN = dT / k[:, None] - T * (dk / k**2)[:, None]
        dP = dN @ N.T + N @ dN.T
        J[:, b] = [dP[j, i] for j, i in pairs]
    return J


# ---------------------------------------------------------------------------
# dependence matrix


def build_Dl(r, p=None):
    """Lower-triangular factor of the dependence matrix.

    Inverse of the unit-lower-triangular matrix holding ``r`` below the
    diagonal, times diag(k_1, ..., k_p) with k_j = sqrt(1 + Σ_i r_ji²).

    Examples
    --------
    >>> build_Dl([0.5]).round(4).tolist()
    [[1.0, 0.0], [-0.5, 1.118]]
    """
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    if p is None:
        p = int(round((1 + np.sqrt(1 + 8 * r.size)) / 2))
    if r.size != n_pairs(p):
        raise ValueError(f"expected {n_pairs(p)} entries for p={p}, got {r.size}")
    T = _lower_unit(r, p)
    k = np.linalg.norm(T, axis=1)
    return np.linalg.solve(T, np.diag(k))


def build_Dl_derivatives(r, p):
    """List of dD_l/dr_a in :func:`pair_index` order."""
    T = _lower_unit(r, p)
    Tinv = np.linalg.inv(T)
    k = np.linalg.norm(T, axis=1)
    out = []
    for (j, i) in pair_index(p):
        E = np.zeros((p, p))
        E[j, i] = 1.0
        dk = np.zeros(p)
        dk[j] = T[j, i] / k[j]
        out.append(-Tinv @ E @ Tinv @ np.diag(k) + Tinv @ np.diag(dk))
    return out


def _rot2(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s], [s, c]])


def _rot3_factors(theta):
    t1, t2, t3 = theta
    c1, s1 = np.cos(t1), np.sin(t1)
    c2, s2 = np.cos(t2), np.sin(t2)
    c3, s3 = np.cos(t3), np.sin(t3)
    Qx = np.array([[1, 0, 0], [0, c1, -s1], [0, s1, c1]])
    Qy = np.array([[c2, 0, -s2], [0, 1, 0], [s2, 0, c2]])
    Qz = np.array([[c3, -s3, 0], [s3, c3, 0], [0, 0, 1]])
    dQx = np.array([[0, 0, 0], [0, -s1, -c1], [0, c1, -s1]])
    dQy = np.array([[-s2, 0, -c2], [0, 0, 0], [c2, 0, -s2]])
    dQz = np.array([[-s3, -c3, 0], [c3, -s3, 0], [0, 0, 0]])
    return (Qx, Qy, Qz), (dQx, dQy, dQz)


def build_Q(theta, p):
    """Rotation matrix Q_p(θ) for p in {1, 2, 3}.

    p = 2 is the planar rotation; p = 3 is Q_x(θ1) Q_y(θ2) Q_z(θ3).
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    if p == 1:
        if theta.size and np.any(theta != 0):
            raise ValueError("no rotation for p = 1")
        return np.eye(1)
    if p == 2:
        if theta.size != 1:
            raise ValueError("p = 2 needs one angle")
        Q = _rot2(theta[0])
    elif p == 3:
        if theta.size != 3:
            raise ValueError("p = 3 needs three angles")
        (Qx, Qy, Qz), _ = _rot3_factors(theta)
        Q = Qx @ Qy @ Qz
    else:
        if theta.size and np.any(theta != 0):
            raise ValueError("rotations are only parametrised for p <= 3")
        return np.eye(p)
    if np.abs(Q.T @ Q - np.eye(p)).max() > 1e-12:
        raise AssertionError("rotation matrix is not orthogonal")
    return Q


def build_Q_derivatives(theta, p):
    """List of dQ/dθ_a."""
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    if p == 2:
        c, s = np.cos(theta[0]), np.sin(theta[0])
        return [np.array([[-s, -c], [c, -s]])]
    if p == 3:
        (Qx, Qy, Qz), (dQx, dQy, dQz) = _rot3_factors(theta)
        return [dQx @ Qy @ Qz, Qx @ dQy @ Qz, Qx @ Qy @ dQz]
    return []


def build_D(theta, r, p):
    """D = Q(θ) D_l(r) in terms of the unconstrained entries ``r``."""
    return build_Q(theta, p) @ build_Dl(r, p)


def dependence_matrix(params):
    """Dependence matrix of ``params`` and its inverse."""
    p = params.p
    D = build_D(params.theta, rho_to_raw(params.rho, p), p)
    return DependenceMatrix(D=D, R=np.linalg.inv(D))


def cholesky_canonical(D):
    """Upper-triangular U with positive diagonal and UᵀU = DᵀD."""
    D = np.asarray(D, dtype=np.float64)
    if np.linalg.matrix_rank(D) < D.shape[0]:
        raise np.linalg.LinAlgError("dependence matrix is singular")
    return np.linalg.cholesky(D.T @ D).T


# ---------------------------------------------------------------------------
# operators


def scaling_constant(sigma, kappa, alpha, d):
    """Constant c making the stationary marginal variance equal σ².

    c = sqrt(σ⁻² (4π)^{-d/2} κ^{-2ν} Γ(ν) / Γ(α)), ν = α - d/2.
    """
    sigma, kappa, alpha = (np.asarray(v, dtype=np.float64) for v in (sigma, kappa, alpha))
    nu = alpha - d / 2.0
    if np.any(nu <= 0):
        raise ValueError("alpha must exceed d/2")
    if np.any(sigma <= 0) or np.any(kappa <= 0):
        raise ValueError("sigma and kappa must be positive")
    logc2 = (-2 * np.log(sigma) - 0.5 * d * np.log(4 * np.pi) - 2 * nu * np.log(kappa)
             + gammaln(nu) - gammaln(alpha))
    return np.exp(0.5 * logc2)


def _check_alpha(params):
    for a in params.alpha:
        if a not in (2.0, 4.0):
            raise ValueError(f"operator assembly supports alpha in {{2, 4}}, got {a}")


def _base(fem, kappa):
    return (fem.G + kappa**2 * fem.C).tocsr()


def operator_blocks(params, fem):
    """Per-dimension operators L_k (sparse n×n)."""
    _check_alpha(params)
    c = scaling_constant(params.sigma, params.kappa, params.alpha, params.d)
    cinv = sp.diags(1.0 / fem.c_diag)
    out = []
    for k in range(params.p):
        Bk = _base(fem, params.kappa[k])
        if params.alpha[k] == 2.0:
            out.append((c[k] * Bk).tocsr())
        else:
            out.append((c[k] * (Bk @ cinv @ Bk)).tocsr())
    return out


def _kron_blocks(D, blocks):
    p = len(blocks)
    rows = []
    for i in range(p):
        rows.append([D[i, j] * blocks[j] if D[i, j] != 0 else None for j in range(p)])
    n = blocks[0].shape[0]
    # bmat needs at least one block in every block row and column
    for i in range(p):
        if all(b is None for b in rows[i]):
            rows[i][i] = sp.csr_matrix((n, n))
        if all(rows[j][i] is None for j in range(p)):
            rows[i][i] = sp.csr_matrix((n, n))
    return sp.bmat(rows, format="csr")


def assemble_K(params, fem, blocks=None):
    """Discretised operator K = (D ⊗ I_n) blockdiag(L_1, ..., L_p)."""
    if blocks is None:
        blocks = operator_blocks(params, fem)
    D = dependence_matrix(params).D
    return _kron_blocks(D, blocks)


def _kappa_block_derivative(params, fem, k, L):
    """κ dL_k/dκ (log-κ derivative of one block)."""
    c = scaling_constant(params.sigma[k], params.kappa[k], params.alpha[k], params.d)
    kap = params.kappa[k]
    out = -params.nu[k] * L
    if params.alpha[k] == 2.0:
        out = out + 2.0 * kap**2 * c * fem.C
    else:
        out = out + 4.0 * kap**2 * c * _base(fem, kap)
    return out.tocsr()


def raw_derivatives(params, fem, blocks=None):
    """Derivatives of K in the unconstrained coordinates.

    Returns a dict keyed by ``("theta", a)``, ``("r", a)``,
    ``("log_sigma", k)`` and ``("log_kappa", k)``.
    """
    p = params.p
    if blocks is None:
        blocks = operator_blocks(params, fem)
    r = rho_to_raw(params.rho, p)
    Dl = build_Dl(r, p)
    Q = build_Q(params.theta, p)
    D = Q @ Dl
    zero = sp.csr_matrix(blocks[0].shape)
    out = {}
    for a, dQ in enumerate(build_Q_derivatives(params.theta, p)):
        out[("theta", a)] = _kron_blocks(dQ @ Dl, blocks)
    for a, dDl in enumerate(build_Dl_derivatives(r, p)):
        out[("r", a)] = _kron_blocks(Q @ dDl, blocks)
    for k in range(p):
        sel = [zero] * p
        sel[k] = -blocks[k]
        out[("log_sigma", k)] = _kron_blocks(D, sel)
        sel = [zero] * p
        sel[k] = _kappa_block_derivative(params, fem, k, blocks[k])
        out[("log_kappa", k)] = _kron_blocks(D, sel)
    return out


_ID = re.compile(r"^(theta|rho|sigma|kappa)[\[_]?(\d+)\]?$")


def _parse_id(which):
    if isinstance(which, tuple):
        return which[0], int(which[1])
    m = _ID.match(str(which))
    if not m:
        raise ValueError(f"unknown parameter id {which!r}")
    return m.group(1), int(m.group(2))


def K_derivative(params, fem, which):
    """Derivative of K with respect to one natural parameter.

    Parameters
    ----------
    which : str or tuple
        ``"theta[a]"``, ``"rho[a]"``, ``"sigma[k]"`` or ``"kappa[k]"`` (0-based),
        or the equivalent ``(name, index)`` tuple.
    """
    name, idx = _parse_id(which)
    p = params.p
    limits = {"theta": params.n_theta, "rho": n_pairs(p), "sigma": p, "kappa": p}
    if not 0 <= idx < limits[name]:
        raise ValueError(f"index {idx} out of range for {name}")
    raw = raw_derivatives(params, fem)
    if name == "theta":
        return raw[("theta", idx)]
    if name == "sigma":
        return (raw[("log_sigma", idx)] / params.sigma[idx]).tocsr()
    if name == "kappa":
        return (raw[("log_kappa", idx)] / params.kappa[idx]).tocsr()
    dr_drho = np.linalg.inv(raw_to_rho_jacobian(rho_to_raw(params.rho, p), p))
    out = sp.csr_matrix(raw[("r", 0)].shape)
    for a in range(n_pairs(p)):
        if dr_drho[a, idx] != 0:
            out = out + dr_drho[a, idx] * raw[("r", a)]
    return out.tocsr()


def log_abs_det_K(params, fem, logdet_base=None):
    """log |det K| without factorising K.

    log|det K| = n log|det D| + Σ_k [n log c_k + (α_k/2) log det(G + κ_k² C)
    - (α_k/2 - 1) log det C].

    ``logdet_base`` may supply a callable κ -> log det(G + κ² C).
    """
    from .sparse import SymbolicCholesky

    n = fem.n
    D = dependence_matrix(params).D
    total = n * np.linalg.slogdet(D)[1]
    c = scaling_constant(params.sigma, params.kappa, params.alpha, params.d)
    logdetC = float(np.sum(np.log(fem.c_diag)))
    sym = None
    for k in range(params.p):
        if logdet_base is not None:
            lb = logdet_base(params.kappa[k])
        else:
            if sym is None:
                sym = SymbolicCholesky(fem.G + fem.C)
            lb = sym.factor(_base(fem, params.kappa[k])).logdet()
        a = params.alpha[k] / 2.0
        total += n * np.log(c[k]) + a * lb - (a - 1.0) * logdetC
    return float(total)
