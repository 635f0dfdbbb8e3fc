import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import gammaln

from typeg.inference import Observations
from typeg.mesh import assemble_fem, grid_mesh, interval_mesh
from typeg.model import ModelParams, assemble_K, scaling_constant
from typeg.simulate import (FieldSample, OperatorSolver, char_function_G4, cross_covariance,
                            green_function, marginal_density_via_cf, matern_correlation,
                            simulate_field, simulate_observations, simulate_replicates)

from conftest import make_params


def equal_kappa_cross_cov(params, h, i, j):
    """Cross-covariance when κ_i = κ_j: a single Matérn with averaged exponent."""
    P = np.eye(params.p)
    k = 0
    for jj in range(params.p):
        for ii in range(jj + 1, params.p):
            P[ii, jj] = P[jj, ii] = params.rho[k]
            k += 1
    kap = params.kappa[i]
    a_bar = 0.5 * (params.alpha[i] + params.alpha[j])
    c = scaling_constant(params.sigma, params.kappa, params.alpha, params.d)
    c_bar = scaling_constant(1.0, kap, a_bar, params.d)
    # a unit-scaled operator has marginal variance c_bar²
    return P[i, j] * c_bar**2 / (c[i] * c[j]) * matern_correlation(h, kap, a_bar - params.d / 2)


def test_matern_closed_forms():
    h = np.linspace(0, 4, 9)
    assert matern_correlation(0.0, 1.3, 0.7) == 1.0
    assert np.allclose(matern_correlation(h, 1.3, 0.5), np.exp(-1.3 * h))
    assert np.allclose(matern_correlation(h, 0.8, 1.5), (1 + 0.8 * h) * np.exp(-0.8 * h))
    with pytest.raises(ValueError):
        matern_correlation(1.0, -1.0, 1.0)


@pytest.mark.parametrize("d", [1, 2])
def test_quadrature_reproduces_matern(d):
    P = ModelParams(p=2, d=d, kappa=[1.2, 0.7], sigma=[1.5, 1.0], alpha=[2, 2], rho=[0.3])
    h = np.linspace(0, 5 / 1.2, 12)
    exact = cross_covariance(P, h, 0, 0)
    quad = cross_covariance(P, h, 0, 0, method="quadrature")
    assert np.allclose(quad, exact, rtol=1e-4, atol=1e-4 * exact[0])


@pytest.mark.parametrize("d,alpha", [(1, [2, 2]), (2, [2, 4]), (2, [1.5, 2])])
def test_equal_kappa_cross_covariance_is_matern(d, alpha):
    P = ModelParams(p=2, d=d, kappa=[1.0, 1.0], sigma=[1.0, 2.0], alpha=alpha, rho=[0.5])
    h = np.linspace(0, 4, 9)
    assert np.allclose(cross_covariance(P, h, 0, 1), equal_kappa_cross_cov(P, h, 0, 1), atol=1e-5)


def test_figure_one_configuration_lag_zero():
    P = ModelParams(p=2, d=2, kappa=[1, 1], sigma=[1, 1], alpha=[1.5, 2], rho=[0.5])
    c0 = cross_covariance(P, 0.0, 0, 1)
    assert c0 == pytest.approx(equal_kappa_cross_cov(P, 0.0, 0, 1), rel=1e-6)
    # equal exponents give exactly ρ σ1 σ2 at lag zero
    P2 = P.replace(alpha=[2, 2])
    assert cross_covariance(P2, 0.0, 0, 1) == pytest.approx(0.5, rel=1e-6)


def test_operator_solver_matches_dense():
    fem = assemble_fem(interval_mesh(0, 3, 9))
    for alpha in ([2, 2], [2, 4]):
        P = make_params(alpha=alpha)
        b = np.random.default_rng(0).standard_normal((2 * fem.n, 3))
        x = OperatorSolver(P, fem).solve(b)
        assert np.allclose(assemble_K(P, fem).toarray() @ x, b)


def test_gaussian_variance_at_centre_2d():
    fem = assemble_fem(grid_mesh(-6, 6, -6, 6, 41, 41))
    P = ModelParams(p=1, d=2, kappa=1.0, sigma=1.0, alpha=2)
    centre = fem.n // 2
    W, _ = simulate_replicates(P, fem, 4, 1000, rows=[centre])
    se = np.sqrt(2 / 1000)
    assert abs(W[:, 0].var() - 1) < 4 * se + 0.05


def test_discrete_correlation_matches_matern_1d():
    fem = assemble_fem(interval_mesh(-20, 20, 801))
    P = ModelParams(p=1, d=1, kappa=1.0, sigma=1.0, alpha=2)
    K = assemble_K(P, fem).tocsc()
    i = fem.n // 2
    e = np.zeros(fem.n)
    e[i] = 1
    col = sp.linalg.spsolve(K, fem.h * sp.linalg.spsolve(K.T.tocsc(), e))
    lags = np.arange(0, 61, 5)
    h = fem.mesh.nodes[i + lags, 0] - fem.mesh.nodes[i, 0]
    corr = col[i + lags] / col[i]
    assert np.abs(corr - matern_correlation(h, 1.0, 1.5)).max() < 0.03


def test_replicates_independent_of_threads_and_batches():
    fem = assemble_fem(interval_mesh(0, 5, 30))
    P = make_params("G4")
    W1, f1 = simulate_replicates(P, fem, 9, 50, threads=1, batch=7)
    W2, f2 = simulate_replicates(P, fem, 9, 50, threads=3, batch=16)
    assert np.array_equal(W1, W2)
    assert all(np.array_equal(a, b) for a, b in zip(f1, f2))


def test_G3_dependence_without_correlation():
    fem = assemble_fem(interval_mesh(-30, 30, 601))
    P = ModelParams(p=2, d=1, kappa=[1, 1], sigma=[1, 1], alpha=2, mu=0.0, eta=0.5, rho=[0.0],
                    theta=[0.0], variant="G3")
    # pool nodes three ranges apart (nearly independent) to cut MC error
    nodes = np.arange(60, 541, 30)
    W, _ = simulate_replicates(P, fem, 3, 2000, rows=np.concatenate([nodes, fem.n + nodes]))
    x1, x2 = W[:, : nodes.size].ravel(), W[:, nodes.size:].ravel()
    assert abs(np.corrcoef(x1, x2)[0, 1]) < 0.05
    assert np.corrcoef(x1**2, x2**2)[0, 1] > 0.1


def test_simulate_observations_cases():
    mesh = interval_mesh(0, 4, 5)
    fem = assemble_fem(mesh)
    P = make_params("gaussian", sigma_e=[1e-300, 1e-300], beta=[1.0, -2.0])
    rng = np.random.default_rng(0)
    s = simulate_field(P, fem, rng)
    obs = Observations.from_points(mesh, mesh.nodes, np.zeros(5, int), np.zeros(5), 2)
    y = simulate_observations(s, obs, P, rng)
    assert np.allclose(y, 1.0 + s.w[:5])
    zero = FieldSample(w=np.zeros(10), vs=s.vs)
    assert np.allclose(simulate_observations(zero, obs, P, rng), 1.0)
    P2 = P.replace(sigma_e=[0.7, 0.7], beta=[0.0, 0.0])
    locs = np.full((20_000, 1), 1.3)
    obs2 = Observations.from_points(mesh, locs, np.zeros(20_000, int), np.zeros(20_000), 2)
    resid = simulate_observations(s, obs2, P2, rng) - obs2.A @ s.w
    assert resid.var() == pytest.approx(0.49, rel=0.03)
    with pytest.raises(ValueError):
        simulate_observations(FieldSample(w=np.zeros(3), vs=s.vs), obs, P, rng)


def test_green_function_requires_alpha_above_d():
    P = ModelParams(p=1, d=2, kappa=1.0, sigma=1.0, alpha=2, variant="G4")
    with pytest.raises(ValueError):
        green_function(P, 0, 0.0)


def g4_params(**kw):
    base = dict(p=2, d=1, kappa=[1.0, 1.5], sigma=[1.0, 0.8], alpha=2, mu=[0.7, -0.4], eta=[0.8, 1.6],
                rho=[0.4], theta=[0.6], variant="G4")
    base.update(kw)
    return ModelParams(**base)


def test_cf_normalisation_and_symmetry():
    P = g4_params()
    assert abs(char_function_G4(P, [0.0, 0.0]) - 1) < 1e-10
    U = np.random.default_rng(0).normal(0, 2, (30, 2))
    assert np.all(np.abs(char_function_G4(P, U)) <= 1 + 1e-12)
    sym = P.replace(mu=[0.0, 0.0])
    assert np.abs(char_function_G4(sym, U).imag).max() < 1e-12


def test_cf_second_moment_matches_green_variance():
    P = g4_params(mu=[0.0, 0.0], rho=[0.0], theta=[0.0])
    # with μ = 0 the marginal variance is σ_k², so log φ(t e_k) ≈ -σ_k² t²/2 near 0
    t = 1e-3
    phi = char_function_G4(P, [t, 0.0])
    assert -2 * np.log(phi.real) / t**2 == pytest.approx(1.0, rel=1e-3)


def test_cf_density_integrates_to_one():
    P = g4_params()
    x = np.linspace(-8, 8, 161)
    dens = marginal_density_via_cf(P, 0, x)
    assert np.trapezoid(dens, x) == pytest.approx(1, abs=1e-2)
    g = np.linspace(-7, 7, 71)
    dens2 = marginal_density_via_cf(P, (0, 1), (g, g), n_freq=128)
    assert np.trapezoid(np.trapezoid(dens2, g, axis=1), g) == pytest.approx(1, abs=1e-2)


def test_cf_half_turn_symmetries():
    P = g4_params()
    g = np.linspace(-4, 4, 21)
    a = marginal_density_via_cf(P, (0, 1), (g, g), n_freq=96)
    # D -> -D reflects the field through the origin
    turned = P.replace(theta=[P.theta[0] + np.pi])
    b = marginal_density_via_cf(turned, (0, 1), (g, g), n_freq=96)
    assert np.allclose(a, b[::-1, ::-1], atol=1e-10)
    # flipping the skewness as well reflects the noise back: same law
    both = turned.replace(mu=-P.mu)
    c = marginal_density_via_cf(both, (0, 1), (g, g), n_freq=96)
    assert np.allclose(a, c, atol=1e-10)
    assert np.abs(a - a[::-1, ::-1]).max() > 1e-3


def test_cf_gaussian_limit():
    P = g4_params(eta=[1e3, 1e3], mu=[0.0, 0.0])
    g = np.linspace(-3, 3, 13)
    dens = marginal_density_via_cf(P, (0, 1), (g, g), n_freq=96)
    C = np.array([[1.0, 0.0], [0.0, 0.64]])
    C[0, 1] = C[1, 0] = cross_covariance(P, 0.0, 0, 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    Z = np.stack([X, Y], -1)
    q = np.einsum("...i,ij,...j->...", Z, np.linalg.inv(C), Z)
    ref = np.exp(-0.5 * q) / (2 * np.pi * np.sqrt(np.linalg.det(C)))
    assert np.abs(dens - ref).max() < 0.01 * ref.max()


def test_cf_rejects_other_variants():
    with pytest.raises(ValueError):
        char_function_G4(g4_params(variant="G3", eta=1.0), [0.1, 0.1])
