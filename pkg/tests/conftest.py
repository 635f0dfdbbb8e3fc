import numpy as np
import pytest
from hypothesis import settings

from typeg.inference import Observations, SpdeSystem
from typeg.mesh import assemble_fem, grid_mesh, interval_mesh
from typeg.model import ModelParams

settings.register_profile("typeg", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("typeg")


def make_params(variant="G4", p=2, d=1, **kw):
    base = dict(p=p, d=d, kappa=np.linspace(1.0, 1.6, p), sigma=np.linspace(1.0, 0.7, p),
                alpha=2.0, mu=np.linspace(0.6, -0.4, p), eta=np.linspace(0.8, 1.5, p),
                sigma_e=np.linspace(0.3, 0.5, p), rho=[0.4, -0.2, 0.3][: p * (p - 1) // 2],
                theta=[0.3, 1.1, 2.0][: {1: 0, 2: 1, 3: 3}[p]], variant=variant)
    if variant in ("gaussian", "G1", "G3"):
        base["eta"] = 0.9
    base.update(kw)
    return ModelParams(**base)


def make_system(params, mesh, n_obs=12, seed=0, intercept=True):
    """Random point observations on ``mesh`` (values are standard normal)."""
    rng = np.random.default_rng(seed)
    lo, hi = mesh.bounds()
    locs = lo + (hi - lo) * rng.random((n_obs, mesh.dimension))
    dims = rng.integers(0, params.p, n_obs)
    y = rng.standard_normal(n_obs)
    obs = Observations.from_points(mesh, locs, dims, y, params.p, intercept=intercept)
    return SpdeSystem(assemble_fem(mesh), obs, alpha=params.alpha)


@pytest.fixture
def mesh1d():
    return interval_mesh(0.0, 3.0, 10)


@pytest.fixture
def mesh2d():
    return grid_mesh(0.0, 2.0, 0.0, 2.0, 5, 5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
