import numpy as np
import pytest
from hypothesis import given, strategies as st

from typeg.mesh import (Mesh, MeshError, assemble_fem, grid_mesh, interval_mesh, load_mesh,
                        observation_matrix, padded_mesh, save_mesh)


def write(tmp_path, text):
    path = tmp_path / "m.txt"
    path.write_text(text)
    return path


def test_load_small_interval(tmp_path):
    mesh = load_mesh(write(tmp_path, "1 3 2\n0\n0.5\n1\n0 1\n1 2\n"))
    assert mesh.dimension == 1 and mesh.n_nodes == 3 and mesh.n_elements == 2


def test_load_unit_square(tmp_path):
    mesh = load_mesh(write(tmp_path, "2 4 2\n0 0\n1 0\n1 1\n0 1\n0 1 2\n0 2 3\n"))
    assert mesh.n_elements == 2
    fem = assemble_fem(mesh)
    assert fem.c_diag.sum() == pytest.approx(1.0)
    assert fem.h.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("text", [
    "2 4 2\n0 0\n1 0\n1 1\n0 1\n0 1 2\n0 2 4\n",   # index n
    "2 3 1\n0 0\n1 0\n2 0\n0 1 2\n",              # zero area
    "1 3 2\n0\n0.5\n1\n0 1\n",                     # missing line
    "1 3 2\n0\n0\n1\n0 1\n1 2\n",                  # zero length
    "2 5 3\n0 0\n1 0\n1 1\n0 1\n0.5 0.5\n0 1 2\n0 2 3\n0 1 4\n",  # overlap
])
def test_invalid_files_raise(tmp_path, text):
    with pytest.raises(MeshError):
        load_mesh(write(tmp_path, text))


def test_save_load_round_trip(tmp_path):
    mesh = grid_mesh(0, 1, 0, 2, 4, 5)
    save_mesh(mesh, tmp_path / "g.txt")
    back = load_mesh(tmp_path / "g.txt")
    assert np.array_equal(back.nodes, mesh.nodes) and np.array_equal(back.elements, mesh.elements)


def test_uniform_interval_stencil():
    delta = 0.25
    fem = assemble_fem(interval_mesh(0.0, 2.0, 9))
    G = fem.G.toarray()
    i = 4
    assert fem.c_diag[i] == pytest.approx(delta)
    assert fem.h[i] == pytest.approx(delta)
    assert G[i, i - 1:i + 2] == pytest.approx([-1 / delta, 2 / delta, -1 / delta])
    assert fem.h[0] == pytest.approx(delta / 2)


def test_refinement_halves_interior_mass():
    a = assemble_fem(interval_mesh(0, 1, 11))
    b = assemble_fem(interval_mesh(0, 1, 21))
    assert b.c_diag[1:-1].max() == pytest.approx(a.c_diag[1:-1].min() / 2)
    assert b.h[2] == pytest.approx(a.h[1] / 2)


def test_consistent_diagonal_mass_option():
    fem = assemble_fem(interval_mesh(0, 1, 11), mass="diagonal_consistent")
    assert fem.c_diag[3] == pytest.approx(2 * 0.1 / 3)
    assert fem.mass == "diagonal_consistent"


@given(nx=st.integers(2, 7), ny=st.integers(2, 7), w=st.floats(0.1, 5), hgt=st.floats(0.1, 5))
def test_grid_invariants(nx, ny, w, hgt):
    fem = assemble_fem(grid_mesh(0, w, 0, hgt, nx, ny))
    G = fem.G.toarray()
    assert np.allclose(G, G.T)
    assert np.allclose(G.sum(axis=1), 0, atol=1e-10 * np.abs(G).max())
    assert np.linalg.eigvalsh(G).min() > -1e-9 * np.abs(G).max()
    assert np.all(fem.h > 0)
    assert fem.h.sum() == pytest.approx(w * hgt)


def test_observation_rows():
    m1 = interval_mesh(0, 1, 3)
    A = observation_matrix(m1, [[0.5], [0.25]]).toarray()
    assert A[0] == pytest.approx([0, 1, 0])
    assert A[1] == pytest.approx([0.5, 0.5, 0])
    m2 = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    A2 = observation_matrix(m2, [[1 / 3, 1 / 3]]).toarray()
    assert A2[0] == pytest.approx([1 / 3] * 3)


def test_observation_outside_raises():
    with pytest.raises(MeshError):
        observation_matrix(interval_mesh(0, 1, 5), [[1.5]])
    with pytest.raises(MeshError):
        observation_matrix(grid_mesh(0, 1, 0, 1, 3, 3), [[0.5, 1.2]])


@given(st.lists(st.tuples(st.floats(0, 3), st.floats(0, 2)), min_size=1, max_size=20),
       st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_linear_functions_reproduced(pts, a, b, c):
    mesh = grid_mesh(0, 3, 0, 2, 7, 5)
    f = a + b * mesh.nodes[:, 0] + c * mesh.nodes[:, 1]
    P = np.array(pts)
    A = observation_matrix(mesh, P)
    assert np.allclose(A.sum(axis=1), 1)
    assert np.all(np.diff(A.indptr) <= 3)
    assert np.allclose(A @ f, a + b * P[:, 0] + c * P[:, 1], atol=1e-12)


def test_padded_mesh_covers_range():
    mesh = padded_mesh(np.array([[0.0, 0.0], [1.0, 1.0]]), 0.25, kappa_min=2.0)
    lo, hi = mesh.bounds()
    assert np.all(lo <= -1.0 + 1e-12) and np.all(hi >= 2.0 - 1e-12)
