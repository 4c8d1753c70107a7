import numpy as np
import pytest

from dhmlab.bubbles import elliptic_bubble
from dhmlab.conservation import (
    CoefficientMatrices,
    coefficient_matrices,
    divergence_identity,
    divergence_residual,
    frobenius_potential,
    laplacian_reconstruction,
    potential_defect,
    reconstruct_laplacian,
    reconstruction_from_residuals,
    wente_residual,
)
from dhmlab.errors import UnsupportedTopology
from dhmlab.grid import make_grid
from dhmlab.sphere import map_derivatives, zero_spinor
from helpers import constant_map, smooth_pair


def test_constant_map_everything_zero():
    g = make_grid("torus", 1, 1, 16, 16)
    phi = constant_map(g)
    c = coefficient_matrices(phi, zero_spinor(phi))
    assert np.abs(c.A).max() == 0 and np.abs(c.B).max() == 0
    assert reconstruct_laplacian(phi, c) == 0
    assert divergence_residual(c)[1] == 0
    pot = frobenius_potential(c)
    assert np.abs(pot.M).max() == 0
    assert wente_residual(phi, pot) == 0


def test_harmonic_currents_when_psi_zero():
    _, phi, _ = smooth_pair(seed=1)
    c = coefficient_matrices(phi, zero_spinor(phi))
    px, _ = map_derivatives(phi)
    p = phi.values
    expected = -(px[..., None, :] * p[..., :, None] - p[..., None, :] * px[..., :, None])
    np.testing.assert_array_equal(c.A, expected)


@pytest.mark.parametrize("topology", ["torus", "rectangle"])
def test_antisymmetry_and_identity_chain(topology):
    _, phi, psi = smooth_pair(topology, n=48, seed=2)
    c = coefficient_matrices(phi, psi)
    assert c.antisymmetry_defect() <= 1e-12 * np.abs(c.A).max()
    assert divergence_identity(phi, psi).max_relative_gap() <= 1e-8


def test_reconstruction_matches_residual_form():
    _, phi, psi = smooth_pair(seed=3)
    c = coefficient_matrices(phi, psi)
    a = laplacian_reconstruction(phi, c)
    b = reconstruction_from_residuals(phi, psi)
    assert reconstruct_laplacian(phi, c) > 0
    assert np.abs(a - b).max() <= 1e-10 * np.abs(a).max()


def test_manufactured_potential_second_order():
    errs = []
    for n in (32, 64, 128):
        g = make_grid("torus", 1, 1, n, n)
        X, Y = g.mesh()
        k = 2 * np.pi
        m = np.sin(k * X) * np.cos(2 * k * Y)
        A = np.zeros(g.shape + (2, 2))
        B = np.zeros_like(A)
        A[..., 0, 1] = -2 * k * np.sin(k * X) * np.sin(2 * k * Y)   # exact M_y
        B[..., 0, 1] = -k * np.cos(k * X) * np.cos(2 * k * Y)       # exact -M_x
        A[..., 1, 0], B[..., 1, 0] = -A[..., 0, 1], -B[..., 0, 1]
        pot = frobenius_potential(CoefficientMatrices(g, A, B))
        errs.append(np.abs(pot.M[..., 0, 1] - m).max())
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_potential_rejects_rectangle_and_curl_mean():
    _, phi, psi = smooth_pair("rectangle", seed=4)
    with pytest.raises(UnsupportedTopology):
        frobenius_potential(coefficient_matrices(phi, psi))


def test_harmonic_part_kept():
    g = make_grid("torus", 1, 1, 16, 16)
    A = np.zeros(g.shape + (2, 2))
    B = np.zeros_like(A)
    A[..., 0, 1], A[..., 1, 0] = 0.7, -0.7
    pot = frobenius_potential(CoefficientMatrices(g, A, B))
    assert np.abs(pot.M).max() == 0
    assert potential_defect(pot, CoefficientMatrices(g, A, B)) < 1e-14


def test_wente_bounded_below_on_non_solution():
    _, phi, psi = smooth_pair(seed=5)
    c = coefficient_matrices(phi, psi)
    pot = frobenius_potential(c)
    px, py = map_derivatives(phi)
    grad = np.sqrt((px ** 2 + py ** 2).sum(-1)).max()
    lower = reconstruct_laplacian(phi, c) - grad * potential_defect(pot, c)
    assert wente_residual(phi, pot) >= lower - 1e-12


def test_elliptic_bubble_conservation_converges():
    div, wen = [], []
    for n in (64, 128, 256):
        g = make_grid("torus", 1, 1, n, n)
        phi = elliptic_bubble(g, 0.2, center=(0.0123, -0.0071))
        c = coefficient_matrices(phi, zero_spinor(phi))
        div.append(divergence_residual(c)[1])
        wen.append(wente_residual(phi, frobenius_potential(c)))
    for seq in (div, wen):
        assert seq[0] / seq[1] > 3.5 and seq[1] / seq[2] > 3.5
