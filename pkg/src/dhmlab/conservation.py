r"""
Div-curl structure of the sphere-valued system.

The map equation is rewritten as

.. math::

    \Delta\phi^m = A^{mi}\phi^i_x + B^{mi}\phi^i_y,

    A^{mi} = \langle e_1\cdot\psi^i, \psi^m\rangle - (\phi^i_x\phi^m - \phi^i\phi^m_x),
    \qquad
    B^{mi} = \langle e_2\cdot\psi^i, \psi^m\rangle - (\phi^i_y\phi^m - \phi^i\phi^m_y),

with antisymmetric coefficients that are divergence free on solutions,
:math:`A_x + B_y = 0`. A potential with :math:`M_y = A`, :math:`M_x = -B`
then gives :math:`-\Delta\phi = M_x\phi_y - M_y\phi_x`.

Coefficient arrays have shape ``(sx, sy, K, K)`` indexed ``[..., m, i]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dhmlab.clifford import clifford_mul, spinor_inner
from dhmlab.errors import UnsupportedTopology
from dhmlab.grid import Grid, diff, dirac_flat, interior_max, laplacian, second_diff
from dhmlab.sphere import (
    MapField,
    SpinorAlongMap,
    _check_pair,
    _residuals,
    default_margin,
    map_derivatives,
)


@dataclass
class CoefficientMatrices:
    grid: Grid
    A: np.ndarray
    B: np.ndarray

    def antisymmetry_defect(self) -> float:
        return float(max(np.abs(self.A + np.swapaxes(self.A, -1, -2)).max(),
                         np.abs(self.B + np.swapaxes(self.B, -1, -2)).max()))


@dataclass
class PotentialField:
    """Periodic potential plus the constant (harmonic) part of the currents.

    On a torus the currents may carry nonzero means, which no periodic
    function can produce as a gradient; they are kept as ``mean_a`` and
    ``mean_b`` so that ``M_y + mean_a`` approximates ``A`` and
    ``M_x - mean_b`` approximates ``-B``. ``M`` itself has zero mean per entry.
    """

    grid: Grid
    M: np.ndarray
    mean_a: np.ndarray
    mean_b: np.ndarray

    def gradient(self) -> tuple[np.ndarray, np.ndarray]:
        mx = diff(self.grid, self.M, "x") - self.mean_b
        my = diff(self.grid, self.M, "y") + self.mean_a
        return mx, my


def _pairing(alpha: int, psi: np.ndarray) -> np.ndarray:
    """``[..., m, i] = <e_a . psi^i, psi^m>``."""
    g = clifford_mul(alpha, psi)
    return spinor_inner(g[..., None, :, :], psi[..., :, None, :])


def _currents(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """``[..., m, i] = phi^i_a phi^m - phi^i phi^m_a``."""
    return dp[..., None, :] * p[..., :, None] - p[..., None, :] * dp[..., :, None]


def coefficient_matrices(phi: MapField, psi: SpinorAlongMap) -> CoefficientMatrices:
    _check_pair(phi, psi)
    px, py = map_derivatives(phi)
    p = phi.values
    A = _pairing(1, psi.values) - _currents(p, px)
    B = _pairing(2, psi.values) - _currents(p, py)
    return CoefficientMatrices(phi.grid, A, B)


def _contract(C: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("xymi,xyi->xym", C, v)


def laplacian_reconstruction(phi: MapField, coeffs: CoefficientMatrices) -> np.ndarray:
    r"""Pointwise :math:`\Delta\phi^m - A^{mi}\phi^i_x - B^{mi}\phi^i_y`."""
    px, py = map_derivatives(phi)
    return laplacian(phi.grid, phi.values) - _contract(coeffs.A, px) - _contract(coeffs.B, py)


def reconstruct_laplacian(phi: MapField, coeffs: CoefficientMatrices,
                          margin: int | None = None) -> float:
    """Interior max norm of :func:`laplacian_reconstruction`."""
    if margin is None:
        margin = default_margin(phi.grid)
    return interior_max(phi.grid, laplacian_reconstruction(phi, coeffs), margin)


def reconstruction_from_residuals(phi: MapField, psi: SpinorAlongMap) -> np.ndarray:
    r"""The same defect expressed through the map residual.

    Algebraically :math:`\Delta\phi - A\phi_x - B\phi_y = r_\phi -
    \sum_\alpha(\phi\cdot\phi_\alpha)\phi_\alpha`; the last term vanishes in
    the continuum and is O(h^2) for sphere-valued grid data.
    """
    _check_pair(phi, psi)
    r_map, _ = _residuals(phi, psi)
    px, py = map_derivatives(phi)
    p = phi.values
    return r_map - (p * px).sum(-1)[..., None] * px - (p * py).sum(-1)[..., None] * py


def divergence_field(coeffs: CoefficientMatrices) -> np.ndarray:
    """``A_x + B_y`` per matrix entry, by differencing the assembled arrays."""
    return diff(coeffs.grid, coeffs.A, "x") + diff(coeffs.grid, coeffs.B, "y")


def divergence_residual(coeffs: CoefficientMatrices, margin: int | None = None
                        ) -> tuple[np.ndarray, float]:
    grid = coeffs.grid
    if margin is None:
        margin = default_margin(grid)
    field = divergence_field(coeffs)
    window = grid.interior(margin)
    inner = np.abs(field[window])
    return field, float(inner.max()) if inner.size else 0.0


@dataclass
class DivergenceIdentity:
    """Three evaluations of ``A_x + B_y`` that must agree to rounding."""

    expanded: np.ndarray
    dirac_form: np.ndarray
    residual_form: np.ndarray

    def max_relative_gap(self) -> float:
        scale = max(float(np.abs(self.expanded).max()), 1e-300)
        gaps = (np.abs(self.expanded - self.dirac_form).max(),
                np.abs(self.dirac_form - self.residual_form).max(),
                np.abs(self.expanded - self.residual_form).max())
        return float(max(gaps)) / scale


def divergence_identity(phi: MapField, psi: SpinorAlongMap) -> DivergenceIdentity:
    r"""Evaluate the divergence of the coefficient matrices three ways.

    ``expanded``
        product rule applied term by term to the definitions of ``A`` and
        ``B``, using grid derivatives of ``psi`` and second differences of
        ``phi``;
    ``dirac_form``
        :math:`\langle\partial\!\!\!/\psi^i,\psi^m\rangle
        - \langle\psi^i,\partial\!\!\!/\psi^m\rangle
        - (\Delta\phi^i\phi^m - \Delta\phi^m\phi^i)`;
    ``residual_form``
        the same with the flat operators replaced by the two residuals of the
        coupled system, so it vanishes on solutions.

    Index layout ``[..., m, i]``. No solution property is assumed.
    """
    _check_pair(phi, psi)
    grid = phi.grid
    p = phi.values
    v = psi.values

    expanded = 0.0
    for alpha, d in ((1, "x"), (2, "y")):
        dv = diff(grid, v, d)
        g_dv = clifford_mul(alpha, dv)
        g_v = clifford_mul(alpha, v)
        expanded = expanded \
            + spinor_inner(g_dv[..., None, :, :], v[..., :, None, :]) \
            + spinor_inner(g_v[..., None, :, :], dv[..., :, None, :])
        pdd = second_diff(grid, p, d)
        expanded = expanded - (pdd[..., None, :] * p[..., :, None]
                               - p[..., None, :] * pdd[..., :, None])

    def antisym_pair(spin: np.ndarray, vec: np.ndarray) -> np.ndarray:
        # [m, i] = <spin^i, psi^m> - <psi^i, spin^m> - (vec^i p^m - vec^m p^i)
        s = spinor_inner(spin[..., None, :, :], v[..., :, None, :])
        return s - np.swapaxes(s, -1, -2) - (vec[..., None, :] * p[..., :, None]
                                              - p[..., None, :] * vec[..., :, None])

    dirac_form = antisym_pair(dirac_flat(grid, v), laplacian(grid, p))
    r_map, r_spin = _residuals(phi, psi)
    residual_form = antisym_pair(r_spin, r_map)
    return DivergenceIdentity(expanded, dirac_form, residual_form)


def frobenius_potential(coeffs: CoefficientMatrices, mean_tol: float = 1e-9) -> PotentialField:
    """Recover ``M`` with ``M_y = A``, ``M_x = -B`` on a torus.

    Solves the least-squares problem for the centered-difference gradient in
    Fourier space, which amounts to the Poisson equation
    ``(D_x^2 + D_y^2) M = D_y A - D_x B`` in the zero-mean gauge. Modes where
    the centered gradient vanishes (the constant and the checkerboards) are
    set to zero.
    """
    grid = coeffs.grid
    if not grid.periodic:
        raise UnsupportedTopology(
            f"potential reconstruction needs a torus, got topology {grid.topology!r}"
        )
    A, B = coeffs.A, coeffs.B
    rhs = diff(grid, A, "y") - diff(grid, B, "x")
    mean_rhs = rhs.mean(axis=(0, 1))
    scale = max(float(np.abs(rhs).max()), 1.0)
    if np.abs(mean_rhs).max() > mean_tol * scale:
        raise ValueError(
            f"curl of the currents has nonzero mean {float(np.abs(mean_rhs).max()):.3e}; "
            "no periodic potential exists"
        )

    mean_a = A.mean(axis=(0, 1))
    mean_b = B.mean(axis=(0, 1))
    h = grid.h
    kx = 2.0 * np.pi * np.fft.fftfreq(grid.nx, d=h)
    ky = 2.0 * np.pi * np.fft.fftfreq(grid.ny, d=h)
    sx = np.sin(kx * h)[:, None] / h
    sy = np.sin(ky * h)[None, :] / h
    denom = sx ** 2 + sy ** 2
    null = denom < 1e-12 * denom.max()
    denom = np.where(null, 1.0, denom)

    a_hat = np.fft.fft2(A - mean_a, axes=(0, 1))
    b_hat = np.fft.fft2(B - mean_b, axes=(0, 1))
    # D_y^T A - D_x^T B with symbol i*s, transposes carry -i*s
    m_hat = (-1j * sy[..., None, None] * a_hat + 1j * sx[..., None, None] * b_hat) \
        / denom[..., None, None]
    m_hat[null] = 0.0
    M = np.fft.ifft2(m_hat, axes=(0, 1)).real
    M -= M.mean(axis=(0, 1))
    return PotentialField(grid, M, mean_a, mean_b)


def potential_defect(pot: PotentialField, coeffs: CoefficientMatrices) -> float:
    """``max|M_y - A| + max|M_x + B|`` including the harmonic part."""
    mx, my = pot.gradient()
    return float(np.abs(my - coeffs.A).max() + np.abs(mx + coeffs.B).max())


def wente_field(phi: MapField, pot: PotentialField) -> np.ndarray:
    r"""Pointwise :math:`\Delta\phi + M_x\phi_y - M_y\phi_x`."""
    px, py = map_derivatives(phi)
    mx, my = pot.gradient()
    return laplacian(phi.grid, phi.values) + _contract(mx, py) - _contract(my, px)


def wente_residual(phi: MapField, pot: PotentialField, margin: int | None = None) -> float:
    if margin is None:
        margin = default_margin(phi.grid)
    return interior_max(phi.grid, wente_field(phi, pot), margin)
