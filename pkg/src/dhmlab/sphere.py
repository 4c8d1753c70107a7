r"""
Maps into the unit sphere :math:`S^n \subset \mathbb{R}^{n+1}` and spinors
along them, treated extrinsically.

A map is stored as an array ``(sx, sy, K)`` with ``K = n + 1`` and a spinor
along the map as ``(sx, sy, K, 2)``: one two-component spinor per ambient
coordinate, subject to the tangency constraint
:math:`\sum_i \phi^i \psi^i = 0`.

For the round sphere the extrinsic data are explicit:

* second fundamental form :math:`A(X, Y) = -\langle X, Y\rangle p`,
* shape operator :math:`P(f p; X) = -f X`,
* curvature :math:`R(X, Y)Z = \langle Y, Z\rangle X - \langle X, Z\rangle Y`.

The coupled system solved here is, with :math:`\phi_\alpha = \partial_\alpha\phi`,

.. math::

    \partial\!\!\!/\,\psi^m + \sum_i (\nabla\phi^i\cdot\psi^i)\,\phi^m = 0, \qquad
    \Delta\phi^m + |d\phi|^2\phi^m
        - \sum_i \phi^i_\alpha \langle e_\alpha\cdot\psi^i, \psi^m\rangle = 0.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from dhmlab.clifford import clifford_mul, spinor_inner
from dhmlab.errors import GridError, InvariantError
from dhmlab.grid import Grid, diff, dirac_flat, interior_max, laplacian, quadrature

SPHERE_TOL = 1e-12
TANGENCY_TOL = 1e-10
HUGE_SPINOR_ENERGY = 1e6


@dataclass
class MapField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[:2] != self.grid.shape:
            raise GridError(
                f"map values must have shape {self.grid.shape + ('K',)}, got {self.values.shape}"
            )

    @property
    def n(self) -> int:
        return self.values.shape[-1] - 1

    def validate(self, tol: float = SPHERE_TOL) -> None:
        dev = np.abs(np.sqrt((self.values ** 2).sum(axis=-1)) - 1.0)
        worst = float(dev.max())
        if not np.isfinite(worst) or worst > tol:
            site = np.unravel_index(int(np.nanargmax(np.where(np.isfinite(dev), dev, np.inf))),
                                    dev.shape)
            raise InvariantError(
                f"map leaves the unit sphere at site {tuple(int(s) for s in site)}: "
                f"||phi|-1| = {worst:.3e} > {tol:.1e}"
            )


@dataclass
class SpinorAlongMap:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim != 4 or self.values.shape[:2] != self.grid.shape \
                or self.values.shape[-1] != 2:
            raise GridError(
                f"spinor values must have shape {self.grid.shape + ('K', 2)}, "
                f"got {self.values.shape}"
            )

    def normal_part(self, phi: MapField) -> np.ndarray:
        return np.einsum("xyk,xyks->xys", phi.values, self.values)

    def validate(self, phi: MapField, tol: float = TANGENCY_TOL) -> None:
        if phi.grid != self.grid or phi.values.shape[-1] != self.values.shape[-2]:
            raise GridError("map and spinor live on different grids or targets")
        dev = np.abs(self.normal_part(phi)).max(axis=-1)
        worst = float(dev.max())
        if not np.isfinite(worst) or worst > tol:
            site = np.unravel_index(int(np.argmax(dev)), dev.shape)
            raise InvariantError(
                f"spinor is not tangent at site {tuple(int(s) for s in site)}: "
                f"|sum phi^i psi^i| = {worst:.3e} > {tol:.1e}"
            )


def zero_spinor(phi: MapField) -> SpinorAlongMap:
    sx, sy, k = phi.values.shape
    return SpinorAlongMap(phi.grid, np.zeros((sx, sy, k, 2), dtype=complex))


def _check_pair(phi: MapField, psi: SpinorAlongMap) -> None:
    phi.validate()
    psi.validate(phi)


# --- pointwise geometry -----------------------------------------------------


def project_sphere(grid: Grid, raw: np.ndarray) -> MapField:
    """Normalize every site onto the unit sphere."""
    raw = np.asarray(raw, dtype=float)
    norm = np.sqrt((raw * raw).sum(axis=-1))
    bad = ~(norm > 0) | ~np.isfinite(norm)
    if bad.any():
        site = tuple(int(s) for s in np.argwhere(bad)[0])
        raise InvariantError(f"cannot project a zero or non-finite vector at site {site}")
    return MapField(grid, raw / norm[..., None])


def project_tangent(phi: MapField, raw: np.ndarray) -> SpinorAlongMap:
    r"""Remove the normal part: :math:`\psi^i - \phi^i\sum_j\phi^j\psi^j`."""
    raw = np.asarray(raw, dtype=complex)
    normal = np.einsum("xyk,xyks->xys", phi.values, raw)
    return SpinorAlongMap(phi.grid, raw - phi.values[..., None] * normal[..., None, :])


def tangent_projector(p: np.ndarray) -> np.ndarray:
    """``I - p p^T`` for every point (trailing axis ``K``)."""
    p = np.asarray(p, dtype=float)
    k = p.shape[-1]
    return np.eye(k) - p[..., :, None] * p[..., None, :]


def second_fundamental(X: np.ndarray, Y: np.ndarray, p: np.ndarray, tol: float = 1e-8):
    """:math:`A(X, Y) = -\\langle X, Y\\rangle p` for tangent ``X``, ``Y`` at ``p``."""
    X, Y, p = (np.asarray(a, dtype=float) for a in (X, Y, p))
    if max(np.abs((X * p).sum(-1)).max(), np.abs((Y * p).sum(-1)).max()) > tol:
        raise InvariantError("second fundamental form needs tangent arguments")
    return -(X * Y).sum(-1)[..., None] * p


def shape_operator(xi: np.ndarray, X: np.ndarray, p: np.ndarray, tol: float = 1e-8):
    """:math:`P(\\xi; X) = -\\langle\\xi, p\\rangle X` for normal ``xi`` and tangent ``X``."""
    xi, X, p = (np.asarray(a, dtype=float) for a in (xi, X, p))
    f = (xi * p).sum(-1)
    scale = np.maximum(1.0, np.abs(xi).max(axis=-1))
    if (np.abs(xi - f[..., None] * p).max(axis=-1) / scale).max() > tol:
        raise InvariantError("shape operator needs a normal vector")
    if np.abs((X * p).sum(-1)).max() > tol:
        raise InvariantError("shape operator needs a tangent direction")
    return -f[..., None] * X


def curvature_tensor(p: np.ndarray) -> np.ndarray:
    r"""Ambient components ``R[m, l, i, j]`` of the round metric at ``p``.

    ``R[m, l, i, j]`` is the ``m``-th component of
    :math:`R(Pe_i, Pe_j)Pe_l = \langle Pe_j, Pe_l\rangle Pe_i - \langle Pe_i, Pe_l\rangle Pe_j`.
    """
    P = tangent_projector(p)
    return (np.einsum("...jl,...im->...mlij", P, P)
            - np.einsum("...il,...jm->...mlij", P, P))


def _clifford_pairs(psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``C_a[..., i, j] = <psi^i, e_a . psi^j>`` for a = 1, 2."""
    out = []
    for alpha in (1, 2):
        g_psi = clifford_mul(alpha, psi)
        out.append(spinor_inner(psi[..., :, None, :], g_psi[..., None, :, :]))
    return out[0], out[1]


def curvature_term_pointwise(p, dphi_x, dphi_y, psi) -> np.ndarray:
    r""":math:`\tfrac12 R^m{}_{lij}\langle\psi^i, \nabla\phi^l\cdot\psi^j\rangle` per site."""
    R = curvature_tensor(p)
    c1, c2 = _clifford_pairs(psi)
    q = dphi_x[..., :, None, None] * c1[..., None, :, :] \
        + dphi_y[..., :, None, None] * c2[..., None, :, :]
    return 0.5 * np.einsum("...mlij,...lij->...m", R, q)


def curvature_term_extrinsic_pointwise(p, dphi_x, dphi_y, psi) -> np.ndarray:
    r""":math:`P(A(\partial_l, \partial_j); \partial_i)\langle\psi^i, e_\alpha\cdot\psi^j\rangle\phi^l_\alpha`.

    Assembled from :func:`second_fundamental` and :func:`shape_operator`
    evaluated on the projected coordinate vectors.
    """
    p = np.asarray(p, dtype=float)
    E = tangent_projector(p)  # row l is P e_l
    pk = p[..., None, None, :]
    A = second_fundamental(E[..., :, None, :], E[..., None, :, :], pk)  # [l, j, :]
    S = shape_operator(A[..., :, :, None, :], E[..., None, None, :, :],
                       p[..., None, None, None, :])  # [l, j, i, :]
    c1, c2 = _clifford_pairs(psi)
    w = dphi_x[..., :, None, None] * np.swapaxes(c1, -1, -2)[..., None, :, :] \
        + dphi_y[..., :, None, None] * np.swapaxes(c2, -1, -2)[..., None, :, :]
    # w[l, j, i] = <psi^i, e_a psi^j> phi^l_a
    return np.einsum("...ljim,...lji->...m", S, w)


# --- field operators ----------------------------------------------------------


def map_derivatives(phi: MapField) -> tuple[np.ndarray, np.ndarray]:
    return diff(phi.grid, phi.values, "x"), diff(phi.grid, phi.values, "y")


def energy_density_map(phi: MapField) -> np.ndarray:
    px, py = map_derivatives(phi)
    return (px * px).sum(-1) + (py * py).sum(-1)


def spinor_density(psi: SpinorAlongMap) -> np.ndarray:
    r""":math:`|\psi|^2 = \sum_i |\psi^i|^2` per site."""
    v = psi.values
    return (v.real ** 2 + v.imag ** 2).sum(axis=(-1, -2))


def curvature_term(phi: MapField, psi: SpinorAlongMap) -> np.ndarray:
    _check_pair(phi, psi)
    px, py = map_derivatives(phi)
    return curvature_term_pointwise(phi.values, px, py, psi.values)


def curvature_term_extrinsic(phi: MapField, psi: SpinorAlongMap) -> np.ndarray:
    _check_pair(phi, psi)
    px, py = map_derivatives(phi)
    return curvature_term_extrinsic_pointwise(phi.values, px, py, psi.values)


def spinor_source(phi: MapField, psi: SpinorAlongMap, derivs=None) -> np.ndarray:
    r""":math:`\sum_i \phi^i_\alpha\langle e_\alpha\cdot\psi^i, \psi^m\rangle`, one vector per site."""
    px, py = map_derivatives(phi) if derivs is None else derivs
    v = psi.values
    out = np.zeros(phi.values.shape)
    for alpha, d in ((1, px), (2, py)):
        g = clifford_mul(alpha, v)
        # pairs[..., i, m] = <e_a psi^i, psi^m>
        pairs = spinor_inner(g[..., :, None, :], v[..., None, :, :])
        out += np.einsum("xyi,xyim->xym", d, pairs)
    return out


def clifford_map_action(phi: MapField, psi: SpinorAlongMap, derivs=None) -> np.ndarray:
    r""":math:`\sum_i \nabla\phi^i\cdot\psi^i`, a single spinor per site."""
    px, py = map_derivatives(phi) if derivs is None else derivs
    v = psi.values
    return (np.einsum("xyi,xyis->xys", px, clifford_mul(1, v))
            + np.einsum("xyi,xyis->xys", py, clifford_mul(2, v)))


def dirac_along_map(phi: MapField, psi: SpinorAlongMap, *, check: bool = True) -> np.ndarray:
    r"""Extrinsic Dirac operator along the map.

    :math:`\partial\!\!\!/\,\psi^m + \phi^m\sum_i\nabla\phi^i\cdot\psi^i`; it
    vanishes exactly on solutions of the spinor equation.
    """
    if check:
        _check_pair(phi, psi)
    flat = dirac_flat(phi.grid, psi.values)
    twist = clifford_map_action(phi, psi)
    return flat + phi.values[..., None] * twist[..., None, :]


def dirac_along_map_adjoint(phi: MapField, xi: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`dirac_along_map` for the quadrature pairing on the torus.

    *xi* is an arbitrary (not necessarily tangent) spinor array.
    """
    px, py = map_derivatives(phi)
    normal = np.einsum("xyk,xyks->xys", phi.values, xi)
    twist = (px[..., None] * clifford_mul(1, normal)[..., None, :]
             + py[..., None] * clifford_mul(2, normal)[..., None, :])
    return dirac_flat(phi.grid, xi) - twist


def el_residuals(phi: MapField, psi: SpinorAlongMap) -> tuple[np.ndarray, np.ndarray]:
    """Map and spinor residuals of the coupled system.

    The map residual is :math:`\\Delta\\phi + |d\\phi|^2\\phi + S` with the
    spinor source :math:`S^m = -\\sum_i\\phi^i_\\alpha\\langle e_\\alpha\\cdot\\psi^i,\\psi^m\\rangle`;
    the spinor residual is :func:`dirac_along_map`.
    """
    _check_pair(phi, psi)
    return _residuals(phi, psi)


def _residuals(phi: MapField, psi: SpinorAlongMap):
    derivs = map_derivatives(phi)
    px, py = derivs
    dens = (px * px).sum(-1) + (py * py).sum(-1)
    r_map = laplacian(phi.grid, phi.values) + dens[..., None] * phi.values \
        - spinor_source(phi, psi, derivs)
    twist = clifford_map_action(phi, psi, derivs)
    r_spin = dirac_flat(phi.grid, psi.values) + phi.values[..., None] * twist[..., None, :]
    return r_map, r_spin


def tangential_residuals(phi: MapField, psi: SpinorAlongMap):
    """Tangential parts of the residuals: the quantities relaxation drives to zero.

    On a grid the normal components of both residuals carry an O(h^2)
    truncation floor even at discrete fixed points.
    """
    r_map, r_spin = _residuals(phi, psi)
    p = phi.values
    r_map = r_map - (r_map * p).sum(-1)[..., None] * p
    r_spin = project_tangent(phi, r_spin).values
    return r_map, r_spin


def default_margin(grid: Grid) -> int:
    return 0 if grid.periodic else 2


@dataclass
class EnergyReport:
    e_map: float
    e_spinor: float
    l_value: float
    residual_map: float
    residual_spinor: float
    grid: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def converged(self, tol_scale: float = 1e-6) -> bool:
        bound = tol_scale * (1.0 + self.e_map)
        return self.residual_map <= bound and self.residual_spinor <= bound

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def energies(phi: MapField, psi: SpinorAlongMap | None = None, margin: int | None = None
             ) -> EnergyReport:
    r"""Dirichlet energy, :math:`\int|\psi|^4`, the functional value and residual norms."""
    if psi is None:
        psi = zero_spinor(phi)
    _check_pair(phi, psi)
    grid = phi.grid
    if margin is None:
        margin = default_margin(grid)
    e_map = quadrature(grid, energy_density_map(phi))
    e_spinor = quadrature(grid, spinor_density(psi) ** 2)
    r_map, r_spin = _residuals(phi, psi)
    dirac_term = quadrature(grid, spinor_inner(psi.values, r_spin).sum(-1))
    flags = []
    if e_spinor > HUGE_SPINOR_ENERGY:
        flags.append("huge-spinor")
    return EnergyReport(
        e_map=e_map,
        e_spinor=e_spinor,
        l_value=e_map + dirac_term,
        residual_map=interior_max(grid, r_map, margin),
        residual_spinor=interior_max(grid, r_spin, margin),
        grid=grid.to_dict(),
        flags=flags,
    )
