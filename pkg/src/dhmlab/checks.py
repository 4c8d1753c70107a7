"""
The invariant suite behind ``dhmlab check``.

Each check is evaluated on seeded random data and compared against a relative
tolerance. The names are stable; scripts and tests match on them.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from dhmlab.clifford import active_basis, clifford_mul, spinor_inner
from dhmlab.conservation import coefficient_matrices, divergence_identity
from dhmlab.grid import Grid, dirac_flat, make_grid, quadrature
from dhmlab.solver import random_smooth_field
from dhmlab.sphere import (
    MapField,
    curvature_term_extrinsic_pointwise,
    curvature_term_pointwise,
    dirac_along_map,
    project_sphere,
    project_tangent,
    second_fundamental,
    shape_operator,
    tangent_projector,
)

ALGEBRA_TOL = 1e-12
CURVATURE_TOL = 1e-10
CHAIN_TOL = 1e-8


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _rel(err: float, scale: float) -> float:
    return float(err) / max(float(scale), 1e-300)


def _random_spinors(rng, shape):
    return rng.standard_normal(shape + (2,)) + 1j * rng.standard_normal(shape + (2,))


def check_clifford_square(rng) -> float:
    b = active_basis()
    return max(np.abs(b.matrix(a) @ b.matrix(a) + np.eye(2)).max() for a in (1, 2))


def check_clifford_anticommutation(rng) -> float:
    b = active_basis()
    return float(np.abs(b.g1 @ b.g2 + b.g2 @ b.g1).max())


def check_clifford_skew(rng) -> float:
    xi = _random_spinors(rng, (256,))
    eta = _random_spinors(rng, (256,))
    worst = 0.0
    for a in (1, 2):
        lhs = spinor_inner(clifford_mul(a, xi), eta)
        rhs = -spinor_inner(xi, clifford_mul(a, eta))
        worst = max(worst, _rel(np.abs(lhs - rhs).max(), np.abs(lhs).max()))
    return worst


def _smooth_pair(grid: Grid, rng):
    pole = np.zeros(3)
    pole[-1] = 1.0
    phi = project_sphere(grid, pole + 0.6 * random_smooth_field(grid, (3,), rng, kmax=3))
    psi = project_tangent(phi, random_smooth_field(grid, (3, 2), rng, kmax=3,
                                                   complex_valued=True))
    return phi, psi


def check_dirac_summation_by_parts(rng) -> float:
    """Symmetry of the flat and the map-twisted Dirac operators on a torus."""
    grid = make_grid("torus", 1.0, 1.0, 32, 32)
    a = _random_spinors(rng, grid.shape)
    b = _random_spinors(rng, grid.shape)
    lhs = quadrature(grid, spinor_inner(dirac_flat(grid, a), b))
    rhs = quadrature(grid, spinor_inner(a, dirac_flat(grid, b)))
    flat = _rel(abs(lhs - rhs), abs(lhs))

    phi, psi = _smooth_pair(grid, rng)
    _, xi = _smooth_pair(grid, rng)
    xi = project_tangent(phi, xi.values)
    lhs = quadrature(grid, spinor_inner(dirac_along_map(phi, psi), xi.values).sum(-1))
    rhs = quadrature(grid, spinor_inner(psi.values, dirac_along_map(phi, xi)).sum(-1))
    return max(flat, _rel(abs(lhs - rhs), abs(lhs)))


def check_projection_idempotent(rng) -> float:
    p = rng.standard_normal((256, 4))
    p /= np.linalg.norm(p, axis=-1, keepdims=True)
    P = tangent_projector(p)
    return float(np.abs(P @ P - P).max())


def check_fundamental_duality(rng) -> float:
    r""":math:`\langle A(X, Y), \xi\rangle = \langle P(\xi; X), Y\rangle` at random points."""
    p = rng.standard_normal((256, 3))
    p /= np.linalg.norm(p, axis=-1, keepdims=True)
    P = tangent_projector(p)
    X = np.einsum("sij,sj->si", P, rng.standard_normal((256, 3)))
    Y = np.einsum("sij,sj->si", P, rng.standard_normal((256, 3)))
    xi = rng.standard_normal((256, 1)) * p
    lhs = (second_fundamental(X, Y, p) * xi).sum(-1)
    rhs = (shape_operator(xi, X, p) * Y).sum(-1)
    return _rel(np.abs(lhs - rhs).max(), np.abs(lhs).max())


def random_sites(rng, count: int = 100, n: int = 2):
    """Points, tangent derivatives and tangent spinors at unrelated sites."""
    k = n + 1
    p = rng.standard_normal((count, k))
    p /= np.linalg.norm(p, axis=-1, keepdims=True)
    P = tangent_projector(p)
    dx = np.einsum("sij,sj->si", P, rng.standard_normal((count, k)))
    dy = np.einsum("sij,sj->si", P, rng.standard_normal((count, k)))
    psi = np.einsum("sij,sjt->sit", P, _random_spinors(rng, (count, k)))
    return p, dx, dy, psi


def check_curvature_identity(rng) -> float:
    p, dx, dy, psi = random_sites(rng, 100)
    a = curvature_term_pointwise(p, dx, dy, psi)
    b = curvature_term_extrinsic_pointwise(p, dx, dy, psi)
    return _rel(np.abs(a - b).max(), np.abs(a).max())


def check_coefficient_antisymmetry(rng) -> float:
    grid = make_grid("torus", 1.0, 1.0, 32, 32)
    phi, psi = _smooth_pair(grid, rng)
    c = coefficient_matrices(phi, psi)
    return _rel(c.antisymmetry_defect(), max(np.abs(c.A).max(), np.abs(c.B).max()))


def check_divergence_chain(rng, nx: int = 128) -> float:
    grid = make_grid("torus", 1.0, 1.0, nx, nx)
    phi, psi = _smooth_pair(grid, rng)
    return divergence_identity(phi, psi).max_relative_gap()


CHECKS = (
    ("clifford square", check_clifford_square, ALGEBRA_TOL),
    ("clifford anticommutation", check_clifford_anticommutation, ALGEBRA_TOL),
    ("clifford skew-adjointness", check_clifford_skew, ALGEBRA_TOL),
    ("dirac summation by parts", check_dirac_summation_by_parts, ALGEBRA_TOL),
    ("tangent projection idempotent", check_projection_idempotent, ALGEBRA_TOL),
    ("second fundamental/shape duality", check_fundamental_duality, ALGEBRA_TOL),
    ("curvature identity", check_curvature_identity, CURVATURE_TOL),
    ("coefficient antisymmetry", check_coefficient_antisymmetry, ALGEBRA_TOL),
    ("divergence identity chain", check_divergence_chain, CHAIN_TOL),
)


def run_checks(seed: int = 0, names=None) -> list[CheckResult]:
    """Run the suite (or the named subset) with one seeded generator per check."""
    results = []
    seeds = np.random.SeedSequence(seed).spawn(len(CHECKS))
    for (name, fn, tol), ss in zip(CHECKS, seeds):
        if names is not None and name not in names:
            continue
        t0 = time.perf_counter()
        try:
            value = float(fn(np.random.default_rng(ss)))
        except (ValueError, ArithmeticError) as exc:
            value = float("inf")
            name = f"{name} ({exc})"
        ok = bool(np.isfinite(value) and value <= tol)
        results.append(CheckResult(name, ok, value, tol, time.perf_counter() - t0))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  status  {'value':>10}  {'tol':>7}"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL':6}  "
                     f"{r.value:10.2e}  {r.tol:7.0e}")
    return "\n".join(lines)
