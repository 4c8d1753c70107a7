r"""
Explicit relaxation toward Dirac-harmonic pairs.

Map update (harmonic map heat flow with re-projection)::

    phi <- normalize(phi + step * r_phi),  r_phi = lap phi + |d phi|^2 phi - X

Spinor update (gradient step on the squared spinor residual, then the
tangency projection)::

    psi <- P_T(psi - step * Dslash^* Dslash psi)

Both vanish exactly at solutions. The Dirac part of the functional is
indefinite in ``psi``, which is why the spinor is driven by the least-squares
residual rather than by the functional itself. On a rectangle the boundary
ring is held fixed (Dirichlet data).

Convergence is judged on the tangential parts of the residuals; their normal
parts carry an O(h^2) truncation floor that no iteration can remove.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from dhmlab.bubbles import elliptic_bubble
from dhmlab.errors import InvariantError, SolverDivergence
from dhmlab.grid import Grid, dirac_flat, interior_max, laplacian, make_grid, quadrature
from dhmlab.sphere import (
    MapField,
    SpinorAlongMap,
    _check_pair,
    clifford_map_action,
    default_margin,
    dirac_along_map_adjoint,
    map_derivatives,
    project_tangent,
    spinor_source,
    zero_spinor,
)

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0
TANGENCY_ABORT = 1e-8
CONSTANT_ENERGY = 1e-6


@dataclass(frozen=True)
class SolverParams:
    step: float
    max_iters: int = 1000
    tol: float = 1e-6
    psi_norm_target: float = 0.0
    seed: int = 0
    eps0: float = 1.0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step!r}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters!r}")
        if self.psi_norm_target < 0:
            raise ValueError(f"psi_norm_target must be >= 0, got {self.psi_norm_target!r}")

    @classmethod
    def for_grid(cls, grid: Grid, cfl: float = 0.2, **kw) -> "SolverParams":
        """Step ``cfl * h^2``; the explicit Laplacian is stable for ``cfl < 1/4``."""
        return cls(step=cfl * grid.h * grid.h, **kw)

    def stability_number(self, grid: Grid) -> float:
        """``4 step / h^2``, below 1 for the linearized explicit scheme."""
        return 4.0 * self.step / (grid.h * grid.h)


TRACE_HEADER = ("iter", "e_map", "e_spinor", "residual_map", "residual_spinor")


@dataclass
class SolveTrace:
    rows: list[tuple[int, float, float, float, float]] = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    flags: list[str] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.rows[-1][0] if self.rows else 0

    def column(self, name: str) -> np.ndarray:
        return np.array([r[TRACE_HEADER.index(name)] for r in self.rows])

    @property
    def final(self) -> dict:
        return dict(zip(TRACE_HEADER, self.rows[-1])) if self.rows else {}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for it, *vals in self.rows:
            w.writerow([str(it)] + [repr(float(v)) for v in vals])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _update_mask(grid: Grid) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    if grid.periodic:
        mask[...] = True
    else:
        mask[1:-1, 1:-1] = True
    return mask


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.sqrt((v * v).sum(axis=-1, keepdims=True))


def _tangential(p: np.ndarray, r: np.ndarray) -> np.ndarray:
    return r - (r * p).sum(-1)[..., None] * p


def _relax(phi0: MapField, psi0: SpinorAlongMap | None, params: SolverParams):
    grid = phi0.grid
    margin = default_margin(grid)
    mask = _update_mask(grid)
    w = grid.weights()
    p = phi0.values.copy()
    v = None if psi0 is None else psi0.values.copy()
    tau = params.step
    trace = SolveTrace()
    if params.stability_number(grid) >= 1.0:
        trace.flags.append("step-above-stability-bound")
        log.warning("step %.3e exceeds the explicit stability bound h^2/4 = %.3e",
                    tau, grid.h ** 2 / 4)

    e_ref = None
    best_e = math.inf
    transient = max(10, params.max_iters // 20)
    for it in range(params.max_iters + 1):
        phi = MapField(grid, p)
        px, py = map_derivatives(phi)
        dens = (px * px).sum(-1) + (py * py).sum(-1)
        r_map = laplacian(grid, p) + dens[..., None] * p
        e_map = float(np.sum(w * dens))
        if v is not None:
            psi = SpinorAlongMap(grid, v)
            r_map = r_map - spinor_source(phi, psi, (px, py))
            twist = clifford_map_action(phi, psi, (px, py))
            r_spin = dirac_flat(grid, v) + p[..., None] * twist[..., None, :]
            abs2 = (v.real ** 2 + v.imag ** 2).sum(axis=(-1, -2))
            e_spin = float(np.sum(w * abs2 * abs2))
            res_spin = interior_max(grid, project_tangent(phi, r_spin).values, margin)
        else:
            e_spin = 0.0
            res_spin = 0.0
        res_map = interior_max(grid, _tangential(p, r_map), margin)
        trace.rows.append((it, e_map, e_spin, res_map, res_spin))

        if not (math.isfinite(e_map) and math.isfinite(e_spin)):
            raise SolverDivergence(f"non-finite energy at iteration {it}")
        if e_ref is None:
            e_ref = e_map
        elif e_map > DIVERGENCE_FACTOR * e_ref and e_map > 1e-12:
            raise SolverDivergence(
                f"e_map grew from {e_ref:.6g} to {e_map:.6g} by iteration {it} "
                f"(step={tau:.3e}, stability number {params.stability_number(grid):.3f})"
            )
        if it > transient and e_map > best_e * (1.0 + 1e-9) + 1e-15 \
                and "energy-increase" not in trace.flags:
            trace.flags.append("energy-increase")
            log.warning("e_map increased after the transient at iteration %d", it)
        best_e = min(best_e, e_map)

        if res_map <= params.tol and res_spin <= params.tol:
            trace.converged = True
            trace.stop_reason = "tol"
            break
        if it == params.max_iters:
            trace.stop_reason = "max_iters"
            break

        p = np.where(mask[..., None], _normalize(p + tau * r_map), p)
        if v is not None:
            grad = dirac_along_map_adjoint(phi, r_spin)
            v_new = np.where(mask[..., None, None], v - tau * grad, v)
            v = project_tangent(MapField(grid, p), v_new).values
            normal = np.abs(np.einsum("xyk,xyks->xys", p, v)).max()
            if normal > TANGENCY_ABORT:
                raise InvariantError(
                    f"tangency defect {normal:.3e} after projection at iteration {it}"
                )
            if params.psi_norm_target > 0:
                a2 = (v.real ** 2 + v.imag ** 2).sum(axis=(-1, -2))
                cur = float(np.sum(w * a2 * a2))
                if cur > 0:
                    v = v * (params.psi_norm_target / cur) ** 0.25

    phi_out = MapField(grid, p)
    psi_out = None if v is None else SpinorAlongMap(grid, v)
    return phi_out, psi_out, trace


def relax_harmonic(phi0: MapField, params: SolverParams) -> tuple[MapField, SolveTrace]:
    """Projected heat flow for the map alone."""
    phi0.validate()
    phi, _, trace = _relax(phi0, None, params)
    return phi, trace


def relax_coupled(phi0: MapField, psi0: SpinorAlongMap, params: SolverParams
                  ) -> tuple[MapField, SpinorAlongMap, SolveTrace]:
    """Joint relaxation of the pair; see the module docstring for the update."""
    _check_pair(phi0, psi0)
    phi, psi, trace = _relax(phi0, psi0, params)
    return phi, psi, trace


# --- random initial data ------------------------------------------------------


def random_smooth_field(grid: Grid, shape: tuple[int, ...], rng: np.random.Generator,
                        kmax: int = 4, complex_valued: bool = False) -> np.ndarray:
    """Zero-mean truncated Fourier series with ``|k|^-2`` amplitude decay.

    Wavevectors are the integer multiples of the domain's fundamental
    frequencies with ``1 <= |(m, l)| <= kmax``.
    """
    X, Y = grid.mesh()
    out = np.zeros(grid.shape + tuple(shape), dtype=complex if complex_valued else float)
    modes = [(m, l) for m in range(-kmax, kmax + 1) for l in range(0, kmax + 1)
             if (l > 0 or m > 0) and 1 <= math.hypot(m, l) <= kmax]
    for m, l in modes:
        phase = 2.0 * np.pi * (m * (X - grid.x0) / grid.lx + l * (Y - grid.y0) / grid.ly)
        amp = math.hypot(m, l) ** -2
        c = rng.standard_normal(shape) + (1j * rng.standard_normal(shape) if complex_valued else 0)
        s = rng.standard_normal(shape) + (1j * rng.standard_normal(shape) if complex_valued else 0)
        expand = grid.shape + (1,) * len(shape)
        out += amp * (np.cos(phase).reshape(expand) * c + np.sin(phase).reshape(expand) * s)
    return out


def _map_energy(grid: Grid, p: np.ndarray) -> float:
    px, py = map_derivatives(MapField(grid, p))
    return quadrature(grid, (px * px).sum(-1) + (py * py).sum(-1))


def random_initial_pair(grid: Grid, n: int, energy_budget: float, rng: np.random.Generator,
                        kmax: int = 4, spinor_share: float = 0.5
                        ) -> tuple[MapField, SpinorAlongMap]:
    """Perturbation of the north pole plus a tangent spinor with the requested energies.

    ``e_map = (1 - spinor_share) * budget`` and ``int |psi|^4 = spinor_share * budget``.
    """
    k = n + 1
    pole = np.zeros(k)
    pole[-1] = 1.0
    pert = random_smooth_field(grid, (k,), rng, kmax)
    pert[..., -1] = 0.0
    raw_psi = random_smooth_field(grid, (k, 2), rng, kmax, complex_valued=True)

    target_map = (1.0 - spinor_share) * energy_budget
    if target_map > 0:
        def excess(a):
            return _map_energy(grid, _normalize(pole + a * pert)) - target_map
        hi = 1e-3
        while excess(hi) < 0:
            hi *= 2.0
            if hi > 1e6:
                raise ValueError(f"map energy {target_map} is out of reach of the perturbation")
        a = optimize.brentq(excess, 0.0, hi, xtol=1e-14, rtol=1e-12)
        p = _normalize(pole + a * pert)
    else:
        p = np.broadcast_to(pole, grid.shape + (k,)).copy()
    phi = MapField(grid, p)

    psi = project_tangent(phi, raw_psi)
    target_spin = spinor_share * energy_budget
    a2 = (psi.values.real ** 2 + psi.values.imag ** 2).sum(axis=(-1, -2))
    e = quadrature(grid, a2 * a2)
    if target_spin > 0 and e > 0:
        psi = SpinorAlongMap(grid, psi.values * (target_spin / e) ** 0.25)
    else:
        psi = zero_spinor(phi)
    return phi, psi


# --- vanishing probe ----------------------------------------------------------


@dataclass
class ProbeTrial:
    trial: int
    e_map0: float
    e_spinor0: float
    e_map: float
    e_spinor: float
    iterations: int
    converged: bool
    constant: bool


@dataclass
class VanishingReport:
    energy_budget: float
    init: str
    trials: list[ProbeTrial]
    eps0: float
    grid: dict

    @property
    def n_constant(self) -> int:
        return sum(t.constant for t in self.trials)

    @property
    def fraction_constant(self) -> float:
        return self.n_constant / len(self.trials) if self.trials else 1.0

    def summary(self) -> str:
        return f"{self.n_constant}/{len(self.trials)} constant"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("trial", "e_map0", "e_spinor0", "e_map", "e_spinor", "iterations",
                    "converged", "constant"))
        for t in self.trials:
            w.writerow([str(t.trial), repr(t.e_map0), repr(t.e_spinor0), repr(t.e_map),
                        repr(t.e_spinor), str(t.iterations), str(int(t.converged)),
                        str(int(t.constant))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "energy_budget": self.energy_budget,
            "init": self.init,
            "eps0": self.eps0,
            "grid": self.grid,
            "summary": self.summary(),
            "fraction_constant": self.fraction_constant,
            "trials": [dataclasses.asdict(t) for t in self.trials],
        }


def vanishing_probe(energy_budget: float, trials: int, params: SolverParams,
                    grid: Grid | None = None, n: int = 2, init: str = "random",
                    kmax: int = 4) -> VanishingReport:
    """Relax seeded initial data of total energy *energy_budget* and count constant limits.

    ``init="random"`` splits the budget evenly between ``e_map`` and
    ``int |psi|^4``. ``init="bubble"`` starts from a degree-two periodic bubble
    (energy ``16 pi`` whatever the budget) at a random center and scale with
    ``psi = 0``; it is the contrast case. The spinor is never renormalized here.
    """
    if not energy_budget >= 0:
        raise ValueError(f"energy budget must be nonnegative, got {energy_budget!r}")
    if init not in ("random", "bubble"):
        raise ValueError(f"init must be 'random' or 'bubble', got {init!r}")
    if grid is None:
        grid = make_grid("torus", 1.0, 1.0, 32, 32)
    params = dataclasses.replace(params, psi_norm_target=0.0)
    children = np.random.SeedSequence(params.seed).spawn(trials)
    results = []
    for t, child in enumerate(children):
        rng = np.random.default_rng(child)
        if init == "bubble":
            center = (grid.x0 + grid.lx * rng.random(), grid.y0 + grid.ly * rng.random())
            scale = min(grid.lx, grid.ly) * (0.3 + 0.1 * rng.random())
            phi0 = elliptic_bubble(grid, scale, center=center, n=n)
            psi0 = zero_spinor(phi0)
        elif energy_budget == 0:
            phi0 = MapField(grid, np.broadcast_to(np.eye(n + 1)[-1], grid.shape + (n + 1,)))
            psi0 = zero_spinor(phi0)
        else:
            phi0, psi0 = random_initial_pair(grid, n, energy_budget, rng, kmax)
        phi, psi, trace = relax_coupled(phi0, psi0, params)
        first, last = trace.rows[0], trace.rows[-1]
        total = last[1] + last[2]
        results.append(ProbeTrial(
            trial=t, e_map0=first[1], e_spinor0=first[2], e_map=last[1], e_spinor=last[2],
            iterations=last[0], converged=trace.converged,
            constant=bool(total < CONSTANT_ENERGY),
        ))
    return VanishingReport(float(energy_budget), init, results, params.eps0, grid.to_dict())
