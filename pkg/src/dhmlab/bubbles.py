r"""
Concentration experiments built from exact harmonic spheres.

Every bubble here is :math:`\phi = \sigma^{-1}\circ w` for a meromorphic
function :math:`w` of :math:`z = x + iy`, where

.. math::

    \sigma^{-1}(w) = \Big(\frac{2w}{1 + |w|^2}, \frac{|w|^2 - 1}{1 + |w|^2}\Big)
    \in S^2 \subset \mathbb{C}\times\mathbb{R}

is inverse stereographic projection. Such maps are conformal, hence exactly
harmonic, with energy density :math:`8|w'|^2/(1+|w|^2)^2` and total energy
:math:`8\pi\deg w`.

* :func:`stereographic_bubble`: :math:`w = (z - c)/\lambda`, degree one,
  density :math:`8\lambda^2/(\lambda^2 + |x - c|^2)^2`.
* :func:`multi_bubble`: :math:`w = 1/\sum_j \lambda_j/(z - c_j)`, one
  degree-one bubble near each :math:`c_j` when the scales are small
  compared with the separations.
* :func:`elliptic_bubble`: a doubly periodic :math:`w` with a double zero,
  giving a smooth degree-two harmonic map of the torus concentrated near the
  chosen center. This is the periodic stand-in for a bubble wherever a
  torus is required (potential reconstruction, vanishing probe contrast runs).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal

from dhmlab.errors import InvariantError, UnderResolvedError, UnsupportedTopology
from dhmlab.grid import Grid, quadrature
from dhmlab.sphere import (
    MapField,
    SpinorAlongMap,
    energy_density_map,
    map_derivatives,
    spinor_density,
    tangent_projector,
    zero_spinor,
)

BUBBLE_ENERGY = 8.0 * math.pi


@dataclass
class BubbleSpec:
    center: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    rotation: np.ndarray | None = None

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"bubble scale must be positive, got {self.scale!r}")
        if self.rotation is not None:
            R = np.asarray(self.rotation, dtype=float)
            if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-12):
                raise ValueError("rotation must be a 3x3 orthogonal matrix")
            self.rotation = R


def inverse_stereographic(w: np.ndarray) -> np.ndarray:
    """Points of the unit 2-sphere from complex values (``inf`` maps to the north pole)."""
    w = np.asarray(w, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        big = ~(np.abs(w) <= 1.0)
        t = np.where(big, 1.0 / np.where(big, w, 1.0), 0.0)
        t = np.where(np.isfinite(t), t, 0.0)
        ws = np.where(big, 0.0, w)
        out = np.empty(w.shape + (3,))
        d_small = 1.0 + np.abs(ws) ** 2
        d_big = 1.0 + np.abs(t) ** 2
        out[..., 0] = np.where(big, 2.0 * t.real / d_big, 2.0 * ws.real / d_small)
        out[..., 1] = np.where(big, -2.0 * t.imag / d_big, 2.0 * ws.imag / d_small)
        out[..., 2] = np.where(big, (1.0 - np.abs(t) ** 2) / d_big,
                               (np.abs(ws) ** 2 - 1.0) / d_small)
    return out


def _complex_offset(grid: Grid, center) -> np.ndarray:
    dx, dy = grid.displacement(*center)
    return dx + 1j * dy


def _rotate(values: np.ndarray, rotation) -> np.ndarray:
    if rotation is None:
        return values
    return values @ np.asarray(rotation).T


def stereographic_bubble(spec: BubbleSpec, grid: Grid, n: int = 2) -> MapField:
    """Degree-one bubble of scale ``spec.scale`` on a rectangle; the center maps to the south pole."""
    if n != 2:
        raise UnsupportedTopology(f"the stereographic bubble needs target S^2, got n={n}")
    if grid.periodic:
        raise UnsupportedTopology("stereographic bubble is defined on a rectangle; "
                                  "use elliptic_bubble on a torus")
    u = _complex_offset(grid, spec.center) / spec.scale
    return MapField(grid, _rotate(inverse_stereographic(u), spec.rotation))


def bubble_energy_density(spec: BubbleSpec, grid: Grid) -> np.ndarray:
    """Closed-form density ``8 l^2 / (l^2 + r^2)^2``."""
    dx, dy = grid.displacement(*spec.center)
    lam2 = spec.scale ** 2
    return 8.0 * lam2 / (lam2 + dx * dx + dy * dy) ** 2


def disk_energy_closed_form(radius: float, scale: float = 1.0) -> float:
    """Energy of one bubble inside a disk about its center."""
    q = (radius / scale) ** 2
    return BUBBLE_ENERGY * q / (1.0 + q)


def multi_bubble(specs: list[BubbleSpec], grid: Grid, n: int = 2,
                 method: str = "rational") -> MapField:
    """Several degree-one bubbles on one rectangle.

    ``"rational"`` glues them in the stereographic plane, which keeps the map
    smooth and exactly harmonic. ``"partition"`` assigns every node to the
    nearest center and uses that bubble alone; the seams carry a jump of
    order ``scale / separation``.
    """
    if n != 2:
        raise UnsupportedTopology(f"bubbles need target S^2, got n={n}")
    if grid.periodic:
        raise UnsupportedTopology("multi_bubble is defined on a rectangle")
    if not specs:
        raise ValueError("need at least one bubble")
    if method == "partition":
        dist = np.stack([np.hypot(*grid.displacement(*s.center)) for s in specs])
        owner = np.argmin(dist, axis=0)
        out = np.empty(grid.shape + (3,))
        for j, s in enumerate(specs):
            vals = stereographic_bubble(s, grid).values
            out[owner == j] = vals[owner == j]
        return MapField(grid, out)
    if method != "rational":
        raise ValueError(f"method must be 'rational' or 'partition', got {method!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = sum(s.scale / _complex_offset(grid, s.center) for s in specs)
        w = np.where(np.isfinite(inv), 1.0 / inv, 0.0)
    return MapField(grid, inverse_stereographic(w))


def _weierstrass_like(z: np.ndarray, lx: float, ly: float, terms: int = 12) -> np.ndarray:
    """``sum_n csc^2(pi (z + i n ly) / lx)``: elliptic with periods lx and i*ly,
    a double pole at the lattice points and leading term ``(lx / pi z)^2``."""
    out = np.zeros(z.shape, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for k in range(-terms, terms + 1):
            s = np.sin(np.pi * (z + 1j * k * ly) / lx)
            out += 1.0 / (s * s)
    return out


def elliptic_bubble(grid: Grid, scale: float, center=(0.0, 0.0), rotation=None,
                    n: int = 2) -> MapField:
    """Periodic degree-two harmonic map of the torus, concentrated at *center* with radius ~*scale*."""
    if n != 2:
        raise UnsupportedTopology(f"bubbles need target S^2, got n={n}")
    if not grid.periodic:
        raise UnsupportedTopology("elliptic_bubble needs a torus")
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale!r}")
    z = _complex_offset(grid, center)
    g = _weierstrass_like(z, grid.lx, grid.ly)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = scale ** 2 * (np.pi / grid.lx) ** 2 * g
        w = np.where(np.isfinite(v), 1.0 / v, 0.0)
    return MapField(grid, _rotate(inverse_stereographic(w), rotation))


def reference_spinor(phi_hat_values: np.ndarray, u: np.ndarray) -> np.ndarray:
    r"""Smooth tangent test spinor along a unit bubble (not a solution).

    :math:`\hat\psi^i = (1 + |u|^2)^{-1}\,[(P e_1)^i\xi_0 + (P e_2)^i\xi_1]` with
    :math:`P` the tangent projector at :math:`\hat\phi(u)`.
    """
    P = tangent_projector(phi_hat_values)
    weight = 1.0 / (1.0 + np.abs(u) ** 2)
    out = np.zeros(phi_hat_values.shape + (2,), dtype=complex)
    out[..., 0] = P[..., :, 0] * weight[..., None]
    out[..., 1] = P[..., :, 1] * weight[..., None]
    return out


@dataclass
class ConcentrationFamily:
    grid: Grid
    center: tuple[float, float]
    lambdas: list[float]
    maps: list[MapField]
    spinors: list[SpinorAlongMap]
    spinor_label: str = "zero"

    def __len__(self) -> int:
        return len(self.lambdas)


def concentration_family(lambdas, grid: Grid, with_spinor: bool = False,
                         center=(0.0, 0.0)) -> ConcentrationFamily:
    """Exact bubbles at shrinking scales with a common center.

    With *with_spinor*, member ``k`` carries
    :math:`\\lambda_k^{-1/2}\\hat\\psi((x - c)/\\lambda_k)` for the fixed
    :func:`reference_spinor`; these are labeled ``"test-spinor (non-solution)"``.
    """
    lambdas = [float(l) for l in lambdas]
    if not lambdas:
        raise ValueError("family needs at least one scale")
    floor = 2.0 * grid.h
    for k, lam in enumerate(lambdas):
        if lam <= floor:
            raise UnderResolvedError(
                f"scale lambda[{k}] = {lam!r} is under-resolved (needs > 2h = {floor!r})"
            )
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError(f"scales must be strictly decreasing, got {lambdas}")

    maps, spinors = [], []
    for lam in lambdas:
        phi = stereographic_bubble(BubbleSpec(center=center, scale=lam), grid)
        maps.append(phi)
        if with_spinor:
            u = _complex_offset(grid, center) / lam
            spinors.append(SpinorAlongMap(grid, reference_spinor(phi.values, u) / math.sqrt(lam)))
        else:
            spinors.append(zero_spinor(phi))
    label = "test-spinor (non-solution)" if with_spinor else "zero"
    return ConcentrationFamily(grid, tuple(center), lambdas, maps, spinors, label)


def _densities(phi: MapField, psi: SpinorAlongMap | None):
    e_phi = energy_density_map(phi)
    e_psi = np.zeros_like(e_phi) if psi is None else spinor_density(psi) ** 2
    return e_phi, e_psi


def _check_disk_inside(grid: Grid, center, radius: float) -> None:
    if radius < 0:
        raise ValueError(f"radius must be nonnegative, got {radius!r}")
    if grid.periodic:
        if radius > 0.5 * min(grid.lx, grid.ly):
            raise InvariantError(f"disk of radius {radius} wraps around the torus")
        return
    cx, cy = center
    if not (grid.contains(cx - radius, cy - radius) and grid.contains(cx + radius, cy + radius)):
        raise InvariantError(
            f"disk of radius {radius} about {tuple(center)} leaves the domain"
        )


def _distance(grid: Grid, center) -> np.ndarray:
    dx, dy = grid.displacement(*center)
    return np.sqrt(dx * dx + dy * dy)


def local_energy(phi: MapField, psi: SpinorAlongMap | None, center, radius: float
                 ) -> tuple[float, float]:
    """Map and spinor energies of the nodes within *radius* of *center*."""
    grid = phi.grid
    _check_disk_inside(grid, center, radius)
    e_phi, e_psi = _densities(phi, psi)
    mask = _distance(grid, center) <= radius
    return (quadrature(grid, np.where(mask, e_phi, 0.0)),
            quadrature(grid, np.where(mask, e_psi, 0.0)))


def annulus_energy(phi: MapField, psi: SpinorAlongMap | None, center, inner: float,
                   outer: float) -> tuple[float, float]:
    """Energies of the nodes with ``inner <= |x - center| <= outer``."""
    if inner > outer:
        raise ValueError(f"annulus needs inner <= outer, got {inner!r} > {outer!r}")
    if inner < 0:
        raise ValueError(f"inner radius must be nonnegative, got {inner!r}")
    grid = phi.grid
    _check_disk_inside(grid, center, outer)
    if inner == outer:
        return 0.0, 0.0
    e_phi, e_psi = _densities(phi, psi)
    d = _distance(grid, center)
    mask = (d >= inner) & (d <= outer)
    return (quadrature(grid, np.where(mask, e_phi, 0.0)),
            quadrature(grid, np.where(mask, e_psi, 0.0)))


@dataclass
class IdentityRow:
    lam: float
    delta: float
    R: float
    e_disk: float
    e_annulus: float
    e_spinor_disk: float
    e_spinor_annulus: float
    e_total: float
    neck_empty: bool = False


@dataclass
class IdentityTable:
    rows: list[IdentityRow] = field(default_factory=list)
    spinor_label: str = "zero"

    HEADER = ("lambda", "delta", "R", "e_disk", "e_annulus",
              "e_spinor_disk", "e_spinor_annulus", "e_total")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.HEADER)
        for r in self.rows:
            writer.writerow([repr(float(v)) for v in (
                r.lam, r.delta, r.R, r.e_disk, r.e_annulus,
                r.e_spinor_disk, r.e_spinor_annulus, r.e_total)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def energy_identity_experiment(family: ConcentrationFamily, delta: float, R: float
                               ) -> IdentityTable:
    """Disk, neck and total energies for every member of *family*.

    The neck is the annulus ``lambda_k R <= |x - c| <= delta``. While
    ``lambda_k R >= delta`` the neck has not formed yet; its energies are
    recorded as zero and the row is marked ``neck_empty``.
    """
    table = IdentityTable(spinor_label=family.spinor_label)
    grid = family.grid
    c = family.center
    for lam, phi, psi in zip(family.lambdas, family.maps, family.spinors):
        e_disk, es_disk = local_energy(phi, psi, c, delta)
        inner = lam * R
        if inner < delta:
            e_ann, es_ann = annulus_energy(phi, psi, c, inner, delta)
            empty = False
        else:
            e_ann, es_ann, empty = 0.0, 0.0, True
        e_total = quadrature(grid, energy_density_map(phi))
        table.rows.append(IdentityRow(lam, float(delta), float(R), e_disk, e_ann,
                                      es_disk, es_ann, e_total, empty))
    return table


def _disk_kernel(h: float, r: float) -> np.ndarray:
    m = int(math.floor(r / h + 1e-9))
    o = np.arange(-m, m + 1) * h
    return (o[:, None] ** 2 + o[None, :] ** 2 <= r * r + 1e-12).astype(float)


def local_energy_map(phi: MapField, psi: SpinorAlongMap | None, r: float) -> np.ndarray:
    r""":math:`\int_{D(x, r)}(|d\phi|^2 + |\psi|^4)` for every node ``x``."""
    grid = phi.grid
    e_phi, e_psi = _densities(phi, psi)
    mass = grid.weights() * (e_phi + e_psi)
    kernel = _disk_kernel(grid.h, r)
    if not grid.periodic:
        return signal.fftconvolve(mass, kernel, mode="same")
    sx, sy = grid.shape
    if kernel.shape[0] > min(sx, sy):
        raise InvariantError(f"radius {r} exceeds the torus size")
    m = kernel.shape[0] // 2
    padded = np.zeros((sx, sy))
    padded[:kernel.shape[0], :kernel.shape[1]] = kernel
    padded = np.roll(padded, (-m, -m), axis=(0, 1))
    return np.fft.ifft2(np.fft.fft2(mass) * np.fft.fft2(padded)).real


def _merge_periodic_labels(labels: np.ndarray) -> np.ndarray:
    parent = {}

    def find(a):
        while parent.get(a, a) != a:
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for a, b in zip(labels[0, :], labels[-1, :]):
        if a and b:
            union(a, b)
    for a, b in zip(labels[:, 0], labels[:, -1]):
        if a and b:
            union(a, b)
    out = labels.copy()
    for lab in np.unique(labels):
        if lab:
            out[labels == lab] = find(lab)
    return out


def _centroid(grid: Grid, idx: np.ndarray) -> tuple[float, float]:
    x, y = grid.coords()
    if not grid.periodic:
        return float(x[idx[:, 0]].mean()), float(y[idx[:, 1]].mean())
    pts = []
    for coord, col, length, origin in ((x, 0, grid.lx, grid.x0), (y, 1, grid.ly, grid.y0)):
        ang = 2.0 * np.pi * (coord[idx[:, col]] - origin) / length
        mean = math.atan2(np.sin(ang).mean(), np.cos(ang).mean()) % (2.0 * np.pi)
        pts.append(origin + mean * length / (2.0 * np.pi))
    return pts[0], pts[1]


def detect_blowup_set(family: ConcentrationFamily, eps0: float = 1.0, r: float = 0.25,
                      tail: int = 1) -> list[tuple[float, float]]:
    """Centroids of the regions where the local energy stays above *eps0*.

    The lim inf over the sequence is approximated by the minimum over the
    last *tail* members.
    """
    members = list(zip(family.maps, family.spinors))[-max(1, tail):]
    local = None
    for phi, psi in members:
        e = local_energy_map(phi, psi, r)
        local = e if local is None else np.minimum(local, e)
    mask = local >= eps0
    labels, count = ndimage.label(mask)
    if count == 0:
        return []
    if family.grid.periodic:
        labels = _merge_periodic_labels(labels)
    centers = []
    for lab in np.unique(labels):
        if lab == 0:
            continue
        centers.append(_centroid(family.grid, np.argwhere(labels == lab)))
    return sorted(centers)


@dataclass
class RegularityReport:
    r1: float
    r2: float
    r1_normalized: float
    r2_normalized: float
    energy: float
    eps0: float
    hypothesis: bool
    length_scale: float
    flags: list[str] = field(default_factory=list)


def epsilon_regularity_probe(phi: MapField, psi: SpinorAlongMap | None = None,
                             margin: float = 0.5, eps0: float = 1.0,
                             disk: tuple[tuple[float, float], float] | None = None
                             ) -> RegularityReport:
    r"""Sup-over-energy ratios on a shrunken subdomain.

    ``r1 = sup_{D'}|d\phi| / ||d\phi||_{L^2(D)}`` and
    ``r2 = sup_{D'}|\psi| / ||\psi||_{L^4(D)}``. ``D`` is *disk* (center,
    radius) or the whole domain; ``D'`` shrinks it by the fraction *margin*.
    The normalized ratios multiply by the length scale of ``D`` (its radius or
    half the shorter side) and its square root, which makes them invariant
    under rescaling. A ratio with vanishing denominator is reported as NaN and
    flagged ``trivial``.
    """
    grid = phi.grid
    if not 0.0 <= margin < 1.0:
        raise ValueError(f"margin must be in [0, 1), got {margin!r}")
    px, py = map_derivatives(phi)
    grad = np.sqrt((px * px).sum(-1) + (py * py).sum(-1))
    abs_psi = np.zeros_like(grad) if psi is None else np.sqrt(spinor_density(psi))

    if disk is not None:
        center, radius = disk
        _check_disk_inside(grid, center, radius)
        d = _distance(grid, center)
        outer = d <= radius
        inner = d <= radius * (1.0 - margin)
        ell = float(radius)
    else:
        X, Y = grid.mesh()
        cx, cy = grid.x0 + 0.5 * grid.lx, grid.y0 + 0.5 * grid.ly
        outer = np.ones(grid.shape, dtype=bool)
        inner = (np.abs(X - cx) <= 0.5 * grid.lx * (1.0 - margin)) & \
                (np.abs(Y - cy) <= 0.5 * grid.ly * (1.0 - margin))
        ell = 0.5 * min(grid.lx, grid.ly)

    e_phi = quadrature(grid, np.where(outer, grad ** 2, 0.0))
    e_psi = quadrature(grid, np.where(outer, abs_psi ** 4, 0.0))
    flags = []
    if e_phi > 0:
        r1 = float(grad[inner].max()) / math.sqrt(e_phi)
    else:
        r1 = float("nan")
        flags.append("trivial")
    if e_psi > 0:
        r2 = float(abs_psi[inner].max()) / e_psi ** 0.25
    else:
        r2 = float("nan")
        if "trivial" not in flags:
            flags.append("trivial")
    energy = e_phi + e_psi
    return RegularityReport(
        r1=r1, r2=r2,
        r1_normalized=r1 * ell, r2_normalized=r2 * math.sqrt(ell),
        energy=energy, eps0=float(eps0), hypothesis=bool(energy < eps0),
        length_scale=ell, flags=flags,
    )
