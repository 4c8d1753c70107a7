import csv
import io
import math

import numpy as np
import pytest

from dhmlab.bubbles import (
    BUBBLE_ENERGY,
    BubbleSpec,
    ConcentrationFamily,
    IdentityTable,
    annulus_energy,
    bubble_energy_density,
    concentration_family,
    detect_blowup_set,
    disk_energy_closed_form,
    elliptic_bubble,
    energy_identity_experiment,
    epsilon_regularity_probe,
    inverse_stereographic,
    local_energy,
    multi_bubble,
    stereographic_bubble,
)
from dhmlab.errors import InvariantError, UnderResolvedError, UnsupportedTopology
from dhmlab.grid import make_grid, quadrature
from dhmlab.sphere import energy_density_map, zero_spinor
from helpers import constant_map


@pytest.fixture(scope="module")
def rect256():
    return make_grid("rectangle", 8.0, 8.0, 256, 256)


def test_inverse_stereographic_poles_and_equator():
    w = np.array([0.0, np.inf, 1.0, 1j, 1e300, 1e-300])
    p = inverse_stereographic(w)
    np.testing.assert_allclose(p[0], [0, 0, -1])
    np.testing.assert_allclose(p[1], [0, 0, 1])
    np.testing.assert_allclose(p[2], [1, 0, 0], atol=1e-16)
    np.testing.assert_allclose(p[3], [0, 1, 0], atol=1e-16)
    np.testing.assert_allclose(np.linalg.norm(p, axis=-1), 1.0)


def test_bubble_center_and_equator(rect256):
    phi = stereographic_bubble(BubbleSpec(center=(0.0, 0.0), scale=1.0), rect256)
    X, Y = rect256.mesh()
    np.testing.assert_allclose(phi.values[128, 128], [0, 0, -1])
    on_circle = np.isclose(np.hypot(X, Y), 1.0)
    assert on_circle.any()
    assert np.abs(phi.values[on_circle][:, 2]).max() < 1e-14
    phi.validate()


def test_bubble_rotation():
    g = make_grid("rectangle", 4, 4, 32, 32)
    R = np.array([[0, 0, 1.0], [0, 1, 0], [-1, 0, 0]])
    phi = stereographic_bubble(BubbleSpec(scale=0.5, rotation=R), g)
    np.testing.assert_allclose(phi.values[16, 16], R @ [0, 0, -1])
    with pytest.raises(ValueError):
        BubbleSpec(rotation=np.eye(3) * 2)
    with pytest.raises(ValueError):
        BubbleSpec(scale=0.0)


def test_bubble_topology_and_target():
    with pytest.raises(UnsupportedTopology):
        stereographic_bubble(BubbleSpec(), make_grid("torus", 1, 1, 8, 8))
    with pytest.raises(UnsupportedTopology):
        stereographic_bubble(BubbleSpec(), make_grid("rectangle", 1, 1, 8, 8), n=3)
    with pytest.raises(UnsupportedTopology):
        elliptic_bubble(make_grid("rectangle", 1, 1, 8, 8), 0.2)


def test_density_matches_closed_form(rect256):
    spec = BubbleSpec(scale=1.0)
    dens = energy_density_map(stereographic_bubble(spec, rect256))
    exact = bubble_energy_density(spec, rect256)
    assert np.abs(dens - exact).max() / exact.max() < 0.01


def test_local_energy_monotone_and_closed_form(rect256):
    phi = stereographic_bubble(BubbleSpec(scale=1.0), rect256)
    radii = [0.5, 1.0, 2.0, 3.0, 3.9]
    vals = [local_energy(phi, None, (0, 0), r)[0] for r in radii]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    for r, v in zip(radii, vals):
        assert v == pytest.approx(disk_energy_closed_form(r), rel=0.02)
    assert local_energy(constant_map(rect256), None, (0, 0), 1.0) == (0.0, 0.0)


def test_disk_must_fit(rect256):
    phi = constant_map(rect256)
    with pytest.raises(InvariantError):
        local_energy(phi, None, (3.5, 0), 1.0)
    with pytest.raises(ValueError):
        annulus_energy(phi, None, (0, 0), 2.0, 1.0)
    assert annulus_energy(phi, None, (0, 0), 1.0, 1.0) == (0.0, 0.0)


def test_energy_partition(rect256):
    phi = stereographic_bubble(BubbleSpec(scale=0.3), rect256)
    total = quadrature(rect256, energy_density_map(phi))
    disk = local_energy(phi, None, (0, 0), 0.5)[0]
    ann = annulus_energy(phi, None, (0, 0), 0.5 + 1e-9, 3.9)[0]
    dens = energy_density_map(phi) * rect256.weights()
    X, Y = rect256.mesh()
    exterior = dens[np.hypot(X, Y) > 3.9].sum()
    cell = dens.max()
    assert abs(total - (disk + ann + exterior)) <= cell


def test_annulus_closed_form(rect256):
    lam, R, delta = 0.1, 2.0, 1.0
    phi = stereographic_bubble(BubbleSpec(scale=lam), rect256)
    ann = annulus_energy(phi, None, (0, 0), lam * R, delta)[0]
    q = (delta / lam) ** 2
    exact = BUBBLE_ENERGY * (q / (1 + q) - R * R / (1 + R * R))
    assert ann == pytest.approx(exact, rel=0.03)


def test_family_validation(rect256):
    h = rect256.h
    with pytest.raises(UnderResolvedError, match=r"lambda\[1\]"):
        concentration_family([1.0, h], rect256)
    with pytest.raises(ValueError):
        concentration_family([0.1, 0.2], rect256)
    fam = concentration_family([1.0], rect256)
    assert len(fam) == 1 and fam.spinor_label == "zero"


def test_identity_table_single_member(rect256):
    fam = concentration_family([1.0], rect256, with_spinor=True)
    table = energy_identity_experiment(fam, 2.0, 1.0)
    e_disk, es_disk = local_energy(fam.maps[0], fam.spinors[0], (0, 0), 2.0)
    row = table.rows[0]
    assert (row.e_disk, row.e_spinor_disk) == (e_disk, es_disk)
    assert table.spinor_label.startswith("test-spinor")
    rows = list(csv.reader(io.StringIO(table.to_csv())))
    assert tuple(rows[0]) == IdentityTable.HEADER and len(rows) == 2
    assert all(float(x) >= 0 for x in rows[1])


def test_reference_spinor_scaling_and_tangency(rect256):
    fam = concentration_family([0.8, 0.4, 0.2], rect256, with_spinor=True)
    vals = []
    for phi, psi in zip(fam.maps, fam.spinors):
        psi.validate(phi)
        vals.append(local_energy(phi, psi, (0, 0), 3.9)[1])
    assert max(vals) / min(vals) < 1.02


def test_blowup_sets(rect256):
    fam = concentration_family([0.4, 0.2, 0.1], rect256)
    pts = detect_blowup_set(fam, eps0=1.0, r=0.25)
    assert len(pts) == 1 and max(abs(pts[0][0]), abs(pts[0][1])) <= rect256.h
    const = ConcentrationFamily(rect256, (0, 0), [1.0], [constant_map(rect256)],
                                [zero_spinor(constant_map(rect256))])
    assert detect_blowup_set(const) == []


def test_two_bubbles_two_clusters(rect256):
    specs = [BubbleSpec((-1.5, 0.0), 0.1), BubbleSpec((1.5, 0.5), 0.15)]
    phi = multi_bubble(specs, rect256)
    fam = ConcentrationFamily(rect256, (0, 0), [0.1], [phi], [zero_spinor(phi)])
    pts = detect_blowup_set(fam, 1.0, 0.25)
    assert len(pts) == 2
    for (x, y), s in zip(pts, specs):
        assert math.hypot(x - s.center[0], y - s.center[1]) < 3 * rect256.h
    # each cluster carries the energy of its bubble alone
    for s in specs:
        alone = local_energy(stereographic_bubble(s, rect256), None, s.center, 1.0)[0]
        assert local_energy(phi, None, s.center, 1.0)[0] == pytest.approx(alone, rel=0.01)


def test_partition_multi_bubble_matches_members(rect256):
    specs = [BubbleSpec((-2.0, 0.0), 0.1), BubbleSpec((2.0, 0.0), 0.1)]
    phi = multi_bubble(specs, rect256, method="partition")
    left = stereographic_bubble(specs[0], rect256)
    assert np.array_equal(phi.values[:100], left.values[:100])


def test_blowup_on_torus_wraps():
    g = make_grid("torus", 1.0, 1.0, 64, 64)
    phi = elliptic_bubble(g, 0.05, center=(0.5, 0.5))
    fam = ConcentrationFamily(g, (0.5, 0.5), [0.05], [phi], [zero_spinor(phi)])
    pts = detect_blowup_set(fam, eps0=5.0, r=0.1)
    assert len(pts) == 1
    x, y = pts[0]
    assert min(abs(x - 0.5), abs(x + 0.5)) < 2 * g.h
    assert min(abs(y - 0.5), abs(y + 0.5)) < 2 * g.h


def test_elliptic_bubble_energy():
    g = make_grid("torus", 1.0, 1.0, 128, 128)
    phi = elliptic_bubble(g, 0.2, center=(0.01, 0.02))
    phi.validate()
    assert quadrature(g, energy_density_map(phi)) == pytest.approx(2 * BUBBLE_ENERGY, rel=0.01)


def test_regularity_probe(rect256):
    rep = epsilon_regularity_probe(constant_map(rect256))
    assert rep.flags == ["trivial"] and math.isnan(rep.r1)
    phi = stereographic_bubble(BubbleSpec(scale=1.0), rect256)
    rep = epsilon_regularity_probe(phi, None, 0.5, eps0=1.0)
    assert not rep.hypothesis and rep.r1 > 0
    small = epsilon_regularity_probe(phi, None, 0.5, eps0=1.0, disk=((0, 0), 0.15))
    assert small.hypothesis and small.energy < 1.0
