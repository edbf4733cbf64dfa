import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from osmfg.measures import (CemeteryConfig, JointMeasure, MeasureFlow, SpaceGrid, SubMeasure,
                            _grid_flow_lp, _transport_lp, flow_distance, pth_moment,
                            read_flow_csv, read_joint_csv, wasserstein1, wasserstein1_bound,
                            wasserstein1_sub, write_flow_csv, write_joint_csv)


def line(points, weights):
    return SubMeasure(np.asarray(points, float), np.asarray(weights, float))


def brute_w1(a_pts, a_w, b_pts, b_w, dist):
    """Dense LP over the full transport polytope."""
    n, m = len(a_w), len(b_w)
    cost = np.array([[dist(p, q) for q in b_pts] for p in a_pts])
    A = []
    for i in range(n):
        row = np.zeros(n * m)
        row[i * m:(i + 1) * m] = 1
        A.append(row)
    for j in range(m):
        row = np.zeros(n * m)
        row[j::m] = 1
        A.append(row)
    res = linprog(cost.ravel(), A_eq=np.array(A), b_eq=np.concatenate([a_w, b_w]),
                  bounds=(0, None), method="highs")
    return res.fun


def test_w1_line_examples():
    assert wasserstein1(SubMeasure.dirac(0.0), SubMeasure.dirac(1.0)) == 1.0
    mu = line([0.0, 2.0], [0.5, 0.5])
    assert wasserstein1(mu, mu) == 0.0
    assert wasserstein1(mu, SubMeasure.dirac(1.0)) == pytest.approx(1.0)


def test_w1_mass_mismatch():
    with pytest.raises(ValueError):
        wasserstein1(SubMeasure.dirac(0.0, 1.0), SubMeasure.dirac(0.0, 0.9))


def test_w1_joint_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(5):
        a = JointMeasure(rng.random(4), rng.normal(size=4), rng.dirichlet(np.ones(4)))
        b = JointMeasure(rng.random(3), rng.normal(size=3), rng.dirichlet(np.ones(3)))
        ref = brute_w1(list(zip(a.times, a.locs)), a.weights, list(zip(b.times, b.locs)),
                       b.weights, lambda p, q: abs(p[0] - q[0]) + abs(p[1] - q[1]))
        assert wasserstein1(a, b) == pytest.approx(ref, abs=1e-9)


def test_grid_flow_equals_direct_transport():
    # on a product grid the nearest-neighbour flow reproduces the l1 transport cost
    rng = np.random.default_rng(1)
    t_nodes = np.sort(rng.random(6))
    x_nodes = np.sort(rng.normal(size=7))
    a = rng.dirichlet(np.ones(42)).reshape(6, 7)
    b = rng.dirichlet(np.ones(42)).reshape(6, 7)
    tt, xx = np.meshgrid(t_nodes, x_nodes, indexing="ij")
    pts = np.column_stack([tt.ravel(), xx.ravel()])
    cost = np.abs(pts[:, None, 0] - pts[None, :, 0]) + np.abs(pts[:, None, 1] - pts[None, :, 1])
    direct = _transport_lp(a.ravel(), b.ravel(), cost)
    assert _grid_flow_lp(a - b, t_nodes, x_nodes) == pytest.approx(direct, abs=1e-9)


def test_coarsened_w1_within_bound():
    rng = np.random.default_rng(2)
    n = 700
    a = JointMeasure(rng.integers(0, 5, n) / 4, rng.normal(size=n), np.full(n, 1 / n))
    b = JointMeasure(rng.integers(0, 5, n) / 4, rng.normal(0.3, 1, n), np.full(n, 1 / n))
    val, err = wasserstein1_bound(a, b, snap_bins=32)
    # exact value on the product grid of the atoms themselves
    exact, _ = wasserstein1_bound(a, b, snap_bins=10 ** 6)
    assert err > 0
    assert abs(val - exact) <= err + 1e-9


def test_w1_sub_examples():
    cfg = CemeteryConfig()
    assert wasserstein1_sub(SubMeasure.dirac(0.0), SubMeasure.empty(), cfg) == pytest.approx(1.0)
    mu = line([0.0, 1.0], [0.2, 0.3])
    assert wasserstein1_sub(mu, mu, cfg) == 0.0
    half0 = SubMeasure.dirac(0.0, 0.5)
    half1 = SubMeasure.dirac(1.0, 0.5)
    assert wasserstein1_sub(half0, half1, cfg) == pytest.approx(0.5)


def test_w1_sub_rejects_excess_mass():
    with pytest.raises(ValueError):
        wasserstein1_sub(SubMeasure.dirac(0.0, 1.5), SubMeasure.empty())


def augmented_lp(mu, nu, z0):
    """Cemetery-augmented transport solved as a dense LP."""
    pa = list(mu.points) + ["c"]
    pb = list(nu.points) + ["c"]
    wa = np.append(mu.weights, 1 - mu.mass)
    wb = np.append(nu.weights, 1 - nu.mass)

    def dist(p, q):
        if p == "c" and q == "c":
            return 0.0
        if p == "c" or q == "c":
            z = q if p == "c" else p
            return abs(z - z0) + 1.0
        return abs(p - q)

    return brute_w1(pa, wa, pb, wb, dist)


sub_measures = st.integers(1, 4).flatmap(lambda k: st.tuples(
    st.lists(st.floats(-3, 3), min_size=k, max_size=k),
    st.lists(st.floats(0.01, 1), min_size=k, max_size=k),
    st.floats(0.05, 1.0)))


def _make(sample):
    pts, w, mass = sample
    w = np.asarray(w) / np.sum(w) * mass
    return line(pts, w)


@settings(max_examples=40, deadline=None)
@given(sub_measures, sub_measures, st.floats(-1, 1))
def test_w1_sub_equals_augmented_lp(a, b, z0):
    mu, nu = _make(a), _make(b)
    assert wasserstein1_sub(mu, nu, CemeteryConfig(z0)) == pytest.approx(
        augmented_lp(mu, nu, z0), abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(sub_measures, sub_measures, st.integers(0, 2 ** 16))
def test_w1_sub_duality_lower_bound(a, b, seed):
    mu, nu = _make(a), _make(b)
    val = wasserstein1_sub(mu, nu)
    rng = np.random.default_rng(seed)
    grid = np.linspace(-4, 4, 401)
    for _ in range(20):
        # random 1-Lipschitz test function vanishing at the base point
        slope = rng.uniform(-1, 1, grid.size - 1)
        phi = np.concatenate([[0.0], np.cumsum(slope * np.diff(grid))])
        phi -= np.interp(0.0, grid, phi)
        lower = (np.dot(np.interp(mu.points, grid, phi), mu.weights)
                 - np.dot(np.interp(nu.points, grid, phi), nu.weights)
                 + abs(mu.mass - nu.mass))
        assert lower <= val + 1e-6


joint_atoms = st.integers(1, 5).flatmap(lambda k: st.tuples(
    st.lists(st.floats(0, 1), min_size=k, max_size=k),
    st.lists(st.floats(-2, 2), min_size=k, max_size=k),
    st.lists(st.floats(0.05, 1), min_size=k, max_size=k)))


def _joint(sample):
    t, x, w = (np.asarray(v, float) for v in sample)
    return JointMeasure(t, x, w / w.sum())


@settings(max_examples=30, deadline=None)
@given(joint_atoms, joint_atoms, joint_atoms)
def test_w1_joint_metric_axioms(a, b, c):
    a, b, c = _joint(a), _joint(b), _joint(c)
    ab, ba = wasserstein1(a, b), wasserstein1(b, a)
    assert ab == pytest.approx(ba, abs=1e-9)
    assert wasserstein1(a, c) <= ab + wasserstein1(b, c) + 1e-9
    assert wasserstein1(a, a) == pytest.approx(0.0, abs=1e-12)


def _flow(rng, space, times):
    mass = rng.random((times.size, space.bins))
    mass /= mass.sum(axis=1, keepdims=True)
    return MeasureFlow(times, space, mass * np.linspace(1, 0.2, times.size)[:, None])


def test_flow_distance_examples():
    space = SpaceGrid(-1.0, 1.0, 2)
    times = np.linspace(0, 1, 5)
    rng = np.random.default_rng(0)
    m = _flow(rng, space, times)
    assert flow_distance(m, m) == 0.0
    far_a = MeasureFlow(times, SpaceGrid(-0.5, 0.5, 1), np.ones((5, 1)))
    far_b = MeasureFlow(times, SpaceGrid(-0.5, 0.5, 1), np.zeros((5, 1)))
    # every slice sits at distance >= 1, capped by min(1, .)
    assert flow_distance(far_a, far_b) == pytest.approx(1.0)
    one = m.mass.copy()
    one[2] = 0.0
    one[2, 1] = 0.5  # half mass at center 0.5 versus ...
    ref = m.mass.copy()
    ref[2] = 0.0
    ref[2, 0] = 0.5  # ... half mass at center -0.5: cemetery distance 0.5
    d = flow_distance(MeasureFlow(times, space, one), MeasureFlow(times, space, ref))
    assert d == pytest.approx(0.5 * 0.25)


def test_flow_distance_grid_mismatch():
    space = SpaceGrid(-1.0, 1.0, 2)
    a = MeasureFlow(np.linspace(0, 1, 3), space, np.zeros((3, 2)))
    b = MeasureFlow(np.linspace(0, 2, 3), space, np.zeros((3, 2)))
    with pytest.raises(ValueError):
        flow_distance(a, b)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 20))
def test_flow_distance_pseudometric(seed):
    rng = np.random.default_rng(seed)
    space = SpaceGrid(-2.0, 2.0, 8)
    times = np.linspace(0, 1, 6)
    a, b, c = (_flow(rng, space, times) for _ in range(3))
    assert flow_distance(a, b) == pytest.approx(flow_distance(b, a), abs=1e-12)
    assert flow_distance(a, c) <= flow_distance(a, b) + flow_distance(b, c) + 1e-12


def test_pth_moment_examples():
    assert pth_moment(SubMeasure.dirac(2.0), 2) == 4.0
    assert pth_moment(SubMeasure.empty(), 1) == 0.0
    assert pth_moment(line([1.0, 3.0], [0.5, 0.5]), 1) == 2.0
    assert pth_moment(JointMeasure([1.0], [2.0], [1.0]), 1) == 3.0
    with pytest.raises(ValueError):
        pth_moment(SubMeasure.dirac(1.0), 0.5)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    space = SpaceGrid(-1.0, 2.0, 6)
    m = _flow(rng, space, np.linspace(0, 1, 4))
    write_flow_csv(m, tmp_path / "m.csv")
    back = read_flow_csv(tmp_path / "m.csv")
    assert np.array_equal(back.mass, m.mass) and np.allclose(back.space.centers, space.centers)
    mu = JointMeasure([0.0, 0.5, 1.0], [0.1, -0.3, 2.0], [0.2, 0.0, 0.8])
    write_joint_csv(mu, tmp_path / "mu.csv")
    back = read_joint_csv(tmp_path / "mu.csv")
    assert np.array_equal(back.weights, [0.2, 0.8])


def test_space_grid_locate_clamps():
    space = SpaceGrid(0.0, 1.0, 4)
    assert list(space.locate([-5.0, 0.1, 0.99, 7.0])) == [0, 0, 3, 3]
    assert space.spill([-5.0, 0.5, 7.0]) == 2
