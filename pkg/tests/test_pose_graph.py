import math

import numpy as np
import pytest

from lapra.manifold import RotationState, exp_map, random_rotation
from lapra.pose_graph import (
    Edge,
    GraphError,
    MeasurementGraph,
    Partition,
    SyntheticSpec,
    generate_grid,
    grid_positions,
    load_g2o,
    partition_contiguous,
    quat_to_rot,
    rot_to_quat,
    spanning_tree_init,
    write_g2o,
)


def _random_graph(rng, n=12, d=3, extra=8):
    mats = np.stack([random_rotation(d, rng) for _ in range(n)])
    pos = rng.standard_normal((n, d))
    pairs = [(i - 1, i) for i in range(1, n)]
    while len(pairs) < n - 1 + extra:
        i, j = sorted(rng.integers(0, n, size=2))
        if i != j and (i, j) not in pairs:
            pairs.append((int(i), int(j)))
    edges = [
        Edge(
            i,
            j,
            mats[i].T @ mats[j],
            mats[i].T @ (pos[j] - pos[i]),
            kappa=float(rng.uniform(0.5, 2.0)),
            tau=float(rng.uniform(0.5, 2.0)),
        )
        for i, j in pairs
    ]
    return MeasurementGraph(d, n, edges), RotationState(mats), pos


def test_quaternion_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        R = random_rotation(3, rng)
        q = rot_to_quat(R)
        assert q[3] >= 0.0
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12
        assert np.linalg.norm(quat_to_rot(*q) - R) < 1e-12


def test_quat_known_value():
    # 90 degrees about x
    s = math.sqrt(0.5)
    R = quat_to_rot(s, 0.0, 0.0, s)
    expected = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    assert np.allclose(R, expected, atol=1e-15)


def test_validate_catches_bad_edges():
    R = np.eye(3)
    t = np.zeros(3)
    with pytest.raises(GraphError):
        MeasurementGraph(3, 2, [Edge(0, 0, R, t)]).validate()
    with pytest.raises(GraphError):
        MeasurementGraph(3, 2, [Edge(0, 5, R, t)]).validate()
    with pytest.raises(GraphError):
        MeasurementGraph(3, 2, [Edge(0, 1, R, t), Edge(1, 0, R, t)]).validate()
    with pytest.raises(GraphError):
        MeasurementGraph(3, 2, [Edge(0, 1, 2.0 * R, t)]).validate()
    with pytest.raises(GraphError):
        MeasurementGraph(3, 2, [Edge(0, 1, R, t, kappa=0.0)]).validate()
    with pytest.raises(GraphError):
        MeasurementGraph(3, 3, [Edge(0, 1, R, t)]).validate()  # vertex 2 unreachable


def test_g2o_roundtrip_preserves_scalars(tmp_path):
    rng = np.random.default_rng(1)
    g, R, pos = _random_graph(rng)
    path = tmp_path / "g.g2o"
    write_g2o(str(path), g, poses=(R, pos))
    g2, poses2 = load_g2o(str(path))
    assert poses2 is not None
    assert g2.n == g.n and len(g2.edges) == len(g.edges)
    for a, b in zip(g.edges, g2.edges):
        assert (a.i, a.j) == (b.i, b.j)
        # translations and weights are stored directly and survive bit for bit
        assert np.array_equal(a.t_tilde, b.t_tilde)
        assert a.kappa == b.kappa and a.tau == b.tau
        # rotations pass through a quaternion, so allow tiny drift
        assert np.linalg.norm(a.R_tilde - b.R_tilde) < 1e-14
    assert np.abs(poses2[1] - pos).max() == 0.0


def test_g2o_vertex_only_file(tmp_path):
    rng = np.random.default_rng(2)
    mats = np.stack([random_rotation(3, rng) for _ in range(4)])
    pos = rng.standard_normal((4, 3))
    path = tmp_path / "poses.g2o"
    write_g2o(str(path), MeasurementGraph(3, 4, []), poses=(RotationState(mats), pos))
    g, poses = load_g2o(str(path))
    assert g.n == 4 and not g.edges
    assert poses is not None


def test_g2o_parse_errors(tmp_path):
    p = tmp_path / "bad.g2o"
    p.write_text("EDGE_SE3:QUAT 0 1 oops\n")
    with pytest.raises(GraphError):
        load_g2o(str(p))
    p.write_text("")
    with pytest.raises(GraphError):
        load_g2o(str(p))
    # ids must be dense from zero
    p.write_text(
        "EDGE_SE2 0 2 0.0 0.0 0.0 1.0 0.0 0.0 1.0 0.0 1.0\n"
    )
    with pytest.raises(GraphError):
        load_g2o(str(p))


def test_g2o_2d_records(tmp_path):
    p = tmp_path / "planar.g2o"
    p.write_text(
        "VERTEX_SE2 0 0.0 0.0 0.0\n"
        "VERTEX_SE2 1 1.0 0.0 0.3\n"
        "EDGE_SE2 0 1 1.0 0.0 0.3 2.0 0.0 0.0 2.0 0.0 4.0\n"
    )
    g, poses = load_g2o(str(p))
    assert g.d == 2 and g.n == 2 and len(g.edges) == 1
    e = g.edges[0]
    assert abs(e.kappa - 4.0) < 1e-15  # rotation information block
    assert abs(e.tau - 2.0) < 1e-15  # translation information block
    th = 0.3
    assert np.allclose(
        e.R_tilde, [[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]]
    )
    assert poses is not None


def test_write_is_deterministic(tmp_path):
    rng = np.random.default_rng(3)
    g, R, pos = _random_graph(rng)
    p1, p2 = tmp_path / "a.g2o", tmp_path / "b.g2o"
    write_g2o(str(p1), g, poses=(R, pos))
    write_g2o(str(p2), g, poses=(R, pos))
    assert p1.read_bytes() == p2.read_bytes()


def test_partition_contiguous_bookkeeping():
    rng = np.random.default_rng(4)
    g, _, _ = _random_graph(rng, n=20)
    part = partition_contiguous(g, 3)
    assert part.m == 3
    sizes = [np.sum(part.owner == a) for a in range(3)]
    assert sum(sizes) == 20 and max(sizes) - min(sizes) <= 1
    for e in g.edges:
        if part.owner[e.i] != part.owner[e.j]:
            assert part.is_separator[e.i] and part.is_separator[e.j]
    for a in range(3):
        assert not np.any(part.is_separator[part.interiors[a]])
        assert np.all(part.owner[part.interiors[a]] == a)
    both = np.concatenate(part.interiors + [part.separators])
    assert np.array_equal(np.sort(both), np.arange(20))


def test_partition_single_robot():
    rng = np.random.default_rng(5)
    g, _, _ = _random_graph(rng, n=8)
    part = partition_contiguous(g, 1)
    assert part.separators.size == 0
    assert part.interiors[0].size == 8


def test_partition_from_owner_matches_contiguous():
    rng = np.random.default_rng(6)
    g, _, _ = _random_graph(rng, n=15)
    part = partition_contiguous(g, 4)
    rebuilt = Partition.from_owner(part.owner, [(e.i, e.j) for e in g.edges])
    assert np.array_equal(rebuilt.separators, part.separators)
    assert all(np.array_equal(a, b) for a, b in zip(rebuilt.interiors, part.interiors))


def test_synthetic_spec_validation():
    with pytest.raises(GraphError):
        SyntheticSpec(side=1)
    with pytest.raises(GraphError):
        SyntheticSpec(side=4, edge_prob=1.5)
    with pytest.raises(GraphError):
        SyntheticSpec(side=4, sigma_rot=-0.1)


def test_generate_grid_shape_and_determinism():
    spec = SyntheticSpec(side=3, d=3, sigma_rot=0.05, edge_prob=0.4, seed=11)
    g1, truth1 = generate_grid(spec)
    g2, truth2 = generate_grid(spec)
    assert g1.n == 27
    assert len(g1.edges) >= 26  # at least the spanning tree
    assert len(g1.edges) == len(g2.edges)
    assert np.array_equal(truth1.mats, truth2.mats)
    for a, b in zip(g1.edges, g2.edges):
        assert (a.i, a.j) == (b.i, b.j)
        assert np.array_equal(a.R_tilde, b.R_tilde)
    g1.validate()


def test_generate_grid_edges_link_neighbors():
    spec = SyntheticSpec(side=3, d=3, sigma_rot=0.0, edge_prob=0.2, seed=1)
    g, _ = generate_grid(spec)
    pos = grid_positions(3, 3)
    for e in g.edges:
        assert np.abs(pos[e.i] - pos[e.j]).sum() == 1.0  # unit grid steps


def test_zero_noise_measurements_are_consistent():
    spec = SyntheticSpec(side=3, d=3, sigma_rot=0.0, edge_prob=0.3, seed=2)
    g, truth = generate_grid(spec)
    for e in g.edges:
        assert (
            np.linalg.norm(truth.mats[e.i].T @ truth.mats[e.j] - e.R_tilde) < 1e-12
        )


def test_spanning_tree_init_zero_noise_recovers_truth():
    spec = SyntheticSpec(side=3, d=3, sigma_rot=0.0, edge_prob=0.3, seed=3)
    g, truth = generate_grid(spec)
    R0 = spanning_tree_init(g)
    # both are anchored differently; compare relative rotations
    G = truth.mats[0] @ R0.mats[0].T
    for i in range(g.n):
        assert np.linalg.norm(G @ R0.mats[i] - truth.mats[i]) < 1e-10


def test_spanning_tree_init_noisy_is_valid():
    spec = SyntheticSpec(side=3, d=3, sigma_rot=0.2, edge_prob=0.5, seed=4)
    g, _ = generate_grid(spec)
    R0 = spanning_tree_init(g)
    R0.check_valid()
