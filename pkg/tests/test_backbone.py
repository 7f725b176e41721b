import numpy as np
import pytest

from relgraph.backbone import BackboneConfig, ConfigError, NodeGraph, PartitionError, TwoStreamBackbone, partition
from relgraph.tensormath import Tensor, ops


@pytest.fixture(scope="module")
def backbone():
    return TwoStreamBackbone(BackboneConfig(), rng=np.random.default_rng(0), dtype=np.float64).eval()


def test_default_output_shape(backbone):
    assert BackboneConfig().output_shape == (32, 12, 6)
    x = np.random.default_rng(1).standard_normal((2, 3, 48, 24))
    assert backbone.extract(x, "vis").shape == (2, 32, 12, 6)
    assert backbone.extract(x[0], "ir").shape == (32, 12, 6)


def test_zero_image_gives_finite_output(backbone):
    out = backbone.extract(np.zeros((3, 48, 24)), "vis")
    assert np.all(np.isfinite(out.data))


def test_modality_stems_differ(backbone):
    x = np.random.default_rng(2).standard_normal((1, 3, 48, 24))
    assert not np.allclose(backbone.extract(x, "vis").data, backbone.extract(x, "ir").data)


def test_wrong_image_shape(backbone):
    with pytest.raises(ConfigError):
        backbone.extract(np.zeros((1, 3, 40, 24)), "vis")


def test_unknown_modality(backbone):
    with pytest.raises(ConfigError):
        backbone.extract(np.zeros((1, 3, 48, 24)), "thermal")


@pytest.mark.parametrize("kwargs", [
    {"num_nodes": 5},
    {"feat_dim": 16},
    {"body_strides": (2,)},
    {"input_shape": (3, 48)},
])
def test_invalid_geometry(kwargs):
    with pytest.raises(ConfigError):
        BackboneConfig(**kwargs)


def test_extract_is_deterministic(backbone):
    x = np.random.default_rng(3).standard_normal((2, 3, 48, 24))
    a = partition(backbone.extract(x, "vis"), 6).nodes.data
    b = partition(backbone.extract(x, "vis"), 6).nodes.data
    assert a.tobytes() == b.tobytes()


# -- partition -------------------------------------------------------------------

def test_partition_strips_of_height_two(rng):
    fmap = rng.uniform(0.1, 1.0, (32, 12, 6))
    g = partition(Tensor(fmap), 6, p=3.0)
    assert g.nodes.shape == (6, 32)
    for i in range(6):
        strip = fmap[:, 2 * i:2 * i + 2, :]
        np.testing.assert_allclose(g.nodes.data[i], np.mean(strip ** 3, axis=(1, 2)) ** (1 / 3), rtol=1e-12)


def test_partition_constant_map():
    g = partition(Tensor(np.full((4, 12, 6), 0.7)), 6)
    np.testing.assert_allclose(g.nodes.data, np.full((6, 4), 0.7), rtol=1e-12)


def test_partition_single_node_is_gem_of_map(rng):
    fmap = rng.uniform(0.1, 1.0, (5, 12, 6))
    g = partition(Tensor(fmap), 1, p=3.0)
    np.testing.assert_allclose(g.nodes.data[0], ops.gem_pool(Tensor(fmap), 3.0).data, rtol=1e-12)


def test_partition_indivisible_height():
    with pytest.raises(PartitionError):
        partition(Tensor(np.ones((2, 12, 6))), 5)


def test_partition_permutation_within_strip(rng):
    fmap = rng.uniform(0.1, 1.0, (4, 12, 6))
    shuffled = fmap.copy()
    strip = shuffled[:, 4:6, :].reshape(4, -1)
    shuffled[:, 4:6, :] = strip[:, rng.permutation(strip.shape[1])].reshape(4, 2, 6)
    a = partition(Tensor(fmap), 6).nodes.data
    b = partition(Tensor(shuffled), 6).nodes.data
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_node_gradient_stays_in_its_strip(rng):
    fmap = Tensor(rng.uniform(0.1, 1.0, (2, 4, 12, 6)), requires_grad=True)
    g = partition(fmap, 6)
    ops.sum(ops.index(g.nodes, (slice(None), 3))).backward()
    rows = np.abs(fmap.grad).sum(axis=(0, 1, 3))
    assert np.all(rows[6:8] > 0)
    assert np.all(rows[:6] == 0) and np.all(rows[8:] == 0)


def test_input_gradient_restricted_to_strip_receptive_field():
    net = TwoStreamBackbone(BackboneConfig(), rng=np.random.default_rng(0), dtype=np.float64).eval()
    x = Tensor(np.random.default_rng(4).standard_normal((1, 3, 48, 24)), requires_grad=True)
    nodes = partition(ops.relu(net.extract(x, "vis")), 6).nodes
    ops.sum(ops.index(nodes, (slice(None), 0))).backward()
    rows = np.abs(x.grad).sum(axis=(0, 1, 3))
    # strip 0 covers feature rows 0-1, i.e. input rows 0-7 plus the 3x3 receptive-field halo
    assert rows[:8].sum() > 0
    assert np.all(rows[16:] == 0)


def test_node_graph_validates():
    with pytest.raises(ValueError):
        NodeGraph(Tensor(np.zeros(4)))
    with pytest.raises(ValueError):
        NodeGraph(Tensor(np.zeros((2, 3))), "uv")
