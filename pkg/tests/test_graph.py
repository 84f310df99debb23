import json

import numpy as np
import pytest

from helpers import TINY_PLAN, identity_net, randomize_norms, rel_error
from simple2complex.backend.graph import (
    Edge,
    ForwardResult,
    JunctionField,
    backward_pass,
    build_plain_network,
    describe_topology,
    forward_pass,
    receptive_field_check,
    topology_json,
)
from simple2complex.backend.growth import apply_growth, build_series_network, plan_growth
from simple2complex.backend.layers import ConvParams, conv_backward, conv_forward, init_batch_norm, init_conv
from simple2complex.common.errors import ConfigError, ConsistencyError, GraphError, ShapeError
from simple2complex.common.models import DEFAULT_CHANNEL_PLAN, LayerName, LayerSpec
from simple2complex.common.tensor import SeededRng


# ---- construction --------------------------------------------------------
def test_default_plan_shape():
    net = build_plain_network(DEFAULT_CHANNEL_PLAN, classes=10, rng=SeededRng(0))
    assert len(net.edges) == 6
    assert net.node_count == 7
    assert net.layer_names() == [f"0_{i}" for i in range(1, 7)]
    assert net.stage_count == 0


def test_default_plan_parameter_count():
    net = build_plain_network(DEFAULT_CHANNEL_PLAN, classes=10, rng=SeededRng(0))
    expected, channels = 0, 3
    for spec in DEFAULT_CHANNEL_PLAN:
        expected += channels * spec.filters * spec.kernel**2 + 2 * spec.filters
        channels = spec.filters
    expected += channels * 10 + 10
    assert expected == 50754
    assert net.parameter_count() == expected


def test_empty_and_invalid_plans():
    with pytest.raises(ConfigError):
        build_plain_network([], classes=2, rng=SeededRng(0))
    with pytest.raises(ConfigError):
        build_plain_network([LayerSpec(filters=2, kernel=4)], classes=2, rng=SeededRng(0))
    with pytest.raises(ConfigError):
        build_plain_network([LayerSpec(filters=2, kernel=5, padding=0)], classes=2, rng=SeededRng(0), input_shape=(3, 3, 3))


def test_single_identity_edge_passes_input_through():
    net = identity_net(1)
    x = np.array([-1.0, 0.5, 2.0]).reshape(1, 3, 1, 1)
    scale = 1.0 / np.sqrt(1.0 + 1e-5)
    # no activation at the output junction
    assert np.allclose(forward_pass(net, x).logits, x.reshape(1, 3) * scale, atol=1e-12)


def test_identity_chain_applies_relu_at_internal_junction():
    net = identity_net(2)
    x = np.array([-1.0, 0.5, 2.0]).reshape(1, 3, 1, 1)
    scale = 1.0 / np.sqrt(1.0 + 1e-5)
    expected = np.maximum(x.reshape(1, 3) * scale, 0.0) * scale
    assert np.allclose(forward_pass(net, x).logits, expected, atol=1e-12)


def test_cycle_is_rejected(tiny_net):
    dtype = tiny_net.head.weights.dtype
    conv = init_conv(4, 3, 3, stride=1, padding=1, rng=SeededRng(1), dtype=dtype)
    tiny_net.edges.append(Edge(LayerName(1, 1), 2, 1, conv, init_batch_norm(2, dtype=dtype)))
    with pytest.raises(GraphError):
        tiny_net.topological_nodes()


# ---- forward -------------------------------------------------------------
def test_zero_input_gives_identical_rows(tiny_net, rng):
    randomize_norms(tiny_net, rng)
    logits = forward_pass(tiny_net, np.zeros((5, 3, 8, 8))).logits
    assert np.all(logits == logits[0])


def test_forward_with_labels_scores_the_batch(tiny_net, rng):
    result = forward_pass(tiny_net, rng.normal((4, 3, 8, 8)), np.array([0, 1, 2, 0]))
    assert isinstance(result, ForwardResult)
    assert result.logits.shape == (4, 3)
    assert np.isfinite(result.loss) and result.loss > 0
    assert 0.0 <= result.accuracy <= 1.0
    assert forward_pass(tiny_net, np.zeros((1, 3, 8, 8))).loss is None


def test_eval_forward_is_pure(tiny_net, rng):
    x = rng.normal((4, 3, 8, 8))
    a = forward_pass(tiny_net, x).logits
    b = forward_pass(tiny_net, x).logits
    assert a.tobytes() == b.tobytes()
    assert all(e.bn.updates == 0 for e in tiny_net.edges)


def test_forward_rejects_wrong_input(tiny_net):
    with pytest.raises(ShapeError):
        forward_pass(tiny_net, np.zeros((2, 3, 9, 9)))
    with pytest.raises(ShapeError):
        forward_pass(tiny_net, np.zeros((2, 3, 8, 8), dtype=np.float32))


def test_loss_and_accuracy_with_labels(tiny_net, rng):
    out = forward_pass(tiny_net, rng.normal((4, 3, 8, 8)), np.array([0, 1, 2, 0]), mode="train")
    assert out.loss > 0.0
    assert out.accuracy in (0.0, 0.25, 0.5, 0.75, 1.0)


# ---- backward ------------------------------------------------------------
def test_gradient_keys_match_parameters(tiny_net, rng):
    out = forward_pass(tiny_net, rng.normal((4, 3, 8, 8)), np.array([0, 1, 2, 0]), mode="train")
    grads = backward_pass(tiny_net, out.cache)
    params = tiny_net.parameters()
    assert list(grads) == list(params)
    assert all(grads[k].shape == params[k].shape for k in params)


def test_stale_cache_is_rejected(tiny_net, rng):
    x = rng.normal((2, 3, 8, 8))
    out = forward_pass(tiny_net, x, np.array([0, 1]), mode="train")
    tiny_net.touch()
    with pytest.raises(ConsistencyError):
        backward_pass(tiny_net, out.cache)
    evaluated = forward_pass(tiny_net, x, np.array([0, 1]), mode="eval")
    with pytest.raises(ConsistencyError):
        backward_pass(tiny_net, evaluated.cache)


# whole-network gradient checks run on 2-channel 8x8 inputs
GRAD_INPUT = (2, 8, 8)


def _grown_tiny(stages: int, *, zero_gamma: bool = True):
    rng = SeededRng(21)
    net = build_plain_network(TINY_PLAN, classes=3, rng=rng, input_shape=GRAD_INPUT, precision="double")
    for _ in range(stages):
        net = apply_growth(net, plan_growth(net), rng, zero_gamma=zero_gamma)
    return net


def _relu_signs(net, x, labels):
    cache = forward_pass(net, x, labels, mode="train").cache
    return {node: pre > 0 for node, pre in cache.node_pre.items()}


def test_whole_network_gradient_matches_finite_differences():
    net = _grown_tiny(2)
    rng = SeededRng(5)
    randomize_norms(net, rng)
    x = rng.normal((4, *GRAD_INPUT))
    labels = np.array([0, 1, 2, 1])
    base = forward_pass(net, x, labels, mode="train")
    grads = backward_pass(net, base.cache)
    signs = _relu_signs(net, x, labels)
    h = 1e-5
    checked = 0
    for key, param in net.parameters().items():
        for idx in np.ndindex(*param.shape):
            old = param[idx]
            param[idx] = old + h
            up = forward_pass(net, x, labels, mode="train")
            up_signs = _relu_signs(net, x, labels)
            param[idx] = old - h
            down = forward_pass(net, x, labels, mode="train")
            down_signs = _relu_signs(net, x, labels)
            param[idx] = old
            flipped = any(
                not np.array_equal(s, up_signs[n]) or not np.array_equal(s, down_signs[n])
                for n, s in signs.items()
            )
            if flipped:
                continue
            numeric = (up.loss - down.loss) / (2 * h)
            assert rel_error(grads[key][idx], numeric) <= 1e-5, key
            checked += 1
    assert checked >= 200


def test_zero_gamma_branch_still_learns():
    net = _grown_tiny(1)
    rng = SeededRng(6)
    x = rng.normal((4, *GRAD_INPUT))
    labels = np.array([0, 1, 2, 1])
    out = forward_pass(net, x, labels, mode="train")
    grads = backward_pass(net, out.cache)
    assert np.all(grads["1_1.weight"] == 0.0)
    assert np.all(grads["1_2.weight"] == 0.0)
    assert np.any(grads["1_2.gamma"] != 0.0)

    gamma = net.parameters()["1_2.gamma"]
    h = 1e-5
    for c in range(gamma.shape[0]):
        gamma[c] = h
        up = forward_pass(net, x, labels, mode="train").loss
        gamma[c] = -h
        down = forward_pass(net, x, labels, mode="train").loss
        gamma[c] = 0.0
        assert rel_error(grads["1_2.gamma"][c], (up - down) / (2 * h)) <= 1e-5


# ---- receptive fields ----------------------------------------------------
def impulse_support(kernels):
    """Width of the input region a centre output pixel sees, measured by backprop of a unit impulse."""
    x = np.zeros((1, 1, 21, 21))
    caches = []
    for k in kernels:
        x, cache = conv_forward(x, ConvParams(np.ones((1, 1, k, k)), stride=1, padding=k // 2))
        caches.append(cache)
    grad = np.zeros_like(x)
    grad[0, 0, 10, 10] = 1.0
    for cache in reversed(caches):
        grad, _ = conv_backward(grad, cache)
    return int(np.count_nonzero(grad[0, 0, 10]))


def test_single_conv_field():
    net = build_plain_network([LayerSpec(filters=2, kernel=3, padding=1)], classes=2, rng=SeededRng(0), input_shape=(1, 8, 8))
    report = receptive_field_check(net)
    assert report.passed
    assert report.at(1) == [JunctionField(junction=1, edge="0_1", rf=3, jump=1)]


def test_chained_fields_match_impulse_response():
    plan = [LayerSpec(filters=1, kernel=3, padding=1)] * 2
    net = build_plain_network(plan, classes=2, rng=SeededRng(0), input_shape=(1, 8, 8))
    (field,) = receptive_field_check(net).at(2)
    assert field.rf == 5
    assert impulse_support([3, 3]) == 5
    assert impulse_support([5]) == impulse_support([3, 3])


def test_five_by_five_edge_matches_two_layer_path():
    net = build_plain_network([LayerSpec(filters=2, kernel=5, padding=2)], classes=2, rng=SeededRng(0), input_shape=(2, 8, 8))
    grown = apply_growth(net, plan_growth(net), SeededRng(1))
    report = receptive_field_check(grown)
    assert report.passed
    assert {f.rf for f in report.at(1)} == {5}


def test_three_layer_path_fails_against_five_by_five():
    net = build_plain_network([LayerSpec(filters=2, kernel=5, padding=2)], classes=2, rng=SeededRng(0), input_shape=(2, 8, 8))
    dtype = net.head.weights.dtype
    rng = SeededRng(2)
    hops = [(0, 2), (2, 3), (3, 1)]
    for ordinal, (tail, head) in enumerate(hops, start=1):
        conv = init_conv(2, 2, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        net.edges.append(Edge(LayerName(1, ordinal), tail, head, conv, init_batch_norm(2, dtype=dtype)))
    net.node_count = 4
    net.validate()
    report = receptive_field_check(net)
    assert not report.passed
    assert report.failures == [1]
    assert impulse_support([3, 3, 3]) == 7


def test_grown_default_network_keeps_fields_aligned():
    net = build_series_network(DEFAULT_CHANNEL_PLAN, stages=2, classes=10, rng=SeededRng(0))
    report = receptive_field_check(net)
    assert report.passed
    # strided backbone edge 0_3 and the last conv of its stage-2 path agree on jump too
    assert {(f.rf, f.jump) for f in report.at(3)} == {(13, 2)}


def network_impulse_fields(net, size=96):
    """Per edge: (rf, jump) measured on the input by backprop of unit impulses through all-ones convs.

    Every edge keeps its kernel, stride and padding but runs single-channel with positive weights,
    so the input support of a junction pixel is the union over all paths into it.
    """
    order = net.topological_nodes()
    values = {net.input_node: np.zeros((1, 1, size, size))}
    caches = {}
    for node in order:
        for e in net.edges_into(node):
            k = e.conv.kernel
            out, caches[e.key] = conv_forward(
                values[e.tail], ConvParams(np.ones((1, 1, k, k)), stride=e.conv.stride, padding=e.conv.padding)
            )
            values[node] = values[node] + out if node in values else out

    def input_columns(edge, col):
        grad = np.zeros_like(values[edge.head])
        grad[0, 0, grad.shape[2] // 2, col] = 1.0
        grads = {edge.tail: conv_backward(grad, caches[edge.key])[0]}
        for node in reversed(order):
            if node not in grads or node == net.input_node:
                continue
            for e in net.edges_into(node):
                d, _ = conv_backward(grads[node], caches[e.key])
                grads[e.tail] = grads[e.tail] + d if e.tail in grads else d
        return np.flatnonzero(np.any(grads[net.input_node][0, 0] != 0, axis=0))

    fields = {}
    for e in net.edges:
        centre = values[e.head].shape[3] // 2
        cols = input_columns(e, centre)
        shifted = input_columns(e, centre + 1)
        fields[e.key] = (int(cols[-1] - cols[0] + 1), int(shifted[0] - cols[0]))
    return fields


@pytest.mark.parametrize("stages", [0, 1, 2])
def test_default_network_fields_match_impulse_response(stages):
    net = build_series_network(DEFAULT_CHANNEL_PLAN, stages=stages, classes=10, rng=SeededRng(0))
    report = receptive_field_check(net)
    assert report.passed
    measured = network_impulse_fields(net)
    assert sorted(f.edge for f in report.fields) == sorted(measured)
    for f in report.fields:
        assert measured[f.edge] == (f.rf, f.jump), (f.junction, f.edge)


def test_describe_topology_lists_every_edge(tiny_net):
    topo = describe_topology(tiny_net)
    assert [e["name"] for e in topo["edges"]] == ["0_1", "0_2"]
    assert topo["classes"] == 3
    assert topo["edges"][1]["stride"] == 2
    assert json.loads(topology_json(tiny_net)) == topo
