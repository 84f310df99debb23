"""Series neural network: conv-bn edges between add junctions.

A junction sums its incoming edges (in edge-creation order) and applies the network
activation, except the output junction, which feeds the classifier head directly.
"""

from __future__ import annotations

import copy
import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from simple2complex.backend.layers import (
    BatchNormParams,
    ConvParams,
    HeadParams,
    activation_pair,
    add_junction_forward,
    batch_norm_backward,
    batch_norm_forward,
    classifier_head_backward,
    classifier_head_loss,
    conv_backward,
    conv_forward,
    conv_output_size,
    head_logits,
    init_batch_norm,
    init_conv,
    init_head,
)
from simple2complex.common.errors import ConfigError, ConsistencyError, GraphError, ShapeError
from simple2complex.common.models import LayerName, LayerSpec
from simple2complex.common.tensor import SeededRng, dtype_for

log = structlog.get_logger(__name__)


# -------------------------------
# Network structure
# -------------------------------
@dataclass
class Edge:
    name: LayerName
    tail: int
    head: int
    conv: ConvParams
    bn: BatchNormParams

    @property
    def origin_stage(self) -> int:
        return self.name.stage

    @property
    def key(self) -> str:
        return str(self.name)


@dataclass
class SeriesNetwork:
    input_shape: Tuple[int, int, int]  # channels, height, width
    edges: List[Edge]
    head: HeadParams
    node_count: int
    input_node: int = 0
    output_node: int = 1
    stage_count: int = 0
    activation: str = "relu"
    precision: str = "single"
    version: int = 0

    # -- lookup --------------------------------------------------------------
    def edge(self, name: Any) -> Edge:
        key = str(name)
        for e in self.edges:
            if e.key == key:
                return e
        raise KeyError(f"No layer named {key}.")

    def layer_names(self) -> List[str]:
        return [e.key for e in self.edges]

    def edges_into(self, node: int) -> List[Edge]:
        return [e for e in self.edges if e.head == node]

    def edges_from(self, node: int) -> List[Edge]:
        return [e for e in self.edges if e.tail == node]

    def edges_of_stage(self, stage: int) -> List[Edge]:
        return [e for e in self.edges if e.origin_stage == stage]

    def touch(self) -> None:
        """Mark cached activations as stale."""
        self.version += 1

    # -- parameters ----------------------------------------------------------
    def parameters(self) -> Dict[str, np.ndarray]:
        """Trainable tensors keyed '<layer>.weight|gamma|beta' and 'head.weight|bias'.

        The arrays are the live storage; in-place updates change the network.
        """
        params: Dict[str, np.ndarray] = {}
        for e in self.edges:
            params[f"{e.key}.weight"] = e.conv.weights
            params[f"{e.key}.gamma"] = e.bn.gamma
            params[f"{e.key}.beta"] = e.bn.beta
        params["head.weight"] = self.head.weights
        params["head.bias"] = self.head.bias
        return params

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def clone(self) -> "SeriesNetwork":
        return copy.deepcopy(self)

    # -- structure -----------------------------------------------------------
    def topological_nodes(self) -> List[int]:
        indegree = {n: 0 for n in range(self.node_count)}
        for e in self.edges:
            indegree[e.head] += 1
        ready = [n for n, d in indegree.items() if d == 0]
        heapq.heapify(ready)
        order: List[int] = []
        while ready:
            node = heapq.heappop(ready)
            order.append(node)
            for e in self.edges_from(node):
                indegree[e.head] -= 1
                if indegree[e.head] == 0:
                    heapq.heappush(ready, e.head)
        if len(order) != self.node_count:
            raise GraphError("Series network contains a cycle.")
        return order

    def node_shapes(self) -> Dict[int, Tuple[int, int, int]]:
        """Per-junction (channels, height, width); raises on incompatible incoming edges."""
        shapes: Dict[int, Tuple[int, int, int]] = {self.input_node: tuple(self.input_shape)}
        for node in self.topological_nodes():
            if node == self.input_node:
                continue
            incoming = self.edges_into(node)
            if not incoming:
                raise GraphError(f"Junction {node} has no incoming edges.", junction=node)
            produced = []
            for e in incoming:
                c, h, w = shapes[e.tail]
                if e.conv.in_channels != c:
                    raise GraphError(
                        f"Edge {e.key} expects {e.conv.in_channels} channels but junction "
                        f"{e.tail} carries {c}.",
                        junction=e.tail,
                    )
                k = e.conv.kernel
                produced.append(
                    (
                        e.conv.out_channels,
                        conv_output_size(h, k, e.conv.stride, e.conv.padding),
                        conv_output_size(w, k, e.conv.stride, e.conv.padding),
                    )
                )
            if any(s != produced[0] for s in produced[1:]):
                raise GraphError(
                    f"Junction {node} receives incompatible shapes {produced}.", junction=node
                )
            if min(produced[0][1:]) < 1:
                raise GraphError(f"Junction {node} has an empty spatial extent.", junction=node)
            shapes[node] = produced[0]
        return shapes

    def validate(self) -> None:
        names = self.layer_names()
        if len(set(names)) != len(names):
            raise GraphError("Layer names must be unique.")
        shapes = self.node_shapes()  # also checks acyclicity
        # every edge must lie on an input -> output path
        reachable = {self.input_node}
        for node in self.topological_nodes():
            if node in reachable:
                reachable.update(e.head for e in self.edges_from(node))
        reaches_out = {self.output_node}
        for node in reversed(self.topological_nodes()):
            if any(e.head in reaches_out for e in self.edges_from(node)):
                reaches_out.add(node)
        for e in self.edges:
            if e.tail not in reachable or e.head not in reaches_out:
                raise GraphError(f"Edge {e.key} is not on an input-to-output path.")
        if shapes[self.output_node][0] != self.head.weights.shape[1]:
            raise GraphError(
                "Head feature width does not match the output junction.",
                junction=self.output_node,
            )


# -------------------------------
# Construction
# -------------------------------
def build_plain_network(
    plan: Sequence[LayerSpec],
    *,
    classes: int,
    rng: SeededRng,
    input_shape: Tuple[int, int, int] = (3, 32, 32),
    precision: str = "single",
    activation: str = "relu",
    bn_epsilon: float = 1e-5,
    bn_decay: float = 0.9999,
    bn_warmup: bool = False,
) -> SeriesNetwork:
    """Chain of t conv-bn edges named 0_1..0_t (the N_s0 of a growth run)."""
    if not plan:
        raise ConfigError("Channel plan must have at least one layer.", key="model.channel_plan")
    activation_pair(activation)
    dtype = dtype_for(precision)
    edges: List[Edge] = []
    in_channels = input_shape[0]
    for ordinal, spec in enumerate(plan, start=1):
        try:
            conv = init_conv(
                in_channels,
                spec.filters,
                spec.kernel,
                stride=spec.stride,
                padding=spec.padding,
                rng=rng,
                dtype=dtype,
            )
        except ShapeError as exc:
            raise ConfigError(f"Invalid layer 0_{ordinal}: {exc}", key="model.channel_plan") from exc
        bn = init_batch_norm(
            spec.filters, dtype=dtype, epsilon=bn_epsilon, ema_decay=bn_decay, warmup=bn_warmup
        )
        edges.append(Edge(LayerName(0, ordinal), ordinal - 1, ordinal, conv, bn))
        in_channels = spec.filters
    net = SeriesNetwork(
        input_shape=tuple(input_shape),
        edges=edges,
        head=init_head(in_channels, classes, rng=rng, dtype=dtype),
        node_count=len(plan) + 1,
        input_node=0,
        output_node=len(plan),
        activation=activation,
        precision=precision,
    )
    try:
        net.validate()
    except GraphError as exc:
        raise ConfigError(f"Invalid channel plan: {exc}", key="model.channel_plan") from exc
    return net


# -------------------------------
# Forward / backward
# -------------------------------
@dataclass
class ForwardCache:
    mode: str
    version: int
    node_pre: Dict[int, np.ndarray] = field(default_factory=dict)
    conv: Dict[str, Any] = field(default_factory=dict)
    bn: Dict[str, Any] = field(default_factory=dict)
    head: Optional[Tuple[Any, ...]] = None


@dataclass
class ForwardResult:
    logits: np.ndarray
    cache: ForwardCache
    loss: Optional[float] = None
    accuracy: Optional[float] = None


def forward_pass(
    net: SeriesNetwork,
    batch: np.ndarray,
    labels: Optional[np.ndarray] = None,
    *,
    mode: str = "eval",
    ema: Any = None,
) -> ForwardResult:
    """Evaluate the network in topological order.

    With ``ema`` (an EmaState) the shadow parameters are swapped in for the duration of the
    call. Loss and accuracy are filled in when labels are given.
    """
    if ema is not None:
        with ema.applied(net.parameters()):
            return forward_pass(net, batch, labels, mode=mode)
    if mode not in ("train", "eval"):
        raise ValueError(f"Unknown mode {mode!r}.")
    if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(net.input_shape):
        raise ShapeError(
            f"Batch shape {batch.shape} does not match network input {net.input_shape}."
        )
    if batch.dtype != dtype_for(net.precision):
        raise ShapeError(f"Batch dtype {batch.dtype} does not match {net.precision} precision.")
    act_forward, _ = activation_pair(net.activation)
    cache = ForwardCache(mode=mode, version=net.version)
    values: Dict[int, np.ndarray] = {net.input_node: batch}
    for node in net.topological_nodes():
        if node == net.input_node:
            continue
        branch_outputs = []
        for e in net.edges_into(node):
            z, cache.conv[e.key] = conv_forward(values[e.tail], e.conv)
            y, cache.bn[e.key] = batch_norm_forward(z, e.bn, mode)
            branch_outputs.append(y)
        try:
            summed, _ = add_junction_forward(branch_outputs)
        except ShapeError as exc:
            raise GraphError(f"Junction {node}: {exc}", junction=node) from exc
        if node == net.output_node:
            values[node] = summed
        else:
            cache.node_pre[node] = summed
            values[node], _ = act_forward(summed)
    features = values[net.output_node]
    if labels is None:
        logits, _ = head_logits(features, net.head)
        return ForwardResult(logits=logits, cache=cache)
    loss, accuracy, cache.head = classifier_head_loss(features, labels, net.head)
    return ForwardResult(logits=cache.head[4], cache=cache, loss=loss, accuracy=accuracy)


def backward_pass(net: SeriesNetwork, cache: ForwardCache) -> Dict[str, np.ndarray]:
    """Gradients of the loss keyed exactly like ``net.parameters()``."""
    if cache.version != net.version:
        raise ConsistencyError("Network changed since the forward pass; cache is stale.")
    if cache.mode != "train" or cache.head is None:
        raise ConsistencyError("Backward needs a train-mode forward pass with labels.")
    _, act_backward = activation_pair(net.activation)
    grads: Dict[str, np.ndarray] = {}
    dfeatures, grads["head.weight"], grads["head.bias"] = classifier_head_backward(cache.head)
    node_grads: Dict[int, np.ndarray] = {net.output_node: dfeatures}
    for node in reversed(net.topological_nodes()):
        if node == net.input_node:
            continue
        upstream = node_grads.pop(node)
        if node != net.output_node:
            upstream = act_backward(upstream, cache.node_pre[node])
        for e in net.edges_into(node):
            dz, grads[f"{e.key}.gamma"], grads[f"{e.key}.beta"] = batch_norm_backward(
                upstream, cache.bn[e.key]
            )
            dx, grads[f"{e.key}.weight"] = conv_backward(dz, cache.conv[e.key])
            if e.tail in node_grads:
                node_grads[e.tail] = node_grads[e.tail] + dx
            else:
                node_grads[e.tail] = dx
    ordered = {key: grads[key] for key in net.parameters()}
    return ordered


# -------------------------------
# Receptive fields
# -------------------------------
@dataclass(frozen=True)
class JunctionField:
    junction: int
    edge: str
    rf: int
    jump: int


@dataclass
class ReceptiveFieldReport:
    fields: List[JunctionField]
    failures: List[int]

    @property
    def passed(self) -> bool:
        return not self.failures

    def at(self, junction: int) -> List[JunctionField]:
        return [f for f in self.fields if f.junction == junction]


def receptive_field_check(net: SeriesNetwork) -> ReceptiveFieldReport:
    """rf_out = rf_in + (k - 1) * jump_in, jump_out = jump_in * stride, per incoming edge."""
    node_field: Dict[int, Tuple[int, int]] = {net.input_node: (1, 1)}
    fields: List[JunctionField] = []
    failures: List[int] = []
    for node in net.topological_nodes():
        if node == net.input_node:
            continue
        delivered = []
        for e in net.edges_into(node):
            rf_in, jump_in = node_field[e.tail]
            rf = rf_in + (e.conv.kernel - 1) * jump_in
            jump = jump_in * e.conv.stride
            fields.append(JunctionField(node, e.key, rf, jump))
            delivered.append((rf, jump))
        if any(d != delivered[0] for d in delivered[1:]):
            failures.append(node)
        node_field[node] = delivered[0]
    if failures:
        log.warning("receptive_field_mismatch", junctions=failures)
    return ReceptiveFieldReport(fields=fields, failures=failures)


# -------------------------------
# Inspection
# -------------------------------
def describe_topology(net: SeriesNetwork) -> Dict[str, Any]:
    return {
        "input_shape": list(net.input_shape),
        "node_count": net.node_count,
        "input_node": net.input_node,
        "output_node": net.output_node,
        "stage_count": net.stage_count,
        "activation": net.activation,
        "precision": net.precision,
        "classes": net.head.classes,
        "edges": [
            {
                "name": e.key,
                "tail": e.tail,
                "head": e.head,
                "origin_stage": e.origin_stage,
                "in_channels": e.conv.in_channels,
                "out_channels": e.conv.out_channels,
                "kernel": e.conv.kernel,
                "stride": e.conv.stride,
                "padding": e.conv.padding,
                "bn_epsilon": e.bn.epsilon,
                "bn_decay": e.bn.ema_decay,
                "bn_warmup": e.bn.warmup,
                "bn_updates": e.bn.updates,
            }
            for e in net.edges
        ],
    }


def topology_json(net: SeriesNetwork) -> str:
    return json.dumps(describe_topology(net), indent=2)


def iter_gamma_layers(net: SeriesNetwork) -> Iterator[Edge]:
    """Edges whose batch norm feeds an add junction directly (backbone + second path layers)."""
    for e in net.edges:
        if e.origin_stage == 0 or e.name.ordinal % 2 == 0:
            yield e
