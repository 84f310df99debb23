"""Growing N_s(i+1) from N_si with function-preserving two-layer residual paths."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from simple2complex.backend.graph import (
    Edge,
    SeriesNetwork,
    build_plain_network,
    forward_pass,
    iter_gamma_layers,
)
from simple2complex.backend.layers import init_batch_norm, init_conv
from simple2complex.common.errors import ConsistencyError, GrowthError
from simple2complex.common.models import LayerName, LayerSpec
from simple2complex.common.tensor import SeededRng, dtype_for
from simple2complex.common.utils import mean_abs

log = structlog.get_logger(__name__)


# -------------------------------
# Plans
# -------------------------------
@dataclass(frozen=True)
class PathLayerSpec:
    name: LayerName
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int


@dataclass(frozen=True)
class GrowthAddition:
    target: LayerName
    first: PathLayerSpec
    second: PathLayerSpec


@dataclass(frozen=True)
class GrowthPlan:
    stage: int
    additions: Tuple[GrowthAddition, ...]
    parent_layers: Tuple[str, ...] = ()

    @property
    def new_layers(self) -> List[LayerName]:
        names: List[LayerName] = []
        for add in self.additions:
            names.extend([add.first.name, add.second.name])
        return names


def path_kernels(kernel: int) -> Tuple[int, int]:
    """Two odd kernels whose stacked receptive field equals one `kernel` x `kernel` conv."""
    if kernel == 1:
        return 1, 1
    return 3, kernel - 2


def plan_growth(net: SeriesNetwork) -> GrowthPlan:
    """One two-layer path for every edge added at the network's newest stage.

    The path paralleling edge i_j is named (i+1)_(2j-1), (i+1)_(2j); its stride sits on the
    second conv so every junction keeps matching receptive fields.
    """
    stage = net.stage_count
    additions: List[GrowthAddition] = []
    for e in net.edges_of_stage(stage):
        k1, k2 = path_kernels(e.conv.kernel)
        width = e.conv.out_channels
        j = e.name.ordinal
        first = PathLayerSpec(
            name=LayerName(stage + 1, 2 * j - 1),
            in_channels=e.conv.in_channels,
            out_channels=width,
            kernel=k1,
            stride=1,
            padding=k1 // 2,
        )
        second = PathLayerSpec(
            name=LayerName(stage + 1, 2 * j),
            in_channels=width,
            out_channels=width,
            kernel=k2,
            stride=e.conv.stride,
            padding=k2 // 2,
        )
        additions.append(GrowthAddition(target=e.name, first=first, second=second))
    return GrowthPlan(
        stage=stage + 1, additions=tuple(additions), parent_layers=tuple(net.layer_names())
    )


def _new_edge(
    spec: PathLayerSpec,
    tail: int,
    head: int,
    *,
    template: Edge,
    gamma: float,
    rng: SeededRng,
    dtype: np.dtype,
) -> Edge:
    conv = init_conv(
        spec.in_channels,
        spec.out_channels,
        spec.kernel,
        stride=spec.stride,
        padding=spec.padding,
        rng=rng,
        dtype=dtype,
    )
    bn = init_batch_norm(
        spec.out_channels,
        dtype=dtype,
        gamma=gamma,
        epsilon=template.bn.epsilon,
        ema_decay=template.bn.ema_decay,
        warmup=template.bn.warmup,
    )
    return Edge(spec.name, tail, head, conv, bn)


def apply_growth(
    net: SeriesNetwork,
    plan: GrowthPlan,
    rng: SeededRng,
    *,
    zero_gamma: bool = True,
) -> SeriesNetwork:
    """Return the grown child; ``net`` is left untouched.

    Inherited edges keep bitwise-equal parameters and running statistics. Each new path gets
    He-initialized convs, a standard first batch norm and a second batch norm with gamma = 0
    (gamma = 1 when ``zero_gamma`` is off, the end-to-end baseline initialization).
    """
    if plan.parent_layers and tuple(net.layer_names()) != plan.parent_layers:
        raise ConsistencyError("Growth plan was made for a different network.")
    if not plan.additions:
        return net.clone()
    if plan.stage != net.stage_count + 1:
        raise ConsistencyError(
            f"Plan grows stage {plan.stage} but the network is at stage {net.stage_count}."
        )
    child = net.clone()
    dtype = dtype_for(net.precision)
    for add in plan.additions:
        try:
            target = child.edge(add.target)
        except KeyError as exc:
            raise ConsistencyError(f"Plan targets unknown layer {add.target}.") from exc
        if target.origin_stage != net.stage_count:
            raise ConsistencyError(f"Layer {add.target} is not from the newest stage.")
        mid = child.node_count
        child.node_count += 1
        child.edges.append(
            _new_edge(add.first, target.tail, mid, template=target, gamma=1.0, rng=rng, dtype=dtype)
        )
        child.edges.append(
            _new_edge(
                add.second,
                mid,
                target.head,
                template=target,
                gamma=0.0 if zero_gamma else 1.0,
                rng=rng,
                dtype=dtype,
            )
        )
    child.stage_count = plan.stage
    child.version = 0
    child.validate()
    log.info(
        "growth_applied",
        stage=plan.stage,
        added_layers=len(plan.new_layers),
        parameters=child.parameter_count(),
    )
    return child


def build_series_network(
    plan: Sequence[LayerSpec],
    *,
    stages: int,
    classes: int,
    rng: SeededRng,
    input_shape: Tuple[int, int, int] = (3, 32, 32),
    precision: str = "single",
    activation: str = "relu",
    bn_epsilon: float = 1e-5,
    bn_decay: float = 0.9999,
    bn_warmup: bool = False,
) -> SeriesNetwork:
    """The stage-n architecture built directly, standard initialization everywhere."""
    net = build_plain_network(
        plan,
        classes=classes,
        rng=rng,
        input_shape=input_shape,
        precision=precision,
        activation=activation,
        bn_epsilon=bn_epsilon,
        bn_decay=bn_decay,
        bn_warmup=bn_warmup,
    )
    for _ in range(stages):
        net = apply_growth(net, plan_growth(net), rng, zero_gamma=False)
    return net


# -------------------------------
# Checks and reports
# -------------------------------
@dataclass(frozen=True)
class PreservationReport:
    max_abs_diff: float
    tol: float
    check_batches: int

    @property
    def passed(self) -> bool:
        return self.max_abs_diff <= self.tol


def verify_preservation(
    parent: SeriesNetwork,
    child: SeriesNetwork,
    *,
    rng: SeededRng,
    check_batches: int = 16,
    batch: int = 4,
    tol: float = 1e-5,
) -> PreservationReport:
    if tuple(parent.input_shape) != tuple(child.input_shape):
        raise ConsistencyError("Parent and child take different input shapes.")
    dtype = dtype_for(parent.precision)
    worst = 0.0
    for _ in range(check_batches):
        x = rng.normal((batch, *parent.input_shape), dtype=dtype)
        a = forward_pass(parent, x, mode="eval").logits
        b = forward_pass(child, x.astype(dtype_for(child.precision)), mode="eval").logits
        worst = max(worst, float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64)))))
    return PreservationReport(max_abs_diff=worst, tol=tol, check_batches=check_batches)


@dataclass(frozen=True)
class GrowthAccounting:
    parent_count: int
    added_count: int
    child_count: int
    inherited_preserved: bool
    new_keys_disjoint: bool

    @property
    def balanced(self) -> bool:
        return self.child_count == self.parent_count + self.added_count


def parameter_accounting(parent: SeriesNetwork, child: SeriesNetwork) -> GrowthAccounting:
    """|w_s(i+1)| = |w_si| + |w_ri| with inherited tensors bitwise equal."""
    old = parent.parameters()
    new = child.parameters()
    added = {k: v for k, v in new.items() if k not in old}
    preserved = all(
        k in new and new[k].shape == v.shape and np.array_equal(new[k], v) for k, v in old.items()
    )
    return GrowthAccounting(
        parent_count=int(sum(v.size for v in old.values())),
        added_count=int(sum(v.size for v in added.values())),
        child_count=int(sum(v.size for v in new.values())),
        inherited_preserved=preserved,
        new_keys_disjoint=set(added).isdisjoint(old),
    )


def stage_gamma_means(net: SeriesNetwork) -> Dict[int, float]:
    """Mean |gamma| over the add-junction-feeding batch norms of each stage."""
    per_stage: Dict[int, List[np.ndarray]] = {}
    for e in iter_gamma_layers(net):
        per_stage.setdefault(e.origin_stage, []).append(e.bn.gamma)
    return {s: mean_abs(np.concatenate(g)) for s, g in sorted(per_stage.items())}


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    newest_mean: float
    threshold: float
    stage_means: Dict[int, float] = field(default_factory=dict)


def growth_stop_criterion(net: SeriesNetwork, threshold: float = 0.01) -> StopDecision:
    """Stop once the newest stage's second-BN gammas have shrunk below ``threshold`` on average."""
    if net.stage_count < 1:
        raise GrowthError("The stop criterion needs a network with at least one growth stage.")
    means = stage_gamma_means(net)
    newest = means.get(net.stage_count, 0.0)
    return StopDecision(
        stop=newest < threshold, newest_mean=newest, threshold=threshold, stage_means=means
    )
