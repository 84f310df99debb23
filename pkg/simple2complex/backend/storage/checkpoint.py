"""Checkpoint container.

Layout: ``b"S2C1"`` | version byte | uint32 LE header length | JSON header | tensor blobs.
Blobs are little-endian IEEE-754 arrays at the offsets listed in the header's blob index
(offsets relative to the start of the blob section).

A checkpoint holds the network parameters and running stats, EMA shadows, the rng state,
the normalization stats and the config. SGD velocity and lr-schedule position are not stored,
so a loaded checkpoint serves evaluation, growth and reports; training restarted from it begins
with zero velocity at the configured lr.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from simple2complex.backend.data import NormalizationStats
from simple2complex.backend.graph import Edge, SeriesNetwork, describe_topology, topology_json
from simple2complex.backend.layers import BatchNormParams, ConvParams, HeadParams
from simple2complex.backend.optimizer import EmaState
from simple2complex.common.errors import (
    CheckpointError,
    CheckpointIndexError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    GraphError,
    ShapeError,
)
from simple2complex.common.models import LayerName
from simple2complex.common.tensor import dtype_for

log = structlog.get_logger(__name__)

MAGIC = b"S2C1"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sBI")


# -------------------------------
# Header schema
# -------------------------------
class BlobEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    key: str
    dtype: Literal["<f4", "<f8"]
    shape: List[int]
    offset: int = Field(ge=0)
    nbytes: int = Field(ge=0)


class EmaHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    decay: float
    warmup: bool
    updates: int


class CheckpointHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    topology: Dict[str, Any]
    step: int = 0
    rng_state: Optional[Dict[str, Any]] = None
    normalization: Optional[Dict[str, List[float]]] = None
    config: Optional[Dict[str, Any]] = None
    ema: Optional[EmaHeader] = None
    meta: Dict[str, Any] = Field(default_factory=dict)
    blobs: List[BlobEntry]


@dataclass
class Checkpoint:
    network: SeriesNetwork
    ema: Optional[EmaState] = None
    step: int = 0
    rng_state: Optional[Dict[str, Any]] = None
    normalization: Optional[NormalizationStats] = None
    config: Optional[Dict[str, Any]] = None
    meta: Dict[str, Any] = field(default_factory=dict)


# -------------------------------
# Save
# -------------------------------
def _tensors(net: SeriesNetwork, ema: Optional[EmaState]) -> List[Tuple[str, np.ndarray]]:
    items: List[Tuple[str, np.ndarray]] = []
    for e in net.edges:
        items += [
            (f"{e.key}.weight", e.conv.weights),
            (f"{e.key}.gamma", e.bn.gamma),
            (f"{e.key}.beta", e.bn.beta),
            (f"{e.key}.running_mean", e.bn.running_mean),
            (f"{e.key}.running_var", e.bn.running_var),
        ]
    items += [("head.weight", net.head.weights), ("head.bias", net.head.bias)]
    if ema is not None:
        items += [(f"ema/{k}", v) for k, v in sorted(ema.shadow.items())]
    return items


def save_checkpoint(
    path: Union[str, Path],
    net: SeriesNetwork,
    *,
    ema: Optional[EmaState] = None,
    step: int = 0,
    rng_state: Optional[Dict[str, Any]] = None,
    normalization: Optional[NormalizationStats] = None,
    config: Optional[Dict[str, Any]] = None,
    meta: Optional[Dict[str, Any]] = None,
    export_topology: bool = True,
) -> Path:
    path = Path(path)
    entries: List[BlobEntry] = []
    chunks: List[bytes] = []
    offset = 0
    for key, arr in _tensors(net, ema):
        little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(little).tobytes()
        entries.append(
            BlobEntry(
                key=key,
                dtype="<f4" if arr.dtype == np.float32 else "<f8",
                shape=list(arr.shape),
                offset=offset,
                nbytes=len(raw),
            )
        )
        chunks.append(raw)
        offset += len(raw)
    header = CheckpointHeader(
        topology=describe_topology(net),
        step=step,
        rng_state=rng_state,
        normalization=(
            {"mean": list(normalization.mean), "std": list(normalization.std)}
            if normalization
            else None
        ),
        config=config,
        ema=EmaHeader(decay=ema.decay, warmup=ema.warmup, updates=ema.updates) if ema else None,
        meta=meta or {},
        blobs=entries,
    )
    header_bytes = header.model_dump_json().encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for chunk in chunks:
            f.write(chunk)
    tmp.replace(path)
    if export_topology:
        path.with_name(path.name + ".topology.json").write_text(
            topology_json(net), encoding="utf-8"
        )
    log.debug("checkpoint_saved", path=str(path), tensors=len(entries), step=step)
    return path


# -------------------------------
# Load
# -------------------------------
def _read_header(raw: bytes, path: Path) -> Tuple[CheckpointHeader, memoryview]:
    if len(raw) < _PREAMBLE.size or raw[:4] != MAGIC:
        raise CheckpointMagicError(f"{path} is not a simple2complex checkpoint (bad magic).")
    _, version, header_len = _PREAMBLE.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path} has format version {version}; this build reads {FORMAT_VERSION}."
        )
    start = _PREAMBLE.size
    if start + header_len > len(raw):
        raise CheckpointTruncatedError(f"{path}: header is truncated.", tensor="<header>")
    try:
        header = CheckpointHeader.model_validate_json(raw[start : start + header_len])
    except ValidationError as exc:
        raise CheckpointIndexError(f"{path}: malformed header: {exc.errors()[0]['msg']}") from exc
    return header, memoryview(raw)[start + header_len :]


def _read_blobs(header: CheckpointHeader, blob: memoryview, path: Path) -> Dict[str, np.ndarray]:
    tensors: Dict[str, np.ndarray] = {}
    expected_offset = 0
    for entry in header.blobs:
        if entry.key in tensors:
            raise CheckpointIndexError(f"{path}: duplicate tensor {entry.key} in blob index.")
        dtype = np.dtype(entry.dtype)
        if entry.nbytes != int(np.prod(entry.shape, dtype=np.int64)) * dtype.itemsize:
            raise CheckpointIndexError(f"{path}: size of {entry.key} disagrees with its shape.")
        if entry.offset != expected_offset:
            raise CheckpointIndexError(f"{path}: blob {entry.key} is not at its indexed offset.")
        end = entry.offset + entry.nbytes
        if end > len(blob):
            raise CheckpointTruncatedError(
                f"{path}: blob section ends before tensor {entry.key}.", tensor=entry.key
            )
        arr = np.frombuffer(blob[entry.offset : end], dtype=dtype).reshape(entry.shape)
        tensors[entry.key] = arr.astype(dtype.newbyteorder("="))
        expected_offset = end
    if expected_offset != len(blob):
        raise CheckpointIndexError(f"{path}: {len(blob) - expected_offset} unindexed trailing bytes.")
    return tensors


def _take(tensors: Dict[str, np.ndarray], key: str, path: Path, dtype: np.dtype) -> np.ndarray:
    try:
        arr = tensors.pop(key)
    except KeyError as exc:
        raise CheckpointIndexError(f"{path}: blob index has no tensor {key}.") from exc
    if arr.dtype != dtype:
        raise CheckpointIndexError(f"{path}: tensor {key} has dtype {arr.dtype}, expected {dtype}.")
    return arr


def _build_network(topo: Dict[str, Any], tensors: Dict[str, np.ndarray], path: Path) -> SeriesNetwork:
    dtype = dtype_for(topo["precision"])
    edges: List[Edge] = []
    try:
        for spec in topo["edges"]:
            key = spec["name"]
            conv = ConvParams(
                weights=_take(tensors, f"{key}.weight", path, dtype),
                stride=int(spec["stride"]),
                padding=int(spec["padding"]),
            )
            bn = BatchNormParams(
                gamma=_take(tensors, f"{key}.gamma", path, dtype),
                beta=_take(tensors, f"{key}.beta", path, dtype),
                running_mean=_take(tensors, f"{key}.running_mean", path, dtype),
                running_var=_take(tensors, f"{key}.running_var", path, dtype),
                epsilon=float(spec["bn_epsilon"]),
                ema_decay=float(spec["bn_decay"]),
                warmup=bool(spec["bn_warmup"]),
                updates=int(spec["bn_updates"]),
            )
            edges.append(Edge(LayerName.parse(key), int(spec["tail"]), int(spec["head"]), conv, bn))
        head = HeadParams(
            weights=_take(tensors, "head.weight", path, dtype),
            bias=_take(tensors, "head.bias", path, dtype),
        )
        net = SeriesNetwork(
            input_shape=tuple(int(s) for s in topo["input_shape"]),
            edges=edges,
            head=head,
            node_count=int(topo["node_count"]),
            input_node=int(topo["input_node"]),
            output_node=int(topo["output_node"]),
            stage_count=int(topo["stage_count"]),
            activation=str(topo["activation"]),
            precision=str(topo["precision"]),
        )
        net.validate()
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (ShapeError, GraphError)):
            raise CheckpointIndexError(f"{path}: tensors do not fit the topology: {exc}") from exc
        raise CheckpointIndexError(f"{path}: malformed topology: {exc}") from exc
    return net


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}") from exc
    header, blob = _read_header(raw, path)
    tensors = _read_blobs(header, blob, path)
    net = _build_network(header.topology, tensors, path)
    ema = None
    if header.ema is not None:
        shadow = {k[len("ema/") :]: v for k, v in tensors.items() if k.startswith("ema/")}
        ema = EmaState(
            decay=header.ema.decay,
            warmup=header.ema.warmup,
            updates=header.ema.updates,
            shadow={k: shadow[k] for k in sorted(shadow)},
        )
        if set(ema.shadow) != set(net.parameters()):
            raise CheckpointIndexError(f"{path}: EMA shadows do not match the trainable parameters.")
    normalization = None
    if header.normalization is not None:
        normalization = NormalizationStats(
            mean=tuple(header.normalization["mean"]), std=tuple(header.normalization["std"])
        )
    log.debug("checkpoint_loaded", path=str(path), step=header.step)
    return Checkpoint(
        network=net,
        ema=ema,
        step=header.step,
        rng_state=header.rng_state,
        normalization=normalization,
        config=header.config,
        meta=header.meta,
    )
