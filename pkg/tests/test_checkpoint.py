import json

import numpy as np
import pytest

from helpers import randomize_norms
from simple2complex.backend.data import NormalizationStats
from simple2complex.backend.graph import forward_pass, topology_json
from simple2complex.backend.growth import apply_growth, plan_growth
from simple2complex.backend.optimizer import EmaState
from simple2complex.backend.storage.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    _PREAMBLE,
    load_checkpoint,
    save_checkpoint,
)
from simple2complex.common.errors import (
    CheckpointError,
    CheckpointIndexError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from simple2complex.common.tensor import SeededRng


@pytest.fixture
def grown(tiny_net, rng):
    randomize_norms(tiny_net, rng)
    child = apply_growth(tiny_net, plan_growth(tiny_net), rng)
    child.edge("1_2").bn.gamma[...] = 0.25
    return child


def test_round_trip_is_bitwise(tmp_path, grown, rng):
    ema = EmaState(decay=0.99, warmup=True)
    ema.sync(grown.parameters())
    ema.update(grown.parameters())
    stats = NormalizationStats((0.1, 0.2, 0.3), (1.0, 2.0, 3.0))
    source = SeededRng(77)
    source.normal((3,))
    path = save_checkpoint(
        tmp_path / "net.s2c",
        grown,
        ema=ema,
        step=42,
        rng_state=source.state,
        normalization=stats,
        config={"seed": 5},
        meta={"stage": 1},
    )
    loaded = load_checkpoint(path)
    x = rng.normal((3, 3, 8, 8))
    before = forward_pass(grown, x).logits
    after = forward_pass(loaded.network, x).logits
    assert before.tobytes() == after.tobytes()
    assert loaded.network.layer_names() == grown.layer_names()
    assert loaded.network.stage_count == 1
    assert loaded.step == 42
    assert loaded.normalization == stats
    assert loaded.config == {"seed": 5}
    assert loaded.meta == {"stage": 1}
    assert loaded.ema.updates == 1 and loaded.ema.warmup
    assert all(np.array_equal(loaded.ema.shadow[k], v) for k, v in ema.shadow.items())
    resumed = SeededRng(0)
    resumed.state = loaded.rng_state
    assert np.array_equal(resumed.normal((4,)), source.normal((4,)))


def test_running_statistics_survive(tmp_path, grown):
    loaded = load_checkpoint(save_checkpoint(tmp_path / "net.s2c", grown))
    for e in grown.edges:
        got = loaded.network.edge(e.key).bn
        assert np.array_equal(got.running_mean, e.bn.running_mean)
        assert np.array_equal(got.running_var, e.bn.running_var)
        assert got.updates == e.bn.updates


def test_checkpoint_holds_no_optimizer_state(tmp_path, grown):
    ema = EmaState(decay=0.99, warmup=True)
    ema.sync(grown.parameters())
    raw = save_checkpoint(tmp_path / "net.s2c", grown, ema=ema).read_bytes()
    _, _, length = _PREAMBLE.unpack_from(raw)
    header = json.loads(raw[_PREAMBLE.size : _PREAMBLE.size + length])
    stored = {b["key"] for b in header["blobs"]}
    params = set(grown.parameters())
    stats = {f"{e.key}.{s}" for e in grown.edges for s in ("running_mean", "running_var")}
    assert stored == params | stats | {f"ema/{k}" for k in params}
    assert not {"velocity", "lr", "schedule"} & set(header)


def test_single_precision_round_trip(tmp_path):
    from helpers import TINY_PLAN
    from simple2complex.backend.graph import build_plain_network

    net = build_plain_network(TINY_PLAN, classes=3, rng=SeededRng(1), input_shape=(3, 8, 8))
    loaded = load_checkpoint(save_checkpoint(tmp_path / "single.s2c", net))
    assert loaded.network.precision == "single"
    assert loaded.network.head.weights.dtype == np.float32


def test_topology_is_exported(tmp_path, grown):
    path = save_checkpoint(tmp_path / "net.s2c", grown)
    text = (tmp_path / "net.s2c.topology.json").read_text()
    assert text == topology_json(grown)
    topo = json.loads(text)
    assert [e["name"] for e in topo["edges"]] == grown.layer_names()
    assert not (tmp_path / "net.s2c.tmp").exists()
    assert path.read_bytes()[:4] == MAGIC


def test_bad_magic(tmp_path, grown):
    path = save_checkpoint(tmp_path / "net.s2c", grown)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointMagicError):
        load_checkpoint(path)


def test_unknown_version(tmp_path, grown):
    path = save_checkpoint(tmp_path / "net.s2c", grown)
    raw = bytearray(path.read_bytes())
    raw[4] = FORMAT_VERSION + 1
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_truncated_blob_names_tensor(tmp_path, grown):
    path = save_checkpoint(tmp_path / "net.s2c", grown)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(CheckpointTruncatedError) as info:
        load_checkpoint(path)
    assert info.value.tensor == "head.bias"


def test_truncated_header(tmp_path, grown):
    path = save_checkpoint(tmp_path / "net.s2c", grown)
    path.write_bytes(path.read_bytes()[: _PREAMBLE.size + 10])
    with pytest.raises(CheckpointTruncatedError) as info:
        load_checkpoint(path)
    assert info.value.tensor == "<header>"


def test_trailing_bytes_are_rejected(tmp_path, grown):
    path = save_checkpoint(tmp_path / "net.s2c", grown)
    path.write_bytes(path.read_bytes() + b"\x00" * 8)
    with pytest.raises(CheckpointIndexError):
        load_checkpoint(path)


def test_malformed_header(tmp_path):
    header = b'{"topology": {}, "blobs": [], "surprise": 1}'
    path = tmp_path / "bad.s2c"
    path.write_bytes(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)) + header)
    with pytest.raises(CheckpointIndexError):
        load_checkpoint(path)


def test_missing_tensor(tmp_path, grown):
    path = save_checkpoint(tmp_path / "net.s2c", grown)
    raw = path.read_bytes()
    _, _, header_len = _PREAMBLE.unpack_from(raw)
    start = _PREAMBLE.size
    header = json.loads(raw[start : start + header_len])
    dropped = header["blobs"].pop()
    header_bytes = json.dumps(header).encode()
    body = raw[start + header_len :][: -dropped["nbytes"]]
    path.write_bytes(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + body)
    with pytest.raises(CheckpointIndexError, match="head.bias"):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.s2c")
