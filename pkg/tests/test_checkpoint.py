import numpy as np
import pytest

from onet.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from onet.models import ModelConfig, build_onet, build_unet
from onet.optim import TrainConfig, train

CFG = ModelConfig(input_size=16, base_channels=2, depth=2)


@pytest.fixture
def trained(tmp_path):
    g = build_onet(CFG, seed=4)
    x = np.random.default_rng(0).uniform(size=(3, 1, 16, 16))
    state, _ = train(g, x, (x > 0.5).astype(float), TrainConfig(max_epochs=2, stop_delta=0))
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, g, state, CFG)
    return g, state, path


def test_roundtrip_is_bit_exact(trained):
    g, state, path = trained
    ck = load_checkpoint(path)
    assert ck.config == CFG
    assert ck.state.t == state.t == 2
    for a, b in zip(ck.params, g.param_arrays()):
        assert a.dtype == b.dtype and np.array_equal(a, b)
    for a, b in zip(ck.state.m + ck.state.v, state.m + state.v):
        assert np.array_equal(a, b)
    assert (ck.state.lr, ck.state.beta1, ck.state.beta2, ck.state.eps) == (state.lr, state.beta1, state.beta2, state.eps)


def test_load_into_fresh_graph(trained):
    g, _, path = trained
    fresh = build_onet(CFG, seed=99)
    load_checkpoint(path, graph=fresh)
    for a, b in zip(fresh.param_arrays(), g.param_arrays()):
        assert np.array_equal(a, b)


def test_single_precision_roundtrip(tmp_path):
    cfg = ModelConfig(input_size=16, base_channels=2, depth=2, precision="single")
    g = build_onet(cfg)
    from onet.optim import AdamState
    st = AdamState.zeros_like(g.param_arrays())
    save_checkpoint(tmp_path / "s.ckpt", g, st, cfg)
    ck = load_checkpoint(tmp_path / "s.ckpt")
    assert ck.params[0].dtype == np.float32
    assert all(np.array_equal(a, b) for a, b in zip(ck.params, g.param_arrays()))


def test_bad_magic(trained):
    _, _, path = trained
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(path)


def test_truncated(trained):
    _, _, path = trained
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_version_mismatch(trained):
    _, _, path = trained
    data = bytearray(path.read_bytes())
    data[4] = 9
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


@pytest.mark.parametrize("other", [
    lambda: build_onet(ModelConfig(input_size=16, base_channels=4, depth=2)),
    lambda: build_unet(CFG),
])
def test_registry_mismatch(trained, other):
    _, _, path = trained
    with pytest.raises(CheckpointError, match="registry mismatch"):
        load_checkpoint(path, graph=other())


def test_header_layout(trained):
    import struct
    _, _, path = trained
    data = path.read_bytes()
    assert data[:4] == b"ONET"
    version, meta_len = struct.unpack_from("<IQ", data, 4)
    assert version == 1
    import json
    meta = json.loads(data[16:16 + meta_len])
    assert meta["registry"][0]["id"] == "L1.conv"
    assert struct.unpack("<Q", data[-8:])[0] == 2
