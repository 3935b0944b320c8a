import json
import struct

import numpy as np
import pytest

from dresnet_ids.checkpoint import MAGIC, CheckpointError, load_checkpoint, read_header, save_checkpoint
from dresnet_ids.model import ModelConfig, build_network
from dresnet_ids.pipeline import ColumnSpec, FeatureSchema
from dresnet_ids.train import TrainConfig, predict_logits, train


def _schema():
    cols = [ColumnSpec("dur", "numeric", mean=1.5, std=0.5),
            ColumnSpec("proto", "categorical", {"tcp": 0, "udp": 1}),
            ColumnSpec("bytes", "numeric", mean=10.0, std=0.0)]
    return FeatureSchema(cols, "label", ["normal", "dos"], "normal")


@pytest.fixture
def trained():
    cfg = ModelConfig(feature_count=5, num_classes=2, pairs=2, seed=2)
    net = build_network(cfg)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(24, 5))
    train(net, X, (X[:, 1] > 0).astype(int), TrainConfig(epochs=2, batch_size=8, seed=2))
    return net, X


def test_round_trip(tmp_path, trained):
    net, X = trained
    path = tmp_path / "a.drn"
    save_checkpoint(path, net, _schema(), extra={"note": "x"})
    back, schema, header = load_checkpoint(path)
    for name, p in net.parameters().items():
        assert np.array_equal(back.parameters()[name].data, p.data)
    for name, b in net.buffers().items():
        assert np.array_equal(back.buffers()[name], b)
    assert np.array_equal(predict_logits(back, X), predict_logits(net, X))
    assert schema.fingerprint == _schema().fingerprint
    assert header["seed"] == 2 and header["extra"] == {"note": "x"}
    assert read_header(path)["model_config"] == net.config.to_dict()


def test_without_schema(tmp_path, trained):
    save_checkpoint(tmp_path / "a.drn", trained[0])
    _, schema, _ = load_checkpoint(tmp_path / "a.drn")
    assert schema is None


def test_byte_identical(tmp_path, trained):
    net, _ = trained
    save_checkpoint(tmp_path / "a.drn", net, _schema())
    save_checkpoint(tmp_path / "b.drn", net, _schema())
    assert (tmp_path / "a.drn").read_bytes() == (tmp_path / "b.drn").read_bytes()


def test_starts_with_magic(tmp_path, trained):
    save_checkpoint(tmp_path / "a.drn", trained[0])
    assert (tmp_path / "a.drn").read_bytes()[:8] == MAGIC


class TestCorruption:
    @pytest.fixture
    def raw(self, tmp_path, trained):
        save_checkpoint(tmp_path / "a.drn", trained[0], _schema())
        return (tmp_path / "a.drn").read_bytes()

    def _load(self, tmp_path, data):
        p = tmp_path / "bad.drn"
        p.write_bytes(data)
        return load_checkpoint(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="cannot read"):
            load_checkpoint(tmp_path / "nope.drn")

    def test_bad_magic(self, tmp_path, raw):
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            self._load(tmp_path, b"XXXXXXXX" + raw[8:])

    def test_bad_version(self, tmp_path, raw):
        with pytest.raises(CheckpointError, match="version"):
            self._load(tmp_path, raw[:8] + struct.pack("<I", 99) + raw[12:])

    def test_short_prefix(self, tmp_path, raw):
        with pytest.raises(CheckpointError, match="truncated"):
            self._load(tmp_path, raw[:10])

    def test_truncated_payload(self, tmp_path, raw):
        with pytest.raises(CheckpointError, match="truncated"):
            self._load(tmp_path, raw[:-16])

    def test_trailing_bytes(self, tmp_path, raw):
        with pytest.raises(CheckpointError, match="trailing"):
            self._load(tmp_path, raw + b"\0" * 8)

    def test_garbled_header(self, tmp_path, raw):
        with pytest.raises(CheckpointError, match="header"):
            self._load(tmp_path, raw[:20] + b"\xff\xfe" + raw[22:])

    def test_tampered_schema(self, tmp_path, raw):
        _, _, hlen = struct.unpack_from("<8sIQ", raw)
        header = json.loads(raw[20:20 + hlen])
        header["schema"]["columns"][0]["mean"] = 9.0
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        data = struct.pack("<8sIQ", MAGIC, 1, len(blob)) + blob + raw[20 + hlen:]
        with pytest.raises(CheckpointError, match="schema"):
            self._load(tmp_path, data)

    def test_bad_model_config(self, tmp_path, raw):
        _, _, hlen = struct.unpack_from("<8sIQ", raw)
        header = json.loads(raw[20:20 + hlen])
        header["model_config"]["pairs"] = -1
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        data = struct.pack("<8sIQ", MAGIC, 1, len(blob)) + blob + raw[20 + hlen:]
        with pytest.raises(CheckpointError, match="model config"):
            self._load(tmp_path, data)
