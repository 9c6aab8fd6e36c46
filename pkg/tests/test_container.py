import math
import os
import struct

import numpy as np
import pytest

from dpqhd import container
from dpqhd.compression import CompressionConfig, run_pipeline
from dpqhd.cost_model import account
from dpqhd.errors import ParseError
from dpqhd.hdc_core import (DecomposedEncoder, FullEncoder, Normalizer, encode_all,
                            predict_batch, train_centroid)
from dpqhd.tensor_core import gen_gaussian_matrix


@pytest.fixture(scope="module")
def artifacts(blobs):
    tr, _ = blobs
    enc = FullEncoder(gen_gaussian_matrix(16, 240, 3))
    model = train_centroid(enc, tr)
    norm = Normalizer.fit(tr.features)
    full = container.Artifact(enc, model, norm, 240)
    out = {"full": full}
    for name, cfg in {
        "q3": CompressionConfig(rank=8, prune_ratio=0.5, bits=3),
        "q8_p2only": CompressionConfig(rank=8, bits=8, quantize_p1=False,
                                       quantize_model=False),
        "real": CompressionConfig(rank=6, prune_ratio=0.25, quantize_p1=False,
                                  quantize_p2=False, quantize_model=False),
    }.items():
        arts = run_pipeline(enc, model, cfg, tr)
        out[name] = container.Artifact(arts.encoder, arts.model, norm, 240, 0.125)
    return out


@pytest.mark.parametrize("name", ["full", "q3", "q8_p2only", "real"])
def test_payload_equals_cost_model(artifacts, tmp_path, name):
    art = artifacts[name]
    path = tmp_path / "a.dpqh"
    container.save(str(path), art)
    loaded = container.load(str(path))
    assert container.payload_size(str(path)) == account(loaded.encoder, loaded.model).total_bytes
    assert container.payload_size(str(path)) == account(art.encoder, art.model).total_bytes


@pytest.mark.parametrize("name", ["full", "q3", "q8_p2only", "real"])
def test_roundtrip_byte_identical(artifacts, tmp_path, name):
    path1, path2 = tmp_path / "a.dpqh", tmp_path / "b.dpqh"
    container.save(str(path1), artifacts[name])
    container.save(str(path2), container.load(str(path1)))
    assert path1.read_bytes() == path2.read_bytes()


def test_loaded_artifact_predicts_the_same(artifacts, blobs):
    _, te = blobs
    art = artifacts["q3"]
    loaded = container.from_bytes(container.to_bytes(art))
    a, _ = predict_batch(art.model, encode_all(art.encoder, te.features))
    b, _ = predict_batch(loaded.model, encode_all(loaded.encoder, te.features))
    # quantized tensors and f32 scales survive exactly
    assert np.array_equal(a, b)
    assert np.array_equal(loaded.model.class_hvs.values, art.model.class_hvs.values)
    assert loaded.threshold == 0.125 and loaded.baseline_dim == 240


def test_header_fields(artifacts):
    data = container.to_bytes(artifacts["q3"])
    h = container.parse_header(data)
    assert data[:4] == b"DPQH"
    assert struct.unpack_from("<H", data, 4)[0] == 1
    assert h.header_len == 43 + 8 * 16
    assert (h.features, h.rank, h.dim, h.classes, h.variant) == (16, 8, 120, 3, 1)
    assert h.tags == (3, 3, 3) and h.activation_bits == 8
    full = container.parse_header(container.to_bytes(artifacts["full"]))
    assert full.variant == 0 and full.tags == (0, 0, 0) and full.threshold is None


def test_corruptions(artifacts):
    data = container.to_bytes(artifacts["q3"])
    with pytest.raises(ParseError, match="bad magic"):
        container.from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ParseError, match="version"):
        container.from_bytes(data[:4] + b"\x09\x00" + data[6:])
    with pytest.raises(ParseError, match="truncated header"):
        container.from_bytes(data[:20])
    with pytest.raises(ParseError, match="truncated .* at offset"):
        container.from_bytes(data[:-3])
    with pytest.raises(ParseError, match="trailing"):
        container.from_bytes(data + b"\x00")
    bad_tag = bytearray(data)
    bad_tag[31] = 12
    with pytest.raises(ParseError, match="bitwidth tag"):
        container.from_bytes(bytes(bad_tag))


def test_save_is_atomic_on_failure(artifacts, tmp_path, monkeypatch):
    path = tmp_path / "x.dpqh"
    path.write_bytes(b"old")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(container.os, "replace", boom)
    with pytest.raises(OSError):
        container.save(str(path), artifacts["q3"])
    assert path.read_bytes() == b"old"
    assert os.listdir(tmp_path) == ["x.dpqh"]


def test_threshold_nan_means_unset(artifacts):
    art = artifacts["full"]
    assert container.from_bytes(container.to_bytes(art)).threshold is None
    assert math.isnan(struct.unpack_from("<d", container.to_bytes(art), 35)[0])


def test_decomposed_real_roundtrip_values(artifacts):
    art = artifacts["real"]
    loaded = container.from_bytes(container.to_bytes(art))
    assert isinstance(loaded.encoder, DecomposedEncoder)
    assert np.array_equal(loaded.encoder.P1, art.encoder.P1.astype(np.float32))
