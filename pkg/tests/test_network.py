import struct

import numpy as np
import pytest

from vineseg import weights as W
from vineseg.layers import ShapeError
from vineseg.network import (
    NetworkValidationError, build_network, fcn_spec, input_support, nearest_valid_sizes,
    propagate_shapes, random_weights, segment_patch, valid_patch_sizes, widths_from_weights,
)

LAYER_SHAPES_608 = {
    "Data": (3, 608, 608), "Conv1": (96, 150, 150), "Pool1": (96, 75, 75), "Conv2": (128, 75, 75),
    "Pool2": (128, 37, 37), "Conv3": (192, 37, 37), "Conv4": (192, 37, 37), "Conv5": (192, 37, 37),
    "Pool5": (192, 35, 35), "Conv6": (256, 35, 35), "Conv7": (256, 35, 35), "Up-conv1": (32, 150, 150),
    "Concat": (128, 150, 150), "Conv8": (64, 150, 150), "Up-conv2": (2, 608, 608), "Prob": (2, 608, 608),
}


def test_layer_shapes_at_608():
    shapes = propagate_shapes(fcn_spec(608))
    for name, shape in LAYER_SHAPES_608.items():
        assert shapes[name] == shape, name


def test_1216_chain():
    s = propagate_shapes(fcn_spec(1216))
    assert [s[n][1] for n in ("Conv1", "Pool1", "Pool2", "Pool5", "Up-conv1", "Prob")] == [302, 151, 75, 73, 302, 1216]


def test_valid_sizes_are_multiples_of_16_from_64():
    assert valid_patch_sizes(fcn_spec(), 700) == list(range(64, 701, 16))


def test_nearest_valid_sizes():
    assert nearest_valid_sizes(fcn_spec(), 600) == (592, 608)


def test_forward_rejects_bad_size_with_suggestion(tiny_net):
    with pytest.raises(ShapeError, match="592 and 608"):
        tiny_net.forward(np.zeros((3, 600, 600), np.float32))


def test_network_rejects_invalid_patch_size():
    spec = fcn_spec(600, width_scale=0.125)
    with pytest.raises(NetworkValidationError, match="nearest valid"):
        build_network(spec, random_weights(fcn_spec(608, width_scale=0.125)))


def test_validation_lists_every_problem():
    spec = fcn_spec(256, width_scale=0.125)
    store = random_weights(spec)
    del store["Conv3"]
    w, b = store["Conv8"]
    store["Conv8"] = (w[:, :-1], b)
    with pytest.raises(NetworkValidationError) as exc:
        build_network(spec, store)
    msg = str(exc.value)
    assert "Conv3: missing" in msg and "Conv8: weight shape" in msg


def test_probabilities_sum_to_one(tiny_net, rng):
    patch = rng.integers(0, 256, (256, 256, 3), dtype=np.uint8)
    prob = segment_patch(tiny_net, patch)
    assert prob.shape == (2, 256, 256)
    assert np.max(np.abs(prob.sum(axis=0) - 1)) <= 1e-6
    assert prob.min() >= 0


def test_forward_is_deterministic(tiny_net, rng):
    patch = rng.integers(0, 256, (256, 256, 3), dtype=np.uint8)
    a = segment_patch(tiny_net, patch)
    b = segment_patch(tiny_net, patch)
    assert a.tobytes() == b.tobytes()


def test_segment_patch_rejects_non_rgb(tiny_net):
    with pytest.raises(ValueError):
        segment_patch(tiny_net, np.zeros((256, 256), np.uint8))


def test_input_support_interior_is_clean():
    spec = fcn_spec(608)
    lo, hi, clean = input_support(spec, 608, 300, 300)
    assert clean and lo < 300 < hi
    assert not input_support(spec, 608, 0, 0)[2]


def test_weight_file_roundtrip(tmp_path):
    store = random_weights(fcn_spec(256, width_scale=0.125), seed=3)
    W.write_weights(tmp_path / "w.fcnw", store)
    back = W.read_weights(tmp_path / "w.fcnw")
    assert set(back) == set(store)
    for k in store:
        assert back[k][0].tobytes() == store[k][0].tobytes()
        assert back[k][1].tobytes() == store[k][1].tobytes()
    assert widths_from_weights(back)["Conv1"] == 12


def test_weight_file_truncated_and_trailing(tmp_path):
    data = W.encode_weights(random_weights(fcn_spec(256, width_scale=0.125)))
    with pytest.raises(W.WeightFileError):
        W.decode_weights(data[:-3])
    with pytest.raises(W.WeightFileError):
        W.decode_weights(data + b"\0")
    with pytest.raises(W.WeightFileError):
        W.decode_weights(b"XXXX" + data[4:])


def _blob(name, arr):
    raw = name.encode()
    return struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.astype("<f4").tobytes()


def test_weight_file_missing_and_orphan_bias():
    w = np.zeros((1, 3, 11, 11), np.float32)
    no_bias = W.MAGIC + struct.pack("<II", 1, 1) + _blob("Conv1", w)
    with pytest.raises(W.WeightFileError, match="no bias"):
        W.decode_weights(no_bias)
    orphan = W.MAGIC + struct.pack("<II", 1, 1) + _blob("Conv9.bias", np.zeros(1, np.float32))
    with pytest.raises(W.WeightFileError, match="without weights"):
        W.decode_weights(orphan)


def test_weight_file_bad_version():
    with pytest.raises(W.WeightFileError, match="version"):
        W.decode_weights(W.MAGIC + struct.pack("<II", 7, 0))
