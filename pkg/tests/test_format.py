import numpy as np
import pytest

from earlyfilter.engine import (
    LRN, Conv, FullyConnected, MaxPool, NetworkFormatError, NetworkSpec, ReLU, dumps_network, forward,
    load_network, loads_network, save_network,
)
from oracles import random_image, random_net


def assert_same_net(a: NetworkSpec, b: NetworkSpec):
    assert a.input_shape == b.input_shape
    assert a.names == b.names
    for la, lb in zip(a.layers, b.layers):
        assert type(la) is type(lb)
        for key, va in vars(la).items():
            vb = getattr(lb, key)
            if isinstance(va, np.ndarray):
                assert va.dtype == vb.dtype == np.float32
                np.testing.assert_array_equal(va, vb)
            else:
                assert va == vb, key


def alexnet_class(rng) -> NetworkSpec:
    """Five conv layers with AlexNet channel widths on a small input."""
    def conv(name, cin, cout, k, stride=1, pad=0):
        return Conv(name, cin, cout, k, k, rng.standard_normal((cout, cin, k, k)) * 0.01,
                    rng.standard_normal(cout) * 0.01, stride=stride, padding=pad)

    layers = (
        conv("conv1", 3, 96, 11, stride=4), ReLU("relu1"), LRN("norm1", 2, 1e-4, 0.75, 1.0), MaxPool("pool1", 3, 2),
        conv("conv2", 96, 256, 5, pad=2), ReLU("relu2"), LRN("norm2", 2, 1e-4, 0.75, 1.0), MaxPool("pool2", 3, 2),
        conv("conv3", 256, 384, 3, pad=1), ReLU("relu3"),
        conv("conv4", 384, 384, 3, pad=1), ReLU("relu4"),
        conv("conv5", 384, 256, 3, pad=1), ReLU("relu5"), MaxPool("pool5", 3, 2),
        FullyConnected("fc6", 256, 8, rng.standard_normal((8, 256)) * 0.01, np.zeros(8)),
    )
    return NetworkSpec((67, 67, 3), layers)


def test_round_trip_two_layer(tmp_path):
    net = NetworkSpec((4, 4, 1), (Conv("c1", 1, 2, 3, 3, np.arange(18.0), [0.5, -0.5], padding=1), ReLU("r1")))
    save_network(net, tmp_path / "n.fmf")
    back = load_network(tmp_path / "n.fmf")
    assert len(back.layers) == 2
    assert back.output_shape("r1") == (2, 4, 4)
    assert_same_net(net, back)


def test_alexnet_class_round_trip():
    net = alexnet_class(np.random.default_rng(0))
    back = loads_network(dumps_network(net))
    assert_same_net(net, back)
    assert back.output_shape("conv2")[0] == 256
    assert back.layer("norm1").alpha == 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_random_round_trip_preserves_forward(seed):
    rng = np.random.default_rng(seed)
    net = random_net(rng, lrn=True, fc=bool(seed % 2))
    back = loads_network(dumps_network(net))
    assert_same_net(net, back)
    img = random_image(rng, net)
    tap = net.names[-1]
    assert forward(net, img, tap).tobytes() == forward(back, img, tap).tobytes()


def test_header_is_text_and_blob_little_endian():
    net = NetworkSpec((1, 1, 1), (Conv("c", 1, 1, 1, 1, [2.0], [3.0]),))
    data = dumps_network(net)
    assert data.startswith(b"FMFNET1\n")
    assert data.endswith(np.array([2.0, 3.0], dtype="<f4").tobytes())


def test_conv_blob_short_by_one_value_names_layer():
    net = NetworkSpec((4, 4, 1), (Conv("c1", 1, 2, 3, 3, np.ones(18), np.ones(2)), ReLU("r1")))
    data = dumps_network(net)[:-4]
    with pytest.raises(NetworkFormatError, match="'c1'") as err:
        loads_network(data)
    assert err.value.layer == "c1"
    assert err.value.offset is not None


def test_bad_magic():
    with pytest.raises(NetworkFormatError, match="magic"):
        loads_network(b"NOTNET\n")


def test_malformed_header_line():
    with pytest.raises(NetworkFormatError, match="malformed input"):
        loads_network(b"FMFNET1\ninput 4 4\nlayers 0\nend\n")


def test_unknown_layer_kind():
    with pytest.raises(NetworkFormatError, match="unknown layer kind"):
        loads_network(b"FMFNET1\ninput 4 4 1\nlayers 1\nsoftmax s\nend\n")


def test_shape_chain_mismatch_reports_layer_and_offset():
    data = b"FMFNET1\ninput 4 4 1\nlayers 1\nconv c in=2 out=1 kh=1 kw=1 stride=1 pad=0\nend\n"
    data += np.zeros(3, dtype="<f4").tobytes()
    with pytest.raises(NetworkFormatError) as err:
        loads_network(data)
    assert err.value.layer == "c"
    assert err.value.offset == data.index(b"conv c")


def test_trailing_bytes_rejected():
    net = NetworkSpec((1, 1, 1), (ReLU("r"),))
    with pytest.raises(NetworkFormatError, match="trailing"):
        loads_network(dumps_network(net) + b"\0\0\0\0")
