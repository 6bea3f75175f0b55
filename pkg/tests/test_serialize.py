import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays, array_shapes

from wignet import serialize as S
from wignet.errors import FormatError
from wignet.layers import reference_denoiser, build_network


class TestTensorFormat:
    def test_header_layout(self):
        blob = S.tensor_to_bytes(np.zeros((2, 3), dtype=np.float32))
        assert blob[:4] == b"WIGT"
        assert blob[4] == 1            # version
        assert blob[5] == 2            # rank
        assert blob[6:10] == (2).to_bytes(4, "little")
        assert blob[10:14] == (3).to_bytes(4, "little")
        assert blob[14] == 4           # f32 precision flag
        assert len(blob) == 15 + 6 * 4

    @given(arrays(dtype=st.sampled_from([np.float32, np.float64]),
                  shape=array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, arr):
        out, end = S.tensor_from_bytes(S.tensor_to_bytes(arr))
        assert out.dtype == arr.dtype
        assert np.array_equal(out, arr)

    def test_f64_precision_flag(self):
        blob = S.tensor_to_bytes(np.array([1.0], dtype=np.float64))
        assert blob[4 + 1 + 1 + 4] == 8

    def test_bad_magic_rejected(self):
        with pytest.raises(FormatError):
            S.tensor_from_bytes(b"NOPE" + b"\x00" * 16)

    def test_truncated_payload_rejected(self):
        blob = S.tensor_to_bytes(np.ones(4, dtype=np.float32))
        with pytest.raises(FormatError):
            S.tensor_from_bytes(blob[:-3])

    def test_trailing_bytes_rejected(self, tmp_path):
        p = tmp_path / "t.wigt"
        p.write_bytes(S.tensor_to_bytes(np.ones(2, dtype=np.float32)) + b"x")
        with pytest.raises(FormatError):
            S.load_tensor(p)

    def test_unsupported_dtype_rejected(self):
        with pytest.raises(FormatError):
            S.tensor_to_bytes(np.ones(3, dtype=np.int32))

    def test_file_round_trip(self, tmp_path, rng):
        arr = rng.standard_normal((3, 4)).astype(np.float32)
        p = tmp_path / "a.wigt"
        S.save_tensor(p, arr)
        assert np.array_equal(S.load_tensor(p), arr)


class TestCheckpoint:
    def _net(self, seed=7):
        return build_network(reference_denoiser("desk", activation="wig"), seed=seed)

    def test_round_trip_restores_every_parameter(self, tmp_path):
        net = self._net()
        path = tmp_path / "ck.wigc"
        S.save_checkpoint(path, net)
        loaded, manifest = S.load_checkpoint(path)
        for (n1, p1), (n2, p2) in zip(net.params(), loaded.params()):
            assert n1 == n2
            assert np.array_equal(p1.data, p2.data)
        assert manifest["params"][0]["name"] == net.params()[0][0]

    def test_writes_are_byte_deterministic(self, tmp_path):
        net = self._net()
        a, b = tmp_path / "a.wigc", tmp_path / "b.wigc"
        S.save_checkpoint(a, net)
        S.save_checkpoint(b, net)
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.wigc.json").read_text() == (tmp_path / "b.wigc.json").read_text()

    def test_shape_mismatch_rejected(self, tmp_path):
        net = self._net()
        path = tmp_path / "ck.wigc"
        named = [(name, p.data) for name, p in net.params()]
        named[0] = (named[0][0], np.zeros((1, 1, 2, 2), dtype=np.float32))
        S.atomic_write_bytes(path, S.checkpoint_to_bytes(named))
        import json
        manifest = {"net_spec": net.spec.to_text()}
        (tmp_path / "ck.wigc.json").write_text(json.dumps(manifest))
        with pytest.raises(FormatError):
            S.load_checkpoint(path)

    def test_missing_parameter_rejected(self, tmp_path):
        net = self._net()
        path = tmp_path / "ck.wigc"
        named = [(name, p.data) for name, p in net.params()][:-1]
        S.atomic_write_bytes(path, S.checkpoint_to_bytes(named))
        import json
        (tmp_path / "ck.wigc.json").write_text(
            json.dumps({"net_spec": net.spec.to_text()}))
        with pytest.raises(FormatError):
            S.load_checkpoint(path)
