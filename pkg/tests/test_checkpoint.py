import struct

import numpy as np
import pytest

from medgan import checkpoint as ck
from medgan.networks import CasNet, CasNetSpec, PatchDiscriminator, UNetSpec


@pytest.fixture
def stores():
    g = CasNet(CasNetSpec(n_unets=2, unet=UNetSpec(depth=2, base_channels=4))).init_params(3)
    return {"G0": g[0], "G1": g[1], "D": PatchDiscriminator().init_params(4)}


def test_round_trip_bit_exact(tmp_path, stores):
    meta = {"config": {"mode": "medgan"}, "step": 12, "seeds": {"seed": 1}}
    ck.save(tmp_path / "m.mgck", meta, stores)
    back = ck.load(tmp_path / "m.mgck")
    assert back.metadata["step"] == 12
    assert list(back.stores) == ["G0", "G1", "D"]
    for name, store in stores.items():
        assert list(back.stores[name]) == list(store)
        for k, v in store.items():
            assert back.stores[name][k].tobytes() == v.tobytes()
    assert ck.encode(back.metadata, back.stores) == (tmp_path / "m.mgck").read_bytes()
    assert [s is back.stores[k] for s, k in zip(back.generator, ("G0", "G1"))] == [True, True]


def test_header_layout(stores):
    blob = ck.encode({"step": 0}, stores)
    magic, version, mlen = struct.unpack_from("<4sIQ", blob)
    assert (magic, version) == (b"MGCK", 1)
    meta_end = 16 + mlen
    first = stores["G0"]["enc1.w"]
    assert blob[meta_end:meta_end + first.nbytes] == first.astype("<f4").tobytes()


@pytest.mark.parametrize("mutate,match", [
    (lambda b: b[:10], "too short"),
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "version"),
    (lambda b: b[:-4], "truncated"),
    (lambda b: b + b"\0\0\0\0", "trailing"),
    (lambda b: b[:8] + struct.pack("<Q", 10**9) + b[16:], "past end"),
])
def test_corruption_detected(tmp_path, stores, mutate, match):
    (tmp_path / "bad.mgck").write_bytes(mutate(ck.encode({"step": 1}, stores)))
    with pytest.raises(ck.CheckpointError, match=match):
        ck.load(tmp_path / "bad.mgck")


def test_missing_file():
    with pytest.raises(ck.CheckpointError, match="cannot read"):
        ck.load("/nonexistent/x.mgck")


def test_save_is_atomic(tmp_path, stores):
    path = tmp_path / "c.mgck"
    ck.save(path, {"step": 1}, stores)
    ck.save(path, {"step": 2}, stores)
    assert ck.load(path).metadata["step"] == 2
    assert [p.name for p in tmp_path.iterdir()] == ["c.mgck"]
