import struct

import numpy as np
import pytest

from support import tiny_config
from trifuse.core.checkpoint import (
    CONFIG_ENTRY,
    decode_text,
    encode_text,
    load_checkpoint,
    read_container,
    save_checkpoint,
    write_container,
)
from trifuse.core.exceptions import CheckpointError
from trifuse.services.trifuse_net import build_model


def test_container_layout(tmp_path):
    path = tmp_path / "x.trif"
    write_container(path, {"ab": np.array([[1.0, 2.0, 3.0]])})
    blob = path.read_bytes()
    assert blob[:4] == b"TRIF"
    assert struct.unpack_from("<II", blob, 4) == (1, 1)
    assert struct.unpack_from("<H", blob, 12) == (2,)
    assert blob[14:16] == b"ab"
    assert struct.unpack_from("<B2I", blob, 16) == (2, 1, 3)
    assert np.frombuffer(blob[25:], dtype="<f4").tolist() == [1.0, 2.0, 3.0]


def test_container_round_trip_is_byte_identical(tmp_path):
    entries = {"scalar": np.float32(2.5), "matrix": np.arange(6, dtype=np.float32).reshape(2, 3), "empty": np.zeros(0)}
    write_container(tmp_path / "a.trif", entries)
    loaded = read_container(tmp_path / "a.trif")
    assert list(loaded) == ["scalar", "matrix", "empty"]
    assert loaded["scalar"].shape == ()
    write_container(tmp_path / "b.trif", loaded)
    assert (tmp_path / "a.trif").read_bytes() == (tmp_path / "b.trif").read_bytes()


def test_checkpoint_round_trip(tmp_path):
    config = tiny_config(seed=11)
    params = build_model(config)
    path = tmp_path / "sub" / "m.trif"
    save_checkpoint(path, params.state(), config)
    loaded_config, state = load_checkpoint(path)
    assert loaded_config == config
    assert list(state) == list(params.state())
    for name, array in params.state().items():
        np.testing.assert_array_equal(state[name], array)
    save_checkpoint(tmp_path / "again.trif", state, loaded_config)
    assert (tmp_path / "again.trif").read_bytes() == path.read_bytes()


def test_text_entries_round_trip():
    assert decode_text(encode_text('{"seed": 4, "name": "é"}')) == '{"seed": 4, "name": "é"}'
    with pytest.raises(CheckpointError):
        decode_text(np.array([300.0]))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda blob: b"XXXX" + blob[4:],
        lambda blob: blob[:4] + struct.pack("<I", 2) + blob[8:],
        lambda blob: blob[:-3],
        lambda blob: blob + b"\x00",
        lambda blob: blob[:6],
    ],
)
def test_corrupt_files_are_rejected(tmp_path, mutate):
    path = tmp_path / "x.trif"
    write_container(path, {"w": np.ones((2, 2))})
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(CheckpointError):
        read_container(path)


def test_missing_file_and_missing_config(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_container(tmp_path / "absent.trif")
    write_container(tmp_path / "model.trif", {"w": np.ones(2)})
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "model.trif")
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "bad.trif", {CONFIG_ENTRY: np.ones(1)}, tiny_config())
