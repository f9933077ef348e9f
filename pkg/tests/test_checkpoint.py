import struct

import numpy as np
import pytest

from fewcap.checkpoint import ModelCheckpoint, load_state, state_dict
from fewcap.config import EncoderConfig
from fewcap.errors import FormatError
from fewcap.model import CaptionModel

CFG = EncoderConfig(d=8, heads=2, N=4, N_obj=3, len_s=8, n_word=2, d_a=3, d_m=2, d_o=4)


def make_ckpt(seed=0):
    model = CaptionModel(CFG, 9, seed=seed)
    return ModelCheckpoint({"encoder": {"d": 8}}, state_dict(model),
                           {"epoch": 3, "best_cider": 1.25, "seed": seed})


def test_save_load_save_is_byte_identical(tmp_path):
    ckpt = make_ckpt()
    ckpt.save(tmp_path / "a.pkgc")
    again = ModelCheckpoint.load(tmp_path / "a.pkgc")
    again.save(tmp_path / "b.pkgc")
    assert (tmp_path / "a.pkgc").read_bytes() == (tmp_path / "b.pkgc").read_bytes()
    assert again.metadata == ckpt.metadata and again.config == ckpt.config


def test_parameters_restore_exactly_at_float32():
    ckpt = make_ckpt(seed=1)
    model = CaptionModel(CFG, 9, seed=2)
    load_state(model, ModelCheckpoint.from_bytes(ckpt.to_bytes()).tensors)
    for name, p in model.named_parameters():
        assert np.array_equal(p.data, ckpt.tensors[name].astype(np.float64))


def test_header_layout():
    blob = make_ckpt().to_bytes()
    assert blob[:4] == b"PKGC" and struct.unpack("<I", blob[4:8]) == (1,)


def test_version_mismatch_rejected():
    blob = bytearray(make_ckpt().to_bytes())
    blob[4:8] = struct.pack("<I", 99)
    with pytest.raises(FormatError, match="version 99") as err:
        ModelCheckpoint.from_bytes(bytes(blob))
    assert err.value.offset == 4


def test_bad_magic_and_truncation():
    blob = make_ckpt().to_bytes()
    with pytest.raises(FormatError):
        ModelCheckpoint.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError, match="truncated") as err:
        ModelCheckpoint.from_bytes(blob[:-3])
    assert err.value.offset is not None
    with pytest.raises(FormatError, match="trailing"):
        ModelCheckpoint.from_bytes(blob + b"\0")


def test_load_state_rejects_mismatch():
    tensors = dict(make_ckpt().tensors)
    model = CaptionModel(CFG, 9)
    name = next(iter(tensors))
    with pytest.raises(FormatError, match="shape"):
        load_state(model, {**tensors, name: np.zeros((1, 1), "<f4")})
    tensors.pop(name)
    with pytest.raises(FormatError, match="missing"):
        load_state(model, tensors)
