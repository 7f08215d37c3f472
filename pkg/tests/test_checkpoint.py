import numpy as np
import pytest
import torch

from ccreid import checkpoint as ckpt
from ccreid.errors import DataError, ReIDIOError


def sample():
    return ckpt.Checkpoint({"b.w": np.arange(6, dtype=np.float32).reshape(2, 3), "a.x": np.array([1, 2])},
                           {"kind": "joint", "step": 3, "config": {"z": 1, "a": 2}})


def test_round_trip(tmp_path):
    c = sample()
    path = c.save(tmp_path / "x.ckpt")
    back = ckpt.load(path)
    assert back.metadata == c.metadata
    assert set(back.tensors) == set(c.tensors)
    for k in c.tensors:
        np.testing.assert_array_equal(back.tensors[k], c.tensors[k])
        assert back.tensors[k].dtype == c.tensors[k].dtype


def test_bytes_deterministic_and_order_free():
    c = sample()
    d = ckpt.Checkpoint(dict(reversed(list(c.tensors.items()))), dict(reversed(list(c.metadata.items()))))
    assert c.to_bytes() == d.to_bytes()
    assert c.digest() == d.digest()


def test_state_dict_prefix():
    sd = sample().state_dict("b")
    assert list(sd) == ["w"] and isinstance(sd["w"], torch.Tensor)


def test_module_round_trip():
    torch.manual_seed(0)
    m = torch.nn.Sequential(torch.nn.Linear(3, 2), torch.nn.BatchNorm1d(2))
    c = ckpt.Checkpoint(ckpt.module_tensors(m, "m"))
    m2 = torch.nn.Sequential(torch.nn.Linear(3, 2), torch.nn.BatchNorm1d(2))
    m2.load_state_dict(c.state_dict("m"))
    for a, b in zip(m.state_dict().values(), m2.state_dict().values()):
        assert torch.equal(a, b)


def test_errors(tmp_path):
    with pytest.raises(ReIDIOError):
        ckpt.load(tmp_path / "missing.ckpt")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a zip")
    with pytest.raises(DataError):
        ckpt.load(bad)
