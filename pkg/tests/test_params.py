import numpy as np
import pytest

from gaitset.errors import CompatibilityError
from gaitset.params import ParamStore


def make_store(seed=7):
    store = ParamStore(seed=seed)
    store.add("layer.weight", store.rng.standard_normal((3, 4)).astype(np.float32))
    store.add("layer.bias", np.zeros(3, dtype=np.float32))
    store.add("counter", np.array([12], dtype=np.uint64), requires_grad=False)
    store.add("tag", np.frombuffer(b"hello", dtype=np.uint8).copy(), requires_grad=False)
    return store


def test_round_trip_is_byte_identical():
    store = make_store()
    blob = store.to_bytes()
    again = ParamStore.from_bytes(blob).to_bytes()
    assert blob == again


def test_round_trip_preserves_values_and_seed():
    store = make_store(seed=123456789)
    loaded = ParamStore.from_bytes(store.to_bytes())
    assert loaded.seed == 123456789
    assert loaded.paths() == store.paths()
    for path, tensor in store.items():
        assert np.array_equal(loaded[path].data, tensor.data)
        assert loaded[path].dtype == tensor.dtype


def test_same_seed_draws_identical_values():
    a, b = ParamStore(seed=5), ParamStore(seed=5)
    assert np.array_equal(a.rng.standard_normal(10), b.rng.standard_normal(10))


def test_duplicate_path_rejected():
    store = ParamStore(seed=0)
    store.add("w", np.zeros(2, np.float32))
    with pytest.raises(KeyError):
        store.add("w", np.zeros(2, np.float32))


def test_bad_magic_rejected():
    with pytest.raises(CompatibilityError):
        ParamStore.from_bytes(b"NOTACKPT" + b"\x00" * 32)


def test_fingerprint_tracks_values():
    store = make_store()
    fp = store.fingerprint()
    assert fp == make_store().fingerprint()
    store["layer.bias"].data[0] = 1.0
    assert store.fingerprint() != fp


def test_file_round_trip(tmp_path):
    store = make_store()
    path = tmp_path / "model.ckpt"
    store.save(path)
    assert path.read_bytes()[:8] == b"GSETCKPT"
    assert ParamStore.load(path).to_bytes() == store.to_bytes()


def test_copy_values_from_checks_missing_and_shape():
    store = make_store()
    other = ParamStore(seed=0)
    other.add("layer.weight", np.zeros((3, 4), np.float32))
    with pytest.raises(CompatibilityError):
        store.copy_values_from(other)
