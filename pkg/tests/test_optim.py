"""Adam updates, parameter store bookkeeping, checkpoint round trips."""

import numpy as np
import pytest

from defog.errors import DataError
from defog.kernel import (Adam, ParamStore, Tensor, adam_init, adam_step,
                          load_checkpoint, restore_checkpoint, save_checkpoint)

import oracles


def _store_with(name="p", value=0.0, shape=()):
    store = ParamStore()
    store.add_param(name, np.full(shape, value, dtype=np.float64))
    return store


def test_zero_gradients_leave_parameters_unchanged():
    store = _store_with(value=1.5, shape=(3,))
    state = adam_init(store.params)
    adam_step(store.params, {"p": np.zeros(3)}, state, lr=0.1)
    np.testing.assert_array_equal(store.params["p"].data, np.full(3, 1.5))
    assert state["step"] == 1


def test_first_step_magnitude_is_learning_rate():
    # Bias correction makes the very first update lr * g / (|g| + eps).
    store = _store_with(value=0.0)
    state = adam_init(store.params)
    adam_step(store.params, {"p": np.asarray(1.0)}, state, lr=0.1)
    assert store.params["p"].data == pytest.approx(-0.1, abs=1e-8)


def test_trajectory_matches_scalar_reference():
    rng = np.random.default_rng(21)
    grads = rng.standard_normal(25).tolist()
    store = _store_with(value=0.3)
    state = adam_init(store.params)
    for g in grads:
        adam_step(store.params, {"p": np.asarray(g)}, state,
                  lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8)
    want = oracles.adam_reference(0.3, grads, 2e-4, 0.5, 0.999, 1e-8)
    assert float(store.params["p"].data) == pytest.approx(want, rel=1e-12)


def test_missing_grad_key_leaves_param_and_moments_untouched():
    store = ParamStore()
    store.add_param("a", np.ones(2, dtype=np.float64))
    store.add_param("b", np.ones(2, dtype=np.float64))
    state = adam_init(store.params)
    adam_step(store.params, {"a": np.ones(2)}, state, lr=0.1)
    assert not np.array_equal(store.params["a"].data, np.ones(2))
    np.testing.assert_array_equal(store.params["b"].data, np.ones(2))
    np.testing.assert_array_equal(state["m"]["b"], np.zeros(2))


def test_repeated_runs_are_deterministic():
    def run():
        store = _store_with(value=0.7, shape=(4,))
        state = adam_init(store.params)
        rng = np.random.default_rng(3)
        for _ in range(10):
            adam_step(store.params, {"p": rng.standard_normal(4)}, state, lr=0.01)
        return store.params["p"].data.copy()

    np.testing.assert_array_equal(run(), run())


def test_adam_rejects_shape_mismatch():
    store = _store_with(shape=(3,))
    state = adam_init(store.params)
    with pytest.raises(ValueError, match="shape"):
        adam_step(store.params, {"p": np.zeros(4)}, state)


def test_store_rejects_duplicate_names():
    store = ParamStore()
    store.add_param("w", np.zeros(1))
    with pytest.raises(ValueError, match="duplicate"):
        store.add_buffer("w", np.zeros(1))


def test_store_grads_skips_untouched_params():
    store = ParamStore()
    a = store.add_param("a", np.ones(2, dtype=np.float64))
    store.add_param("b", np.ones(2, dtype=np.float64))
    (a * 2.0).sum().backward()
    assert set(store.grads()) == {"a"}
    store.zero_grad()
    assert store.grads() == {}


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _demo_store():
    rng = np.random.default_rng(31)
    store = ParamStore()
    store.add_param("g.w", rng.standard_normal((3, 2)).astype(np.float32))
    store.add_param("g.b", rng.standard_normal(3).astype(np.float32))
    store.add_buffer("g.bn.mean", rng.standard_normal(3).astype(np.float32))
    return store


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    store = _demo_store()
    opt = Adam(store, lr=1e-3)
    # take a step so moments are nonzero
    store.params["g.w"].accumulate_grad(np.ones((3, 2), dtype=np.float32))
    store.params["g.b"].accumulate_grad(np.ones(3, dtype=np.float32))
    opt.step()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, store, opt, meta={"note": "demo"})

    fresh = _demo_store()
    fresh_opt = Adam(fresh, lr=1e-3)
    meta = restore_checkpoint(path, fresh, fresh_opt)
    assert meta == {"note": "demo"}
    for (n1, k1, t1), (n2, k2, t2) in zip(store.entries(), fresh.entries()):
        assert (n1, k1) == (n2, k2)
        np.testing.assert_array_equal(t1.data, t2.data)
    assert fresh_opt.state["step"] == 1
    np.testing.assert_array_equal(opt.state["m"]["g.w"], fresh_opt.state["m"]["g.w"])
    np.testing.assert_array_equal(opt.state["v"]["g.b"], fresh_opt.state["v"]["g.b"])


def test_checkpoint_rejects_shape_mismatch(tmp_path):
    store = _demo_store()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, store)
    other = ParamStore()
    other.add_param("g.w", np.zeros((2, 2), dtype=np.float32))
    other.add_param("g.b", np.zeros(3, dtype=np.float32))
    other.add_buffer("g.bn.mean", np.zeros(3, dtype=np.float32))
    with pytest.raises(DataError, match="shape"):
        restore_checkpoint(path, other)


def test_checkpoint_rejects_unknown_and_missing_entries(tmp_path):
    store = _demo_store()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, store)
    bigger = _demo_store()
    bigger.add_param("extra", np.zeros(1, dtype=np.float32))
    with pytest.raises(DataError, match="absent from checkpoint"):
        restore_checkpoint(path, bigger)
    smaller = ParamStore()
    smaller.add_param("g.w", np.zeros((3, 2), dtype=np.float32))
    with pytest.raises(DataError, match="no match"):
        restore_checkpoint(path, smaller)


def test_checkpoint_rejects_corruption(tmp_path):
    store = _demo_store()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, store, Adam(store))
    raw = path.read_bytes()

    bad_magic = tmp_path / "bad_magic.ckpt"
    bad_magic.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(DataError, match="not a DFGCKPT1"):
        load_checkpoint(bad_magic)

    truncated = tmp_path / "trunc.ckpt"
    truncated.write_bytes(raw[:-5])
    with pytest.raises(DataError, match="truncated"):
        load_checkpoint(truncated)

    padded = tmp_path / "padded.ckpt"
    padded.write_bytes(raw + b"\x00\x00")
    with pytest.raises(DataError, match="trailing"):
        load_checkpoint(padded)


def test_restore_without_optimizer_state_fails_cleanly(tmp_path):
    store = _demo_store()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, store)  # no optimizer block
    fresh = _demo_store()
    with pytest.raises(DataError, match="no optimizer state"):
        restore_checkpoint(path, fresh, Adam(fresh))
