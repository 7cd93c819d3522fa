"""Checkpoint save/load: exactness, config coupling, optimizer state."""
import json

import numpy as np
import pytest

from lnln import checkpoints as ck
from lnln.config import ModelConfig
from lnln.model import LnlnModel
from lnln.training import AdamW

CFG = ModelConfig(tokens=2, width=8, heads=2, ffn_mult=2,
                  lang_dim=5, vis_dim=4, aud_dim=3, fusion_layers=2,
                  dtype="float32")


def _batch(seed=0, n=3, t=4):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((n, t, 5)), rng.standard_normal((n, t, 4)),
            rng.standard_normal((n, t, 3)))


def test_round_trip_preserves_forward_bit_for_bit(tmp_path):
    model = LnlnModel(CFG, seed=4)
    lang, vis, aud = _batch()
    before = model.predict(lang, vis, aud)

    path = tmp_path / "m.npz"
    ck.save_checkpoint(path, model, annotations={"epoch": 3, "metric": 0.5})
    loaded = ck.load_checkpoint(path)
    rebuilt = ck.build_model(loaded)

    assert rebuilt.config == model.config
    assert np.array_equal(rebuilt.predict(lang, vis, aud), before)
    for name, arr in model.store.state_dict().items():
        assert np.array_equal(loaded["params"][name], arr)
    assert loaded["meta"]["annotations"] == {"epoch": 3, "metric": 0.5}
    assert loaded["meta"]["has_optimizer"] is False


def test_restore_into_mismatched_model_is_rejected(tmp_path):
    model = LnlnModel(CFG, seed=4)
    path = tmp_path / "m.npz"
    ck.save_checkpoint(path, model)
    loaded = ck.load_checkpoint(path)

    wider = LnlnModel(
        ModelConfig(tokens=2, width=16, heads=2, ffn_mult=2, lang_dim=5,
                    vis_dim=4, aud_dim=3, fusion_layers=2, dtype="float32"),
        seed=0,
    )
    with pytest.raises(ck.CheckpointError, match="does not fit"):
        ck.restore_model(wider, loaded)

    no_dmc = LnlnModel(
        ModelConfig(tokens=2, width=8, heads=2, ffn_mult=2, lang_dim=5,
                    vis_dim=4, aud_dim=3, fusion_layers=2, use_dmc=False,
                    dtype="float32"),
        seed=0,
    )
    with pytest.raises(ck.CheckpointError, match="does not fit"):
        ck.restore_model(no_dmc, loaded)


def test_optimizer_state_round_trip_matches_uninterrupted_run(tmp_path):
    rng = np.random.default_rng(7)
    model = LnlnModel(CFG, seed=4)
    opt = AdamW(model.store.leaves(), lr=1e-3)
    shapes = [p.shape for p in model.store.leaves()]
    grads = [[rng.standard_normal(s) for s in shapes] for _ in range(6)]
    for g in grads[:3]:
        opt.step(g)

    path = tmp_path / "m.npz"
    ck.save_checkpoint(path, model, optimizer=opt)
    loaded = ck.load_checkpoint(path)
    resumed = ck.build_model(loaded)
    opt2 = AdamW(resumed.store.leaves(), lr=1e-3)
    ck.restore_optimizer(opt2, loaded)

    for g in grads[3:]:
        opt.step(g)
        opt2.step(g)
    for a, b in zip(model.store.leaves(), resumed.store.leaves()):
        assert np.array_equal(a.data, b.data)


def test_optimizer_restore_requires_saved_state(tmp_path):
    model = LnlnModel(CFG, seed=4)
    path = tmp_path / "m.npz"
    ck.save_checkpoint(path, model)
    loaded = ck.load_checkpoint(path)
    opt = AdamW(model.store.leaves())
    with pytest.raises(ck.CheckpointError, match="no optimizer"):
        ck.restore_optimizer(opt, loaded)


def _rewrite_meta(path, mutate):
    with np.load(path) as npz:
        data = {k: npz[k] for k in npz.files}
    meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
    mutate(meta, data)
    data["__meta__"] = np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **data)


def test_checkpoint_error_taxonomy(tmp_path):
    path = tmp_path / "m.npz"
    ck.save_checkpoint(path, LnlnModel(CFG, seed=4))

    bad_version = tmp_path / "v.npz"
    ck.save_checkpoint(bad_version, LnlnModel(CFG, seed=4))
    _rewrite_meta(bad_version, lambda meta, data:
                  meta.update(format_version=99))
    with pytest.raises(ck.CheckpointError, match="version 99"):
        ck.load_checkpoint(bad_version)

    missing = tmp_path / "p.npz"
    ck.save_checkpoint(missing, LnlnModel(CFG, seed=4))

    def drop_param(meta, data):
        del data[f"param/{meta['param_names'][0]}"]

    _rewrite_meta(missing, drop_param)
    with pytest.raises(ck.CheckpointError, match="missing parameter"):
        ck.load_checkpoint(missing)

    no_meta = tmp_path / "n.npz"
    np.savez(no_meta, x=np.zeros(3))
    with pytest.raises(ck.CheckpointError, match="metadata"):
        ck.load_checkpoint(no_meta)

    garbage = tmp_path / "g.npz"
    garbage.write_bytes(b"not a zip archive")
    with pytest.raises(ck.CheckpointError, match="unreadable"):
        ck.load_checkpoint(garbage)
