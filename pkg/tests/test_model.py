import numpy as np
import pytest

from conftest import random_ego, random_image
from e2edrive import tokenizer as tok
from e2edrive.config import ModelConfig, tiny_config
from e2edrive.encoders import collate, layout_sequence, patchify
from e2edrive.model import DrivingModel, LoraStateError, model_param_shapes, parameter_count
from e2edrive.rng import SplitMix64
from e2edrive.scenario import PROMPT, make_episode


def test_default_parameter_count():
    cfg = ModelConfig()
    assert parameter_count(cfg) == 1_382_145
    assert DrivingModel(cfg, seed=0).num_parameters() == parameter_count(cfg)
    assert parameter_count(ModelConfig(lora_enabled=True)) == 1_382_145 + 4 * 8 * 4 * 128


def test_names_unique_and_ordered(tiny_model):
    names = [n for n, _, _ in model_param_shapes(tiny_model.config)]
    assert len(names) == len(set(names)) == len(tiny_model.params)
    assert list(tiny_model.params) == names


def test_same_seed_same_weights():
    a, b = DrivingModel(tiny_config(), seed=5), DrivingModel(tiny_config(), seed=5)
    c = DrivingModel(tiny_config(), seed=6)
    assert all(np.array_equal(a.params[n].value, b.params[n].value) for n in a.params)
    assert not np.array_equal(a.params["embed.tok"].value, c.params["embed.tok"].value)


def test_config_rejects_bad_heads():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, n_heads=4)


def test_causality_bitwise():
    model = DrivingModel(ModelConfig(), seed=1)
    img, ego = random_image(1), random_ego(1)
    base = layout_sequence("turn left now", PROMPT, "turning left as instructed")
    h0, _ = model.forward(base, img, ego)
    for j in (80, base.traj_index + 3, base.length - 1):
        changed = layout_sequence("turn left now", PROMPT, "turning left as instructed")
        changed.ids[j] = (changed.ids[j] + 7) % 256
        h1, _ = model.forward(changed, img, ego)
        np.testing.assert_array_equal(h0[:j], h1[:j])
        assert not np.array_equal(h0[j], h1[j])


def test_right_padding_does_not_change_real_positions(tiny_model):
    short = layout_sequence("a", "b", "c")
    long = layout_sequence("a much longer command", "b", "c")
    patches = np.stack([patchify(random_image(2))] * 2)
    ego = np.stack([random_ego(2)] * 2)
    alone = tiny_model.forward_batch(collate([short], patches[:1], ego[:1]))
    padded = tiny_model.forward_batch(collate([short, long], patches, ego))
    # Different batch shapes may change BLAS blocking, hence a rounding-level tolerance.
    np.testing.assert_allclose(alone.hidden[0], padded.hidden[0, : short.length], rtol=0, atol=1e-12)
    np.testing.assert_allclose(alone.traj_norm[0], padded.traj_norm[0], rtol=0, atol=1e-12)


def _logits(model, layout, img, ego):
    return model.forward(layout, img, ego)[1]


def test_lora_zero_init_is_transparent():
    img, ego = random_image(3), random_ego(3)
    lay = layout_sequence("turn right now", PROMPT, "ok")
    plain = DrivingModel(ModelConfig(), seed=2)
    adapted = plain.copy()
    adapted.enable_lora(seed=9)
    assert adapted.lora_enabled
    assert all(not adapted.params[n].value.any() for n in adapted.params if n.endswith("lora_B"))
    np.testing.assert_array_equal(_logits(plain, lay, img, ego), _logits(adapted, lay, img, ego))


def _randomise_adapters(model, seed, std=0.05):
    rng = SplitMix64(seed)
    for n, p in model.params.items():
        if n.endswith("lora_B"):
            p.value = rng.normal_array(p.value.size, std).reshape(p.value.shape)


def test_lora_merge_equivalence():
    img, ego = random_image(4), random_ego(4)
    lay = layout_sequence("stop at the stop line", PROMPT, "stopping")
    model = DrivingModel(ModelConfig(lora_enabled=True), seed=3)
    _randomise_adapters(model, 1)
    before = _logits(model, lay, img, ego)
    model.lora_merge()
    after = _logits(model, lay, img, ego)
    assert np.abs(before - after).max() < 1e-9
    assert all(not model.params[n].value.any() for n in model.params if n.endswith("lora_B"))
    w = model.params["llm.layer0.wq"].value.copy()
    model.lora_merge()
    np.testing.assert_array_equal(model.params["llm.layer0.wq"].value, w)


def test_lora_merge_without_adapters_raises(tiny_model):
    with pytest.raises(LoraStateError):
        tiny_model.lora_merge()


def test_lora_merge_with_zero_b_is_noop():
    model = DrivingModel(tiny_config(lora_enabled=True), seed=1)
    before = {n: p.value.copy() for n, p in model.params.items()}
    model.lora_merge()
    assert all(np.array_equal(before[n], model.params[n].value) for n in before)


def test_denormalisation_scales():
    model = DrivingModel(tiny_config(), seed=0)
    out = np.zeros(60)
    out[0], out[2], out[4] = 0.1, 0.1, 0.1
    traj = model.denormalize(out)
    assert traj.shape == (10, 6)
    assert traj[0, 0] == 5.0 and traj[0, 2] == 2.0 and traj[0, 4] == 0.5
    np.testing.assert_array_equal(model.normalize(traj)[0], out)


def _zero_heads(model):
    for n in ("head.traj.w1", "head.traj.b1", "head.traj.w2", "head.traj.b2"):
        model.params[n].value[:] = 0


def test_zero_hidden_gives_zero_trajectory(tiny_model):
    tiny_model.params["head.traj.b2"].value[:] = 0
    traj = tiny_model.decode_trajectory(np.zeros(8))
    assert traj.shape == (10, 6) and not traj.any()


def test_zero_head_model_predicts_all_zeros(tiny_model):
    _zero_heads(tiny_model)
    traj, _ = tiny_model.predict(make_episode(1), with_text=False)
    assert not traj.any()


def test_generation_stops_immediately_on_eos(tiny_model):
    tiny_model.params["head.text.w"].value[:] = 0
    tiny_model.params["head.text.b"].value[:] = 0
    tiny_model.params["head.text.b"].value[tok.EOS] = 10.0
    _, text = tiny_model.predict(make_episode(2))
    assert text == ""


def test_generation_is_capped_and_deterministic(tiny_model):
    tiny_model.params["head.text.b"].value[:] = 0
    tiny_model.params["head.text.b"].value[ord("a")] = 50.0
    ep = make_episode(3)
    traj1, text1 = tiny_model.predict(ep)
    traj2, text2 = tiny_model.predict(ep)
    assert text1 == "a" * 32
    assert text1 == text2
    np.testing.assert_array_equal(traj1, traj2)


def test_batched_prediction_matches_single(tiny_model):
    eps = [make_episode(s) for s in (4, 5, 6)]
    batched = tiny_model.predict_batch(eps)
    for e, (traj, text) in zip(eps, batched):
        t1, x1 = tiny_model.predict(e)
        np.testing.assert_allclose(traj, t1, rtol=0, atol=1e-12)
        assert text == x1


def test_hidden_has_final_norm_statistics(tiny_model):
    tiny_model.params["llm.ln_f.g"].value[:] = 1
    tiny_model.params["llm.ln_f.b"].value[:] = 0
    h, logits = tiny_model.forward(layout_sequence("a", "b"), random_image(5), random_ego(5))
    np.testing.assert_allclose(h.mean(axis=-1), 0, atol=1e-12)
    assert logits.shape == (h.shape[0], tok.VOCAB_SIZE)


def test_backward_requires_cache(tiny_model):
    res = tiny_model.forward_batch(collate([layout_sequence("a", "b")]))
    with pytest.raises(RuntimeError):
        tiny_model.backward(res, None, np.zeros((1, 60)))
