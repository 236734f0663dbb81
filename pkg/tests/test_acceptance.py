"""End-to-end acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 4 to 6 train the default-size model and take roughly half an hour on one core.
"""

import time

import numpy as np
import pytest

from conftest import random_ego, random_image, record_criterion
from e2edrive import numerics as nx
from e2edrive import tokenizer as tok
from e2edrive.config import ModelConfig, TrainConfig, tiny_config
from e2edrive.encoders import layout_sequence
from e2edrive.evaluation import ConstantVelocityBaseline, ZeroBaseline, evaluate_dataset, score_episode
from e2edrive.io import checkpoint_bytes, dumps_dataset, load_checkpoint, read_dataset, save_checkpoint, write_dataset
from e2edrive.model import DrivingModel
from e2edrive.probes import LEFT_TEXT, light_probe, nav_swap_probe, turn_sign_probe
from e2edrive.rng import SplitMix64
from e2edrive.scenario import PROMPT, kinematic_violation, make_dataset
from e2edrive.training import Trainer, evaluate_loss, model_grad_check, train_loop

GEN_TRAIN_STEPS = 1000
LORA_STEPS = 500


def _bitwise_equal(a: DrivingModel, b: DrivingModel, names) -> bool:
    return all(a.params[n].value.tobytes() == b.params[n].value.tobytes() for n in names)


# ------------------------------------------------------------------ 1


def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    op_err = {name: max(nx.check_op(name, s) for s in range(5)) for name in nx.OP_CHECKS}
    model_err = max(model_grad_check(seed=s, n_samples=50) for s in range(3))
    elapsed = time.perf_counter() - t0
    worst_op = max(op_err, key=op_err.get)
    passed = max(op_err.values()) < 1e-6 and model_err < 1e-4 and elapsed < 60
    record_criterion(1, passed, f"worst op {worst_op} {op_err[worst_op]:.2e} (< 1e-6), tiny model "
                                f"{model_err:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert passed


# ------------------------------------------------------------------ 2


def test_criterion_2_architectural_invariants():
    t0 = time.perf_counter()
    img, ego = random_image(1), random_ego(1)
    model = DrivingModel(ModelConfig(), seed=1)
    base = layout_sequence("turn left now", PROMPT, "turning left as instructed")
    h0, logits0 = model.forward(base, img, ego)
    causal = True
    for j in (70, base.traj_index, base.length - 1):
        changed = layout_sequence("turn left now", PROMPT, "turning left as instructed")
        changed.ids[j] = (changed.ids[j] + 1) % 256
        causal &= np.array_equal(model.forward(changed, img, ego)[0][:j], h0[:j])

    adapted = model.copy()
    adapted.enable_lora(seed=5)
    zero_init = np.array_equal(adapted.forward(base, img, ego)[1], logits0)

    rng = SplitMix64(2)
    for n, p in adapted.params.items():
        if n.endswith("lora_B"):
            p.value = rng.normal_array(p.value.size, 0.05).reshape(p.value.shape)
    before = adapted.forward(base, img, ego)[1]
    adapted.lora_merge()
    merge_err = float(np.abs(adapted.forward(base, img, ego)[1] - before).max())

    small = DrivingModel(tiny_config(), seed=3)
    small.enable_lora(3)
    frozen = [n for n in small.params if small.is_base_weight(n)]
    snapshot = small.copy()
    Trainer(small, make_dataset(8, 5), TrainConfig(mode="lora", batch_size=4, lr=1e-3)).run(100)
    freeze = _bitwise_equal(small, snapshot, frozen)
    adapters_moved = not _bitwise_equal(small, snapshot, [n for n in small.params if n.endswith("lora_B")])

    elapsed = time.perf_counter() - t0
    passed = causal and zero_init and merge_err < 1e-9 and freeze and adapters_moved and elapsed < 60
    record_criterion(2, passed, f"causal={causal} lora_zero_init={zero_init} merge_err={merge_err:.1e} (< 1e-9) "
                                f"freeze_100_steps={freeze} {elapsed:.1f}s (< 60s)")
    assert passed


# ------------------------------------------------------------------ 3


def test_criterion_3_oracle_consistency():
    t0 = time.perf_counter()
    episodes = make_dataset(1000, 0)
    composites = [score_episode(e.gt_traj, e).composite for e in episodes]
    worst_kin = max(kinematic_violation(e.gt_traj) for e in episodes)
    elapsed = time.perf_counter() - t0
    perfect = sum(c == 1.0 for c in composites)
    passed = perfect == 1000 and worst_kin <= 0.25 and elapsed < 120
    record_criterion(3, passed, f"{perfect}/1000 GT composites == 1.0, worst kinematic gap {worst_kin:.4f} m/s "
                                f"(<= 0.25), {elapsed:.1f}s (< 120s)")
    assert passed


# ------------------------------------------------------------------ 4


@pytest.mark.slow
def test_criterion_4_overfit():
    t0 = time.perf_counter()
    episodes = make_dataset(16, 0)
    model = DrivingModel(ModelConfig(), seed=0)
    trainer = Trainer(model, episodes, TrainConfig(batch_size=8, seed=0))
    mse = ce = float("inf")
    while trainer.step_count < 2000:
        trainer.run(100)
        _, mse, ce = evaluate_loss(model, episodes)
        if mse < 1e-3 and ce < 0.1:
            break
    elapsed = time.perf_counter() - t0
    passed = mse < 1e-3 and ce < 0.1 and elapsed < 600
    record_criterion(4, passed, f"{trainer.step_count} steps (<= 2000): traj_mse {mse:.2e} (< 1e-3), "
                                f"text_ce {ce:.4f} (< 0.1), {elapsed:.0f}s (< 600s)")
    assert passed


# ------------------------------------------------------------------ 5 and 6


@pytest.fixture(scope="module")
def generalization_run():
    t0 = time.perf_counter()
    model = DrivingModel(ModelConfig(), seed=0)
    Trainer(model, make_dataset(512, 1), TrainConfig(seed=0)).run(GEN_TRAIN_STEPS)
    return model, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_5_generalization_and_fusion(generalization_run):
    model, train_time = generalization_run
    t0 = time.perf_counter()
    held_out = make_dataset(64, 2)
    turn_hits, turns = turn_sign_probe(model, held_out)
    swap_hits, swaps = nav_swap_probe(model, held_out)
    light_hits, pairs = light_probe(model, held_out)
    composite = evaluate_dataset(model, held_out, with_text=False).mean_composite
    zero = evaluate_dataset(ZeroBaseline(), held_out).mean_composite
    const_vel = evaluate_dataset(ConstantVelocityBaseline(), held_out).mean_composite
    left = [e for e in held_out if e.nav_text == LEFT_TEXT]
    left_y = float(np.mean([t[:, 1].mean() for t, _ in model.predict_batch(left, with_text=False)]))
    elapsed = train_time + time.perf_counter() - t0
    checks = {
        "turn sign": turns > 0 and turn_hits / turns >= 0.9,
        "nav swap": swaps > 0 and swap_hits / swaps >= 0.8,
        "light pairs": pairs > 0 and light_hits / pairs >= 0.8,
        "beats baselines": composite > max(zero, const_vel),
        "left is +y": left_y > 0,
        "runtime": elapsed < 3600,
    }
    passed = all(checks.values())
    record_criterion(5, passed, f"turn {turn_hits}/{turns} (>= 90%), swap {swap_hits}/{swaps} (>= 80%), "
                                f"light {light_hits}/{pairs} (>= 80%), composite {composite:.3f} vs zero {zero:.3f} "
                                f"/ const-vel {const_vel:.3f}, left mean y {left_y:.2f} m, {elapsed:.0f}s (< 3600s)")
    assert passed, {k: v for k, v in checks.items() if not v}


@pytest.mark.slow
def test_criterion_6_lora_finetune(generalization_run):
    base_model, _ = generalization_run
    t0 = time.perf_counter()
    model = base_model.copy()
    model.enable_lora(seed=0)
    frozen = [n for n in model.params if model.is_base_weight(n)]
    tune, held_out = make_dataset(64, 3, "rephrased"), make_dataset(64, 4, "rephrased")
    _, before, _ = evaluate_loss(base_model, held_out)
    Trainer(model, tune, TrainConfig(mode="lora", seed=0)).run(LORA_STEPS)
    _, after, _ = evaluate_loss(model, held_out)
    elapsed = time.perf_counter() - t0
    gain = (before - after) / before
    unchanged = _bitwise_equal(model, base_model, frozen)
    passed = gain >= 0.3 and unchanged and elapsed < 600
    record_criterion(6, passed, f"held-out rephrased traj_mse {before:.2e} -> {after:.2e} ({gain:.0%} better, "
                                f">= 30%), base weights unchanged={unchanged}, {elapsed:.0f}s (< 600s)")
    assert passed


# ------------------------------------------------------------------ 7


def _random_text(rng: SplitMix64) -> str:
    n = rng.randbelow(24)
    chars = []
    for _ in range(n):
        band = rng.randbelow(4)
        if band == 0:
            cp = 32 + rng.randbelow(95)
        elif band == 1:
            cp = rng.randbelow(0x800)
        elif band == 2:
            cp = rng.randbelow(0xD800)  # below the surrogate block
        else:
            cp = 0xE000 + rng.randbelow(0x110000 - 0xE000)
        chars.append(chr(cp))
    return "".join(chars)


def test_criterion_7_determinism_and_formats(tmp_path):
    t0 = time.perf_counter()
    write_dataset(tmp_path / "a.jsonl", make_dataset(50, 7))
    write_dataset(tmp_path / "b.jsonl", make_dataset(50, 7))
    same_dataset = (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    original = make_dataset(100, 8)
    write_dataset(tmp_path / "r.jsonl", original)
    back = read_dataset(tmp_path / "r.jsonl")
    dataset_rt = dumps_dataset(back) == dumps_dataset(original) and all(
        a.image.tobytes() == b.image.tobytes() and a.gt_traj.tobytes() == b.gt_traj.tobytes()
        and a.ego_history.tobytes() == b.ego_history.tobytes() for a, b in zip(original, back))

    episodes = make_dataset(8, 9)
    cfg = TrainConfig(steps=10, batch_size=4, seed=3)
    m1, log1 = train_loop(episodes, cfg, ModelConfig())
    m2, log2 = train_loop(episodes, cfg, ModelConfig())
    same_ckpt = checkpoint_bytes(m1) == checkpoint_bytes(m2)
    same_log = log1 == log2 and len(log1) == 10

    m1.enable_lora(1)
    save_checkpoint(tmp_path / "m.ckpt", m1)
    loaded = load_checkpoint(tmp_path / "m.ckpt")
    ckpt_rt = checkpoint_bytes(loaded) == (tmp_path / "m.ckpt").read_bytes() and loaded.lora_enabled

    rng = SplitMix64(2024)
    texts = [_random_text(rng) for _ in range(10_000)]
    tok_rt = sum(tok.decode(tok.encode(t)) == t for t in texts)
    elapsed = time.perf_counter() - t0
    passed = same_dataset and dataset_rt and same_ckpt and same_log and ckpt_rt and tok_rt == 10_000
    record_criterion(7, passed, f"dataset files identical={same_dataset}, checkpoints identical={same_ckpt}, "
                                f"metrics logs identical={same_log}, dataset round trip={dataset_rt}, checkpoint "
                                f"round trip={ckpt_rt}, tokenizer {tok_rt}/10000, {elapsed:.1f}s")
    assert passed
