"""Joint trajectory/text objective, Adam, and the deterministic training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from . import tokenizer as tok
from .config import ModelConfig, TrainConfig, tiny_config
from .encoders import GEN, TEXT, TRAJ, Batch, SequenceLayout, collate, layout_sequence, patchify, validate_ego, validate_image
from .model import DrivingModel
from .rng import SplitMix64

log = logging.getLogger(__name__)

SHUFFLE_STREAM = 0x53485546464C45  # separates the epoch-shuffle stream from weight init


@dataclass
class PreparedEpisode:
    """Model-ready arrays for one episode, computed once per dataset."""

    layout: object
    patches: np.ndarray
    ego: np.ndarray
    traj: np.ndarray  # [60] physical units


def prepare(episodes) -> list[PreparedEpisode]:
    out = []
    for e in episodes:
        out.append(PreparedEpisode(
            layout_sequence(e.nav_text, e.prompt_text, e.gt_text),
            patchify(validate_image(e.image)),
            validate_ego(e.ego_history),
            np.asarray(e.gt_traj, dtype=np.float64).reshape(-1),
        ))
    return out


def make_batch(model: DrivingModel, items: list[PreparedEpisode]) -> Batch:
    return collate(
        [p.layout for p in items],
        patches=np.stack([p.patches for p in items]),
        ego=np.stack([p.ego for p in items]),
        with_targets=True,
        traj_target=model.normalize(np.stack([p.traj for p in items])),
    )


def loss(model: DrivingModel, batch: Batch, lambda_text: float = 0.5, backward: bool = True):
    """Return ``(total, traj_mse, text_ce)``; with ``backward`` gradients are accumulated.

    ``traj_mse`` averages over the 60 normalised values of every batch item;
    ``text_ce`` averages over every teacher-forced rationale token and EOS.
    """
    res = model.forward_batch(batch, keep_cache=backward)
    traj_mse, dtraj = nx.mse(res.traj_norm, batch.traj_target)
    text_ce, dlogits = nx.cross_entropy(res.logits, batch.targets, ignore_index=tok.PAD)
    total = traj_mse + lambda_text * text_ce
    if backward:
        model.backward(res, lambda_text * dlogits if lambda_text else None, dtraj)
    return total, traj_mse, text_ce


class Adam:
    """Adam with bias correction and global-norm clipping over trainable parameters."""

    def __init__(self, model: DrivingModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.t = 0
        self.names = [n for n in model.params if self.is_trainable(n)]
        self.m = {n: np.zeros_like(model.params[n].value) for n in self.names}
        self.v = {n: np.zeros_like(model.params[n].value) for n in self.names}
        self.last_norm = 0.0

    def is_trainable(self, name: str) -> bool:
        if not self.model.params[name].trainable:
            return False
        if self.cfg.mode == "lora":
            return not self.model.is_base_weight(name)
        return True

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((self.model.params[n].grad ** 2).sum()) for n in self.names)))

    def step(self) -> None:
        cfg, P = self.cfg, self.model.params
        self.t += 1
        norm = self.grad_norm()
        self.last_norm = norm
        clip = cfg.clip / norm if norm > cfg.clip else 1.0
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for n in self.names:
            p = P[n]
            g = p.grad * clip if clip != 1.0 else p.grad
            m, v = self.m[n], self.v[n]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            p.value -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        self.model.zero_grad()


def format_metrics(step: int, total: float, traj_mse: float, text_ce: float) -> str:
    return f"{step}\t{total:.9g}\t{traj_mse:.9g}\t{text_ce:.9g}"


class Trainer:
    """Stateful loop so long runs can be advanced and inspected in segments."""

    def __init__(self, model: DrivingModel, episodes, cfg: TrainConfig):
        if not episodes:
            raise ValueError("training needs a non-empty dataset")
        self.model = model
        self.cfg = cfg
        self.data = prepare(episodes)
        self.opt = Adam(model, cfg)
        self.rng = SplitMix64(cfg.seed ^ SHUFFLE_STREAM)
        self.queue: list[int] = []
        self.step_count = 0
        self.log_lines: list[str] = []
        self.model.zero_grad()

    def _next_indices(self) -> list[int]:
        if not self.queue:
            self.queue = self.rng.shuffle(list(range(len(self.data))))
        take, self.queue = self.queue[: self.cfg.batch_size], self.queue[self.cfg.batch_size :]
        return take

    def step(self) -> tuple[float, float, float]:
        batch = make_batch(self.model, [self.data[i] for i in self._next_indices()])
        total, traj_mse, text_ce = loss(self.model, batch, self.cfg.lambda_text)
        self.opt.step()
        self.step_count += 1
        line = format_metrics(self.step_count, total, traj_mse, text_ce)
        self.log_lines.append(line)
        log.debug(line)
        return total, traj_mse, text_ce

    def run(self, steps: int) -> None:
        for _ in range(steps):
            self.step()


def evaluate_loss(model: DrivingModel, episodes, lambda_text: float = 0.5, batch_size: int = 16):
    """Mean (total, traj_mse, text_ce) over a dataset without touching gradients.

    Batch results are weighted by item count for the MSE and by token count for the CE.
    """
    data = prepare(episodes)
    mse_sum = ce_sum = 0.0
    tokens = 0
    for i in range(0, len(data), batch_size):
        batch = make_batch(model, data[i : i + batch_size])
        _, m, c = loss(model, batch, lambda_text, backward=False)
        n_tok = int((batch.targets != tok.PAD).sum())
        mse_sum += m * batch.size
        ce_sum += c * n_tok
        tokens += n_tok
    traj_mse = mse_sum / len(data)
    text_ce = ce_sum / max(tokens, 1)
    return traj_mse + lambda_text * text_ce, traj_mse, text_ce


def train_loop(episodes, train_cfg: TrainConfig, model_cfg: ModelConfig | None = None,
               model: DrivingModel | None = None) -> tuple[DrivingModel, list[str]]:
    """Train for ``train_cfg.steps`` steps; returns the model and the metrics log lines.

    Without ``model`` a fresh one is initialised from ``train_cfg.seed``. LORA
    mode adds adapters if the model has none.
    """
    if model is None:
        model = DrivingModel(model_cfg or ModelConfig(), seed=train_cfg.seed)
    if train_cfg.mode == "lora":
        model.enable_lora(train_cfg.seed)
    trainer = Trainer(model, episodes, train_cfg)
    trainer.run(train_cfg.steps)
    return model, trainer.log_lines


def _probe_layout() -> SequenceLayout:
    """Eight tokens: BOS, a two-byte command, SEP, TRAJ and a two-byte rationale with EOS."""
    ids = [tok.BOS, *tok.encode("go"), tok.SEP, tok.TRAJ, *tok.encode("ok"), tok.EOS]
    tags = [TEXT] * 4 + [TRAJ] + [GEN] * 3
    return SequenceLayout(np.array(ids, dtype=np.int64), np.array(tags, dtype=np.int64), 4)


def model_grad_check(seed: int = 0, n_samples: int = 50, cfg: ModelConfig | None = None) -> float:
    """Finite-difference check of the joint loss on an 8-token text-only sequence.

    Adapters are enabled and their B factors randomised so the LoRA path has
    non-zero gradients. Coordinates are drawn per tensor so small tensors
    (biases, norms) are sampled as often as large matrices.
    """
    rng = SplitMix64(seed)
    model = DrivingModel(cfg or tiny_config(), seed=seed)
    model.enable_lora(seed)
    for name, p in model.params.items():
        if name.endswith(".lora_B"):
            p.value = rng.normal_array(p.value.size, 0.1).reshape(p.value.shape)
    batch = collate([_probe_layout()], with_targets=True,
                    traj_target=rng.normal_array(60, 0.5).reshape(1, 60))
    model.zero_grad()
    loss(model, batch, lambda_text=0.5)
    # The encoders see no image or ego token on this path, so their gradients are exactly zero.
    names = [n for n in model.params if not n.startswith(("vision.", "ego."))]
    arrays = [model.params[n].value for n in names]
    grads = [model.params[n].grad.copy() for n in names]
    return nx.grad_check(lambda: loss(model, batch, 0.5, backward=False)[0], arrays, grads,
                         seed=seed, n_samples=n_samples, per_array=True)
