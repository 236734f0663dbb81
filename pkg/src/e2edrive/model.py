"""Decoder-only driving transformer with trajectory and text heads.

The model reads the assembled multimodal sequence, runs ``n_layers`` causal
pre-norm blocks and a final layer norm, and exposes two heads:

* an untied linear text head producing vocabulary logits at every position;
* an MLP trajectory head reading the hidden state at the TRAJ position and
  producing 60 normalised values (10 waypoints of x, y, vx, vy, ax, ay).

Optional low-rank adapters sit on the four attention projections of every
decoder layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from . import tokenizer as tok
from .blocks import PROJECTIONS, block_backward, block_forward, block_param_shapes, lora_param_shapes
from .config import HORIZON, TRAJ_DIM, TRAJ_HIDDEN, ModelConfig
from .encoders import (
    GEN,
    Batch,
    collate,
    embed_backward,
    embed_batch,
    encode_ego_backward,
    encode_ego_batch,
    encode_image_backward,
    encode_image_batch,
    encoder_param_shapes,
    layout_sequence,
    patchify,
    validate_ego,
    validate_image,
)
from .rng import SplitMix64

LORA_SEED_OFFSET = 0x4C6F5241  # keeps adapter init independent of the base stream


class LoraStateError(RuntimeError):
    """Raised for adapter operations on a model without adapters."""


def model_param_shapes(cfg: ModelConfig, with_lora: bool | None = None) -> list[tuple[str, tuple[int, ...], str]]:
    """All parameter specs in creation (and initialisation) order."""
    d = cfg.d_model
    specs = encoder_param_shapes(cfg)
    for i in range(cfg.n_layers):
        specs += block_param_shapes(f"llm.layer{i}", d, cfg.d_ff)
    specs += [
        ("llm.ln_f.g", (d,), "ones"),
        ("llm.ln_f.b", (d,), "zeros"),
        ("head.text.w", (cfg.vocab, d), "normal"),
        ("head.text.b", (cfg.vocab,), "zeros"),
        ("head.traj.w1", (TRAJ_HIDDEN, d), "normal"),
        ("head.traj.b1", (TRAJ_HIDDEN,), "zeros"),
        ("head.traj.w2", (TRAJ_DIM, TRAJ_HIDDEN), "normal"),
        ("head.traj.b2", (TRAJ_DIM,), "zeros"),
    ]
    if cfg.lora_enabled if with_lora is None else with_lora:
        specs += lora_specs(cfg)
    return specs


def lora_specs(cfg: ModelConfig):
    specs = []
    for i in range(cfg.n_layers):
        specs += lora_param_shapes(f"llm.layer{i}", cfg.d_model, cfg.lora_rank)
    return specs


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count.

    block  = 4 d^2 + 2 d f + 9 d + f          (two layer norms, q/k/v/o, FFN)
    total  = (192 + 65) d + vision_blocks * block       (patch proj, patch pos)
           + 2112 + 65 d                                (ego MLP 32 -> 64 -> d)
           + (V + max_seq + 5) d                        (token/pos/type tables)
           + n_layers * block + 2 d                     (decoder + final norm)
           + V d + V + 256 d + 256 + 60 * 256 + 60      (text and trajectory heads)
           + [lora] 8 * n_layers * r * d
    """
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab
    block = 4 * d * d + 2 * d * f + 9 * d + f
    total = (192 + 65) * d + cfg.vision_blocks * block
    total += 2112 + 65 * d
    total += (v + cfg.max_seq + 5) * d
    total += cfg.n_layers * block + 2 * d
    total += v * d + v + 256 * d + 256 + 60 * 256 + 60
    if cfg.lora_enabled:
        total += 8 * cfg.n_layers * cfg.lora_rank * d
    return total


def _init_value(shape, kind, rng: SplitMix64, std: float) -> np.ndarray:
    if kind == "normal":
        return rng.normal_array(int(np.prod(shape)), std).reshape(shape)
    if kind == "ones":
        return np.ones(shape)
    return np.zeros(shape)


def norm_scale_vector(cfg: ModelConfig) -> np.ndarray:
    s = cfg.norm_scales
    return np.tile([s["pos"], s["pos"], s["vel"], s["vel"], s["acc"], s["acc"]], HORIZON).astype(np.float64)


@dataclass
class ForwardResult:
    hidden: np.ndarray  # [B, L, d] after the final layer norm
    logits: np.ndarray  # [B, L, V]
    traj_norm: np.ndarray  # [B, 60]
    cache: tuple | None = field(default=None, repr=False)


class DrivingModel:
    """Parameters plus the forward/backward passes of the full network."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0, params: dict | None = None):
        self.config = config or ModelConfig()
        if params is None:
            rng = SplitMix64(seed)
            params = {}
            for name, shape, kind in model_param_shapes(self.config, with_lora=False):
                params[name] = nx.Parameter(name, _init_value(shape, kind, rng, self.config.init_std))
            self.params = params
            if self.config.lora_enabled:
                self.config.lora_enabled = False
                self.enable_lora(seed)
        else:
            self.params = params

    # ------------------------------------------------------------ bookkeeping

    @property
    def lora_enabled(self) -> bool:
        return self.config.lora_enabled

    def expected_names(self) -> list[str]:
        return [name for name, _, _ in model_param_shapes(self.config)]

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def is_base_weight(self, name: str) -> bool:
        """Decoder weights that stay frozen while adapters train."""
        return name.startswith("llm.") and ".lora_" not in name

    def enable_lora(self, seed: int = 0) -> None:
        if self.config.lora_enabled:
            return
        rng = SplitMix64(seed + LORA_SEED_OFFSET)
        self.config.lora_enabled = True
        for name, shape, kind in lora_specs(self.config):
            self.params[name] = nx.Parameter(name, _init_value(shape, kind, rng, self.config.init_std))

    def lora_merge(self) -> None:
        """Fold every adapter into its base weight and zero the adapter's B factor.

        The merged weight is computed with the same expression the forward pass
        uses, so outputs are unchanged; zeroing B makes a second merge a no-op.
        """
        if not self.config.lora_enabled:
            raise LoraStateError("lora_merge called on a model without adapters")
        s = self.config.lora_scale
        for i in range(self.config.n_layers):
            for p in PROJECTIONS:
                name = f"llm.layer{i}.{p}"
                w, a, b = self.params[name], self.params[name + ".lora_A"], self.params[name + ".lora_B"]
                w.value = w.value + s * (b.value @ a.value)
                b.value = np.zeros_like(b.value)

    def copy(self) -> "DrivingModel":
        cfg = ModelConfig.from_dict(self.config.to_dict())
        params = {n: nx.Parameter(n, p.value.copy(), p.trainable) for n, p in self.params.items()}
        return DrivingModel(cfg, params=params)

    # --------------------------------------------------------------- forward

    def forward_batch(self, batch: Batch, keep_cache: bool = False, encoded=None) -> ForwardResult:
        """Run the whole network on a collated batch.

        ``encoded`` may carry precomputed ``(img_tokens, ego_tokens)`` to skip the
        modality encoders (used during greedy decoding).
        """
        cfg, P = self.config, self.params
        img_cache = ego_cache = None
        if encoded is not None:
            img_tok, ego_tok = encoded
        else:
            img_tok = ego_tok = None
            if batch.patches is not None:
                img_tok, img_cache = encode_image_batch(batch.patches, P, cfg)
            if batch.ego is not None:
                ego_tok, ego_cache = encode_ego_batch(batch.ego, P)
        x = embed_batch(batch, P, cfg, img_tok, ego_tok)
        caches = []
        for i in range(cfg.n_layers):
            x, c = block_forward(x, P, f"llm.layer{i}", cfg.n_heads, True, cfg.lora_scale, cfg.ln_eps)
            caches.append(c)
        hidden, lnf = nx.layernorm(x, P["llm.ln_f.g"].value, P["llm.ln_f.b"].value, cfg.ln_eps)
        logits = nx.linear(hidden, P["head.text.w"].value, P["head.text.b"].value)
        h_traj = hidden[np.arange(batch.size), batch.traj_index]
        t1 = nx.linear(h_traj, P["head.traj.w1"].value, P["head.traj.b1"].value)
        tg = nx.gelu(t1)
        traj = nx.linear(tg, P["head.traj.w2"].value, P["head.traj.b2"].value)
        cache = None
        if keep_cache:
            cache = (batch, img_cache, ego_cache, caches, lnf, h_traj, t1, tg)
        return ForwardResult(hidden, logits, traj, cache)

    def backward(self, result: ForwardResult, dlogits: np.ndarray | None, dtraj: np.ndarray | None) -> None:
        """Accumulate parameter gradients for upstream gradients on both heads."""
        if result.cache is None:
            raise RuntimeError("forward_batch must be called with keep_cache=True before backward")
        cfg, P = self.config, self.params
        batch, img_cache, ego_cache, caches, lnf, h_traj, t1, tg = result.cache
        dhidden = np.zeros_like(result.hidden)
        if dlogits is not None:
            dh, dw, db = nx.linear_backward(dlogits, result.hidden, P["head.text.w"].value)
            P["head.text.w"].grad += dw
            P["head.text.b"].grad += db
            dhidden += dh
        if dtraj is not None:
            dtg, dw2, db2 = nx.linear_backward(dtraj, tg, P["head.traj.w2"].value)
            P["head.traj.w2"].grad += dw2
            P["head.traj.b2"].grad += db2
            dt1 = nx.gelu_backward(dtg, t1)
            dht, dw1, db1 = nx.linear_backward(dt1, h_traj, P["head.traj.w1"].value)
            P["head.traj.w1"].grad += dw1
            P["head.traj.b1"].grad += db1
            dhidden[np.arange(batch.size), batch.traj_index] += dht
        dx, dg, db = nx.layernorm_backward(dhidden, lnf)
        P["llm.ln_f.g"].grad += dg
        P["llm.ln_f.b"].grad += db
        for c in reversed(caches):
            dx = block_backward(dx, c, P)
        dimg, dego = embed_backward(dx, batch, P, cfg)
        if img_cache is not None and dimg is not None:
            encode_image_backward(dimg, img_cache, P, cfg)
        if ego_cache is not None and dego is not None:
            encode_ego_backward(dego, ego_cache, P)

    def forward(self, layout, image, ego) -> tuple[np.ndarray, np.ndarray]:
        """Hidden states ``[L, d]`` and text logits ``[L, V]`` for one sequence."""
        batch = collate([layout], patches=patchify(validate_image(image))[None], ego=validate_ego(ego)[None])
        res = self.forward_batch(batch)
        return res.hidden[0], res.logits[0]

    # ---------------------------------------------------------------- heads

    def denormalize(self, traj_norm: np.ndarray) -> np.ndarray:
        """Scale head outputs to physical units and reshape to ``[..., 10, 6]``."""
        out = np.asarray(traj_norm) * norm_scale_vector(self.config)
        return out.reshape(out.shape[:-1] + (HORIZON, 6))

    def normalize(self, traj: np.ndarray) -> np.ndarray:
        flat = np.asarray(traj, dtype=np.float64).reshape(-1, TRAJ_DIM)
        return flat / norm_scale_vector(self.config)

    def decode_trajectory(self, hidden_at_traj: np.ndarray) -> np.ndarray:
        """Trajectory ``[10, 6]`` (x, y, vx, vy, ax, ay) from the TRAJ hidden state."""
        P = self.params
        h = np.asarray(hidden_at_traj, dtype=np.float64).reshape(1, -1)
        t = nx.gelu(nx.linear(h, P["head.traj.w1"].value, P["head.traj.b1"].value))
        out = nx.linear(t, P["head.traj.w2"].value, P["head.traj.b2"].value)
        return self.denormalize(out[0])

    # ------------------------------------------------------------- inference

    def _encode(self, batch: Batch):
        img_tok = ego_tok = None
        if batch.patches is not None:
            img_tok, _ = encode_image_batch(batch.patches, self.params, self.config)
        if batch.ego is not None:
            ego_tok, _ = encode_ego_batch(batch.ego, self.params)
        return img_tok, ego_tok

    def generate_text(self, layouts, patches, ego, max_new: int = 32, encoded=None):
        """Greedy decoding after the TRAJ token for a list of layouts.

        Each step appends the argmax token (lowest id on ties) to every
        unfinished sequence; a sequence stops at EOS or after ``max_new``
        tokens. Returns generated ids without the EOS.
        """
        layouts = [type(lay)(lay.ids.copy(), lay.tags.copy(), lay.traj_index) for lay in layouts]
        if encoded is None:
            encoded = self._encode(collate(layouts, patches, ego))
        out = [[] for _ in layouts]
        done = [False] * len(layouts)
        for _ in range(max_new):
            batch = collate(layouts)
            res = self.forward_batch(batch, encoded=encoded)
            for i, lay in enumerate(layouts):
                if done[i]:
                    continue
                nxt = int(np.argmax(res.logits[i, lay.length - 1]))
                if nxt == tok.EOS:
                    done[i] = True
                    continue
                out[i].append(nxt)
                lay.ids = np.append(lay.ids, nxt)
                lay.tags = np.append(lay.tags, GEN)
            if all(done):
                break
        return out

    def predict_batch(self, inputs, with_text: bool = True, max_new: int = 32):
        """Predict ``(trajectory [10, 6], rationale text)`` for each episode-like input.

        Inputs need ``image``, ``ego_history``, ``nav_text`` and ``prompt_text``
        attributes.
        """
        inputs = list(inputs)
        layouts = [layout_sequence(e.nav_text, e.prompt_text) for e in inputs]
        patches = np.stack([patchify(validate_image(e.image)) for e in inputs])
        ego = np.stack([validate_ego(e.ego_history) for e in inputs])
        batch = collate(layouts, patches, ego)
        encoded = self._encode(batch)
        res = self.forward_batch(batch, encoded=encoded)
        trajs = self.denormalize(res.traj_norm)
        texts = [""] * len(inputs)
        if with_text:
            ids = self.generate_text(layouts, patches, ego, max_new=max_new, encoded=encoded)
            texts = [tok.decode(t) for t in ids]
        return [(trajs[i], texts[i]) for i in range(len(inputs))]

    def predict(self, episode, with_text: bool = True):
        return self.predict_batch([episode], with_text=with_text)[0]
