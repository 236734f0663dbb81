"""Modality encoders and input-sequence assembly.

Sequence layout (one row per episode)::

    [BOS][64 x IMG][SEP][EGO][SEP][nav bytes][SEP][prompt bytes][TRAJ][text...][EOS]

Image and ego positions carry encoder outputs; every other position uses the
shared token embedding. Learned absolute-position and modality-type
embeddings are added at every position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from . import tokenizer as tok
from .blocks import block_backward, block_forward, block_param_shapes
from .config import EGO_DIM, EGO_HIDDEN, IMAGE_SIZE, N_PATCHES, PATCH_DIM, PATCH_SIZE, ModelConfig

IMG, EGO, TEXT, TRAJ, GEN = range(5)
MODALITY_NAMES = ("IMG", "EGO", "TEXT", "TRAJ", "GEN")

MAX_NAV_BYTES = 64
MAX_PROMPT_BYTES = 64
MAX_TEXT_BYTES = 32

IMG_START = 1
EGO_POS = IMG_START + N_PATCHES + 1
NAV_START = EGO_POS + 2


class SequenceLengthError(ValueError):
    """Raised when a text field or the whole sequence exceeds its budget."""


# ------------------------------------------------------------------ inputs


def validate_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        if arr.size == IMAGE_SIZE * IMAGE_SIZE * 3:
            arr = arr.reshape(IMAGE_SIZE, IMAGE_SIZE, 3)
        else:
            raise nx.ShapeError(f"camera image must be 64x64x3, got shape {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("camera image values must lie in [0, 1]")
    return arr


def validate_ego(history) -> np.ndarray:
    arr = np.asarray(history, dtype=np.float64).reshape(-1)
    if arr.size != EGO_DIM:
        raise nx.ShapeError(f"ego history must have {EGO_DIM} values, got {arr.size}")
    return arr


def patchify(img: np.ndarray) -> np.ndarray:
    """Split a 64x64x3 image into 64 row-major patches of 8*8*3 values."""
    n = IMAGE_SIZE // PATCH_SIZE
    return img.reshape(n, PATCH_SIZE, n, PATCH_SIZE, 3).transpose(0, 2, 1, 3, 4).reshape(N_PATCHES, -1)


# ----------------------------------------------------------------- layout


@dataclass
class SequenceLayout:
    """Token ids and modality tags for one sequence (no embeddings yet)."""

    ids: np.ndarray
    tags: np.ndarray
    traj_index: int

    @property
    def length(self) -> int:
        return int(self.ids.size)


def layout_sequence(nav_text: str, prompt_text: str, teacher_text: str | None = None) -> SequenceLayout:
    nav = tok.encode(nav_text)
    prompt = tok.encode(prompt_text)
    if len(nav) > MAX_NAV_BYTES:
        raise SequenceLengthError(f"navigation text is {len(nav)} bytes, limit {MAX_NAV_BYTES}")
    if len(prompt) > MAX_PROMPT_BYTES:
        raise SequenceLengthError(f"prompt text is {len(prompt)} bytes, limit {MAX_PROMPT_BYTES}")
    ids = [tok.BOS] + [tok.PAD] * N_PATCHES + [tok.SEP, tok.PAD, tok.SEP] + nav + [tok.SEP] + prompt + [tok.TRAJ]
    tags = [TEXT] + [IMG] * N_PATCHES + [TEXT, EGO, TEXT] + [TEXT] * (len(nav) + 1 + len(prompt)) + [TRAJ]
    traj_index = len(ids) - 1
    if teacher_text is not None:
        text = tok.encode(teacher_text)
        if len(text) > MAX_TEXT_BYTES:
            raise SequenceLengthError(f"rationale text is {len(text)} bytes, limit {MAX_TEXT_BYTES}")
        ids += text + [tok.EOS]
        tags += [GEN] * (len(text) + 1)
    return SequenceLayout(np.array(ids, dtype=np.int64), np.array(tags, dtype=np.int64), traj_index)


def text_targets(layout: SequenceLayout) -> np.ndarray:
    """Next-token targets: position ``i`` predicts ``ids[i + 1]`` from TRAJ on, PAD elsewhere."""
    tgt = np.full(layout.length, tok.PAD, dtype=np.int64)
    t = layout.traj_index
    tgt[t : layout.length - 1] = layout.ids[t + 1 :]
    return tgt


# ------------------------------------------------------------------ batches


@dataclass
class Batch:
    """Right-padded batch. With causal attention trailing pads never influence real positions."""

    ids: np.ndarray  # [B, L]
    tags: np.ndarray  # [B, L]
    traj_index: np.ndarray  # [B]
    lengths: np.ndarray  # [B]
    patches: np.ndarray | None = None  # [B, 64, 192]
    ego: np.ndarray | None = None  # [B, 32]
    targets: np.ndarray | None = None  # [B, L] next-token ids, PAD = ignore
    traj_target: np.ndarray | None = None  # [B, 60] normalised

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])


def collate(layouts, patches=None, ego=None, with_targets=False, traj_target=None) -> Batch:
    width = max(lay.length for lay in layouts)
    n = len(layouts)
    ids = np.full((n, width), tok.PAD, dtype=np.int64)
    tags = np.full((n, width), GEN, dtype=np.int64)
    targets = np.full((n, width), tok.PAD, dtype=np.int64) if with_targets else None
    for i, lay in enumerate(layouts):
        ids[i, : lay.length] = lay.ids
        tags[i, : lay.length] = lay.tags
        if with_targets:
            targets[i, : lay.length] = text_targets(lay)
    return Batch(
        ids=ids,
        tags=tags,
        traj_index=np.array([lay.traj_index for lay in layouts], dtype=np.int64),
        lengths=np.array([lay.length for lay in layouts], dtype=np.int64),
        patches=None if patches is None else np.asarray(patches, dtype=np.float64),
        ego=None if ego is None else np.asarray(ego, dtype=np.float64),
        targets=targets,
        traj_target=traj_target,
    )


# ---------------------------------------------------------------- encoders


def encoder_param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    d = cfg.d_model
    specs = [
        ("vision.patch.w", (d, PATCH_DIM), "normal"),
        ("vision.patch.b", (d,), "zeros"),
        ("vision.pos", (N_PATCHES, d), "normal"),
    ]
    for i in range(cfg.vision_blocks):
        specs += block_param_shapes(f"vision.block{i}", d, cfg.d_ff)
    specs += [
        ("ego.w1", (EGO_HIDDEN, EGO_DIM), "normal"),
        ("ego.b1", (EGO_HIDDEN,), "zeros"),
        ("ego.w2", (d, EGO_HIDDEN), "normal"),
        ("ego.b2", (d,), "zeros"),
        ("embed.tok", (cfg.vocab, d), "normal"),
        ("embed.pos", (cfg.max_seq, d), "normal"),
        ("embed.type", (len(MODALITY_NAMES), d), "normal"),
    ]
    return specs


def patch_embed(patches: np.ndarray, params: dict) -> np.ndarray:
    """Linear patch projection plus per-patch position embedding (pre-block tokens)."""
    return nx.linear(patches, params["vision.patch.w"].value, params["vision.patch.b"].value) + params["vision.pos"].value


def encode_image_batch(patches: np.ndarray, params: dict, cfg: ModelConfig):
    x = patch_embed(patches, params)
    caches = []
    for i in range(cfg.vision_blocks):
        x, c = block_forward(x, params, f"vision.block{i}", cfg.n_heads, False, cfg.lora_scale, cfg.ln_eps)
        caches.append(c)
    return x, (patches, caches)


def encode_image_backward(dout: np.ndarray, cache, params: dict, cfg: ModelConfig) -> np.ndarray:
    patches, caches = cache
    dx = dout
    for c in reversed(caches):
        dx = block_backward(dx, c, params)
    params["vision.pos"].grad += dx.sum(axis=0)
    dpatch, dw, db = nx.linear_backward(dx, patches, params["vision.patch.w"].value)
    params["vision.patch.w"].grad += dw
    params["vision.patch.b"].grad += db
    return dpatch


def encode_ego_batch(ego: np.ndarray, params: dict):
    f1 = nx.linear(ego, params["ego.w1"].value, params["ego.b1"].value)
    g = nx.gelu(f1)
    out = nx.linear(g, params["ego.w2"].value, params["ego.b2"].value)
    return out[:, None, :], (ego, f1, g)


def encode_ego_backward(dout: np.ndarray, cache, params: dict) -> np.ndarray:
    ego, f1, g = cache
    dg, dw2, db2 = nx.linear_backward(dout[:, 0, :], g, params["ego.w2"].value)
    params["ego.w2"].grad += dw2
    params["ego.b2"].grad += db2
    df1 = nx.gelu_backward(dg, f1)
    dego, dw1, db1 = nx.linear_backward(df1, ego, params["ego.w1"].value)
    params["ego.w1"].grad += dw1
    params["ego.b1"].grad += db1
    return dego


def encode_image(img, params: dict, cfg: ModelConfig) -> np.ndarray:
    """64 image tokens of width ``d_model`` for one camera frame."""
    out, _ = encode_image_batch(patchify(validate_image(img))[None], params, cfg)
    return out[0]


def encode_ego(history, params: dict) -> np.ndarray:
    """A single ``1 x d_model`` token for the ego history."""
    out, _ = encode_ego_batch(validate_ego(history)[None], params)
    return out[0]


# ---------------------------------------------------------------- embedding


def embed_batch(batch: Batch, params: dict, cfg: ModelConfig, img_tokens=None, ego_tokens=None):
    """Input embeddings ``[B, L, d]`` for a batch, given encoder outputs."""
    b, length = batch.ids.shape
    if length > cfg.max_seq:
        raise SequenceLengthError(f"sequence length {length} exceeds max_seq {cfg.max_seq}")
    x = nx.embedding_lookup(params["embed.tok"].value, batch.ids)
    if img_tokens is not None:
        x[batch.tags == IMG] = img_tokens.reshape(-1, cfg.d_model)
    if ego_tokens is not None:
        x[batch.tags == EGO] = ego_tokens.reshape(-1, cfg.d_model)
    x += params["embed.pos"].value[:length]
    x += params["embed.type"].value[batch.tags]
    return x


def embed_backward(dx: np.ndarray, batch: Batch, params: dict, cfg: ModelConfig):
    """Accumulate embedding gradients; return gradients for image and ego tokens."""
    b, length = batch.ids.shape
    d = cfg.d_model
    img_mask = batch.tags == IMG
    ego_mask = batch.tags == EGO
    text_mask = ~(img_mask | ego_mask)
    params["embed.pos"].grad[:length] += dx.sum(axis=0)
    np.add.at(params["embed.type"].grad, batch.tags.reshape(-1), dx.reshape(-1, d))
    np.add.at(params["embed.tok"].grad, batch.ids[text_mask], dx[text_mask])
    dimg = dx[img_mask].reshape(b, -1, d) if img_mask.any() else None
    dego = dx[ego_mask].reshape(b, -1, d) if ego_mask.any() else None
    return dimg, dego


@dataclass
class TokenSequence:
    embeddings: np.ndarray  # [L, d]
    tags: np.ndarray
    ids: np.ndarray
    traj_index: int

    @property
    def length(self) -> int:
        return int(self.ids.size)


def build_sequence(img, ego, nav_text, prompt_text, params, cfg, teacher_text=None) -> TokenSequence:
    """Assemble and embed the full multimodal input sequence for one episode."""
    layout = layout_sequence(nav_text, prompt_text, teacher_text)
    batch = collate([layout])
    img_tok = encode_image(img, params, cfg)[None]
    ego_tok = encode_ego(ego, params)[None]
    x = embed_batch(batch, params, cfg, img_tok, ego_tok)
    return TokenSequence(x[0], layout.tags, layout.ids, layout.traj_index)
