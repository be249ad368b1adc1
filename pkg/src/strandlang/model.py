"""Desk-scale decoder-only transformer over the strand language.

Everything runs in float64 numpy: forward, hand-derived backprop, AdamW
with cosine learning-rate decay, and KV-cached grammar-constrained
sampling. Condition slots receive linearly projected external vectors
(or learned null embeddings); all other positions use the token embedding
table plus learned positional embeddings.

Training follows the three-mode protocol: every step samples one
generation mode, rebuilds that mode's sequence (re-drawing cluster-pool
members when pools are provided), applies condition dropout, and takes a
masked weighted cross-entropy step. Inference is phased: density tokens
first, then layout units, then coarse and style passes that re-inject the
layout's (u, v) anchors as fixed prefixes.
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from threadpoolctl import threadpool_limits

from strandlang.grammar import (
    BOS,
    COND_ID,
    DEN,
    EOS,
    Category,
    CondSlot,
    LossMask,
    Mode,
    StrandTokens,
    TokenSequence,
    Vocabulary,
    build_loss_mask,
    region_end_id,
    region_start_id,
    serialize,
)
from strandlang.hair import N_REGIONS
from strandlang.quantize import N_DENSITY_TOKENS as N_DENSITY
from strandlang.quantize import N_HEADS as N_PQ_HEADS

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_LN_EPS = 1e-5


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    context_len: int = 8192
    cond_dim: int = 64
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def exp_floor(self) -> float:
        # Keep exp() arguments inside the normal range of the dtype.
        return -80.0 if self.dtype == "float32" else -700.0

    def config_hash(self) -> str:
        text = json.dumps(
            {
                "vocab_size": self.vocab_size,
                "d_model": self.d_model,
                "n_layers": self.n_layers,
                "n_heads": self.n_heads,
                "context_len": self.context_len,
                "cond_dim": self.cond_dim,
                "dtype": self.dtype,
            },
            sort_keys=True,
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class ConditionSet:
    """Opaque condition vectors; None selects the learned null embedding."""

    global_img: np.ndarray | None = None
    global_txt: np.ndarray | None = None
    regions: tuple = (None,) * N_REGIONS

    def __post_init__(self):
        self.regions = tuple(self.regions)
        if len(self.regions) != N_REGIONS:
            raise ValueError("regions must have 8 entries")

    @classmethod
    def null(cls) -> "ConditionSet":
        return cls()


def pseudo_condition(style_id, cond_dim: int) -> ConditionSet:
    """Deterministic pseudo-random condition vectors keyed by a style id.

    Stands in for real image/text encoders: distinct styles get distinct,
    reproducible vectors.
    """
    digest = hashlib.sha256(str(style_id).encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    vecs = rng.standard_normal((2 + N_REGIONS, cond_dim))
    return ConditionSet(
        global_img=vecs[0], global_txt=vecs[1], regions=tuple(vecs[2:])
    )


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def init_params(cfg: ModelConfig) -> dict:
    """Fresh parameter dictionary, seeded from cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    d, v, c = cfg.d_model, cfg.vocab_size, cfg.cond_dim
    dt = cfg.np_dtype

    def w(*shape, scale=0.02):
        return (scale * rng.standard_normal(shape)).astype(dt)

    params = {
        "tok_emb": w(v, d),
        "pos_emb": w(cfg.context_len, d),
        "cond_w": w(c, d),
        "cond_b": np.zeros(d, dt),
        "null_img": w(c),
        "null_txt": w(c),
        "null_region": w(c),
        "lnf_g": np.ones(d, dt),
        "lnf_b": np.zeros(d, dt),
        "w_out": w(d, v),
        "b_out": np.zeros(v, dt),
    }
    for i in range(cfg.n_layers):
        p = f"l{i}."
        params[p + "ln1_g"] = np.ones(d, dt)
        params[p + "ln1_b"] = np.zeros(d, dt)
        params[p + "wq"] = w(d, d)
        params[p + "wk"] = w(d, d)
        params[p + "wv"] = w(d, d)
        params[p + "wo"] = w(d, d)
        params[p + "bq"] = np.zeros(d, dt)
        params[p + "bk"] = np.zeros(d, dt)
        params[p + "bv"] = np.zeros(d, dt)
        params[p + "bo"] = np.zeros(d, dt)
        params[p + "ln2_g"] = np.ones(d, dt)
        params[p + "ln2_b"] = np.zeros(d, dt)
        params[p + "w_up"] = w(d, 4 * d)
        params[p + "b_up"] = np.zeros(4 * d, dt)
        params[p + "w_down"] = w(4 * d, d)
        params[p + "b_down"] = np.zeros(d, dt)
    return params


def _slot_vectors(seq_slots, conds: ConditionSet | None, params, drop_img=False, drop_txt=False):
    """Resolve each condition slot to (position, vector, null name or None)."""
    conds = conds or ConditionSet.null()
    out = []
    for slot in seq_slots:
        if slot.kind == "img":
            vec, null = conds.global_img, "null_img"
            if drop_img:
                vec = None
        elif slot.kind == "txt":
            vec, null = conds.global_txt, "null_txt"
            if drop_txt:
                vec = None
        else:
            vec, null = conds.regions[slot.region] if slot.region is not None else None, "null_region"
            if drop_txt:
                vec = None
        dt = params["cond_w"].dtype
        if vec is None:
            out.append((slot.position, params[null], null))
        else:
            out.append((slot.position, np.asarray(vec, dtype=dt), None))
    return out


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv)


def _layernorm_backward(dy, cache, g):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(x):
    return x * ndtr(x)


def _gelu_grad(x):
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _split_heads(x, n_heads):
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x):
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def _single_threaded_blas(fn):
    """Pin BLAS to one thread inside the hot loops.

    Desk-scale GEMMs lose badly to thread spin contention, and a fixed
    thread count keeps results bit-identical across machines.
    """

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with threadpool_limits(limits=1, user_api="blas"):
            return fn(*args, **kwargs)

    return wrapper


class Workspace:
    """Reusable scratch buffers for the hot training loop.

    Large per-step arrays (attention scores, logit gradients) otherwise
    churn through mmap on every call; reusing them keeps step times flat.
    """

    def __init__(self):
        self.buffers = {}

    def get(self, name, shape, dtype):
        # Key on shape too: sequence lengths alternate between modes.
        key = (name, shape, np.dtype(dtype).name)
        buf = self.buffers.get(key)
        if buf is None:
            buf = np.empty(shape, dtype)
            self.buffers[key] = buf
        return buf


_MASK_CACHE = {}


def _causal_masks(n: int, dtype):
    """(additive, binary) causal masks for length n, cached per length."""
    key = (n, np.dtype(dtype).name)
    if key not in _MASK_CACHE:
        if len(_MASK_CACHE) > 8:
            _MASK_CACHE.clear()
        upper = np.triu(np.ones((n, n), dtype=bool), k=1)
        additive = np.where(upper, -1e9, 0.0).astype(dtype)
        binary = np.where(upper, 0.0, 1.0).astype(dtype)
        _MASK_CACHE[key] = (additive, binary)
    return _MASK_CACHE[key]


def _embed(params, cfg, ids, slot_vecs):
    n = len(ids)
    if n > cfg.context_len:
        raise ValueError(f"sequence length {n} exceeds context_len {cfg.context_len}")
    x = np.empty((n, cfg.d_model), dtype=cfg.np_dtype)
    token_mask = ids != COND_ID
    x[token_mask] = params["tok_emb"][ids[token_mask]]
    for pos, vec, _ in slot_vecs:
        x[pos] = vec @ params["cond_w"] + params["cond_b"]
    x = x + params["pos_emb"][:n]
    return x, token_mask


def _forward_cached(params, cfg, ids, slot_vecs, ws: Workspace | None = None):
    ws = ws if ws is not None else Workspace()
    x, token_mask = _embed(params, cfg, ids, slot_vecs)
    n = len(ids)
    scale = 1.0 / float(np.sqrt(cfg.head_dim))
    mask_add, mask_bin = _causal_masks(n, cfg.np_dtype)
    layers = []
    for i in range(cfg.n_layers):
        p = f"l{i}."
        h1, ln1c = _layernorm(x, params[p + "ln1_g"], params[p + "ln1_b"])
        q = (h1 @ params[p + "wq"] + params[p + "bq"]) * scale
        k = h1 @ params[p + "wk"] + params[p + "bk"]
        v = h1 @ params[p + "wv"] + params[p + "bv"]
        qh, kh, vh = (_split_heads(t, cfg.n_heads) for t in (q, k, v))
        # Additive finite mask keeps exp() off the slow -inf path; the
        # binary mask then zeroes the causal-forbidden entries exactly.
        scores = np.matmul(
            qh,
            kh.transpose(0, 2, 1),
            out=ws.get(f"scores{i}", (cfg.n_heads, n, n), x.dtype),
        )
        scores += mask_add
        scores -= scores.max(axis=-1, keepdims=True)
        np.maximum(scores, cfg.exp_floor, out=scores)
        np.exp(scores, out=scores)
        scores *= mask_bin
        scores /= scores.sum(axis=-1, keepdims=True)
        probs = scores
        ctx = _merge_heads(np.matmul(probs, vh))
        attn_out = ctx @ params[p + "wo"] + params[p + "bo"]
        x_mid = x + attn_out
        h2, ln2c = _layernorm(x_mid, params[p + "ln2_g"], params[p + "ln2_b"])
        u = h2 @ params[p + "w_up"] + params[p + "b_up"]
        gact = _gelu(u)
        x_new = x_mid + gact @ params[p + "w_down"]+ params[p + "b_down"]
        layers.append(
            dict(x_in=x, h1=h1, ln1c=ln1c, qh=qh, kh=kh, vh=vh, probs=probs,
                 ctx=ctx, x_mid=x_mid, h2=h2, ln2c=ln2c, u=u, gact=gact)
        )
        x = x_new
    xf, lnfc = _layernorm(x, params["lnf_g"], params["lnf_b"])
    logits = np.matmul(
        xf, params["w_out"], out=ws.get("logits", (n, cfg.vocab_size), x.dtype)
    )
    logits += params["b_out"]
    cache = dict(layers=layers, xf=xf, lnfc=lnfc, token_mask=token_mask, ids=ids)
    return logits, cache


def forward(params, cfg: ModelConfig, seq, conds: ConditionSet | None = None) -> np.ndarray:
    """Per-position logits for a TokenSequence or a raw id array."""
    if isinstance(seq, TokenSequence):
        ids = seq.ids
        slots = seq.condition_slots
    else:
        ids = np.asarray(seq, dtype=np.int64)
        slots = ()
    slot_vecs = _slot_vectors(slots, conds, params)
    logits, _ = _forward_cached(params, cfg, ids, slot_vecs)
    return logits


def _backward(params, cfg, cache, dlogits, slot_vecs, ws: Workspace | None = None):
    ws = ws if ws is not None else Workspace()
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    scale = 1.0 / float(np.sqrt(cfg.head_dim))

    xf = cache["xf"]
    grads["w_out"] += xf.T @ dlogits
    grads["b_out"] += dlogits.sum(axis=0)
    dx = dlogits @ params["w_out"].T
    dx, dg, db = _layernorm_backward(dx, cache["lnfc"], params["lnf_g"])
    grads["lnf_g"] += dg
    grads["lnf_b"] += db

    for i in reversed(range(cfg.n_layers)):
        p = f"l{i}."
        c = cache["layers"][i]
        # MLP
        grads[p + "w_down"] += c["gact"].T @ dx
        grads[p + "b_down"] += dx.sum(axis=0)
        dgact = dx @ params[p + "w_down"].T
        du = dgact * _gelu_grad(c["u"])
        grads[p + "w_up"] += c["h2"].T @ du
        grads[p + "b_up"] += du.sum(axis=0)
        dh2 = du @ params[p + "w_up"].T
        dx_mid, dg, db = _layernorm_backward(dh2, c["ln2c"], params[p + "ln2_g"])
        grads[p + "ln2_g"] += dg
        grads[p + "ln2_b"] += db
        dx_mid = dx_mid + dx  # residual
        # attention
        grads[p + "wo"] += c["ctx"].T @ dx_mid
        grads[p + "bo"] += dx_mid.sum(axis=0)
        dctx = _split_heads(dx_mid @ params[p + "wo"].T, cfg.n_heads)
        probs = c["probs"]
        n = probs.shape[-1]
        buf = ws.get("dscores", probs.shape, probs.dtype)
        dprobs = np.matmul(dctx, c["vh"].transpose(0, 2, 1), out=buf)
        dvh = np.matmul(probs.transpose(0, 2, 1), dctx)
        # Softmax backward in place: dS = P * (dP - rowsum(dP * P)).
        row = np.einsum("hij,hij->hi", dprobs, probs)
        dprobs -= row[:, :, None]
        dprobs *= probs
        dscores = dprobs
        # Cached qh already carries the 1/sqrt(dh) factor, so only the
        # query gradient re-applies it.
        dqh = np.matmul(dscores, c["kh"]) * scale
        dkh = np.matmul(dscores.transpose(0, 2, 1), c["qh"])
        dq, dk, dv = (_merge_heads(t) for t in (dqh, dkh, dvh))
        h1 = c["h1"]
        grads[p + "wq"] += h1.T @ dq
        grads[p + "wk"] += h1.T @ dk
        grads[p + "wv"] += h1.T @ dv
        grads[p + "bq"] += dq.sum(axis=0)
        grads[p + "bk"] += dk.sum(axis=0)
        grads[p + "bv"] += dv.sum(axis=0)
        dh1 = dq @ params[p + "wq"].T + dk @ params[p + "wk"].T + dv @ params[p + "wv"].T
        dxa, dg, db = _layernorm_backward(dh1, c["ln1c"], params[p + "ln1_g"])
        grads[p + "ln1_g"] += dg
        grads[p + "ln1_b"] += db
        dx = dx_mid + dxa

    # embeddings
    n = dx.shape[0]
    grads["pos_emb"][:n] += dx
    token_mask = cache["token_mask"]
    ids = cache["ids"]
    np.add.at(grads["tok_emb"], ids[token_mask], dx[token_mask])
    for pos, vec, null_name in slot_vecs:
        grads["cond_w"] += np.outer(vec, dx[pos])
        grads["cond_b"] += dx[pos]
        if null_name is not None:
            grads[null_name] += params["cond_w"] @ dx[pos]
    return grads


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def sequence_loss(logits: np.ndarray, targets: np.ndarray, mask: LossMask) -> float:
    """Masked weighted mean NLL with the shift-by-one convention.

    ``targets`` is the full id sequence; position t's token is predicted
    from logits[t-1]. Raises when no position is supervised.
    """
    loss, _ = _loss_and_dlogits(logits, targets, mask, want_grad=False)
    return loss


def _loss_and_dlogits(logits, targets, mask: LossMask, want_grad=True,
                      ws: Workspace | None = None):
    contributes = mask.contributes.copy()
    contributes[0] = False  # nothing predicts BOS
    n_valid = int(contributes.sum())
    if n_valid == 0:
        raise ValueError("no supervised positions")
    rows = np.flatnonzero(contributes) - 1  # logits row predicting position t
    tgt = targets[rows + 1]
    w = mask.weights[rows + 1]
    ws = ws if ws is not None else Workspace()

    # Softmax over every row into one reused buffer; unsupervised rows are
    # zeroed out of the gradient afterwards.
    m = logits.max(axis=1)
    ex = ws.get("loss_ex", logits.shape, logits.dtype)
    np.subtract(logits, m[:, None], out=ex)
    np.exp(ex, out=ex)
    z = ex.sum(axis=1)
    logp = logits[rows, tgt] - m[rows] - np.log(z[rows])
    loss = float(-(w * logp).sum() / n_valid)

    if not want_grad:
        return loss, None
    coef = np.zeros(logits.shape[0], dtype=logits.dtype)
    coef[rows] = (w / n_valid).astype(logits.dtype)
    dlogits = ex
    dlogits /= z[:, None]
    dlogits *= coef[:, None]
    dlogits[rows, tgt] -= coef[rows]
    return loss, dlogits


def loss_and_grads(params, cfg, seq: TokenSequence, conds, mask: LossMask,
                   drop_img=False, drop_txt=False, ws: Workspace | None = None):
    """One full forward/backward pass; returns (loss, grads dict)."""
    ws = ws if ws is not None else Workspace()
    slot_vecs = _slot_vectors(seq.condition_slots, conds, params, drop_img, drop_txt)
    logits, cache = _forward_cached(params, cfg, seq.ids, slot_vecs, ws=ws)
    loss, dlogits = _loss_and_dlogits(logits, seq.ids, mask, ws=ws)
    grads = _backward(params, cfg, cache, dlogits, slot_vecs, ws=ws)
    return loss, grads


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 5e-5
    final_lr: float = 1e-6
    weight_decay: float = 0.1
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    mode_probs: tuple = (1 / 3, 1 / 3, 1 / 3)
    p_img: float = 0.3
    p_txt: float = 0.3
    p_null: float = 0.1
    seed: int = 0
    category_weights: dict = field(default_factory=dict)
    log_every: int = 0


@dataclass
class TrainItem:
    """One hairstyle's training payload.

    ``strand_pools`` holds, per guide slot, the tokenized cluster members
    eligible to stand in for that guide; singleton pools disable the
    augmentation for that slot.
    """

    density_tokens: np.ndarray
    strand_pools: list
    conds: ConditionSet
    style_id: str = ""


@dataclass
class Checkpoint:
    cfg: ModelConfig
    params: dict
    opt_m: dict
    opt_v: dict
    step: int
    vocab_hash: str
    rng_state: dict
    loss_history: list = field(default_factory=list)
    diverged: bool = False

    def config_hash(self) -> str:
        return self.cfg.config_hash()


def sample_mode(rng, probs) -> Mode:
    """Draw a generation mode from (layout, coarse, style) probabilities."""
    r = rng.random()
    if r < probs[0]:
        return Mode.LAYOUT
    if r < probs[0] + probs[1]:
        return Mode.COARSE
    return Mode.STYLE


def _cosine_lr(step, total, base, final):
    if total <= 1:
        return base
    t = min(step, total - 1) / (total - 1)
    return final + 0.5 * (base - final) * (1.0 + np.cos(np.pi * t))


def _adamw_step(params, grads, m, v, step, lr, cfg: TrainConfig):
    b1, b2 = cfg.betas
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name, p in params.items():
        g = grads[name]
        m[name] = b1 * m[name] + (1.0 - b1) * g
        v[name] = b2 * v[name] + (1.0 - b2) * g * g
        update = (m[name] / c1) / (np.sqrt(v[name] / c2) + cfg.eps)
        p -= lr * (update + cfg.weight_decay * p)


def _grads_finite(grads) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads.values())


def train(
    dataset,
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig | None = None,
    params: dict | None = None,
    resume: Checkpoint | None = None,
    until: int | None = None,
) -> Checkpoint:
    """Run the mode-sampled training loop; deterministic per seed.

    Every step draws a hairstyle, a mode, pool members for augmentation and
    the condition-dropout pattern, then takes one AdamW step on the masked
    loss under a cosine learning-rate schedule. A non-finite loss or
    gradient aborts with the checkpoint of the last finite step. Passing a
    ``resume`` checkpoint restores parameters, optimizer moments and RNG
    state, so a reloaded run continues bit-identically; ``train_cfg.steps``
    stays the total schedule budget and ``until`` optionally pauses the run
    at an earlier step.
    """
    if not dataset:
        raise ValueError("empty dataset")
    train_cfg = train_cfg or TrainConfig()
    rng = np.random.default_rng(train_cfg.seed)
    if resume is not None:
        if resume.vocab_hash != vocab.config_hash():
            raise ValueError("checkpoint/vocabulary hash mismatch")
        params = {k: p.copy() for k, p in resume.params.items()}
        m = {k: p.copy() for k, p in resume.opt_m.items()}
        v = {k: p.copy() for k, p in resume.opt_v.items()}
        rng.bit_generator.state = resume.rng_state
        start = resume.step
        losses = list(resume.loss_history)
    else:
        params = params if params is not None else init_params(model_cfg)
        m = {k: np.zeros_like(p) for k, p in params.items()}
        v = {k: np.zeros_like(p) for k, p in params.items()}
        start = 0
        losses = []
    seq_cache = {}
    ws = Workspace()
    diverged = False
    last = train_cfg.steps if until is None else min(until, train_cfg.steps)

    # Desk-scale GEMMs lose badly to BLAS thread spin contention, and a
    # fixed thread count keeps runs bit-identical across machines.
    with threadpool_limits(limits=1, user_api="blas"):
        for step in range(start, last):
            item_idx = int(rng.integers(len(dataset)))
            item = dataset[item_idx]
            mode = sample_mode(rng, train_cfg.mode_probs)
            static = all(len(pool) == 1 for pool in item.strand_pools)
            if static:
                picks = (0,) * len(item.strand_pools)
            else:
                picks = tuple(
                    int(rng.integers(len(pool))) for pool in item.strand_pools
                )
            key = (item_idx, mode, picks)
            if key in seq_cache:
                seq, mask = seq_cache[key]
            else:
                strands = [pool[i] for pool, i in zip(item.strand_pools, picks)]
                seq = serialize(strands, item.density_tokens, mode, vocab)
                mask = build_loss_mask(seq, vocab, train_cfg.category_weights)
                if static or len(seq_cache) < 64:
                    seq_cache[key] = (seq, mask)

            r = rng.random()
            if r < train_cfg.p_null:
                drop_img = drop_txt = True
            else:
                drop_img = rng.random() < train_cfg.p_img
                drop_txt = rng.random() < train_cfg.p_txt

            loss, grads = loss_and_grads(
                params, model_cfg, seq, item.conds, mask, drop_img, drop_txt, ws=ws
            )
            if not np.isfinite(loss) or not _grads_finite(grads):
                diverged = True
                break
            losses.append(loss)
            lr = _cosine_lr(step, train_cfg.steps, train_cfg.lr, train_cfg.final_lr)
            _adamw_step(params, grads, m, v, step + 1, lr, train_cfg)
            if train_cfg.log_every and (step + 1) % train_cfg.log_every == 0:
                recent = np.mean(losses[-train_cfg.log_every:])
                print(f"step {step + 1}/{train_cfg.steps}  loss {recent:.4f}")

    return Checkpoint(
        cfg=model_cfg,
        params=params,
        opt_m=m,
        opt_v=v,
        step=len(losses),
        vocab_hash=vocab.config_hash(),
        rng_state=rng.bit_generator.state,
        loss_history=losses,
        diverged=diverged,
    )


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "vocab_size": ckpt.cfg.vocab_size,
            "d_model": ckpt.cfg.d_model,
            "n_layers": ckpt.cfg.n_layers,
            "n_heads": ckpt.cfg.n_heads,
            "context_len": ckpt.cfg.context_len,
            "cond_dim": ckpt.cfg.cond_dim,
            "seed": ckpt.cfg.seed,
            "dtype": ckpt.cfg.dtype,
        },
        "config_hash": ckpt.config_hash(),
        "vocab_hash": ckpt.vocab_hash,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "loss_history": ckpt.loss_history,
        "diverged": ckpt.diverged,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for name, p in ckpt.params.items():
        arrays["p." + name] = p
        arrays["m." + name] = ckpt.opt_m[name]
        arrays["v." + name] = ckpt.opt_v[name]
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", suffix=".npz", dir=directory)
    os.close(fd)
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        cfg = ModelConfig(**meta["config"])
        params, m, v = {}, {}, {}
        for key in data.files:
            if key.startswith("p."):
                params[key[2:]] = data[key]
            elif key.startswith("m."):
                m[key[2:]] = data[key]
            elif key.startswith("v."):
                v[key[2:]] = data[key]
    ckpt = Checkpoint(
        cfg=cfg,
        params=params,
        opt_m=m,
        opt_v=v,
        step=meta["step"],
        vocab_hash=meta["vocab_hash"],
        rng_state=meta["rng_state"],
        loss_history=list(meta["loss_history"]),
        diverged=meta["diverged"],
    )
    if meta["config_hash"] != ckpt.config_hash():
        raise ValueError("checkpoint config hash mismatch")
    return ckpt


# ---------------------------------------------------------------------------
# phased sampling
# ---------------------------------------------------------------------------

@dataclass
class DecodeConfig:
    temperature: float = 1.0
    top_k: int = 0
    seed: int = 0
    max_strands_per_region: int = 64


@dataclass
class PhasedSample:
    """Everything the three inference phases produced."""

    density_tokens: np.ndarray
    layout_seq: TokenSequence
    coarse_seq: TokenSequence
    style_seq: TokenSequence
    strands: list  # StrandTokens with anchor/u/v/coarse/style all filled


class _DecodeState:
    """Incremental decoder with per-layer KV caches."""

    def __init__(self, params, cfg: ModelConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        cap = cfg.context_len
        dt = cfg.np_dtype
        self.k_cache = [
            np.empty((cfg.n_heads, cap, cfg.head_dim), dt) for _ in range(cfg.n_layers)
        ]
        self.v_cache = [
            np.empty((cfg.n_heads, cap, cfg.head_dim), dt) for _ in range(cfg.n_layers)
        ]

    def step_token(self, token_id: int) -> np.ndarray:
        return self._step(self.params["tok_emb"][token_id])

    def step_condition(self, vec: np.ndarray) -> np.ndarray:
        p = self.params
        return self._step(vec @ p["cond_w"] + p["cond_b"])

    def _step(self, x: np.ndarray) -> np.ndarray:
        p, cfg = self.params, self.cfg
        if self.t >= cfg.context_len:
            raise ValueError("decoder exceeded context length")
        x = x + p["pos_emb"][self.t]
        scale = 1.0 / float(np.sqrt(cfg.head_dim))
        for i in range(cfg.n_layers):
            pre = f"l{i}."
            h1, _ = _layernorm(x, p[pre + "ln1_g"], p[pre + "ln1_b"])
            q = (h1 @ p[pre + "wq"] + p[pre + "bq"]).reshape(cfg.n_heads, cfg.head_dim)
            k = (h1 @ p[pre + "wk"] + p[pre + "bk"]).reshape(cfg.n_heads, cfg.head_dim)
            v = (h1 @ p[pre + "wv"] + p[pre + "bv"]).reshape(cfg.n_heads, cfg.head_dim)
            self.k_cache[i][:, self.t] = k
            self.v_cache[i][:, self.t] = v
            keys = self.k_cache[i][:, : self.t + 1]
            vals = self.v_cache[i][:, : self.t + 1]
            scores = np.einsum("hd,htd->ht", q, keys) * scale
            scores -= scores.max(axis=1, keepdims=True)
            probs = np.exp(scores)
            probs /= probs.sum(axis=1, keepdims=True)
            ctx = np.einsum("ht,htd->hd", probs, vals).reshape(cfg.d_model)
            x = x + ctx @ p[pre + "wo"] + p[pre + "bo"]
            h2, _ = _layernorm(x, p[pre + "ln2_g"], p[pre + "ln2_b"])
            x = x + _gelu(h2 @ p[pre + "w_up"] + p[pre + "b_up"]) @ p[pre + "w_down"] + p[pre + "b_down"]
        xf, _ = _layernorm(x, p["lnf_g"], p["lnf_b"])
        self.t += 1
        return xf @ p["w_out"] + p["b_out"]


def _pick(logits, allowed, decode_cfg: DecodeConfig, rng) -> int:
    """Constrained draw: only ids in ``allowed`` can be produced."""
    allowed = np.asarray(allowed, dtype=np.int64)
    sub = logits[allowed]
    if decode_cfg.temperature <= 0.0:
        return int(allowed[int(np.argmax(sub))])
    sub = sub / decode_cfg.temperature
    if decode_cfg.top_k and decode_cfg.top_k < len(allowed):
        keep = np.argsort(-sub, kind="stable")[: decode_cfg.top_k]
        allowed = allowed[keep]
        sub = sub[keep]
    sub = sub - sub.max()
    p = np.exp(sub)
    p /= p.sum()
    return int(allowed[rng.choice(len(allowed), p=p)])


def _check_hashes(checkpoint: Checkpoint, vocab: Vocabulary):
    if checkpoint.vocab_hash != vocab.config_hash():
        raise ValueError("checkpoint/vocabulary hash mismatch")


def _geometry_phase(
    checkpoint, vocab, conds, decode_cfg, mode: Mode, density, units_by_region, rng
):
    """Run a coarse or style pass with layout anchors re-injected as prefixes."""
    params, cfg = checkpoint.params, checkpoint.cfg
    state = _DecodeState(params, cfg)
    slot_lookup = {}
    ids = [BOS, COND_ID, COND_ID, DEN]
    slots = [CondSlot(1, "img", None), CondSlot(2, "txt", None)]
    vecs = _slot_vectors(slots, conds, params)
    state.step_token(BOS)
    state.step_condition(vecs[0][1])
    state.step_condition(vecs[1][1])
    state.step_token(DEN)
    for d in density:
        tok = vocab.density_id(int(d))
        ids.append(tok)
        state.step_token(tok)

    geom_cat = Category.COARSE if mode is Mode.COARSE else Category.STYLE
    head_ranges = [
        np.array(vocab.category_range(geom_cat, h), dtype=np.int64)
        for h in range(N_PQ_HEADS)
    ]
    out_units = []
    for region in range(N_REGIONS):
        start = region_start_id(region)
        ids.append(start)
        state.step_token(start)
        slots.append(CondSlot(len(ids), "region", region))
        ids.append(COND_ID)
        vec = _slot_vectors([slots[-1]], conds, params)[0][1]
        state.step_condition(vec)
        for unit in units_by_region[region]:
            ids.append(mode.separator)
            state.step_token(mode.separator)
            for val in (unit.u, unit.v):
                tok = vocab.uv_id(val)
                ids.append(tok)
                logits = state.step_token(tok)
            codes = np.empty(N_PQ_HEADS, dtype=np.int64)
            for h in range(N_PQ_HEADS):
                tok = _pick(logits, head_ranges[h], decode_cfg, rng)
                codes[h] = tok - head_ranges[h][0]
                ids.append(tok)
                logits = state.step_token(tok)
            out_units.append(
                StrandTokens(
                    region=region,
                    u=unit.u,
                    v=unit.v,
                    anchor=unit.anchor,
                    coarse=codes if mode is Mode.COARSE else None,
                    style=codes if mode is Mode.STYLE else None,
                )
            )
        end = region_end_id(region)
        ids.append(end)
        state.step_token(end)
    ids.append(EOS)
    seq = TokenSequence(mode=mode, ids=np.array(ids, dtype=np.int64), condition_slots=tuple(slots))
    return seq, out_units


@_single_threaded_blas
def sample_phased(
    conds: ConditionSet | None,
    checkpoint: Checkpoint,
    vocab: Vocabulary,
    decode_cfg: DecodeConfig | None = None,
) -> PhasedSample:
    """Position-first, geometry-after inference.

    Phase 1 autoregresses the 1024 density tokens; phase 2 continues the
    same sequence with layout units, where the region-end marker competes
    against the unit separator at every unit boundary; phases 3 and 4 run
    fresh coarse and style sequences that re-inject the layout's (u, v)
    pairs as fixed prefixes and only sample geometry ids. Every emitted
    sequence parses cleanly by construction.
    """
    decode_cfg = decode_cfg or DecodeConfig()
    _check_hashes(checkpoint, vocab)
    params, cfg = checkpoint.params, checkpoint.cfg
    rng = np.random.default_rng(decode_cfg.seed)

    # ---- phases 1 and 2 share one sequence -------------------------------
    state = _DecodeState(params, cfg)
    ids = [BOS, COND_ID, COND_ID, DEN]
    slots = [CondSlot(1, "img", None), CondSlot(2, "txt", None)]
    vecs = _slot_vectors(slots, conds, params)
    state.step_token(BOS)
    state.step_condition(vecs[0][1])
    state.step_condition(vecs[1][1])
    logits = state.step_token(DEN)

    density_range = np.array(vocab.category_range(Category.DENSITY), dtype=np.int64)
    density = np.empty(N_DENSITY, dtype=np.int64)
    for i in range(N_DENSITY):
        tok = _pick(logits, density_range, decode_cfg, rng)
        density[i] = tok - vocab.offset_density
        ids.append(tok)
        logits = state.step_token(tok)

    anchor_range = np.array(vocab.category_range(Category.ANCHOR), dtype=np.int64)
    uv_range = np.array(vocab.category_range(Category.UV), dtype=np.int64)
    units_by_region = []
    for region in range(N_REGIONS):
        start = region_start_id(region)
        ids.append(start)
        state.step_token(start)
        slots.append(CondSlot(len(ids), "region", region))
        ids.append(COND_ID)
        vec = _slot_vectors([slots[-1]], conds, params)[0][1]
        logits = state.step_condition(vec)
        units = []
        end = region_end_id(region)
        boundary = np.array([Mode.LAYOUT.separator, end], dtype=np.int64)
        while True:
            if len(units) >= decode_cfg.max_strands_per_region:
                tok = end
            else:
                tok = _pick(logits, boundary, decode_cfg, rng)
            ids.append(tok)
            logits = state.step_token(tok)
            if tok == end:
                break
            a = _pick(logits, anchor_range, decode_cfg, rng)
            ids.append(a)
            logits = state.step_token(a)
            u = _pick(logits, uv_range, decode_cfg, rng)
            ids.append(u)
            logits = state.step_token(u)
            v = _pick(logits, uv_range, decode_cfg, rng)
            ids.append(v)
            logits = state.step_token(v)
            units.append(
                StrandTokens(
                    region=region,
                    u=u - vocab.offset_uv,
                    v=v - vocab.offset_uv,
                    anchor=a - vocab.offset_anchor,
                )
            )
        units.sort(key=StrandTokens.sort_key)
        units_by_region.append(units)
    ids.append(EOS)
    layout_seq = TokenSequence(
        mode=Mode.LAYOUT, ids=np.array(ids, dtype=np.int64), condition_slots=tuple(slots)
    )

    # ---- phases 3 and 4 ---------------------------------------------------
    coarse_seq, coarse_units = _geometry_phase(
        checkpoint, vocab, conds, decode_cfg, Mode.COARSE, density, units_by_region, rng
    )
    style_seq, style_units = _geometry_phase(
        checkpoint, vocab, conds, decode_cfg, Mode.STYLE, density, units_by_region, rng
    )

    strands = [
        StrandTokens(
            region=c.region, u=c.u, v=c.v, anchor=c.anchor, coarse=c.coarse, style=s.style
        )
        for c, s in zip(coarse_units, style_units)
    ]
    return PhasedSample(
        density_tokens=density,
        layout_seq=layout_seq,
        coarse_seq=coarse_seq,
        style_seq=style_seq,
        strands=strands,
    )


@_single_threaded_blas
def resample_style(
    base: PhasedSample,
    conds: ConditionSet | None,
    checkpoint: Checkpoint,
    vocab: Vocabulary,
    decode_cfg: DecodeConfig,
) -> PhasedSample:
    """Compositional edit: redraw only the style pass of an existing sample.

    Density, layout and coarse stay byte-identical; only ids after the
    style separator are re-sampled.
    """
    _check_hashes(checkpoint, vocab)
    rng = np.random.default_rng(decode_cfg.seed)
    units_by_region = [[] for _ in range(N_REGIONS)]
    for s in base.strands:
        units_by_region[s.region].append(s)
    style_seq, style_units = _geometry_phase(
        checkpoint, vocab, conds, decode_cfg, Mode.STYLE, base.density_tokens,
        units_by_region, rng,
    )
    strands = [
        StrandTokens(
            region=c.region, u=c.u, v=c.v, anchor=c.anchor, coarse=c.coarse, style=s.style
        )
        for c, s in zip(base.strands, style_units)
    ]
    return PhasedSample(
        density_tokens=base.density_tokens,
        layout_seq=base.layout_seq,
        coarse_seq=base.coarse_seq,
        style_seq=style_seq,
        strands=strands,
    )


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------

@_single_threaded_blas
def gradient_check(
    params,
    cfg: ModelConfig,
    seq: TokenSequence,
    conds: ConditionSet | None,
    mask: LossMask,
    n_coords: int = 200,
    h: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative error of analytic gradients vs central differences.

    Samples ``n_coords`` random parameter coordinates across all tensors.
    Intended for test-scale configs only; finite differences need float64.
    """
    if cfg.dtype != "float64":
        raise ValueError("gradient_check requires a float64 config")
    _, grads = loss_and_grads(params, cfg, seq, conds, mask)
    slot_vecs_fn = lambda: _slot_vectors(seq.condition_slots, conds, params)

    def eval_loss():
        logits, _ = _forward_cached(params, cfg, seq.ids, slot_vecs_fn())
        loss, _ = _loss_and_dlogits(logits, seq.ids, mask, want_grad=False)
        return loss

    rng = np.random.default_rng(seed)
    names = sorted(params.keys())
    sizes = np.array([params[n].size for n in names], dtype=np.float64)
    probs = sizes / sizes.sum()
    worst = 0.0
    for _ in range(n_coords):
        name = names[int(rng.choice(len(names), p=probs))]
        flat = params[name].reshape(-1)
        idx = int(rng.integers(flat.size))
        orig = flat[idx]
        flat[idx] = orig + h
        lp = eval_loss()
        flat[idx] = orig - h
        lm = eval_loss()
        flat[idx] = orig
        numeric = (lp - lm) / (2.0 * h)
        analytic = grads[name].reshape(-1)[idx]
        denom = max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst
