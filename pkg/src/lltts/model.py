"""Toy dual-head acoustic model with exact analytic gradients.

Per-position feed-forward pipeline: token embedding -> tanh encoder ->
language one-hot concat -> tanh trunk -> one of two linear projection
heads -> residual post net. The trunk and post net are shared between
heads; only the selected head receives gradient.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputDomainError, NumericError, UsageError


class Head(enum.Enum):
    LBS = "lbs"
    RRS = "rrs"


SEGMENT_ORDER = ("embedding", "encoder", "trunk", "head_lbs", "head_rrs", "postnet")


@dataclass(frozen=True)
class ModelTopology:
    vocab_size: int
    embed_dim: int
    encoder_hidden: int
    trunk_dim: int
    frame_dim: int
    postnet_hidden: int
    num_languages: int

    def __post_init__(self):
        for name in (
            "vocab_size",
            "embed_dim",
            "encoder_hidden",
            "trunk_dim",
            "frame_dim",
            "postnet_hidden",
            "num_languages",
        ):
            if getattr(self, name) < 1:
                raise UsageError(f"topology field {name} must be >= 1")

    def segment_lengths(self) -> dict[str, int]:
        t = self
        return {
            "embedding": t.vocab_size * t.embed_dim,
            "encoder": t.encoder_hidden * (t.embed_dim + 1),
            "trunk": t.trunk_dim * (t.encoder_hidden + t.num_languages + 1),
            "head_lbs": t.frame_dim * (t.trunk_dim + 1),
            "head_rrs": t.frame_dim * (t.trunk_dim + 1),
            "postnet": t.postnet_hidden * (t.frame_dim + 1)
            + t.frame_dim * (t.postnet_hidden + 1),
        }

    def num_params(self) -> int:
        return sum(self.segment_lengths().values())


def segment_ranges(topology: ModelTopology) -> dict[str, tuple[int, int]]:
    ranges = {}
    start = 0
    for name in SEGMENT_ORDER:
        length = topology.segment_lengths()[name]
        ranges[name] = (start, start + length)
        start += length
    return ranges


@dataclass
class ParameterSet:
    values: np.ndarray
    segments: dict[str, tuple[int, int]]
    topology: ModelTopology

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.values.copy(), dict(self.segments), self.topology)

    def segment(self, name: str) -> np.ndarray:
        lo, hi = self.segments[name]
        return self.values[lo:hi]


class _Weights:
    """Named matrix views over one flat parameter (or gradient) vector."""

    def __init__(self, topology: ModelTopology, flat: np.ndarray):
        t = topology
        r = segment_ranges(t)

        def seg(name):
            lo, hi = r[name]
            return flat[lo:hi]

        self.emb = seg("embedding").reshape(t.vocab_size, t.embed_dim)
        enc = seg("encoder")
        n_w = t.encoder_hidden * t.embed_dim
        self.w_enc = enc[:n_w].reshape(t.encoder_hidden, t.embed_dim)
        self.b_enc = enc[n_w:]
        trunk = seg("trunk")
        z_dim = t.encoder_hidden + t.num_languages
        n_w = t.trunk_dim * z_dim
        self.w_trunk = trunk[:n_w].reshape(t.trunk_dim, z_dim)
        self.b_trunk = trunk[n_w:]
        self.heads = {}
        for head, name in ((Head.LBS, "head_lbs"), (Head.RRS, "head_rrs")):
            h = seg(name)
            n_w = t.frame_dim * t.trunk_dim
            self.heads[head] = (
                h[:n_w].reshape(t.frame_dim, t.trunk_dim),
                h[n_w:],
            )
        post = seg("postnet")
        n1 = t.postnet_hidden * t.frame_dim
        self.w_p1 = post[:n1].reshape(t.postnet_hidden, t.frame_dim)
        self.b_p1 = post[n1 : n1 + t.postnet_hidden]
        rest = post[n1 + t.postnet_hidden :]
        n2 = t.frame_dim * t.postnet_hidden
        self.w_p2 = rest[:n2].reshape(t.frame_dim, t.postnet_hidden)
        self.b_p2 = rest[n2:]


def init_params(topology: ModelTopology, seed: int) -> ParameterSet:
    """Xavier-uniform weights, zero biases; deterministic per seed."""
    values = np.zeros(topology.num_params())
    params = ParameterSet(values, segment_ranges(topology), topology)
    w = _Weights(topology, values)
    rng = np.random.default_rng(seed)
    matrices = [w.emb, w.w_enc, w.w_trunk, *(m for m, _ in w.heads.values()), w.w_p1, w.w_p2]
    for mat in matrices:
        fan_out, fan_in = mat.shape
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        mat[...] = rng.uniform(-bound, bound, size=mat.shape)
    return params


def _pad_batch(topology: ModelTopology, samples):
    """Stack variable-length samples into padded arrays plus a mask."""
    n = len(samples)
    if n == 0:
        raise UsageError("empty batch")
    t_max = max(len(s.tokens) for s in samples)
    tokens = np.zeros((n, t_max), dtype=np.int64)
    targets = np.zeros((n, t_max, topology.frame_dim))
    mask = np.zeros((n, t_max))
    langs = np.zeros(n, dtype=np.int64)
    for i, s in enumerate(samples):
        tok = np.asarray(s.tokens)
        if tok.min(initial=0) < 0 or (len(tok) and tok.max() >= topology.vocab_size):
            raise InputDomainError(f"sample {i}: token id out of range [0, {topology.vocab_size})")
        if not 0 <= s.language_id < topology.num_languages:
            raise InputDomainError(
                f"sample {i}: language id {s.language_id} out of range "
                f"[0, {topology.num_languages})"
            )
        ti = len(tok)
        tokens[i, :ti] = tok
        targets[i, :ti] = s.target_frames
        mask[i, :ti] = 1.0
        langs[i] = s.language_id
    return tokens, targets, mask, langs


def _forward_padded(w: _Weights, topology: ModelTopology, tokens, langs, head: Head):
    e = w.emb[tokens]
    h = np.tanh(e @ w.w_enc.T + w.b_enc)
    onehot = np.eye(topology.num_languages)[langs]
    z = np.concatenate([h, np.broadcast_to(onehot[:, None, :], h.shape[:2] + (topology.num_languages,))], axis=2)
    u = np.tanh(z @ w.w_trunk.T + w.b_trunk)
    w_h, b_h = w.heads[head]
    y_pre = u @ w_h.T + b_h
    q = np.tanh(y_pre @ w.w_p1.T + w.b_p1)
    y_post = y_pre + q @ w.w_p2.T + w.b_p2
    return e, h, z, u, y_pre, q, y_post


def forward(params: ParameterSet, batch, head: Head):
    """Predicted frames per sample: (pre-postnet list, post-postnet list)."""
    topology = params.topology
    tokens, _, _, langs = _pad_batch(topology, batch.samples)
    w = _Weights(topology, params.values)
    *_, y_pre, _, y_post = _forward_padded(w, topology, tokens, langs, head)
    pre, post = [], []
    for i, s in enumerate(batch.samples):
        ti = len(s.tokens)
        pre.append(y_pre[i, :ti].copy())
        post.append(y_post[i, :ti].copy())
    return pre, post


@dataclass
class LossBreakdown:
    pre_postnet_mse: float
    post_postnet_mse: float
    total: float = field(default=None)

    def __post_init__(self):
        if self.total is None:
            self.total = self.pre_postnet_mse + self.post_postnet_mse


def loss_and_grad(params: ParameterSet, batch, head: Head):
    """MSE(pre) + MSE(post) vs targets, with the exact analytic gradient.

    Per-sample loss averages over positions and frame coefficients; the
    batch loss averages over samples. The unselected head's gradient
    segment stays zero.
    """
    topology = params.topology
    tokens, targets, mask, langs = _pad_batch(topology, batch.samples)
    w = _Weights(topology, params.values)
    e, h, z, u, y_pre, q, y_post = _forward_padded(w, topology, tokens, langs, head)

    n, _, f_dim = targets.shape
    lengths = mask.sum(axis=1)
    # per-element averaging weight: 1 / (n_samples * T_i * frame_dim)
    weight = (mask / (n * lengths[:, None] * f_dim))[:, :, None]

    d_pre = y_pre - targets
    d_post = y_post - targets
    pre_mse = float(np.sum(weight * d_pre**2))
    post_mse = float(np.sum(weight * d_post**2))
    loss = LossBreakdown(pre_mse, post_mse)

    grad = np.zeros_like(params.values)
    g = _Weights(topology, grad)

    g_post = 2.0 * weight * d_post
    g.b_p2[...] = g_post.sum(axis=(0, 1))
    g.w_p2[...] = np.einsum("btf,btp->fp", g_post, q)
    dq = g_post @ w.w_p2
    ds1 = dq * (1.0 - q**2)
    g.b_p1[...] = ds1.sum(axis=(0, 1))
    g.w_p1[...] = np.einsum("btp,btf->pf", ds1, y_pre)

    dy_pre = 2.0 * weight * d_pre + g_post + ds1 @ w.w_p1
    w_h, _ = w.heads[head]
    gw_h, gb_h = g.heads[head]
    gb_h[...] = dy_pre.sum(axis=(0, 1))
    gw_h[...] = np.einsum("btf,btd->fd", dy_pre, u)

    du = dy_pre @ w_h
    da_tr = du * (1.0 - u**2)
    g.b_trunk[...] = da_tr.sum(axis=(0, 1))
    g.w_trunk[...] = np.einsum("btd,btz->dz", da_tr, z)
    dh = (da_tr @ w.w_trunk)[:, :, : topology.encoder_hidden]
    da_enc = dh * (1.0 - h**2)
    g.b_enc[...] = da_enc.sum(axis=(0, 1))
    g.w_enc[...] = np.einsum("bth,bte->he", da_enc, e)
    de = da_enc @ w.w_enc
    np.add.at(g.emb, tokens.reshape(-1), de.reshape(-1, topology.embed_dim))
    # padded positions carry zero upstream gradient, so the scatter above
    # adds exact zeros for them; no masking needed
    return loss, grad


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, n_params: int, lr: float = 0.001, **kwargs) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), lr=lr, **kwargs)


def adam_step(state: AdamState, params: ParameterSet, grad: np.ndarray):
    """Standard Adam with bias correction; returns updated (state, params)."""
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient entries")
    t = state.step + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1 - state.beta2) * grad**2
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new_values = params.values - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.epsilon)
    new_params = ParameterSet(new_values, dict(params.segments), params.topology)
    return new_state, new_params


def infer(params: ParameterSet, sample) -> np.ndarray:
    """Post-postnet output of the LBS branch for a single sample."""
    from .samplers import Batch, Provenance

    _, post = forward(params, Batch([sample], Provenance.LBS), Head.LBS)
    return post[0]


def finite_diff_check(params: ParameterSet, batch, head: Head, eps: float = 1e-5) -> float:
    """Max relative error of the analytic gradient vs central differences."""
    if eps <= 0:
        raise UsageError("eps must be positive")
    _, grad = loss_and_grad(params, batch, head)
    worst = 0.0
    values = params.values
    for i in range(len(values)):
        orig = values[i]
        values[i] = orig + eps
        up, _ = loss_and_grad(params, batch, head)
        values[i] = orig - eps
        down, _ = loss_and_grad(params, batch, head)
        values[i] = orig
        fd = (up.total - down.total) / (2 * eps)
        err = abs(grad[i] - fd) / max(1.0, abs(fd))
        worst = max(worst, err)
    return worst
