"""Alternating training: network gradient steps interleaved with code solves.

Each epoch runs seeded minibatch gradient descent on the four networks with
the binary codes fixed, and every dcc_interval epochs re-solves the codes on
full-dataset embeddings. Ablation modes drop streams: mode "v" keeps only
the visual stream (lam = mu = 0), mode "s" keeps visual + label (mu = 0).

Checkpoints carry the four networks plus hyperparameters: magic
``DCDHCKPT``, version u16, then per network the layer count (u64) and per
layer in_dim/out_dim (u64), an activation byte (0 identity, 1 tanh), and
float64 little-endian weights then biases; finally rho, alpha, lam, mu,
gamma_focal as float64 and the code length k as u64. Round trips are
bit-exact.
"""

from __future__ import annotations

import dataclasses
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import dcc
from .dataset import Dataset, build_similarity
from .losses import HyperParams, focal_loss, stream_loss
from .nets import (
    MlpParams,
    add_scaled_grads,
    fusion_backward,
    fusion_forward,
    init_mlp,
    label_forward,
    mlp_backward,
    mlp_forward,
    softmax_columns,
    visual_forward,
)

CKPT_MAGIC = b"DCDHCKPT"
CKPT_VERSION = 1

_ACT_TO_CODE = {"identity": 0, "tanh": 1}
_CODE_TO_ACT = {v: k for k, v in _ACT_TO_CODE.items()}

MODES = ("full", "v", "s")


class TrainingDiverged(FloatingPointError):
    """Non-finite loss or activations; message carries epoch/batch."""


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


@dataclass
class TrainConfig:
    hp: HyperParams
    epochs: int = 30
    batch_size: int = 64
    dcc_interval: int = 1
    learning_rate: float = 1e-2
    seed: int = 0
    visual_hidden: int = 64
    label_hidden: int = 32
    mode: str = "full"
    dcc_max_sweeps: int = dcc.DEFAULT_MAX_SWEEPS
    dcc_tol: float = dcc.DEFAULT_TOL

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.dcc_interval < 1:
            raise ValueError("dcc_interval must be >= 1")
        # lr = 0 is allowed: it freezes the networks so only codes move.
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.mode not in MODES:
            raise ValueError("mode must be one of %s" % (MODES,))
        if self.visual_hidden < 1 or self.label_hidden < 1:
            raise ValueError("hidden sizes must be >= 1")


@dataclass
class EpochStats:
    """Weighted per-epoch loss contributions: total = l1 + l2 + l3."""

    epoch: int
    l1: float
    l2: float
    l3: float
    total: float


@dataclass
class Model:
    theta_v: MlpParams
    theta_l: MlpParams
    theta_f: MlpParams
    theta_c: MlpParams
    hp: HyperParams
    codes: np.ndarray | None = None
    history: list = field(default_factory=list)


def effective_hp(hp: HyperParams, mode: str) -> HyperParams:
    """Hyperparameters with stream weights collapsed per ablation mode."""
    if mode == "v":
        return dataclasses.replace(hp, lam=0.0, mu=0.0)
    if mode == "s":
        return dataclasses.replace(hp, mu=0.0)
    return dataclasses.replace(hp)


def _forward_streams(features, labels, model, need_label, need_fused):
    """Full-dataset embeddings for the active streams (others None)."""
    u_v, cache_v = visual_forward(features, model.theta_v)
    u_l = cache_l = u_f = fcache = None
    if need_label:
        u_l, cache_l = label_forward(labels, model.theta_l)
    if need_fused:
        u_f, fcache = fusion_forward(u_v, u_l, model.theta_f)
    return u_v, cache_v, u_l, cache_l, u_f, fcache


def _loss_snapshot(features, labels, s, b, model, need_label, need_fused):
    """Weighted (l1, l2, l3, total) on the full dataset with codes fixed."""
    hp = model.hp
    u_v, _, u_l, _, u_f, _ = _forward_streams(
        features, labels, model, need_label, need_fused
    )
    l1 = stream_loss(u_v.u, b, s, hp)[0]
    l2w = l3w = 0.0
    if need_label and hp.lam > 0:
        l2w = hp.lam * stream_loss(u_l.u, b, s, hp)[0]
    if need_fused:
        logits, _ = mlp_forward(u_f.u, model.theta_c)
        p = softmax_columns(logits).T
        l3w = hp.mu * (stream_loss(u_f.u, b, s, hp)[0]
                       + focal_loss(p, labels, hp.gamma_focal)[0])
    return l1, l2w, l3w, l1 + l2w + l3w


def _batch_step(x, labels_b, b_b, s_bb, model, need_label, need_fused):
    """Loss and parameter gradients for one minibatch, codes fixed."""
    hp = model.hp
    u_v, cache_v = visual_forward(x, model.theta_v)
    l1, d_uv = stream_loss(u_v.u, b_b, s_bb, hp)
    total = l1
    grads = {}
    d_ul = None
    if need_label:
        u_l, cache_l = label_forward(labels_b, model.theta_l)
        l2, d_ul_stream = stream_loss(u_l.u, b_b, s_bb, hp)
        total += hp.lam * l2
        d_ul = hp.lam * d_ul_stream
    if need_fused:
        u_f, fcache = fusion_forward(u_v, u_l, model.theta_f)
        l3, d_uf = stream_loss(u_f.u, b_b, s_bb, hp)
        logits, cache_c = mlp_forward(u_f.u, model.theta_c)
        p = softmax_columns(logits).T
        lf, d_logits = focal_loss(p, labels_b, hp.gamma_focal)
        total += hp.mu * (l3 + lf)
        grads["c"], d_uf_cls = mlp_backward(hp.mu * d_logits.T, model.theta_c, cache_c)
        grads["f"], d_uv_fuse, d_ul_fuse = fusion_backward(
            hp.mu * d_uf + d_uf_cls, model.theta_f, fcache
        )
        d_uv = d_uv + d_uv_fuse
        d_ul = d_ul + d_ul_fuse
    grads["v"], _ = mlp_backward(d_uv, model.theta_v, cache_v)
    if need_label:
        grads["l"], _ = mlp_backward(d_ul, model.theta_l, cache_l)
    if not np.isfinite(total):
        raise FloatingPointError("non-finite batch loss")
    return total, grads


def train(dataset: Dataset, cfg: TrainConfig) -> Model:
    """Run the alternating optimization and return the trained model.

    Deterministic for a fixed seed: initialization, batch shuffles and code
    solves all draw from one seeded generator.
    """
    if cfg.batch_size > dataset.n:
        raise ValueError("batch_size %d exceeds n=%d" % (cfg.batch_size, dataset.n))
    hp = effective_hp(cfg.hp, cfg.mode)
    need_label = hp.lam > 0 or hp.mu > 0
    need_fused = hp.mu > 0
    k, d, c = hp.k, dataset.d, dataset.c

    rng = np.random.default_rng(cfg.seed)
    model = Model(
        theta_v=init_mlp([d, cfg.visual_hidden, k], ["tanh", "tanh"], rng),
        theta_l=init_mlp([c, cfg.label_hidden, k], ["tanh", "tanh"], rng),
        theta_f=init_mlp([k * k, k], ["tanh"], rng),
        theta_c=init_mlp([k, c], ["identity"], rng),
        hp=hp,
    )

    features, labels = dataset.features, dataset.labels
    n = dataset.n
    s = build_similarity(labels)

    u_v, _, u_l, _, u_f, _ = _forward_streams(features, labels, model,
                                              need_label, need_fused)
    warm = u_v.u.copy()
    if need_label:
        warm += hp.lam * u_l.u
    if need_fused:
        warm += hp.mu * u_f.u
    b = np.where(warm >= 0.0, 1.0, -1.0)

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            try:
                _, grads = _batch_step(
                    features[idx], labels[idx], b[:, idx],
                    s[np.ix_(idx, idx)], model, need_label, need_fused,
                )
            except FloatingPointError as exc:
                raise TrainingDiverged(
                    "diverged at epoch %d, batch %d: %s"
                    % (epoch, start // cfg.batch_size, exc)
                ) from exc
            if cfg.learning_rate > 0:
                add_scaled_grads(model.theta_v, grads["v"], -cfg.learning_rate)
                if need_label:
                    add_scaled_grads(model.theta_l, grads["l"], -cfg.learning_rate)
                if need_fused:
                    add_scaled_grads(model.theta_f, grads["f"], -cfg.learning_rate)
                    add_scaled_grads(model.theta_c, grads["c"], -cfg.learning_rate)

        if (epoch + 1) % cfg.dcc_interval == 0:
            u_v, _, u_l, _, u_f, _ = _forward_streams(
                features, labels, model, need_label, need_fused
            )
            incumbent = _loss_snapshot(features, labels, s, b, model,
                                       need_label, need_fused)
            candidate = dcc.solve_b(
                u_v.u,
                u_l.u if need_label and hp.lam > 0 else None,
                u_f.u if need_fused else None,
                s, hp, max_sweeps=cfg.dcc_max_sweeps, tol=cfg.dcc_tol,
            )
            solved = _loss_snapshot(features, labels, s, candidate, model,
                                    need_label, need_fused)
            # The solve restarts from a sign warm start, so after large
            # network moves it can settle above the incumbent codes; keep
            # whichever descends the joint objective (ties take the solve).
            if solved[3] <= incumbent[3]:
                b = candidate
                l1, l2w, l3w, total = solved
            else:
                l1, l2w, l3w, total = incumbent
        else:
            l1, l2w, l3w, total = _loss_snapshot(
                features, labels, s, b, model, need_label, need_fused
            )
        model.history.append(EpochStats(epoch, l1, l2w, l3w, total))

    model.codes = b
    return model


def encode(x_new: np.ndarray, model: Model) -> np.ndarray:
    """Out-of-sample codes sgn(visual embedding), sgn(0) = +1; k x m."""
    u, _ = visual_forward(np.asarray(x_new, dtype=np.float64), model.theta_v)
    return np.where(u.u >= 0.0, 1.0, -1.0)


def _pack_net(params: MlpParams) -> bytes:
    chunks = [struct.pack("<Q", params.n_layers)]
    for w, bias, act in zip(params.weights, params.biases, params.activations):
        chunks.append(struct.pack("<QQB", w.shape[1], w.shape[0], _ACT_TO_CODE[act]))
        chunks.append(w.astype("<f8").tobytes())
        chunks.append(bias.astype("<f8").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, raw: bytes, path: str):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.off + size > len(self.raw):
            raise CheckpointError("truncated checkpoint %s" % self.path)
        out = self.raw[self.off:self.off + size]
        self.off += size
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_net(r: _Reader) -> MlpParams:
    (n_layers,) = r.unpack("<Q")
    if n_layers == 0 or n_layers > 64:
        raise CheckpointError("implausible layer count %d in %s" % (n_layers, r.path))
    weights, biases, acts = [], [], []
    for _ in range(n_layers):
        in_dim, out_dim, act_code = r.unpack("<QQB")
        if act_code not in _CODE_TO_ACT:
            raise CheckpointError("unknown activation code %d in %s" % (act_code, r.path))
        w = np.frombuffer(r.take(in_dim * out_dim * 8), dtype="<f8")
        weights.append(w.reshape(out_dim, in_dim).copy())
        biases.append(np.frombuffer(r.take(out_dim * 8), dtype="<f8").copy())
        acts.append(_CODE_TO_ACT[act_code])
    return MlpParams(weights, biases, acts)


def save_model(model: Model, path: str) -> None:
    """Write a checkpoint atomically (temp file then rename)."""
    payload = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION)]
    for net in (model.theta_v, model.theta_l, model.theta_f, model.theta_c):
        payload.append(_pack_net(net))
    hp = model.hp
    payload.append(struct.pack("<ddddd", hp.rho, hp.alpha, hp.lam, hp.mu,
                               hp.gamma_focal))
    payload.append(struct.pack("<Q", hp.k))
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(payload))
    os.replace(tmp, path)


def load_model(path: str) -> Model:
    """Read a checkpoint; codes and history are not part of the file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    r = _Reader(raw, path)
    if r.take(8) != CKPT_MAGIC:
        raise CheckpointError("bad magic in %s" % path)
    (version,) = r.unpack("<H")
    if version != CKPT_VERSION:
        raise CheckpointError("unsupported checkpoint version %d in %s" % (version, path))
    nets = [_read_net(r) for _ in range(4)]
    rho, alpha, lam, mu, gamma_focal = r.unpack("<ddddd")
    (k,) = r.unpack("<Q")
    if r.off != len(raw):
        raise CheckpointError("trailing bytes in %s" % path)
    hp = HyperParams(k=k, rho=rho, alpha=alpha, lam=lam, mu=mu,
                     gamma_focal=gamma_focal)
    return Model(*nets, hp=hp)
