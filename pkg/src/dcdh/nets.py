"""Small fully connected encoders with hand-derived backpropagation.

Four networks share this machinery: a visual encoder (features -> k code
units), a label encoder (labels -> k), a fusion net acting on the flattened
outer product of the two embeddings (k*k -> k), and a linear classification
head (k -> c). Embeddings are stored bits-by-samples (k x n), so samples are
columns everywhere below.

Every gradient used in training is validated against central finite
differences via :func:`grad_check`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Largest float64 strictly below 1; tanh outputs are clipped here so that
# activated embeddings stay strictly inside (-1, 1) even under saturation.
SAT = float(np.nextafter(1.0, 0.0))

ACTIVATIONS = ("identity", "tanh")


@dataclass
class MlpParams:
    """Weights/biases of one encoder; weights[i] is (out_dim, in_dim)."""

    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must align")
        if not self.weights:
            raise ValueError("need at least one layer")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ValueError("layer %d: unknown activation %r" % (i, act))
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError("layer %d: weight/bias shapes inconsistent" % i)
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError("layer %d: input dim %d != previous output %d"
                                 % (i, w.shape[1], self.weights[i - 1].shape[0]))
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("layer %d: non-finite parameters" % i)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


@dataclass
class ForwardCache:
    """Per-layer inputs and post-activation outputs from one forward pass."""

    inputs: list
    outputs: list


@dataclass
class EmbeddingMatrix:
    """Relaxed codes, k bit rows x n sample columns."""

    u: np.ndarray
    activated: bool

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.ndim != 2:
            raise ValueError("embedding must be a k x n matrix")
        if self.activated and not np.all(np.abs(self.u) < 1.0):
            raise ValueError("activated embedding has entries outside (-1, 1)")

    @property
    def k(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.u.shape[1]


@dataclass
class FusionCache:
    """Forward state of the fusion net plus the embeddings it consumed."""

    mlp: ForwardCache
    u_v: np.ndarray
    u_l: np.ndarray


def init_mlp(dims, activations, rng) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    if len(dims) != len(activations) + 1:
        raise ValueError("dims must have one more entry than activations")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, list(activations))


def mlp_forward(x: np.ndarray, params: MlpParams):
    """Run the net on column-sample input (in_dim x n); returns (out, cache)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != params.in_dim:
        raise ValueError("input dim %s incompatible with first layer (%d)"
                         % (a.shape, params.in_dim))
    inputs, outputs = [], []
    for w, b, act in zip(params.weights, params.biases, params.activations):
        inputs.append(a)
        z = w @ a + b[:, None]
        a = np.clip(np.tanh(z), -SAT, SAT) if act == "tanh" else z
        outputs.append(a)
    if not np.all(np.isfinite(a)):
        raise FloatingPointError("non-finite network output")
    return a, ForwardCache(inputs, outputs)


def mlp_backward(d_out: np.ndarray, params: MlpParams, cache: ForwardCache):
    """Backpropagate d(loss)/d(output); returns (per-layer grads, d_input).

    Grads come back as a list of (dW, db) tuples aligned with the layers.
    """
    d = np.asarray(d_out, dtype=np.float64)
    grads = [None] * params.n_layers
    for i in range(params.n_layers - 1, -1, -1):
        if params.activations[i] == "tanh":
            a = cache.outputs[i]
            d = d * (1.0 - a * a)
        grads[i] = (d @ cache.inputs[i].T, d.sum(axis=1))
        d = params.weights[i].T @ d
    return grads, d


def visual_forward(x: np.ndarray, params: MlpParams):
    """Encode row-sample features (n x d) to an activated k x n embedding."""
    if params.activations[-1] != "tanh":
        raise ValueError("visual encoder must end in tanh")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError("feature dim %s does not match encoder input %d"
                         % (x.shape, params.in_dim))
    out, cache = mlp_forward(x.T, params)
    return EmbeddingMatrix(out, activated=True), cache


def label_forward(labels: np.ndarray, params: MlpParams):
    """Encode row-sample labels (n x c) to an activated k x n embedding."""
    if params.activations[-1] != "tanh":
        raise ValueError("label encoder must end in tanh")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2 or labels.shape[1] != params.in_dim:
        raise ValueError("label dim %s does not match encoder input %d"
                         % (labels.shape, params.in_dim))
    out, cache = mlp_forward(labels.T, params)
    return EmbeddingMatrix(out, activated=True), cache


def outer_fuse(u_v: np.ndarray, u_l: np.ndarray) -> np.ndarray:
    """Rank-1 interaction matrix of two k-vectors: out[a, b] = u_v[a]*u_l[b]."""
    u_v = np.asarray(u_v, dtype=np.float64)
    u_l = np.asarray(u_l, dtype=np.float64)
    if u_v.ndim != 1 or u_l.ndim != 1 or u_v.shape != u_l.shape:
        raise ValueError("outer_fuse needs two equal-length vectors")
    return np.outer(u_v, u_l)


def fusion_forward(u_v: EmbeddingMatrix, u_l: EmbeddingMatrix, params: MlpParams):
    """Fuse two activated embeddings through their per-sample outer product.

    For each sample column, the k x k outer product is flattened row-major to
    a k^2 vector and pushed through the fusion net; the output is again an
    activated k x n embedding.
    """
    if not (u_v.activated and u_l.activated):
        raise ValueError("fusion inputs must be activated embeddings")
    if u_v.u.shape != u_l.u.shape:
        raise ValueError("fusion inputs must share the same k x n shape")
    k, n = u_v.u.shape
    if params.in_dim != k * k:
        raise ValueError("fusion net expects input width %d, got k^2=%d"
                         % (params.in_dim, k * k))
    if params.activations[-1] != "tanh":
        raise ValueError("fusion net must end in tanh")
    fused_in = (u_v.u[:, None, :] * u_l.u[None, :, :]).reshape(k * k, n)
    out, cache = mlp_forward(fused_in, params)
    return EmbeddingMatrix(out, activated=True), FusionCache(cache, u_v.u, u_l.u)


def fusion_backward(d_out: np.ndarray, params: MlpParams, cache: FusionCache):
    """Backprop through the fusion net and the bilinear outer product.

    Returns (per-layer grads for the fusion net, d_u_v, d_u_l).
    """
    grads, d_in = mlp_backward(d_out, params, cache.mlp)
    k, n = cache.u_v.shape
    d3 = d_in.reshape(k, k, n)
    d_u_v = np.einsum("abi,bi->ai", d3, cache.u_l)
    d_u_l = np.einsum("abi,ai->bi", d3, cache.u_v)
    return grads, d_u_v, d_u_l


def softmax_columns(logits: np.ndarray) -> np.ndarray:
    """Column-wise softmax with max subtraction for stability."""
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def classify(u: EmbeddingMatrix, params: MlpParams) -> np.ndarray:
    """Class probabilities (n x c) from an embedding via the linear head."""
    if params.in_dim != u.k:
        raise ValueError("classifier expects input width %d, embedding has k=%d"
                         % (params.in_dim, u.k))
    logits, _ = mlp_forward(u.u, params)
    return softmax_columns(logits).T


def zeros_like_grads(params: MlpParams):
    return [(np.zeros_like(w), np.zeros_like(b))
            for w, b in zip(params.weights, params.biases)]


def add_scaled_grads(params: MlpParams, grads, scale: float) -> None:
    """In-place params += scale * grads (the SGD update with scale=-lr)."""
    for (w, b), (dw, db) in zip(zip(params.weights, params.biases), grads):
        w += scale * dw
        b += scale * db


def grad_check(f, params: MlpParams, eps: float = 1e-5, tol: float = 1e-4):
    """Compare analytic gradients of f against central finite differences.

    f maps MlpParams to (scalar value, per-layer (dW, db) grads). Returns
    (max relative error, passed) where the error is
    |analytic - central| / max(1, |central|) maximized over all parameters.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    value, grads = f(params)
    if not np.isfinite(value):
        raise FloatingPointError("non-finite objective value")
    max_err = 0.0
    work = params.copy()

    def central(arr, idx):
        orig = arr[idx]
        arr[idx] = orig + eps
        hi = f(work)[0]
        arr[idx] = orig - eps
        lo = f(work)[0]
        arr[idx] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError("non-finite objective during perturbation")
        return (hi - lo) / (2.0 * eps)

    for layer in range(params.n_layers):
        dw, db = grads[layer]
        w = work.weights[layer]
        for idx in np.ndindex(w.shape):
            fd = central(w, idx)
            err = abs(dw[idx] - fd) / max(1.0, abs(fd))
            max_err = max(max_err, err)
        b = work.biases[layer]
        for idx in np.ndindex(b.shape):
            fd = central(b, idx)
            err = abs(db[idx] - fd) / max(1.0, abs(fd))
            max_err = max(max_err, err)
    return max_err, max_err < tol
