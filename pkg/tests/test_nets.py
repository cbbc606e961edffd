import numpy as np
import pytest

from dcdh.losses import HyperParams
from dcdh.nets import (
    EmbeddingMatrix,
    MlpParams,
    classify,
    fusion_forward,
    grad_check,
    init_mlp,
    label_forward,
    mlp_forward,
    outer_fuse,
    softmax_columns,
    visual_forward,
)
from gradcheck_utils import (
    fused_path_checker,
    stream_through_label,
    stream_through_visual,
)


def small_setup(seed, n=5, d=3, c=3, k=2):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    labels = np.zeros((n, c), dtype=np.int64)
    labels[np.arange(n), rng.integers(0, c, n)] = 1
    b = np.where(rng.random((k, n)) < 0.5, 1.0, -1.0)
    s = np.where((labels @ labels.T) > 0, 1.0, -1.0)
    hp = HyperParams(k=k)
    return rng, x, labels, b, s, hp


def make_nets(rng, d, c, k, vh=4, lh=4):
    tv = init_mlp([d, vh, k], ["tanh", "tanh"], rng)
    tl = init_mlp([c, lh, k], ["tanh", "tanh"], rng)
    tf = init_mlp([k * k, k], ["tanh"], rng)
    tc = init_mlp([k, c], ["identity"], rng)
    return tv, tl, tf, tc


# ------------------------------------------------------------------ forwards

def test_zero_params_give_zero_embedding():
    theta = MlpParams([np.zeros((4, 3)), np.zeros((2, 4))],
                      [np.zeros(4), np.zeros(2)], ["tanh", "tanh"])
    u, _ = visual_forward(np.ones((6, 3)), theta)
    assert np.all(u.u == 0.0)
    assert u.activated


def test_tanh_saturation_stays_strictly_inside():
    theta = MlpParams([np.eye(3)], [np.zeros(3)], ["tanh"])
    u, _ = visual_forward(np.array([[50.0, -50.0, 1000.0]]), theta)
    assert np.all(np.abs(u.u) < 1.0)
    assert np.all(np.abs(u.u) > 1.0 - 1e-12)


def test_forward_deterministic():
    rng = np.random.default_rng(4)
    theta = init_mlp([3, 5, 2], ["tanh", "tanh"], rng)
    x = rng.normal(size=(7, 3))
    a, _ = visual_forward(x, theta)
    b, _ = visual_forward(x, theta)
    assert np.array_equal(a.u, b.u)


def test_activated_embeddings_inside_unit_box():
    rng = np.random.default_rng(5)
    for _ in range(10):
        theta = init_mlp([4, 6, 3], ["tanh", "tanh"], rng)
        u, _ = visual_forward(rng.normal(scale=5.0, size=(8, 4)), theta)
        assert np.all(np.abs(u.u) < 1.0)


def test_visual_forward_rejects_wrong_dim():
    rng = np.random.default_rng(6)
    theta = init_mlp([3, 4, 2], ["tanh", "tanh"], rng)
    with pytest.raises(ValueError):
        visual_forward(np.zeros((5, 4)), theta)


def test_label_forward_same_rows_same_columns():
    rng = np.random.default_rng(7)
    theta = init_mlp([3, 4, 2], ["tanh", "tanh"], rng)
    labels = np.array([[1, 0, 1], [0, 1, 0], [1, 0, 1]], dtype=float)
    u, _ = label_forward(labels, theta)
    assert np.array_equal(u.u[:, 0], u.u[:, 2])


def test_init_mlp_bounds():
    rng = np.random.default_rng(8)
    theta = init_mlp([9, 4], ["tanh"], rng)
    assert np.all(np.abs(theta.weights[0]) <= 1.0 / 3.0)
    assert np.all(theta.biases[0] == 0.0)


# ---------------------------------------------------------------- outer fuse

def test_outer_fuse_basis_vectors():
    out = outer_fuse(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert np.array_equal(out, [[0.0, 1.0], [0.0, 0.0]])


def test_outer_fuse_ones_copies_columns():
    u_v = np.array([0.3, -0.7, 0.1])
    out = outer_fuse(u_v, np.ones(3))
    for col in range(3):
        assert np.array_equal(out[:, col], u_v)


def test_outer_fuse_matches_double_loop():
    rng = np.random.default_rng(9)
    u_v, u_l = rng.normal(size=5), rng.normal(size=5)
    out = outer_fuse(u_v, u_l)
    for a in range(5):
        for b in range(5):
            assert out[a, b] == u_v[a] * u_l[b]


def test_outer_fuse_length_mismatch():
    with pytest.raises(ValueError):
        outer_fuse(np.zeros(2), np.zeros(3))


# -------------------------------------------------------------------- fusion

def test_fusion_zero_visual_ignores_label_stream():
    rng = np.random.default_rng(10)
    k, n = 3, 4
    tf = init_mlp([k * k, k], ["tanh"], rng)
    u_zero = EmbeddingMatrix(np.zeros((k, n)), activated=True)
    u_a = EmbeddingMatrix(rng.uniform(-0.9, 0.9, (k, n)), activated=True)
    u_b = EmbeddingMatrix(rng.uniform(-0.9, 0.9, (k, n)), activated=True)
    out_a, _ = fusion_forward(u_zero, u_a, tf)
    out_b, _ = fusion_forward(u_zero, u_b, tf)
    assert np.array_equal(out_a.u, out_b.u)
    # bias path only
    expected = np.tanh(tf.biases[0])[:, None] * np.ones((1, n))
    assert np.allclose(out_a.u, expected)


def test_fusion_k1_degenerates_to_scalar_product_net():
    rng = np.random.default_rng(11)
    tf = init_mlp([1, 1], ["tanh"], rng)
    u_v = EmbeddingMatrix(rng.uniform(-0.9, 0.9, (1, 6)), activated=True)
    u_l = EmbeddingMatrix(rng.uniform(-0.9, 0.9, (1, 6)), activated=True)
    fused, _ = fusion_forward(u_v, u_l, tf)
    direct, _ = mlp_forward(u_v.u * u_l.u, tf)
    assert np.array_equal(fused.u, direct)


def test_fusion_requires_activated_inputs():
    rng = np.random.default_rng(12)
    tf = init_mlp([4, 2], ["tanh"], rng)
    raw = EmbeddingMatrix(rng.normal(size=(2, 3)), activated=False)
    act = EmbeddingMatrix(rng.uniform(-0.9, 0.9, (2, 3)), activated=True)
    with pytest.raises(ValueError):
        fusion_forward(raw, act, tf)


# ------------------------------------------------------------------ classify

def test_classify_zero_logits_uniform():
    theta = MlpParams([np.zeros((3, 2))], [np.zeros(3)], ["identity"])
    u = EmbeddingMatrix(np.full((2, 4), 0.5), activated=True)
    p = classify(u, theta)
    assert np.allclose(p, 1.0 / 3.0)


def test_softmax_extreme_logits_no_overflow():
    p = softmax_columns(np.array([[1e6], [0.0]]))
    assert np.isfinite(p).all()
    assert p[0, 0] == pytest.approx(1.0)
    assert p[1, 0] == pytest.approx(0.0, abs=1e-300)


def test_classify_rows_sum_to_one():
    rng = np.random.default_rng(13)
    theta = init_mlp([3, 5], ["identity"], rng)
    u = EmbeddingMatrix(rng.uniform(-0.9, 0.9, (3, 20)), activated=True)
    p = classify(u, theta)
    # direct summation oracle
    for i in range(p.shape[0]):
        assert abs(sum(float(v) for v in p[i]) - 1.0) < 1e-12


# ---------------------------------------------------------------- grad_check

def test_grad_check_quadratic_is_exact():
    theta = MlpParams([np.array([[0.7]])], [np.array([0.3])], ["identity"])

    def f(params):
        w = params.weights[0][0, 0]
        b = params.biases[0][0]
        return w * w + 2.0 * b * b, [(np.array([[2.0 * w]]), np.array([4.0 * b]))]

    err, ok = grad_check(f, theta, eps=1e-5, tol=1e-4)
    assert ok
    assert err < 1e-10


def test_grad_check_detects_corrupted_gradient():
    rng, x, labels, b, s, hp = small_setup(14)
    tv = init_mlp([3, 4, 2], ["tanh", "tanh"], rng)
    honest = stream_through_visual(x, b, s, hp)

    def corrupted(params):
        val, grads = honest(params)
        return val, [(dw * 1.01, db * 1.01) for dw, db in grads]

    err, ok = grad_check(corrupted, tv, eps=1e-5, tol=1e-4)
    assert not ok
    assert err > 1e-4


def test_visual_gradient_matches_finite_differences():
    for seed in range(5):
        rng, x, labels, b, s, hp = small_setup(seed)
        tv = init_mlp([3, 4, 2], ["tanh", "tanh"], rng)
        err, ok = grad_check(stream_through_visual(x, b, s, hp), tv)
        assert ok, "seed %d: max rel err %g" % (seed, err)


def test_label_gradient_matches_finite_differences():
    for seed in range(5):
        rng, x, labels, b, s, hp = small_setup(seed)
        tl = init_mlp([3, 4, 2], ["tanh", "tanh"], rng)
        err, ok = grad_check(stream_through_label(labels, b, s, hp), tl)
        assert ok, "seed %d: max rel err %g" % (seed, err)


def test_fused_path_gradients_match_finite_differences():
    # the bilinear fusion is the hardest gradient: check every parameter set
    for seed in range(3):
        rng, x, labels, b, s, hp = small_setup(seed, n=4)
        tv, tl, tf, tc = make_nets(rng, 3, 3, 2)
        for which in ("v", "l", "f", "c"):
            f = fused_path_checker(x, labels, b, s, hp, tv, tl, tf, tc, which)
            err, ok = grad_check(f, {"v": tv, "l": tl, "f": tf, "c": tc}[which])
            assert ok, "seed %d net %s: max rel err %g" % (seed, which, err)
