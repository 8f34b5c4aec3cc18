import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from logdense import autodiff as ad


def numeric_grad(f, arr, eps=1e-6):
    g = np.zeros_like(arr)
    flat, gf = arr.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        o = flat[k]
        flat[k] = o + eps
        up = f()
        flat[k] = o - eps
        down = f()
        flat[k] = o
        gf[k] = (up - down) / (2 * eps)
    return g


def check_op(build, *arrays, tol=1e-6):
    """``build(*tensors)`` returns a tensor; compare d(sum(out * probe)) by both routes."""
    rng = np.random.default_rng(0)
    probe = None

    def scalar(tensors):
        nonlocal probe
        out = build(*tensors)
        if probe is None:
            probe = rng.normal(size=out.shape)
        return out, float((out.data * probe).sum())

    tensors = [ad.Tensor(a) for a in arrays]
    out, _ = scalar(tensors)
    # reverse mode on <out, probe>
    dot = ad.Tensor(np.array((out.data * probe).sum()), (out,), lambda g: (g * probe,))
    dot.backward()
    for t, a in zip(tensors, arrays):
        num = numeric_grad(lambda: scalar([ad.Tensor(x) for x in arrays])[1], a)
        assert t.grad is not None
        np.testing.assert_allclose(t.grad, num, rtol=tol, atol=tol)


def naive_conv(x, w, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    out[b, oc, i, j] = (xp[b, :, i : i + k, j : j + k] * w[oc]).sum()
    return out


def naive_transposed(x, w):
    """Scatter form: each input pixel stamps the kernel at stride 2."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = (k - 1) // 2
    full = np.zeros((n, o, 2 * h + k, 2 * wd + k))
    flipped = w[:, :, ::-1, ::-1]
    for b in range(n):
        for i in range(h):
            for j in range(wd):
                full[b, :, 2 * i : 2 * i + k, 2 * j : 2 * j + k] += np.einsum("c,ocij->oij", x[b, :, i, j], flipped)
    return full[:, :, p : p + 2 * h, p : p + 2 * wd]


rng = np.random.default_rng(1)


def test_concat_and_split():
    a, b = rng.normal(size=(2, 2, 3, 3)), rng.normal(size=(2, 3, 3, 3))
    check_op(lambda x, y: ad.concat([x, y]), a, b)
    check_op(lambda x: ad.split(x, [1, 4])[1], rng.normal(size=(2, 5, 2, 2)))
    assert ad.concat([ad.Tensor(a)]).data is not None


def test_affine_relu():
    x = rng.normal(size=(2, 3, 4, 4))
    check_op(lambda t, s, b: ad.relu(ad.affine(t, s, b)), x, rng.normal(size=3), rng.normal(size=3) + 0.3)


@pytest.mark.parametrize("k,pad", [(1, 0), (3, 1), (3, 0)])
def test_conv2d_matches_naive_and_fd(k, pad):
    x, w = rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(4, 3, k, k))
    out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), pad=pad)
    np.testing.assert_allclose(out.data, naive_conv(x, w, pad), atol=1e-12)
    check_op(lambda a, b, c: ad.conv2d(a, b, pad=pad, bias=c), x, w, rng.normal(size=4))


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_upconv_doubles_and_matches_scatter(k):
    x, w = rng.normal(size=(1, 2, 3, 3)), rng.normal(size=(3, 2, k, k))
    out = ad.upconv2d(ad.Tensor(x), ad.Tensor(w))
    assert out.shape == (1, 3, 6, 6)
    np.testing.assert_allclose(out.data, naive_transposed(x, w), atol=1e-12)
    check_op(ad.upconv2d, x, w)


def test_pools():
    x = rng.normal(size=(2, 3, 4, 6))
    check_op(ad.avg_pool2, x)
    check_op(ad.global_avg_pool, x)
    with pytest.raises(ValueError):
        ad.avg_pool2(ad.Tensor(rng.normal(size=(1, 1, 3, 4))))


def test_linear():
    check_op(ad.linear, rng.normal(size=(4, 3)), rng.normal(size=(2, 3)), rng.normal(size=2))


def test_cross_entropy_value_and_grad():
    logits = rng.normal(size=(5, 4))
    t = np.array([0, 1, 2, 3, 1])
    out = ad.cross_entropy(ad.Tensor(logits), t)
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    assert float(out.data) == pytest.approx(-np.log(p[np.arange(5), t]).mean())
    check_op(lambda z: ad.cross_entropy(z, t), logits)
    maps = rng.normal(size=(2, 3, 2, 2))
    tm = rng.integers(0, 3, size=(2, 2, 2))
    check_op(lambda z: ad.cross_entropy(z, tm), maps)
    with pytest.raises(ValueError):
        ad.cross_entropy(ad.Tensor(logits), t[:3])


def test_shared_parent_accumulates():
    x = ad.Tensor(np.array([2.0, -1.0]))
    y = ad.weighted_sum([x, x, x], [1.0, 2.0, 0.5])
    s = ad.Tensor(np.array(y.data.sum()), (y,), lambda g: (g * np.ones(2),))
    s.backward()
    np.testing.assert_allclose(x.grad, [3.5, 3.5])


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        ad.Tensor(np.ones(3)).backward()


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4))
def test_linear_toy_identity_network_is_exact(n, cin, cout):
    # with no kinks the FD error should sit at round-off scale
    r = np.random.default_rng(n * 100 + cin * 10 + cout)
    x, w, b = r.normal(size=(n, cin)), r.normal(size=(cout, cin)), r.normal(size=cout)
    check_op(ad.linear, x, w, b, tol=1e-8)
