import numpy as np
import pytest

from presstyle.errors import GraphError, ShapeError
from presstyle.numerics import (
    BatchNormState,
    OpGraph,
    Tensor,
    backward,
    batch_norm,
    check_gradients,
    concat,
    content_loss,
    conv2d,
    conv2d_transpose,
    cross_entropy,
    dense,
    max_pool2d,
    max_unpool2d,
    relu,
)

TOL = 1e-4


def _probe(rng, shape):
    """Fixed random projection so each check sees a generic scalar loss."""
    return rng.normal(size=shape)


def test_linear_case_bias_grad():
    x = Tensor(np.arange(12.0).reshape(4, 3))
    w = Tensor(np.ones((3, 2)), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    backward(dense(x, w, b).sum())
    np.testing.assert_array_equal(b.grad, [4.0, 4.0])


def test_relu_passes_positive_gradient():
    x = Tensor(np.array([0.5, 2.0, 3.0]), requires_grad=True)
    (relu(x) * np.array([1.0, -2.0, 7.0])).sum().backward()
    np.testing.assert_array_equal(x.grad, [1.0, -2.0, 7.0])


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_loss_without_params_rejected():
    with pytest.raises(GraphError):
        backward(Tensor(np.ones(3)).sum())


def test_graph_is_topological():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    w = Tensor(np.ones((3, 3)), requires_grad=True)
    h = relu(dense(x, w))
    loss = (dense(h, w) + h).sum()
    g = OpGraph.from_output(loss)
    pos = {id(n): i for i, n in enumerate(g.nodes)}
    for n in g.nodes:
        for p in n.parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(n)]
    assert g.nodes[-1] is loss


def test_shared_parameter_accumulates():
    w = Tensor(np.array([2.0]), requires_grad=True)
    ((w * 3.0) + (w * 4.0)).sum().backward()
    np.testing.assert_allclose(w.grad, [7.0])


def _trials(n):
    return [np.random.default_rng(1000 + i) for i in range(n)]


@pytest.mark.parametrize("rng", _trials(100), ids=lambda r: "")
def test_conv2d_gradients(rng):
    cin, cout = rng.integers(1, 3, endpoint=True), rng.integers(1, 3, endpoint=True)
    h, w = rng.integers(3, 6, endpoint=True), rng.integers(3, 6, endpoint=True)
    k = int(rng.integers(1, 3, endpoint=True))
    stride, pad = int(rng.integers(1, 2, endpoint=True)), int(rng.integers(0, 1, endpoint=True))
    x = rng.normal(size=(2, cin, h, w))
    kern = rng.normal(size=(cout, cin, k, k))
    b = rng.normal(size=cout)
    out_shape = conv2d(x, kern, b, stride, pad).shape
    probe = _probe(rng, out_shape)
    errs = check_gradients(lambda x, k, b: (conv2d(x, k, b, stride, pad) * probe).sum(), [x, kern, b])
    assert max(errs) < TOL


@pytest.mark.parametrize("rng", _trials(100), ids=lambda r: "")
def test_conv2d_transpose_gradients(rng):
    cin, cout = rng.integers(1, 3, endpoint=True), rng.integers(1, 3, endpoint=True)
    h, w = rng.integers(2, 4, endpoint=True), rng.integers(2, 4, endpoint=True)
    k = int(rng.integers(1, 3, endpoint=True))
    stride = int(rng.integers(1, 2, endpoint=True))
    x = rng.normal(size=(2, cin, h, w))
    kern = rng.normal(size=(cin, cout, k, k))
    b = rng.normal(size=cout)
    probe = _probe(rng, conv2d_transpose(x, kern, b, stride).shape)
    errs = check_gradients(lambda x, k, b: (conv2d_transpose(x, k, b, stride) * probe).sum(), [x, kern, b])
    assert max(errs) < TOL


@pytest.mark.parametrize("rng", _trials(100), ids=lambda r: "")
def test_pool_unpool_path_gradients(rng):
    h, w = rng.integers(2, 7, endpoint=True), rng.integers(2, 7, endpoint=True)
    x = rng.normal(size=(2, 2, h, w))
    _, rec = max_pool2d(x)
    probe = _probe(rng, x.shape)

    def loss(x):
        # pool -> scale -> unpool with the pool's own record
        p, r = max_pool2d(x)
        return (max_unpool2d(p * 1.5, r) * probe).sum()

    assert check_gradients(loss, [x])[0] < TOL


@pytest.mark.parametrize("rng", _trials(100), ids=lambda r: "")
def test_batch_norm_gradients(rng):
    c = int(rng.integers(1, 3, endpoint=True))
    x = rng.normal(size=(3, c, 3, 2)) * rng.uniform(0.5, 3)
    gamma, beta = rng.normal(size=c), rng.normal(size=c)
    train = bool(rng.integers(0, 1, endpoint=True))
    probe = _probe(rng, x.shape)
    st = BatchNormState(rng.normal(size=c), rng.uniform(0.5, 2, size=c))

    def loss(x, g, b):
        s = BatchNormState(st.running_mean.copy(), st.running_var.copy())
        return (batch_norm(x, g, b, s, train=train) * probe).sum()

    assert max(check_gradients(loss, [x, gamma, beta])) < TOL


@pytest.mark.parametrize("rng", _trials(100), ids=lambda r: "")
def test_dense_relu_concat_gradients(rng):
    n, d1, d2, dout = (int(v) for v in rng.integers(1, 5, size=4, endpoint=True))
    a, b = rng.normal(size=(n, d1)), rng.normal(size=(n, d2))
    w, bias = rng.normal(size=(d1 + d2, dout)), rng.normal(size=dout)
    probe = _probe(rng, (n, dout))
    errs = check_gradients(lambda a, b, w, bias: (relu(dense(concat([a, b]), w, bias)) * probe).sum(), [a, b, w, bias])
    assert max(errs) < TOL


@pytest.mark.parametrize("rng", _trials(100), ids=lambda r: "")
def test_content_loss_gradients(rng):
    g, t = rng.normal(size=(2, 3, 4, 3)), rng.normal(size=(2, 3, 4, 3))
    assert max(check_gradients(lambda g, t: content_loss(g, t), [g, t])) < TOL


@pytest.mark.parametrize("rng", _trials(20), ids=lambda r: "")
def test_cross_entropy_gradients(rng):
    z = rng.normal(size=(5, 3))
    labels = rng.integers(0, 3, size=5)
    assert check_gradients(lambda z: cross_entropy(z, labels), [z])[0] < TOL
