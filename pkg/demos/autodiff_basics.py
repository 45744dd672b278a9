"""Tour of the reverse-mode engine: tapes, gradients, sparse ops, Adam.

Run from the repository root:

    python3 demos/autodiff_basics.py
"""

import numpy as np

from nodenas import (Adam, SparseMatrix, Tape, Tensor, backward_all,
                     dense_matmul, grad_check, sparse_dense_matmul)
from nodenas import autodiff as ad


def hand_checked_gradient():
    # f(w) = sum(relu(x @ w)); gradient by hand is x^T @ (x@w > 0)
    x = Tensor(np.array([[1.0, -2.0], [0.5, 3.0], [-1.0, 1.0]]))
    w = Tensor(np.array([[2.0], [-1.0]]), requires_grad=True)
    with Tape() as tape:
        y = ad.relu(dense_matmul(x, w))
        loss = ad.sum_all(y)
    backward_all(loss, tape)

    pre = x.values @ w.values
    expected = x.values.T @ (pre > 0).astype(float)
    print("loss                 ", loss.values.item())
    print("autodiff dL/dw       ", w.grad.ravel())
    print("hand     dL/dw       ", expected.ravel())
    assert np.allclose(w.grad, expected)


def sparse_message_passing():
    # A 4-node path graph; gradients flow into both the features and the
    # per-edge weights stored on the CSR matrix.
    rows = np.array([0, 1, 1, 2, 2, 3])
    cols = np.array([1, 0, 2, 1, 3, 2])
    vals = Tensor(np.ones((6, 1)), requires_grad=True)
    adj = SparseMatrix.from_edges((4, 4), rows, cols).with_values(vals)
    x = Tensor(np.arange(8.0).reshape(4, 2), requires_grad=True)

    with Tape() as tape:
        m = sparse_dense_matmul(adj, x)
        loss = ad.sum_all(ad.mul(m, m))
    backward_all(loss, tape)
    print("d loss / d features  ", np.round(x.grad.ravel(), 2))
    print("d loss / d edge w    ", np.round(vals.grad.ravel(), 2))

    # numerical cross-check of everything at once
    def f():
        m = sparse_dense_matmul(adj, x)
        return ad.sum_all(ad.mul(m, m))

    worst = grad_check(f, [x, vals])
    print("grad_check rel error  %.2e" % worst)
    assert worst < 1e-4


def adam_on_a_quadratic():
    w = Tensor(np.array([[5.0], [-3.0]]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    for step in range(200):
        with Tape() as tape:
            loss = ad.sum_all(ad.mul(w, w))
        w.grad = None
        backward_all(loss, tape)
        opt.step()
    print("after 200 Adam steps  w =", np.round(w.values.ravel(), 5))
    assert np.abs(w.values).max() < 1e-3


if __name__ == "__main__":
    hand_checked_gradient()
    print()
    sparse_message_passing()
    print()
    adam_on_a_quadratic()
