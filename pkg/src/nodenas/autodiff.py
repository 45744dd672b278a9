"""Reverse-mode automatic differentiation over dense matrices and CSR sparse matrices.

Everything is float64 and two-dimensional: a Tensor is an (rows, cols) matrix,
a SparseMatrix is a CSR matrix whose per-edge values live in an (nnz, 1) Tensor
so gradients can flow into learned edge weights. Operations executed while a
Tape is active record a backward rule; backward_all replays the tape in reverse
and accumulates gradients in fixed tape order, which keeps runs bit-reproducible
for a given seed.

Every op output is checked for NaN/Inf at the op boundary.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse
from scipy.special import expit


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ParameterError(ValueError):
    """An operation parameter (temperature, probability, ...) is out of range."""


class NumericsError(ArithmeticError):
    """A non-finite value appeared at an op boundary."""


class TapeError(RuntimeError):
    """Tape misuse: reuse after backward, or a loss foreign to the tape."""


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# Tensor and Tape
# ---------------------------------------------------------------------------

class Tensor:
    """Dense (rows, cols) float64 matrix with an optional gradient accumulator."""

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad=False):
        arr = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if arr.ndim != 2:
            raise ShapeError(f"Tensor must be 2-D, got shape {arr.shape}")
        _check_finite(arr, "tensor constructor input")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return dense_matmul(self, other)


class Tape:
    """Ordered record of executed operations; single use per backward pass.

    Used as a context manager: ops executed inside the `with` block are
    recorded if any of their tensor inputs requires a gradient.
    """

    _active = None

    def __init__(self):
        self._records = []       # backward closures, in execution order
        self._produced = set()   # id() of tensors produced on this tape
        self._leaves = {}        # id() -> leaf tensor (requires_grad inputs)
        self._consumed = False
        self._outer = None

    def __enter__(self):
        self._outer = Tape._active
        Tape._active = self
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape._active = self._outer
        return False

    def _record(self, out, inputs, backward):
        self._records.append(backward)
        self._produced.add(id(out))
        for t in inputs:
            if t.requires_grad and id(t) not in self._produced:
                self._leaves.setdefault(id(t), t)

    def __len__(self):
        return len(self._records)


def _accumulate(t, g):
    """Add g into t.grad (copy on first write so arrays are never aliased)."""
    if not t.requires_grad:
        return
    _check_finite(g, "gradient")
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _emit(values, inputs, backward, what):
    """Build the output tensor of an op and record its backward rule."""
    _check_finite(values, what)
    out = Tensor.__new__(Tensor)
    out.values = values
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    tape = Tape._active
    if tape is not None and out.requires_grad:
        tape._record(out, inputs, backward(out))
    return out


def backward_all(loss, tape):
    """Replay the tape in reverse, accumulating gradients from a scalar loss.

    Returns a dict mapping each leaf tensor (a requires_grad tensor that was
    fed into the tape, not produced on it) to its accumulated gradient.
    The tape is consumed; reusing it raises TapeError.
    """
    if tape._consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    if loss.shape != (1, 1):
        raise TapeError(f"loss must be a (1, 1) scalar tensor, got {loss.shape}")
    if id(loss) not in tape._produced:
        raise TapeError("loss was not produced on this tape")
    tape._consumed = True
    loss.grad = np.ones((1, 1))
    for backward in reversed(tape._records):
        backward()
    return {t: t.grad for t in tape._leaves.values() if t.grad is not None}


# ---------------------------------------------------------------------------
# Sparse matrices
# ---------------------------------------------------------------------------

class SparseMatrix:
    """CSR matrix whose values are an (nnz, 1) Tensor (edge weights may be learned).

    Column indices are strictly increasing within each row; values may be
    negative (signed attention weights are legal).
    """

    __slots__ = ("shape", "indptr", "indices", "values", "_rows")

    def __init__(self, shape, indptr, indices, values, validate=True):
        self.shape = (int(shape[0]), int(shape[1]))
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        if not isinstance(values, Tensor):
            values = Tensor(np.asarray(values, dtype=np.float64).reshape(-1, 1))
        self.values = values
        self._rows = None
        if validate:
            self._validate()

    def _validate(self):
        rows, cols = self.shape
        if self.indptr.shape != (rows + 1,):
            raise ShapeError(f"indptr must have length rows+1={rows + 1}, got {self.indptr.shape}")
        if self.indptr[0] != 0 or np.any(np.diff(self.indptr) < 0):
            raise ShapeError("indptr must start at 0 and be monotone")
        if self.indptr[-1] != len(self.indices):
            raise ShapeError(f"nnz mismatch: indptr[-1]={self.indptr[-1]}, len(indices)={len(self.indices)}")
        if self.values.shape != (len(self.indices), 1):
            raise ShapeError(f"values must be (nnz, 1)={len(self.indices), 1}, got {self.values.shape}")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= cols):
            raise ShapeError("column index out of range")
        for r in range(rows):
            seg = self.indices[self.indptr[r]:self.indptr[r + 1]]
            if np.any(np.diff(seg) <= 0):
                raise ShapeError(f"column indices not strictly increasing in row {r}")

    @property
    def nnz(self):
        return len(self.indices)

    def row_of_entry(self):
        """Row index of each stored entry, cached."""
        if self._rows is None:
            self._rows = np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))
        return self._rows

    def with_values(self, values):
        """Same structure, different values tensor (structure is not revalidated)."""
        out = SparseMatrix.__new__(SparseMatrix)
        out.shape = self.shape
        out.indptr = self.indptr
        out.indices = self.indices
        if not isinstance(values, Tensor):
            values = Tensor(np.asarray(values, dtype=np.float64).reshape(-1, 1))
        if values.shape != (self.nnz, 1):
            raise ShapeError(f"values must be ({self.nnz}, 1), got {values.shape}")
        out.values = values
        out._rows = self._rows
        return out

    def _scipy(self, vals=None):
        v = self.values.values[:, 0] if vals is None else vals
        return scipy.sparse.csr_matrix((v, self.indices, self.indptr), shape=self.shape)

    def densify(self):
        return self._scipy().toarray()

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense, dtype=np.float64)
        m = scipy.sparse.csr_matrix(dense)
        m.sort_indices()
        return cls(dense.shape, m.indptr, m.indices, m.data)

    @classmethod
    def from_edges(cls, shape, rows, cols, vals=None):
        """Build from an edge list (duplicates are an error; entries get sorted)."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if vals is None:
            vals = np.ones(len(rows))
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        vals = np.asarray(vals, dtype=np.float64)[order]
        counts = np.bincount(rows, minlength=shape[0])
        indptr = np.concatenate(([0], np.cumsum(counts)))
        return cls(shape, indptr, cols, vals)


# ---------------------------------------------------------------------------
# Op catalog
# ---------------------------------------------------------------------------

def dense_matmul(a, b):
    """Matrix product a @ b with gradients dA = G B^T, dB = A^T G."""
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            _accumulate(a, g @ bv.T)
            _accumulate(b, av.T @ g)
        return run

    return _emit(av @ bv, (a, b), backward, "matmul output")


def sparse_dense_matmul(s, x):
    """CSR @ dense: row u of the output is sum_v s(u,v) x[v].

    Gradients: dX = S^T G, and per stored entry ds(u,v) = G[u] . X[v] when the
    edge values require grad.
    """
    if s.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm inner dimensions differ: {s.shape} @ {x.shape}")
    xv = x.values
    mat = s._scipy()
    vals = s.values

    def backward(out):
        rows = s.row_of_entry()

        def run():
            g = out.grad
            if g is None:
                return
            if x.requires_grad:
                _accumulate(x, mat.T @ g)
            if vals.requires_grad:
                dv = np.einsum("ij,ij->i", g[rows], xv[s.indices])
                _accumulate(vals, dv.reshape(-1, 1))
        return run

    return _emit(mat @ xv, (x, vals), backward, "spmm output")


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op} requires equal shapes, got {a.shape} and {b.shape}")


def add(a, b):
    _same_shape(a, b, "add")

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            _accumulate(a, g)
            _accumulate(b, g)
        return run

    return _emit(a.values + b.values, (a, b), backward, "add output")


def sub(a, b):
    _same_shape(a, b, "sub")

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            _accumulate(a, g)
            _accumulate(b, -g)
        return run

    return _emit(a.values - b.values, (a, b), backward, "sub output")


def mul(a, b):
    """Elementwise product of same-shape tensors."""
    _same_shape(a, b, "mul")
    av, bv = a.values, b.values

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            _accumulate(a, g * bv)
            _accumulate(b, g * av)
        return run

    return _emit(av * bv, (a, b), backward, "mul output")


def div(a, b):
    """Elementwise quotient a / b of same-shape tensors."""
    _same_shape(a, b, "div")
    av, bv = a.values, b.values

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            _accumulate(a, g / bv)
            _accumulate(b, -g * av / (bv * bv))
        return run

    with np.errstate(divide="ignore", invalid="ignore"):
        quotient = av / bv
    return _emit(quotient, (a, b), backward, "div output")


def scale(x, c):
    """Multiply by a python float."""
    c = float(c)

    def backward(out):
        def run():
            if out.grad is not None:
                _accumulate(x, c * out.grad)
        return run

    return _emit(c * x.values, (x,), backward, "scale output")


def add_scalar(x, c):
    """Add a python float to every entry."""
    c = float(c)

    def backward(out):
        def run():
            if out.grad is not None:
                _accumulate(x, out.grad)
        return run

    return _emit(x.values + c, (x,), backward, "add_scalar output")


def row_scale(x, w):
    """Scale row i of x by w[i, 0]; w has shape (rows, 1)."""
    if w.shape != (x.shape[0], 1):
        raise ShapeError(f"row_scale weight must be ({x.shape[0]}, 1), got {w.shape}")
    xv, wv = x.values, w.values

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            _accumulate(x, g * wv)
            _accumulate(w, np.sum(g * xv, axis=1, keepdims=True))
        return run

    return _emit(xv * wv, (x, w), backward, "row_scale output")


def scalar_scale(x, s):
    """Scale every entry of x by the (1, 1) tensor s."""
    if s.shape != (1, 1):
        raise ShapeError(f"scalar_scale factor must be (1, 1), got {s.shape}")
    xv, sv = x.values, s.values

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            _accumulate(x, g * sv[0, 0])
            _accumulate(s, np.array([[np.sum(g * xv)]]))
        return run

    return _emit(xv * sv[0, 0], (x, s), backward, "scalar_scale output")


def relu(x):
    xv = x.values

    def backward(out):
        def run():
            if out.grad is not None:
                _accumulate(x, out.grad * (xv > 0.0))
        return run

    return _emit(np.maximum(xv, 0.0), (x,), backward, "relu output")


def tanh(x):
    tv = np.tanh(x.values)

    def backward(out):
        def run():
            if out.grad is not None:
                _accumulate(x, out.grad * (1.0 - tv * tv))
        return run

    return _emit(tv, (x,), backward, "tanh output")


def sigmoid(x):
    sv = expit(x.values)

    def backward(out):
        def run():
            if out.grad is not None:
                _accumulate(x, out.grad * sv * (1.0 - sv))
        return run

    return _emit(sv, (x,), backward, "sigmoid output")


def sqrt(x):
    """Elementwise square root; inputs must be strictly positive."""
    rv = np.sqrt(x.values)

    def backward(out):
        def run():
            if out.grad is not None:
                _accumulate(x, out.grad / (2.0 * rv))
        return run

    return _emit(rv, (x,), backward, "sqrt output")


def concat_cols(tensors):
    """Concatenate along the feature axis (columns)."""
    tensors = list(tensors)
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.shape[0] != rows:
            raise ShapeError(f"concat_cols row counts differ: {[t.shape for t in tensors]}")
    widths = [t.shape[1] for t in tensors]

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            at = 0
            for t, w in zip(tensors, widths):
                _accumulate(t, g[:, at:at + w])
                at += w
        return run

    return _emit(np.concatenate([t.values for t in tensors], axis=1),
                 tuple(tensors), backward, "concat output")


def row_sum(x):
    """Sum along the feature axis, giving a (rows, 1) column."""
    d = x.shape[1]

    def backward(out):
        def run():
            if out.grad is not None:
                _accumulate(x, np.repeat(out.grad, d, axis=1))
        return run

    return _emit(np.sum(x.values, axis=1, keepdims=True), (x,), backward, "row_sum output")


def row_mean(x):
    d = x.shape[1]

    def backward(out):
        def run():
            if out.grad is not None:
                _accumulate(x, np.repeat(out.grad, d, axis=1) / d)
        return run

    return _emit(np.mean(x.values, axis=1, keepdims=True), (x,), backward, "row_mean output")


def sum_all(x):
    """Sum of all entries as a (1, 1) tensor."""
    def backward(out):
        def run():
            if out.grad is not None:
                _accumulate(x, np.full(x.shape, out.grad[0, 0]))
        return run

    return _emit(np.array([[np.sum(x.values)]]), (x,), backward, "sum_all output")


def gather_rows(x, idx):
    """Select rows by index; backward scatter-adds gradients back."""
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"gather index out of range for {x.shape[0]} rows")

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            gx = np.zeros(x.shape)
            np.add.at(gx, idx, g)
            _accumulate(x, gx)
        return run

    return _emit(x.values[idx], (x,), backward, "gather output")


def col_slice(x, j):
    """Column j of x as a (rows, 1) tensor."""
    if not 0 <= j < x.shape[1]:
        raise ShapeError(f"column {j} out of range for shape {x.shape}")

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            gx = np.zeros(x.shape)
            gx[:, j:j + 1] = g
            _accumulate(x, gx)
        return run

    return _emit(np.array(x.values[:, j:j + 1]), (x,), backward, "col_slice output")


def dropout(x, p, rng):
    """Inverted dropout with an explicit seeded mask; p = 0 is the identity."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(out):
        def run():
            if out.grad is not None:
                _accumulate(x, out.grad * mask)
        return run

    return _emit(x.values * mask, (x,), backward, "dropout output")


def softmax_temperature(logits, tau):
    """Row-wise softmax of logits / tau, computed with max subtraction."""
    if tau <= 0:
        raise ParameterError(f"softmax temperature must be positive, got {tau}")
    z = logits.values / tau
    z = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(z)
    sm = e / np.sum(e, axis=1, keepdims=True)

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            inner = np.sum(g * sm, axis=1, keepdims=True)
            _accumulate(logits, sm * (g - inner) / tau)
        return run

    return _emit(sm, (logits,), backward, "softmax output")


def cross_entropy_mean(logits, labels, mask):
    """Mean over masked rows of -log softmax(logits)[label], as a (1, 1) tensor."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask)
    if mask.dtype == bool:
        mask = np.flatnonzero(mask)
    mask = mask.astype(np.int64)
    if len(mask) == 0:
        raise ParameterError("cross_entropy_mean: empty mask")
    n, c = logits.shape
    if len(labels) != n:
        raise ShapeError(f"labels length {len(labels)} != rows {n}")
    sub_labels = labels[mask]
    if sub_labels.min() < 0 or sub_labels.max() >= c:
        raise ParameterError(f"label out of range [0, {c})")
    rows = logits.values[mask]
    m = np.max(rows, axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(rows - m), axis=1))
    loss = np.mean(lse - rows[np.arange(len(mask)), sub_labels])

    def backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            p = np.exp(rows - m)
            p /= np.sum(p, axis=1, keepdims=True)
            p[np.arange(len(mask)), sub_labels] -= 1.0
            gx = np.zeros(logits.shape)
            np.add.at(gx, mask, p * (g[0, 0] / len(mask)))
            _accumulate(logits, gx)
        return run

    return _emit(np.array([[loss]]), (logits,), backward, "cross_entropy output")


def detach(x):
    """Constant copy of x; gradients do not flow through."""
    return Tensor(np.array(x.values))


# ---------------------------------------------------------------------------
# Gradient descent and gradient checking
# ---------------------------------------------------------------------------

class Adam:
    """Adam over a list of Tensors, with coupled L2 weight decay."""

    def __init__(self, params, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros(p.shape) for p in self.params]
        self._v = [np.zeros(p.shape) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.values
            self._m[i] = b1 * self._m[i] + (1 - b1) * g
            self._v[i] = b2 * self._v[i] + (1 - b2) * g * g
            mhat = self._m[i] / (1 - b1 ** self.t)
            vhat = self._v[i] / (1 - b2 ** self.t)
            p.values -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def grad_check(f, params, eps=1e-3):
    """Max relative error between analytic gradients and central differences.

    f is a zero-argument deterministic program returning a (1, 1) loss tensor
    built from `params`; determinism is verified by double evaluation. The
    relative error is |analytic - numeric| / max(1, |analytic|, |numeric|),
    maximized over all parameters and coordinates.
    """
    if eps <= 0:
        raise ParameterError("grad_check eps must be positive")
    l1 = f().values[0, 0]
    l2 = f().values[0, 0]
    if l1 != l2:
        raise ParameterError("grad_check requires a deterministic program "
                             f"(got {l1!r} then {l2!r}); disable dropout")

    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    backward_all(loss, tape)
    analytic = [np.array(p.grad) if p.grad is not None else np.zeros(p.shape)
                for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.values.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = f().values[0, 0]
            flat[k] = orig - eps
            down = f().values[0, 0]
            flat[k] = orig
            num = (up - down) / (2 * eps)
            ana = ga.reshape(-1)[k]
            err = abs(ana - num) / max(1.0, abs(ana), abs(num))
            worst = max(worst, err)
    return worst
