"""Dense 2-D tensors with a reverse-mode differentiation tape.

Every value is a float64 matrix. Vectors are single rows (``1 x n``) and a
batch of vectors is a matrix with one row per example, so the same op serves
both the single-sentence and the batched paths.

Ops are methods on :class:`Tape`.  A tape created with ``record=False`` only
computes values, which is what decoding uses.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Operand is outside the domain of an operation."""


def as_tensor(x) -> np.ndarray:
    """Coerce scalars, vectors and matrices to a float64 2-D array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"tensors are at most 2-D, got shape {a.shape}")
    return a


class Node:
    __slots__ = ("id", "op", "parents", "value", "grad", "name", "requires_grad", "_backward")

    def __init__(self, id, op, parents, value, requires_grad, backward=None, name=None):
        self.id = id
        self.op = op
        self.parents = parents
        self.value = value
        self.grad = None
        self.name = name
        self.requires_grad = requires_grad
        self._backward = backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.shape})"


def _accumulate(node: Node, g: np.ndarray) -> None:
    if not node.requires_grad:
        return
    # never mutate in place: g may alias another node's grad
    node.grad = g if node.grad is None else node.grad + g


def _check_same(op: str, a: Node, b: Node) -> None:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


class Tape:
    """Append-only record of nodes in evaluation (hence topological) order."""

    def __init__(self, record: bool = True):
        self.record = record
        self.nodes: list[Node] = []
        self._params: dict[str, Node] = {}

    # -- leaves ---------------------------------------------------------

    def _push(self, op, value, parents, backward) -> Node:
        requires = self.record and any(p.requires_grad for p in parents)
        node = Node(len(self.nodes), op, tuple(parents) if self.record else (), value,
                    requires, backward if requires else None)
        if self.record:
            self.nodes.append(node)
        return node

    def leaf(self, value, name: str | None = None, requires_grad: bool = True) -> Node:
        node = Node(len(self.nodes), "leaf", (), as_tensor(value),
                    requires_grad and self.record, name=name)
        if self.record:
            self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self.leaf(value, requires_grad=False)

    def param(self, name: str, value: np.ndarray) -> Node:
        """Register a named parameter once per tape; later calls return the same node."""
        node = self._params.get(name)
        if node is None:
            node = self.leaf(value, name=name)
            self._params[name] = node
        return node

    @property
    def params(self) -> dict[str, Node]:
        return self._params

    # -- linear algebra -------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value
        if av.shape[1] != bv.shape[0]:
            raise DimensionError(f"matmul: cannot multiply {av.shape} by {bv.shape}")

        def backward(g):
            _accumulate(a, g @ bv.T)
            _accumulate(b, av.T @ g)

        return self._push("matmul", av @ bv, (a, b), backward)

    def linear(self, terms: Sequence[tuple[Node, Node]], bias: Node | None = None) -> Node:
        """Fused ``sum_k x_k @ W_k (+ bias)``; bias is a row broadcast over rows."""
        out = None
        for x, w in terms:
            if x.value.shape[1] != w.value.shape[0]:
                raise DimensionError(f"linear: cannot multiply {x.value.shape} by {w.value.shape}")
            prod = x.value @ w.value
            if out is None:
                out = prod
            elif prod.shape != out.shape:
                raise DimensionError(f"linear: term shapes {out.shape} and {prod.shape} differ")
            else:
                out = out + prod
        if bias is not None:
            if bias.value.shape != (1, out.shape[1]):
                raise DimensionError(f"linear: bias {bias.value.shape} does not fit {out.shape}")
            out = out + bias.value
        parents = [n for pair in terms for n in pair] + ([bias] if bias is not None else [])

        def backward(g):
            for x, w in terms:
                _accumulate(x, g @ w.value.T)
                _accumulate(w, x.value.T @ g)
            if bias is not None:
                _accumulate(bias, g.sum(axis=0, keepdims=True))

        return self._push("linear", out, parents, backward)

    def transpose(self, a: Node) -> Node:
        return self._push("transpose", a.value.T.copy(), (a,), lambda g: _accumulate(a, g.T))

    # -- elementwise ----------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        _check_same("add", a, b)

        def backward(g):
            _accumulate(a, g)
            _accumulate(b, g)

        return self._push("add", a.value + b.value, (a, b), backward)

    def sub(self, a: Node, b: Node) -> Node:
        _check_same("sub", a, b)

        def backward(g):
            _accumulate(a, g)
            _accumulate(b, -g)

        return self._push("sub", a.value - b.value, (a, b), backward)

    def hadamard(self, a: Node, b: Node) -> Node:
        _check_same("hadamard", a, b)
        av, bv = a.value, b.value

        def backward(g):
            _accumulate(a, g * bv)
            _accumulate(b, g * av)

        return self._push("hadamard", av * bv, (a, b), backward)

    def scale(self, a: Node, factor: float) -> Node:
        factor = float(factor)
        return self._push("scale", a.value * factor, (a,), lambda g: _accumulate(a, g * factor))

    def tanh(self, a: Node) -> Node:
        y = np.tanh(a.value)
        return self._push("tanh", y, (a,), lambda g: _accumulate(a, g * (1.0 - y * y)))

    def sigmoid(self, a: Node) -> Node:
        # split by sign so exp never overflows
        x = a.value
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return self._push("sigmoid", y, (a,), lambda g: _accumulate(a, g * y * (1.0 - y)))

    def elementwise(self, kind: str, *inputs: Node, factor: float | None = None) -> Node:
        unary = {"tanh": self.tanh, "sigmoid": self.sigmoid}
        binary = {"add": self.add, "hadamard": self.hadamard}
        if kind in unary:
            (x,) = inputs
            return unary[kind](x)
        if kind in binary:
            a, b = inputs
            return binary[kind](a, b)
        if kind == "scale":
            (x,) = inputs
            return self.scale(x, 1.0 if factor is None else factor)
        raise ValueError(f"unknown elementwise kind {kind!r}")

    def lerp(self, gate: Node, a: Node, b: Node) -> Node:
        """``(1 - gate) * a + gate * b``; gate is either a's shape or one column."""
        _check_same("lerp", a, b)
        gv, av, bv = gate.value, a.value, b.value
        column = gv.shape == (av.shape[0], 1) and av.shape[1] != 1
        if gv.shape != av.shape and not column:
            raise DimensionError(f"lerp: gate {gv.shape} does not fit {av.shape}")
        diff = bv - av

        def backward(g):
            _accumulate(a, g * (1.0 - gv))
            _accumulate(b, g * gv)
            gg = g * diff
            _accumulate(gate, gg.sum(axis=1, keepdims=True) if column else gg)

        return self._push("lerp", av + gv * diff, (gate, a, b), backward)

    # -- normalisation --------------------------------------------------

    def softmax(self, x: Node, mask: np.ndarray | None = None) -> Node:
        """Row-wise softmax. Entries where ``mask`` is False get exactly zero weight."""
        xv = x.value
        if xv.shape[1] == 0:
            raise DomainError("softmax of an empty vector")
        if mask is not None:
            xv = np.where(mask, xv, -np.inf)
        shifted = xv - xv.max(axis=1, keepdims=True)
        ex = np.exp(shifted)
        y = ex / ex.sum(axis=1, keepdims=True)

        def backward(g):
            _accumulate(x, y * (g - (g * y).sum(axis=1, keepdims=True)))

        return self._push("softmax", y, (x,), backward)

    def softmax_vec(self, x: Node) -> Node:
        if x.value.shape[0] != 1:
            raise DimensionError(f"softmax_vec expects a single row, got {x.value.shape}")
        return self.softmax(x)

    def log_softmax(self, x: Node) -> Node:
        xv = x.value
        if xv.shape[1] == 0:
            raise DomainError("log_softmax of an empty vector")
        shifted = xv - xv.max(axis=1, keepdims=True)
        y = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

        def backward(g):
            _accumulate(x, g - np.exp(y) * g.sum(axis=1, keepdims=True))

        return self._push("log_softmax", y, (x,), backward)

    # -- structure ------------------------------------------------------

    def concat(self, parts: Sequence[Node]) -> Node:
        """Join along columns; all parts must have the same number of rows."""
        if not parts:
            raise DimensionError("concat of zero parts")
        rows = parts[0].value.shape[0]
        for p in parts:
            if p.value.shape[0] != rows:
                raise DimensionError(
                    f"concat: part with shape {p.value.shape} does not match {rows} row(s)")
        widths = [p.value.shape[1] for p in parts]
        bounds = np.cumsum([0] + widths)

        def backward(g):
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                _accumulate(p, g[:, lo:hi])

        out = np.concatenate([p.value for p in parts], axis=1)
        return self._push("concat", out, parts, backward)

    def slice_cols(self, x: Node, start: int, stop: int) -> Node:
        shape = x.value.shape

        def backward(g):
            full = np.zeros(shape)
            full[:, start:stop] = g
            _accumulate(x, full)

        return self._push("slice_cols", x.value[:, start:stop], (x,), backward)

    def reshape(self, x: Node, shape: tuple[int, int]) -> Node:
        old = x.value.shape
        if old[0] * old[1] != shape[0] * shape[1]:
            raise DimensionError(f"reshape: cannot view {old} as {shape}")
        return self._push("reshape", x.value.reshape(shape), (x,),
                          lambda g: _accumulate(x, g.reshape(old)))

    def repeat_rows(self, x: Node, k: int) -> Node:
        """Repeat each row ``k`` times consecutively: row b becomes rows b*k..b*k+k-1."""
        rows, cols = x.value.shape
        return self._push("repeat_rows", np.repeat(x.value, k, axis=0), (x,),
                          lambda g: _accumulate(x, g.reshape(rows, k, cols).sum(axis=1)))

    def gather_rows(self, table: Node, ids) -> Node:
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        n = table.value.shape[0]
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise IndexError(f"row id out of range for table with {n} rows: {ids.tolist()}")
        shape = table.value.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, ids, g)
            _accumulate(table, full)

        return self._push("gather_rows", table.value[ids], (table,), backward)

    def pool(self, weights: Node, rows: Node) -> Node:
        """Per-example weighted sum: weights ``B x J``, rows ``(B*J) x d`` -> ``B x d``."""
        w = weights.value
        b, j = w.shape
        if rows.value.shape[0] != b * j:
            raise DimensionError(f"pool: weights {w.shape} do not fit rows {rows.value.shape}")
        h3 = rows.value.reshape(b, j, -1)
        out = np.einsum("bj,bjd->bd", w, h3)

        def backward(g):
            _accumulate(weights, np.einsum("bd,bjd->bj", g, h3))
            _accumulate(rows, (w[:, :, None] * g[:, None, :]).reshape(b * j, -1))

        return self._push("pool", out, (weights, rows), backward)

    # -- reductions -----------------------------------------------------

    def sum(self, x: Node) -> Node:
        shape = x.value.shape
        return self._push("sum", np.array([[x.value.sum()]]), (x,),
                          lambda g: _accumulate(x, np.full(shape, g[0, 0])))

    def nll(self, log_probs: Node, targets, weights=None) -> Node:
        """``-sum_b w_b * log_probs[b, targets_b]`` as a 1x1 node."""
        lp = log_probs.value
        t = np.asarray(targets, dtype=np.int64).reshape(-1)
        if t.shape[0] != lp.shape[0]:
            raise DimensionError(f"nll: {t.shape[0]} targets for {lp.shape[0]} rows")
        if t.size and (t.min() < 0 or t.max() >= lp.shape[1]):
            raise IndexError(f"nll: target id out of range for {lp.shape[1]} classes")
        w = np.ones(t.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
        rows = np.arange(t.shape[0])
        value = -(w * lp[rows, t]).sum()

        def backward(g):
            full = np.zeros(lp.shape)
            full[rows, t] = -w * g[0, 0]
            _accumulate(log_probs, full)

        return self._push("nll", np.array([[value]]), (log_probs,), backward)

    # -- reverse sweep --------------------------------------------------

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Reverse sweep from a scalar; returns gradients of every named parameter."""
        if not self.record:
            raise DomainError("backward on a tape that does not record")
        if loss.value.shape != (1, 1):
            raise DomainError(f"backward needs a 1x1 loss, got {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones((1, 1))
        for node in reversed(self.nodes[: loss.id + 1]):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        return {
            name: node.grad if node.grad is not None else np.zeros_like(node.value)
            for name, node in self._params.items()
        }


def backward(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    return tape.backward(loss)


def _sample_indices(size: int, samples: int, rng: np.random.Generator) -> np.ndarray:
    if size <= samples:
        return np.arange(size)
    return np.sort(rng.choice(size, size=samples, replace=False))


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(
    build_loss: Callable[[Tape, dict], Node],
    params: dict[str, np.ndarray],
    step: float = 1e-3,
    samples: int = 50,
    seed: int = 0,
    names: Iterable[str] | None = None,
) -> dict[str, float]:
    """Worst relative error between tape gradients and central differences.

    ``build_loss(tape, params)`` must register parameters with ``tape.param``
    and return a 1x1 node.  Tensors with more than ``samples`` components are
    checked on a seeded random subset.  Parameters are perturbed in place and
    restored afterwards.
    """
    if step <= 0:
        raise DomainError("finite-difference step must be positive")
    tape = Tape()
    loss = build_loss(tape, params)
    grads = tape.backward(loss)

    def evaluate() -> float:
        return float(build_loss(Tape(record=False), params).value[0, 0])

    rng = np.random.default_rng(seed)
    report = {}
    for name in (names if names is not None else params):
        flat = params[name].reshape(-1)
        if not np.shares_memory(flat, params[name]):
            raise DomainError(f"parameter {name!r} is not contiguous")
        analytic = grads.get(name, np.zeros_like(params[name])).reshape(-1)
        worst = 0.0
        for k in _sample_indices(flat.size, samples, rng):
            orig = flat[k]
            flat[k] = orig + step
            up = evaluate()
            flat[k] = orig - step
            down = evaluate()
            flat[k] = orig
            worst = max(worst, relative_error(analytic[k], (up - down) / (2 * step)))
        report[name] = worst
    return report
