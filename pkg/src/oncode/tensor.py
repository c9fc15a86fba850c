"""Reverse-mode automatic differentiation on dense float64 arrays.

A ``Tensor`` wraps a numpy array and doubles as a node of the backward
tape: it records the operation that produced it, its parents, and a
closure that pushes the output gradient back onto those parents.
Gradients accumulate additively over fan-out, so a tensor may feed any
number of downstream operations.

Tensors that do not (transitively) depend on a parameter carry no tape
state at all; pure evaluation paths therefore run at plain numpy speed.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "AutodiffError",
    "as_tensor",
    "parameter",
    "concat",
    "stack_rows",
    "softmax",
    "autodiff_eval",
    "gradient_check",
    "GradientCheckReport",
]

# When enabled, every op validates that its output is finite. Off by
# default: the hot paths (ODE unrolls) check at their own boundaries.
CHECK_FINITE = False


class AutodiffError(ValueError):
    """Raised on misuse of the tape: non-scalar backward, unbound inputs."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Dense float64 array plus its backward-tape node."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "op", "name")

    def __init__(self, data, requires_grad=False, _parents=(), op="leaf", name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._backward = None
        self._parents = _parents
        self.op = op
        self.name = name
        if CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise AutodiffError(f"non-finite values produced by op '{op}'")

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.data.shape}, grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph construction helpers ------------------------------------------

    @staticmethod
    def _make(data, parents, op, backward):
        needs = any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), op=op)
        if needs:
            out._backward = backward
        return out

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._make(out_data, (self, other), "add", backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        out_data = self.data - other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.data.shape))

        return Tensor._make(out_data, (self, other), "sub", backward)

    def __rsub__(self, other):
        return as_tensor(other).__sub__(self)

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._make(out_data, (self, other), "mul", backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._make(out_data, (self, other), "div", backward)

    def __rtruediv__(self, other):
        return as_tensor(other).__truediv__(self)

    def __neg__(self):
        def backward(g, a=self):
            a._accumulate(-g)

        return Tensor._make(-self.data, (self,), "neg", backward)

    def __pow__(self, power):
        if not isinstance(power, (int, float)):
            raise AutodiffError("only constant exponents are supported")
        out_data = self.data ** power

        def backward(g, a=self, p=power):
            a._accumulate(g * p * a.data ** (p - 1))

        return Tensor._make(out_data, (self,), "pow", backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        a_d, b_d = self.data, other.data
        out_data = a_d @ b_d

        def backward(g, a=self, b=other):
            ad, bd = a.data, b.data
            if a.requires_grad:
                if ad.ndim == 2 and bd.ndim == 2:
                    a._accumulate(g @ bd.T)
                elif ad.ndim == 2 and bd.ndim == 1:
                    a._accumulate(np.outer(g, bd))
                elif ad.ndim == 1 and bd.ndim == 2:
                    a._accumulate(bd @ g)
                else:  # 1-D @ 1-D
                    a._accumulate(g * bd)
            if b.requires_grad:
                if ad.ndim == 2 and bd.ndim == 2:
                    b._accumulate(ad.T @ g)
                elif ad.ndim == 2 and bd.ndim == 1:
                    b._accumulate(ad.T @ g)
                elif ad.ndim == 1 and bd.ndim == 2:
                    b._accumulate(np.outer(ad, g))
                else:
                    b._accumulate(g * ad)

        return Tensor._make(out_data, (self, other), "matmul", backward)

    # -- elementwise nonlinearities --------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g, a=self, o=out_data):
            a._accumulate(g * o)

        return Tensor._make(out_data, (self,), "exp", backward)

    def log(self):
        out_data = np.log(self.data)

        def backward(g, a=self):
            a._accumulate(g / a.data)

        return Tensor._make(out_data, (self,), "log", backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g, a=self, o=out_data):
            a._accumulate(g * (1.0 - o * o))

        return Tensor._make(out_data, (self,), "tanh", backward)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(g, a=self, o=out_data):
            a._accumulate(g * o * (1.0 - o))

        return Tensor._make(out_data, (self,), "sigmoid", backward)

    def relu(self):
        out_data = np.maximum(self.data, 0.0)

        def backward(g, a=self):
            a._accumulate(g * (a.data > 0.0))

        return Tensor._make(out_data, (self,), "relu", backward)

    def leaky_relu(self, slope=0.2):
        out_data = np.where(self.data > 0.0, self.data, slope * self.data)

        def backward(g, a=self, s=slope):
            a._accumulate(g * np.where(a.data > 0.0, 1.0, s))

        return Tensor._make(out_data, (self,), "leaky_relu", backward)

    # -- reductions and shape ops ----------------------------------------------

    def sum(self, axis=None):
        out_data = self.data.sum(axis=axis)

        def backward(g, a=self, ax=axis):
            if ax is None:
                a._accumulate(np.full(a.data.shape, g))
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, ax), a.data.shape).copy())

        return Tensor._make(out_data, (self,), "sum", backward)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, *shape):
        out_data = self.data.reshape(*shape)

        def backward(g, a=self):
            a._accumulate(g.reshape(a.data.shape))

        return Tensor._make(out_data, (self,), "reshape", backward)

    def __getitem__(self, idx):
        out_data = self.data[idx]

        def backward(g, a=self, i=idx):
            full = np.zeros_like(a.data)
            np.add.at(full, i, g)
            a._accumulate(full)

        return Tensor._make(out_data, (self,), "getitem", backward)

    def add_rows(self, indices, rows: "Tensor") -> "Tensor":
        """Return a copy of this matrix with `rows` added at `indices`.

        Duplicate indices accumulate. Gradients flow to both operands.
        """
        rows = as_tensor(rows)
        idx = np.asarray(indices, dtype=np.intp)
        out_data = self.data.copy()
        np.add.at(out_data, idx, rows.data)

        def backward(g, base=self, r=rows, i=idx):
            if base.requires_grad:
                base._accumulate(g)
            if r.requires_grad:
                r._accumulate(g[i])

        return Tensor._make(out_data, (self, rows), "add_rows", backward)

    # -- backward pass ----------------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise AutodiffError(
                f"backward requires a scalar output, got shape {self.data.shape}")
        # Iterative topological order (graphs from ODE unrolls run deep).
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(data, name: str | None = None) -> Tensor:
    t = Tensor(data, requires_grad=True)
    t.name = name
    return t


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along `axis`; gradients split back to the inputs."""
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g, parts=tensors, offs=offsets, ax=axis):
        for k, t in enumerate(parts):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(offs[k], offs[k + 1])
                t._accumulate(g[tuple(sl)])

    return Tensor._make(out_data, tuple(tensors), "concat", backward)


def stack_rows(tensors) -> Tensor:
    """Stack 1-D tensors into a matrix, one per row."""
    return concat([t.reshape(1, -1) for t in tensors], axis=0)


def softmax(v: Tensor) -> Tensor:
    """Stable softmax of a nonempty 1-D tensor (max subtracted as a constant)."""
    v = as_tensor(v)
    if v.data.ndim != 1 or v.data.size == 0:
        raise AutodiffError("softmax expects a nonempty 1-D tensor")
    shifted = v - float(v.data.max())
    e = shifted.exp()
    return e / e.sum()


# -- named evaluation and the finite-difference harness -------------------------


def autodiff_eval(f, inputs: dict[str, Tensor | np.ndarray]):
    """Evaluate `f` on named inputs and return (value, gradients).

    `f` is called with one keyword argument per entry of `inputs`; each is
    bound as a fresh differentiable leaf. The output must be scalar.
    Returns the output tensor and a dict mapping each input name to the
    gradient of the output with respect to it.
    """
    sig = inspect.signature(f)
    takes_kwargs = any(p.kind is p.VAR_KEYWORD for p in sig.parameters.values())
    names = [p.name for p in sig.parameters.values()
             if p.kind in (p.POSITIONAL_OR_KEYWORD, p.KEYWORD_ONLY)]
    missing = [n for n in names if n not in inputs]
    if missing:
        raise AutodiffError(f"unbound input name(s): {', '.join(missing)}")
    unknown = [n for n in inputs if n not in names]
    if unknown and not takes_kwargs:
        raise AutodiffError(f"input name(s) not taken by f: {', '.join(unknown)}")
    bind = list(inputs) if takes_kwargs else names
    leaves = {n: parameter(as_tensor(inputs[n]).data.copy(), name=n) for n in bind}
    out = f(**leaves)
    if not isinstance(out, Tensor):
        out = as_tensor(out)
    if out.data.size != 1:
        raise AutodiffError(
            f"gradient requested for non-scalar output of shape {out.data.shape}")
    out.backward()
    grads = {n: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
             for n, leaf in leaves.items()}
    return out, grads


@dataclass
class GradientCheckReport:
    """Per-input comparison of reverse-mode vs central finite differences."""

    max_rel_error: float
    per_input: dict[str, float] = field(default_factory=dict)
    passed: dict[str, bool] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def __str__(self):
        lines = [f"gradient check (tol={self.tol:g}):"]
        for name, err in self.per_input.items():
            status = "ok" if self.passed[name] else "FAIL"
            lines.append(f"  {name:<24s} rel_err={err:.3e}  {status}")
        return "\n".join(lines)


def _rel_err(a: float, b: float) -> float:
    denom = max(abs(a), abs(b))
    if denom < 1e-10:
        return 0.0
    return abs(a - b) / denom


def gradient_check(f, inputs, h: float = 1e-5, tol: float = 1e-4) -> GradientCheckReport:
    """Compare reverse-mode gradients of scalar `f` against central differences."""
    _, grads = autodiff_eval(f, inputs)
    arrays = {n: np.array(as_tensor(v).data, dtype=np.float64) for n, v in inputs.items()}

    def value_at(current):
        out, _ = autodiff_eval(f, current)
        return out.data.item()

    per_input = {}
    for name, base in arrays.items():
        worst = 0.0
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = value_at(arrays)
            flat[i] = orig - h
            down = value_at(arrays)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            analytic = grads[name].reshape(-1)[i]
            worst = max(worst, _rel_err(analytic, numeric))
        per_input[name] = worst
    overall = max(per_input.values()) if per_input else 0.0
    return GradientCheckReport(
        max_rel_error=overall,
        per_input=per_input,
        passed={n: e <= tol for n, e in per_input.items()},
        tol=tol,
    )
