"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

The engine provides exactly the operator basis the rest of the package
needs: add, sub, mul (elementwise), matmul, scale (by a python float),
sum, mean, gelu and mse. Operations executed inside a ``with Tape():``
block are recorded when any input participates in gradients; ``backward``
then replays the records in exact reverse order. There is no ambient
tape: a forward pass that wants gradients must run inside a Tape context,
otherwise ``backward`` raises ContractError.

Elementwise ops broadcast only between a tensor and a one-element tensor;
anything richer (row broadcasting, for instance) is expressed through
explicit matmuls by the callers.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, NumericsError, ShapeError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """Dense float64 array with optional gradient participation.

    ``requires_grad`` marks trainable leaves; tensors produced by recorded
    ops carry the participation flag internally. ``grad`` stays None until
    a backward pass reaches the leaf.
    """

    __slots__ = ("data", "requires_grad", "grad", "_from_op", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._from_op = False
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return detach(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("inputs", "output", "rule")

    def __init__(self, inputs, output, rule):
        self.inputs = inputs
        self.output = output
        self.rule = rule


class Tape:
    """Ordered log of recorded operations for one forward pass.

    Use as a context manager; nested tapes shadow outer ones. Records are
    replayed strictly in reverse by :func:`backward`.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _stack().pop()
        assert popped is self
        return False


_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> Tape | None:
    stack = _stack()
    top = stack[-1] if stack else None
    return top if isinstance(top, Tape) else None


@contextmanager
def no_grad():
    """Disable recording, even inside an enclosing Tape."""
    _stack().append(None)
    try:
        yield
    finally:
        _stack().pop()


def _participates(t: Tensor) -> bool:
    return t.requires_grad or t._from_op


def _emit(inputs: Sequence[Tensor], out_data: np.ndarray, rule) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(_participates(t) for t in inputs):
        out._from_op = True
        out._tape = tape
        tape.records.append(_Record(tuple(inputs), out, rule))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # Only scalar <-> tensor broadcasting exists; collapse back by summing.
    if g.shape == tuple(shape):
        return g
    return np.sum(g).reshape(shape) if np.prod(shape, dtype=int) == 1 else g.reshape(shape)


def _check_elementwise(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not conform")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("add", a, b)

    def rule(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None,
        )

    return _emit((a, b), a.data + b.data, rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("sub", a, b)

    def rule(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, b.shape) if needs[1] else None,
        )

    return _emit((a, b), a.data - b.data, rule)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("mul", a, b)
    ad, bd = a.data, b.data

    def rule(g, needs):
        return (
            _unbroadcast(g * bd, a.shape) if needs[0] else None,
            _unbroadcast(g * ad, b.shape) if needs[1] else None,
        )

    return _emit((a, b), ad * bd, rule)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data

    def rule(g, needs):
        return (
            g @ bd.T if needs[0] else None,
            ad.T @ g if needs[1] else None,
        )

    return _emit((a, b), ad @ bd, rule)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)

    def rule(g, needs):
        return (g * s if needs[0] else None,)

    return _emit((a,), a.data * s, rule)


def tsum(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def rule(g, needs):
        return (np.full(shape, float(g)) if needs[0] else None,)

    return _emit((a,), np.asarray(np.sum(a.data)), rule)


def tmean(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.size

    def rule(g, needs):
        return (np.full(shape, float(g) / n) if needs[0] else None,)

    return _emit((a,), np.asarray(np.mean(a.data)), rule)


def gelu(a) -> Tensor:
    """Exact-Phi gelu: x * Phi(x), with Phi the standard normal CDF."""
    a = as_tensor(a)
    ad = a.data
    phi_cdf = 0.5 * (1.0 + erf(ad * _INV_SQRT2))

    def rule(g, needs):
        if not needs[0]:
            return (None,)
        pdf = np.exp(-0.5 * ad * ad) * _INV_SQRT_2PI
        return (g * (phi_cdf + ad * pdf),)

    return _emit((a,), ad * phi_cdf, rule)


def mse(a, b) -> Tensor:
    """Mean over all elements of (a - b)^2; returns a scalar tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} do not conform")
    diff = a.data - b.data
    n = a.size

    def rule(g, needs):
        common = (2.0 * float(g) / n) * diff
        return (
            common if needs[0] else None,
            -common if needs[1] else None,
        )

    return _emit((a, b), np.asarray(np.mean(diff * diff)), rule)


_OPS: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "scale": scale,
    "sum": tsum,
    "mean": tmean,
    "gelu": gelu,
    "mse": mse,
}


def apply(kind: str, *inputs) -> Tensor:
    """Dispatch an op by name. Unknown kinds raise ShapeError-free ValueError."""
    try:
        op = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; known: {sorted(_OPS)}") from None
    return op(*inputs)


def detach(x: Tensor) -> Tensor:
    """Value-sharing copy that never participates in gradients."""
    out = Tensor(x.data)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    Leaves that appear on the tape but do not influence the loss get an
    explicit zero gradient. Gradients accumulate across calls until
    ``zero_grad``.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ContractError(
            "loss is not on a tape; run the forward pass inside `with Tape():`"
        )

    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = adjoint.pop(id(rec.output), None)
        if g is None:
            continue
        needs = tuple(_participates(t) for t in rec.inputs)
        grads = rec.rule(g, needs)
        for t, gi in zip(rec.inputs, grads):
            if gi is None:
                continue
            if t._from_op:
                prev = adjoint.get(id(t))
                adjoint[id(t)] = gi if prev is None else prev + gi
            elif t.requires_grad:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad = t.grad + gi

    # Leaves recorded on the tape but unreachable from this loss: zero grad.
    for rec in tape.records:
        for t in rec.inputs:
            if t.requires_grad and not t._from_op and t.grad is None:
                t.grad = np.zeros_like(t.data)


class ParamStore:
    """Ordered named-tensor table holding one parameter group.

    Backbone parameters are frozen after pretraining via :meth:`freeze`,
    which mechanically blocks any further gradient accumulation.
    """

    def __init__(self, meta: dict | None = None):
        self._tensors: dict[str, Tensor] = {}
        self.frozen = False
        self.meta = dict(meta or {})

    def add(self, name: str, data, requires_grad: bool = True) -> Tensor:
        if name in self._tensors:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=requires_grad and not self.frozen)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterable[str]:
        return iter(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def items(self):
        return self._tensors.items()

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def freeze(self) -> None:
        for t in self._tensors.values():
            t.requires_grad = False
            t.grad = None
        self.frozen = True

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._tensors.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._tensors) - set(state)
        extra = set(state) - set(self._tensors)
        if missing or extra:
            raise ContractError(
                f"state dict mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for k, t in self._tensors.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ShapeError(f"{k}: checkpoint shape {arr.shape} != {t.data.shape}")
            t.data = arr.copy()

    def snapshot_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for k, t in self._tensors.items():
            h.update(k.encode("utf-8"))
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


def grad_check(f, params: ParamStore, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar function of ``params``. The
    analytic pass runs on a private tape; the finite-difference probes run
    with recording disabled.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")

    params.zero_grad()
    with Tape():
        loss = f(params)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericsError(f"f evaluated non-finite: {value}")
        backward(loss)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in params.items() if t.requires_grad}

    worst = 0.0
    with no_grad():
        for name, t in params.items():
            if not t.requires_grad:
                continue
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = f(params).item()
                flat[i] = orig - h
                down = f(params).item()
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NumericsError(f"f non-finite while probing {name}[{i}]")
                fd = (up - down) / (2.0 * h)
                an = analytic[name].reshape(-1)[i]
                err = abs(an - fd) / max(1.0, abs(fd))
                if err > worst:
                    worst = err
    return worst
