"""
Reverse-mode automatic differentiation over numpy arrays.

A Tape records primitive operations in execution order; each recorded node
keeps its value and, per input, a vector-Jacobian product closure. The op
functions in this module accept plain arrays as well as tape values: when no
input is a Var the function is evaluated directly with numpy and nothing is
recorded, so inference code paths run tape-free with the same source.

Complexity:
- Forward recording: O(1) bookkeeping per op on top of the numpy cost
- Backward: one visit per recorded node, in reverse order
"""
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from shared.types.errors import SceneValidationError, TapeError

VJP = Callable[[np.ndarray], np.ndarray]


class Var:
    """A value recorded on a tape."""

    __slots__ = ("tape", "index", "value")
    __array_ufunc__ = None  # ndarray operators defer to the reflected Var operators

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Var(index={self.index}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


ArrayLike = Union[Var, np.ndarray, float, int]


class Tape:
    """Append-only record of primitive operations.

    Every node's inputs precede it, so a single reverse sweep visits each
    node exactly once.
    """

    def __init__(self):
        self._values: List[np.ndarray] = []
        self._ops: List[str] = []
        self._parents: List[Tuple[Tuple[int, VJP], ...]] = []
        self._named: Dict[int, str] = {}

    def __len__(self) -> int:
        return len(self._values)

    @property
    def ops(self) -> List[str]:
        return list(self._ops)

    def variable(self, value, name: Optional[str] = None) -> Var:
        """Register a differentiable input; named inputs are reported by backward()."""
        arr = np.array(value, dtype=np.float64)
        var = self._record("input", arr, ())
        if name is not None:
            if name in self._named.values():
                raise TapeError(f"variable {name!r} already on tape")
            self._named[var.index] = name
        return var

    def _record(self, op: str, value: np.ndarray, parents: Tuple[Tuple[int, VJP], ...]) -> Var:
        self._values.append(value)
        self._ops.append(op)
        self._parents.append(parents)
        return Var(self, len(self._values) - 1, value)

    def backward(self, loss: Var) -> Dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every named variable.

        Named variables that do not influence the loss get zero gradients.
        """
        if not isinstance(loss, Var) or loss.tape is not self:
            raise TapeError("loss must be a value recorded on this tape")
        if loss.value.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.value.shape}")

        grads: List[Optional[np.ndarray]] = [None] * len(self._values)
        grads[loss.index] = np.ones_like(loss.value)
        for idx in range(loss.index, -1, -1):
            g = grads[idx]
            if g is None:
                continue
            for parent, vjp in self._parents[idx]:
                contrib = vjp(g)
                grads[parent] = contrib if grads[parent] is None else grads[parent] + contrib
            if idx not in self._named:
                grads[idx] = None

        result = {}
        for idx, name in self._named.items():
            g = grads[idx]
            result[name] = np.zeros_like(self._values[idx]) if g is None else np.asarray(g, dtype=np.float64)
        return result


class ParameterStore:
    """Named dense arrays with shapes fixed at construction."""

    def __init__(self, arrays: Optional[Dict[str, np.ndarray]] = None):
        self._arrays: Dict[str, np.ndarray] = {}
        for name, value in (arrays or {}).items():
            self._arrays[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    @property
    def names(self) -> List[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: arr.shape for name, arr in self._arrays.items()}

    def set(self, name: str, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._arrays[name].shape:
            raise SceneValidationError(
                f"parameter {name!r} has fixed shape {self._arrays[name].shape}, got {value.shape}")
        self._arrays[name] = value.copy()

    def copy(self) -> "ParameterStore":
        return ParameterStore({name: arr.copy() for name, arr in self._arrays.items()})

    def subset(self, names: Iterable[str]) -> "ParameterStore":
        return ParameterStore({name: self._arrays[name].copy() for name in names})

    def num_parameters(self, names: Optional[Iterable[str]] = None) -> int:
        names = self.names if names is None else list(names)
        return int(sum(self._arrays[name].size for name in names))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(arr)) for arr in self._arrays.values())

    def zeros_like(self) -> Dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self._arrays.items()}

    def bind(self, tape: Optional[Tape], trainable: Iterable[str] = ()) -> Dict[str, ArrayLike]:
        """View of the store where trainable entries are tape variables."""
        trainable = set(trainable)
        unknown = trainable - set(self._arrays)
        if unknown:
            raise SceneValidationError(f"unknown parameters: {sorted(unknown)}")
        bound: Dict[str, ArrayLike] = {}
        for name, arr in self._arrays.items():
            if tape is not None and name in trainable:
                bound[name] = tape.variable(arr, name=name)
            else:
                bound[name] = arr
        return bound

    def equals(self, other: "ParameterStore") -> bool:
        """Bitwise equality of names, shapes and values."""
        if self.names != other.names:
            return False
        return all(np.array_equal(self._arrays[n], other._arrays[n]) for n in self.names)


# -- helpers -----------------------------------------------------------------

def value_of(x: ArrayLike) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs: ArrayLike) -> Optional[Tape]:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError("operands belong to different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back to an input's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _unary(op: str, x: ArrayLike, fn: Callable[[np.ndarray], np.ndarray],
           vjp: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]):
    if not isinstance(x, Var):
        return fn(np.asarray(x, dtype=np.float64))
    xv = x.value
    out = fn(xv)
    return x.tape._record(op, out, ((x.index, lambda g: vjp(g, xv, out)),))


def _binary(op: str, a: ArrayLike, b: ArrayLike, out: np.ndarray,
            vjp_a: Callable[[np.ndarray], np.ndarray], vjp_b: Callable[[np.ndarray], np.ndarray]):
    tape = _tape_of(a, b)
    if tape is None:
        return out
    parents = []
    if isinstance(a, Var):
        shape_a = a.value.shape
        parents.append((a.index, lambda g: _unbroadcast(vjp_a(g), shape_a)))
    if isinstance(b, Var):
        shape_b = b.value.shape
        parents.append((b.index, lambda g: _unbroadcast(vjp_b(g), shape_b)))
    return tape._record(op, out, tuple(parents))


# -- elementwise ---------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike):
    return _binary("add", a, b, value_of(a) + value_of(b), lambda g: g, lambda g: g)


def sub(a: ArrayLike, b: ArrayLike):
    return _binary("sub", a, b, value_of(a) - value_of(b), lambda g: g, lambda g: -g)


def mul(a: ArrayLike, b: ArrayLike):
    av, bv = value_of(a), value_of(b)
    return _binary("mul", a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def div(a: ArrayLike, b: ArrayLike):
    av, bv = value_of(a), value_of(b)
    return _binary("div", a, b, av / bv, lambda g: g / bv, lambda g: -g * av / (bv * bv))


def neg(x: ArrayLike):
    return _unary("neg", x, np.negative, lambda g, xv, out: -g)


def square(x: ArrayLike):
    return _unary("square", x, np.square, lambda g, xv, out: 2.0 * g * xv)


def sqrt(x: ArrayLike):
    return _unary("sqrt", x, np.sqrt, lambda g, xv, out: 0.5 * g / out)


def exp(x: ArrayLike):
    return _unary("exp", x, np.exp, lambda g, xv, out: g * out)


def log(x: ArrayLike):
    return _unary("log", x, np.log, lambda g, xv, out: g / xv)


def sin(x: ArrayLike):
    return _unary("sin", x, np.sin, lambda g, xv, out: g * np.cos(xv))


def cos(x: ArrayLike):
    return _unary("cos", x, np.cos, lambda g, xv, out: -g * np.sin(xv))


def relu(x: ArrayLike):
    return _unary("relu", x, lambda v: np.maximum(v, 0.0), lambda g, xv, out: g * (xv > 0.0))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: ArrayLike):
    return _unary("sigmoid", x, _sigmoid, lambda g, xv, out: g * out * (1.0 - out))


def softplus(x: ArrayLike):
    return _unary("softplus", x, lambda v: np.logaddexp(0.0, v), lambda g, xv, out: g * _sigmoid(xv))


def clamp_min(x: ArrayLike, floor: float):
    """max(x, floor) with a constant floor; gradient flows where x > floor."""
    return _unary("clamp_min", x, lambda v: np.maximum(v, floor), lambda g, xv, out: g * (xv > floor))


# -- linear algebra and structure ------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike):
    av, bv = value_of(a), value_of(b)
    out = av @ bv
    if _tape_of(a, b) is None:
        return out
    if av.ndim != 2 or bv.ndim != 2:
        raise TapeError("differentiable matmul supports 2-D operands only")
    return _binary("matmul", a, b, out, lambda g: g @ bv.T, lambda g: av.T @ g)


def cross(a: ArrayLike, b: ArrayLike):
    """Cross product along the last axis."""
    av, bv = value_of(a), value_of(b)
    return _binary("cross", a, b, np.cross(av, bv), lambda g: np.cross(bv, g), lambda g: np.cross(g, av))


def sum_(x: ArrayLike, axis=None, keepdims: bool = False):
    if not isinstance(x, Var):
        return np.sum(np.asarray(x, dtype=np.float64), axis=axis, keepdims=keepdims)
    xv = x.value
    out = np.sum(xv, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape)

    return x.tape._record("reduce_sum", np.asarray(out), ((x.index, vjp),))


def mean(x: ArrayLike, axis=None, keepdims: bool = False):
    xv = value_of(x)
    if axis is None:
        count = xv.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([xv.shape[a] for a in axes]))
    return div(sum_(x, axis=axis, keepdims=keepdims), float(count))


def broadcast_to(x: ArrayLike, shape: Tuple[int, ...]):
    if not isinstance(x, Var):
        return np.broadcast_to(np.asarray(x, dtype=np.float64), shape)
    src = x.value.shape
    return x.tape._record("broadcast", np.broadcast_to(x.value, shape),
                          ((x.index, lambda g: _unbroadcast(g, src)),))


def reshape(x: ArrayLike, shape: Tuple[int, ...]):
    if not isinstance(x, Var):
        return np.reshape(np.asarray(x, dtype=np.float64), shape)
    src = x.value.shape
    return x.tape._record("reshape", x.value.reshape(shape), ((x.index, lambda g: g.reshape(src)),))


def getitem(x: ArrayLike, idx):
    if not isinstance(x, Var):
        return np.asarray(x, dtype=np.float64)[idx]
    xv = x.value

    def vjp(g):
        full = np.zeros_like(xv)
        np.add.at(full, idx, g)
        return full

    return x.tape._record("index", xv[idx], ((x.index, vjp),))


def take_rows(x: ArrayLike, rows: np.ndarray):
    """Gather rows (axis 0) by integer index."""
    return getitem(x, (np.asarray(rows, dtype=np.int64),))


def concat(xs: Sequence[ArrayLike], axis: int = -1):
    values = [value_of(x) for x in xs]
    out = np.concatenate(values, axis=axis)
    tape = _tape_of(*xs)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])
    parents = []
    for i, x in enumerate(xs):
        if isinstance(x, Var):
            lo, hi = int(bounds[i]), int(bounds[i + 1])
            parents.append((x.index, lambda g, lo=lo, hi=hi: np.take(g, np.arange(lo, hi), axis=axis)))
    return tape._record("concat", out, tuple(parents))


def stack(xs: Sequence[ArrayLike], axis: int = -1):
    values = [value_of(x) for x in xs]
    out = np.stack(values, axis=axis)
    tape = _tape_of(*xs)
    if tape is None:
        return out
    parents = []
    for i, x in enumerate(xs):
        if isinstance(x, Var):
            parents.append((x.index, lambda g, i=i: np.take(g, i, axis=axis)))
    return tape._record("stack", out, tuple(parents))


def cumsum_exclusive(x: ArrayLike, axis: int = -1):
    """out[..., j] = sum_{k<j} x[..., k]."""
    def fwd(v):
        inclusive = np.cumsum(v, axis=axis)
        zero = np.zeros_like(np.take(v, [0], axis=axis))
        return np.concatenate([zero, np.take(inclusive, np.arange(v.shape[axis] - 1), axis=axis)], axis=axis)

    def vjp(g, xv, out):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return rev - g

    return _unary("cumsum", x, fwd, vjp)


def norm(x: ArrayLike, axis: int = -1, keepdims: bool = True, eps: float = 1e-12):
    """Euclidean norm with an epsilon guard inside the square root."""
    return sqrt(add(sum_(square(x), axis=axis, keepdims=keepdims), eps * eps))


def normalize(x: ArrayLike, axis: int = -1, eps: float = 1e-12):
    return div(x, norm(x, axis=axis, keepdims=True, eps=eps))
