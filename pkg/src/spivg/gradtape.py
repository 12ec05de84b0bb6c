"""Dense-tensor math with reverse-mode differentiation, AdamW, and the BCE loss.

Values are held in float64 so that finite-difference checks at h=1e-4 are
meaningful; parameters are snapped to the float32 grid after initialization
and after every optimizer step, which makes the float32 serialization format
below an exact round trip.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, expit

from .errors import ShapeError, SpivgError

_EXP_CLAMP = 700.0
_BCE_EPS = 1e-6
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def float32_grid(x: np.ndarray) -> np.ndarray:
    """Round to the nearest float32 value, keeping float64 storage."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)


class Tensor:
    """A dense array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", [self.shape], "expected a scalar tensor")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Op:
    __slots__ = ("inputs", "output", "backward_fn", "name")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


def _reduce_to(shape: tuple, g: np.ndarray) -> np.ndarray:
    """Sum g down to `shape` (inverse of the broadcasts used by add/sub/hadamard)."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    if len(shape) == 1 and g.ndim == 2 and g.shape[1] == shape[0]:
        return g.sum(axis=0)
    if len(shape) == 2 and shape[1] == 1 and g.ndim == 2 and g.shape[0] == shape[0]:
        return g.sum(axis=1, keepdims=True)
    raise ShapeError("reduce_to", [shape, g.shape], "unsupported gradient reduction")


def _broadcast_ok(op: str, a: np.ndarray, b: np.ndarray):
    """Shapes allowed for elementwise add/sub/hadamard: equal, scalar on either
    side, row vector against a matrix, or a column against a matrix."""
    if a.shape == b.shape:
        return
    for x, y in ((a, b), (b, a)):
        if x.shape == ():
            return
        if y.ndim == 2 and x.shape == (y.shape[1],):
            return
        if y.ndim == 2 and x.ndim == 2 and x.shape == (y.shape[0], 1):
            return
    raise ShapeError(op, [a.shape, b.shape])


class Tape:
    """Ordered record of forward ops; backward replays local rules in reverse.

    Tensors created by ops on this tape are registered so that `backward` can
    verify the loss was actually produced here.
    """

    def __init__(self):
        self._ops: list[_Op] = []
        self._produced: dict[int, Tensor] = {}
        self.last_backward_invocations = 0

    # -- recording ---------------------------------------------------------

    def record(self, name: str, inputs: tuple, out_data: np.ndarray, backward_fn) -> Tensor:
        """Record a (possibly fused) op. `backward_fn(out_grad)` must return one
        gradient array (or None) per input, in order."""
        out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
        self._ops.append(_Op(name, tuple(inputs), out, backward_fn))
        self._produced[id(out)] = out
        return out

    @property
    def num_ops(self) -> int:
        return len(self._ops)

    # -- primitive ops -----------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        ad, bd = a.data, b.data
        if ad.ndim == 0 or bd.ndim == 0 or ad.ndim > 2 or bd.ndim > 2:
            raise ShapeError("matmul", [ad.shape, bd.shape])
        if ad.shape[-1] != bd.shape[0]:
            raise ShapeError("matmul", [ad.shape, bd.shape], "inner dimensions differ")
        out = ad @ bd

        def backward(g):
            if ad.ndim == 2 and bd.ndim == 2:
                return g @ bd.T, ad.T @ g
            if ad.ndim == 1 and bd.ndim == 2:
                return bd @ g, np.outer(ad, g)
            if ad.ndim == 2 and bd.ndim == 1:
                return np.outer(g, bd), ad.T @ g
            return g * bd, g * ad

        return self.record("matmul", (a, b), out, backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        _broadcast_ok("add", a.data, b.data)
        out = a.data + b.data

        def backward(g):
            return _reduce_to(a.shape, g), _reduce_to(b.shape, g)

        return self.record("add", (a, b), out, backward)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        _broadcast_ok("sub", a.data, b.data)
        out = a.data - b.data

        def backward(g):
            return _reduce_to(a.shape, g), _reduce_to(b.shape, -g)

        return self.record("sub", (a, b), out, backward)

    def hadamard(self, a: Tensor, b: Tensor) -> Tensor:
        _broadcast_ok("hadamard", a.data, b.data)
        ad, bd = a.data, b.data
        out = ad * bd

        def backward(g):
            return _reduce_to(a.shape, g * bd), _reduce_to(b.shape, g * ad)

        return self.record("hadamard", (a, b), out, backward)

    def scalar_mul(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        out = a.data * c

        def backward(g):
            return (g * c,)

        return self.record("scalar_mul", (a,), out, backward)

    def mean(self, a: Tensor) -> Tensor:
        if a.size == 0:
            raise ShapeError("mean", [a.shape], "empty tensor")
        n = a.size
        out = np.asarray(a.data.sum(dtype=np.float64) / n)

        def backward(g):
            return (np.full_like(a.data, float(g) / n),)

        return self.record("mean", (a,), out, backward)

    def sum(self, a: Tensor) -> Tensor:
        out = np.asarray(a.data.sum(dtype=np.float64))

        def backward(g):
            return (np.full_like(a.data, float(g)),)

        return self.record("sum", (a,), out, backward)

    def sigmoid(self, a: Tensor) -> Tensor:
        out = expit(a.data)

        def backward(g):
            return (g * out * (1.0 - out),)

        return self.record("sigmoid", (a,), out, backward)

    def gelu(self, a: Tensor) -> Tensor:
        # Gaussian-CDF form: x * Phi(x).
        phi = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
        out = a.data * phi

        def backward(g):
            pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
            return (g * (phi + a.data * pdf),)

        return self.record("gelu", (a,), out, backward)

    def exp(self, a: Tensor) -> Tensor:
        inside = np.abs(a.data) <= _EXP_CLAMP
        out = np.exp(np.clip(a.data, -_EXP_CLAMP, _EXP_CLAMP))

        def backward(g):
            return (g * out * inside,)

        return self.record("exp", (a,), out, backward)

    def abs(self, a: Tensor) -> Tensor:
        out = np.abs(a.data)

        def backward(g):
            # subgradient 0 at the kink
            return (g * np.sign(a.data),)

        return self.record("abs", (a,), out, backward)

    def sqrt(self, a: Tensor) -> Tensor:
        if np.any(a.data < 0):
            raise SpivgError("sqrt: negative input")
        out = np.sqrt(a.data)

        def backward(g):
            return (np.where(out > 0, g / (2.0 * np.where(out > 0, out, 1.0)), 0.0),)

        return self.record("sqrt", (a,), out, backward)

    def reciprocal(self, a: Tensor) -> Tensor:
        if np.any(a.data == 0):
            raise SpivgError("reciprocal: zero input")
        out = 1.0 / a.data

        def backward(g):
            return (-g * out * out,)

        return self.record("reciprocal", (a,), out, backward)

    def l2_norm_rows(self, a: Tensor) -> Tensor:
        if a.data.ndim != 2:
            raise ShapeError("l2_norm_rows", [a.shape], "expected a matrix")
        out = np.sqrt(np.sum(a.data * a.data, axis=1, dtype=np.float64))

        def backward(g):
            safe = np.where(out > 0, out, 1.0)
            return ((g / safe)[:, None] * a.data * (out > 0)[:, None],)

        return self.record("l2_norm_rows", (a,), out, backward)

    def concat(self, tensors: list[Tensor], axis: int = 0) -> Tensor:
        if not tensors:
            raise ShapeError("concat", [], "no inputs")
        try:
            out = np.concatenate([t.data for t in tensors], axis=axis)
        except ValueError:
            raise ShapeError("concat", [t.shape for t in tensors]) from None
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            return tuple(
                np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
                for i in range(len(tensors))
            )

        return self.record("concat", tuple(tensors), out, backward)

    def slice_rows(self, a: Tensor, start: int, stop: int) -> Tensor:
        if a.data.ndim == 0:
            raise ShapeError("slice_rows", [a.shape], "cannot slice a scalar")
        n = a.data.shape[0]
        if not (0 <= start <= stop <= n):
            raise ShapeError("slice_rows", [a.shape], f"bad range [{start}, {stop})")
        out = a.data[start:stop].copy()

        def backward(g):
            full = np.zeros_like(a.data)
            full[start:stop] = g
            return (full,)

        return self.record("slice_rows", (a,), out, backward)

    def reshape(self, a: Tensor, shape) -> Tensor:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape, dtype=np.int64)) != a.size:
            raise ShapeError("reshape", [a.shape, shape], "size mismatch")
        out = a.data.reshape(shape).copy()

        def backward(g):
            return (g.reshape(a.shape),)

        return self.record("reshape", (a,), out, backward)

    def dropout(self, a: Tensor, keep_prob: float, rng: np.random.Generator | None = None) -> Tensor:
        if not 0.0 < keep_prob <= 1.0:
            raise SpivgError(f"dropout: keep probability {keep_prob} outside (0, 1]")
        if keep_prob == 1.0:
            out = a.data.copy()

            def backward(g):
                return (g,)

        else:
            if rng is None:
                raise SpivgError("dropout: keep_prob < 1 requires an RNG stream")
            mask = (rng.random(a.shape) < keep_prob) / keep_prob
            out = a.data * mask

            def backward(g):
                return (g * mask,)

        return self.record("dropout", (a,), out, backward)

    def bce_loss(self, pred: Tensor, target) -> Tensor:
        """Mean binary cross entropy; predictions are clamped to
        [1e-6, 1-1e-6] before the logs (the clamp is flat outside)."""
        y = np.asarray(target, dtype=np.float64)
        if pred.shape != y.shape:
            raise ShapeError("bce_loss", [pred.shape, y.shape])
        if pred.size == 0:
            raise ShapeError("bce_loss", [pred.shape], "empty sequence")
        in_range = (pred.data >= _BCE_EPS) & (pred.data <= 1.0 - _BCE_EPS)
        p = np.clip(pred.data, _BCE_EPS, 1.0 - _BCE_EPS)
        n = p.size
        out = np.asarray(-np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p), dtype=np.float64) / n)

        def backward(g):
            return (float(g) * in_range * (p - y) / (p * (1.0 - p)) / n,)

        return self.record("bce_loss", (pred,), out, backward)

    # -- dispatch ----------------------------------------------------------

    _KINDS = {
        "matmul": "matmul", "add": "add", "sub": "sub", "hadamard": "hadamard",
        "scalar_mul": "scalar_mul", "mean": "mean", "sum": "sum",
        "sigmoid": "sigmoid", "gelu": "gelu", "exp": "exp", "abs": "abs",
        "sqrt": "sqrt", "reciprocal": "reciprocal", "l2_norm_rows": "l2_norm_rows",
        "concat": "concat", "slice": "slice_rows", "reshape": "reshape",
        "dropout": "dropout",
    }

    def apply(self, kind: str, *args, **kwargs) -> Tensor:
        if kind not in self._KINDS:
            raise SpivgError(f"unknown op kind '{kind}'")
        return getattr(self, self._KINDS[kind])(*args, **kwargs)

    # -- backward ----------------------------------------------------------

    def backward(self, loss: Tensor) -> int:
        """Accumulate d(loss)/d(tensor) into `.grad` of every requires_grad
        tensor touched by this tape. Returns the number of backward-rule
        invocations (always the number of recorded ops)."""
        if loss.size != 1:
            raise ShapeError("backward", [loss.shape], "loss must be scalar")
        if id(loss) not in self._produced:
            raise SpivgError("backward: loss was not produced on this tape")
        adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        touched: dict[int, Tensor] = {id(loss): loss}
        invocations = 0
        for op in reversed(self._ops):
            g_out = adjoint.get(id(op.output))
            if g_out is None:
                g_out = np.zeros_like(op.output.data)
            grads = op.backward_fn(g_out)
            invocations += 1
            for t, g in zip(op.inputs, grads):
                if g is None:
                    continue
                touched[id(t)] = t
                acc = adjoint.get(id(t))
                if acc is None:
                    adjoint[id(t)] = np.array(g, dtype=np.float64, copy=True)
                else:
                    acc += g
        for tid, t in touched.items():
            if t.requires_grad:
                t.grad += adjoint.get(tid, 0.0)
        self.last_backward_invocations = invocations
        return invocations


def forward_op(tape: Tape, kind: str, *args, **kwargs) -> Tensor:
    """Record one op by kind name; see Tape.apply for the vocabulary."""
    return tape.apply(kind, *args, **kwargs)


def backward(tape: Tape, loss: Tensor) -> int:
    """Run the reverse pass of `tape` from a scalar loss."""
    return tape.backward(loss)


def bce_loss(pred: Tensor | np.ndarray, target, tape: Tape | None = None) -> Tensor:
    """Standalone BCE entry point; wraps plain arrays onto a throwaway tape."""
    t = tape if tape is not None else Tape()
    p = pred if isinstance(pred, Tensor) else Tensor(pred)
    return t.bce_loss(p, target)


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamWState:
    """Decoupled-weight-decay Adam with bias correction."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        # lr == 0 is allowed (frozen optimizer); everything else must be positive
        if self.lr < 0 or self.eps <= 0 or not (0 < self.beta1 < 1) or not (0 < self.beta2 < 1):
            raise SpivgError("adamw: hyperparameters must be positive (betas in (0,1))")
        if self.weight_decay < 0:
            raise SpivgError("adamw: negative weight decay")


def adamw_step(state: AdamWState, params: dict[str, Tensor], grads: dict[str, np.ndarray] | None = None):
    """One AdamW update over a path->Tensor dict. Gradients default to each
    parameter's `.grad` buffer. Parameters are snapped to the float32 grid so
    checkpoints round-trip exactly."""
    state.t += 1
    t = state.t
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for path, p in params.items():
        g = grads[path] if grads is not None else p.grad
        if g is None:
            raise SpivgError(f"adamw: no gradient for '{path}'")
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError("adamw_step", [p.shape, g.shape], f"parameter '{path}'")
        if path not in state.m:
            state.m[path] = np.zeros_like(p.data)
            state.v[path] = np.zeros_like(p.data)
        m, v = state.m[path], state.v[path]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        theta_prev = p.data
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data = float32_grid(theta_prev - update - state.lr * state.weight_decay * theta_prev)


def zero_grads(params: dict[str, Tensor]):
    for p in params.values():
        p.zero_grad()


# -- serialization ------------------------------------------------------------

FORMAT_VERSION = 1


def save_params(params: dict[str, Tensor]) -> dict:
    """Parameter dict -> JSON-ready document (little-endian float32 payloads)."""
    out = {}
    for path, p in params.items():
        payload = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        out[path] = {
            "shape": [int(s) for s in p.shape],
            "data": base64.b64encode(payload).decode("ascii"),
        }
    return {"format_version": FORMAT_VERSION, "params": out}


def load_params(doc: dict) -> dict[str, Tensor]:
    if doc.get("format_version") != FORMAT_VERSION:
        raise SpivgError(f"unsupported parameter format_version {doc.get('format_version')!r}")
    params = {}
    for path, entry in doc["params"].items():
        shape = tuple(int(s) for s in entry["shape"])
        raw = base64.b64decode(entry["data"])
        n = int(np.prod(shape, dtype=np.int64))
        if len(raw) != 4 * n:
            raise SpivgError(
                f"parameter '{path}': payload has {len(raw)} bytes, expected {4 * n}"
            )
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
        params[path] = Tensor(data)
    return params


def params_digest(params: dict[str, Tensor]) -> str:
    """Stable digest of parameter bytes, for mutation checks."""
    import hashlib

    h = hashlib.sha256()
    for path in sorted(params):
        h.update(path.encode())
        h.update(np.ascontiguousarray(params[path].data, dtype="<f8").tobytes())
    return h.hexdigest()
