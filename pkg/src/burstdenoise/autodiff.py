"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every tensor is an N x C x H x W grid of float64 (vectors and scalars are
carried as N x D x 1 x 1 and 1 x 1 x 1 x 1). Operations record nodes on a
tape in creation order; ``backward`` replays the tape in exact reverse
creation order. The operator set is deliberately small: it is the set the
rest of this package needs, nothing more.

Elementwise binary ops broadcast only over a batch or channel axis of
extent 1; height and width must always match exactly.

Fixed derivative conventions (so tests are deterministic):
  * d|x|/dx at 0 is 0
  * leaky_relu derivative at 0 is 1
  * sqrt gradient at 0 is treated as 0 (callers guard the value path)
"""

from __future__ import annotations

import numpy as np

from .errors import GraphError, NumericalError, ShapeError

# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


class Graph:
    """An ordered tape of recorded operations.

    Node inputs always precede the node itself, so iterating the node list
    backwards is a valid reverse-topological order.
    """

    def __init__(self):
        self.nodes = []
        self.done = False


class _Node:
    __slots__ = ("op", "inputs", "backward_fn", "out")

    def __init__(self, op, inputs, backward_fn):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.out = None


_graph = None
_recording = True


def active_graph() -> Graph:
    """Return the graph new operations record into, creating it if needed."""
    global _graph
    if _graph is None:
        _graph = Graph()
    return _graph


def reset_graph():
    """Discard the active graph. Tensors from it become stale for backward."""
    global _graph
    if _graph is not None:
        _graph.done = True
    _graph = None


class no_grad:
    """Context manager that disables tape recording (pure forward evaluation)."""

    def __enter__(self):
        global _recording
        self._prev = _recording
        _recording = False
        return self

    def __exit__(self, *exc):
        global _recording
        _recording = self._prev
        return False


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


def _as4d(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"tensor data must be 4-D (N,C,H,W), got ndim={arr.ndim} shape={arr.shape}")
    return arr


class Tensor:
    """A dense float64 grid, optionally tracked by the active graph.

    Leaf tensors (parameters, inputs) are created directly; non-leaf tensors
    come out of ops and carry a node id into the graph that produced them.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "graph", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = _as4d(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = None
        self.graph = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def numel(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A leaf view of the same data, outside any graph."""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Arithmetic sugar; scalars dispatch to the scalar ops.
    def __add__(self, other):
        return scalar_add(self, other) if np.isscalar(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return scalar_add(self, -other) if np.isscalar(other) else sub(self, other)

    def __mul__(self, other):
        return scalar_mul(self, other) if np.isscalar(other) else mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return scalar_div(self, other) if np.isscalar(other) else div(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)


def constant(data) -> Tensor:
    """A leaf tensor that never receives gradients."""
    return Tensor(data, requires_grad=False)


def record_op(op_name, out_data, inputs, backward_fn) -> Tensor:
    """Create the output tensor of an op, recording a node when grads are needed.

    ``backward_fn(grad_out)`` must return one array (or None) per input,
    each freshly allocated. This is the extension point for new ops.
    """
    needs = _recording and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        g = active_graph()
        node = _Node(op_name, inputs, backward_fn)
        node.out = out
        g.nodes.append(node)
        out.node_id = len(g.nodes) - 1
        out.graph = g
    return out


def backward(loss: Tensor):
    """Accumulate d(loss)/d(t) into every requires_grad tensor reachable from loss.

    The tape is consumed: a second backward on the same graph raises GraphError.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    g = loss.graph
    if g is None:
        raise GraphError("backward: loss is not attached to any graph (no recorded ops)")
    if g.done:
        raise GraphError("backward: graph already consumed; rebuild the forward pass first")

    pending = {loss.node_id: np.ones((1, 1, 1, 1))}
    for idx in range(loss.node_id, -1, -1):
        grad_out = pending.pop(idx, None)
        if grad_out is None:
            continue
        node = g.nodes[idx]
        node.out.grad = grad_out
        contribs = node.backward_fn(grad_out)
        for inp, contrib in zip(node.inputs, contribs):
            if contrib is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                continue
            if inp.graph is g and inp.node_id is not None:
                prev = pending.get(inp.node_id)
                pending[inp.node_id] = contrib if prev is None else prev + contrib
            else:
                # Leaf (or foreign-graph boundary): accumulate on the tensor.
                inp.grad = contrib if inp.grad is None else inp.grad + contrib
    g.done = True


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------


def _check_broadcast(op, a, b):
    for ax in range(4):
        ea, eb = a.shape[ax], b.shape[ax]
        if ea == eb:
            continue
        if ax >= 2 or (ea != 1 and eb != 1):
            raise ShapeError(
                f"{op}: shapes {a.shape} and {b.shape} differ on axis {ax}"
                + ("" if ax < 2 else " (height/width never broadcast)")
            )


def _unbroadcast(grad, shape):
    axes = tuple(ax for ax in range(4) if shape[ax] == 1 and grad.shape[ax] != 1)
    return grad.sum(axis=axes, keepdims=True) if axes else grad


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    return record_op(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    return record_op(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    return record_op(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("div", a, b)
    bd = b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / bd

    def bwd(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (_unbroadcast(g / bd, a.shape),
                    _unbroadcast(-g * a.data / (bd * bd), b.shape))

    return record_op("div", out, (a, b), bwd)


def scalar_add(x: Tensor, c) -> Tensor:
    c = float(c)
    return record_op("scalar_add", x.data + c, (x,), lambda g: (g.copy(),))


def scalar_mul(x: Tensor, c) -> Tensor:
    c = float(c)
    return record_op("scalar_mul", x.data * c, (x,), lambda g: (g * c,))


def scalar_div(x: Tensor, c) -> Tensor:
    """Elementwise x / c with true (correctly rounded) division."""
    c = float(c)
    return record_op("scalar_div", x.data / c, (x,), lambda g: (g / c,))


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)  # sign(0) = 0
    return record_op("abs", np.abs(x.data), (x,), lambda g: (g * sign,))


def square(x: Tensor) -> Tensor:
    return record_op("square", x.data * x.data, (x,), lambda g: (g * (2.0 * x.data),))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    safe = np.where(out > 0.0, out, 1.0)
    grad_mask = (out > 0.0).astype(np.float64)
    return record_op("sqrt", out, (x,), lambda g: (g * (0.5 / safe) * grad_mask,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    if not lo <= hi:
        raise ShapeError(f"clamp: lo {lo} must not exceed hi {hi}")
    inside = ((x.data >= lo) & (x.data <= hi)).astype(np.float64)
    return record_op("clamp", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ShapeError(f"leaky_relu: slope must be in [0, 1), got {slope}")
    pos = x.data >= 0.0  # derivative at exactly 0 is 1
    local = np.where(pos, 1.0, slope)
    return record_op(
        "leaky_relu", np.where(pos, x.data, slope * x.data), (x,),
        lambda g: (g * local,),
    )


def where_mask(mask, x: Tensor, fill: float) -> Tensor:
    """y = x where mask else fill; mask is a constant boolean/0-1 array."""
    m = np.asarray(mask)
    if m.shape != x.shape:
        raise ShapeError(f"where_mask: mask shape {m.shape} != tensor shape {x.shape}")
    mf = m.astype(np.float64)
    return record_op(
        "where_mask", np.where(m.astype(bool), x.data, float(fill)), (x,),
        lambda g: (g * mf,),
    )


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def _check_axes(op, axes):
    axes = tuple(int(a) for a in axes)
    if any(a < 0 or a > 3 for a in axes) or len(set(axes)) != len(axes):
        raise ShapeError(f"{op}: axes must be distinct values in 0..3, got {axes}")
    return axes


def reduce_sum(x: Tensor, axes=(0, 1, 2, 3)) -> Tensor:
    axes = _check_axes("sum", axes)
    shape = x.shape
    return record_op(
        "sum", x.data.sum(axis=axes, keepdims=True), (x,),
        lambda g: (np.broadcast_to(g, shape).copy(),),
    )


def reduce_mean(x: Tensor, axes=(0, 1, 2, 3)) -> Tensor:
    axes = _check_axes("mean", axes)
    shape = x.shape
    count = 1
    for a in axes:
        count *= shape[a]
    return record_op(
        "mean", x.data.sum(axis=axes, keepdims=True) / count, (x,),
        lambda g: (np.broadcast_to(g / count, shape).copy(),),
    )


# ---------------------------------------------------------------------------
# Structural ops
# ---------------------------------------------------------------------------


def concat(tensors, axis=1) -> Tensor:
    """Concatenate along the batch (0) or channel (1) axis."""
    if axis not in (0, 1):
        raise ShapeError(f"concat: only axes 0 and 1 are supported, got {axis}")
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    base = tensors[0].shape
    for t in tensors[1:]:
        for ax in range(4):
            if ax != axis and t.shape[ax] != base[ax]:
                raise ShapeError(
                    f"concat: shapes {base} and {t.shape} differ on non-concat axis {ax}"
                )
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        out = []
        for i in range(len(sizes)):
            sl = [slice(None)] * 4
            sl[axis] = slice(offsets[i], offsets[i + 1])
            out.append(g[tuple(sl)].copy())
        return tuple(out)

    return record_op("concat", np.concatenate([t.data for t in tensors], axis=axis),
                     tuple(tensors), bwd)


def upsample_nearest2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return record_op(
        "upsample2x", out, (x,),
        lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),),
    )


# ---------------------------------------------------------------------------
# Convolution / linear / cross-entropy
# ---------------------------------------------------------------------------


def _im2col(xp, k, stride, hout, wout):
    n, cin = xp.shape[:2]
    cols = np.empty((n, cin, k, k, hout, wout), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * hout : stride,
                                  j : j + stride * wout : stride]
    return cols.reshape(n, cin * k * k, hout * wout)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation with square odd kernel, plus per-channel bias.

    x: (N, Cin, H, W); weight: (Cout, Cin, k, k); bias: (1, Cout, 1, 1).
    Output spatial size is floor((H + 2*padding - k)/stride) + 1.
    """
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"conv2d: kernel must be square, got {k}x{k2}")
    if k % 2 != 1:
        raise ShapeError(f"conv2d: kernel size must be odd, got {k}")
    if wcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but weight expects {wcin}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if bias is not None and bias.shape != (1, cout, 1, 1):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != (1, {cout}, 1, 1)")
    hout = (h + 2 * padding - k) // stride + 1
    wout = (w + 2 * padding - k) // stride + 1
    if hout < 1 or wout < 1:
        raise ShapeError(f"conv2d: kernel {k} exceeds padded input {h + 2 * padding}x{w + 2 * padding}")

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, k, stride, hout, wout)          # (N, Cin*k*k, Hout*Wout)
    wmat = weight.data.reshape(cout, cin * k * k)
    out = np.matmul(wmat, cols).reshape(n, cout, hout, wout)
    if bias is not None:
        out = out + bias.data

    def bwd(g):
        gm = g.reshape(n, cout, hout * wout)
        dw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        dcols = np.matmul(wmat.T, gm).reshape(n, cin, k, k, hout, wout)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + stride * hout : stride,
                    j : j + stride * wout : stride] += dcols[:, :, i, j]
        dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        db = None if bias is None else g.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1)
        return (dx.copy() if padding else dx, dw, db)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    if bias is None:
        return record_op("conv2d", out, inputs, lambda g: bwd(g)[:2])
    return record_op("conv2d", out, inputs, bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor = None) -> Tensor:
    """y = W x + b per batch row; x is flattened to (N, C*H*W).

    weight: (Dout, D, 1, 1); bias: (1, Dout, 1, 1). Output is (N, Dout, 1, 1).
    """
    n = x.shape[0]
    d = x.numel // n
    dout, wd = weight.shape[:2]
    if weight.shape[2:] != (1, 1):
        raise ShapeError(f"linear: weight must be (Dout, D, 1, 1), got {weight.shape}")
    if wd != d:
        raise ShapeError(f"linear: input flattens to {d} features but weight expects {wd}")
    if bias is not None and bias.shape != (1, dout, 1, 1):
        raise ShapeError(f"linear: bias shape {bias.shape} != (1, {dout}, 1, 1)")
    x2 = x.data.reshape(n, d)
    w2 = weight.data.reshape(dout, d)
    out = x2 @ w2.T
    if bias is not None:
        out = out + bias.data.reshape(1, dout)

    def bwd(g):
        g2 = g.reshape(n, dout)
        dx = (g2 @ w2).reshape(x.shape)
        dw = (g2.T @ x2).reshape(weight.shape)
        db = None if bias is None else g2.sum(axis=0).reshape(1, dout, 1, 1)
        return (dx, dw, db)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    if bias is None:
        return record_op("linear", out.reshape(n, dout, 1, 1), inputs, lambda g: bwd(g)[:2])
    return record_op("linear", out.reshape(n, dout, 1, 1), inputs, bwd)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], two classes only.

    logits: (N, 2, 1, 1); labels: int array of 0 (clean) / 1 (noisy).
    Stabilized by max subtraction; saturated logits do not overflow.
    """
    n, c = logits.shape[:2]
    if c != 2 or logits.shape[2:] != (1, 1):
        raise ShapeError(f"softmax_cross_entropy: logits must be (N, 2, 1, 1), got {logits.shape}")
    lab = np.asarray(labels)
    if lab.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: labels shape {lab.shape} != ({n},)")
    if lab.dtype.kind not in "iu" or lab.min() < 0 or lab.max() > 1:
        raise ShapeError("softmax_cross_entropy: labels must be integers in {0, 1}")
    z = logits.data.reshape(n, 2)
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    sez = ez.sum(axis=1, keepdims=True)
    logp = (z - m) - np.log(sez)
    loss = -logp[np.arange(n), lab].mean()
    probs = ez / sez

    def bwd(g):
        dz = probs.copy()
        dz[np.arange(n), lab] -= 1.0
        dz *= float(g.reshape(())) / n
        return (dz.reshape(n, 2, 1, 1),)

    return record_op("softmax_ce", np.full((1, 1, 1, 1), loss), (logits,), bwd)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


class GradcheckReport:
    """Outcome of comparing analytic gradients with central differences."""

    def __init__(self, max_rel_error, tolerance, checked, failures):
        self.max_rel_error = max_rel_error
        self.tolerance = tolerance
        self.checked = checked
        self.failures = failures  # list of (input index, flat index, analytic, numeric, rel)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __repr__(self):
        state = "PASS" if self.passed else "FAIL"
        return (f"GradcheckReport({state}, max_rel_error={self.max_rel_error:.3e}, "
                f"tol={self.tolerance:.1e}, coords={self.checked})")


def _eval_scalar(f, inputs, where):
    with no_grad():
        out = f(*inputs)
    v = out.item()
    if not np.isfinite(v):
        raise NumericalError(f"gradcheck: non-finite value {v} {where}")
    return v


def gradcheck(f, inputs, step=1e-5, tol=1e-4, max_coords=None, rng=None,
              rel_floor=1e-3, refine=True) -> GradcheckReport:
    """Compare analytic gradients of scalar-valued f against central differences.

    Checks every requires_grad input coordinate, or a random subset of
    ``max_coords`` per input when set. Relative error uses
    |a - n| / max(|a|, |n|, rel_floor), so near-zero entries are compared
    at the floor scale. When ``refine`` is on, a failing coordinate is
    re-measured at step/10: activation-kink crossings shrink with the step
    while genuine backward bugs persist.
    """
    if step <= 0:
        raise ShapeError(f"gradcheck: step must be positive, got {step}")
    inputs = list(inputs)
    reset_graph()
    out = f(*inputs)
    if out.shape != (1, 1, 1, 1):
        raise ShapeError(f"gradcheck: f must return a scalar tensor, got {out.shape}")
    if not np.isfinite(out.item()):
        raise NumericalError("gradcheck: f returned a non-finite value at the base point")
    zero_grads([t for t in inputs if isinstance(t, Tensor)])
    out.backward()
    analytic = []
    for t in inputs:
        if isinstance(t, Tensor) and t.requires_grad:
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if not np.isfinite(g).all():
                raise NumericalError("gradcheck: analytic gradient is non-finite")
            analytic.append(g)
        else:
            analytic.append(None)
    reset_graph()

    if rng is None:
        rng = np.random.default_rng(0)
    max_rel = 0.0
    checked = 0
    failures = []
    for ti, t in enumerate(inputs):
        if analytic[ti] is None:
            continue
        flat = t.data.reshape(-1)
        n_coords = flat.size
        if max_coords is not None and n_coords > max_coords:
            coords = rng.choice(n_coords, size=max_coords, replace=False)
        else:
            coords = range(n_coords)
        ga = analytic[ti].reshape(-1)
        for ci in coords:
            orig = flat[ci]

            def numeric(h):
                flat[ci] = orig + h
                fp = _eval_scalar(f, inputs, f"at input {ti} coord {ci} (+{h:g})")
                flat[ci] = orig - h
                fm = _eval_scalar(f, inputs, f"at input {ti} coord {ci} (-{h:g})")
                flat[ci] = orig
                return (fp - fm) / (2.0 * h)

            num = numeric(step)
            a = ga[ci]
            rel = abs(a - num) / max(abs(a), abs(num), rel_floor)
            if rel >= tol and refine:
                num = numeric(step / 10.0)
                rel = abs(a - num) / max(abs(a), abs(num), rel_floor)
            checked += 1
            if rel > max_rel:
                max_rel = rel
            if rel >= tol:
                failures.append((ti, int(ci), float(a), float(num), float(rel)))
    zero_grads([t for t in inputs if isinstance(t, Tensor)])
    return GradcheckReport(max_rel, tol, checked, failures)
