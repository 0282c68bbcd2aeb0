"""Finite-difference verification of every gradient rule.

Every differentiable operation gets one registered check; composite modules
(conv, batch norm, attention blocks, the boundary detector, the full model
loss) get their own. Each check builds a scalar loss, runs backward, then
re-derives every input gradient by central differences and reports the worst
relative error. ``stop_gradient`` and ``binarize`` are non-differentiable by
contract, so their checks assert that no gradient leaks instead.

The ``corrupt`` hook multiplies one op's backward flow by 1.01 without
touching its forward value; the named check must then fail, which keeps the
harness itself honest.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tz
from .attention import FrameAttentionBlock
from .boundary import BoundaryDetector, GatedAttentionStack, IntraFrameEncoder
from .config import BamConfig
from .frontend import AttentivePool, WaveEncoder
from .model import SpliceLocalizer, total_loss
from .nn import BatchNorm1d, Conv1d, Linear
from .tensor import Tensor

FD_STEP = 1e-5
TOLERANCE = 1e-4

# names of tensor ops that carry a backward rule; each appears exactly once
# in the report
DIFFERENTIABLE_OPS = (
    "add", "sub", "mul", "div", "neg", "power", "matmul",
    "tanh", "sigmoid", "selu", "exp", "log",
    "softmax", "log_softmax", "bce_with_logits",
    "tsum", "tmean", "tmax",
    "reshape", "transpose", "concat", "take",
)
NON_DIFFERENTIABLE_OPS = ("stop_gradient", "binarize")

_corrupt_target = None


def _op(name):
    """Resolve a tensor op, wrapping its backward flow when corrupted."""
    fn = getattr(tz, name)
    if name != _corrupt_target:
        return fn

    def corrupted(*args, **kwargs):
        out = fn(*args, **kwargs)

        def backward(g):
            out.accumulate_grad(g * 1.01)

        return tz._make(out.data, (out,), backward)

    return corrupted


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return float(np.max(np.abs(a - n) / denom))


def fd_gradient(eval_loss, array, h=FD_STEP):
    """Central differences of a scalar function w.r.t. one array, in place."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = eval_loss()
        flat[i] = orig - h
        lo = eval_loss()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def max_err_over(loss_fn, tensors):
    """Worst relative error across the gradients of ``tensors``.

    ``loss_fn`` must rebuild the graph from the tensors' current data on
    every call; the tensors are mutated in place during differencing.
    """
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        numeric = fd_gradient(lambda: float(loss_fn().data), t.data)
        worst = max(worst, relative_error(a, numeric))
    return worst


def _leaf(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _projector(rng):
    """Scalarize tensors through random weights, so permuted or transposed
    gradients cannot cancel out. Weights are drawn once per output shape and
    cached: the loss must be the same function on every evaluation."""
    cache = {}

    def apply(out):
        w = cache.get(out.data.shape)
        if w is None:
            w = rng.normal(0.77, 1.0, size=out.data.shape)
            cache[out.data.shape] = w
        return tz.tsum(tz.mul(out, Tensor(w)))

    return apply


class CheckResult:
    __slots__ = ("module", "name", "err", "note")

    def __init__(self, module, name, err, note=""):
        self.module = module
        self.name = name
        self.err = float(err)
        self.note = note

    @property
    def ok(self):
        return self.err <= TOLERANCE


# -- per-op checks -------------------------------------------------------


def _check_binary(name, rng, a_shape, b_shape, b_lo=-1.0, b_hi=1.0):
    a = _leaf(rng, a_shape)
    b = _leaf(rng, b_shape, b_lo, b_hi)
    proj = _projector(rng)
    return max_err_over(lambda: proj(_op(name)(a, b)), [a, b])


def _check_unary(name, rng, in_shape, lo=-1.0, hi=1.0, **kwargs):
    a = _leaf(rng, in_shape, lo, hi)
    proj = _projector(rng)
    return max_err_over(lambda: proj(_op(name)(a, **kwargs)), [a])


def _check_mul(rng):
    # broadcast along the trailing head axis, like mask times attention map
    a = _leaf(rng, (3, 3, 2))
    b = _leaf(rng, (3, 3, 1))
    proj = _projector(rng)
    return max_err_over(lambda: proj(_op("mul")(a, b)), [a, b])


def _check_matmul(rng):
    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (4, 2))
    proj = _projector(rng)
    err = max_err_over(lambda: proj(_op("matmul")(a, b)), [a, b])
    # batched with a broadcast stack axis, the per-head aggregation layout
    c = _leaf(rng, (2, 2, 3, 3))
    d = _leaf(rng, (2, 1, 3, 4))
    err = max(err, max_err_over(lambda: proj(_op("matmul")(c, d)), [c, d]))
    return err


def _check_power(rng):
    a = _leaf(rng, (3, 3), 0.3, 2.0)
    proj = _projector(rng)
    return max_err_over(lambda: proj(_op("power")(a, 1.7)), [a])


def _check_softmax(rng):
    a = _leaf(rng, (2, 3, 3, 2))
    proj = _projector(rng)
    err = max_err_over(lambda: proj(_op("softmax")(a, axis=2)), [a])
    mask = (rng.uniform(size=(2, 3, 3, 1)) < 0.6).astype(np.float64)
    mask[:, np.arange(3), np.arange(3), :] = 1.0  # keep each row non-empty
    for mode in ("exclude", "renorm"):
        err = max(
            err,
            max_err_over(
                lambda m=mode: proj(_op("softmax")(a, axis=2, mask=mask, mask_mode=m)),
                [a],
            ),
        )
    return err


def _check_bce(rng):
    logits = _leaf(rng, (3, 4), -2.0, 2.0)
    targets = (rng.uniform(size=(3, 4)) < 0.5).astype(np.float64)
    return max_err_over(lambda: tz.tsum(_op("bce_with_logits")(logits, targets)), [logits])


def _check_reduction(name, rng):
    a = _leaf(rng, (3, 4))
    proj = _projector(rng)
    err = max_err_over(lambda: proj(_op(name)(a, axis=1, keepdims=True)), [a])
    return max(err, max_err_over(lambda: _op(name)(a), [a]))


def _check_tmax(rng):
    # well-separated values so the argmax cannot flip inside the FD step
    vals = rng.permutation(np.linspace(-1.0, 1.0, 12)).reshape(3, 4)
    a = Tensor(vals, requires_grad=True)
    proj = _projector(rng)
    return max_err_over(lambda: proj(_op("tmax")(a, axis=1)), [a])


def _check_concat(rng):
    a = _leaf(rng, (2, 3))
    b = _leaf(rng, (2, 2))
    proj = _projector(rng)
    return max_err_over(lambda: proj(_op("concat")([a, b], axis=1)), [a, b])


def _check_take(rng):
    a = _leaf(rng, (3, 5))
    index = (slice(None), slice(0, 3))
    proj = _projector(rng)
    return max_err_over(lambda: proj(_op("take")(a, index)), [a])


def _check_stop_gradient(rng):
    a = _leaf(rng, (3, 3))
    b = _leaf(rng, (3, 3))
    out = tz.tsum(tz.mul(_op("stop_gradient")(a), b))
    if not np.array_equal(out.data, (a.data * b.data).sum()):
        return 1.0
    out.backward()
    leaked = 0.0 if a.grad is None else float(np.abs(a.grad).max())
    wanted = relative_error(b.grad, a.data)
    return max(leaked, wanted)


def _check_binarize(rng):
    a = Tensor(np.array([0.1, 0.5, 0.49999, 0.9]), requires_grad=True)
    out = _op("binarize")(a, 0.5)
    if out._parents or out.requires_grad:
        return 1.0
    return 0.0 if np.array_equal(out.data, [0.0, 1.0, 0.0, 1.0]) else 1.0


# -- composite checks ----------------------------------------------------


def _module_tensors(module):
    return [p for _, p in module.parameters()]


def _check_linear(rng):
    layer = Linear(4, 3, rng)
    x = _leaf(rng, (5, 4))
    proj = _projector(rng)
    return max_err_over(lambda: proj(layer(x)), _module_tensors(layer) + [x])


def _check_conv1d(rng):
    layer = Conv1d(2, 3, kernel_size=3, rng=rng, stride=2, padding=1)
    x = _leaf(rng, (2, 2, 9))
    proj = _projector(rng)
    return max_err_over(lambda: proj(layer(x)), _module_tensors(layer) + [x])


def _check_batchnorm(rng):
    bn = BatchNorm1d(4)
    x = _leaf(rng, (3, 5, 4))
    proj = _projector(rng)
    err = max_err_over(lambda: proj(bn(x, training=True)), _module_tensors(bn) + [x])
    valid = np.ones((3, 5, 1))
    valid[1, 3:] = 0.0
    err = max(
        err,
        max_err_over(lambda: proj(bn(x, training=True, valid=valid)), _module_tensors(bn) + [x]),
    )
    bn.running_mean[:] = rng.uniform(-0.5, 0.5, size=4)
    bn.running_var[:] = rng.uniform(0.5, 1.5, size=4)
    err = max(err, max_err_over(lambda: proj(bn(x, training=False)), _module_tensors(bn) + [x]))
    return err


def _check_wave_encoder(rng):
    enc = WaveEncoder((3, 4), (4, 4), rng)
    x = _leaf(rng, (2, 32))
    proj = _projector(rng)
    return max_err_over(lambda: proj(enc(x)), _module_tensors(enc) + [x])


def _check_attentive_pool(rng):
    pool = AttentivePool(4, 2, rng)
    x = _leaf(rng, (2, 6, 4))
    proj = _projector(rng)
    err = max_err_over(lambda: proj(pool(x)), _module_tensors(pool) + [x])
    odd = _leaf(rng, (2, 5, 4))  # trailing partial window dropped
    err = max(err, max_err_over(lambda: proj(pool(odd)), _module_tensors(pool) + [odd]))
    return err


def _check_attention_block(rng):
    block = FrameAttentionBlock(4, 2, rng)
    feats = _leaf(rng, (2, 4, 4))
    valid = np.ones((2, 4))
    valid[1, 3] = 0.0
    mask = np.ones((2, 4, 4))
    mask[:, :2, 2:] = 0.0
    mask[:, 2:, :2] = 0.0
    proj = _projector(rng)
    return max_err_over(
        lambda: proj(block(feats, mask=mask, training=True, valid=valid)),
        _module_tensors(block) + [feats],
    )


def _check_intra_encoder(rng):
    enc = IntraFrameEncoder(4, 3, rng)
    feats = _leaf(rng, (2, 4, 4))
    valid = np.ones((2, 4))
    valid[0, 3] = 0.0
    proj = _projector(rng)
    return max_err_over(
        lambda: proj(enc(feats, training=True, valid=valid)),
        _module_tensors(enc) + [feats],
    )


def _check_boundary_detector(rng):
    det = BoundaryDetector(4, 2, rng, branches="be", intra_channels=3)
    feats = _leaf(rng, (2, 4, 4))
    valid = np.ones((2, 4))
    valid[1, 3] = 0.0

    proj = _projector(rng)

    def loss():
        out = det(feats, training=True, valid=valid)
        return tz.add(proj(out.logits), proj(out.enhanced))

    return max_err_over(loss, _module_tensors(det) + [feats])


def _check_gated_stack(rng):
    stack = GatedAttentionStack(4, 2, 2, rng)
    feats = _leaf(rng, (2, 4, 4))
    hard = np.array([[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
    valid = np.ones((2, 4))
    valid[1, 3] = 0.0
    proj = _projector(rng)
    return max_err_over(
        lambda: proj(stack(feats, hard_boundaries=hard, training=True, valid=valid)),
        _module_tensors(stack) + [feats],
    )


def tiny_config():
    """Smallest full model: 4 frames of 4 features from 128 input samples."""
    return BamConfig(
        d_model=4,
        heads=2,
        n_blocks=2,
        stride=2,
        variant="bfa_be",
        intra_channels=3,
        encoder_channels=(3, 4),
        encoder_widths=(4, 4),
        hop_ms=2.0,
        batch_size=2,
        epochs=1,
    )


def _check_model_loss(rng):
    model = SpliceLocalizer(tiny_config())
    x = rng.uniform(-1.0, 1.0, size=(2, 128))
    y = np.array([[0, 1, 1, 0], [1, 1, 0, 0]], dtype=np.float64)
    b = np.array([[0, 1, 0, 0], [0, 1, 0, 0]], dtype=np.float64)
    valid = np.ones((2, 4))
    valid[1, 3] = 0.0
    y[1, 3] = b[1, 3] = 0.0

    def loss():
        pred = model.forward(x, training=True, valid=valid, forced_boundaries=b)
        return total_loss(pred, y, b, lam=0.5)[0]

    return max_err_over(loss, [p for _, p in model.parameters()])


# -- registry ------------------------------------------------------------


def _op_checks():
    return [
        ("add", lambda rng: _check_binary("add", rng, (3, 4), (4,))),
        ("sub", lambda rng: _check_binary("sub", rng, (2, 3), (2, 3))),
        ("mul", _check_mul),
        ("div", lambda rng: _check_binary("div", rng, (3, 4), (3, 4), 0.5, 2.0)),
        ("neg", lambda rng: _check_unary("neg", rng, (2, 5))),
        ("power", _check_power),
        ("matmul", _check_matmul),
        ("tanh", lambda rng: _check_unary("tanh", rng, (3, 4))),
        ("sigmoid", lambda rng: _check_unary("sigmoid", rng, (3, 4))),
        ("selu", lambda rng: _check_unary("selu", rng, (4, 4), -2.0, 2.0)),
        ("exp", lambda rng: _check_unary("exp", rng, (3, 4))),
        ("log", lambda rng: _check_unary("log", rng, (3, 4), 0.5, 2.0)),
        ("softmax", _check_softmax),
        ("log_softmax", lambda rng: _check_unary("log_softmax", rng, (3, 5), -2.0, 2.0, axis=1)),
        ("bce_with_logits", _check_bce),
        ("tsum", lambda rng: _check_reduction("tsum", rng)),
        ("tmean", lambda rng: _check_reduction("tmean", rng)),
        ("tmax", _check_tmax),
        ("reshape", lambda rng: _check_unary("reshape", rng, (2, 6), shape=(3, 4))),
        ("transpose", lambda rng: _check_unary("transpose", rng, (2, 3, 4), axes=(1, 0, 2))),
        ("concat", _check_concat),
        ("take", _check_take),
        ("stop_gradient", _check_stop_gradient),
        ("binarize", _check_binarize),
    ]


def _composite_checks():
    return [
        ("nn", "linear", _check_linear),
        ("nn", "conv1d", _check_conv1d),
        ("nn", "batchnorm1d", _check_batchnorm),
        ("frontend", "wave_encoder", _check_wave_encoder),
        ("frontend", "attentive_pool", _check_attentive_pool),
        ("attention", "frame_attention_block", _check_attention_block),
        ("boundary", "intra_encoder", _check_intra_encoder),
        ("boundary", "boundary_detector", _check_boundary_detector),
        ("boundary", "gated_stack", _check_gated_stack),
        ("model", "total_loss_end_to_end", _check_model_loss),
    ]


def run_all(seed=0, corrupt=None):
    """Run every check; returns a list of CheckResult in report order."""
    global _corrupt_target
    if corrupt is not None and corrupt not in DIFFERENTIABLE_OPS:
        raise ValueError(
            f"unknown op {corrupt!r}; corruptible ops: {', '.join(DIFFERENTIABLE_OPS)}"
        )
    _corrupt_target = corrupt
    results = []
    try:
        for k, (name, fn) in enumerate(_op_checks()):
            rng = np.random.default_rng(seed * 1000 + k)
            note = "zero-grad contract" if name in NON_DIFFERENTIABLE_OPS else ""
            results.append(CheckResult("tensor_core", name, fn(rng), note))
        for k, (module, name, fn) in enumerate(_composite_checks()):
            rng = np.random.default_rng(seed * 1000 + 500 + k)
            results.append(CheckResult(module, name, fn(rng)))
    finally:
        _corrupt_target = None
    return results


def format_report(results):
    lines = [f"{'module':<12} {'check':<24} {'max rel err':>12}  status"]
    for r in results:
        status = "ok" if r.ok else "FAIL"
        note = f"  ({r.note})" if r.note else ""
        lines.append(f"{r.module:<12} {r.name:<24} {r.err:>12.3e}  {status}{note}")
    lines.append("")
    by_module = {}
    for r in results:
        by_module[r.module] = max(by_module.get(r.module, 0.0), r.err)
    for module, err in by_module.items():
        lines.append(f"module max: {module:<12} {err:.3e}")
    bad = [r for r in results if not r.ok]
    lines.append(
        "all gradient checks passed"
        if not bad
        else "FAILED: " + ", ".join(f"{r.module}.{r.name}" for r in bad)
    )
    return "\n".join(lines)
