"""Central finite-difference gradient checks for ops, blocks and the full model.

Every check runs in float64. A non-scalar output ``y`` is reduced to the
scalar ``sum(y * r)`` with a fixed random ``r`` so every output element
contributes to the probed gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import functional as F
from . import tensor as T
from .blocks import CCS, DSHGAM, MCAEM, MSFF, RGCA, SS2D, ChannelAttention, LEVSSBlock, SpatialAttention, VSSBlock
from .graph import GATLayer, build_grid_graph, gat_forward
from .losses import LossWeights, bce_loss, iou_loss, total_loss
from .model import GCRPNet, ModelConfig
from .nn import Module
from .scan import less2d_orders, scan_gather, scan_merge, scan_merge_stacked
from .ssm import SSMParams, expm1_ratio, linear_recurrence, selective_scan, zoh_discretize
from .tensor import Tensor, no_grad

STEP = 1e-4
OP_TOL = 1e-4
MODEL_TOL = 1e-3
# denominators below this are treated as this, so near-zero gradients are
# compared on an absolute scale instead of amplifying truncation noise
REL_FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel: float
    max_abs: float
    checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel {self.max_rel:.2e} (tol {self.tol:.0e}), {self.checked} entries"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def check_leaves(name: str, loss_fn: Callable[[], Tensor], leaves: Sequence[Tensor],
                 rng: np.random.Generator, per_leaf: int | None = 16, total: int | None = None,
                 step: float = STEP, tol: float = OP_TOL) -> CheckResult:
    """Compare analytic and central-difference gradients of ``loss_fn()`` w.r.t. ``leaves``.

    ``loss_fn`` must rebuild the graph from the current leaf data. Either
    ``per_leaf`` entries are sampled from every leaf, or ``total`` entries
    are sampled uniformly over all leaf elements.
    """
    for leaf in leaves:
        leaf.grad = None
        leaf.requires_grad = True
    out = loss_fn()
    out.backward()
    grads = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    probes: list[tuple[int, int]] = []
    if total is not None:
        sizes = np.array([leaf.data.size for leaf in leaves])
        flat = rng.choice(sizes.sum(), size=min(total, int(sizes.sum())), replace=False)
        bounds = np.cumsum(sizes)
        for f in np.sort(flat):
            li = int(np.searchsorted(bounds, f, side="right"))
            probes.append((li, int(f - (bounds[li - 1] if li else 0))))
    else:
        for li, leaf in enumerate(leaves):
            size = leaf.data.size
            picks = range(size) if per_leaf is None or size <= per_leaf else rng.choice(size, per_leaf, replace=False)
            probes += [(li, int(i)) for i in picks]

    analytic, numeric = [], []
    with no_grad():
        for li, i in probes:
            flat = leaves[li].data.reshape(-1)
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn().data)
            flat[i] = orig - step
            down = float(loss_fn().data)
            flat[i] = orig
            numeric.append((up - down) / (2 * step))
            analytic.append(float(grads[li].reshape(-1)[i]))
    a, n = np.array(analytic), np.array(numeric)
    rel = relative_error(a, n)
    return CheckResult(name, float(rel.max(initial=0.0)), float(np.abs(a - n).max(initial=0.0)), len(probes), tol)


def check_function(name: str, fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], rng: np.random.Generator,
                   extra: Sequence[Tensor] = (), per_leaf: int | None = 16, tol: float = OP_TOL) -> CheckResult:
    """Gradient check of ``fn(*inputs)`` w.r.t. the inputs and any ``extra`` parameter tensors."""
    leaves = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    probe_out = fn(*leaves)
    weights = rng.standard_normal(probe_out.shape)

    def loss():
        y = fn(*leaves)
        return y if y.ndim == 0 else T.tsum(y * weights)

    return check_leaves(name, loss, leaves + list(extra), rng, per_leaf=per_leaf, tol=tol)


def check_module(name: str, module: Module, call: Callable[[Module, list[Tensor]], Tensor],
                 inputs: Sequence[np.ndarray], rng: np.random.Generator, per_leaf: int = 6,
                 tol: float = OP_TOL) -> CheckResult:
    return check_function(name, lambda *xs: call(module, list(xs)), inputs, rng,
                          extra=module.parameters(), per_leaf=per_leaf, tol=tol)


# ---------------------------------------------------------------------------
# op registry
# ---------------------------------------------------------------------------


def _away_from_zero(rng, shape, margin=0.05):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(margin, 1.5, size=shape)


def _positive(rng, shape):
    return rng.uniform(0.3, 2.0, size=shape)


def _rand_shape(rng, ndim=3, lo=1, hi=4):
    return tuple(int(v) for v in rng.integers(lo, hi + 1, size=ndim))


def _distinct(rng, shape):
    # well separated values so max/argmax ties cannot flip under the probe step
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.1 + rng.uniform(0, 0.01, n)).reshape(shape) - n * 0.05


OpCase = Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[np.ndarray]]]


def _case_binary(op):
    def make(rng):
        s = _rand_shape(rng)
        t = tuple(1 if rng.random() < 0.3 else d for d in s)  # broadcasting
        return op, [rng.standard_normal(s), _away_from_zero(rng, t) if op is T.div else rng.standard_normal(t)]
    return make


def _case_unary(op, gen=None):
    def make(rng):
        s = _rand_shape(rng)
        return op, [(gen or (lambda r, sh: r.standard_normal(sh)))(rng, s)]
    return make


def _case_reduce(op):
    def make(rng):
        s = _rand_shape(rng)
        axis = int(rng.integers(0, 3))
        keep = bool(rng.random() < 0.5)
        gen = _distinct if op is T.tmax else (lambda r, sh: r.standard_normal(sh))
        return (lambda x: op(x, axis=axis, keepdims=keep)), [gen(rng, s)]
    return make


def _case_matmul(rng):
    b, m, k, n = _rand_shape(rng, 4)
    return T.matmul, [rng.standard_normal((b, m, k)), rng.standard_normal((k, n))]


def _case_shape_ops(rng):
    s = _rand_shape(rng, 3, 2, 4)
    perm = tuple(rng.permutation(3))
    idx = np.s_[1:, :, ::-1]

    def fn(x):
        y = T.transpose(x, perm).reshape(-1)
        z = T.getitem(x, idx)
        return T.concat([y, z.reshape(-1)], axis=0)
    return fn, [rng.standard_normal(s)]


def _case_stack_split(rng):
    s = _rand_shape(rng, 2, 2, 4)

    def fn(a, b):
        st = T.stack([a, b], axis=1)
        p, q = T.split(st, [1, st.shape[-1] - 1], axis=-1)
        return q * 2.0 + T.tsum(p)
    return fn, [rng.standard_normal(s), rng.standard_normal(s)]


def _case_take(rng):
    s = _rand_shape(rng, 3, 2, 4)
    idx = rng.integers(0, s[1], size=(s[1], 3))
    return (lambda x: T.take(x, idx, axis=1)), [rng.standard_normal(s)]


def _case_where(rng):
    s = _rand_shape(rng)
    cond = rng.random(s) < 0.5
    return (lambda a, b: T.where(cond, a, b)), [rng.standard_normal(s), rng.standard_normal(s)]


def _case_softmax(rng):
    s = _rand_shape(rng, 3, 2, 5)
    mask = rng.random(s) < 0.7
    mask[..., 0] = True
    return (lambda x: F.softmax(x, axis=-1, mask=mask)), [rng.standard_normal(s)]


def _case_layer_norm(rng):
    s = _rand_shape(rng, 3, 2, 5)
    axis = int(rng.choice([1, -1]))
    c = s[axis]
    return (lambda x, w, b: F.layer_norm(x, axis=axis, weight=w, bias=b)), \
        [rng.standard_normal(s), 1 + 0.1 * rng.standard_normal(c), rng.standard_normal(c)]


def _case_conv(rng):
    n, cin, cout = _rand_shape(rng, 3, 1, 3)
    k = int(rng.choice([1, 2, 3]))
    stride = int(rng.choice([1, 2]))
    pad = int(rng.integers(0, k))
    h, w = (int(v) for v in rng.integers(k + 1, 7, size=2))
    return (lambda x, wt, b: F.conv2d(x, wt, b, stride=stride, padding=pad)), \
        [rng.standard_normal((n, cin, h, w)), rng.standard_normal((cout, cin, k, k)), rng.standard_normal(cout)]


def _case_conv_t(rng):
    n, cin, cout = _rand_shape(rng, 3, 1, 3)
    k = int(rng.choice([1, 2, 3]))
    stride = int(rng.choice([1, 2]))
    h, w = (int(v) for v in rng.integers(1, 5, size=2))
    return (lambda x, wt, b: F.conv2d_transpose(x, wt, b, stride=stride)), \
        [rng.standard_normal((n, cin, h, w)), rng.standard_normal((cin, cout, k, k)), rng.standard_normal(cout)]


def _case_dwconv(rng):
    n, c = _rand_shape(rng, 2, 1, 3)
    k = int(rng.choice([1, 3, 5]))
    h, w = (int(v) for v in rng.integers(2, 7, size=2))
    return F.depthwise_conv2d, [rng.standard_normal((n, c, h, w)), rng.standard_normal((c, 1, k, k)),
                                rng.standard_normal(c)]


def _case_resize(rng):
    mode = str(rng.choice(["bilinear", "nearest", "area"]))
    h, w = (int(v) for v in rng.integers(2, 7, size=2))
    if mode == "area":
        th, tw = max(1, h // 2), max(1, w // 2)
        h, w = 2 * th, 2 * tw
    else:
        th, tw = (int(v) for v in rng.integers(1, 9, size=2))
    return (lambda x: F.resize(x, th, tw, mode)), [rng.standard_normal((1, 2, h, w))]


def _case_pools(rng):
    n, c = _rand_shape(rng, 2, 1, 3)
    h, w = (int(v) for v in rng.integers(1, 5, size=2))

    def fn(x):
        return T.concat([F.global_avg_pool(x), F.global_max_pool(x), F.avg_pool(x, 1)[:, :, :1, :1]], axis=1)
    return fn, [_distinct(rng, (n, c, h, w))]


def _case_linear(rng):
    b, din, dout = _rand_shape(rng, 3, 1, 5)
    return F.linear, [rng.standard_normal((b, 2, din)), rng.standard_normal((din, dout)), rng.standard_normal(dout)]


def _case_recurrence(method):
    def make(rng):
        L = int(rng.integers(1, 9))
        d = int(rng.integers(1, 4))
        return (lambda a, b: linear_recurrence(a, b, axis=0, method=method)), \
            [rng.uniform(0.1, 0.95, (L, d)), rng.standard_normal((L, d))]
    return make


def _case_expm1_ratio(rng):
    s = _rand_shape(rng, 2)
    z = -rng.uniform(1e-3, 3.0, s)
    return expm1_ratio, [z]


def _case_zoh(rng):
    d, n = _rand_shape(rng, 2, 1, 4)

    def fn(a_log, b, dt):
        disc = zoh_discretize(-T.exp(a_log), b, dt.reshape(d, 1))
        return T.concat([disc.abar, disc.bbar], axis=-1)
    return fn, [rng.standard_normal((d, n)) * 0.5, rng.standard_normal((d, n)), rng.uniform(0.05, 1.0, d)]


def _case_selective_scan(method):
    def make(rng):
        L = int(rng.integers(1, 7))
        d, n = (int(v) for v in rng.integers(1, 4, size=2))
        p = SSMParams.init(d, n, rng, dtype=np.float64, dt_min=0.05, dt_max=0.5)

        def fn(x, a_log, x_proj, dt_proj, dt_bias):
            return selective_scan(x, SSMParams(a_log, x_proj, dt_proj, dt_bias), method=method)
        return fn, [rng.standard_normal((2, L, d)), p.a_log.data, p.x_proj.data, p.dt_proj.data, p.dt_bias.data]
    return make


def _case_scan_orders(rng):
    g = int(rng.choice([1, 2]))
    h, w = (g * int(v) for v in rng.integers(1, 3, size=2))
    orders = less2d_orders(h, w, g)
    d = int(rng.integers(1, 3))
    r = rng.standard_normal((1, 4, h * w, d))

    def fn(x):
        stacked = scan_gather(x, orders, axis=1)
        merged = scan_merge_stacked(stacked * r, orders, axis=1)
        listed = scan_merge([stacked[:, k] for k in range(4)], orders, axis=1)
        return merged + listed
    return fn, [rng.standard_normal((1, h * w, d))]


def _case_gat(rng):
    h, w = (int(v) for v in rng.integers(1, 5, size=2))
    d = int(rng.integers(1, 4))
    conn = int(rng.choice([4, 8]))
    graph = build_grid_graph(h, w, conn)
    layer = GATLayer(d, rng, std=0.5, dtype=np.float64)
    layer.attn.data[:] = rng.standard_normal(2 * d)

    def fn(x, wt, att):
        layer.weight, layer.attn = wt, att
        return gat_forward(x, layer, graph)
    return fn, [rng.standard_normal((2, h * w, d)), layer.weight.data.copy(), layer.attn.data.copy()]


def _case_losses(rng):
    n = int(rng.integers(1, 3))
    h, w = (int(v) for v in rng.integers(2, 5, size=2))
    g = (rng.random((n, 1, h, w)) < 0.5).astype(np.float64)

    def fn(*ps):
        probs = [F.sigmoid(p) for p in ps]
        return total_loss(probs, g, LossWeights()) + bce_loss(probs[0], g) + iou_loss(probs[1], g)
    return fn, [rng.standard_normal((n, 1, h, w)) for _ in range(4)]


OP_CASES: dict[str, OpCase] = {
    "add": _case_binary(T.add),
    "sub": _case_binary(T.sub),
    "mul": _case_binary(T.mul),
    "div": _case_binary(T.div),
    "neg": _case_unary(T.neg),
    "power": _case_unary(lambda x: T.power(x, 1.7), _positive),
    "exp": _case_unary(T.exp),
    "log": _case_unary(T.log, _positive),
    "sqrt": _case_unary(T.sqrt, _positive),
    "clip": _case_unary(lambda x: T.clip(x, -0.5, 0.5), _away_from_zero),
    "sum": _case_reduce(T.tsum),
    "mean": _case_reduce(T.mean),
    "max": _case_reduce(T.tmax),
    "matmul": _case_matmul,
    "shape_ops": _case_shape_ops,
    "stack_split": _case_stack_split,
    "take": _case_take,
    "where": _case_where,
    "sigmoid": _case_unary(F.sigmoid),
    "silu": _case_unary(F.silu),
    "relu": _case_unary(F.relu, _away_from_zero),
    "leaky_relu": _case_unary(lambda x: F.leaky_relu(x, 0.2), _away_from_zero),
    "elu": _case_unary(F.elu, _away_from_zero),
    "softplus": _case_unary(F.softplus),
    "softmax": _case_softmax,
    "layer_norm": _case_layer_norm,
    "conv2d": _case_conv,
    "conv2d_transpose": _case_conv_t,
    "depthwise_conv2d": _case_dwconv,
    "resize": _case_resize,
    "pools": _case_pools,
    "linear": _case_linear,
    "recurrence_sequential": _case_recurrence("sequential"),
    "recurrence_parallel": _case_recurrence("parallel"),
    "expm1_ratio": _case_expm1_ratio,
    "zoh_discretize": _case_zoh,
    "selective_scan": _case_selective_scan("sequential"),
    "parallel_scan": _case_selective_scan("parallel"),
    "scan_gather_merge": _case_scan_orders,
    "gat": _case_gat,
    "losses": _case_losses,
}


def check_op(name: str, rng: np.random.Generator, tol: float = OP_TOL) -> CheckResult:
    fn, inputs = OP_CASES[name](rng)
    return check_function(f"op/{name}", fn, inputs, rng, tol=tol)


def op_suite(seed: int = 0, shapes_per_op: int = 3, names: Sequence[str] | None = None) -> list[CheckResult]:
    out = []
    for k, name in enumerate(names or OP_CASES):
        for j in range(shapes_per_op):
            out.append(check_op(name, np.random.default_rng([seed, k, j])))
    return out


# ---------------------------------------------------------------------------
# blocks and model
# ---------------------------------------------------------------------------


def _nchw(rng, c, s=4, n=1):
    return rng.standard_normal((n, c, s, s))


def _block_cases(rng: np.random.Generator):
    f64 = np.float64
    c = 4
    yield "ChannelAttention", ChannelAttention(c, rng, dtype=f64), lambda m, xs: m(xs[0]), [_nchw(rng, c)]
    yield "SpatialAttention", SpatialAttention(rng, dtype=f64), lambda m, xs: m(xs[0]), [_nchw(rng, c)]
    yield "CCS", CCS(c, rng, dtype=f64), lambda m, xs: m(xs[0]), [_nchw(rng, c)]
    chans = (4, 6, 8, 8)
    feats = [_nchw(rng, ch, 8 >> i) for i, ch in enumerate(chans)]
    yield "MSFF", MSFF(1, chans, rng, dtype=f64), lambda m, xs: m(xs), feats
    yield "RGCA", RGCA(c, 2, rng, dtype=f64), lambda m, xs: m(xs[0], xs[1]), [_nchw(rng, c), _nchw(rng, c)]
    yield "DSHGAM", DSHGAM(chans, (2, 1, 1, 1), rng, dtype=f64), \
        lambda m, xs: T.concat([t.reshape(-1) for t in m(xs)], axis=0), feats
    yield "MCAEM", MCAEM(c, rng, dtype=f64), lambda m, xs: m(xs[0]), [_nchw(rng, c)]
    nhwc = rng.standard_normal((1, 4, 4, c))
    yield "SS2D", SS2D(c, rng, d_state=2, dtype=f64), lambda m, xs: m(xs[0], 2), [nhwc]
    yield "VSSBlock", VSSBlock(c, rng, d_state=2, dtype=f64), lambda m, xs: m(xs[0]), [nhwc]
    yield "LEVSSBlock", LEVSSBlock(c, 0.25, rng, d_state=2, dtype=f64), lambda m, xs: m(xs[0]), [nhwc]


def _scale_up(module: Module, rng: np.random.Generator, std: float = 0.3) -> None:
    # default init is tiny; larger weights make every path (gates, nonlinearity) matter
    for p in module.parameters():
        p.data += rng.standard_normal(p.shape) * std


def block_suite(seed: int = 0, tol: float = OP_TOL) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, module, call, inputs in _block_cases(rng):
        _scale_up(module, rng)
        out.append(check_module(f"block/{name}", module, call, inputs, rng, tol=tol))
    return out


def micro_check_config(**overrides) -> ModelConfig:
    base = dict(base_channels=4, enc_depths=(1, 1, 1, 1), dec_depths=(1, 1, 1, 1), d_state=2,
                input_size=32, dtype="float64")
    base.update(overrides)
    return ModelConfig(**base)


def model_check(cfg: ModelConfig | None = None, samples: int = 120, seed: int = 0,
                tol: float = MODEL_TOL) -> CheckResult:
    """End-to-end check of ``total_loss`` w.r.t. ``samples`` randomly chosen parameter entries.

    The objective adds the upsampled-head and native-scale-head losses so both paths are covered.
    """
    cfg = cfg or micro_check_config(seed=seed)
    rng = np.random.default_rng([seed, 7])
    model = GCRPNet(cfg)
    _scale_up(model, rng, 0.1)
    s = cfg.input_size
    images = Tensor(rng.standard_normal((2, 3, s, s)))
    masks = (rng.random((2, 1, s, s)) < 0.4).astype(np.float64)

    def loss():
        return total_loss(model(images), masks) + total_loss(model.multiscale(images), masks)

    return check_leaves("model/micro", loss, model.parameters(), rng, per_leaf=None, total=samples, tol=tol)


def dead_parameters(cfg: ModelConfig | None = None, points: int = 3, std: float = 0.1,
                    seed: int = 0) -> list[str]:
    """Names of parameters that receive an all-zero gradient at every one of ``points`` random
    parameter settings (the initial weights plus ``std`` noise, one random batch each).

    A ReLU unit can be inactive at one setting; a parameter that is disconnected
    from the loss is zero at all of them.
    """
    cfg = cfg or micro_check_config(base_channels=8, seed=seed)
    live: set[str] = set()
    names: list[str] = []
    for k in range(points):
        rng = np.random.default_rng([seed, k])
        model = GCRPNet(cfg)
        names = [n for n, _ in model.named_parameters()]
        for p in model.parameters():
            p.data += (rng.standard_normal(p.shape) * std).astype(p.dtype)
        size = cfg.input_size
        x = Tensor(rng.standard_normal((2, 3, size, size)).astype(cfg.np_dtype))
        g = (rng.random((2, 1, size, size)) < 0.3).astype(cfg.np_dtype)
        total_loss(model.multiscale(x), g).backward()
        live.update(n for n, p in model.named_parameters() if p.grad is not None and np.any(p.grad))
    return [n for n in names if n not in live]


def run_scope(scope: str, seed: int = 0) -> list[CheckResult]:
    if scope == "op":
        return op_suite(seed)
    if scope == "block":
        return block_suite(seed)
    if scope == "model":
        return [model_check(seed=seed)]
    raise ValueError(f"unknown gradcheck scope {scope!r}; expected op, block or model")
