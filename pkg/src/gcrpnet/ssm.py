"""Diagonal state-space layers: ZOH discretisation and the selective scan.

The continuous system ``h' = A h + B x, y = C h`` with diagonal ``A`` is
discretised per token with step ``delta``::

    Abar = exp(delta * A)
    Bbar = (delta * A)^-1 (exp(delta * A) - 1) * delta * B

and unrolled as ``h_t = Abar_t h_{t-1} + Bbar_t x_t``, ``y_t = C_t . h_t``.
``B``, ``C`` and ``delta`` are linear functions of the token (selectivity);
``A`` is input independent and kept negative through ``A = -exp(a_log)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .tensor import Tensor, _record, exp, matmul, split, tsum

SMALL_STEP = 1e-6
SCAN_METHODS = ("sequential", "parallel")


# ---------------------------------------------------------------------------
# linear recurrence h_t = a_t * h_{t-1} + b_t
# ---------------------------------------------------------------------------


def _scan_sequential(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Recurrence along axis 0 with h_{-1} = 0."""
    h = np.empty_like(b)
    prev = np.zeros_like(b[0])
    for t in range(b.shape[0]):
        prev = a[t] * prev + b[t]
        h[t] = prev
    return h


def _scan_parallel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hillis-Steele inclusive scan of the affine maps ``h -> a h + b`` along axis 0.

    ``ceil(log2 L)`` rounds, each a full-array update; composition of
    ``(a1, b1)`` followed by ``(a2, b2)`` is ``(a2 a1, a2 b1 + b2)``.
    """
    acc_a = a.copy()
    acc_b = b.copy()
    shift = 1
    n = b.shape[0]
    while shift < n:
        new_b = acc_b[shift:] + acc_a[shift:] * acc_b[:-shift]
        new_a = acc_a[shift:] * acc_a[:-shift]
        acc_b[shift:] = new_b
        acc_a[shift:] = new_a
        shift *= 2
    return acc_b


_SCANNERS = {"sequential": _scan_sequential, "parallel": _scan_parallel}


def linear_recurrence(a: Tensor, b: Tensor, axis: int = 0, method: str = "sequential") -> Tensor:
    """Differentiable ``h_t = a_t h_{t-1} + b_t`` along ``axis`` with zero initial state.

    The adjoint is the same recurrence run backwards: with output gradient
    ``g``, ``lam_t = g_t + a_{t+1} lam_{t+1}``; then ``db_t = lam_t`` and
    ``da_t = lam_t h_{t-1}``.
    """
    if method not in _SCANNERS:
        raise ValueError(f"unknown scan method {method!r}; expected one of {SCAN_METHODS}")
    if a.shape != b.shape:
        raise ValueError(f"recurrence coefficients {a.shape} and inputs {b.shape} differ")
    scan = _SCANNERS[method]
    axis = axis % b.ndim
    ad = np.moveaxis(a.data, axis, 0)
    h = scan(ad, np.moveaxis(b.data, axis, 0))

    def backward(g):
        gm = np.moveaxis(g, axis, 0)
        a_next = np.zeros_like(ad)
        a_next[:-1] = ad[1:]
        lam = scan(a_next[::-1], gm[::-1])[::-1]
        gb = np.moveaxis(lam, 0, axis) if b.requires_grad else None
        ga = None
        if a.requires_grad:
            h_prev = np.zeros_like(h)
            h_prev[1:] = h[:-1]
            ga = np.moveaxis(lam * h_prev, 0, axis)
        return ga, gb

    return _record(np.ascontiguousarray(np.moveaxis(h, 0, axis)), (a, b), backward)


# ---------------------------------------------------------------------------
# ZOH discretisation
# ---------------------------------------------------------------------------


def _expm1_ratio(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(exp(z) - 1) / z`` and its derivative, with series values near zero."""
    small = np.abs(z) < SMALL_STEP
    zs = np.where(small, 1.0, z)
    em1 = np.expm1(zs)
    val = np.where(small, 1.0 + z / 2.0, em1 / zs)
    dval = np.where(small, 0.5 + z / 3.0, (zs * (em1 + 1.0) - em1) / (zs * zs))
    return val.astype(z.dtype, copy=False), dval.astype(z.dtype, copy=False)


def expm1_ratio(z: Tensor) -> Tensor:
    val, dval = _expm1_ratio(z.data)
    return _record(val, (z,), lambda g: (g * dval,))


@dataclass
class DiscretizedSSM:
    """Per-token discrete parameters; all broadcast to (..., L, D, N)."""

    abar: Tensor
    bbar: Tensor


def zoh_discretize(A, B, delta) -> DiscretizedSSM:
    """Zero-order-hold discretisation for diagonal ``A``.

    Args:
        A: diagonal entries, shape broadcastable to ``(..., D, N)``.
        B: input weights, broadcastable to ``(..., D, N)``.
        delta: positive step sizes, broadcastable to ``(..., D, 1)``.

    Inputs may be arrays or tensors; tensors stay differentiable.
    """
    A, B, delta = (x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64)) for x in (A, B, delta))
    if np.any(delta.data <= 0):
        raise ValueError("ZOH step delta must be strictly positive")
    dA = delta * A
    abar = exp(dA)
    bbar = expm1_ratio(dA) * delta * B
    return DiscretizedSSM(abar=abar, bbar=bbar)


# ---------------------------------------------------------------------------
# selective scan
# ---------------------------------------------------------------------------


@dataclass
class SSMParams:
    """Learnable parameters of one (or a stack of) selective SSMs.

    Leading batch dims (e.g. one set per scan direction) are allowed on every
    field and broadcast against the input's leading dims.

    Attributes:
        a_log: (..., D, N); the state matrix is ``A = -exp(a_log)``.
        x_proj: (..., D, R + 2N); token -> (low-rank delta, B_t, C_t).
        dt_proj: (..., R, D); low-rank delta -> per-channel delta.
        dt_bias: (..., D); added before the softplus.
    """

    a_log: Tensor
    x_proj: Tensor
    dt_proj: Tensor
    dt_bias: Tensor

    @property
    def state_dim(self) -> int:
        return self.a_log.shape[-1]

    @property
    def rank(self) -> int:
        return self.dt_proj.shape[-2]

    @property
    def A(self) -> Tensor:
        return -exp(self.a_log)

    def tensors(self) -> dict[str, Tensor]:
        return {"a_log": self.a_log, "x_proj": self.x_proj, "dt_proj": self.dt_proj, "dt_bias": self.dt_bias}

    @classmethod
    def init(cls, d: int, n: int, rng: np.random.Generator, lead: tuple[int, ...] = (),
             rank: int | None = None, dt_min: float = 1e-3, dt_max: float = 0.1,
             dtype=np.float32, requires_grad: bool = True) -> "SSMParams":
        """S4D-real style init: ``A_n = -(n + 1)``, ``softplus(dt_bias)`` log-uniform in [dt_min, dt_max]."""
        rank = rank or max(1, math.ceil(d / 16))
        a = np.broadcast_to(np.arange(1, n + 1, dtype=np.float64), lead + (d, n))
        dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=lead + (d,)))
        dt_bias = dt + np.log(-np.expm1(-dt))  # inverse softplus
        std_x = rng.standard_normal(lead + (d, rank + 2 * n)) * d ** -0.5
        std_dt = rng.uniform(-1, 1, size=lead + (rank, d)) * rank ** -0.5

        def mk(v):
            return Tensor(np.array(v, dtype=dtype), requires_grad=requires_grad)

        return cls(a_log=mk(np.log(a)), x_proj=mk(std_x), dt_proj=mk(std_dt), dt_bias=mk(dt_bias))


def _unsqueeze(t: Tensor, axis: int) -> Tensor:
    shape = list(t.shape)
    axis = axis % (t.ndim + 1)
    shape.insert(axis, 1)
    return t.reshape(tuple(shape))


def ssm_inputs(x: Tensor, params: SSMParams) -> tuple[Tensor, Tensor, Tensor]:
    """Project tokens ``x`` (..., L, D) to ``delta`` (..., L, D), ``B`` and ``C`` (..., L, N)."""
    n, r = params.state_dim, params.rank
    proj = matmul(x, params.x_proj)
    dt_low, b_t, c_t = split(proj, [r, n, n], axis=-1)
    delta = F.softplus(matmul(dt_low, params.dt_proj) + _unsqueeze(params.dt_bias, -2))
    return delta, b_t, c_t


def selective_scan(x: Tensor, params: SSMParams, method: str = "sequential",
                   inputs: tuple[Tensor, Tensor, Tensor] | None = None) -> Tensor:
    """Selective SSM over the token axis.

    Args:
        x: (..., L, D) token sequence.
        params: :class:`SSMParams` whose leading dims broadcast with ``x[..., 0, 0]``.
        method: ``"sequential"`` (per-step loop) or ``"parallel"`` (log-depth scan).
        inputs: optional precomputed ``(delta, B, C)``, mainly for tests.

    Returns:
        (..., L, D) outputs ``y_t = C_t . h_t``.
    """
    if x.ndim < 2:
        raise ValueError(f"selective_scan expects (..., L, D), got {x.shape}")
    delta, b_t, c_t = inputs if inputs is not None else ssm_inputs(x, params)
    A = _unsqueeze(params.A, -3)                              # (..., 1, D, N)
    disc = zoh_discretize(A, _unsqueeze(b_t, -2), _unsqueeze(delta, -1))
    u = disc.bbar * _unsqueeze(x, -1)                         # (..., L, D, N)
    h = linear_recurrence(disc.abar, u, axis=-3, method=method)
    return tsum(h * _unsqueeze(c_t, -2), axis=-1)


def parallel_scan(x: Tensor, params: SSMParams, inputs=None) -> Tensor:
    """Same contract as :func:`selective_scan`, evaluated with the associative scan."""
    return selective_scan(x, params, method="parallel", inputs=inputs)

