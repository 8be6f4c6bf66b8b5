"""Exact reverse-mode derivatives of the forward pass.

Input gradients drive projected descent and the convexity diagnostics;
parameter gradients drive training under mean-squared-error loss.  At the
ReLU kink the derivative is taken as 0 and at a vanishing norm the gradient
contribution is the zero vector; both are valid subgradient choices and keep
the backward pass deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .model import (
    RELU,
    DimensionError,
    ForwardTrace,
    SocIcnnParams,
    batch_forward,
    forward,
    sigmoid,
)


@dataclass(eq=False)
class LayerGrads:
    w_x: Optional[np.ndarray]
    w_z: Optional[np.ndarray]
    b: np.ndarray


@dataclass(eq=False)
class BranchGrads:
    weight: float
    proj: np.ndarray
    offset: np.ndarray


@dataclass(eq=False)
class ParamGradients:
    """Mirror of SocIcnnParams with one gradient entry per learnable scalar."""

    layers: List[LayerGrads]
    w_out: np.ndarray
    w_skip: np.ndarray
    b_out: float
    quad: List[BranchGrads]
    conic: List[BranchGrads]


def _act_derivative(activation: str, pre: np.ndarray) -> np.ndarray:
    if activation == RELU:
        return (pre > 0.0).astype(np.float64)
    return sigmoid(pre)


def chain_multipliers(params: SocIcnnParams, preacts) -> List[np.ndarray]:
    """Top-down backward factors through the backbone.

    For ReLU these are exactly the active-set multipliers
    nu_L = w_out * 1[pre_L > 0], nu_l = (w_z_{l+1}^T nu_{l+1}) * 1[pre_l > 0];
    for the smooth activation the indicator is replaced by the derivative.
    """
    depth = len(params.layers)
    nus: List[np.ndarray] = [None] * depth  # type: ignore[list-item]
    upstream = params.w_out
    for idx in range(depth - 1, -1, -1):
        nu = upstream * _act_derivative(params.activation, preacts[idx])
        nus[idx] = nu
        if idx > 0:
            upstream = params.layers[idx].w_z.T @ nu
    return nus


def relu_chain_multipliers(params: SocIcnnParams, preacts) -> List[np.ndarray]:
    if params.activation != RELU:
        raise ValueError("chain multipliers as dual data require the ReLU activation")
    return chain_multipliers(params, preacts)


def input_subgradient(params: SocIcnnParams, x, trace: Optional[ForwardTrace] = None) -> np.ndarray:
    """An element of the subdifferential of the forward value at x."""
    if trace is None:
        trace = forward(params, x)
    x = np.asarray(x, dtype=np.float64)
    nus = chain_multipliers(params, trace.preacts)
    g = params.w_skip.copy()
    for layer, nu in zip(params.layers, nus):
        if layer.w_x is not None:
            g += layer.w_x.T @ nu
    for br, q in zip(params.quad, trace.quad_q):
        g += br.weight * (br.proj.T @ q)
    for br, u, t in zip(params.conic, trace.conic_u, trace.conic_t):
        if t > 0.0:
            g += (br.weight / t) * (br.proj.T @ u)
    return g


def value_and_input_gradient_batch(params: SocIcnnParams, X: np.ndarray):
    """Forward values and input subgradients for every row of X at once."""
    X = np.asarray(X, dtype=np.float64)
    totals, cache = batch_forward(params, X, with_cache=True)
    n = X.shape[0]

    G = np.broadcast_to(params.w_skip, (n, params.input_dim)).copy()
    delta = np.broadcast_to(params.w_out, (n, params.widths[-1])) * _act_derivative(
        params.activation, cache["preacts"][-1]
    )
    for idx in range(params.depth - 1, -1, -1):
        layer = params.layers[idx]
        if layer.w_x is not None:
            G += delta @ layer.w_x
        if idx > 0:
            delta = (delta @ layer.w_z) * _act_derivative(
                params.activation, cache["preacts"][idx - 1]
            )
    for br, Q in zip(params.quad, cache["quad_q"]):
        G += br.weight * (Q @ br.proj)
    for br, U, t in zip(params.conic, cache["conic_u"], cache["conic_t"]):
        scale = np.where(t > 0.0, br.weight / np.where(t > 0.0, t, 1.0), 0.0)
        G += (scale[:, None] * U) @ br.proj
    return totals, G


def parameter_gradients(params: SocIcnnParams, batch_x, batch_y) -> Tuple[float, ParamGradients]:
    """Mean-squared-error loss over a batch and its exact parameter gradients."""
    X = np.asarray(batch_x, dtype=np.float64)
    y = np.asarray(batch_y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DimensionError("batch_x must be a non-empty (n, d0) matrix")
    if y.shape != (X.shape[0],):
        raise DimensionError("batch_y must match the number of batch rows")
    n = X.shape[0]

    totals, cache = batch_forward(params, X, with_cache=True)
    residual = totals - y
    loss = float(np.mean(residual**2))
    dtotal = (2.0 / n) * residual  # dL/d f(x_i)

    acts = cache["acts"]
    preacts = cache["preacts"]
    g_w_out = acts[-1].T @ dtotal
    g_w_skip = X.T @ dtotal
    g_b_out = float(np.sum(dtotal))

    layer_grads: List[LayerGrads] = [None] * params.depth  # type: ignore[list-item]
    delta = (dtotal[:, None] * params.w_out) * _act_derivative(params.activation, preacts[-1])
    for idx in range(params.depth - 1, -1, -1):
        layer = params.layers[idx]
        g_w_x = delta.T @ X if layer.w_x is not None else None
        g_w_z = delta.T @ acts[idx - 1] if layer.w_z is not None else None
        g_b = delta.sum(axis=0)
        layer_grads[idx] = LayerGrads(w_x=g_w_x, w_z=g_w_z, b=g_b)
        if idx > 0:
            delta = (delta @ layer.w_z) * _act_derivative(params.activation, preacts[idx - 1])

    quad_grads = []
    for br, Q, s in zip(params.quad, cache["quad_q"], cache["quad_s"]):
        g_weight = float(np.dot(dtotal, s))
        dQ = (dtotal * br.weight)[:, None] * Q
        quad_grads.append(BranchGrads(weight=g_weight, proj=dQ.T @ X, offset=dQ.sum(axis=0)))
    conic_grads = []
    for br, U, t in zip(params.conic, cache["conic_u"], cache["conic_t"]):
        g_weight = float(np.dot(dtotal, t))
        scale = np.where(t > 0.0, (dtotal * br.weight) / np.where(t > 0.0, t, 1.0), 0.0)
        dU = scale[:, None] * U
        conic_grads.append(BranchGrads(weight=g_weight, proj=dU.T @ X, offset=dU.sum(axis=0)))

    grads = ParamGradients(
        layers=layer_grads,
        w_out=g_w_out,
        w_skip=g_w_skip,
        b_out=g_b_out,
        quad=quad_grads,
        conic=conic_grads,
    )
    return loss, grads


def _near_kink(params: SocIcnnParams, trace: ForwardTrace, threshold: float) -> bool:
    if params.activation == RELU:
        for pre in trace.preacts:
            if pre.size and float(np.min(np.abs(pre))) < threshold:
                return True
    for t in trace.conic_t:
        if t < threshold:
            return True
    return False


def finite_difference_check(params: SocIcnnParams, x, step: float) -> float:
    """Max relative gap between the input subgradient and central differences.

    Coordinates whose +/-step evaluations pass within 10*step of an
    activation or norm kink are skipped: central differences are invalid
    across kinks, and a kink hit must not raise a false alarm.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    base = forward(params, x)
    g = input_subgradient(params, x, trace=base)
    threshold = 10.0 * step

    worst = 0.0
    for i in range(x.shape[0]):
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        tp = forward(params, xp)
        tm = forward(params, xm)
        if any(_near_kink(params, tr, threshold) for tr in (base, tp, tm)):
            continue
        fd = (tp.total - tm.total) / (2.0 * step)
        denom = max(abs(g[i]), abs(fd), 1e-3)
        worst = max(worst, abs(g[i] - fd) / denom)
    return worst
