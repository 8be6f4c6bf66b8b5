"""Epigraph lift, dual certificates, and the optimality diagnostics.

For a ReLU backbone the forward value equals the optimum of a linear program
over the stacked hidden states; with the quadratic and norm branches added,
the whole forward value is the optimum of a cone program whose cone blocks
are closed-form tight at the optimum.  This module builds that lift, solves
its LP part with the independent simplex oracle, extracts the chain dual
multipliers from a forward trace, and reports the full set of feasibility,
complementarity, and gap metrics.

All operations here require the ReLU activation: a smooth-activation model
has no exact lift and is rejected rather than silently approximated.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import List, Optional, Tuple

import numpy as np

from . import simplex
from .gradients import relu_chain_multipliers
from .model import (
    RELU,
    ForwardTrace,
    SocIcnnParams,
    forward,
    init_model,
    max_infeasibility,
    spawn_rng,
)


class UnsupportedActivationError(ValueError):
    """Certificate operations are defined for ReLU models only."""


MAX_LIFT_VARIABLES = 500


def _require_relu(params: SocIcnnParams) -> None:
    if params.activation != RELU:
        raise UnsupportedActivationError(
            "certificate operations require the ReLU activation"
        )


@dataclass(frozen=True, eq=False)
class LpLift:
    """min objective @ y + constant  s.t.  row_coeffs @ y >= row_rhs, y >= 0.

    The variable vector stacks the hidden states layer by layer.  Rows come
    in two blocks: one affine row per hidden unit, then one nonnegativity row
    per hidden unit.
    """

    objective: np.ndarray
    row_coeffs: np.ndarray
    row_rhs: np.ndarray
    constant: float
    widths: Tuple[int, ...]

    @property
    def num_variables(self) -> int:
        return self.objective.shape[0]

    @property
    def num_rows(self) -> int:
        return self.row_rhs.shape[0]


def build_lp_lift(params: SocIcnnParams, x) -> LpLift:
    """Lift whose optimal value is the backbone value at x (plus branches,
    handled separately by the cone blocks)."""
    _require_relu(params)
    x = np.asarray(x, dtype=np.float64)
    widths = params.widths
    n = sum(widths)
    offsets = np.concatenate([[0], np.cumsum(widths)])

    rows = np.zeros((2 * n, n))
    rhs = np.zeros(2 * n)
    r = 0
    for idx, layer in enumerate(params.layers):
        lo, hi = offsets[idx], offsets[idx + 1]
        w = layer.width
        rows[r : r + w, lo:hi] = np.eye(w)
        if layer.w_z is not None:
            plo, phi = offsets[idx - 1], offsets[idx]
            rows[r : r + w, plo:phi] = -layer.w_z
        base = layer.b.copy()
        if layer.w_x is not None:
            base = base + layer.w_x @ x
        rhs[r : r + w] = base
        r += w
    rows[n:, :] = np.eye(n)  # z >= 0 block

    objective = np.zeros(n)
    objective[offsets[-2] :] = params.w_out
    constant = float(params.w_skip @ x) + params.b_out
    return LpLift(
        objective=objective,
        row_coeffs=rows,
        row_rhs=rhs,
        constant=constant,
        widths=widths,
    )


def simplex_lp_solve(lift: LpLift) -> Tuple[float, np.ndarray]:
    """Optimal value (including the constant term) and solution of the lift."""
    if lift.num_variables > MAX_LIFT_VARIABLES:
        raise ValueError(
            f"lift has {lift.num_variables} variables; the dense oracle is "
            f"limited to {MAX_LIFT_VARIABLES}"
        )
    value, y = simplex.solve_min_geq(lift.objective, lift.row_coeffs, lift.row_rhs)
    return value + lift.constant, y


def socp_oracle_value(params: SocIcnnParams, x) -> float:
    """Forward value recomputed through the lift.

    The LP block is solved by the simplex oracle; the cone blocks separate
    once x is fixed and their optima are the closed-form tight values, so
    they are added analytically.
    """
    _require_relu(params)
    x = np.asarray(x, dtype=np.float64)
    value, _ = simplex_lp_solve(build_lp_lift(params, x))
    for br in params.quad:
        resid = br.proj @ x + br.offset
        value += br.weight * 0.5 * float(np.sum(resid * resid))
    for br in params.conic:
        resid = br.proj @ x + br.offset
        value += br.weight * float(np.sqrt(np.sum(resid * resid)))
    return value


@dataclass(frozen=True, eq=False)
class DualCertificate:
    """Chain multipliers, norm-branch duals, and the dual objective value.

    Feasibility means 0 <= nu_L <= w_out, 0 <= nu_l <= w_z_{l+1}^T nu_{l+1},
    and ||mu_g|| <= weight_g; by weak duality dual_value never exceeds the
    forward value, and the extracted certificate closes the gap.
    """

    nu: Tuple[np.ndarray, ...]
    mu_norm: Tuple[np.ndarray, ...]
    dual_value: float


def extract_dual_certificate(
    params: SocIcnnParams, x, trace: ForwardTrace
) -> DualCertificate:
    """Read the optimal dual multipliers off a forward trace.

    At an exactly-zero preactivation the multiplier is set to 0 (any value in
    the box certifies; 0 is the deterministic choice), and a vanishing norm
    gets the zero dual, which is exact because its primal term vanishes too.
    """
    _require_relu(params)
    x = np.asarray(x, dtype=np.float64)
    nus = relu_chain_multipliers(params, trace.preacts)

    dual = float(params.w_skip @ x) + params.b_out
    for layer, nu in zip(params.layers, nus):
        affine = layer.b.copy()
        if layer.w_x is not None:
            affine = affine + layer.w_x @ x
        dual += float(nu @ affine)

    mus = []
    for br, u, t in zip(params.conic, trace.conic_u, trace.conic_t):
        if t > 0.0:
            mu = (br.weight / t) * u
        else:
            mu = np.zeros_like(u)
        mus.append(mu)
        dual += float(mu @ u)
    for br, s in zip(params.quad, trace.quad_s):
        dual += br.weight * s

    return DualCertificate(nu=tuple(nus), mu_norm=tuple(mus), dual_value=dual)


_METRIC_FIELDS = (
    "primal_dual_gap",
    "forward_vs_oracle_abs_err",
    "relu_primal_violation",
    "relu_dual_box_violation",
    "relu_complementarity_slack",
    "quad_epigraph_violation",
    "quad_tightness_slack",
    "norm_epigraph_violation",
    "norm_tightness_slack",
    "norm_dual_ball_violation",
    "norm_dual_alignment_violation",
)


@dataclass(frozen=True)
class DiagnosticsReport:
    """The eleven optimality metrics, each a max over components, all >= 0."""

    primal_dual_gap: float
    forward_vs_oracle_abs_err: float
    relu_primal_violation: float
    relu_dual_box_violation: float
    relu_complementarity_slack: float
    quad_epigraph_violation: float
    quad_tightness_slack: float
    norm_epigraph_violation: float
    norm_tightness_slack: float
    norm_dual_ball_violation: float
    norm_dual_alignment_violation: float

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _max_over(values) -> float:
    worst = 0.0
    for v in values:
        worst = max(worst, float(v))
    return worst


def diagnostics_report(params: SocIcnnParams, x) -> DiagnosticsReport:
    """Evaluate all eleven metrics at one input.

    All primal quantities are read from the forward trace itself, and dual
    bounds are recomputed through the identical expressions used during
    extraction, so the feasibility and tightness rows are exact zeros by
    construction whenever the model is feasible; the gap and oracle rows
    absorb genuine floating-point error only.
    """
    _require_relu(params)
    x = np.asarray(x, dtype=np.float64)
    trace = forward(params, x)
    cert = extract_dual_certificate(params, x, trace)

    gap = abs(trace.total - cert.dual_value)
    oracle_err = abs(socp_oracle_value(params, x) - trace.total)

    primal_viol = []
    comp_slack = []
    for pre, z in zip(trace.preacts, trace.acts):
        primal_viol.append(np.max(pre - z, initial=0.0))
        primal_viol.append(np.max(-z, initial=0.0))
        comp_slack.append(abs(float(cert.nu[len(comp_slack)] @ (z - pre))))

    dual_box = []
    upper = params.w_out
    for idx in range(params.depth - 1, -1, -1):
        nu = cert.nu[idx]
        dual_box.append(np.max(-nu, initial=0.0))
        dual_box.append(np.max(nu - upper, initial=0.0))
        if idx > 0:
            upper = params.layers[idx].w_z.T @ nu

    quad_epi = []
    quad_tight = []
    for q, s in zip(trace.quad_q, trace.quad_s):
        recomputed = 0.5 * float(np.dot(q, q))
        quad_epi.append(max(recomputed - s, 0.0))
        quad_tight.append(abs(s - recomputed))
    norm_epi = []
    norm_tight = []
    norm_ball = []
    norm_align = []
    for br, u, t, mu in zip(params.conic, trace.conic_u, trace.conic_t, cert.mu_norm):
        recomputed = float(np.sqrt(np.dot(u, u)))
        norm_epi.append(max(recomputed - t, 0.0))
        norm_tight.append(abs(t - recomputed))
        norm_ball.append(max(float(np.sqrt(np.dot(mu, mu))) - br.weight, 0.0))
        norm_align.append(abs(float(mu @ u) - br.weight * t))

    return DiagnosticsReport(
        primal_dual_gap=gap,
        forward_vs_oracle_abs_err=oracle_err,
        relu_primal_violation=_max_over(primal_viol),
        relu_dual_box_violation=_max_over(dual_box),
        relu_complementarity_slack=_max_over(comp_slack),
        quad_epigraph_violation=_max_over(quad_epi),
        quad_tightness_slack=_max_over(quad_tight),
        norm_epigraph_violation=_max_over(norm_epi),
        norm_tightness_slack=_max_over(norm_tight),
        norm_dual_ball_violation=_max_over(norm_ball),
        norm_dual_alignment_violation=_max_over(norm_align),
    )


def report_to_dict(report: DiagnosticsReport, **metadata) -> dict:
    doc = report.to_dict()
    doc.update(metadata)
    return doc


def _worker_count() -> int:
    raw = os.environ.get("SOCICNN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_verification_trials(
    num_trials: int,
    input_dim: int,
    width: int,
    depth: int,
    num_quad: int,
    num_conic: int,
    passthrough: bool,
    seed: int,
    branch_size: Optional[int] = None,
    input_range: float = 3.0,
) -> List[dict]:
    """Random-model diagnostic sweep for one passthrough setting.

    Each trial draws its own model and input from seeds derived from the root
    seed and the trial index, so serial and parallel executions produce the
    same list.  Parallelism is capped by the SOCICNN_THREADS environment
    variable (default 1).
    """
    if branch_size is None:
        branch_size = input_dim

    def one_trial(index: int) -> dict:
        model = init_model(
            input_dim,
            [width] * depth,
            num_quad,
            [branch_size] * num_quad,
            num_conic,
            [branch_size] * num_conic,
            passthrough,
            RELU,
            spawn_rng(seed, index, int(passthrough)).integers(0, 2**63 - 1),
        )
        if max_infeasibility(model) != 0.0:
            raise RuntimeError("initialization produced an infeasible model")
        x = spawn_rng(seed, index, int(passthrough), 1).uniform(
            -input_range, input_range, input_dim
        )
        report = diagnostics_report(model, x)
        return report_to_dict(
            report,
            seed=seed,
            trial=index,
            d0=input_dim,
            width=width,
            depth=depth,
            passthrough=passthrough,
        )

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one_trial, range(num_trials)))
    return [one_trial(i) for i in range(num_trials)]


def summarize_reports(reports: List[dict]) -> dict:
    """Order-independent mean/max aggregation of the eleven metrics."""
    summary = {}
    for name in _METRIC_FIELDS:
        values = np.array([rep[name] for rep in reports], dtype=np.float64)
        summary[name] = {"mean": float(values.mean()), "max": float(values.max())}
    return summary
