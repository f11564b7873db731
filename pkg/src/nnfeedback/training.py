"""Ensemble learning of network feedback laws.

Objective for a finite set of initial states ``y0_i`` with weights ``w_i``:

    1/2 sum_i w_i int_0^T |Q y_i|^2 + beta |F(y_i)|^2 dt + alpha_R sum_{l>=2} |W_l|_F^2

with the time integral taken by the trapezoidal rule on the Crank-Nicolson
grid. Gradients come from the discrete adjoint and are exact for this
discrete objective. :func:`train` runs projected gradient descent with
Barzilai-Borwein steps.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BlowUpError, NewtonFailure, UnrecoverableStartError
from .feedback import NetworkFeedback, NetworkParams, nn_vjp_theta, project_R_ad
from .timestepping import BLOWUP_THRESHOLD, _adjoint_core, integrate_ensemble, trapezoid_weights

log = logging.getLogger(__name__)

__all__ = [
    "EnsembleConfig",
    "IterationRecord",
    "TrainReport",
    "regularizer",
    "regularizer_gradient",
    "ensemble_objective",
    "ensemble_gradient",
    "bb_stepsize",
    "train",
]


@dataclass
class EnsembleConfig:
    initial_conditions: np.ndarray
    weights: np.ndarray | None = None
    beta: float = 0.1
    T: float = 1.0
    n_steps: int = 200
    alpha_R: float = 0.0
    eta1: float = 1e6
    eta2: float = 1e6
    max_iters: int = 100
    grad_tol: float = 1e-6
    s0: float = 1e-3
    s_min: float = 1e-8
    s_max: float = 1e2
    bb_orientation: str = "as_printed"
    bb_fallback: str = "s_min"
    max_halvings: int = 20
    stall_limit: int = 10
    blowup_threshold: float = BLOWUP_THRESHOLD
    seed: int = 0

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.initial_conditions, dtype=float))
        self.initial_conditions = Y
        if self.weights is None:
            self.weights = np.full(Y.shape[0], 1.0 / Y.shape[0])
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (Y.shape[0],) or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive, one per initial condition, summing to 1")
        self.weights = w
        if self.beta < 0 or self.alpha_R < 0 or self.T <= 0 or self.n_steps < 1:
            raise ValueError("need beta >= 0, alpha_R >= 0, T > 0, n_steps >= 1")
        if self.eta1 <= 0 or self.eta2 <= 0 or not 0 < self.s_min <= self.s_max:
            raise ValueError("invalid bounds or stepsize limits")
        if self.bb_orientation not in ("as_printed", "standard"):
            raise ValueError(f"unknown BB orientation {self.bb_orientation!r}")
        if self.bb_fallback not in ("s_min", "previous"):
            raise ValueError(f"unknown BB fallback {self.bb_fallback!r}")

    @property
    def h(self) -> float:
        return self.T / self.n_steps


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    grad_norm: float
    stepsize: float
    blowups: int


@dataclass
class TrainReport:
    records: list
    theta: NetworkParams
    termination: str
    initial_objective: float
    final_objective: float
    final_grad_norm: float
    rejected_steps: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.records)

    def to_dict(self, checkpoint: str | None = None) -> dict:
        return {
            "termination": self.termination,
            "iterations": self.iterations,
            "initial_objective": self.initial_objective,
            "final_objective": self.final_objective,
            "final_grad_norm": self.final_grad_norm,
            "rejected_steps": self.rejected_steps,
            "checkpoint": checkpoint,
            "records": [asdict(r) for r in self.records],
            **self.meta,
        }


def regularizer(theta: NetworkParams, alpha_R: float) -> float:
    return float(alpha_R * sum(np.sum(W * W) for W in theta.weights[1:]))


def regularizer_gradient(theta: NetworkParams, alpha_R: float) -> NetworkParams:
    g = theta.zeros_like()
    for i in range(1, theta.L):
        g.weights[i] = 2.0 * alpha_R * theta.weights[i]
    return g


def _forward(system, theta, cfg):
    law = NetworkFeedback(theta)
    trajs = integrate_ensemble(
        system, law, cfg.initial_conditions, cfg.T, cfg.n_steps, blowup_threshold=cfg.blowup_threshold
    )
    for i, tr in enumerate(trajs):
        if tr.status == "newton_failed":
            raise NewtonFailure(f"Newton failed for initial condition {i} at step {tr.failed_step}",
                                step=tr.failed_step, ic_index=i)
    return law, trajs


def _running_costs(system, law, states, cfg):
    Q = system.output_matrix
    Qy = states @ Q.T
    F = law(states)
    c = trapezoid_weights(cfg.n_steps, cfg.h)
    integrand = np.sum(Qy * Qy, axis=-1) + cfg.beta * np.sum(F * F, axis=-1)
    return 0.5 * integrand @ c, F


def ensemble_objective(system, theta: NetworkParams, cfg: EnsembleConfig) -> float:
    """Discrete ensemble cost; ``math.inf`` if any trajectory blows up."""
    law, trajs = _forward(system, theta, cfg)
    if any(tr.status == "blew_up" for tr in trajs):
        return math.inf
    states = np.stack([tr.states for tr in trajs])
    costs, _ = _running_costs(system, law, states, cfg)
    return float(cfg.weights @ costs) + regularizer(theta, cfg.alpha_R)


def ensemble_gradient(system, theta: NetworkParams, cfg: EnsembleConfig):
    """Return ``(gradient, objective)`` of the discrete ensemble cost.

    Raises
    ------
    BlowUpError
        Some closed-loop trajectory blew up; ``ic_index`` names the first.
    """
    law, trajs = _forward(system, theta, cfg)
    for i, tr in enumerate(trajs):
        if tr.status == "blew_up":
            raise BlowUpError(f"initial condition {i} blows up at step {tr.failed_step}",
                              ic_index=i, step=tr.failed_step)
    states = np.stack([tr.states for tr in trajs])
    costs, F = _running_costs(system, law, states, cfg)
    objective = float(cfg.weights @ costs) + regularizer(theta, cfg.alpha_R)

    lam, _ = _adjoint_core(system, law, states, cfg.h, system.output_matrix, cfg.beta)
    # node j collects h/2 (lam_j + lam_{j+1}) from the two adjacent CN steps
    lam_avg = 0.5 * (lam[:, :-1] + lam[:, 1:])
    c = trapezoid_weights(cfg.n_steps, cfg.h)
    V = cfg.h * lam_avg @ system.control_matrix + cfg.beta * c[None, :, None] * F
    V *= cfg.weights[:, None, None]
    n, m = system.n, system.m
    grad = nn_vjp_theta(theta, states.reshape(-1, n), V.reshape(-1, m))
    grad = grad + regularizer_gradient(theta, cfg.alpha_R)
    return grad, objective


def bb_stepsize(S, E, variant: int, s_min: float, s_max: float, orientation: str = "as_printed",
                fallback: float | None = None) -> float:
    """Barzilai-Borwein stepsize from ``S = theta_k - theta_{k-1}`` and
    ``E = g_k - g_{k-1}``, clamped to ``[s_min, s_max]``.

    ``as_printed`` uses ``(S,E)/(S,S)`` and ``(E,E)/(S,E)``; ``standard``
    uses their reciprocals ``(S,S)/(S,E)`` and ``(S,E)/(E,E)``. A
    non-positive or undefined quotient gives ``fallback`` (clamped), or
    ``s_min`` if none is given.
    """
    s = np.ravel(S.to_vector() if isinstance(S, NetworkParams) else S)
    e = np.ravel(E.to_vector() if isinstance(E, NetworkParams) else E)
    ss, se, ee = float(s @ s), float(s @ e), float(e @ e)
    if variant not in (1, 2):
        raise ValueError("variant must be 1 or 2")
    with np.errstate(divide="ignore", invalid="ignore"):
        if orientation == "as_printed":
            raw = np.divide(se, ss) if variant == 1 else np.divide(ee, se)
        elif orientation == "standard":
            raw = np.divide(ss, se) if variant == 1 else np.divide(se, ee)
        else:
            raise ValueError(f"unknown orientation {orientation!r}")
    if not np.isfinite(raw) or raw <= 0:
        raw = s_min if fallback is None else fallback
    return float(max(s_min, min(raw, s_max)))


def train(system, theta0: NetworkParams, cfg: EnsembleConfig, callback=None) -> TrainReport:
    """Projected gradient descent with Barzilai-Borwein stepsizes.

    A trial step whose closed loop blows up on the training set is retried
    with half the stepsize, at most ``cfg.max_halvings`` times; a step still
    failing is rejected. ``cfg.stall_limit`` consecutive rejections end the
    run.
    """
    if theta0.arch.n != system.n or theta0.arch.m != system.m:
        raise ValueError(f"network maps R^{theta0.arch.n} -> R^{theta0.arch.m}, "
                         f"system needs R^{system.n} -> R^{system.m}")
    theta = project_R_ad(theta0, cfg.eta1, cfg.eta2)
    try:
        grad, obj = ensemble_gradient(system, theta, cfg)
    except BlowUpError as exc:
        raise UnrecoverableStartError(f"initial network: {exc}", ic_index=exc.ic_index, step=exc.step) from exc
    initial = obj
    records: list[IterationRecord] = []
    s = cfg.s0
    rejected_total = 0
    rejected_run = 0
    termination = "max_iters"
    while len(records) < cfg.max_iters:
        if grad.norm() <= cfg.grad_tol:
            termination = "grad_tol"
            break
        step, failures = s, 0
        accepted = None
        for _ in range(cfg.max_halvings + 1):
            trial = project_R_ad(theta - step * grad, cfg.eta1, cfg.eta2)
            try:
                accepted = (trial, *ensemble_gradient(system, trial, cfg))
                break
            except (BlowUpError, NewtonFailure):
                failures += 1
                step *= 0.5
        if accepted is None:
            rejected_total += 1
            rejected_run += 1
            log.info("step rejected after %d halvings", failures)
            if rejected_run >= cfg.stall_limit:
                termination = "stalled"
                break
            s = max(cfg.s_min, step)
            continue
        rejected_run = 0
        trial, grad_new, obj = accepted
        S, E = trial - theta, grad_new - grad
        theta, grad = trial, grad_new
        k = len(records)
        rec = IterationRecord(k + 1, obj, grad.norm(), step, failures)
        records.append(rec)
        log.debug("iter %d  J=%.6e  |g|=%.3e  s=%.3e", rec.iteration, obj, rec.grad_norm, step)
        if callback is not None:
            callback(rec, theta)
        variant = 1 if k % 2 == 0 else 2
        # "previous" keeps the last accepted step when the curvature estimate
        # is not positive; s_min there can freeze the iteration for good
        fallback = step if cfg.bb_fallback == "previous" else None
        s = bb_stepsize(S, E, variant, cfg.s_min, cfg.s_max, cfg.bb_orientation, fallback)
    else:
        if grad.norm() <= cfg.grad_tol:
            termination = "grad_tol"
    final = ensemble_objective(system, theta, cfg)
    return TrainReport(
        records=records,
        theta=theta,
        termination=termination,
        initial_objective=initial,
        final_objective=final,
        final_grad_norm=grad.norm(),
        rejected_steps=rejected_total,
    )
