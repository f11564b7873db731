"""Long-horizon validation of feedback laws and comparison tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import NewtonFailure
from .feedback import ZeroFeedback
from .timestepping import Trajectory, integrate_ensemble, trapezoid_weights

__all__ = ["EvalRow", "validate", "validate_many", "comparison_table", "table_to_csv", "table_to_text"]

DECAY_TOL = 1e-2
CSV_HEADER = ["ic", "controller", "qy_l2", "u_l2", "J", "status"]


@dataclass
class EvalRow:
    controller: str
    qy_l2: float
    u_l2: float
    J: float
    status: str
    ic: str = ""

    def as_list(self):
        return [self.ic, self.controller, self.qy_l2, self.u_l2, self.J, self.status]


def _row_from_trajectory(name, law, tr: Trajectory, Q, beta, decay_tol, is_zero):
    if tr.status == "newton_failed":
        return EvalRow(name, math.nan, math.nan, math.nan, "error")
    if tr.status == "blew_up":
        return EvalRow(name, math.inf, 0.0 if is_zero else math.inf, math.inf, "blow_up")
    c = trapezoid_weights(tr.n_steps, tr.h)
    Qy = tr.states @ np.asarray(Q, dtype=float).T
    u = law(tr.states)
    qy = math.sqrt(float(np.sum(Qy * Qy, axis=-1) @ c))
    un = math.sqrt(float(np.sum(u * u, axis=-1) @ c))
    if np.abs(tr.states[-1]).max() > decay_tol:
        return EvalRow(name, math.inf, un, math.inf, "no_decay")
    return EvalRow(name, qy, un, 0.5 * (qy**2 + beta * un**2), "ok")


def _validate(system, law, initial_states, beta, T_val, n_steps, name, decay_tol, blowup_threshold):
    name = name or getattr(law, "name", "feedback")
    trajs = integrate_ensemble(system, law, initial_states, T_val, n_steps, blowup_threshold=blowup_threshold)
    is_zero = isinstance(law, ZeroFeedback)
    rows = [_row_from_trajectory(name, law, tr, system.output_matrix, beta, decay_tol, is_zero) for tr in trajs]
    return rows, trajs


def validate_many(system, law, initial_states, beta, T_val, n_steps, name=None,
                  decay_tol=DECAY_TOL, blowup_threshold=1e6, trajectories=None) -> list[EvalRow]:
    """Validate ``law`` from several initial states at once.

    Newton failures are reported as rows with status ``"error"``. If a list
    is passed as ``trajectories`` the integrated trajectories are appended.
    """
    rows, trajs = _validate(system, law, initial_states, beta, T_val, n_steps, name, decay_tol, blowup_threshold)
    if trajectories is not None:
        trajectories.extend(trajs)
    return rows


def validate(system, law, y0, beta, T_val, n_steps, name=None, decay_tol=DECAY_TOL, blowup_threshold=1e6) -> EvalRow:
    """Norms ``|Qy|_{L2}``, ``|F(y)|_{L2}`` and cost over ``[0, T_val]``.

    ``status`` is ``blow_up`` if the trajectory crosses the blow-up threshold,
    ``no_decay`` if ``|y(T_val)|_inf > decay_tol``, else ``ok``. Infinite
    entries mark the first two cases.
    """
    if T_val <= 0:
        raise ValueError("T_val must be positive")
    row = validate_many(system, law, np.asarray(y0, dtype=float)[None, :], beta, T_val, n_steps,
                        name, decay_tol, blowup_threshold)[0]
    if row.status == "error":
        raise NewtonFailure(f"Newton iteration failed while validating {row.controller}")
    return row


def comparison_table(system, laws, initial_states, beta, T_val, n_steps, ic_names=None,
                     decay_tol=DECAY_TOL, trajectories=None) -> list[list[EvalRow]]:
    """One group of rows per initial state, one row per law, in input order.

    ``laws`` is a sequence of ``(name, law)`` pairs or of laws with a ``name``.
    A dict passed as ``trajectories`` receives the trajectories by law name.
    """
    laws = [(lw if isinstance(lw, tuple) else (lw.name, lw)) for lw in laws]
    Y0 = np.atleast_2d(np.asarray(initial_states, dtype=float)) if len(initial_states) else np.zeros((0, system.n))
    ic_names = list(ic_names) if ic_names is not None else [f"ic{i}" for i in range(len(Y0))]
    if not laws or len(Y0) == 0:
        return []
    columns = []
    for name, law in laws:
        rows, trajs = _validate(system, law, Y0, beta, T_val, n_steps, name, decay_tol, 1e6)
        columns.append(rows)
        if trajectories is not None:
            trajectories[name] = trajs
    groups = []
    for i, ic in enumerate(ic_names):
        group = []
        for col in columns:
            row = col[i]
            row.ic = ic
            group.append(row)
        groups.append(group)
    return groups


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.17g}"
    return str(v)


def table_to_csv(groups, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_HEADER)
    for group in groups:
        for row in group:
            writer.writerow([_fmt(v) for v in row.as_list()])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def table_to_text(groups) -> str:
    lines = []
    head = f"{'controller':<14}{'|Qy|_L2':>12}{'|F(y)|_L2':>12}{'J':>12}  status"
    for group in groups:
        if not group:
            continue
        lines.append(f"y0 = {group[0].ic}")
        lines.append(head)
        for r in group:
            cells = [f"{v:>12.4g}" if math.isfinite(v) else f"{'+inf':>12}" for v in (r.qy_l2, r.u_l2, r.J)]
            lines.append(f"{r.controller:<14}{''.join(cells)}  {r.status}")
        lines.append("")
    return "\n".join(lines)
