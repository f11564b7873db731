"""Crank-Nicolson time stepping for closed loops and their discrete adjoints.

The forward scheme on a uniform grid ``t_k = k h`` is

    y_{k+1} = y_k + h/2 (G(y_k) + G(y_{k+1})),   G(y) = f(y) + B F(y),

solved per step by damped Newton. The backward recursion in
:func:`integrate_adjoint` is the exact transpose of this scheme combined
with trapezoidal weights for the running cost, so gradients assembled from
it are exact derivatives of the discrete objective.

Several initial conditions are integrated together as a batch; each member
carries its own status and stops on blow-up or Newton failure.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import LinearSolveError

__all__ = [
    "Trajectory",
    "AdjointTrajectory",
    "trapezoid",
    "trapezoid_weights",
    "integrate_closed_loop",
    "integrate_ensemble",
    "integrate_adjoint",
    "integrate_adjoint_ensemble",
    "write_trajectory_csv",
]

BLOWUP_THRESHOLD = 1e6
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
MAX_HALVINGS = 12
ROUNDOFF_FACTOR = 16.0
_EPS = np.finfo(float).eps
ESCAPE_FACTOR = 2.0


@dataclass
class Trajectory:
    """States on the grid ``k h``, ``k = 0..n_steps``.

    On blow-up or Newton failure ``states`` is truncated after
    ``failed_step``. A blow-up detected by the threshold keeps the first row
    above it. A Newton failure right after the state grew to its running
    peak of at least ``ESCAPE_FACTOR * max(1, |y0|_inf)`` is also reported as
    a blow-up; then the last row is the last converged state.
    """

    T: float
    n_steps: int
    states: np.ndarray
    status: str = "completed"
    failed_step: int | None = None

    @property
    def h(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.states.shape[0])

    @property
    def completed(self) -> bool:
        return self.status == "completed"


@dataclass
class AdjointTrajectory:
    """Costates on the state grid.

    ``multipliers[k]`` (``k = 0..n_steps - 1``) is the Lagrange multiplier of
    the step ``k -> k + 1``; it approximates the costate at ``(k + 1/2) h``.
    ``costates`` holds nodal values: the exact sensitivity of the discrete
    cost with respect to the initial state at node 0, midpoint averages of
    the multipliers at interior nodes, and the terminal zero.
    """

    T: float
    n_steps: int
    costates: np.ndarray
    multipliers: np.ndarray

    @property
    def h(self) -> float:
        return self.T / self.n_steps


def trapezoid_weights(n_steps: int, h: float) -> np.ndarray:
    w = np.full(n_steps + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def trapezoid(values, h: float) -> float:
    """Composite trapezoidal rule on a uniform grid."""
    v = np.asarray(values, dtype=float)
    if v.shape[0] < 2:
        raise ValueError("need at least two samples")
    return float(h * (0.5 * v[0] + v[1:-1].sum(axis=0) + 0.5 * v[-1]))


# --------------------------------------------------------------------------
# Forward


def _closed_loop(system, law):
    B = np.asarray(system.control_matrix, dtype=float)

    def G(y):
        return system.drift(y) + law(y) @ B.T

    def DG(y):
        return system.drift_jacobian(y) + B @ law.jacobian(y)

    return G, DG


def _batched_solve(J, r):
    """Solve ``J x = r`` for stacked systems; singular members give NaN."""
    try:
        return np.linalg.solve(J, r[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.full_like(r, np.nan)
        for i in range(r.shape[0]):
            try:
                out[i] = np.linalg.solve(J[i], r[i])
            except np.linalg.LinAlgError:
                pass
        return out


def _norm(x):
    return np.sqrt(np.einsum("...i,...i->...", x, x))


def _newton_step(G, DG, y, Gy, h, tol, max_iter):
    """Solve ``z - y - h/2 (G(y) + G(z)) = 0`` for a batch of states.

    Returns ``(z, G(z), converged)``.
    """
    half = 0.5 * h
    n = y.shape[-1]
    eye = np.eye(n)

    def residual(z, y_, Gy_):
        Gz = G(z)
        return z - y_ - half * (Gy_ + Gz), Gz

    # explicit Euler predictor, unless the previous state (residual -h G(y)) is a better start
    z = y + h * Gy
    R, Gz = residual(z, y, Gy)
    R0 = -h * Gy
    worse = ~(_norm(R) <= _norm(R0))
    if worse.any():
        z[worse], R[worse], Gz[worse] = y[worse], R0[worse], Gy[worse]

    rn = _norm(R)
    done = rn <= tol * (1.0 + _norm(z))
    stuck = np.zeros_like(done)
    for _ in range(max_iter):
        w = np.nonzero(~done & ~stuck)[0]
        if w.size == 0:
            break
        zw, Rw, rw = z[w], R[w], rn[w]
        yw, Gyw = y[w], Gy[w]
        dz = _batched_solve(eye - half * DG(zw), -Rw)
        bad = ~np.all(np.isfinite(dz), axis=-1)
        dz[bad] = 0.0
        # a full Newton update below rounding resolution means the residual
        # is at its attainable floor (stiff states with large cancelling terms)
        tiny = ~bad & (_norm(dz) <= ROUNDOFF_FACTOR * _EPS * (1.0 + _norm(zw)))
        done[w[tiny]] = True
        bad |= tiny
        t = np.ones(len(w))
        accepted = np.zeros(len(w), dtype=bool)
        for _ in range(MAX_HALVINGS):
            pend = np.nonzero(~accepted & ~bad)[0]
            if pend.size == 0:
                break
            zt = zw[pend] + t[pend, None] * dz[pend]
            Rt, Gt = residual(zt, yw[pend], Gyw[pend])
            rt = _norm(Rt)
            ok = np.isfinite(rt) & (rt <= (1.0 - 1e-4 * t[pend]) * rw[pend])
            take = pend[ok]
            zw[take], Rw[take], rw[take] = zt[ok], Rt[ok], rt[ok]
            Gz[w[take]] = Gt[ok]
            accepted[take] = True
            t[pend[~ok]] *= 0.5
        z[w], R[w], rn[w] = zw, Rw, rw
        done[w] |= rw <= tol * (1.0 + _norm(zw))
        stuck[w[~accepted & ~done[w]]] = True
    return z, Gz, done


def integrate_ensemble(
    system,
    law,
    initial_states,
    T: float,
    n_steps: int,
    blowup_threshold: float = BLOWUP_THRESHOLD,
    newton_tol: float = NEWTON_TOL,
    max_newton: int = NEWTON_MAX_ITER,
) -> list[Trajectory]:
    """Integrate the closed loop from each row of ``initial_states``."""
    Y0 = np.atleast_2d(np.asarray(initial_states, dtype=float))
    if Y0.shape[-1] != system.n:
        raise ValueError(f"initial states have dimension {Y0.shape[-1]}, expected {system.n}")
    if n_steps < 1 or T <= 0:
        raise ValueError("need T > 0 and n_steps >= 1")
    if not np.all(np.isfinite(Y0)):
        raise ValueError("initial states must be finite")
    N, n = Y0.shape
    h = T / n_steps
    G, DG = _closed_loop(system, law)
    states = np.zeros((N, n_steps + 1, n))
    states[:, 0] = Y0
    status = np.array(["completed"] * N, dtype=object)
    failed = np.full(N, -1)
    last_row = np.full(N, n_steps)
    peak = np.abs(Y0).max(axis=1)
    escape_level = ESCAPE_FACTOR * np.maximum(1.0, peak)
    big0 = peak > blowup_threshold
    status[big0] = "blew_up"
    failed[big0] = 0
    last_row[big0] = 0
    active = ~big0
    with np.errstate(all="ignore"):
        Gy = np.zeros_like(Y0)
        if active.any():
            Gy[active] = G(Y0[active])
        for k in range(n_steps):
            idx = np.nonzero(active)[0]
            if idx.size == 0:
                break
            y = states[idx, k]
            z, Gz, conv = _newton_step(G, DG, y, Gy[idx], h, newton_tol, max_newton)
            finite = np.all(np.isfinite(z), axis=1)
            znorm = np.abs(np.where(finite[:, None], z, 0.0)).max(axis=1)
            big = ~finite | (znorm > blowup_threshold)
            # the implicit step losing its solution right after runaway growth
            # is how a finite-time blow-up shows up within one step
            ynorm = np.abs(y).max(axis=1)
            escaped = ~conv & ~big & (ynorm >= peak[idx]) & (ynorm >= escape_level[idx])
            blew = big | escaped
            nfail = ~conv & ~blew
            store = finite & conv & ~big | (finite & big)
            states[idx[store], k + 1] = z[store]
            Gy[idx] = Gz
            peak[idx] = np.maximum(peak[idx], np.where(conv & finite, znorm, 0.0))
            last_row[idx[blew | nfail]] = k
            last_row[idx[store & big]] = k + 1
            for mask, label in ((blew, "blew_up"), (nfail, "newton_failed")):
                sel = idx[mask]
                status[sel] = label
                failed[sel] = k + 1
                active[sel] = False
    out = []
    for i in range(N):
        if status[i] == "completed":
            out.append(Trajectory(T, n_steps, states[i], "completed", None))
        else:
            # keeps the first over-threshold state of a blow-up, drops unconverged iterates
            rows = states[i, : last_row[i] + 1].copy()
            out.append(Trajectory(T, n_steps, rows, str(status[i]), int(failed[i])))
    return out


def integrate_closed_loop(system, law, y0, T: float, n_steps: int, **kwargs) -> Trajectory:
    """Crank-Nicolson solution of ``y' = f(y) + B F(y)``, ``y(0) = y0``."""
    y0 = np.asarray(y0, dtype=float)
    return integrate_ensemble(system, law, y0[None, :], T, n_steps, **kwargs)[0]


# --------------------------------------------------------------------------
# Adjoint


def _adjoint_core(system, law, states, h, Q, beta):
    """Backward recursion for a batch of completed trajectories.

    ``states`` has shape ``(N, K + 1, n)``. Returns ``(lam, p0)`` where
    ``lam[:, j]`` for ``j = 1..K`` is the multiplier of step ``j - 1 -> j``
    and ``lam[:, 0] = lam[:, K + 1] = 0`` pad the recursion; ``p0`` is the
    gradient of the discrete cost with respect to the initial state.
    """
    N, K1, n = states.shape
    K = K1 - 1
    B = np.asarray(system.control_matrix, dtype=float)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    QtQ = Q.T @ Q
    c = trapezoid_weights(K, h)
    half = 0.5 * h
    eye = np.eye(n)
    lam = np.zeros((N, K + 2, n))
    p0 = np.zeros((N, n))
    for j in range(K, -1, -1):
        y = states[:, j]
        DF = law.jacobian(y)
        # gradient of the running cost 1/2 (|Qy|^2 + beta |F(y)|^2)
        src = y @ QtQ.T
        if beta:
            src = src + beta * np.einsum("nmi,nm->ni", DF, law(y))
        MT = np.swapaxes(system.drift_jacobian(y) + B @ DF, -1, -2)
        rhs = lam[:, j + 1] + half * np.einsum("nij,nj->ni", MT, lam[:, j + 1]) + c[j] * src
        if j == 0:
            p0 = rhs
            break
        try:
            lam[:, j] = np.linalg.solve(eye - half * MT, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise LinearSolveError(f"singular adjoint step matrix at step {j} (h={h:g})") from exc
    return lam, p0


def integrate_adjoint_ensemble(system, law, trajectories, Q, beta) -> list[AdjointTrajectory]:
    if any(not tr.completed for tr in trajectories):
        raise ValueError("adjoint needs completed forward trajectories")
    T, K = trajectories[0].T, trajectories[0].n_steps
    states = np.stack([tr.states for tr in trajectories])
    lam, p0 = _adjoint_core(system, law, states, T / K, Q, beta)
    out = []
    for i in range(len(trajectories)):
        costates = np.zeros((K + 1, system.n))
        costates[0] = p0[i]
        costates[1:K] = 0.5 * (lam[i, 1:K] + lam[i, 2 : K + 1])
        out.append(AdjointTrajectory(T, K, costates, lam[i, 1 : K + 1].copy()))
    return out


def integrate_adjoint(system, law, traj: Trajectory, Q, beta: float) -> AdjointTrajectory:
    """Discrete adjoint of the Crank-Nicolson closed loop, ``p(T) = 0``.

    ``law`` is any feedback law (typically a network feedback); its state
    Jacobian enters the adjoint operator.
    """
    return integrate_adjoint_ensemble(system, law, [traj], Q, beta)[0]


def write_trajectory_csv(path, traj: Trajectory, law=None) -> None:
    """Write ``t,y1..yn[,u1..um]`` with 17 significant digits."""
    states = traj.states
    n = states.shape[1]
    header = ["t"] + [f"y{i + 1}" for i in range(n)]
    controls = None
    if law is not None:
        with np.errstate(all="ignore"):
            controls = np.atleast_2d(law(states))
        header += [f"u{i + 1}" for i in range(controls.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, t in enumerate(traj.times):
            row = [t, *states[k]]
            if controls is not None:
                row += list(controls[k])
            writer.writerow([f"{v:.17g}" for v in row])
