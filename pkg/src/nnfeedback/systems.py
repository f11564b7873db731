"""Controlled ODE systems ``y' = f(y) + B u`` and the three benchmark problems.

All drift functions accept states with arbitrary leading batch dimensions,
i.e. arrays of shape ``(..., n)``; Jacobians are returned with shape
``(..., n, n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericalOverflowError

__all__ = [
    "DynamicalSystem",
    "SpectralGrid",
    "eval_f",
    "eval_jacobian",
    "linearization",
    "chebyshev_nodes",
    "chebyshev_diff_matrix",
    "clenshaw_curtis_weights",
    "spectral_grid",
    "build_lc_circuit",
    "build_vanderpol",
    "build_burgers",
    "build_system",
    "burgers_profile",
    "BURGERS_PROFILES",
]


@dataclass(frozen=True)
class DynamicalSystem:
    """Autonomous control-affine system with quadratic output weight."""

    name: str
    n: int
    m: int
    drift: Callable[[np.ndarray], np.ndarray]
    drift_jacobian: Callable[[np.ndarray], np.ndarray]
    control_matrix: np.ndarray
    output_matrix: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def B(self) -> np.ndarray:
        return self.control_matrix

    @property
    def Q(self) -> np.ndarray:
        return self.output_matrix

    def jacobian_at_zero(self) -> np.ndarray:
        return np.asarray(self.drift_jacobian(np.zeros(self.n)), dtype=float)

    def nonlinear_part(self, y: np.ndarray) -> np.ndarray:
        """``f(y) - Df(0) y``."""
        y = np.asarray(y, dtype=float)
        return self.drift(y) - y @ self.jacobian_at_zero().T

    def nonlinear_part_jacobian(self, y: np.ndarray) -> np.ndarray:
        return self.drift_jacobian(y) - self.jacobian_at_zero()


def eval_f(system: DynamicalSystem, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != system.n:
        raise ValueError(f"state has length {y.shape[-1]}, expected {system.n}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = system.drift(y)
    if not np.all(np.isfinite(out)):
        raise NumericalOverflowError(f"non-finite drift of {system.name}", state=y)
    return out


def eval_jacobian(system: DynamicalSystem, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != system.n:
        raise ValueError(f"state has length {y.shape[-1]}, expected {system.n}")
    return system.drift_jacobian(y)


def linearization(system: DynamicalSystem) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Df(0), B)``."""
    return system.jacobian_at_zero(), np.array(system.control_matrix, dtype=float)


# --------------------------------------------------------------------------
# Chebyshev collocation


@dataclass(frozen=True)
class SpectralGrid:
    N: int
    nodes: np.ndarray
    D: np.ndarray
    cc_weights: np.ndarray

    @property
    def D2(self) -> np.ndarray:
        return self.D @ self.D

    @property
    def interior(self) -> slice:
        return slice(1, self.N)


def _check_degree(N) -> int:
    if int(N) != N or N < 1:
        raise ValueError(f"polynomial degree must be an integer >= 1, got {N!r}")
    return int(N)


def chebyshev_nodes(N: int) -> np.ndarray:
    """Chebyshev extreme points ``cos(j*pi/N)``, ``j = 0..N`` (decreasing)."""
    N = _check_degree(N)
    return np.cos(np.pi * np.arange(N + 1) / N)


def chebyshev_diff_matrix(N: int) -> np.ndarray:
    """Collocation differentiation matrix on :func:`chebyshev_nodes`.

    The diagonal is set by the negative-sum trick so that every row sums to
    zero up to rounding.
    """
    N = _check_degree(N)
    x = chebyshev_nodes(N)
    c = np.ones(N + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(N + 1)
    dX = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    return D


def clenshaw_curtis_weights(N: int) -> np.ndarray:
    """Clenshaw-Curtis weights on the ``N + 1`` Chebyshev extreme points."""
    N = _check_degree(N)
    theta = np.pi * np.arange(N + 1) / N
    w = np.zeros(N + 1)
    inner = np.arange(1, N)
    v = np.ones(N - 1)
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k**2 - 1)
        v -= np.cos(N * theta[inner]) / (N**2 - 1)
    else:
        w[0] = w[N] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k**2 - 1)
    w[inner] = 2.0 * v / N
    return w


def spectral_grid(N: int) -> SpectralGrid:
    return SpectralGrid(
        N=int(N),
        nodes=chebyshev_nodes(N),
        D=chebyshev_diff_matrix(N),
        cc_weights=clenshaw_curtis_weights(N),
    )


# --------------------------------------------------------------------------
# Benchmarks


LC_MATRIX = np.array([[0.0, 1.0, -1.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])


def build_lc_circuit() -> DynamicalSystem:
    """Two inductors and one capacitor driven by a voltage source."""
    A = LC_MATRIX.copy()

    def drift(y):
        return y @ A.T

    def jac(y):
        y = np.asarray(y)
        return np.broadcast_to(A, y.shape[:-1] + (3, 3)).copy()

    return DynamicalSystem(
        name="lc_circuit",
        n=3,
        m=1,
        drift=drift,
        drift_jacobian=jac,
        control_matrix=np.array([[0.0], [1.0], [0.0]]),
        output_matrix=np.eye(3),
    )


def build_vanderpol() -> DynamicalSystem:
    """Van der Pol oscillator with destabilizing cubic term, first-order form.

    The nonlinear part repeats the ``-y1`` of the linear block, so that
    ``Df(0) = [[0, 1], [-2, 1.5]]``.
    """

    def drift(y):
        y1, y2 = y[..., 0], y[..., 1]
        dy2 = -y1 + 1.5 * y2 - 1.5 * y1**2 * y2 - y1 + 0.8 * y1**3
        return np.stack([y2, dy2], axis=-1)

    def jac(y):
        y = np.asarray(y, dtype=float)
        y1, y2 = y[..., 0], y[..., 1]
        J = np.zeros(y.shape[:-1] + (2, 2))
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -2.0 - 3.0 * y1 * y2 + 2.4 * y1**2
        J[..., 1, 1] = 1.5 - 1.5 * y1**2
        return J

    return DynamicalSystem(
        name="vanderpol",
        n=2,
        m=1,
        drift=drift,
        drift_jacobian=jac,
        control_matrix=np.array([[0.0], [1.0]]),
        output_matrix=np.array([[1.0, 0.0], [0.0, 0.0]]),
    )


def build_burgers(
    N: int = 14,
    nu: float = 0.2,
    delta: float = 0.0,
    p: int = 1,
    omega: tuple[float, float] = (-0.5, -0.2),
) -> DynamicalSystem:
    """Chebyshev collocation of a viscous Burgers-type equation on (-1, 1).

    Homogeneous Dirichlet conditions are imposed by dropping the two boundary
    nodes, so the state holds the ``N - 1`` interior nodal values. The control
    enters through the indicator of the open interval ``omega``.
    """
    N = _check_degree(N)
    if N < 3:
        raise ValueError("Burgers discretization needs N >= 3")
    if p not in (1, 3):
        raise ValueError(f"reaction exponent must be 1 or 3, got {p!r}")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    try:
        lo, hi = (float(v) for v in omega)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"malformed control interval {omega!r}") from exc
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ValueError(f"malformed control interval {omega!r}")

    grid = spectral_grid(N)
    inner = grid.interior
    Dx = grid.D[inner, inner].copy()
    Dxx = grid.D2[inner, inner].copy()
    x = grid.nodes[inner]
    n = N - 1
    B = ((x > lo) & (x < hi)).astype(float)[:, None]
    Q = np.diag(np.sqrt(grid.cc_weights[inner]))
    lin = nu * Dxx

    def drift(y):
        out = y @ lin.T + y * (y @ Dx.T)
        if delta:
            out = out + delta * y**p
        return out

    def jac(y):
        y = np.asarray(y, dtype=float)
        J = np.broadcast_to(lin, y.shape[:-1] + (n, n)).copy()
        J += y[..., :, None] * Dx
        diag = y @ Dx.T
        if delta:
            diag = diag + delta * p * y ** (p - 1)
        idx = np.arange(n)
        J[..., idx, idx] += diag
        return J

    return DynamicalSystem(
        name="burgers",
        n=n,
        m=1,
        drift=drift,
        drift_jacobian=jac,
        control_matrix=B,
        output_matrix=Q,
        params={
            "N": N,
            "nu": nu,
            "delta": delta,
            "p": p,
            "omega": (lo, hi),
            "nodes": x,
            "Dx": Dx,
            "Dxx": Dxx,
            "grid": grid,
        },
    )


BURGERS_PROFILES = {
    "Y1": lambda x: np.cos(2 * np.pi * x) * np.cos(np.pi * x) + 0.5,
    "Y2": lambda x: np.cos(2 * np.pi * x) * np.cos(np.pi * x) + 1.5,
    "Y3": lambda x: -2.0 * np.sign(x),
    "Y4": lambda x: 2.5 * (x - 1) ** 2 * (x + 1) ** 2,
}


def burgers_profile(name: str, system: DynamicalSystem) -> np.ndarray:
    """Sample a named initial profile at the interior collocation nodes."""
    try:
        fn = BURGERS_PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown Burgers profile {name!r}") from None
    return np.asarray(fn(system.params["nodes"]), dtype=float)


def build_system(name: str, **params) -> DynamicalSystem:
    if name == "lc_circuit":
        return build_lc_circuit()
    if name == "vanderpol":
        return build_vanderpol()
    if name == "burgers":
        return build_burgers(**params)
    raise ValueError(f"unknown system {name!r}")
