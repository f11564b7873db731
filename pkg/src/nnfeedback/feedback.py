"""State-feedback laws ``u = F(y)`` with ``F(0) = 0``.

The neural feedback is the shifted realization ``F(x) = net(x) - net(0)``
of a fully connected network whose hidden layers optionally carry an
identity skip connection, ``z -> sigma(W z + b) + z``. Derivatives with
respect to the state and to the parameters are coded by hand.

Every law accepts states of shape ``(..., n)`` and returns controls of
shape ``(..., m)``; ``jacobian`` returns ``(..., m, n)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import NumericalOverflowError

__all__ = [
    "ACTIVATIONS",
    "Architecture",
    "NetworkParams",
    "FeedbackLaw",
    "ZeroFeedback",
    "LinearFeedback",
    "PSEFeedback",
    "NetworkFeedback",
    "nn_forward",
    "nn_jac_x",
    "nn_vjp_theta",
    "lqr_gain",
    "lqr_feedback",
    "pse_feedback",
    "project_R_ad",
    "project_l1_ball",
    "nn_init",
    "save_checkpoint",
    "load_checkpoint",
    "params_to_dict",
    "params_from_dict",
]


# --------------------------------------------------------------------------
# Activations: (sigma, sigma')


def _softplus(x):
    return np.logaddexp(0.0, x)


def _relu_p(x):
    return np.maximum(x, 0.0) ** 1.01


def _relu_p_prime(x):
    return 1.01 * np.maximum(x, 0.0) ** 0.01


def _tanh_prime(x):
    return 1.0 - np.tanh(x) ** 2


ACTIVATIONS = {
    "softplus": (_softplus, expit),
    "relu_p": (_relu_p, _relu_p_prime),
    "tanh": (np.tanh, _tanh_prime),
}


@dataclass(frozen=True)
class Architecture:
    widths: tuple[int, ...]
    activation: str = "softplus"
    skip_connections: bool = True

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"invalid widths {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.skip_connections and any(w != widths[0] for w in widths[1:-1]):
            raise ValueError("skip connections need hidden widths equal to the input width")

    @property
    def L(self) -> int:
        return len(self.widths) - 1

    @property
    def n(self) -> int:
        return self.widths[0]

    @property
    def m(self) -> int:
        return self.widths[-1]

    @classmethod
    def uniform(cls, n, m, L, activation="softplus", skip_connections=True):
        return cls((n,) + (n,) * (L - 1) + (m,), activation, skip_connections)


@dataclass
class NetworkParams:
    """Weights ``W_i`` (shape ``N_i x N_{i-1}``) and biases ``b_i``, i = 1..L.

    Also used for gradients; supports the vector-space operations needed by
    the optimizer.
    """

    arch: Architecture
    weights: list
    biases: list

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        w = self.arch.widths
        if len(self.weights) != self.arch.L or len(self.biases) != self.arch.L:
            raise ValueError("number of layers does not match architecture")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (w[i + 1], w[i]) or b.shape != (w[i + 1],):
                raise ValueError(f"layer {i + 1} has shapes {W.shape}, {b.shape}")

    @property
    def L(self) -> int:
        return self.arch.L

    def copy(self) -> NetworkParams:
        return NetworkParams(self.arch, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> NetworkParams:
        return NetworkParams(
            self.arch, [np.zeros_like(W) for W in self.weights], [np.zeros_like(b) for b in self.biases]
        )

    def to_vector(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts += [W.ravel(), b]
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, arch: Architecture, vec) -> NetworkParams:
        vec = np.asarray(vec, dtype=float)
        weights, biases, pos = [], [], 0
        for i in range(arch.L):
            rows, cols = arch.widths[i + 1], arch.widths[i]
            weights.append(vec[pos : pos + rows * cols].reshape(rows, cols).copy())
            pos += rows * cols
            biases.append(vec[pos : pos + rows].copy())
            pos += rows
        if pos != vec.size:
            raise ValueError("vector length does not match architecture")
        return cls(arch, weights, biases)

    def _zip(self, other, op):
        return NetworkParams(
            self.arch,
            [op(a, b) for a, b in zip(self.weights, other.weights)],
            [op(a, b) for a, b in zip(self.biases, other.biases)],
        )

    def __add__(self, other):
        return self._zip(other, np.add)

    def __sub__(self, other):
        return self._zip(other, np.subtract)

    def __mul__(self, s):
        return NetworkParams(self.arch, [s * W for W in self.weights], [s * b for b in self.biases])

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def dot(self, other) -> float:
        return float(self.to_vector() @ other.to_vector())

    def norm(self) -> float:
        return float(np.linalg.norm(self.to_vector()))

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))

    def equals(self, other) -> bool:
        return self.arch == other.arch and np.array_equal(self.to_vector(), other.to_vector())


# --------------------------------------------------------------------------
# Network realization and derivatives


def _forward_pass(theta: NetworkParams, x: np.ndarray):
    """Return (hidden inputs z_0..z_{L-1}, pre-activations a_1..a_{L-1}, output)."""
    sigma = ACTIVATIONS[theta.arch.activation][0]
    skip = theta.arch.skip_connections
    zs, pre = [x], []
    z = x
    for W, b in zip(theta.weights[:-1], theta.biases[:-1]):
        a = z @ W.T + b
        z = sigma(a) + z if skip else sigma(a)
        pre.append(a)
        zs.append(z)
    out = z @ theta.weights[-1].T + theta.biases[-1]
    return zs, pre, out


def _raw_net(theta, x):
    return _forward_pass(theta, x)[2]


def nn_forward(theta: NetworkParams, x) -> np.ndarray:
    """Shifted realization ``net(x) - net(0)``."""
    x = np.asarray(x, dtype=float)
    # same-shaped zeros keep the BLAS code path identical, so F(0) == 0 bitwise
    with np.errstate(over="ignore", invalid="ignore"):
        out = _raw_net(theta, x) - _raw_net(theta, np.zeros_like(x))
    if not np.all(np.isfinite(out)):
        raise NumericalOverflowError("non-finite network output", state=x)
    return out


def nn_jac_x(theta: NetworkParams, x) -> np.ndarray:
    """State Jacobian of the realization, shape ``(..., m, n)``."""
    x = np.asarray(x, dtype=float)
    dsigma = ACTIVATIONS[theta.arch.activation][1]
    skip = theta.arch.skip_connections
    _, pre, _ = _forward_pass(theta, x)
    n = theta.arch.n
    J = np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n))
    for W, a in zip(theta.weights[:-1], pre):
        layer = dsigma(a)[..., :, None] * (W @ J)
        J = layer + J if skip else layer
    return theta.weights[-1] @ J


def _backprop(theta: NetworkParams, x: np.ndarray, v: np.ndarray):
    """Sum over the batch of ``v^T D_theta net(x)``, per layer."""
    dsigma = ACTIVATIONS[theta.arch.activation][1]
    skip = theta.arch.skip_connections
    zs, pre, _ = _forward_pass(theta, x)
    L = theta.L
    gW, gb = [None] * L, [None] * L
    g = v
    gW[-1] = g.T @ zs[-1]
    gb[-1] = g.sum(axis=0)
    gz = g @ theta.weights[-1]
    for i in range(L - 2, -1, -1):
        ga = gz * dsigma(pre[i])
        gW[i] = ga.T @ zs[i]
        gb[i] = ga.sum(axis=0)
        gz = ga @ theta.weights[i] + gz if skip else ga @ theta.weights[i]
    return gW, gb


def nn_vjp_theta(theta: NetworkParams, x, v) -> NetworkParams:
    """Parameter gradient of ``v . F(x)``.

    ``x`` and ``v`` may carry a common leading batch dimension, in which case
    the contributions are summed. The shift ``-net(0)`` is differentiated as
    well, so the output bias always receives a zero gradient.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    x = x.reshape(-1, theta.arch.n)
    v = v.reshape(-1, theta.arch.m)
    gW, gb = _backprop(theta, x, v)
    gW0, gb0 = _backprop(theta, np.zeros((1, theta.arch.n)), v.sum(axis=0, keepdims=True))
    return NetworkParams(
        theta.arch,
        [a - b for a, b in zip(gW, gW0)],
        [a - b for a, b in zip(gb, gb0)],
    )


# --------------------------------------------------------------------------
# Admissible set and initialization


def project_l1_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of a vector onto ``{|w|_1 <= radius}``."""
    v = np.asarray(v, dtype=float)
    if np.abs(v).sum() <= radius:
        return v.copy()
    u = np.sort(np.abs(v))[::-1]
    css = np.cumsum(u)
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u * k > css - radius)[0][-1]
    tau = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def project_R_ad(theta: NetworkParams, eta1: float, eta2: float) -> NetworkParams:
    """Project onto ``{max row l1-norm of W_1 <= eta1, |b_i|_inf <= eta2}``."""
    W1 = theta.weights[0]
    rows_ok = np.abs(W1).sum(axis=1) <= eta1
    if rows_ok.all():
        W1_new = W1.copy()
    else:
        W1_new = np.array([row if ok else project_l1_ball(row, eta1) for row, ok in zip(W1, rows_ok)])
    biases = [np.clip(b, -eta2, eta2) for b in theta.biases]
    weights = [W1_new] + [W.copy() for W in theta.weights[1:]]
    return NetworkParams(theta.arch, weights, biases)


def in_R_ad(theta: NetworkParams, eta1: float, eta2: float) -> bool:
    if np.abs(theta.weights[0]).sum(axis=1).max() > eta1:
        return False
    return all(np.abs(b).max() <= eta2 for b in theta.biases)


def nn_init(arch: Architecture, seed: int = 0, scale: float = 1e-2) -> NetworkParams:
    """Uniform weights and biases in ``[-scale, scale]``."""
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i in range(arch.L):
        rows, cols = arch.widths[i + 1], arch.widths[i]
        weights.append(rng.uniform(-scale, scale, size=(rows, cols)))
        biases.append(rng.uniform(-scale, scale, size=rows))
    return NetworkParams(arch, weights, biases)


# --------------------------------------------------------------------------
# Feedback laws


class FeedbackLaw:
    """Callable state feedback with a state Jacobian."""

    name = "feedback"
    n: int
    m: int

    def __call__(self, y) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, y) -> np.ndarray:
        raise NotImplementedError


class ZeroFeedback(FeedbackLaw):
    name = "uncontrolled"

    def __init__(self, n: int, m: int):
        self.n, self.m = n, m

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1] + (self.m,))

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1] + (self.m, self.n))


class LinearFeedback(FeedbackLaw):
    name = "linear"

    def __init__(self, K, name: str | None = None):
        self.K = np.atleast_2d(np.asarray(K, dtype=float))
        self.m, self.n = self.K.shape
        if name:
            self.name = name

    def __call__(self, y):
        return np.asarray(y, dtype=float) @ self.K.T

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(self.K, y.shape[:-1] + self.K.shape).copy()


def lqr_gain(Pi, B, beta) -> np.ndarray:
    """``K = -(1/beta) B^T Pi``."""
    return -(1.0 / beta) * np.asarray(B, dtype=float).T @ np.asarray(Pi, dtype=float)


def lqr_feedback(Pi, B, beta, y) -> np.ndarray:
    return np.asarray(y, dtype=float) @ lqr_gain(Pi, B, beta).T


class PSEFeedback(FeedbackLaw):
    """``-(1/beta) B^T (Pi y - M^{-1} Pi f_l(y))``.

    With ``form="closed_loop"`` (default) ``M = A^T - (1/beta) Pi B B^T`` is the
    transposed LQR closed-loop matrix, which gives the second-order Taylor
    expansion of the value function. ``form="pi_both_sides"`` uses
    ``M = A^T - (1/beta) Pi B B^T Pi`` instead.

    ``nonlinear_part`` and ``nonlinear_jacobian`` are ``f_l`` and its
    Jacobian; the correction matrix ``M^{-1} Pi`` is formed once.
    """

    name = "PSE"

    def __init__(self, Pi, A, B, beta, nonlinear_part, nonlinear_jacobian=None, form="closed_loop"):
        Pi = np.asarray(Pi, dtype=float)
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if form == "closed_loop":
            M = A.T - (1.0 / beta) * Pi @ B @ B.T
        elif form == "pi_both_sides":
            M = A.T - (1.0 / beta) * Pi @ B @ B.T @ Pi
        else:
            raise ValueError(f"unknown PSE form {form!r}")
        self.form = form
        cond = np.linalg.cond(M)
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError(f"PSE correction matrix is singular (condition number {cond:.3e})")
        self.Pi, self.A, self.B, self.beta = Pi, A, B, float(beta)
        self.correction = np.linalg.solve(M, Pi)
        self.K = lqr_gain(Pi, B, beta)
        self.f_l = nonlinear_part
        self.Df_l = nonlinear_jacobian
        self.n, self.m = A.shape[0], B.shape[1]

    @classmethod
    def from_system(cls, system, Pi, beta, form="closed_loop"):
        A = system.jacobian_at_zero()
        return cls(Pi, A, system.control_matrix, beta, system.nonlinear_part,
                   system.nonlinear_part_jacobian, form=form)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        inner = y @ self.Pi.T - self.f_l(y) @ self.correction.T
        return -(1.0 / self.beta) * inner @ self.B

    def jacobian(self, y):
        if self.Df_l is None:
            raise NotImplementedError("PSE Jacobian needs the Jacobian of the nonlinear part")
        y = np.asarray(y, dtype=float)
        inner = self.Pi - self.correction @ self.Df_l(y)
        return -(1.0 / self.beta) * self.B.T @ inner


def pse_feedback(Pi, A, B, beta, f_l, y, form="closed_loop") -> np.ndarray:
    return PSEFeedback(Pi, A, B, beta, f_l, form=form)(y)


class NetworkFeedback(FeedbackLaw):
    name = "NN"

    def __init__(self, theta: NetworkParams):
        self.theta = theta
        self.n, self.m = theta.arch.n, theta.arch.m

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return _raw_net(self.theta, y) - _raw_net(self.theta, np.zeros_like(y))

    def jacobian(self, y):
        return nn_jac_x(self.theta, y)


# --------------------------------------------------------------------------
# Checkpoints


def params_to_dict(theta: NetworkParams) -> dict:
    arch = theta.arch
    return {
        "architecture": {
            "L": arch.L,
            "widths": list(arch.widths),
            "activation": arch.activation,
            "skip_connections": arch.skip_connections,
        },
        "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in zip(theta.weights, theta.biases)],
    }


def params_from_dict(data: dict) -> NetworkParams:
    a = data["architecture"]
    arch = Architecture(tuple(a["widths"]), a["activation"], bool(a["skip_connections"]))
    if int(a.get("L", arch.L)) != arch.L:
        raise ValueError("layer count does not match widths")
    layers = data["layers"]
    return NetworkParams(
        arch,
        [np.array(layer["W"], dtype=float).reshape(arch.widths[i + 1], arch.widths[i]) for i, layer in enumerate(layers)],
        [np.array(layer["b"], dtype=float) for layer in layers],
    )


def save_checkpoint(theta: NetworkParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(theta), indent=1))


def load_checkpoint(path) -> NetworkParams:
    return params_from_dict(json.loads(Path(path).read_text()))
