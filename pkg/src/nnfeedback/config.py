"""Experiment configuration: JSON <-> dataclasses.

A config has a ``system`` block, a ``network`` block, a ``training`` block
(ensemble settings plus how the training initial states are chosen) and an
``evaluation`` block. Optional ``variants`` override system or training
fields; each variant runs as its own experiment.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatchError
from .feedback import Architecture
from .systems import BURGERS_PROFILES, build_system, burgers_profile
from .timestepping import integrate_ensemble
from .training import EnsembleConfig

__all__ = [
    "SystemSpec",
    "NetworkSpec",
    "SamplerSpec",
    "TrainingSpec",
    "EvaluationSpec",
    "ExperimentConfig",
    "load_config",
    "dump_config",
    "bundled_config_path",
]

SYSTEM_NAMES = ("lc_circuit", "vanderpol", "burgers")
BURGERS_PARAMS = ("N", "nu", "delta", "p", "omega")
CONFIG_DIR = Path(__file__).with_name("configs")


def bundled_config_path(name: str) -> Path:
    path = CONFIG_DIR / (name if name.endswith(".json") else name + ".json")
    if not path.exists():
        raise ConfigError(f"no bundled config {name!r}")
    return path


def _only(d: dict, cls, where: str) -> dict:
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    return d


@dataclass
class SystemSpec:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in SYSTEM_NAMES:
            raise ConfigError(f"unknown system {self.name!r}; expected one of {SYSTEM_NAMES}")
        allowed = BURGERS_PARAMS if self.name == "burgers" else ()
        extra = set(self.params) - set(allowed)
        if extra:
            raise ConfigError(f"system {self.name!r} takes no parameters {sorted(extra)}")
        if "omega" in self.params:
            self.params["omega"] = [float(v) for v in self.params["omega"]]

    def build(self):
        params = dict(self.params)
        if "omega" in params:
            params["omega"] = tuple(params["omega"])
        try:
            return build_system(self.name, **params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid system parameters: {exc}") from exc


@dataclass
class NetworkSpec:
    """Either explicit ``widths`` or ``L`` with all widths equal to ``n``
    except the output width ``m``."""

    L: int = 1
    widths: list | None = None
    activation: str = "softplus"
    skip_connections: bool = False
    init_scale: float = 1e-2
    warm_start: str = "none"

    def __post_init__(self):
        if self.warm_start not in ("none", "lqr"):
            raise ConfigError(f"unknown warm start {self.warm_start!r}")

    def architecture(self, n: int, m: int) -> Architecture:
        widths = list(self.widths) if self.widths is not None else [n] * self.L + [m]
        if len(widths) != self.L + 1:
            raise ConfigError(f"network has L={self.L} but {len(widths)} widths")
        if widths[0] != n or widths[-1] != m:
            raise DimensionMismatchError(
                f"network maps R^{widths[0]} -> R^{widths[-1]}, system needs R^{n} -> R^{m}"
            )
        try:
            return Architecture(tuple(widths), self.activation, self.skip_connections)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class SamplerSpec:
    """``count`` states uniform in ``[low, high]^n`` from ``seed``.

    ``on_blowup`` decides what happens to draws whose closed loop under the
    caller's screen blows up: ``"keep"`` ignores the screen, ``"reject"``
    replaces them by further draws from the same stream and ``"shrink"``
    scales them by ``shrink_factor`` until they pass.  Shrinking keeps the
    direction of large states in the set, rejection tends to drop them.
    """

    count: int
    low: float
    high: float
    seed: int = 0
    on_blowup: str = "keep"
    shrink_factor: float = 0.8
    max_batches: int = 50

    def __post_init__(self):
        if self.on_blowup not in ("keep", "reject", "shrink"):
            raise ConfigError(f"on_blowup must be keep, reject or shrink, got {self.on_blowup!r}")
        if not 0.0 < self.shrink_factor < 1.0:
            raise ConfigError("shrink_factor must lie in (0, 1)")

    def sample(self, n: int, seed: int | None = None, screen=None) -> np.ndarray:
        if self.count < 1 or not self.low < self.high:
            raise ConfigError("sampler needs count >= 1 and low < high")
        rng = np.random.default_rng(self.seed if seed is None else seed)
        Y = rng.uniform(self.low, self.high, size=(self.count, n))
        if self.on_blowup == "keep" or screen is None:
            return Y
        if self.on_blowup == "shrink":
            bad = np.ones(self.count, dtype=bool)
            for _ in range(self.max_batches):
                bad[bad] = ~screen(Y[bad])
                if not bad.any():
                    return Y
                Y[bad] *= self.shrink_factor
            raise ConfigError(f"{int(bad.sum())} sampled states still blow up after shrinking")
        kept = list(Y[screen(Y)])
        for _ in range(self.max_batches - 1):
            if len(kept) >= self.count:
                break
            Y = rng.uniform(self.low, self.high, size=(self.count, n))
            kept.extend(Y[screen(Y)])
        if len(kept) < self.count:
            raise ConfigError(f"only {len(kept)} of {self.count} sampled states avoid blow-up")
        return np.array(kept[: self.count])


def _initial_states(block, system, seed=None, screen=None):
    """Resolve a list of named initial states and an optional sampler.

    Entries are ``{"name": ..., "value": [...]}`` or ``{"name": ..., "profile": "Y1"}``.
    ``screen`` maps a batch of states to a boolean mask of acceptable ones.
    Returns ``(names, array)``.
    """
    names, rows = [], []
    for i, entry in enumerate(block.get("named", [])):
        name = entry.get("name", f"ic{i}")
        if "profile" in entry:
            if system.name != "burgers" or entry["profile"] not in BURGERS_PROFILES:
                raise ConfigError(f"profile {entry['profile']!r} not available for {system.name}")
            rows.append(burgers_profile(entry["profile"], system))
        else:
            rows.append(np.asarray(entry["value"], dtype=float))
        names.append(name)
    if block.get("sampler") is not None:
        try:
            sampler = SamplerSpec(**block["sampler"])
        except TypeError as exc:
            raise ConfigError(f"bad sampler block: {exc}") from None
        for j, y in enumerate(sampler.sample(system.n, seed, screen)):
            rows.append(y)
            names.append(f"s{j}")
    for y in rows:
        if y.shape != (system.n,):
            raise DimensionMismatchError(f"initial state has shape {y.shape}, system dimension is {system.n}")
    return names, (np.array(rows) if rows else np.zeros((0, system.n)))


@dataclass
class TrainingSpec:
    initial_conditions: dict
    weights: list | None = None
    beta: float = 0.1
    T: float = 1.0
    n_steps: int | None = None
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
    seed: int = 0

    @property
    def steps(self) -> int:
        # default resolution: 200 steps per unit time
        return int(self.n_steps) if self.n_steps is not None else max(1, int(round(200 * self.T)))

    def ensemble(self, system, seed_override: int | None = None, screen_law=None) -> EnsembleConfig:
        """Ensemble settings; ``seed_override`` also reseeds the IC sampler.

        ``screen_law`` is the initial feedback that samplers with
        ``on_blowup`` set to reject or shrink test their draws against.
        """
        seed = self.seed if seed_override is None else seed_override

        def screen(Y):
            trajs = integrate_ensemble(system, screen_law, Y, self.T, self.steps)
            return np.array([tr.completed for tr in trajs])

        _, Y0 = _initial_states(self.initial_conditions, system, seed_override,
                                screen if screen_law is not None else None)
        if len(Y0) == 0:
            raise ConfigError("training block has no initial conditions")
        try:
            return EnsembleConfig(
                initial_conditions=Y0,
                weights=None if self.weights is None else np.asarray(self.weights, dtype=float),
                beta=self.beta, T=self.T, n_steps=self.steps, alpha_R=self.alpha_R,
                eta1=self.eta1, eta2=self.eta2, max_iters=self.max_iters, grad_tol=self.grad_tol,
                s0=self.s0, s_min=self.s_min, s_max=self.s_max, bb_orientation=self.bb_orientation,
                bb_fallback=self.bb_fallback,
                max_halvings=self.max_halvings, stall_limit=self.stall_limit, seed=seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class EvaluationSpec:
    initial_conditions: dict = field(default_factory=dict)
    T_val: float = 50.0
    n_steps: int = 10000
    decay_tol: float = 1e-2
    baselines: list = field(default_factory=lambda: ["uncontrolled", "lqr", "pse"])

    def __post_init__(self):
        unknown = set(self.baselines) - {"uncontrolled", "lqr", "pse"}
        if unknown:
            raise ConfigError(f"unknown baselines {sorted(unknown)}")
        if self.T_val <= 0 or self.n_steps < 1:
            raise ConfigError("evaluation needs T_val > 0 and n_steps >= 1")

    def initial_states(self, system):
        return _initial_states(self.initial_conditions, system)


@dataclass
class ExperimentConfig:
    name: str
    system: SystemSpec
    network: NetworkSpec
    training: TrainingSpec
    evaluation: EvaluationSpec
    output_dir: str = "runs"
    variants: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = copy.deepcopy(d)
        _only(d, cls, "config")
        for key in ("name", "system", "training"):
            if key not in d:
                raise ConfigError(f"config is missing {key!r}")
        try:
            return cls(
                name=str(d["name"]),
                system=SystemSpec(**_only(d["system"], SystemSpec, "system")),
                network=NetworkSpec(**_only(d.get("network", {}), NetworkSpec, "network")),
                training=TrainingSpec(**_only(d["training"], TrainingSpec, "training")),
                evaluation=EvaluationSpec(**_only(d.get("evaluation", {}), EvaluationSpec, "evaluation")),
                output_dir=str(d.get("output_dir", "runs")),
                variants=list(d.get("variants", [])),
            )
        except TypeError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def variant(self, name: str) -> "ExperimentConfig":
        """Config with the overrides of variant ``name`` applied (no variants left)."""
        for v in self.variants:
            if v.get("name") == name:
                break
        else:
            raise ConfigError(f"no variant {name!r}")
        d = self.to_dict()
        d["variants"] = []
        d["name"] = f"{self.name}_{name}"
        for block in ("system", "network", "training", "evaluation"):
            for key, value in v.get(block, {}).items():
                if block == "system" and key != "name":
                    d["system"]["params"][key] = value
                else:
                    d[block][key] = value
        return ExperimentConfig.from_dict(d)

    def expand(self) -> list:
        """``[(variant name or None, config)]``."""
        if not self.variants:
            return [(None, self)]
        return [(v["name"], self.variant(v["name"])) for v in self.variants]


def load_config(path) -> ExperimentConfig:
    """Parse a JSON config. ``OSError`` for unreadable files, ``ConfigError`` otherwise."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return ExperimentConfig.from_dict(data)


def dump_config(cfg: ExperimentConfig, path=None) -> str:
    text = json.dumps(cfg.to_dict(), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
