"""Scenario description and validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from math import isfinite
from pathlib import Path


class ConfigError(ValueError):
    pass


class Policy(str, Enum):
    CRASH = "crash"
    EQUIVOCATE = "equivocate"
    CENSOR = "censor"
    DELAY_MAX = "delaymax"


class Backend(str, Enum):
    THRESHOLD = "threshold"
    MOCK = "mock"


def _enum(cls, value):
    if isinstance(value, cls):
        return value
    try:
        return cls(str(value).lower())
    except ValueError:
        raise ConfigError(f"unknown {cls.__name__.lower()} {value!r}; expected one of {[m.value for m in cls]}")


@dataclass(frozen=True)
class Scenario:
    n: int = 4
    f: int = 1
    gst: float = 0.0
    delta: float = 1.0
    pre_gst_max_delay: float | None = None  # default 100 * delta
    rounds: int = 10
    seed: int = 1
    adversary_policy: Policy = Policy.CRASH
    beacon_backend: Backend = Backend.MOCK
    branching: int | None = None
    block_cap: int = 1000
    timeout_base: float | None = None
    unsafe_override: bool = False
    adaptive: bool = True
    # "random" or "leader" (target the leader of the round that just ended)
    target: str = "random"
    initial_corrupt: tuple[int, ...] | None = None
    tx_rate: float = 5.0  # transactions per delta
    beacon_n: int = 5
    beacon_t: int | None = None
    max_time: float | None = None
    max_views: int | None = None
    inject_fault: str | None = None  # "fork": negative control for the safety checker
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "adversary_policy", _enum(Policy, self.adversary_policy))
        object.__setattr__(self, "beacon_backend", _enum(Backend, self.beacon_backend))
        if self.initial_corrupt is not None:
            object.__setattr__(self, "initial_corrupt", tuple(int(i) for i in self.initial_corrupt))

    @property
    def cap(self) -> float:
        return 100.0 * self.delta if self.pre_gst_max_delay is None else self.pre_gst_max_delay

    @property
    def fault_bound(self) -> int:
        return (self.n - 1) // 3

    def validate(self) -> "Scenario":
        def finite(name, x, positive=False):
            if not isinstance(x, (int, float)) or not isfinite(x) or x < 0 or (positive and x <= 0):
                raise ConfigError(f"{name} must be finite and {'positive' if positive else 'non-negative'}, got {x!r}")

        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        if not isinstance(self.f, int) or self.f < 0:
            raise ConfigError(f"f must be a non-negative integer, got {self.f!r}")
        if self.f > self.n:
            raise ConfigError("f cannot exceed n")
        if not self.unsafe_override:
            if self.n % 3 != 1:
                raise ConfigError(f"n={self.n} is not of the form 3f+1; set unsafe_override to run it anyway")
            if self.f > self.fault_bound:
                raise ConfigError(f"f={self.f} exceeds (n-1)/3={self.fault_bound}; set unsafe_override to run it anyway")
        finite("gst", self.gst)
        finite("delta", self.delta, positive=True)
        finite("pre_gst_max_delay", self.cap, positive=True)
        if not isinstance(self.rounds, int) or self.rounds < 1:
            raise ConfigError("rounds must be a positive integer")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.branching is not None and self.branching < 1:
            raise ConfigError("branching must be >= 1")
        if self.block_cap < 0:
            raise ConfigError("block_cap must be non-negative")
        if self.timeout_base is not None:
            finite("timeout_base", self.timeout_base, positive=True)
        if self.target not in ("random", "leader"):
            raise ConfigError(f"target must be 'random' or 'leader', got {self.target!r}")
        if self.initial_corrupt is not None:
            if len(set(self.initial_corrupt)) > self.f:
                raise ConfigError("initial_corrupt exceeds the corruption budget f")
            if any(not 0 <= i < self.n for i in self.initial_corrupt):
                raise ConfigError("initial_corrupt indices must be in [0, n)")
        if self.beacon_backend == Backend.THRESHOLD:
            t = self.beacon_t if self.beacon_t is not None else self.beacon_n // 2 + 1
            if not 1 <= t <= self.beacon_n:
                raise ConfigError("beacon threshold must satisfy 1 <= t <= beacon_n")
        if self.inject_fault not in (None, "fork"):
            raise ConfigError(f"unknown inject_fault {self.inject_fault!r}")
        return self

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["adversary_policy"] = self.adversary_policy.value
        obj["beacon_backend"] = self.beacon_backend.value
        if self.initial_corrupt is not None:
            obj["initial_corrupt"] = list(self.initial_corrupt)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "Scenario":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)


def load_scenario(path: str | Path) -> Scenario:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("scenario file must hold a JSON object")
    return Scenario.from_json(obj).validate()


def load_matrix(path: str | Path) -> list[dict]:
    """A matrix file is a JSON list of scenario objects, or {"scenarios": [...]}."""
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read matrix {path}: {exc}") from exc
    if isinstance(obj, dict):
        obj = obj.get("scenarios", [])
    if not isinstance(obj, list):
        raise ConfigError("matrix must be a list of scenarios")
    return obj
