"""Run configuration: an INI document plus ``section.key=value`` overrides.

Example::

    [run]
    seed = 7

    [task]
    kind = teacher
    n = 256

    [teaching]
    strategy = hard
    ratio = fixed
    r = 0.5
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .numerics import ContractError
from .tasks import TASK_KINDS, TaskSpec
from .teaching import (
    COSINE, FIXED, INCREMENTAL, PRESETS, STRATEGIES, IntervalSchedule, RatioSchedule,
    SelectionStrategy, TeachingConfig, preset,
)


class ConfigError(ContractError):
    """Invalid configuration; the message starts with the offending field path."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "none", "full") else int(text)


def _list(text: str) -> list[str]:
    return [t.strip().lower() for t in text.split(",") if t.strip()]


def _lower(text: str) -> str:
    return text.strip().lower()


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "seed": (int, 0),
        "data": (str, ""),
        "timing": (_bool, False),
    },
    "task": {
        "kind": (_lower, "teacher"),
        "n": (int, 64),
        "s": (int, 4),
        "d": (int, 4),
        "p": (int, 4),
        "v": (int, 1),
        "noise_sd": (float, 0.0),
        "teacher_scale": (float, 1.0),
        "seed": (_optional_int, None),
    },
    "model": {
        "p": (_optional_int, None),
        "init_scale": (float, 1.0),
    },
    "teaching": {
        "preset": (_lower, ""),
        "strategy": (_lower, "hard"),
        "temperature": (float, 1.0),
        "ratio": (_lower, "fixed"),
        "r": (float, 1.0),
        "r_min": (float, 0.2),
        "r_max": (float, 0.8),
        "horizon": (int, 100),
        "warmup": (int, 0),
        "interval": (_lower, "fixed"),
        "k": (int, 1),
        "k0": (int, 1),
        "growth": (float, 2.0),
        "eta": (float, 0.1),
        "epsilon": (float, 1e-6),
        "max_iters": (int, 1000),
        "batch_size": (_optional_int, None),
    },
    "ntk": {
        "checkpoint_every": (int, 50),
        "probes": (int, 16),
        "steps": (int, 2000),
    },
    "ablate": {
        "ratios": (_list, ["fixed", "incremental", "cosine"]),
        "intervals": (_list, ["fixed", "incremental"]),
        "strategies": (_list, ["random", "hard", "soft"]),
        "threshold": (float, 0.1),
    },
    "verify": {
        "scale": (float, 1.0),
    },
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def task_spec(self) -> TaskSpec:
        t = self.values["task"]
        seed = t["seed"] if t["seed"] is not None else self.seed
        spec = TaskSpec(
            kind=t["kind"], n=t["n"], s=t["s"], d=t["d"], p=t["p"], v=t["v"],
            noise_sd=t["noise_sd"], seed=seed, teacher_scale=t["teacher_scale"],
        )
        try:
            return spec.validate()
        except ContractError as exc:
            raise ConfigError(str(exc)) from None

    def student_p(self) -> int:
        p = self.values["model"]["p"]
        return self.values["task"]["p"] if p is None else p

    def teaching_config(self, **overrides) -> TeachingConfig:
        """Teaching config from the [teaching] section; keyword overrides replace keys."""
        t = dict(self.values["teaching"])
        t.update(overrides)
        try:
            if t["preset"]:
                base = preset(t["preset"], horizon=t["horizon"])
                from dataclasses import replace

                return replace(
                    base, eta=t["eta"], epsilon=t["epsilon"], max_iters=t["max_iters"],
                    batch_size=t["batch_size"], seed=self.seed,
                )
            return TeachingConfig(
                strategy=SelectionStrategy(t["strategy"], t["temperature"]),
                ratio=RatioSchedule(t["ratio"], r=t["r"], r_min=t["r_min"], r_max=t["r_max"],
                                    horizon=t["horizon"], warmup=t["warmup"]),
                interval=IntervalSchedule(t["interval"], k=t["k"], k0=t["k0"], growth=t["growth"]),
                eta=t["eta"], epsilon=t["epsilon"], max_iters=t["max_iters"],
                batch_size=t["batch_size"], seed=self.seed,
            )
        except ConfigError:
            raise
        except ContractError as exc:
            raise ConfigError(f"teaching: {exc}") from None


def _check(path: str, ok: bool, why: str):
    if not ok:
        raise ConfigError(f"{path}: {why}")


def _validate(values: dict):
    run, task, model, tc = values["run"], values["task"], values["model"], values["teaching"]
    _check("run.seed", 0 <= run["seed"] < 2**64, "must be an unsigned 64-bit integer")
    _check("task.kind", task["kind"] in TASK_KINDS, f"must be one of {TASK_KINDS}")
    for key in ("n", "s", "d", "p", "v"):
        _check(f"task.{key}", task[key] >= 1, "must be >= 1")
    _check("task.noise_sd", task["noise_sd"] >= 0, "must be >= 0")
    _check("model.p", model["p"] is None or model["p"] >= 1, "must be >= 1")
    _check("model.init_scale", model["init_scale"] > 0, "must be > 0")
    _check("teaching.preset", tc["preset"] in ("",) + PRESETS, f"must be empty or one of {PRESETS}")
    _check("teaching.strategy", tc["strategy"] in STRATEGIES, f"must be one of {STRATEGIES}")
    _check("teaching.temperature", tc["temperature"] > 0, "must be > 0")
    _check("teaching.ratio", tc["ratio"] in (FIXED, INCREMENTAL, COSINE), "must be fixed, incremental or cosine")
    _check("teaching.r", 0 < tc["r"] <= 1, "must lie in (0, 1]")
    _check("teaching.r_min", 0 < tc["r_min"] <= 1, "must lie in (0, 1]")
    _check("teaching.r_max", tc["r_min"] <= tc["r_max"] <= 1, "must lie in [r_min, 1]")
    _check("teaching.horizon", tc["horizon"] >= 1, "must be >= 1")
    _check("teaching.warmup", tc["warmup"] >= 0, "must be >= 0")
    _check("teaching.interval", tc["interval"] in (FIXED, INCREMENTAL), "must be fixed or incremental")
    _check("teaching.k", tc["k"] >= 1, "must be >= 1")
    _check("teaching.k0", tc["k0"] >= 1, "must be >= 1")
    _check("teaching.growth", tc["growth"] > 1, "must be > 1")
    _check("teaching.eta", tc["eta"] > 0, "must be > 0")
    _check("teaching.epsilon", tc["epsilon"] > 0, "must be > 0")
    _check("teaching.max_iters", tc["max_iters"] >= 1, "must be >= 1")
    _check("teaching.batch_size", tc["batch_size"] is None or tc["batch_size"] >= 1, "must be >= 1")
    ntk = values["ntk"]
    _check("ntk.checkpoint_every", ntk["checkpoint_every"] >= 1, "must be >= 1")
    _check("ntk.probes", ntk["probes"] >= 1, "must be >= 1")
    _check("ntk.steps", ntk["steps"] >= 1, "must be >= 1")
    ab = values["ablate"]
    for r in ab["ratios"]:
        _check("ablate.ratios", r in (FIXED, INCREMENTAL, COSINE), f"unknown ratio schedule {r!r}")
    for i in ab["intervals"]:
        _check("ablate.intervals", i in (FIXED, INCREMENTAL), f"unknown interval schedule {i!r}")
    for s in ab["strategies"]:
        _check("ablate.strategies", s in STRATEGIES, f"unknown strategy {s!r}")
    _check("ablate.threshold", 0 < ab["threshold"] <= 1, "must lie in (0, 1]")
    _check("verify.scale", values["verify"]["scale"] > 0, "must be > 0")


def _assign(values: dict, section: str, key: str, raw: str):
    path = f"{section}.{key}"
    if section not in SCHEMA:
        raise ConfigError(f"{path}: unknown section {section!r}")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{path}: unknown key")
    parser = SCHEMA[section][key][0]
    try:
        values[section][key] = parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: cannot parse {raw!r} ({exc})") from None


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    """Defaults, then the INI file at ``path``, then ``section.key=value`` overrides."""
    values = {sec: {k: default for k, (_, default) in keys.items()} for sec, keys in SCHEMA.items()}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        with open(path, encoding="utf-8") as fh:
            try:
                cp.read_file(fh)
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
        for section in cp.sections():
            for key, raw in cp.items(section):
                _assign(values, section, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        _assign(values, section.strip(), key.strip(), raw)
    if seed is not None:
        values["run"]["seed"] = int(seed)
    _validate(values)
    return RunConfig(values)
