"""Run configuration: a flat, sectioned key/value file with a strict schema.

Unknown sections or keys are rejected (silent typos are the main
reproducibility hazard). Every key has a default, so an empty file is the
default experiment; the resolved snapshot of all values is what goes into run
manifests.

The task's corpus seed is derived from the run seed, so overriding the seed
(e.g. per-seed comparison runs) changes corpus, shards, sampling, and
initialization together.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .data import SplitSpec, SyntheticTask
from .errors import ConfigError
from .fed import (
    FederatedConfig,
    GrowthSchedule,
    MODES,
    OPTIMIZERS,
    STAGINGS,
    STAGING_TRIGGER,
    make_schedule,
)
from .model import ModelConfig
from .rng import subseed
from .wire import CODECS


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    stripped = text.strip()
    if not stripped:
        return ()
    return tuple(int(part.strip()) for part in stripped.split(","))


@dataclass(frozen=True)
class _Key:
    parse: object
    default: object
    choices: tuple[str, ...] | None = None


_SCHEMA: dict[str, dict[str, _Key]] = {
    "model": {
        "vocab_size": _Key(int, 32),
        "frame_dim": _Key(int, 16),
        "d_model": _Key(int, 32),
        "heads": _Key(int, 2),
        "ffn_dim": _Key(int, 64),
        "target_layers": _Key(int, 6),
        "growth_parts": _Key(int, 6),
        "max_seq_len": _Key(int, 64),
    },
    "scaling": {
        "literal_division": _Key(_parse_bool, False),
    },
    "task": {
        "n_train": _Key(int, 512),
        "n_test": _Key(int, 64),
        "min_tokens": _Key(int, 8),
        "max_tokens": _Key(int, 24),
        "frames_per_token": _Key(int, 2),
        "position_bias": _Key(_parse_bool, True),
    },
    "federated": {
        "mode": _Key(str, "feddt", MODES),
        "num_clients": _Key(int, 3),
        # 0 means full participation (M = num_clients)
        "sampled_clients": _Key(int, 0),
        "batch_size": _Key(int, 16),
        "lr": _Key(float, 1e-3),
        "optimizer": _Key(str, "adam", OPTIMIZERS),
        "codec": _Key(str, "identity", CODECS),
        "reset_moments_on_growth": _Key(_parse_bool, False),
        "seed": _Key(int, 1),
    },
    "schedule": {
        "rounds": _Key(int, 120),
        "local_steps": _Key(int, 3),
        "staging": _Key(str, STAGING_TRIGGER, STAGINGS),
        # explicit global-step thresholds; empty means derived from staging
        "growth_steps": _Key(_parse_int_list, ()),
    },
    "split": {
        "kind": _Key(str, "balanced", ("balanced", "ratios")),
        "ratios": _Key(_parse_int_list, ()),
    },
}


@dataclass(frozen=True)
class RunSettings:
    """Everything a run needs, resolved and validated."""

    model: ModelConfig
    task: SyntheticTask
    fed: FederatedConfig
    split: SplitSpec
    n_train: int
    n_test: int
    snapshot: dict

    @property
    def seed(self) -> int:
        return self.fed.seed

    def with_seed(self, seed: int) -> "RunSettings":
        values = {sec: dict(keys) for sec, keys in self.snapshot.items()}
        values["federated"]["seed"] = int(seed)
        return settings_from_values(values)

    def with_mode(self, mode: str) -> "RunSettings":
        values = {sec: dict(keys) for sec, keys in self.snapshot.items()}
        values["federated"]["mode"] = mode
        return settings_from_values(values)


def default_values() -> dict[str, dict]:
    return {sec: {key: spec.default for key, spec in keys.items()} for sec, keys in _SCHEMA.items()}


def settings_from_values(values: dict[str, dict]) -> RunSettings:
    """Build RunSettings from fully resolved (typed) values."""
    v = values
    model = ModelConfig(
        vocab_size=v["model"]["vocab_size"],
        frame_dim=v["model"]["frame_dim"],
        d_model=v["model"]["d_model"],
        heads=v["model"]["heads"],
        ffn_dim=v["model"]["ffn_dim"],
        target_layers=v["model"]["target_layers"],
        growth_parts=v["model"]["growth_parts"],
        max_seq_len=v["model"]["max_seq_len"],
        literal_scaling_division=v["scaling"]["literal_division"],
    )
    seed = v["federated"]["seed"]
    task = SyntheticTask(
        seed=subseed(seed, "task"),
        vocab_size=v["model"]["vocab_size"],
        frame_dim=v["model"]["frame_dim"],
        min_tokens=v["task"]["min_tokens"],
        max_tokens=v["task"]["max_tokens"],
        frames_per_token=v["task"]["frames_per_token"],
        position_bias=v["task"]["position_bias"],
    )
    if task.max_tokens > model.max_seq_len:
        raise ConfigError(
            f"task.max_tokens={task.max_tokens} exceeds model.max_seq_len={model.max_seq_len}"
        )
    if task.max_tokens * task.frames_per_token > model.max_seq_len:
        raise ConfigError(
            f"task frames ({task.max_tokens} * {task.frames_per_token}) exceed "
            f"model.max_seq_len={model.max_seq_len}"
        )
    growth_steps = v["schedule"]["growth_steps"] or None
    schedule = make_schedule(
        rounds=v["schedule"]["rounds"],
        parts=v["model"]["growth_parts"],
        target_layers=v["model"]["target_layers"],
        local_steps=v["schedule"]["local_steps"],
        staging=v["schedule"]["staging"],
        growth_steps=growth_steps,
    )
    num_clients = v["federated"]["num_clients"]
    sampled = v["federated"]["sampled_clients"] or num_clients
    fed = FederatedConfig(
        num_clients=num_clients,
        sampled_per_round=sampled,
        batch_size=v["federated"]["batch_size"],
        lr=v["federated"]["lr"],
        seed=seed,
        codec=v["federated"]["codec"],
        schedule=schedule,
        mode=v["federated"]["mode"],
        optimizer=v["federated"]["optimizer"],
        reset_moments_on_growth=v["federated"]["reset_moments_on_growth"],
    )
    if v["split"]["kind"] == "balanced":
        split_spec = SplitSpec.balanced(num_clients)
    else:
        ratios = v["split"]["ratios"]
        if not ratios:
            raise ConfigError("split.kind=ratios requires split.ratios")
        if len(ratios) != num_clients:
            raise ConfigError(
                f"split.ratios has {len(ratios)} entries for {num_clients} clients"
            )
        split_spec = SplitSpec(tuple(ratios))
    n_train, n_test = v["task"]["n_train"], v["task"]["n_test"]
    if n_train < num_clients:
        raise ConfigError(f"task.n_train={n_train} cannot cover {num_clients} clients")
    if n_test < 1:
        raise ConfigError(f"task.n_test must be >= 1, got {n_test}")
    snapshot = {sec: dict(keys) for sec, keys in v.items()}
    return RunSettings(
        model=model,
        task=task,
        fed=fed,
        split=split_spec,
        n_train=n_train,
        n_test=n_test,
        snapshot=snapshot,
    )


def parse_config_text(text: str, source: str = "<config>") -> RunSettings:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values = default_values()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(
                f"{source}: unknown section [{section}]; expected one of {sorted(_SCHEMA)}"
            )
        for key, raw in parser.items(section):
            spec = _SCHEMA[section].get(key)
            if spec is None:
                raise ConfigError(
                    f"{source}: unknown key {section}.{key}; "
                    f"expected one of {sorted(_SCHEMA[section])}"
                )
            try:
                value = spec.parse(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{source}: bad value for {section}.{key}: {exc}") from exc
            if spec.choices is not None and value not in spec.choices:
                raise ConfigError(
                    f"{source}: {section}.{key}={value!r} not one of {spec.choices}"
                )
            values[section][key] = value
    return settings_from_values(values)


def load_settings(path: str | Path) -> RunSettings:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def config_text_from_values(values: dict[str, dict]) -> str:
    """Render resolved values back into the file format (for examples/docs)."""
    lines = []
    for section, keys in values.items():
        lines.append(f"[{section}]")
        for key, value in keys.items():
            if isinstance(value, tuple):
                rendered = ",".join(str(x) for x in value)
            elif isinstance(value, bool):
                rendered = "true" if value else "false"
            else:
                rendered = str(value)
            lines.append(f"{key} = {rendered}")
        lines.append("")
    return "\n".join(lines)


def default_config_text() -> str:
    return config_text_from_values(default_values())


def check_comparable(a: RunSettings, b: RunSettings) -> None:
    """Comparison runs must share the same task and split."""
    fields_a = dataclasses.asdict(a.task)
    fields_b = dataclasses.asdict(b.task)
    fields_a.pop("seed")
    fields_b.pop("seed")
    if fields_a != fields_b:
        raise ConfigError("configs disagree on the synthetic task; comparison needs a shared task")
    if (a.n_train, a.n_test) != (b.n_train, b.n_test):
        raise ConfigError("configs disagree on corpus sizes; comparison needs a shared corpus")
    if a.split != b.split or a.fed.num_clients != b.fed.num_clients:
        raise ConfigError("configs disagree on the client split; comparison needs a shared split")
