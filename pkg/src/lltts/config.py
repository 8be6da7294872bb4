"""Experiment configuration (INI-style text) and checkpoint files."""
from __future__ import annotations

import configparser
import hashlib
import io
import os
import pickle
import tempfile
from dataclasses import dataclass, field

from .buffer import MemoryBuffer
from .data import TaskSpec
from .errors import ConfigError, FormatError, UsageError, VersionError
from .model import ModelTopology, ParameterSet, segment_ranges
from .strategies import FisherState, StrategyConfig, StrategyKind

CHECKPOINT_MAGIC = b"LLCKPT1\n"

_EXPERIMENT_KEYS = {
    "epochs_per_stage": int,
    "batch_size": int,
    "lr": float,
    "lr_decay_epoch_fraction": float,
    "buffer_capacity": int,
    "seed": int,
    "output_dir": str,
}
_EXPERIMENT_DEFAULTS = {
    "epochs_per_stage": 100,
    "batch_size": 84,
    "lr": 0.001,
    "lr_decay_epoch_fraction": 0.6,
    "buffer_capacity": 300,
    "seed": 0,
    "output_dir": "runs/default",
}
_TOPOLOGY_KEYS = {
    "vocab_size": int,
    "embed_dim": int,
    "encoder_hidden": int,
    "trunk_dim": int,
    "frame_dim": int,
    "postnet_hidden": int,
    "num_languages": int,
}
_TOPOLOGY_DEFAULTS = {
    "vocab_size": 40,
    "embed_dim": 16,
    "encoder_hidden": 32,
    "trunk_dim": 32,
    "frame_dim": 8,
    "postnet_hidden": 16,
}
_STRATEGY_KEYS = {
    "kind": str,
    "gamma": float,
    "beta": float,
    "ewc_lambda": float,
    "gem_memory_batch": int,
}
_TASK_KEYS = {
    "seed": int,
    "n_train": int,
    "n_dev": int,
    "n_test": int,
    "seq_len_min": int,
    "seq_len_max": int,
    "transform_scale": float,
}
_TASK_DEFAULTS = {
    "n_train": 3000,
    "n_dev": 40,
    "n_test": 20,
    "seq_len_min": 6,
    "seq_len_max": 12,
    "transform_scale": 1.0,
}


@dataclass
class ExperimentConfig:
    task_specs: list
    topology: ModelTopology
    strategy: StrategyConfig
    epochs_per_stage: int = 100
    batch_size: int = 84
    lr: float = 0.001
    lr_decay_epoch_fraction: float = 0.6
    buffer_capacity: int = 300
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        order = self.task_order
        if len(set(order)) != len(order):
            raise ConfigError("duplicate language ids in task order")

    @property
    def task_order(self):
        return [spec.language_id for spec in self.task_specs]


def _typed(section: str, key: str, raw: str, typ):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from None


def _read_section(parser, name: str, schema: dict, defaults: dict, required=()):
    out = dict(defaults)
    if parser.has_section(name):
        for key, raw in parser.items(name):
            if key not in schema:
                raise ConfigError(f"[{name}] unknown key {key!r}")
            out[key] = _typed(name, key, raw, schema[key])
    for key in required:
        if key not in out:
            raise ConfigError(f"[{name}] missing required key {key!r}")
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Strict parse: unknown sections/keys rejected, defaults filled in."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    task_sections = [s for s in parser.sections() if s.startswith("task ")]
    known = {"experiment", "topology", "strategy", *task_sections}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")
    if not task_sections:
        raise ConfigError("config declares no [task <id>] sections")

    exp = _read_section(parser, "experiment", _EXPERIMENT_KEYS, _EXPERIMENT_DEFAULTS)
    topo_raw = _read_section(parser, "topology", _TOPOLOGY_KEYS, _TOPOLOGY_DEFAULTS)
    strat_raw = _read_section(
        parser, "strategy", _STRATEGY_KEYS, {"kind": "fine_tune"}, required=("kind",)
    )

    specs = []
    for section in task_sections:
        try:
            language_id = int(section.split(" ", 1)[1])
        except ValueError:
            raise ConfigError(f"[{section}] task section name must be 'task <int>'") from None
        vals = _read_section(parser, section, _TASK_KEYS, _TASK_DEFAULTS, required=("seed",))
        specs.append(
            TaskSpec(
                language_id=language_id,
                seed=vals["seed"],
                n_train=vals["n_train"],
                n_dev=vals["n_dev"],
                n_test=vals["n_test"],
                seq_len_range=(vals["seq_len_min"], vals["seq_len_max"]),
                transform_scale=vals["transform_scale"],
                vocab_size=topo_raw["vocab_size"],
                frame_dim=topo_raw["frame_dim"],
            )
        )

    if "num_languages" not in topo_raw:
        topo_raw["num_languages"] = max(s.language_id for s in specs) + 1
    try:
        topology = ModelTopology(**topo_raw)
    except UsageError as exc:
        raise ConfigError(f"[topology] {exc}") from exc

    try:
        kind = StrategyKind(strat_raw.pop("kind"))
    except ValueError:
        raise ConfigError(f"[strategy] unknown kind {parser.get('strategy', 'kind')!r}") from None
    strategy = StrategyConfig(kind=kind, **strat_raw)

    return ExperimentConfig(task_specs=specs, topology=topology, strategy=strategy, **exp)


def emit_config(config: ExperimentConfig) -> str:
    """Canonical text form; parse_config(emit_config(c)) == c."""
    buf = io.StringIO()
    buf.write("[experiment]\n")
    for key in _EXPERIMENT_KEYS:
        buf.write(f"{key} = {getattr(config, key)!r}\n".replace("'", ""))
    buf.write("\n[topology]\n")
    for key in _TOPOLOGY_KEYS:
        buf.write(f"{key} = {getattr(config.topology, key)}\n")
    buf.write("\n[strategy]\n")
    buf.write(f"kind = {config.strategy.kind.value}\n")
    for key in ("gamma", "beta", "ewc_lambda", "gem_memory_batch"):
        buf.write(f"{key} = {getattr(config.strategy, key)!r}\n".replace("'", ""))
    for spec in config.task_specs:
        buf.write(f"\n[task {spec.language_id}]\n")
        buf.write(f"seed = {spec.seed}\n")
        buf.write(f"n_train = {spec.n_train}\n")
        buf.write(f"n_dev = {spec.n_dev}\n")
        buf.write(f"n_test = {spec.n_test}\n")
        buf.write(f"seq_len_min = {spec.seq_len_range[0]}\n")
        buf.write(f"seq_len_max = {spec.seq_len_range[1]}\n")
        buf.write(f"transform_scale = {spec.transform_scale!r}\n")
    return buf.getvalue()


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(emit_config(config).encode()).hexdigest()


@dataclass
class Checkpoint:
    stage: int
    params: ParameterSet
    adam: dict | None
    buffer_snapshot: dict
    fisher: FisherState | None
    reports: list
    stage_curves: list
    config_hash: str = ""


def _atomic_write(path, payload: bytes):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(cp: Checkpoint, path) -> None:
    record = {
        "stage": cp.stage,
        "param_values": cp.params.values,
        "topology": cp.params.topology,
        "adam": cp.adam,
        "buffer": cp.buffer_snapshot,
        "fisher": None
        if cp.fisher is None
        else {"diag": cp.fisher.fisher_diag, "anchor": cp.fisher.anchor.values},
        "reports": cp.reports,
        "stage_curves": cp.stage_curves,
        "config_hash": cp.config_hash,
    }
    _atomic_write(path, CHECKPOINT_MAGIC + pickle.dumps(record, protocol=4))


def load_checkpoint(path, expected_hash: str | None = None, force: bool = False) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(CHECKPOINT_MAGIC[:6]):
        raise FormatError("not a checkpoint file", offset=0)
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise VersionError("unsupported checkpoint version", offset=6)
    try:
        record = pickle.loads(blob[len(CHECKPOINT_MAGIC) :])
        topology = record["topology"]
        params = ParameterSet(record["param_values"], segment_ranges(topology), topology)
        fisher = record["fisher"]
        if fisher is not None:
            anchor = ParameterSet(fisher["anchor"], segment_ranges(topology), topology)
            fisher = FisherState(fisher["diag"], anchor)
        cp = Checkpoint(
            stage=record["stage"],
            params=params,
            adam=record["adam"],
            buffer_snapshot=record["buffer"],
            fisher=fisher,
            reports=record["reports"],
            stage_curves=record["stage_curves"],
            config_hash=record["config_hash"],
        )
    except (pickle.UnpicklingError, KeyError, EOFError, AttributeError) as exc:
        raise FormatError(f"corrupt checkpoint: {exc}") from exc
    if expected_hash is not None and cp.config_hash != expected_hash and not force:
        raise UsageError(
            "checkpoint was produced by a different config "
            f"({cp.config_hash[:12]} != {expected_hash[:12]}); pass force to override"
        )
    return cp


def restore_buffer(cp: Checkpoint) -> MemoryBuffer:
    return MemoryBuffer.restore(cp.buffer_snapshot)
