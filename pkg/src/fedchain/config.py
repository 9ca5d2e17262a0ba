"""Run configuration: one JSON-serializable description of a simulation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .netsim import LatencyModel, NodeBehavior
from .sync import BSP, SyncPolicy


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian-cluster dataset; the desk-scale default."""
    n: int = 3000
    d: int = 40
    n_classes: int = 4
    center_spread: float = 1.4
    noise: float = 1.0
    informative_dims: int = 4


@dataclass(frozen=True)
class IdxSpec:
    """MNIST-style IDX files on disk."""
    images: str = ""
    labels: str = ""


@dataclass(frozen=True)
class StopRounds:
    rounds: int


@dataclass(frozen=True)
class StopTime:
    virtual_time: float


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    n_trainers: int = 3
    n_validators: int = 1

    # synchronization
    scheme: str = BSP
    period: float = 100.0
    max_extension_steps: int = 0
    majority_ratio: float = 1.0

    # learner
    model_arch: str = "softmax"
    hidden_size: int = 16
    learning_rate: float = 0.02
    batch_size: int = 32
    l2: float = 0.02
    init_scale: float = 0.0

    # data: synthetic unless IDX paths are given
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    idx: IdxSpec = None
    shard_fraction: float = 0.3       # of the training pool, per trainer
    validator_fraction: float = 0.5   # of the validation pool, per validator
    train_pool_fraction: float = 0.6  # remaining rows split between val and eval pools
    val_pool_fraction: float = 0.2

    # virtual-time pacing
    steps_per_round: int = 0          # 0 means one local epoch over the shard
    step_time: float = 5.0
    behaviors: tuple = ()             # per-trainer NodeBehavior; default all honest

    # network
    latency: LatencyModel = field(default_factory=lambda: LatencyModel(base=0.5))
    consensus_timeout: float = 10.0

    # policy
    accept_tolerance: float = 0.05
    eta: float = 10.0
    scoring_enabled: bool = True

    # stop condition
    stop: object = field(default_factory=lambda: StopRounds(30))

    max_events: int = 2_000_000

    def policy(self) -> SyncPolicy:
        return SyncPolicy(scheme=self.scheme, period=self.period,
                          max_extension_steps=self.max_extension_steps,
                          majority_ratio=self.majority_ratio)

    def behavior_for(self, trainer_id: int) -> NodeBehavior:
        if self.behaviors:
            return self.behaviors[trainer_id]
        return NodeBehavior()


def to_json(cfg: SimConfig, indent: int = 2) -> str:
    doc = asdict(cfg)
    doc["latency"] = asdict(cfg.latency)
    doc["behaviors"] = [asdict(b) for b in cfg.behaviors]
    doc["synthetic"] = asdict(cfg.synthetic) if cfg.synthetic else None
    doc["idx"] = asdict(cfg.idx) if cfg.idx else None
    if isinstance(cfg.stop, StopRounds):
        doc["stop"] = {"rounds": cfg.stop.rounds}
    else:
        doc["stop"] = {"virtual_time": cfg.stop.virtual_time}
    return json.dumps(doc, indent=indent, sort_keys=True)


def from_json(text: str) -> SimConfig:
    doc = json.loads(text)
    kwargs = dict(doc)
    if doc.get("latency") is not None:
        kwargs["latency"] = LatencyModel(**doc["latency"])
    if doc.get("behaviors"):
        kwargs["behaviors"] = tuple(NodeBehavior(**b) for b in doc["behaviors"])
    else:
        kwargs["behaviors"] = ()
    if doc.get("synthetic") is not None:
        kwargs["synthetic"] = SyntheticSpec(**doc["synthetic"])
    if doc.get("idx") is not None:
        kwargs["idx"] = IdxSpec(**doc["idx"])
    stop = doc.get("stop", {"rounds": 30})
    if "rounds" in stop:
        kwargs["stop"] = StopRounds(stop["rounds"])
    else:
        kwargs["stop"] = StopTime(stop["virtual_time"])
    return SimConfig(**kwargs)


def load_config(path) -> SimConfig:
    with open(path, "r", encoding="utf-8") as f:
        return from_json(f.read())


def save_config(cfg: SimConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_json(cfg) + "\n")
