"""Wires trainers, validators, and the network into one deterministic run.

The master dataset is split into three row pools: training (sharded per
trainer), validation (sharded per validator, so verdicts come from data the
trainers never saw), and a held-out eval pool used only for the accuracy
column of the metrics log. Every random stream is derived from the run
seed, so a (config, seed) pair replays to a bit-identical MetricsLog.
"""

from __future__ import annotations

import numpy as np

from . import learner, ledger, netsim
from .config import SimConfig, StopRounds, StopTime
from .learner import Dataset, LearnerConfig
from .metrics import MetricsLog, RoundMetrics
from .netsim import DeadlockError, LatencyModel, Network, Scheduler
from .node import TrainerNode, ValidatorNode, trainer_addr, validator_addr
from .validation import ValidatorConfig


def _derive_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def build_master_dataset(cfg: SimConfig) -> Dataset:
    if cfg.idx is not None and cfg.idx.images:
        return learner.load_idx(cfg.idx.images, cfg.idx.labels)
    s = cfg.synthetic
    return learner.generate_synthetic(_derive_seed(cfg.seed, 11), s.n, s.d,
                                      s.n_classes, s.center_spread, s.noise,
                                      informative_dims=s.informative_dims)


def split_pools(master: Dataset, cfg: SimConfig):
    """Row-range split of the (already shuffled) master set."""
    n = master.n
    n_train = int(n * cfg.train_pool_fraction)
    n_val = int(n * cfg.val_pool_fraction)
    if min(n_train, n_val, n - n_train - n_val) < 1:
        raise ValueError("dataset too small for the configured pool fractions")

    def rows(lo, hi):
        return Dataset(master.features[lo:hi], master.labels[lo:hi], master.n_classes)

    return rows(0, n_train), rows(n_train, n_train + n_val), rows(n_train + n_val, n)


class Simulation:
    """One deterministic run; also the node-facing context object."""

    def __init__(self, cfg: SimConfig):
        if cfg.n_validators < 1 or cfg.n_trainers < 1:
            raise ValueError("need at least one validator and one trainer")
        self.cfg = cfg
        self.seed = cfg.seed
        self.scheduler = Scheduler()
        self.network = Network(self.scheduler, cfg.latency,
                               np.random.default_rng([cfg.seed, 1]))
        self.master = build_master_dataset(cfg)
        self.train_pool, self.val_pool, self.eval_pool = split_pools(self.master, cfg)

        policy = cfg.policy()
        self.eval_learner_cfg = LearnerConfig(
            model_arch=cfg.model_arch, hidden_size=cfg.hidden_size,
            learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
            l2=cfg.l2, init_scale=cfg.init_scale, seed=_derive_seed(cfg.seed, 303))
        genesis = ledger.GenesisConfig(
            initial_params=learner.init_params(self.eval_learner_cfg,
                                               self.master.d, self.master.n_classes),
            trainer_ids=tuple(range(cfg.n_trainers)),
            policy=policy,
            opened_at=0.0)
        self.genesis = genesis

        validators = list(range(cfg.n_validators))
        self.trainers = {}
        self.validators = {}
        for tid in range(cfg.n_trainers):
            tshard = learner.shard(self.train_pool, cfg.shard_fraction,
                                   [cfg.seed, 12, tid])
            tcfg = LearnerConfig(
                model_arch=cfg.model_arch, hidden_size=cfg.hidden_size,
                learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                l2=cfg.l2, init_scale=cfg.init_scale,
                seed=_derive_seed(cfg.seed, 303, tid))
            steps = cfg.steps_per_round or learner.steps_per_epoch(tshard.n, cfg.batch_size)
            self.trainers[tid] = TrainerNode(
                trainer_id=tid, shard=tshard, learner_cfg=tcfg,
                behavior=cfg.behavior_for(tid), policy=policy,
                assigned_validator=tid % cfg.n_validators,
                steps_per_round=steps, step_time=cfg.step_time,
                submit_margin=cfg.latency.base + cfg.latency.jitter, ctx=self)
        for vid in validators:
            vshard = learner.shard(self.val_pool, cfg.validator_fraction,
                                   [cfg.seed, 13, vid])
            vcfg = ValidatorConfig(validation_dataset=vshard,
                                   learner_config=self.eval_learner_cfg,
                                   accept_tolerance=cfg.accept_tolerance)
            self.validators[vid] = ValidatorNode(
                validator_id=vid, validators=validators,
                my_trainers=[t for t in self.trainers if t % cfg.n_validators == vid],
                validator_cfg=vcfg, genesis=genesis, eta=cfg.eta,
                scoring_enabled=cfg.scoring_enabled,
                timeout_base=cfg.consensus_timeout, ctx=self)

        self.log = MetricsLog(meta={
            "scheme": cfg.scheme, "seed": cfg.seed,
            "trainers": cfg.n_trainers, "validators": cfg.n_validators,
            "period": cfg.period, "majority_ratio": cfg.majority_ratio,
            "scoring": cfg.scoring_enabled,
        })
        self.rounds_done = 0
        self._events_processed = 0

    # -- context surface used by nodes ------------------------------------------

    def now(self) -> float:
        return self.scheduler.now

    def send(self, target: str, payload) -> None:
        self.network.send(target, payload)

    def schedule_self(self, delay: float, target: str, payload) -> None:
        self.scheduler.schedule(delay, target, payload)

    def on_round_complete(self, validator_id: int, block, released: bool) -> None:
        """Metrics hook: observe round closures on validator 0's replica."""
        if validator_id != 0:
            return
        state = self.validators[0].chain.state
        phi = state.trust.phi
        self.log.append(RoundMetrics(
            round_id=state.round_state.round_id - 1,
            virtual_time=self.scheduler.now,
            version=state.current_model.version,
            accuracy=learner.evaluate(state.current_model.params, self.eval_pool,
                                      self.eval_learner_cfg),
            phi=tuple(phi[tid] for tid in sorted(phi)),
            msgs_sent=self.network.sent))
        self.rounds_done += 1

    # -- driving ------------------------------------------------------------------

    def _goal_met(self, stop) -> bool:
        return isinstance(stop, StopRounds) and self.rounds_done >= stop.rounds

    def _deadlock_diagnostic(self) -> str:
        rs = self.validators[0].chain.state.round_state
        return (f"event queue drained at virtual time {self.scheduler.now} with "
                f"{self.rounds_done} rounds completed; round {rs.round_id} is "
                f"{'closed' if rs.closed else 'open'} with "
                f"{len(self.validators[0].pool)}/{rs.total_trainers} submissions pooled")

    def run(self, until=None) -> MetricsLog:
        stop = until if until is not None else self.cfg.stop
        if not isinstance(stop, (StopRounds, StopTime)):
            raise ValueError("stop condition must be StopRounds or StopTime")

        for vid in sorted(self.validators):
            self.validators[vid].start()

        while not self._goal_met(stop):
            if isinstance(stop, StopTime):
                nxt = self.scheduler.peek_time()
                if nxt is None or nxt > stop.virtual_time:
                    break
            ev = self.scheduler.pop()
            if ev is None:
                raise DeadlockError(self._deadlock_diagnostic())
            self._events_processed += 1
            if self._events_processed > self.cfg.max_events:
                raise RuntimeError(f"no convergence after {self.cfg.max_events} events; "
                                   + self._deadlock_diagnostic())
            self._dispatch(ev)
        return self.log

    def _dispatch(self, ev) -> None:
        kind, idx = ev.target[0], int(ev.target[1:])
        if kind == "t":
            self.trainers[idx].handle(ev.payload)
        elif kind == "v":
            self.validators[idx].handle(ev.payload)
        else:
            raise ValueError(f"unroutable event target {ev.target!r}")

    def export_chain(self, path) -> None:
        """Write validator 0's committed chain as a canonical chain file."""
        chain = self.validators[0].chain
        ledger.write_chain(path, chain.genesis, chain.blocks)


def run(cfg: SimConfig, until=None) -> MetricsLog:
    """Build and drain one simulation; the module-level convenience entry."""
    return Simulation(cfg).run(until=until)
