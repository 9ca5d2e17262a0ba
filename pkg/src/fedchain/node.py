"""Trainer and validator node state machines, driven by simulator events.

Trainers pull each released model, run a local SGD job whose virtual
duration is steps * step_time * pace, and submit the resulting delta to
their assigned validator. Validators validate incoming updates against
their own held-out shard, gossip accepted updates (and all reports) to
their peers, decide round closure per the sync policy, and drive blocks
through voting consensus; committed blocks are executed on every replica.

All inter-node interaction flows through simulator messages; nodes share
no mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import consensus as cns
from . import learner, ledger, netsim, sync, validation
from .aggregation import AggregationInput, aggregate
from .params import FlatParams, GradientUpdate, ModelVersion
from .reputation import apply_report, merge_reports, weights_for_round


# -- message payloads ---------------------------------------------------------

@dataclass(frozen=True)
class ModelRelease:
    round_id: int
    version: int
    params: FlatParams
    sender: int          # validator id


@dataclass(frozen=True)
class ExtensionGranted:
    round_id: int
    new_deadline: float
    extra_steps: int


@dataclass(frozen=True)
class JobDone:
    round_id: int
    segment: int
    steps: int


@dataclass(frozen=True)
class SubmitUpdate:
    update: GradientUpdate
    round_id: int


@dataclass(frozen=True)
class GossipShare:
    round_id: int
    update: GradientUpdate   # None when the update was rejected
    report: object           # ValidationReport
    sender: int


@dataclass(frozen=True)
class DeadlineCheck:
    round_id: int


@dataclass(frozen=True)
class ConsensusWire:
    message: object          # consensus Proposal / Vote / CommitCert
    sender: int


def trainer_addr(trainer_id: int) -> str:
    return f"t{trainer_id}"


def validator_addr(validator_id: int) -> str:
    return f"v{validator_id}"


class SimulationFault(RuntimeError):
    """An honest replica hit an impossible state (bug or >f Byzantine)."""


class TrainerNode:
    """Event-driven trainer: pull model, train, (maybe) submit, repeat."""

    def __init__(self, trainer_id: int, shard: learner.Dataset,
                 learner_cfg: learner.LearnerConfig, behavior: netsim.NodeBehavior,
                 policy: sync.SyncPolicy, assigned_validator: int,
                 steps_per_round: int, step_time: float, submit_margin: float,
                 ctx):
        self.id = trainer_id
        self.shard = shard
        self.cfg = learner_cfg
        self.behavior = behavior
        self.policy = policy
        self.assigned_validator = assigned_validator
        self.steps_per_round = steps_per_round
        self.step_time = step_time
        self.submit_margin = submit_margin
        self.ctx = ctx

        self.round_id = -1
        self.base_version = -1
        self.base_params = None
        self.local_params = None
        self.steps_done = 0
        self.segment = 0
        self.submitted = False
        self.deadline = None
        # independent streams: lazy rolls and submission noise
        self.lazy_rng = np.random.default_rng([ctx.seed, 101, trainer_id])
        self.noise_rng = np.random.default_rng([ctx.seed, 202, trainer_id])

    def _job_duration(self, steps: int) -> float:
        return steps * self.step_time * self.behavior.pace_multiplier

    def _start_job(self, steps: int):
        self.ctx.schedule_self(self._job_duration(steps), trainer_addr(self.id),
                               JobDone(self.round_id, self.segment, steps))

    def handle(self, payload) -> None:
        if isinstance(payload, ModelRelease):
            self._on_release(payload)
        elif isinstance(payload, JobDone):
            self._on_job_done(payload)
        elif isinstance(payload, ExtensionGranted):
            self._on_extension(payload)
        else:
            raise TypeError(f"trainer cannot handle {type(payload).__name__}")

    def _on_release(self, msg: ModelRelease):
        if msg.round_id <= self.round_id:
            return  # duplicate or superseded notification
        self.round_id = msg.round_id
        self.base_version = msg.version
        self.base_params = msg.params
        self.local_params = msg.params.values.copy()
        self.steps_done = 0
        self.segment = 0
        self.submitted = False
        self._start_job(self.steps_per_round)

    def _train(self, steps: int):
        upd = learner.compute_gradient_steps(
            FlatParams(self.local_params), self.shard, self.cfg, steps,
            round_id=self.round_id, segment=self.segment,
            trainer_id=self.id, base_version=self.base_version)
        self.local_params = self.local_params + upd.delta
        self.steps_done += steps
        self.segment += 1

    def _submit(self):
        update = GradientUpdate(trainer_id=self.id, base_version=self.base_version,
                                delta=self.local_params - self.base_params.values,
                                steps=self.steps_done)
        update = netsim.apply_noise(update, self.behavior, self.noise_rng)
        self.submitted = True
        self.ctx.send(validator_addr(self.assigned_validator),
                      SubmitUpdate(update=update, round_id=self.round_id))

    def _on_job_done(self, msg: JobDone):
        if msg.round_id != self.round_id or msg.segment != self.segment:
            return  # job belonged to a superseded round
        self._train(msg.steps)
        if self.behavior.profile == netsim.LAZY and self.lazy_rng.random() < self.behavior.skip_prob:
            return  # withhold this round's work
        self._submit()
        if self.policy.scheme == sync.BAP:
            self._start_job(self.steps_per_round)  # keep training until the next release

    def _on_extension(self, msg: ExtensionGranted):
        if msg.round_id != self.round_id or not self.submitted:
            return  # unfinished trainers are still completing their base job
        budget = msg.extra_steps
        fits = int((msg.new_deadline - self.ctx.now() - self.submit_margin)
                   / (self.step_time * self.behavior.pace_multiplier))
        steps = min(budget, fits)
        if steps >= 1:
            self.ctx.schedule_self(self._job_duration(steps), trainer_addr(self.id),
                                   JobDone(self.round_id, self.segment, steps))


class ValidatorNode:
    """Event-driven validator: validate, gossip, close rounds, run consensus."""

    def __init__(self, validator_id: int, validators, my_trainers,
                 validator_cfg: validation.ValidatorConfig, genesis: ledger.GenesisConfig,
                 eta: float, scoring_enabled: bool, timeout_base: float, ctx):
        self.id = validator_id
        self.validators = list(validators)
        self.my_trainers = sorted(my_trainers)
        self.vcfg = validator_cfg
        self.eta = eta
        self.scoring_enabled = scoring_enabled
        self.ctx = ctx

        self.chain = ledger.Chain(genesis)
        self.policy = genesis.policy
        self.consensus = cns.ConsensusNode(
            validator_id, self.validators,
            get_value=self._due_block_value,
            is_valid=self._proposal_valid,
            timeout_base=timeout_base,
            auto_propose=False,
        )
        # local (off-chain) round bookkeeping, by arrival order
        self.local_rs = self.chain.state.round_state
        self.pool = {}      # trainer_id -> GradientUpdate (accepted this round)
        self.reports = {}   # trainer_id -> [ValidationReport] (this round)
        self.released_this_round = False

    # -- wiring ----------------------------------------------------------------

    def start(self):
        """Genesis: hand v0 to my trainers and arm the first deadline."""
        self._run_consensus_actions(self.consensus.start(height=1))
        self._notify_trainers()
        self._arm_deadline()

    def _peers(self):
        return [v for v in self.validators if v != self.id]

    def _broadcast(self, message):
        for v in self._peers():
            self.ctx.send(validator_addr(v), ConsensusWire(message, self.id))

    def _run_consensus_actions(self, actions):
        for act in actions:
            if isinstance(act, cns.Broadcast):
                self._broadcast(act.message)
            elif isinstance(act, cns.Schedule):
                self.ctx.schedule_self(act.delay, validator_addr(self.id),
                                       ConsensusWire(act.timeout, self.id))
            elif isinstance(act, cns.Commit):
                self._on_commit(act)
            else:
                raise TypeError(f"unknown consensus action {type(act).__name__}")

    # -- event handling -----------------------------------------------------------

    def handle(self, payload) -> None:
        if isinstance(payload, SubmitUpdate):
            self._on_submit(payload)
        elif isinstance(payload, GossipShare):
            self._on_gossip(payload)
        elif isinstance(payload, DeadlineCheck):
            self._on_deadline(payload)
        elif isinstance(payload, ConsensusWire):
            self._run_consensus_actions(self.consensus.handle(payload.message))
        else:
            raise TypeError(f"validator cannot handle {type(payload).__name__}")

    def _on_submit(self, msg: SubmitUpdate):
        state = self.chain.state
        rs = self.local_rs
        try:
            report = validation.validate_update(
                state.current_model.params, state.current_model.version,
                msg.update, self.vcfg, round_id=rs.round_id)
        except validation.StaleUpdate:
            # Late for a closed round: resync the trainer instead of scoring it.
            self.ctx.send(trainer_addr(msg.update.trainer_id),
                          ModelRelease(round_id=rs.round_id,
                                       version=state.current_model.version,
                                       params=state.current_model.params,
                                       sender=self.id))
            return
        if rs.closed:
            return  # arrived between close proposal and the next open: drop
        accepted_update = msg.update if report.accepted else None
        self._record(accepted_update, report)
        for v in self._peers():
            self.ctx.send(validator_addr(v),
                          GossipShare(rs.round_id, accepted_update, report, self.id))
        self._maybe_close()

    def _on_gossip(self, msg: GossipShare):
        if msg.round_id != self.local_rs.round_id or self.local_rs.closed:
            return  # stale gossip from a round this replica already left
        self._record(msg.update, msg.report)
        self._maybe_close()

    def _record(self, update, report):
        self.reports.setdefault(report.trainer_id, []).append(report)
        if update is None:
            return
        rs, keep = sync.on_submission(self.policy, self.local_rs, update.trainer_id)
        if keep:
            self.local_rs = rs
            self.pool[update.trainer_id] = update

    def _on_deadline(self, msg: DeadlineCheck):
        if msg.round_id != self.local_rs.round_id or self.local_rs.closed:
            return
        self._maybe_close()

    def _maybe_close(self):
        decision = sync.should_close(self.policy, self.local_rs, self.ctx.now())
        if decision == sync.KEEP_OPEN:
            return
        if isinstance(decision, sync.Extend):
            block = self._build_extension_block(decision.by)
        else:
            block = self._build_close_block()
        self._run_consensus_actions(
            self.consensus.propose_now(ledger.encode_block(block)))

    # -- block assembly --------------------------------------------------------------

    def _trust_adjust_txs(self, state):
        if not self.scoring_enabled:
            return []
        txs = []
        tv = state.trust
        for tid in sorted(self.reports):
            tv = apply_report(tv, merge_reports(self.reports[tid]), eta=self.eta)
            txs.append(ledger.trust_adjust(self.id, tid, tv.raw[tid]))
        return txs

    def _build_close_block(self) -> ledger.Block:
        state = self.chain.state
        now = self.ctx.now()
        rid = self.local_rs.round_id
        txs = [ledger.share_gradient(self.id, self.pool[tid]) for tid in sorted(self.pool)]
        txs.extend(self._trust_adjust_txs(state))
        txs.append(ledger.round_control(self.id, rid, ledger.CLOSE, at=now))
        if self.pool:
            staged = ledger.apply_transactions(state, txs)
            accepted = sorted(self.pool)
            weights = weights_for_round(staged.trust, accepted)
            new_params = aggregate(AggregationInput(
                base=state.current_model.params,
                updates=[(self.pool[tid], w) for tid, w in zip(accepted, weights)]))
            model = ModelVersion(version=state.current_model.version + 1, params=new_params)
            txs.append(ledger.release_model(self.id, model, list(zip(accepted, weights))))
        txs.append(ledger.round_control(self.id, rid + 1, ledger.OPEN, at=now))
        return ledger.build_block(state, txs, self.chain.head.digest, self.id)

    def _build_extension_block(self, by: float) -> ledger.Block:
        tx = ledger.round_control(self.id, self.local_rs.round_id, ledger.EXTEND,
                                  at=self.ctx.now(), amount=by)
        return ledger.build_block(self.chain.state, [tx], self.chain.head.digest, self.id)

    def _due_block_value(self, height: int):
        """Consensus asks for a proposal after a view change."""
        if self.local_rs.closed:
            return None
        decision = sync.should_close(self.policy, self.local_rs, self.ctx.now())
        if decision == sync.KEEP_OPEN:
            return None
        if isinstance(decision, sync.Extend):
            block = self._build_extension_block(decision.by)
        else:
            block = self._build_close_block()
        payload = ledger.encode_block(block)
        return self.consensus.digest_fn(payload), payload

    def _proposal_valid(self, payload: bytes) -> bool:
        try:
            block = ledger.decode_block(payload)
        except Exception:
            return False
        return self.chain.try_block(block)

    # -- commits ------------------------------------------------------------------

    def _on_commit(self, commit: cns.Commit):
        block = ledger.decode_block(commit.payload)
        try:
            self.chain.append(block)
        except ledger.ExecutionError as exc:
            raise SimulationFault(f"validator {self.id} cannot execute committed "
                                  f"block {block.height}: {exc}") from exc
        rs = self.chain.state.round_state
        released = any(tx.kind == ledger.RELEASE_MODEL for tx in block.txs)
        extended = any(tx.kind == ledger.ROUND_CONTROL and tx.action == ledger.EXTEND
                       for tx in block.txs)
        opened = any(tx.kind == ledger.ROUND_CONTROL and tx.action == ledger.OPEN
                     for tx in block.txs)
        if opened:
            # fresh round: resync local bookkeeping to the committed state
            self.local_rs = rs
            self.pool = {}
            self.reports = {}
            self._notify_trainers()
            self._arm_deadline()
            self.ctx.on_round_complete(self.id, block, released)
        elif extended:
            self.local_rs = rs
            self._notify_extension()
            self._arm_deadline()

    def _notify_trainers(self):
        state = self.chain.state
        msg = ModelRelease(round_id=state.round_state.round_id,
                           version=state.current_model.version,
                           params=state.current_model.params,
                           sender=self.id)
        for tid in self.my_trainers:
            self.ctx.send(trainer_addr(tid), msg)

    def _notify_extension(self):
        rs = self.chain.state.round_state
        extra = sync.extra_steps_allowed(self.policy, trainer_finished=True,
                                         in_extension=True)
        msg = ExtensionGranted(round_id=rs.round_id, new_deadline=rs.deadline,
                               extra_steps=extra)
        for tid in self.my_trainers:
            self.ctx.send(trainer_addr(tid), msg)

    def _arm_deadline(self):
        rs = self.chain.state.round_state
        if rs.deadline is None:
            return  # BAP closes on submissions, not timers
        delay = rs.deadline - self.ctx.now()
        self.ctx.schedule_self(max(0.0, delay), validator_addr(self.id),
                               DeadlineCheck(rs.round_id))
