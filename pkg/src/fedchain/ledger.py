"""Append-only chain of blocks plus the materialized state replicas agree on.

A block carries an ordered transaction list; executing it folds the
transactions into the StateStore (current model, trust vector, pending
updates, round state) and must reproduce the block's state_hash exactly.
State is therefore a pure function of the committed chain: two replicas
with equal chains have bit-equal state hashes.

Transaction kinds:

* ShareGradient: record an accepted trainer update for the open round.
* TrustAdjust:   set a trainer's raw trust score (absolute, so execution
                 never re-runs validation).
* RoundControl:  open / extend / close a synchronization round, stamped
                 with the proposer's virtual time.
* ReleaseModel:  aggregate the round's pending updates under the carried
                 (trainer, weight) list and bump the version by exactly 1.

Canonical encodings are little-endian and length-prefixed (conventions of
the params module); every transaction and block carries a digest over its
own bytes, so flipping any byte is detected at that height.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import sync
from .aggregation import AggregationInput, NoAcceptedUpdates, aggregate
from .params import (DIGEST_SIZE, FlatParams, GradientUpdate, ModelVersion,
                     decode_params, digest, digest_bytes, encode_params)
from .reputation import TrustVector, init_uniform, weights_for_round
from .sync import RoundState, SyncPolicy

GENESIS_PREV = b"\x00" * DIGEST_SIZE

SHARE_GRADIENT = "share_gradient"
TRUST_ADJUST = "trust_adjust"
ROUND_CONTROL = "round_control"
RELEASE_MODEL = "release_model"

OPEN, EXTEND, CLOSE = "open", "extend", "close"
_ACTION_CODE = {OPEN: 0, EXTEND: 1, CLOSE: 2}
_ACTION_NAME = {v: k for k, v in _ACTION_CODE.items()}


class ExecutionError(Exception):
    """Block or transaction violates the state-machine rules."""


# -- transactions -------------------------------------------------------------

@dataclass(frozen=True)
class Transaction:
    kind: str
    author: int                  # validator id
    # kind-specific fields; unused ones stay at their defaults
    update: GradientUpdate = None            # ShareGradient
    trainer_id: int = -1                     # TrustAdjust
    new_raw: float = 0.0                     # TrustAdjust
    round_id: int = -1                       # RoundControl
    action: str = ""                         # RoundControl
    at: float = 0.0                          # RoundControl
    amount: float = 0.0                      # RoundControl(extend)
    model: ModelVersion = None               # ReleaseModel
    applied: tuple = ()                      # ReleaseModel: ((trainer, weight), ...)
    digest: bytes = field(default=b"", compare=False)

    def __post_init__(self):
        body = encode_transaction_body(self)
        expected = digest_bytes(body)
        if self.digest == b"":
            object.__setattr__(self, "digest", expected)
        elif self.digest != expected:
            raise ExecutionError(f"transaction digest mismatch ({self.kind})")


def share_gradient(author: int, update: GradientUpdate) -> Transaction:
    return Transaction(kind=SHARE_GRADIENT, author=author, update=update)


def trust_adjust(author: int, trainer_id: int, new_raw: float) -> Transaction:
    return Transaction(kind=TRUST_ADJUST, author=author, trainer_id=trainer_id,
                       new_raw=new_raw)


def round_control(author: int, round_id: int, action: str, at: float,
                  amount: float = 0.0) -> Transaction:
    return Transaction(kind=ROUND_CONTROL, author=author, round_id=round_id,
                       action=action, at=at, amount=amount)


def release_model(author: int, model: ModelVersion, applied) -> Transaction:
    return Transaction(kind=RELEASE_MODEL, author=author, model=model,
                       applied=tuple((int(t), float(w)) for t, w in applied))


_TX_TAG = {SHARE_GRADIENT: 1, TRUST_ADJUST: 2, ROUND_CONTROL: 3, RELEASE_MODEL: 4}
_TAG_TX = {v: k for k, v in _TX_TAG.items()}


def encode_transaction_body(tx: Transaction) -> bytes:
    out = [struct.pack("<Bq", _TX_TAG[tx.kind], tx.author)]
    if tx.kind == SHARE_GRADIENT:
        u = tx.update
        out.append(struct.pack("<qQQ", u.trainer_id, u.base_version, u.steps))
        out.append(struct.pack("<Q", u.dim))
        out.append(u.delta.astype("<f8").tobytes())
    elif tx.kind == TRUST_ADJUST:
        out.append(struct.pack("<qd", tx.trainer_id, tx.new_raw))
    elif tx.kind == ROUND_CONTROL:
        out.append(struct.pack("<QBdd", tx.round_id, _ACTION_CODE[tx.action], tx.at, tx.amount))
    elif tx.kind == RELEASE_MODEL:
        out.append(struct.pack("<Q", tx.model.version))
        out.append(struct.pack("<I", len(encode_params(tx.model.params))))
        out.append(encode_params(tx.model.params))
        out.append(tx.model.digest)
        out.append(struct.pack("<I", len(tx.applied)))
        for trainer_id, weight in tx.applied:
            out.append(struct.pack("<qd", trainer_id, weight))
    else:
        raise ValueError(f"unknown transaction kind {tx.kind!r}")
    return b"".join(out)


def encode_transaction(tx: Transaction) -> bytes:
    body = encode_transaction_body(tx)
    return body + tx.digest


def decode_transaction(data: bytes) -> Transaction:
    if len(data) < 9 + DIGEST_SIZE:
        raise ExecutionError("truncated transaction")
    body, dig = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    tag, author = struct.unpack_from("<Bq", body, 0)
    kind = _TAG_TX.get(tag)
    off = 9
    if kind == SHARE_GRADIENT:
        trainer_id, base_version, steps = struct.unpack_from("<qQQ", body, off)
        off += 24
        (dim,) = struct.unpack_from("<Q", body, off)
        off += 8
        delta = np.frombuffer(body, dtype="<f8", count=dim, offset=off)
        upd = GradientUpdate(trainer_id=trainer_id, base_version=base_version,
                             delta=delta, steps=steps)
        return Transaction(kind=kind, author=author, update=upd, digest=dig)
    if kind == TRUST_ADJUST:
        trainer_id, new_raw = struct.unpack_from("<qd", body, off)
        return Transaction(kind=kind, author=author, trainer_id=trainer_id,
                           new_raw=new_raw, digest=dig)
    if kind == ROUND_CONTROL:
        round_id, action, at, amount = struct.unpack_from("<QBdd", body, off)
        return Transaction(kind=kind, author=author, round_id=round_id,
                           action=_ACTION_NAME[action], at=at, amount=amount, digest=dig)
    if kind == RELEASE_MODEL:
        (version,) = struct.unpack_from("<Q", body, off)
        off += 8
        (plen,) = struct.unpack_from("<I", body, off)
        off += 4
        params = decode_params(body[off:off + plen])
        off += plen
        mdigest = body[off:off + DIGEST_SIZE]
        off += DIGEST_SIZE
        (n_applied,) = struct.unpack_from("<I", body, off)
        off += 4
        applied = []
        for _ in range(n_applied):
            trainer_id, weight = struct.unpack_from("<qd", body, off)
            off += 16
            applied.append((trainer_id, weight))
        model = ModelVersion(version=version, params=params, digest=mdigest)
        return Transaction(kind=kind, author=author, model=model,
                           applied=tuple(applied), digest=dig)
    raise ExecutionError(f"unknown transaction tag {tag}")


# -- blocks --------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    txs: tuple
    state_hash: bytes
    proposer: int
    digest: bytes = field(default=b"", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "txs", tuple(self.txs))
        expected = digest_bytes(encode_block_content(self))
        if self.digest == b"":
            object.__setattr__(self, "digest", expected)
        elif self.digest != expected:
            raise ExecutionError(f"block digest mismatch at height {self.height}")


def encode_block_content(block: Block) -> bytes:
    out = [struct.pack("<Q", block.height), block.prev_hash,
           struct.pack("<q", block.proposer), struct.pack("<I", len(block.txs))]
    for tx in block.txs:
        enc = encode_transaction(tx)
        out.append(struct.pack("<I", len(enc)))
        out.append(enc)
    out.append(block.state_hash)
    return b"".join(out)


def encode_block(block: Block) -> bytes:
    return encode_block_content(block) + block.digest


def decode_block(data: bytes) -> Block:
    content, dig = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    off = 0
    (height,) = struct.unpack_from("<Q", content, off)
    off += 8
    prev_hash = content[off:off + DIGEST_SIZE]
    off += DIGEST_SIZE
    (proposer,) = struct.unpack_from("<q", content, off)
    off += 8
    (n_txs,) = struct.unpack_from("<I", content, off)
    off += 4
    txs = []
    for _ in range(n_txs):
        (tlen,) = struct.unpack_from("<I", content, off)
        off += 4
        txs.append(decode_transaction(content[off:off + tlen]))
        off += tlen
    state_hash = content[off:off + DIGEST_SIZE]
    if off + DIGEST_SIZE != len(content):
        raise ExecutionError("trailing bytes in block encoding")
    return Block(height=height, prev_hash=prev_hash, txs=tuple(txs),
                 state_hash=state_hash, proposer=proposer, digest=dig)


# -- materialized state ----------------------------------------------------------

@dataclass(frozen=True)
class StateStore:
    """Deterministic fold of the committed chain."""

    current_model: ModelVersion
    trust: TrustVector
    round_state: RoundState
    pending: dict                 # (round_id, trainer_id) -> GradientUpdate
    policy: SyncPolicy            # run configuration, fixed at genesis
    trainer_ids: tuple
    height: int = 0

    def state_hash(self) -> bytes:
        out = [struct.pack("<QQ", self.height, self.current_model.version),
               self.current_model.digest]
        out.append(struct.pack("<I", len(self.trust.raw)))
        for tid in sorted(self.trust.raw):
            out.append(struct.pack("<qd", tid, self.trust.raw[tid]))
        rs = self.round_state
        deadline = rs.deadline if rs.deadline is not None else float("nan")
        out.append(struct.pack("<Qdd??I", rs.round_id, rs.opened_at, deadline,
                               rs.extension_granted, rs.closed, rs.total_trainers))
        out.append(struct.pack("<I", len(rs.submitted)))
        for tid in sorted(rs.submitted):
            out.append(struct.pack("<q", tid))
        out.append(struct.pack("<I", len(self.pending)))
        for (round_id, tid) in sorted(self.pending):
            out.append(struct.pack("<Qq", round_id, tid))
            out.append(self.pending[(round_id, tid)].delta.astype("<f8").tobytes())
        return digest_bytes(b"".join(out))


@dataclass(frozen=True)
class GenesisConfig:
    """Everything needed to reconstruct height-0 state from a chain file."""

    initial_params: FlatParams
    trainer_ids: tuple
    policy: SyncPolicy
    opened_at: float = 0.0


def genesis_state(cfg: GenesisConfig) -> StateStore:
    model = ModelVersion(version=0, params=cfg.initial_params)
    return StateStore(
        current_model=model,
        trust=init_uniform(cfg.trainer_ids),
        round_state=sync.open_round(cfg.policy, 0, cfg.opened_at, len(cfg.trainer_ids)),
        pending={},
        policy=cfg.policy,
        trainer_ids=tuple(cfg.trainer_ids),
        height=0,
    )


def genesis_block(cfg: GenesisConfig) -> Block:
    state = genesis_state(cfg)
    return Block(height=0, prev_hash=GENESIS_PREV, txs=(),
                 state_hash=state.state_hash(), proposer=-1)


def apply_transactions(state: StateStore, txs) -> StateStore:
    """Fold transactions in order; raises ExecutionError on any rule violation."""
    model = state.current_model
    trust = state.trust
    rs = state.round_state
    pending = dict(state.pending)
    policy = state.policy

    for tx in txs:
        if tx.kind == SHARE_GRADIENT:
            u = tx.update
            if u.base_version != model.version:
                raise ExecutionError(f"share for stale version {u.base_version}, "
                                     f"current {model.version}")
            if u.dim != model.params.dim:
                raise ExecutionError("share dimension mismatch")
            if u.trainer_id not in state.trainer_ids:
                raise ExecutionError(f"share from unknown trainer {u.trainer_id}")
            rs, keep = sync.on_submission(policy, rs, u.trainer_id)
            if not keep:
                raise ExecutionError(f"duplicate share from trainer {u.trainer_id}")
            pending[(rs.round_id, u.trainer_id)] = u
        elif tx.kind == TRUST_ADJUST:
            if tx.trainer_id not in trust.raw:
                raise ExecutionError(f"trust adjust for unknown trainer {tx.trainer_id}")
            if tx.new_raw < 0 or not np.isfinite(tx.new_raw):
                raise ExecutionError("trust adjust must carry a finite non-negative score")
            raw = dict(trust.raw)
            raw[tx.trainer_id] = tx.new_raw
            trust = TrustVector(raw)
        elif tx.kind == ROUND_CONTROL:
            if tx.action == OPEN:
                if tx.round_id != rs.round_id + 1:
                    raise ExecutionError(f"round {tx.round_id} cannot open after {rs.round_id}")
                if not rs.closed:
                    raise ExecutionError("previous round still open")
                pending = {k: v for k, v in pending.items() if k[0] >= tx.round_id}
                rs = sync.open_round(policy, tx.round_id, tx.at, len(state.trainer_ids))
            elif tx.action == EXTEND:
                if tx.round_id != rs.round_id or rs.closed:
                    raise ExecutionError("extension targets a round that is not open")
                rs = sync.grant_extension(rs, tx.amount)
            elif tx.action == CLOSE:
                if tx.round_id != rs.round_id or rs.closed:
                    raise ExecutionError("close targets a round that is not open")
                rs = sync.close_round(rs)
            else:
                raise ExecutionError(f"unknown round action {tx.action!r}")
        elif tx.kind == RELEASE_MODEL:
            if not rs.closed:
                raise ExecutionError("release before round close")
            round_updates = {tid: upd for (r, tid), upd in pending.items()
                             if r == rs.round_id}
            if not round_updates:
                raise ExecutionError("release with no pending updates")
            expected_ids = sorted(round_updates)
            applied_ids = [t for t, _ in tx.applied]
            if applied_ids != expected_ids:
                raise ExecutionError(f"applied trainers {applied_ids} do not match "
                                     f"pending {expected_ids}")
            weights = weights_for_round(trust, expected_ids)
            carried = [w for _, w in tx.applied]
            if weights != carried:
                raise ExecutionError("applied weights do not match trust-derived weights")
            new_params = aggregate(AggregationInput(
                base=model.params,
                updates=[(round_updates[tid], w) for tid, w in zip(expected_ids, weights)],
            ))
            if tx.model.version != model.version + 1:
                raise ExecutionError(f"release version {tx.model.version} must be "
                                     f"{model.version + 1}")
            if digest(new_params) != tx.model.digest:
                raise ExecutionError("release digest does not match re-aggregated params")
            model = tx.model
            for tid in expected_ids:
                del pending[(rs.round_id, tid)]
        else:
            raise ExecutionError(f"unknown transaction kind {tx.kind!r}")

    return replace(state, current_model=model, trust=trust, round_state=rs,
                   pending=pending, height=state.height + 1)


def execute_block(state: StateStore, block: Block) -> StateStore:
    """Apply a block and require its state_hash to match the result."""
    if block.height != state.height + 1:
        raise ExecutionError(f"block height {block.height} does not follow {state.height}")
    new_state = apply_transactions(state, block.txs)
    if new_state.state_hash() != block.state_hash:
        raise ExecutionError(f"state hash mismatch at height {block.height}")
    return new_state


def build_block(state: StateStore, txs, prev_hash: bytes, proposer: int) -> Block:
    """Assemble a block whose state_hash matches executing txs on state."""
    new_state = apply_transactions(state, txs)
    return Block(height=state.height + 1, prev_hash=prev_hash, txs=tuple(txs),
                 state_hash=new_state.state_hash(), proposer=proposer)


def query(state: StateStore, key: str):
    """Read-only snapshot access: latest_version | trust | round."""
    if key == "latest_version":
        return state.current_model.version
    if key == "trust":
        return state.trust.phi
    if key == "round":
        return state.round_state
    raise ValueError(f"unknown query key {key!r}")


# -- chain container and verification ----------------------------------------------

class Chain:
    """A replica's committed chain plus its materialized state."""

    def __init__(self, genesis: GenesisConfig):
        self.genesis = genesis
        self.blocks = [genesis_block(genesis)]
        self.state = genesis_state(genesis)

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    def append(self, block: Block) -> StateStore:
        if block.prev_hash != self.head.digest:
            raise ExecutionError(f"broken hash link at height {block.height}")
        self.state = execute_block(self.state, block)
        self.blocks.append(block)
        return self.state

    def try_block(self, block: Block) -> bool:
        """Validity check without mutation (used to vet proposals)."""
        try:
            if block.prev_hash != self.head.digest:
                return False
            execute_block(self.state, block)
            return True
        except (ExecutionError, NoAcceptedUpdates, ValueError):
            return False


def verify_chain(genesis: GenesisConfig, blocks) -> tuple:
    """Re-execute a chain from genesis; (True, None) or (False, description).

    Checks, per height: block digest, hash link, height continuity,
    transaction digests (enforced at decode), and the re-executed state hash.
    """
    blocks = list(blocks)
    if not blocks:
        return False, "empty chain: genesis block missing"
    g = blocks[0]
    if g.height != 0 or g.prev_hash != GENESIS_PREV or g.txs:
        return False, "height 0: malformed genesis block"
    state = genesis_state(genesis)
    if g.state_hash != state.state_hash():
        return False, "height 0: genesis state hash mismatch"
    prev = g
    for block in blocks[1:]:
        h = block.height
        if h != prev.height + 1:
            return False, f"height {h}: does not follow {prev.height}"
        if block.prev_hash != prev.digest:
            return False, f"height {h}: broken hash link"
        try:
            state = execute_block(state, block)
        except (ExecutionError, NoAcceptedUpdates, ValueError) as exc:
            return False, f"height {h}: {exc}"
        prev = block
    return True, None


# -- chain files -----------------------------------------------------------------

CHAIN_MAGIC = b"FCHAIN01"


def _enc_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _dec_str(data: bytes, off: int):
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    return data[off:off + n].decode("utf-8"), off + n


def encode_chain(genesis: GenesisConfig, blocks) -> bytes:
    p = genesis.policy
    out = [CHAIN_MAGIC, _enc_str("sha256")]
    enc = encode_params(genesis.initial_params)
    out.append(struct.pack("<I", len(enc)))
    out.append(enc)
    out.append(struct.pack("<I", len(genesis.trainer_ids)))
    for tid in genesis.trainer_ids:
        out.append(struct.pack("<q", tid))
    out.append(_enc_str(p.scheme))
    out.append(struct.pack("<dIdd", p.period, p.max_extension_steps,
                           p.majority_ratio, genesis.opened_at))
    out.append(struct.pack("<I", len(blocks)))
    for block in blocks:
        enc = encode_block(block)
        out.append(struct.pack("<I", len(enc)))
        out.append(enc)
    return b"".join(out)


def split_chain(data: bytes):
    """Parse the header and slice out raw block encodings (undecoded)."""
    if data[:8] != CHAIN_MAGIC:
        raise ExecutionError("not a chain file (bad magic)")
    off = 8
    _algo, off = _dec_str(data, off)
    (plen,) = struct.unpack_from("<I", data, off)
    off += 4
    params = decode_params(data[off:off + plen])
    off += plen
    (n_tr,) = struct.unpack_from("<I", data, off)
    off += 4
    trainer_ids = []
    for _ in range(n_tr):
        (tid,) = struct.unpack_from("<q", data, off)
        trainer_ids.append(tid)
        off += 8
    scheme, off = _dec_str(data, off)
    period, n_ext, theta, opened_at = struct.unpack_from("<dIdd", data, off)
    off += 28
    policy = SyncPolicy(scheme=scheme, period=period, max_extension_steps=n_ext,
                        majority_ratio=theta)
    genesis = GenesisConfig(initial_params=params, trainer_ids=tuple(trainer_ids),
                            policy=policy, opened_at=opened_at)
    (n_blocks,) = struct.unpack_from("<I", data, off)
    off += 4
    raw_blocks = []
    for _ in range(n_blocks):
        (blen,) = struct.unpack_from("<I", data, off)
        off += 4
        raw_blocks.append(data[off:off + blen])
        off += blen
    return genesis, raw_blocks


def decode_chain(data: bytes):
    genesis, raw_blocks = split_chain(data)
    return genesis, [decode_block(raw) for raw in raw_blocks]


def write_chain(path, genesis: GenesisConfig, blocks) -> None:
    with open(path, "wb") as f:
        f.write(encode_chain(genesis, blocks))


def read_chain(path):
    with open(path, "rb") as f:
        return decode_chain(f.read())


def verify_chain_file(path) -> tuple:
    """Decode + verify, reporting failures at the corrupted height.

    The expected height of each stored block is its index, so a block whose
    bytes no longer decode (tampered payload, digest, or framing) is
    reported at that height; header corruption is height 0 (genesis).
    """
    with open(path, "rb") as f:
        data = f.read()
    try:
        genesis, raw_blocks = split_chain(data)
    except Exception as exc:
        return False, f"height 0: undecodable chain header ({exc})"
    blocks = []
    for i, raw in enumerate(raw_blocks):
        try:
            blocks.append(decode_block(raw))
        except Exception as exc:
            return False, f"height {i}: undecodable block ({exc})"
    return verify_chain(genesis, blocks)
