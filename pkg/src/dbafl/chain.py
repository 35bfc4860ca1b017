"""Hash-chained ledger of model digests, committee elections, tamper detection.

Canonical serialization is fixed field order with fixed-width little-endian
integers, so block hashes are reproducible across implementations:
  record = kind u8 | node_id u64 | round u64 | digest 32B
  block  = index u64 | prev_hash 32B | record_count u32 | records | timestamp_ms u64
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

ZERO_HASH = b"\x00" * 32


def hash_bytes(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


def hash_model(params) -> bytes:
    """SHA-256 over the little-endian float64 serialization of the parameter vector."""
    arr = np.asarray(params, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot hash non-finite parameters")
    return hash_bytes(arr.astype("<f8").tobytes())


class RecordKind(enum.Enum):
    LOCAL = "L"
    GLOBAL = "G"


class VerifyResult(enum.Enum):
    VALID = "valid"
    TAMPERED_AND_BLACKLISTED = "tampered_and_blacklisted"


@dataclass(frozen=True)
class HashRecord:
    kind: RecordKind
    node_id: int
    round: int
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValueError("digest must be exactly 32 bytes")


def serialize_record(record: HashRecord) -> bytes:
    kind_byte = 0 if record.kind is RecordKind.LOCAL else 1
    return struct.pack("<BQQ", kind_byte, record.node_id, record.round) + record.digest


def serialize_block_body(index: int, prev_hash: bytes, records, timestamp_ms: int) -> bytes:
    head = struct.pack("<Q", index) + prev_hash + struct.pack("<I", len(records))
    body = b"".join(serialize_record(r) for r in records)
    return head + body + struct.pack("<Q", timestamp_ms)


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    records: tuple
    timestamp_ms: int
    block_hash: bytes


@dataclass(frozen=True)
class BlockCutPolicy:
    max_wait_s: float = 2.0
    max_records: int = 10
    max_block_bytes: int = 10_000_000

    def __post_init__(self):
        if self.max_wait_s <= 0 or self.max_records <= 0 or self.max_block_bytes <= 0:
            raise ValueError("block cut policy fields must be positive")


def should_cut_block(pending_records: int, pending_bytes: int, elapsed_since_first_s: float,
                     policy: BlockCutPolicy) -> bool:
    if pending_records >= policy.max_records:
        return True
    if pending_bytes >= policy.max_block_bytes:
        return True
    return pending_records >= 1 and elapsed_since_first_s >= policy.max_wait_s


@dataclass
class CommitteeState:
    """Committee of RSU identities; the leader rotates every term_blocks appended blocks."""

    members: tuple
    term_blocks: int
    leader: int | None = None
    blocks_in_term: int = 0
    blacklist: set = field(default_factory=set)
    leader_history: list = field(default_factory=list)

    def elect_from(self, block_hash: bytes):
        self.leader = self.members[elect_leader(block_hash, len(self.members))]
        self.blocks_in_term = 0
        self.blacklist.clear()
        self.leader_history.append(self.leader)


class Chain:
    """Single totally ordered chain (no forks); one writer, any number of readers."""

    def __init__(self, policy: BlockCutPolicy | None = None, committee: CommitteeState | None = None):
        self.policy = policy if policy is not None else BlockCutPolicy()
        self.committee = committee
        self.blocks: list[Block] = []
        self._records_on_chain: set[HashRecord] = set()

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].block_hash if self.blocks else ZERO_HASH

    def append_block(self, records, timestamp_ms: int) -> Block:
        records = tuple(records)
        if not records:
            raise ValueError("a block needs at least one record")
        body = serialize_block_body(len(self.blocks), self.tip_hash, records, int(timestamp_ms))
        if len(body) > self.policy.max_block_bytes:
            raise ValueError(f"serialized block ({len(body)} bytes) exceeds max_block_bytes")
        block = Block(
            index=len(self.blocks),
            prev_hash=self.tip_hash,
            records=records,
            timestamp_ms=int(timestamp_ms),
            block_hash=hash_bytes(body),
        )
        self.blocks.append(block)
        self._records_on_chain.update(records)
        if self.committee is not None:
            if block.index == 0:
                self.committee.elect_from(block.block_hash)  # initial election off the genesis
            else:
                self.committee.blocks_in_term += 1
                if self.committee.blocks_in_term >= self.committee.term_blocks:
                    self.committee.elect_from(block.block_hash)
        return block

    def has_record(self, record: HashRecord) -> bool:
        return record in self._records_on_chain


def elect_leader(block_hash: bytes, m: int) -> int:
    """Digest as a big-endian unsigned integer, mod M."""
    if m < 1:
        raise ValueError("committee size must be >= 1")
    return int.from_bytes(block_hash, "big") % m


def leader_probabilities(observed_leaders, m: int) -> np.ndarray:
    observed = np.asarray(list(observed_leaders), dtype=int)
    if observed.size == 0:
        raise ValueError("need at least one observation")
    return np.bincount(observed, minlength=m) / observed.size


def gini(probabilities) -> float:
    """G = sum_m sum_j |p_m - p_j| / (2 * sum_m sum_j p_j), evaluated as written."""
    p = np.asarray(probabilities, dtype=float)
    if np.any(p < 0) or p.sum() <= 0:
        raise ValueError("probabilities must be nonnegative with positive sum")
    num = np.abs(p[:, None] - p[None, :]).sum()
    den = 2.0 * len(p) * p.sum()
    return float(num / den)


def verify_record(c: Chain, claimed_model, record: HashRecord, committee: CommitteeState) -> VerifyResult:
    """Valid iff the model hashes to the on-chain digest; mismatch blacklists the node."""
    if not c.has_record(record):
        raise ValueError("record not found on chain")
    if hash_model(claimed_model) == record.digest:
        return VerifyResult.VALID
    committee.blacklist.add(record.node_id)
    return VerifyResult.TAMPERED_AND_BLACKLISTED


def verify_chain(c: Chain) -> bool:
    prev = ZERO_HASH
    for i, block in enumerate(c.blocks):
        if block.index != i or block.prev_hash != prev:
            return False
        body = serialize_block_body(block.index, block.prev_hash, block.records, block.timestamp_ms)
        if hash_bytes(body) != block.block_hash:
            return False
        prev = block.block_hash
    return True


# --- dump format: one block per line, fields hex-encoded ---
# index|prev_hash_hex|timestamp_ms|kind,node,round,digest_hex;...|block_hash_hex


@dataclass(frozen=True)
class AuditReport:
    ok: bool
    first_bad_block: int | None = None


def dump_chain(c: Chain) -> str:
    lines = []
    for b in c.blocks:
        recs = ";".join(f"{r.kind.value},{r.node_id},{r.round},{r.digest.hex()}" for r in b.records)
        lines.append(f"{b.index}|{b.prev_hash.hex()}|{b.timestamp_ms}|{recs}|{b.block_hash.hex()}")
    return "\n".join(lines) + ("\n" if lines else "")


def _parse_dump_line(line: str, lineno: int):
    parts = line.split("|")
    if len(parts) != 5:
        raise ValueError(f"dump line {lineno}: expected 5 fields, got {len(parts)}")
    try:
        index = int(parts[0])
        prev_hash = bytes.fromhex(parts[1])
        timestamp_ms = int(parts[2])
        records = []
        for item in parts[3].split(";"):
            kind_s, node_s, round_s, digest_hex = item.split(",")
            records.append(
                HashRecord(RecordKind(kind_s), int(node_s), int(round_s), bytes.fromhex(digest_hex))
            )
        block_hash = bytes.fromhex(parts[4])
    except (ValueError, KeyError) as exc:
        raise ValueError(f"dump line {lineno}: {exc}") from exc
    if len(prev_hash) != 32 or len(block_hash) != 32:
        raise ValueError(f"dump line {lineno}: hash fields must be 32 bytes")
    return index, prev_hash, tuple(records), timestamp_ms, block_hash


def audit_dump(text: str) -> AuditReport:
    """Recompute every block hash and link from a dump; report the first inconsistency.

    Structural problems (truncation, unparseable fields) raise ValueError; only a
    well-formed dump gets an integrity verdict.
    """
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise ValueError("empty chain dump")
    prev = ZERO_HASH
    for i, line in enumerate(lines):
        index, prev_hash, records, timestamp_ms, block_hash = _parse_dump_line(line, i)
        body = serialize_block_body(index, prev_hash, records, timestamp_ms)
        if index != i or prev_hash != prev or hash_bytes(body) != block_hash:
            return AuditReport(ok=False, first_bad_block=i)
        prev = block_hash
    return AuditReport(ok=True)
