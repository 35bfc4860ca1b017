"""Event-driven protocol simulation: node lifecycles, committee service, attacks.

Every node cycles through download, train, self-test, upload, and a wait
for the aggregation decision; which of those legs exist, and who serves
the aggregation, depends on the strategy.  Asynchronous strategies
aggregate each arrival as it lands, synchronous ones hold a barrier for
all K fresh models.  The simulation is fully deterministic: all
randomness flows from the master seed through derive_seed, and
simultaneous events replay in insertion order.
"""

from __future__ import annotations

import enum
import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .aggregation import (DefenseMode, DefensePolicy, Verdict, aggregate_async,
                          aggregate_fedavg, defense_filter, scaling_factor)
from .chain import (Chain, CommitteeState, BlockCutPolicy, HashRecord, RecordKind,
                    VerifyResult, hash_model, serialize_record, should_cut_block,
                    verify_record)
from .model import (Dataset, ModelParams, TrainConfig, evaluate_accuracy,
                    generate_synthetic_dataset, global_objective, init_params,
                    local_loss, local_train, split_dataset)
from .netsim import (DdosConfig, EventQueue, LinkParams, PayloadSizes,
                     ddos_effective_rate, shannon_rate, tx_time)

DEFAULT_LINK = LinkParams(mobile_bandwidth_hz=20e6, mobile_snr=3.0,
                          ethernet_rate_bps=1e9)
DEFAULT_PAYLOAD = PayloadSizes(model_bits=80_000_000, hash_bits=256, block_bits=8000)
DEFAULT_TRAIN = TrainConfig(epochs=50, learning_rate=0.01, batch_size=1500)

STAGES = ("training", "testing", "communication", "waiting")


def derive_seed(master: int, purpose: str, *indices: int) -> int:
    """Child seed for one (purpose, index...) slot, stable across runs."""
    tag = ":".join([str(master), purpose, *(str(i) for i in indices)])
    return int.from_bytes(hashlib.sha256(tag.encode()).digest()[:8], "big") >> 1


class Role(enum.Enum):
    BUS = "Bus"
    RSU = "RSU"


class StrategyKind(enum.Enum):
    DBAFL = "DBAFL"
    BSFL = "BSFL"
    FEDAVG = "FedAVG"
    STATIC_EPS = "StaticEps"
    LOCAL_ONLY = "LocalOnly"
    AFL = "AFL"


@dataclass(frozen=True)
class Strategy:
    """Aggregation discipline; STATIC_EPS carries its fixed scaling factor."""

    kind: StrategyKind
    epsilon: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind is StrategyKind.STATIC_EPS:
            if self.epsilon is None or self.epsilon <= 0:
                raise ValueError("StaticEps needs a positive epsilon")
        elif self.epsilon is not None:
            raise ValueError(f"{self.kind.value} does not take an epsilon")

    @classmethod
    def dbafl(cls) -> "Strategy":
        return cls(StrategyKind.DBAFL)

    @classmethod
    def bsfl(cls) -> "Strategy":
        return cls(StrategyKind.BSFL)

    @classmethod
    def fedavg(cls) -> "Strategy":
        return cls(StrategyKind.FEDAVG)

    @classmethod
    def static_eps(cls, epsilon: float) -> "Strategy":
        return cls(StrategyKind.STATIC_EPS, epsilon)

    @classmethod
    def local_only(cls) -> "Strategy":
        return cls(StrategyKind.LOCAL_ONLY)

    @classmethod
    def afl(cls) -> "Strategy":
        return cls(StrategyKind.AFL)

    @property
    def label(self) -> str:
        if self.kind is StrategyKind.STATIC_EPS:
            return f"{self.kind.value}:{self.epsilon!r}"
        return self.kind.value

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        name, sep, eps = text.partition(":")
        for kind in StrategyKind:
            if kind.value == name:
                if sep:
                    if kind is not StrategyKind.STATIC_EPS:
                        raise ValueError(f"{name} does not take an epsilon")
                    return cls(kind, float(eps))
                if kind is StrategyKind.STATIC_EPS:
                    raise ValueError("StaticEps needs an epsilon, e.g. StaticEps:1.0")
                return cls(kind)
        raise ValueError(f"unknown strategy {text!r}")

    @property
    def uses_chain(self) -> bool:
        return self.kind in (StrategyKind.DBAFL, StrategyKind.STATIC_EPS,
                             StrategyKind.BSFL)

    @property
    def is_synchronous(self) -> bool:
        return self.kind in (StrategyKind.FEDAVG, StrategyKind.BSFL)

    @property
    def has_bootstrap(self) -> bool:
        # the serving node trains the initial global before anyone else moves
        return self.uses_chain or self.kind is StrategyKind.AFL

    @property
    def service_epsilon(self) -> Optional[float]:
        """Fixed scaling factor for arrival-time aggregation; None means dynamic."""
        if self.kind is StrategyKind.DBAFL:
            return None
        if self.kind is StrategyKind.STATIC_EPS:
            return self.epsilon
        return 1.0


@dataclass(frozen=True)
class NodeConfig:
    id: int
    role: Role
    compute_time_multiplier: float = 1.0  # simulated s of training per epoch per 1000 samples
    dataset: Optional[Dataset] = None     # None derives a slice of the shared pool
    link: LinkParams = DEFAULT_LINK

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError("node id must be non-negative")
        if self.compute_time_multiplier < 1.0:
            raise ValueError("compute_time_multiplier must be at least 1")


@dataclass(frozen=True)
class DataSpec:
    """Geometry of the synthetic pool each node draws its slice from."""

    samples_per_node: int = 1500
    features: int = 2
    classes: int = 2
    separation: float = 4.0
    test_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.samples_per_node < 10:
            raise ValueError("samples_per_node must be at least 10")
        if self.features < 1 or self.classes < 2:
            raise ValueError("need at least one feature and two classes")
        if self.separation < 0:
            raise ValueError("separation must be non-negative")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie strictly between 0 and 1")


@dataclass(frozen=True)
class AttackConfig:
    poisoners: frozenset = frozenset()
    poison_magnitude: float = 10.0
    ddos: Optional[DdosConfig] = None
    defense: DefensePolicy = DefensePolicy.off()

    def __post_init__(self) -> None:
        if self.poison_magnitude <= 0:
            raise ValueError("poison_magnitude must be positive")
        object.__setattr__(self, "poisoners", frozenset(self.poisoners))

    @classmethod
    def none(cls) -> "AttackConfig":
        return cls()


@dataclass(frozen=True)
class ScenarioConfig:
    nodes: tuple
    strategy: Strategy
    train: TrainConfig
    data: DataSpec
    chain_policy: BlockCutPolicy
    term_blocks: int
    payload: PayloadSizes
    attack: AttackConfig
    duration_s: float
    master_seed: int
    metrics_interval_s: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.nodes:
            raise ValueError("nodes: need at least one node")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("nodes: ids must be unique")
        if self.strategy.kind is not StrategyKind.LOCAL_ONLY and \
                not any(n.role is Role.RSU for n in self.nodes):
            raise ValueError(
                f"nodes: {self.strategy.label} needs at least one RSU to serve")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.metrics_interval_s <= 0:
            raise ValueError("metrics_interval_s must be positive")
        if self.term_blocks < 1:
            raise ValueError("term_blocks must be at least 1")
        if not self.attack.poisoners <= set(ids):
            raise ValueError("attack.poisoners must reference configured node ids")


@dataclass(frozen=True)
class MetricsRow:
    sim_time_s: float
    avg_test_accuracy: float
    global_objective: float
    t_training: float       # cumulative seconds, summed over nodes
    t_testing: float
    t_communication: float
    t_waiting: float
    blocks_appended: int
    current_leader: int     # -1 when no node serves aggregations


@dataclass(frozen=True)
class RoundLog:
    node_id: int
    round_index: int
    start_s: float
    download_done_s: float
    train_done_s: float
    test_done_s: float
    upload_done_s: float
    decision_s: float


class StepVerdict(enum.Enum):
    ACCEPTED = "Accepted"
    DISCARDED = "Discarded"
    TAMPERED = "Tampered"
    IGNORED = "Ignored"


@dataclass(frozen=True)
class DecisionLog:
    time_s: float
    node_id: int
    round_index: int
    verdict: StepVerdict
    epsilon: Optional[float]
    acc_local: Optional[float]
    acc_global: Optional[float]
    upload_digest: bytes
    global_digest_before: bytes
    global_digest_after: bytes


@dataclass(frozen=True)
class SyncRoundLog:
    round_index: int
    started_s: float
    upload_done_s: tuple    # ((node_id, time), ...) in arrival order
    fired_s: float
    decision_s: float


@dataclass
class RunResult:
    config: ScenarioConfig
    rows: list
    node_accuracies: list   # one tuple per row, node accuracies in config order
    chain: Optional[Chain]
    stage_totals: dict      # node id -> {stage: cumulative seconds at duration}
    decisions: list
    round_logs: list
    sync_rounds: list


def default_nodes(rsus: int = 3, buses: int = 2, bus_multiplier: float = 4.0,
                  link: LinkParams = DEFAULT_LINK) -> tuple:
    nodes = [NodeConfig(id=i, role=Role.RSU, link=link) for i in range(rsus)]
    nodes += [NodeConfig(id=rsus + i, role=Role.BUS,
                         compute_time_multiplier=bus_multiplier, link=link)
              for i in range(buses)]
    return tuple(nodes)


def default_scenario(strategy: Strategy, *, master_seed: int = 1,
                     duration_s: float = 600.0, nodes=None, data=None, train=None,
                     chain_policy=None, term_blocks: int = 10, payload=None,
                     attack=None, metrics_interval_s: float = 5.0) -> ScenarioConfig:
    return ScenarioConfig(
        nodes=tuple(nodes) if nodes is not None else default_nodes(),
        strategy=strategy,
        train=train if train is not None else DEFAULT_TRAIN,
        data=data if data is not None else DataSpec(),
        chain_policy=chain_policy if chain_policy is not None else BlockCutPolicy(),
        term_blocks=term_blocks,
        payload=payload if payload is not None else DEFAULT_PAYLOAD,
        attack=attack if attack is not None else AttackConfig(),
        duration_s=duration_s,
        master_seed=master_seed,
        metrics_interval_s=metrics_interval_s,
    )


def node_datasets(cfg: ScenarioConfig) -> list:
    """Per-node (train, test) splits, in configuration order.

    Nodes without an explicit dataset share one seeded pool, sliced by
    position, so the population is identically distributed across nodes.
    """
    pool = generate_synthetic_dataset(
        seed=derive_seed(cfg.master_seed, "data"),
        n=cfg.data.samples_per_node * len(cfg.nodes),
        f=cfg.data.features, classes=cfg.data.classes,
        separation=cfg.data.separation)
    out = []
    for position, node in enumerate(cfg.nodes):
        if node.dataset is not None:
            out.append(split_dataset(node.dataset, cfg.data.test_fraction))
            continue
        lo = position * cfg.data.samples_per_node
        hi = lo + cfg.data.samples_per_node
        piece = Dataset(pool.features[lo:hi].copy(), pool.labels[lo:hi].copy(),
                        pool.classes)
        out.append(split_dataset(piece, cfg.data.test_fraction))
    return out


# ------------------------------------------------------------------ operations


def poison(params: ModelParams, magnitude: float, rng_seed: int) -> ModelParams:
    """Uploaded-copy corruption: seeded uniform noise in [-magnitude, +magnitude]."""
    if magnitude <= 0:
        raise ValueError("magnitude must be positive")
    rng = np.random.default_rng(rng_seed)
    return params + rng.uniform(-magnitude, magnitude, size=params.shape)


def average_test_accuracy(accuracies: Sequence[float]) -> float:
    """Arithmetic mean of the nodes' current-model accuracies."""
    if len(accuracies) == 0:
        raise ValueError("need at least one accuracy")
    return float(np.mean(np.asarray(accuracies, dtype=float)))


def synchronous_round(strategy: Strategy, w_global_prev: ModelParams,
                      models: Sequence[ModelParams],
                      sizes: Sequence[int]) -> ModelParams:
    """One barrier aggregation over all K fresh local models.

    FedAVG takes the sample-size-weighted mean; the synchronized chain
    variant folds the models into the previous global in arrival order
    with a unit scaling factor each.
    """
    if strategy.kind is StrategyKind.FEDAVG:
        return aggregate_fedavg(models, sizes)
    if strategy.kind is StrategyKind.BSFL:
        out = w_global_prev
        for m in models:
            out = aggregate_async(out, m, 1.0)
        return out
    raise ValueError(f"{strategy.label} does not aggregate on a barrier")


@dataclass
class LeaderState:
    """The serving node's view: its test split and the global model it owns."""

    node_id: int
    test_data: Dataset
    global_params: ModelParams
    eps_static: Optional[float] = None  # None applies the accuracy-ratio rule
    global_round: int = 0
    pending_records: list = field(default_factory=list)


@dataclass(frozen=True)
class IncomingModel:
    node_id: int
    round: int
    params: ModelParams
    record: HashRecord


@dataclass(frozen=True)
class StepOutcome:
    verdict: StepVerdict
    epsilon: Optional[float]
    acc_local: Optional[float]
    acc_global: Optional[float]


def _decide(global_params: ModelParams, test_data: Dataset,
            eps_static: Optional[float], defense: DefensePolicy,
            incoming: ModelParams):
    """Filter-then-weigh core shared by the service and the public step."""
    acc_l = acc_g = None
    if defense.mode is not DefenseMode.OFF or eps_static is None:
        acc_l = evaluate_accuracy(incoming, test_data)
        acc_g = evaluate_accuracy(global_params, test_data)
        if defense_filter(acc_l, acc_g, defense) is Verdict.DISCARD:
            return StepVerdict.DISCARDED, None, acc_l, acc_g, None
    eps = eps_static if eps_static is not None else scaling_factor(acc_l, acc_g)
    return (StepVerdict.ACCEPTED, eps, acc_l, acc_g,
            aggregate_async(global_params, incoming, eps))


def leader_aggregation_step(leader: LeaderState, incoming: IncomingModel,
                            c: Chain, defense: DefensePolicy) -> StepOutcome:
    """Process one recorded model arrival: verify, filter, weigh, aggregate.

    Tampering blacklists the sender and leaves the global untouched; a
    blacklisted sender is ignored outright until the next election.  An
    accepted model updates the leader's global in place and queues the
    new global digest for the next block.
    """
    if c.committee is None:
        raise ValueError("chain has no committee attached")
    if incoming.node_id in c.committee.blacklist:
        return StepOutcome(StepVerdict.IGNORED, None, None, None)
    result = verify_record(c, incoming.params, incoming.record, c.committee)
    if result is VerifyResult.TAMPERED_AND_BLACKLISTED:
        return StepOutcome(StepVerdict.TAMPERED, None, None, None)
    verdict, eps, acc_l, acc_g, new_global = _decide(
        leader.global_params, leader.test_data, leader.eps_static, defense,
        incoming.params)
    if verdict is StepVerdict.ACCEPTED:
        leader.global_params = new_global
        leader.pending_records.append(HashRecord(
            RecordKind.GLOBAL, leader.node_id, leader.global_round,
            hash_model(new_global)))
        leader.global_round += 1
    return StepOutcome(verdict, eps, acc_l, acc_g)


# ------------------------------------------------------------------ simulation


class _NodeRT:
    """Mutable per-node runtime state and stage accounting."""

    def __init__(self, cfg: NodeConfig, train_data: Dataset, test_data: Dataset,
                 train_cfg: TrainConfig, features: int, classes: int):
        self.cfg = cfg
        self.train_data = train_data
        self.test_data = test_data
        self.params = init_params(features, classes)
        self.base_version = 0
        self.round = 0
        self.last_eps = 1.0
        self.train_time = cfg.compute_time_multiplier * train_cfg.epochs \
            * train_data.n / 1000.0
        self.test_time = cfg.compute_time_multiplier * test_data.n / 1000.0
        self.stage = "waiting"
        self.since = 0.0
        self.committed = dict.fromkeys(STAGES, 0.0)
        self.marks = {}

    def switch(self, now: float, stage: str) -> None:
        self.committed[self.stage] += now - self.since
        self.stage = stage
        self.since = now

    def totals_at(self, now: float) -> dict:
        out = dict(self.committed)
        out[self.stage] += now - self.since
        return out


class _Simulation:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.strategy = cfg.strategy
        datasets = node_datasets(cfg)
        self.nodes = [
            _NodeRT(nc, tr, te, cfg.train, tr.features.shape[1], tr.classes)
            for nc, (tr, te) in zip(cfg.nodes, datasets)]
        self.by_id = {n.cfg.id: n for n in self.nodes}
        first = self.nodes[0]
        self.global_params = init_params(first.train_data.features.shape[1],
                                         first.train_data.classes)
        self.global_version = 0
        rsu_ids = tuple(n.id for n in cfg.nodes if n.role is Role.RSU)
        self.server_id = rsu_ids[0] if rsu_ids else -1
        self.chain: Optional[Chain] = None
        if self.strategy.uses_chain:
            committee = CommitteeState(members=rsu_ids, term_blocks=cfg.term_blocks)
            self.chain = Chain(policy=cfg.chain_policy, committee=committee)
        self.pool: list = []
        self.pool_bytes = 0
        self.pool_first: Optional[float] = None
        self.pool_epoch = 0
        self.svc: deque = deque()
        self.svc_busy = False
        self.agg_counter = 0
        self.arrivals: list = []
        self.sync_index = 0
        self.sync_started = 0.0
        self.bootstrap_pending = self.strategy.has_bootstrap
        self.q = EventQueue()
        self.rows: list = []
        self.node_accuracies: list = []
        self.decisions: list = []
        self.round_logs: list = []
        self.sync_rounds: list = []
        if self.strategy.kind is StrategyKind.FEDAVG:
            total = sum(n.train_data.n for n in self.nodes)
            for n in self.nodes:
                n.last_eps = len(self.nodes) * n.train_data.n / total

    # -------------------------------------------------------------- plumbing

    def _aggregator(self) -> int:
        if self.chain is not None:
            return self.chain.committee.leader
        return self.server_id

    def _flood_target(self) -> Optional[int]:
        ddos = self.cfg.attack.ddos
        if ddos is None or ddos.attack_fraction == 0.0:
            return None
        if self.strategy.kind is StrategyKind.LOCAL_ONLY:
            return None
        if self.chain is None:
            return self.server_id  # a static server is trivially tracked
        history = self.chain.committee.leader_history
        idx = len(history) - 1 - ddos.retarget_lag_terms
        return history[idx] if idx >= 0 else None

    def _mobile_rate(self, node: _NodeRT, endpoint: int) -> float:
        rate = shannon_rate(node.cfg.link)
        ddos = self.cfg.attack.ddos
        if ddos is None:
            return rate
        return ddos_effective_rate(rate, ddos, self._flood_target() == endpoint)

    def _download_duration(self, node: _NodeRT) -> float:
        source = self._aggregator()
        if node.cfg.id == source:
            return 0.0
        if node.cfg.role is Role.RSU:
            if self.chain is not None:
                return 0.0  # replicas are already synchronized across RSUs
            return tx_time(self.cfg.payload.model_bits, node.cfg.link.ethernet_rate_bps)
        return tx_time(self.cfg.payload.model_bits, self._mobile_rate(node, source))

    def _upload_duration(self, node: _NodeRT) -> float:
        target = self._aggregator()
        sizes = self.cfg.payload
        eth = node.cfg.link.ethernet_rate_bps
        if self.chain is not None:
            peers = len(self.chain.committee.members) > 1
            if node.cfg.role is Role.RSU:
                if not peers:
                    return 0.0
                return tx_time(sizes.model_bits, eth) + tx_time(sizes.hash_bits, eth)
            rate = self._mobile_rate(node, target)
            sync = tx_time(sizes.model_bits, eth) if peers else 0.0
            return tx_time(sizes.model_bits, rate) + tx_time(sizes.hash_bits, rate) + sync
        if node.cfg.id == target:
            return 0.0
        if node.cfg.role is Role.RSU:
            return tx_time(sizes.model_bits, eth)
        return tx_time(sizes.model_bits, self._mobile_rate(node, target))

    def _service_extras(self, leader: _NodeRT) -> float:
        """Digest notification and replica sync once a new global exists."""
        if self.chain is None:
            return 0.0
        sizes = self.cfg.payload
        dur = tx_time(sizes.hash_bits, self._mobile_rate(leader, leader.cfg.id))
        if len(self.chain.committee.members) > 1:
            dur += tx_time(sizes.model_bits, leader.cfg.link.ethernet_rate_bps)
        return dur

    def _pool_append(self, record: HashRecord, now: float) -> None:
        if not self.pool:
            self.pool_first = now
            self.pool_epoch += 1
            self.q.schedule(now + self.chain.policy.max_wait_s,
                            ("cut", self.pool_epoch))
        self.pool.append(record)
        self.pool_bytes += len(serialize_record(record))
        if should_cut_block(len(self.pool), self.pool_bytes,
                            now - self.pool_first, self.chain.policy):
            self._cut(now)

    def _cut(self, now: float) -> None:
        self.chain.append_block(self.pool, int(round(now * 1000)))
        self.pool = []
        self.pool_bytes = 0
        self.pool_first = None

    def _upload_payload(self, node: _NodeRT):
        params = node.params.copy()
        if node.cfg.id in self.cfg.attack.poisoners:
            params = poison(params, self.cfg.attack.poison_magnitude,
                            derive_seed(self.cfg.master_seed, "poison",
                                        node.cfg.id, node.round))
        return params, hash_model(params)

    def _finish_round(self, node: _NodeRT, now: float, upload_done: float,
                      decision: float) -> None:
        m = node.marks
        self.round_logs.append(RoundLog(
            node.cfg.id, node.round, m["start"], m["dl"], m["train"], m["test"],
            upload_done, decision))
        node.round += 1
        self.q.schedule(now, ("start", node.cfg.id))

    # -------------------------------------------------------------- handlers

    def _on_start(self, now: float, node: _NodeRT) -> None:
        node.marks = {"start": now}
        stale = node.base_version != self.global_version
        if self.strategy.kind is not StrategyKind.LOCAL_ONLY and stale:
            snapshot = self.global_params.copy()
            node.switch(now, "communication")
            self.q.schedule(now + self._download_duration(node),
                            ("dl", node.cfg.id, self.global_version, snapshot))
            return
        node.marks["dl"] = now
        node.switch(now, "training")
        self.q.schedule(now + node.train_time, ("train", node.cfg.id))

    def _on_dl(self, now: float, node: _NodeRT, version: int,
               snapshot: ModelParams) -> None:
        node.params = snapshot
        node.base_version = version
        node.marks["dl"] = now
        node.switch(now, "training")
        self.q.schedule(now + node.train_time, ("train", node.cfg.id))

    def _on_train(self, now: float, node: _NodeRT) -> None:
        node.params = local_train(
            node.params, node.train_data, self.cfg.train,
            derive_seed(self.cfg.master_seed, "train", node.cfg.id, node.round))
        node.marks["train"] = now
        node.switch(now, "testing")
        self.q.schedule(now + node.test_time, ("test", node.cfg.id))

    def _on_test(self, now: float, node: _NodeRT) -> None:
        node.marks["test"] = now
        if self.bootstrap_pending and node.cfg.id == self.server_id:
            node.switch(now, "communication")
            self.q.schedule(now + self._upload_duration(node),
                            ("boot_up", node.cfg.id, node.params.copy()))
            return
        if self.strategy.kind is StrategyKind.LOCAL_ONLY:
            self._finish_round(node, now, now, now)
            return
        if self.strategy.is_synchronous or node.cfg.id != self._aggregator():
            params, digest = self._upload_payload(node)
            node.switch(now, "communication")
            self.q.schedule(now + self._upload_duration(node),
                            ("up", node.cfg.id, node.round, params, digest))
            return
        # the serving node keeps training instead of feeding itself models
        self._finish_round(node, now, now, now)

    def _on_boot_up(self, now: float, node: _NodeRT, params: ModelParams) -> None:
        self.global_params = params
        self.global_version = 1
        node.base_version = 1
        self.bootstrap_pending = False
        if self.chain is not None:
            digest = hash_model(params)
            self._pool_append(HashRecord(RecordKind.LOCAL, node.cfg.id, 0, digest), now)
            self._pool_append(HashRecord(RecordKind.GLOBAL, node.cfg.id, 0, digest), now)
            self._cut(now)  # the initial digests become the first block right away
        node.marks.setdefault("dl", node.marks["start"])
        self.round_logs.append(RoundLog(
            node.cfg.id, 0, node.marks["start"], node.marks["dl"],
            node.marks["train"], node.marks["test"], now, now))
        node.round = 1
        if self.strategy.is_synchronous:
            self._begin_sync_round(now)
            return
        for other in self.nodes:
            self.q.schedule(now, ("start", other.cfg.id))

    def _begin_sync_round(self, now: float) -> None:
        self.arrivals = []
        self.sync_started = now
        for node in self.nodes:
            self.q.schedule(now, ("start", node.cfg.id))

    def _on_up(self, now: float, node: _NodeRT, rnd: int, params: ModelParams,
               digest: bytes) -> None:
        node.marks["up"] = now
        if self.chain is not None:
            self._pool_append(HashRecord(RecordKind.LOCAL, node.cfg.id, rnd, digest),
                              now)
        node.switch(now, "waiting")
        if self.strategy.is_synchronous:
            self.arrivals.append((now, node.cfg.id, params, digest))
            if len(self.arrivals) == len(self.nodes):
                dur = 0.0
                if self.chain is not None:
                    dur = self._service_extras(self.by_id[self._aggregator()])
                self.q.schedule(now + dur, ("sync_done",))
            return
        self.svc.append((now, node.cfg.id, rnd, params, digest))
        if not self.svc_busy:
            self.svc_busy = True
            self.q.schedule(now, ("svc",))

    def _on_svc(self, now: float) -> None:
        arr_t, node_id, rnd, params, digest = self.svc.popleft()
        leader_id = self._aggregator()
        leader = self.by_id[leader_id]
        if self.chain is not None and node_id in self.chain.committee.blacklist:
            outcome = (StepVerdict.IGNORED, None, None, None, None)
        elif self.chain is not None and hash_model(params) != digest:
            self.chain.committee.blacklist.add(node_id)
            outcome = (StepVerdict.TAMPERED, None, None, None, None)
        else:
            outcome = _decide(self.global_params, leader.test_data,
                              self.strategy.service_epsilon,
                              self.cfg.attack.defense, params)
        verdict, _, acc_l, _, _ = outcome
        dur = 0.0
        if acc_l is not None:
            dur += 2.0 * leader.test_time  # incoming and current global, both re-tested
        if verdict is StepVerdict.ACCEPTED:
            dur += self._service_extras(leader)
        self.q.schedule(now + dur,
                        ("svc_done", (arr_t, node_id, rnd, digest), outcome, leader_id))

    def _on_svc_done(self, now: float, item, outcome, leader_id: int) -> None:
        arr_t, node_id, rnd, digest = item
        verdict, eps, acc_l, acc_g, new_global = outcome
        before = hash_model(self.global_params)
        if verdict is StepVerdict.ACCEPTED:
            self.global_params = new_global
            self.global_version += 1
            self.by_id[node_id].last_eps = eps
            if self.chain is not None:
                self._pool_append(HashRecord(RecordKind.GLOBAL, leader_id,
                                             self.agg_counter,
                                             hash_model(new_global)), now)
                self.agg_counter += 1
        self.decisions.append(DecisionLog(
            now, node_id, rnd, verdict, eps, acc_l, acc_g, digest, before,
            hash_model(self.global_params)))
        self._finish_round(self.by_id[node_id], now, arr_t, now)
        if self.svc:
            self.q.schedule(now, ("svc",))
        else:
            self.svc_busy = False

    def _on_sync_done(self, now: float) -> None:
        models = [params for _, _, params, _ in self.arrivals]
        sizes = [self.by_id[i].train_data.n for _, i, _, _ in self.arrivals]
        self.global_params = synchronous_round(self.strategy, self.global_params,
                                               models, sizes)
        self.global_version += 1
        if self.chain is not None:
            leader_id = self._aggregator()
            self._pool_append(HashRecord(RecordKind.GLOBAL, leader_id,
                                         self.agg_counter,
                                         hash_model(self.global_params)), now)
            self.agg_counter += 1
            for n in self.nodes:
                n.last_eps = 1.0
        fired = self.arrivals[-1][0]
        self.sync_rounds.append(SyncRoundLog(
            self.sync_index, self.sync_started,
            tuple((i, t) for t, i, _, _ in self.arrivals), fired, now))
        self.sync_index += 1
        for n in self.nodes:
            n.round += 1
        self._begin_sync_round(now)

    def _on_sample(self, now: float) -> None:
        accs = tuple(evaluate_accuracy(n.params, n.test_data) for n in self.nodes)
        local_model = self.strategy.kind is StrategyKind.LOCAL_ONLY
        losses = [local_loss(n.params if local_model else self.global_params,
                             n.train_data) for n in self.nodes]
        objective = global_objective([n.last_eps for n in self.nodes], losses,
                                     len(self.nodes))
        sums = dict.fromkeys(STAGES, 0.0)
        for n in self.nodes:
            for stage, sec in n.totals_at(now).items():
                sums[stage] += sec
        if self.chain is not None:
            leader = self.chain.committee.leader
            leader = -1 if leader is None else leader
            blocks = len(self.chain)
        else:
            leader = self.server_id if self.strategy.kind is not \
                StrategyKind.LOCAL_ONLY else -1
            blocks = 0
        self.rows.append(MetricsRow(
            now, average_test_accuracy(accs), objective, sums["training"],
            sums["testing"], sums["communication"], sums["waiting"], blocks, leader))
        self.node_accuracies.append(accs)

    # ------------------------------------------------------------------ loop

    def run(self) -> RunResult:
        i = 0
        while True:
            t = i * self.cfg.metrics_interval_s
            if t > self.cfg.duration_s + 1e-9:
                break
            self.q.schedule(min(t, self.cfg.duration_s), ("sample",))
            i += 1
        if self.strategy.kind in (StrategyKind.LOCAL_ONLY, StrategyKind.FEDAVG):
            for node in self.nodes:
                node.switch(0.0, "waiting")
                self.q.schedule(0.0, ("start", node.cfg.id))
        else:
            self.q.schedule(0.0, ("start", self.server_id))
        while True:
            item = self.q.pop()
            if item is None or item[0] > self.cfg.duration_s:
                break
            now, event = item
            kind = event[0]
            if kind == "sample":
                self._on_sample(now)
            elif kind == "start":
                self._on_start(now, self.by_id[event[1]])
            elif kind == "dl":
                self._on_dl(now, self.by_id[event[1]], event[2], event[3])
            elif kind == "train":
                self._on_train(now, self.by_id[event[1]])
            elif kind == "test":
                self._on_test(now, self.by_id[event[1]])
            elif kind == "boot_up":
                self._on_boot_up(now, self.by_id[event[1]], event[2])
            elif kind == "up":
                self._on_up(now, self.by_id[event[1]], event[2], event[3], event[4])
            elif kind == "svc":
                self._on_svc(now)
            elif kind == "svc_done":
                self._on_svc_done(now, event[1], event[2], event[3])
            elif kind == "sync_done":
                self._on_sync_done(now)
            elif kind == "cut":
                if self.pool and self.pool_epoch == event[1]:
                    self._cut(now)
        for node in self.nodes:
            node.switch(self.cfg.duration_s, node.stage)
        if self.chain is not None and self.pool:
            self._cut(self.cfg.duration_s)  # orderly shutdown seals the tail block
        return RunResult(
            config=self.cfg, rows=self.rows, node_accuracies=self.node_accuracies,
            chain=self.chain,
            stage_totals={n.cfg.id: dict(n.committed) for n in self.nodes},
            decisions=self.decisions, round_logs=self.round_logs,
            sync_rounds=self.sync_rounds)


def run_scenario(cfg: ScenarioConfig) -> RunResult:
    """Execute one scenario to its horizon; deterministic given the config."""
    return _Simulation(cfg).run()
