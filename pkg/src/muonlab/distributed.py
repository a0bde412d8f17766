"""In-process simulation of ZeRO-1 data parallelism for Muon and AdamW.

Each parameter is flattened row-major, zero-padded at the tail to a multiple of
``dp_size`` and split into ``dp_size`` contiguous chunks of ``ceil(n / dp_size)``
elements. Rank r owns chunk r of every parameter's optimizer state and master
weight. The padding sits on the last rank unless it is longer than a chunk
(fewer elements than ranks, say); then the trailing ranks hold padding only.

Rank-local work may run in any order (``rank_order``); collectives fix the
reduction order, so results do not depend on it.

Distributed Muon, per parameter and step:

    1. reduce_scatter the per-rank gradients (summed in rank order 0..dp−1)
    2. momentum update on the local shard (Nesterov combination included)
    3. gather the processed shards into the full matrix
    4. every rank orthogonalizes and scales the full matrix
    5. each rank keeps only its own partition of the update
    6. decoupled update of the local master shard
    7. all_gather the updated shards into the replicated weight

Collectives append to a byte ledger of exact rationals. Arithmetic is float64
throughout; the wire widths only feed the ledger.
"""

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from fractions import Fraction
from typing import Literal, Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from muonlab.errors import (
    EmptyLedgerError,
    MissingGradientError,
    MissingShardError,
    ShapeMismatchError,
)
from muonlab.matrix import Matrix, as_matrix, freeze, frobenius_norm, rms
from muonlab.optimizers import (
    AdamWConfig,
    MuonConfig,
    ParamState,
    adamw_moments,
    decoupled_update,
    momentum_direction,
    muon_step,
    scale,
)
from muonlab.orthogonalizer import Orthogonalizer, newton_schulz

logger = logging.getLogger(__name__)

WorldOptimizer = Literal["muon", "adamw"]


class CollectiveKind(StrEnum):
    REDUCE_SCATTER = "reduce_scatter"
    GATHER = "gather"
    ALL_GATHER = "all_gather"


class WireWidths(BaseModel):
    """Bytes per element on the wire for each collective."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    grad_width: int = Field(default=4, gt=0)  # fp32 gradient reduce-scatter
    gather_width: int = Field(default=2, ge=0)  # bf16 Muon gather; 0 models a free gather
    param_width: int = Field(default=4, gt=0)  # fp32 parameter all-gather


@dataclass(frozen=True)
class ShardSlot:
    offset: int  # first flat index owned by the rank
    length: int  # owned elements that are real (not padding)
    chunk: int  # padded shard size, identical on every rank


@dataclass
class RankStore:
    """Optimizer state and master weights held by one rank, as padded flat shards."""

    rank: int
    master: dict[str, np.ndarray] = field(default_factory=dict)
    momentum: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)

    def state_elements(self) -> int:
        buffers = (self.momentum, self.exp_avg, self.exp_avg_sq)
        return sum(shard.size for store in buffers for shard in store.values())


@dataclass
class DpWorld:
    """A simulated data-parallel group. Steps mutate it in place."""

    dp_size: int
    optimizer: WorldOptimizer
    widths: WireWidths
    shapes: dict[str, tuple[int, int]]
    ranks: list[RankStore]
    weights: dict[str, Matrix]
    ledger: dict[CollectiveKind, Fraction] = field(
        default_factory=lambda: {kind: Fraction(0) for kind in CollectiveKind}
    )
    steps: int = 0

    @classmethod
    def create(
        cls,
        params: Mapping[str, Matrix],
        dp_size: int,
        *,
        optimizer: WorldOptimizer = "muon",
        widths: WireWidths | None = None,
    ) -> Self:
        if dp_size < 1:
            raise ValueError(f"dp_size must be positive, got {dp_size}")
        world = cls(
            dp_size=dp_size,
            optimizer=optimizer,
            widths=widths or WireWidths(),
            shapes={},
            ranks=[RankStore(rank=r) for r in range(dp_size)],
            weights={},
        )
        for name, value in params.items():
            weight = as_matrix(value, where=name)
            world.shapes[name] = weight.shape
            world.weights[name] = weight
            master = world._partition(name, weight)
            for store, shard in zip(world.ranks, master, strict=True):
                store.master[name] = shard
                zero = np.zeros_like(shard)
                if optimizer == "muon":
                    store.momentum[name] = zero
                else:
                    store.exp_avg[name] = zero
                    store.exp_avg_sq[name] = zero.copy()
        return world

    def numel(self, name: str) -> int:
        rows, cols = self.shapes[name]
        return rows * cols

    def shard_map(self, name: str) -> list[ShardSlot]:
        """Equal padded chunks; ``length`` counts the real elements, possibly 0."""
        n = self.numel(name)
        chunk = math.ceil(n / self.dp_size)
        return [
            ShardSlot(offset=r * chunk, length=max(0, min(chunk, n - r * chunk)), chunk=chunk)
            for r in range(self.dp_size)
        ]

    def _partition(self, name: str, full: np.ndarray) -> list[np.ndarray]:
        slots = self.shard_map(name)
        chunk = slots[0].chunk
        padded = np.zeros(chunk * self.dp_size)
        padded[: self.numel(name)] = np.asarray(full).ravel()
        return [padded[s.offset : s.offset + chunk].copy() for s in slots]

    def _assemble(self, name: str, shards: Sequence[np.ndarray | None]) -> Matrix:
        for rank, shard in enumerate(shards):
            if shard is None:
                raise MissingShardError(name, rank)
        flat = np.concatenate(shards)[: self.numel(name)]
        return freeze(flat.reshape(self.shapes[name]))

    def ledger_total(self) -> Fraction:
        return sum(self.ledger.values(), Fraction(0))

    def schedule(self, rank_order: Sequence[int] | None) -> list[int]:
        if rank_order is None:
            return list(range(self.dp_size))
        order = [int(r) for r in rank_order]
        if sorted(order) != list(range(self.dp_size)):
            raise ValueError(f"rank_order {order} is not a permutation of 0..{self.dp_size - 1}")
        return order


# --- Collectives -----------------------------------------------------------------


def reduce_scatter(
    per_rank_full: Sequence[Matrix], world: DpWorld, param: str
) -> list[np.ndarray]:
    shape = world.shapes[param]
    if len(per_rank_full) != world.dp_size:
        raise ShapeMismatchError(
            f"reduce_scatter of {param}: rank count", (world.dp_size,), (len(per_rank_full),)
        )
    for grad in per_rank_full:
        if np.shape(grad) != shape:
            raise ShapeMismatchError(f"reduce_scatter of {param}", shape, np.shape(grad))

    total = np.array(per_rank_full[0], dtype=np.float64, copy=True)
    for grad in per_rank_full[1:]:
        total += grad
    world.ledger[CollectiveKind.REDUCE_SCATTER] += world.numel(param) * world.widths.grad_width
    return world._partition(param, total)


def gather(shards: Sequence[np.ndarray | None], world: DpWorld, param: str) -> Matrix:
    full = world._assemble(param, shards)
    # Each rank already holds 1/dp of the matrix and receives the rest.
    received = Fraction(world.numel(param) * (world.dp_size - 1), world.dp_size)
    world.ledger[CollectiveKind.GATHER] += received * world.widths.gather_width
    return full


def all_gather(shards: Sequence[np.ndarray | None], world: DpWorld, param: str) -> list[Matrix]:
    full = world._assemble(param, shards)
    world.ledger[CollectiveKind.ALL_GATHER] += world.numel(param) * world.widths.param_width
    return [full] * world.dp_size


# --- Steps -----------------------------------------------------------------------


@dataclass(frozen=True)
class DistUpdateStats:
    name: str
    update_rms: float  # RMS of the full scaled update every rank computed
    local_rms: tuple[float, ...]  # RMS of each rank's kept partition (padding excluded)


def _grads_for(per_rank_grads: Mapping[str, Sequence[Matrix]], name: str) -> Sequence[Matrix]:
    grads = per_rank_grads.get(name)
    if grads is None:
        raise MissingGradientError(name)
    return grads


def _local_rms(shard: np.ndarray, slot: ShardSlot) -> float:
    if slot.length == 0:
        return 0.0
    live = shard[: slot.length]
    return frobenius_norm(live.reshape(1, -1)) / math.sqrt(slot.length)


def distributed_muon_step(
    world: DpWorld,
    per_rank_grads: Mapping[str, Sequence[Matrix]],
    cfg: MuonConfig,
    step_lr: float,
    *,
    orthogonalize: Orthogonalizer = newton_schulz,
    rank_order: Sequence[int] | None = None,
) -> dict[str, DistUpdateStats]:
    if world.optimizer != "muon":
        raise ValueError(f"world was built for {world.optimizer}, not muon")
    order = world.schedule(rank_order)
    stats: dict[str, DistUpdateStats] = {}
    for name, shape in world.shapes.items():
        grad_shards = reduce_scatter(_grads_for(per_rank_grads, name), world, name)

        processed: list[np.ndarray | None] = [None] * world.dp_size
        for r in order:
            store = world.ranks[r]
            store.momentum[name], processed[r] = momentum_direction(
                store.momentum[name], grad_shards[r], cfg
            )
        full = gather(processed, world, name)

        slots = world.shard_map(name)
        new_master: list[np.ndarray | None] = [None] * world.dp_size
        local_rms = [0.0] * world.dp_size
        update_rms = 0.0
        for r in order:
            store, slot = world.ranks[r], slots[r]
            update = scale(orthogonalize(full, cfg.ns), shape, cfg.scaling)
            update_rms = rms(update)
            padded = np.zeros(slot.chunk * world.dp_size)
            padded[: world.numel(name)] = update.ravel()
            local = padded[slot.offset : slot.offset + slot.chunk]
            store.master[name] = decoupled_update(
                store.master[name], local, step_lr, cfg.weight_decay
            )
            new_master[r] = store.master[name]
            local_rms[r] = _local_rms(local, slot)

        world.weights[name] = all_gather(new_master, world, name)[0]
        stats[name] = DistUpdateStats(name, update_rms, tuple(local_rms))
    world.steps += 1
    logger.debug("muon world dp=%d step %d, ledger %s bytes", world.dp_size, world.steps,
                 world.ledger_total())
    return stats


def distributed_adamw_step(
    world: DpWorld,
    per_rank_grads: Mapping[str, Sequence[Matrix]],
    cfg: AdamWConfig,
    step_lr: float,
    *,
    rank_order: Sequence[int] | None = None,
) -> None:
    """ZeRO-1 AdamW: element-wise on shards, so no gather is needed."""
    if world.optimizer != "adamw":
        raise ValueError(f"world was built for {world.optimizer}, not adamw")
    order = world.schedule(rank_order)
    step = world.steps + 1
    for name in world.shapes:
        grad_shards = reduce_scatter(_grads_for(per_rank_grads, name), world, name)
        new_master: list[np.ndarray | None] = [None] * world.dp_size
        for r in order:
            store = world.ranks[r]
            m, v, update = adamw_moments(
                store.exp_avg[name], store.exp_avg_sq[name], grad_shards[r], step, cfg
            )
            store.exp_avg[name], store.exp_avg_sq[name] = m, v
            store.master[name] = decoupled_update(
                store.master[name], update, step_lr, cfg.weight_decay
            )
            new_master[r] = store.master[name]
        world.weights[name] = all_gather(new_master, world, name)[0]
    world.steps = step
    logger.debug("adamw world dp=%d step %d, ledger %s bytes", world.dp_size, world.steps,
                 world.ledger_total())


# --- Accounting ------------------------------------------------------------------


def communication_ratio(world_muon: DpWorld, world_adamw: DpWorld) -> Fraction:
    """Total Muon bytes over total AdamW bytes, as an exact rational."""
    muon_bytes = world_muon.ledger_total()
    adamw_bytes = world_adamw.ledger_total()
    if muon_bytes == 0:
        raise EmptyLedgerError("muon")
    if adamw_bytes == 0:
        raise EmptyLedgerError("adamw")
    return muon_bytes / adamw_bytes


def modelled_ratio(dp_size: int, widths: WireWidths | None = None) -> Fraction:
    """Closed-form ledger ratio for any dp, without materialising a world."""
    w = widths or WireWidths()
    gather_bytes = Fraction(w.gather_width * (dp_size - 1), dp_size)
    return (w.grad_width + gather_bytes + w.param_width) / (w.grad_width + w.param_width)


def optimizer_state_elements(world: DpWorld) -> int:
    """Optimizer-state elements held across all ranks (padding included)."""
    return sum(store.state_elements() for store in world.ranks)


# --- Equivalence check -------------------------------------------------------------


@dataclass(frozen=True)
class DistCheckReport:
    dp_size: int
    shape: tuple[int, int]
    steps: int
    max_deviation: float  # max over steps of ‖W_dist − W_ref‖_F / ‖W_ref‖_F
    comm_ratio: Fraction
    memory_ratio: Fraction  # Muon state elements / AdamW state elements
    update_rms: list[float]

    def to_dict(self) -> dict:
        return {
            "dp": self.dp_size,
            "shape": list(self.shape),
            "steps": self.steps,
            "max_deviation": self.max_deviation,
            "comm_ratio": float(self.comm_ratio),
            "memory_ratio": float(self.memory_ratio),
            "update_rms": self.update_rms,
        }


def equivalence_check(
    dp_size: int,
    shape: tuple[int, int],
    steps: int,
    seed: int,
    muon_cfg: MuonConfig,
    adamw_cfg: AdamWConfig | None = None,
) -> DistCheckReport:
    """Drive a Muon world, an AdamW world and a single-device Muon on the same gradients."""
    rng = np.random.default_rng(seed)
    rows, cols = shape
    weight = as_matrix(rng.standard_normal(shape) / math.sqrt(cols), where="weight")
    name = "weight"
    adamw_cfg = adamw_cfg or AdamWConfig(lr=muon_cfg.lr, weight_decay=muon_cfg.weight_decay)

    muon_world = DpWorld.create({name: weight}, dp_size)
    adamw_world = DpWorld.create({name: weight}, dp_size, optimizer="adamw")
    reference = ParamState.create(name, weight)

    max_deviation = 0.0
    update_rms: list[float] = []
    for _ in range(steps):
        grads = [freeze(rng.standard_normal(shape)) for _ in range(dp_size)]
        summed = np.array(grads[0], copy=True)
        for g in grads[1:]:
            summed += g
        reference, _ = muon_step(reference, summed, muon_cfg, muon_cfg.lr)
        stats = distributed_muon_step(muon_world, {name: grads}, muon_cfg, muon_cfg.lr)
        distributed_adamw_step(adamw_world, {name: grads}, adamw_cfg, adamw_cfg.lr)

        diff = frobenius_norm(muon_world.weights[name] - reference.weight)
        max_deviation = max(max_deviation, diff / frobenius_norm(reference.weight))
        update_rms.append(stats[name].update_rms)

    return DistCheckReport(
        dp_size=dp_size,
        shape=(rows, cols),
        steps=steps,
        max_deviation=max_deviation,
        comm_ratio=communication_ratio(muon_world, adamw_world),
        memory_ratio=Fraction(
            optimizer_state_elements(muon_world), optimizer_state_elements(adamw_world)
        ),
        update_rms=update_rms,
    )
