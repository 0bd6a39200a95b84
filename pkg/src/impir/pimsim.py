"""Functional simulator of a DPU-based in-memory scan backend.

A cluster owns a set of simulated DPUs, each holding one contiguous database
block in its private MRAM (a zero-copy view into the host database, so a DPU
cannot read outside its block by construction). A query scatters the share
bits across the DPUs, runs a two-stage parallel XOR reduction on each (one
partial per tasklet, folded by a master tasklet), and gathers one subresult
per DPU.

Resource budgets are enforced before execution: MRAM residency per DPU and
the shared per-DPU scratchpad, modeled as ``tasklets * (record_len + 2 KiB
scan buffer)``. The cost model is analytic and descriptive; it combines
measured host phases with transfer/scan estimates at configured bandwidths.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from impir import _kernels
from impir.database import Database, Partition, Subresult, partition_plan
from impir.dpf import ShareVector
from impir.errors import CapacityError, ConfigurationError, StateError, WramBudgetError

MIB = 1 << 20
KIB = 1 << 10

DEFAULT_MRAM_BYTES = 64 * MIB
DEFAULT_WRAM_BYTES = 64 * KIB
MAX_TASKLETS = 24

# WRAM claimed per tasklet: its L-byte accumulator plus a fixed scan buffer.
TASKLET_SCAN_BUFFER = 2 * KIB

# Bandwidth figures use the paper's binary convention: 1 MB/s = 2^20 bytes/s.
DEFAULT_DPU_BW_MBPS = 700.0
DEFAULT_COPY_BW_MBPS = 8192.0

PHASES = ("dpf_eval", "cpu_to_dpu_copy", "dpxor", "dpu_to_cpu_copy", "aggregation")


@dataclass(frozen=True)
class PimTopology:
    """Simulated PIM configuration: P DPUs split into equal clusters."""

    p_dpus: int
    tasklets: int = 16
    mram_bytes: int = DEFAULT_MRAM_BYTES
    wram_bytes: int = DEFAULT_WRAM_BYTES
    clusters: int = 1

    def __post_init__(self) -> None:
        if self.p_dpus < 1:
            raise ConfigurationError("need at least one DPU")
        if not 1 <= self.tasklets <= MAX_TASKLETS:
            raise ConfigurationError(f"tasklets must be in [1, {MAX_TASKLETS}]")
        if self.clusters < 1 or self.p_dpus % self.clusters:
            raise ConfigurationError(
                f"clusters {self.clusters} must evenly divide {self.p_dpus} DPUs"
            )

    @property
    def dpus_per_cluster(self) -> int:
        return self.p_dpus // self.clusters

    def wram_check(self, record_len: int) -> None:
        need = self.tasklets * (record_len + TASKLET_SCAN_BUFFER)
        if need > self.wram_bytes:
            raise WramBudgetError(
                f"{self.tasklets} tasklets with {record_len}-byte records need "
                f"{need} bytes of WRAM, budget is {self.wram_bytes}"
            )


@dataclass
class DpuState:
    """One simulated DPU: its partition, resident block and share chunk."""

    dpu_index: int
    partition: Partition
    db_block: memoryview
    share_chunk: bytes | None = None
    subresult: Subresult | None = None


def _slice_bits(bits: bytes, start: int, count: int) -> bytes:
    """Rebase ``count`` bits starting at ``start`` to bit 0 of a fresh buffer."""
    if count <= 0:
        return b""
    if start % 8 == 0:
        chunk = bytearray(bits[start // 8 : start // 8 + (count + 7) // 8])
        if count % 8:
            chunk[-1] &= (1 << (count % 8)) - 1
        return bytes(chunk)
    window = bits[start // 8 : (start + count + 7) // 8]
    val = int.from_bytes(window, "little") >> (start % 8)
    val &= (1 << count) - 1
    return val.to_bytes((count + 7) // 8, "little")


class Cluster:
    """A group of DPUs holding one full database copy, serving one query at a time."""

    def __init__(
        self,
        topology: PimTopology,
        n_dpus: int | None = None,
        cluster_index: int = 0,
        host_workers: int | None = None,
    ):
        self.topology = topology
        self.n_dpus = n_dpus if n_dpus is not None else topology.dpus_per_cluster
        self.cluster_index = cluster_index
        self.host_workers = host_workers if host_workers else (os.cpu_count() or 1)
        self.db: Database | None = None
        self.dpus: list[DpuState] = []
        self._executed = False
        # One query owns the cluster during its scan; the scheduler holds this.
        self.lock = threading.Lock()

    def preload(self, db: Database) -> None:
        """Pin each DPU's database block; excluded from per-query accounting."""
        topo = self.topology
        plan = partition_plan(db.n_items, self.n_dpus)
        view = memoryview(db.payload)
        dpus = []
        for part in plan:
            resident = (
                part.size * db.record_len
                + (part.size + 7) // 8
                + (topo.tasklets + 1) * db.record_len
            )
            if resident > topo.mram_bytes:
                raise CapacityError(
                    f"DPU {part.dpu_index} of cluster {self.cluster_index} needs "
                    f"{resident} bytes of MRAM for {part.size} records, "
                    f"budget is {topo.mram_bytes}"
                )
            block = view[part.dstart * db.record_len : (part.dend + 1) * db.record_len]
            dpus.append(DpuState(part.dpu_index, part, block))
        self.db = db
        self.dpus = dpus
        self._executed = False

    def scatter_shares(self, shares: ShareVector) -> int:
        """Hand each DPU the packed bits for its index range; returns bytes moved."""
        if self.db is None:
            raise StateError("cluster must be preloaded before scattering shares")
        if shares.domain.n_items != self.db.n_items:
            raise StateError(
                f"share vector covers {shares.domain.n_items} items, "
                f"database has {self.db.n_items}"
            )
        for dpu in self.dpus:
            dpu.share_chunk = _slice_bits(shares.bits, dpu.partition.dstart, dpu.partition.size)
            dpu.subresult = None
        self._executed = False
        return (self.db.n_items + 7) // 8

    def dpu_execute(self) -> list[Subresult]:
        """Two-stage parallel reduction on every DPU; one subresult per DPU."""
        if self.db is None:
            raise StateError("cluster must be preloaded before execution")
        if any(dpu.share_chunk is None for dpu in self.dpus):
            raise StateError("shares must be scattered before execution")
        topo = self.topology
        record_len = self.db.record_len
        topo.wram_check(record_len)

        def run_dpu(dpu: DpuState) -> Subresult:
            size = dpu.partition.size
            if size == 0:
                return Subresult.zero(record_len)
            per_tasklet = -(-size // topo.tasklets)
            partials = []
            for t in range(topo.tasklets):
                lo = min(t * per_tasklet, size)
                hi = min(lo + per_tasklet, size)
                acc = bytearray(record_len)
                _kernels.xor_scan(dpu.db_block, dpu.share_chunk, lo, hi, record_len, acc)
                partials.append(acc)
            master = bytearray(record_len)
            for partial in partials:
                for i, b in enumerate(partial):
                    master[i] ^= b
            return Subresult(bytes(master))

        if self.host_workers > 1 and len(self.dpus) > 1:
            with ThreadPoolExecutor(max_workers=self.host_workers) as pool:
                results = list(pool.map(run_dpu, self.dpus))
        else:
            results = [run_dpu(dpu) for dpu in self.dpus]
        for dpu, sub in zip(self.dpus, results):
            dpu.subresult = sub
        self._executed = True
        return results

    def gather_subresults(self) -> tuple[list[Subresult], int]:
        """Subresults in DPU order plus the bytes moved back to the host."""
        if not self._executed:
            raise StateError("nothing to gather: dpu_execute has not run")
        subs = [dpu.subresult for dpu in self.dpus]
        assert self.db is not None
        return subs, len(subs) * self.db.record_len


@dataclass(frozen=True)
class PhaseCost:
    phase: str
    duration_s: float
    bytes_moved: int


@dataclass(frozen=True)
class CostReport:
    """Descriptive per-phase latency breakdown; not a correctness claim."""

    phases: tuple[PhaseCost, ...]
    assumptions: dict = field(default_factory=dict)

    @property
    def total_s(self) -> float:
        return sum(p.duration_s for p in self.phases)

    def percent(self, phase: str) -> float:
        total = self.total_s
        if total <= 0.0:
            return 0.0
        return 100.0 * self.duration(phase) / total

    def duration(self, phase: str) -> float:
        for p in self.phases:
            if p.phase == phase:
                return p.duration_s
        raise KeyError(phase)

    def bytes_moved(self, phase: str) -> int:
        for p in self.phases:
            if p.phase == phase:
                return p.bytes_moved
        raise KeyError(phase)

    def to_csv(self) -> str:
        lines = [f"# {k}={v}" for k, v in sorted(self.assumptions.items())]
        lines.append("phase,duration_us,percent,bytes_moved")
        for p in self.phases:
            lines.append(
                f"{p.phase},{p.duration_s * 1e6:.3f},{self.percent(p.phase):.4f},{p.bytes_moved}"
            )
        return "\n".join(lines) + "\n"


def estimate_cost(
    topology: PimTopology,
    db_shape: tuple[int, int],
    measured_phase_times: dict[str, float],
    *,
    dpu_bw_mbps: float = DEFAULT_DPU_BW_MBPS,
    copy_bw_mbps: float = DEFAULT_COPY_BW_MBPS,
) -> CostReport:
    """Combine measured host phases with analytic transfer/scan estimates.

    Phases present in ``measured_phase_times`` use the measured wall time;
    the transfer and scan phases are otherwise estimated as bytes divided by
    the configured bandwidth (DPUs stream their MRAM blocks in parallel, so
    the scan estimate is the largest per-DPU block over the DPU bandwidth).
    """
    n_items, record_len = db_shape
    p_c = topology.dpus_per_cluster
    share_bytes = (n_items + 7) // 8
    block_records = -(-n_items // p_c)
    gather_bytes = p_c * record_len

    dpu_bw = dpu_bw_mbps * MIB
    copy_bw = copy_bw_mbps * MIB
    analytic = {
        "cpu_to_dpu_copy": share_bytes / copy_bw,
        "dpxor": block_records * record_len / dpu_bw,
        "dpu_to_cpu_copy": gather_bytes / copy_bw,
    }
    bytes_by_phase = {
        "cpu_to_dpu_copy": share_bytes,
        "dpxor": n_items * record_len,
        "dpu_to_cpu_copy": gather_bytes,
    }
    rows = []
    for phase in PHASES:
        if phase in measured_phase_times:
            duration = measured_phase_times[phase]
        else:
            duration = analytic.get(phase, 0.0)
        rows.append(PhaseCost(phase, duration, bytes_by_phase.get(phase, 0)))
    return CostReport(
        tuple(rows),
        assumptions={
            "dpu_bw_mbps": dpu_bw_mbps,
            "copy_bw_mbps": copy_bw_mbps,
            "copy_bw_note": "assumed, not a hardware measurement",
        },
    )
