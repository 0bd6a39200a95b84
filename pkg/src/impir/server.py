"""One PIR database server: per-query pipeline and the batch engine.

A query is one DPF key. The host evaluates the key over the full domain,
scatters the resulting share bits across a DPU cluster, runs the XOR scan
there, gathers per-DPU subresults and folds them into the server's answer.

Batches run through a bounded task queue: ``dpf_workers`` threads evaluate
keys and enqueue the share vectors, and one scheduler thread per cluster pops
tasks and drives the scan on its own cluster. A cluster serves one query's
scan at a time; results are reordered by query id before they are returned.
"""

from __future__ import annotations

import queue
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass

from impir import dpf, pimsim
from impir.database import Database, Subresult
from impir.dpf import DpfKey, ShareVector
from impir.errors import CapacityError, ConfigurationError, DomainError, ProtocolError
from impir.pimsim import Cluster, CostReport, PimTopology

MODES = ("single", "multi")


@dataclass(frozen=True)
class ServerConfig:
    topology: PimTopology
    eval_workers: int = 1
    dpf_workers: int = 1
    dpu_bw_mbps: float = pimsim.DEFAULT_DPU_BW_MBPS
    copy_bw_mbps: float = pimsim.DEFAULT_COPY_BW_MBPS

    def __post_init__(self) -> None:
        if self.eval_workers < 1 or self.eval_workers & (self.eval_workers - 1):
            raise ConfigurationError("eval_workers must be a power of two")
        if self.dpf_workers < 1:
            raise ConfigurationError("dpf_workers must be at least 1")


@dataclass(frozen=True)
class QueryTask:
    """A fully evaluated query waiting for a free cluster."""

    query_id: int
    shares: ShareVector


@dataclass(frozen=True)
class QueryTiming:
    """Measured wall times (seconds) and byte counts for one query."""

    query_id: int
    measured: dict[str, float]
    bytes_moved: dict[str, int]

    def measured_report(self) -> CostReport:
        rows = tuple(
            pimsim.PhaseCost(
                phase,
                self.measured.get(phase, 0.0),
                self.bytes_moved.get(phase, 0),
            )
            for phase in pimsim.PHASES
        )
        return CostReport(rows, assumptions={"source": "wall-clock"})

    def analytic_report(
        self,
        topology: PimTopology,
        db_shape: tuple[int, int],
        *,
        dpu_bw_mbps: float = pimsim.DEFAULT_DPU_BW_MBPS,
        copy_bw_mbps: float = pimsim.DEFAULT_COPY_BW_MBPS,
    ) -> CostReport:
        """Measured host phases + analytic transfer/scan at the configured rates."""
        host = {
            "dpf_eval": self.measured.get("dpf_eval", 0.0),
            "aggregation": self.measured.get("aggregation", 0.0),
        }
        return pimsim.estimate_cost(
            topology, db_shape, host, dpu_bw_mbps=dpu_bw_mbps, copy_bw_mbps=copy_bw_mbps
        )


def aggregate(subresults: list[Subresult]) -> Subresult:
    """Order-independent XOR fold of per-DPU subresults."""
    if not subresults:
        raise DomainError("cannot aggregate an empty subresult list")
    length = len(subresults[0].value)
    acc = bytearray(length)
    for sub in subresults:
        if len(sub.value) != length:
            raise DomainError("subresults have mixed lengths")
        for i, b in enumerate(sub.value):
            acc[i] ^= b
    return Subresult(bytes(acc))


class _EngineStats:
    """Counters for the scheduler-safety checks."""

    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.submitted = 0
        self.completed = 0
        self.cluster_busy_violations = 0

    def snapshot(self) -> dict[str, int]:
        with self.lock:
            return {
                "submitted": self.submitted,
                "completed": self.completed,
                "cluster_busy_violations": self.cluster_busy_violations,
            }


class _BatchEngine:
    """dpf_workers eval threads -> bounded task queue -> one scheduler per cluster."""

    _EVAL_DONE = object()
    _SCHED_DONE = object()

    def __init__(self, server: PirServer, clusters: list[Cluster], dpf_workers: int):
        self.server = server
        self.clusters = clusters
        self.in_queue: queue.Queue = queue.Queue()
        self.task_queue: queue.Queue = queue.Queue(maxsize=2 * len(clusters))
        self.futures: dict[int, Future] = {}
        self.stats = _EngineStats()
        self._futures_lock = threading.Lock()
        self._eval_threads = [
            threading.Thread(target=self._eval_loop, daemon=True, name=f"impir-eval-{i}")
            for i in range(dpf_workers)
        ]
        self._sched_threads = [
            threading.Thread(
                target=self._sched_loop, args=(cluster,), daemon=True, name=f"impir-sched-{i}"
            )
            for i, cluster in enumerate(clusters)
        ]
        for t in self._eval_threads + self._sched_threads:
            t.start()

    def submit(self, query_id: int, key: DpfKey) -> Future:
        fut: Future = Future()
        with self._futures_lock:
            self.futures[query_id] = fut
        with self.stats.lock:
            self.stats.submitted += 1
        self.in_queue.put((query_id, key))
        return fut

    def _future(self, query_id: int) -> Future:
        with self._futures_lock:
            return self.futures[query_id]

    def _eval_loop(self) -> None:
        while True:
            item = self.in_queue.get()
            if item is self._EVAL_DONE:
                self.in_queue.put(self._EVAL_DONE)
                return
            query_id, key = item
            try:
                t0 = time.perf_counter()
                shares = self.server.evaluate_key(key)
                self.server._record(query_id, "dpf_eval", time.perf_counter() - t0)
            except Exception as exc:
                self._future(query_id).set_exception(exc)
                with self.stats.lock:
                    self.stats.completed += 1
                continue
            self.task_queue.put(QueryTask(query_id, shares))

    def _sched_loop(self, cluster: Cluster) -> None:
        while True:
            task = self.task_queue.get()
            if task is self._SCHED_DONE:
                return
            locked = cluster.lock.acquire(blocking=False)
            if not locked:
                with self.stats.lock:
                    self.stats.cluster_busy_violations += 1
                cluster.lock.acquire()
            try:
                result = self.server._scan_on_cluster(cluster, task.shares, task.query_id)
                self._future(task.query_id).set_result(result)
            except Exception as exc:
                self._future(task.query_id).set_exception(exc)
            finally:
                cluster.lock.release()
                with self.stats.lock:
                    self.stats.completed += 1

    def close(self) -> None:
        self.in_queue.put(self._EVAL_DONE)
        for t in self._eval_threads:
            t.join()
        for _ in self.clusters:
            self.task_queue.put(self._SCHED_DONE)
        for t in self._sched_threads:
            t.join()


class PirServer:
    """Holds one replicated database and answers DPF-key queries."""

    def __init__(self, db: Database, config: ServerConfig, host_workers: int | None = None):
        self.db = db
        self.config = config
        self.host_workers = host_workers
        self.domain = dpf.DomainParams.for_size(db.n_items)
        self._timings: dict[int, QueryTiming] = {}
        self._timings_lock = threading.Lock()
        self._next_id = 0
        self._id_lock = threading.Lock()
        self._clusters: dict[str, list[Cluster]] = {}
        self._engine: _BatchEngine | None = None
        self._engine_mode: str | None = None
        self.last_batch_stats: dict[str, int] = {}
        self.last_batch_query_ids: list[int] = []
        # The single-cluster layout always exists; handle_query runs on it.
        self._clusters["single"] = [self._make_cluster(config.topology.p_dpus, 0)]

    def _make_cluster(self, n_dpus: int, index: int) -> Cluster:
        cluster = Cluster(
            self.config.topology, n_dpus=n_dpus, cluster_index=index, host_workers=self.host_workers
        )
        cluster.preload(self.db)
        return cluster

    def clusters_for_mode(self, mode: str) -> list[Cluster]:
        """Cluster layout for a mode; multi-cluster preloads one full copy each."""
        if mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
        if mode not in self._clusters:
            topo = self.config.topology
            try:
                self._clusters["multi"] = [
                    self._make_cluster(topo.dpus_per_cluster, i) for i in range(topo.clusters)
                ]
            except CapacityError as exc:
                raise ConfigurationError(
                    f"a cluster of {topo.dpus_per_cluster} DPUs cannot hold the full "
                    f"database ({exc}); use single-cluster mode"
                ) from exc
        return self._clusters[mode]

    def new_query_id(self) -> int:
        with self._id_lock:
            qid = self._next_id
            self._next_id += 1
            return qid

    def _record(self, query_id: int, phase: str, seconds: float, nbytes: int | None = None) -> None:
        with self._timings_lock:
            timing = self._timings.get(query_id)
            if timing is None:
                timing = QueryTiming(query_id, {}, {})
                self._timings[query_id] = timing
            timing.measured[phase] = seconds
            if nbytes is not None:
                timing.bytes_moved[phase] = nbytes

    def evaluate_key(self, key: DpfKey) -> ShareVector:
        """Full-domain evaluation after checking the key against our database."""
        if key.domain.n_items != self.db.n_items:
            raise ProtocolError(
                f"key domain has {key.domain.n_items} items, database has {self.db.n_items}"
            )
        return dpf.eval_full(key, self.config.eval_workers)

    def _scan_on_cluster(self, cluster: Cluster, shares: ShareVector, query_id: int) -> Subresult:
        t0 = time.perf_counter()
        moved_in = cluster.scatter_shares(shares)
        t1 = time.perf_counter()
        cluster.dpu_execute()
        t2 = time.perf_counter()
        subs, moved_out = cluster.gather_subresults()
        t3 = time.perf_counter()
        result = aggregate(subs)
        t4 = time.perf_counter()
        self._record(query_id, "cpu_to_dpu_copy", t1 - t0, moved_in)
        self._record(query_id, "dpxor", t2 - t1, self.db.size_bytes)
        self._record(query_id, "dpu_to_cpu_copy", t3 - t2, moved_out)
        self._record(query_id, "aggregation", t4 - t3)
        return result

    def scan_shares(self, shares: ShareVector, query_id: int | None = None) -> Subresult:
        """Scatter/scan/gather/aggregate a share vector on the single cluster."""
        if query_id is None:
            query_id = self.new_query_id()
        cluster = self._clusters["single"][0]
        with cluster.lock:
            return self._scan_on_cluster(cluster, shares, query_id)

    def handle_query(self, key: DpfKey) -> Subresult:
        """Answer one query: evaluate, scan, aggregate."""
        query_id = self.new_query_id()
        t0 = time.perf_counter()
        shares = self.evaluate_key(key)
        self._record(query_id, "dpf_eval", time.perf_counter() - t0)
        return self.scan_shares(shares, query_id)

    def handle_query_timed(self, key: DpfKey) -> tuple[Subresult, int]:
        """handle_query plus the query id its timings were recorded under."""
        query_id = self.new_query_id()
        t0 = time.perf_counter()
        shares = self.evaluate_key(key)
        self._record(query_id, "dpf_eval", time.perf_counter() - t0)
        result = self.scan_shares(shares, query_id)
        return result, query_id

    def start_engine(self, mode: str = "single") -> None:
        """Start the persistent batch engine (used by the network front end)."""
        if self._engine is not None:
            raise ConfigurationError("engine already running")
        clusters = self.clusters_for_mode(mode)
        self._engine = _BatchEngine(self, clusters, self.config.dpf_workers)
        self._engine_mode = mode

    def stop_engine(self) -> None:
        if self._engine is not None:
            self._engine.close()
            self._engine = None
            self._engine_mode = None

    def submit(self, key: DpfKey, query_id: int | None = None) -> tuple[int, Future]:
        """Submit one query to the running engine; returns (query_id, future)."""
        if self._engine is None:
            raise ConfigurationError("engine not running; call start_engine first")
        if query_id is None:
            query_id = self.new_query_id()
        return query_id, self._engine.submit(query_id, key)

    def run_batch(self, keys: list[DpfKey], mode: str = "single") -> list[Subresult]:
        """Answer a batch; results are in input order regardless of completion order."""
        clusters = self.clusters_for_mode(mode)
        engine = _BatchEngine(self, clusters, self.config.dpf_workers)
        try:
            pairs = [(self.new_query_id(), key) for key in keys]
            futures = [engine.submit(qid, key) for qid, key in pairs]
            results = [f.result() for f in futures]
        finally:
            engine.close()
        self.last_batch_stats = engine.stats.snapshot()
        self.last_batch_query_ids = [qid for qid, _ in pairs]
        return results

    def phase_timings(self, query_id: int) -> QueryTiming:
        """Measured wall-clock phases for a completed query (KeyError if unknown)."""
        with self._timings_lock:
            if query_id not in self._timings:
                raise KeyError(f"no timings recorded for query {query_id}")
            return self._timings[query_id]

    def analytic_report(self, query_id: int) -> CostReport:
        """Cost report at the configured bandwidth constants for one query."""
        timing = self.phase_timings(query_id)
        return timing.analytic_report(
            self.config.topology,
            (self.db.n_items, self.db.record_len),
            dpu_bw_mbps=self.config.dpu_bw_mbps,
            copy_bw_mbps=self.config.copy_bw_mbps,
        )
