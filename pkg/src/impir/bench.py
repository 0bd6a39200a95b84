"""Benchmark harness: query sweeps over database size, batch size and cluster
count, plus the per-phase latency breakdown.

Every benchmark validates every answer against the naive full-scan oracle
before reporting; a single wrong answer aborts the run. Throughput numbers
are descriptive for the host they ran on; answer bytes are deterministic for
a fixed seed.
"""

from __future__ import annotations

import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from hashlib import sha256

from impir import database, dpf, pimsim
from impir.database import Database
from impir.errors import ImpirError
from impir.pimsim import CostReport, PimTopology
from impir.server import PirServer, ServerConfig

ENGINES = ("pim-sim", "cpu-naive")

CSV_COLUMNS = (
    "engine",
    "db_bytes",
    "record_len",
    "batch",
    "clusters",
    "throughput_qps",
    "total_latency_s",
    "dpf_eval_s",
    "cpu_to_dpu_copy_s",
    "dpxor_s",
    "dpu_to_cpu_copy_s",
    "aggregation_s",
)


class ValidationFailure(ImpirError):
    """An engine produced an answer that disagrees with the naive oracle."""


@dataclass
class HarnessConfig:
    record_len: int = 32
    batch: int = 32
    p_dpus: int = 2048
    tasklets: int = 16
    clusters: int = 1
    mram_bytes: int = pimsim.DEFAULT_MRAM_BYTES
    wram_bytes: int = pimsim.DEFAULT_WRAM_BYTES
    eval_workers: int = 1
    dpf_workers: int = 1
    cpu_threads: int = 1
    dpu_bw_mbps: float = pimsim.DEFAULT_DPU_BW_MBPS
    copy_bw_mbps: float = pimsim.DEFAULT_COPY_BW_MBPS
    seed: int = 0

    def topology(self, clusters: int | None = None) -> PimTopology:
        return PimTopology(
            self.p_dpus,
            tasklets=self.tasklets,
            mram_bytes=self.mram_bytes,
            wram_bytes=self.wram_bytes,
            clusters=clusters if clusters is not None else self.clusters,
        )


@dataclass
class EngineRun:
    engine: str
    answers: list[bytes]
    total_s: float
    phase_means: dict[str, float] = field(default_factory=dict)


def _query_seed(seed: int, counter: int) -> bytes:
    return sha256(struct.pack("<QQ", seed & (2**64 - 1), counter)).digest()


def make_queries(db: Database, batch: int, seed: int) -> tuple[list[int], list[dpf.DpfKey]]:
    """Deterministic batch of server-1 keys for random indices."""
    domain = dpf.DomainParams.for_size(db.n_items)
    indices = []
    keys = []
    for counter in range(batch):
        digest = _query_seed(seed, counter)
        i = int.from_bytes(digest[:8], "little") % db.n_items
        k1, _ = dpf.gen(domain, dpf.PointFunction(i), _query_seed(seed, counter ^ (1 << 63)))
        indices.append(i)
        keys.append(k1)
    return indices, keys


def oracle_answers(db: Database, keys: list[dpf.DpfKey]) -> list[bytes]:
    """Naive single-threaded eval + scan, computed outside any timed region."""
    return [database.naive_scan(db, dpf.eval_full(key)).value for key in keys]


def _validate(engine: str, answers: list[bytes], oracle: list[bytes]) -> None:
    for i, (got, want) in enumerate(zip(answers, oracle)):
        if got != want:
            raise ValidationFailure(
                f"{engine} answer {i} disagrees with the naive oracle "
                f"({got[:8].hex()}... != {want[:8].hex()}...)"
            )


def run_cpu_naive(db: Database, keys: list[dpf.DpfKey], cfg: HarnessConfig) -> EngineRun:
    """CPU baseline: per query, full-domain eval then the single-threaded scan."""
    phases = {"dpf_eval": 0.0, "dpxor": 0.0}

    def one(key: dpf.DpfKey) -> tuple[bytes, float, float]:
        t0 = time.perf_counter()
        shares = dpf.eval_full(key, cfg.eval_workers)
        t1 = time.perf_counter()
        sub = database.naive_scan(db, shares)
        t2 = time.perf_counter()
        return sub.value, t1 - t0, t2 - t1

    t_start = time.perf_counter()
    if cfg.cpu_threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.cpu_threads) as pool:
            outcomes = list(pool.map(one, keys))
    else:
        outcomes = [one(key) for key in keys]
    total = time.perf_counter() - t_start

    answers = [value for value, _, _ in outcomes]
    if keys:
        phases["dpf_eval"] = sum(e for _, e, _ in outcomes) / len(keys)
        phases["dpxor"] = sum(s for _, _, s in outcomes) / len(keys)
    return EngineRun("cpu-naive", answers, total, phases)


def run_pim_sim(
    db: Database,
    keys: list[dpf.DpfKey],
    cfg: HarnessConfig,
    mode: str = "single",
    clusters: int | None = None,
) -> EngineRun:
    """Simulated PIM pipeline through the server batch engine."""
    topo = cfg.topology(clusters)
    config = ServerConfig(
        topology=topo,
        eval_workers=cfg.eval_workers,
        dpf_workers=cfg.dpf_workers,
        dpu_bw_mbps=cfg.dpu_bw_mbps,
        copy_bw_mbps=cfg.copy_bw_mbps,
    )
    srv = PirServer(db, config)
    srv.clusters_for_mode(mode)  # preload outside the timed region
    t_start = time.perf_counter()
    results = srv.run_batch(keys, mode)
    total = time.perf_counter() - t_start

    phases: dict[str, float] = {p: 0.0 for p in pimsim.PHASES}
    for qid in srv.last_batch_query_ids:
        timing = srv.phase_timings(qid)
        for p in pimsim.PHASES:
            phases[p] += timing.measured.get(p, 0.0)
    if keys:
        phases = {p: v / len(keys) for p, v in phases.items()}
    return EngineRun("pim-sim", [r.value for r in results], total, phases)


def _row(run: EngineRun, db: Database, batch: int, clusters: int) -> dict:
    return {
        "engine": run.engine,
        "db_bytes": db.size_bytes,
        "record_len": db.record_len,
        "batch": batch,
        "clusters": clusters,
        "throughput_qps": batch / run.total_s if run.total_s > 0 else 0.0,
        "total_latency_s": run.total_s,
        "dpf_eval_s": run.phase_means.get("dpf_eval", 0.0),
        "cpu_to_dpu_copy_s": run.phase_means.get("cpu_to_dpu_copy", 0.0),
        "dpxor_s": run.phase_means.get("dpxor", 0.0),
        "dpu_to_cpu_copy_s": run.phase_means.get("dpu_to_cpu_copy", 0.0),
        "aggregation_s": run.phase_means.get("aggregation", 0.0),
    }


def _run_engines(db: Database, cfg: HarnessConfig, engines: tuple[str, ...]) -> list[dict]:
    _, keys = make_queries(db, cfg.batch, cfg.seed)
    oracle = oracle_answers(db, keys)
    rows = []
    runs = []
    for engine in engines:
        if engine == "cpu-naive":
            run = run_cpu_naive(db, keys, cfg)
        elif engine == "pim-sim":
            mode = "single" if cfg.clusters == 1 else "multi"
            run = run_pim_sim(db, keys, cfg, mode=mode)
        else:
            raise ImpirError(f"unknown engine {engine!r}")
        _validate(engine, run.answers, oracle)
        runs.append(run)
        rows.append(_row(run, db, cfg.batch, cfg.clusters))
    for other in runs[1:]:
        if other.answers != runs[0].answers:
            raise ValidationFailure("engines disagree on answer bytes")
    return rows


def bench_dbsize(
    db_sizes: list[int], cfg: HarnessConfig, engines: tuple[str, ...] = ENGINES
) -> list[dict]:
    """Fixed batch across database sizes (bytes)."""
    rows = []
    for size in db_sizes:
        n_items = max(2, size // cfg.record_len)
        db = database.generate(n_items, cfg.record_len, cfg.seed)
        rows.extend(_run_engines(db, cfg, engines))
    return rows


def bench_batch(
    batch_sizes: list[int],
    db_size: int,
    cfg: HarnessConfig,
    engines: tuple[str, ...] = ENGINES,
) -> list[dict]:
    """Fixed database size across batch sizes."""
    n_items = max(2, db_size // cfg.record_len)
    db = database.generate(n_items, cfg.record_len, cfg.seed)
    rows = []
    for batch in batch_sizes:
        rows.extend(_run_engines(db, replace(cfg, batch=batch), engines))
    return rows


def bench_clusters(cluster_counts: list[int], db_size: int, cfg: HarnessConfig) -> list[dict]:
    """PIM engine sweep over cluster counts; answers must match across counts."""
    n_items = max(2, db_size // cfg.record_len)
    db = database.generate(n_items, cfg.record_len, cfg.seed)
    _, keys = make_queries(db, cfg.batch, cfg.seed)
    oracle = oracle_answers(db, keys)
    rows = []
    reference: list[bytes] | None = None
    for clusters in cluster_counts:
        if cfg.p_dpus % clusters:
            raise ImpirError(f"{clusters} clusters do not divide {cfg.p_dpus} DPUs")
        mode = "single" if clusters == 1 else "multi"
        run = run_pim_sim(db, keys, cfg, mode=mode, clusters=clusters)
        _validate(f"pim-sim[{clusters} clusters]", run.answers, oracle)
        if reference is None:
            reference = run.answers
        elif run.answers != reference:
            raise ValidationFailure("answers changed across cluster counts")
        row = _row(run, db, cfg.batch, clusters)
        rows.append(row)
    return rows


def breakdown(db: Database, cfg: HarnessConfig) -> dict[str, CostReport]:
    """One query's per-phase cost under both engines.

    The CPU report is pure wall-clock. The PIM report keeps the measured host
    phases and replaces transfers and the scan with analytic estimates at the
    configured bandwidth constants.
    """
    _, keys = make_queries(db, 1, cfg.seed)
    key = keys[0]
    oracle = oracle_answers(db, [key])[0]

    cpu_run = run_cpu_naive(db, [key], cfg)
    _validate("cpu-naive", cpu_run.answers, [oracle])
    cpu_rows = tuple(
        pimsim.PhaseCost(p, cpu_run.phase_means.get(p, 0.0), 0) for p in pimsim.PHASES
    )
    cpu_report = CostReport(cpu_rows, assumptions={"engine": "cpu-naive", "source": "wall-clock"})

    config = ServerConfig(
        topology=cfg.topology(),
        eval_workers=cfg.eval_workers,
        dpf_workers=cfg.dpf_workers,
        dpu_bw_mbps=cfg.dpu_bw_mbps,
        copy_bw_mbps=cfg.copy_bw_mbps,
    )
    srv = PirServer(db, config)
    result, qid = srv.handle_query_timed(key)
    _validate("pim-sim", [result.value], [oracle])
    pim_report = srv.analytic_report(qid)
    return {"cpu-naive": cpu_report, "pim-sim": pim_report}


def rows_to_csv(rows: list[dict]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(_format_cell(row[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def bench_backends(n_leaves: int = 1 << 16, scan_bytes: int = 64 << 20) -> list[dict]:
    """Compare the compiled and pure-Python kernel backends on the two hot loops."""
    import numpy as np

    backends = []
    try:
        from impir import _core

        backends.append(_core)
    except ImportError:
        pass
    from impir import _pykernels

    backends.append(_pykernels)

    depth = max(1, (n_leaves - 1).bit_length())
    cws = bytes(depth * 16)
    tcw = bytes(depth)
    record_len = 32
    n_items = max(8, scan_bytes // record_len)
    payload = np.random.default_rng(0).bytes(n_items * record_len)
    bits = np.random.default_rng(1).bytes((n_items + 7) // 8)

    rows = []
    for impl in backends:
        t0 = time.perf_counter()
        _, n_exp = impl.expand_subtree_bits(bytes(range(16)), 1, cws, tcw, tcw, 0, depth, 1)
        expand_s = time.perf_counter() - t0
        acc = bytearray(record_len)
        t0 = time.perf_counter()
        impl.xor_scan(payload, bits, 0, n_items, record_len, acc)
        scan_s = time.perf_counter() - t0
        rows.append(
            {
                "backend": impl.NAME,
                "expand_leaves": 1 << depth,
                "expand_s": expand_s,
                "expansions_per_s": n_exp / expand_s if expand_s > 0 else 0.0,
                "scan_bytes": n_items * record_len,
                "scan_s": scan_s,
                "scan_gib_per_s": n_items * record_len / scan_s / 2**30 if scan_s > 0 else 0.0,
            }
        )
    return rows
