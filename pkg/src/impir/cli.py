"""Operator entry points: database tooling, the server, the client, and the
benchmark harness. All benchmarks emit CSV and abort nonzero on any answer
that disagrees with the naive oracle."""

from __future__ import annotations

import sys
from hashlib import sha256

import click

from impir import bench, client, database, netproto, pimsim
from impir.bench import HarnessConfig
from impir.errors import ImpirError
from impir.server import PirServer, ServerConfig

SIZE_SUFFIXES = {
    "": 1,
    "b": 1,
    "kib": 1 << 10,
    "kb": 1 << 10,
    "mib": 1 << 20,
    "mb": 1 << 20,
    "gib": 1 << 30,
    "gb": 1 << 30,
}


def parse_size(text: str) -> int:
    """'64MiB' -> bytes; KB/MB/GB are binary, matching the rest of the artifact."""
    t = text.strip().lower()
    for suffix in sorted(SIZE_SUFFIXES, key=len, reverse=True):
        if suffix and t.endswith(suffix):
            return int(float(t[: -len(suffix)]) * SIZE_SUFFIXES[suffix])
    return int(t)


def parse_sizes(text: str) -> list[int]:
    return [parse_size(part) for part in text.split(",") if part.strip()]


def parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise click.BadParameter(f"expected host:port, got {text!r}")
    return host, int(port)


def seed_to_bytes32(hex_seed: str | None) -> bytes | None:
    if hex_seed is None:
        return None
    raw = bytes.fromhex(hex_seed)
    return raw if len(raw) == 32 else sha256(raw).digest()


def topology_options(fn):
    for option in reversed(
        [
            click.option("--dpus", default=2048, show_default=True, help="Simulated DPU count P."),
            click.option("--tasklets", default=16, show_default=True, help="Tasklets per DPU."),
            click.option("--clusters", default=1, show_default=True, help="DPU clusters."),
            click.option("--mram-mb", default=64, show_default=True, help="Per-DPU MRAM (MiB)."),
            click.option("--wram-kb", default=64, show_default=True, help="Per-DPU WRAM (KiB)."),
            click.option(
                "--dpu-bw-mbps",
                default=pimsim.DEFAULT_DPU_BW_MBPS,
                show_default=True,
                help="Per-DPU MRAM stream bandwidth (MiB/s) for the cost model.",
            ),
            click.option(
                "--copy-bw-mbps",
                default=pimsim.DEFAULT_COPY_BW_MBPS,
                show_default=True,
                help="Aggregate CPU<->DPU copy bandwidth (MiB/s); an assumption.",
            ),
        ]
    ):
        fn = option(fn)
    return fn


def harness_options(fn):
    for option in reversed(
        [
            click.option("--record-len", default=32, show_default=True),
            click.option("--eval-workers", default=1, show_default=True),
            click.option("--dpf-workers", default=1, show_default=True),
            click.option("--cpu-threads", default=1, show_default=True),
            click.option("--seed", default="0", show_default=True, help="Hex seed."),
            click.option("--csv-out", type=click.Path(), default=None, help="Write CSV here."),
        ]
    ):
        fn = option(fn)
    return fn


def _harness_config(kw) -> HarnessConfig:
    return HarnessConfig(
        record_len=kw["record_len"],
        batch=kw.get("batch", 32),
        p_dpus=kw["dpus"],
        tasklets=kw["tasklets"],
        clusters=kw["clusters"],
        mram_bytes=kw["mram_mb"] << 20,
        wram_bytes=kw["wram_kb"] << 10,
        eval_workers=kw["eval_workers"],
        dpf_workers=kw["dpf_workers"],
        cpu_threads=kw["cpu_threads"],
        dpu_bw_mbps=kw["dpu_bw_mbps"],
        copy_bw_mbps=kw["copy_bw_mbps"],
        seed=int(kw["seed"], 16),
    )


def _emit(text: str, csv_out: str | None) -> None:
    if csv_out:
        with open(csv_out, "w") as fh:
            fh.write(text)
        click.echo(f"wrote {csv_out}", err=True)
    else:
        click.echo(text, nl=False)


@click.group()
def main() -> None:
    """Two-server XOR PIR with a simulated in-memory scan backend."""


@main.command("db-gen")
@click.option("--n", "n_items", required=True, type=int, help="Number of records.")
@click.option("--record-len", default=32, show_default=True, help="Record width in bytes.")
@click.option("--seed", default="00", show_default=True, help="Hex seed.")
@click.option("--out", required=True, type=click.Path(), help="Output path.")
def db_gen(n_items: int, record_len: int, seed: str, out: str) -> None:
    """Generate a deterministic pseudorandom database file."""
    db = database.generate(n_items, record_len, bytes.fromhex(seed))
    database.save(db, out)
    click.echo(f"wrote {out}: {n_items} records x {record_len} B = {db.size_bytes} bytes")


@main.command()
@click.option("--db", "db_path", required=True, type=click.Path(exists=True))
@click.option("--listen", default="127.0.0.1:7201", show_default=True)
@click.option("--eval-workers", default=1, show_default=True)
@click.option("--dpf-workers", default=1, show_default=True)
@click.option("--mode", type=click.Choice(["single", "multi"]), default="single", show_default=True)
@click.option("--timings", "timings_out", type=click.Path(), default=None,
              help="Write per-query phase timings CSV on shutdown.")
@topology_options
def serve(db_path, listen, eval_workers, dpf_workers, mode, timings_out, **topo) -> None:
    """Serve one PIR database over TCP until interrupted."""
    db = database.load(db_path)
    topology = pimsim.PimTopology(
        topo["dpus"],
        tasklets=topo["tasklets"],
        mram_bytes=topo["mram_mb"] << 20,
        wram_bytes=topo["wram_kb"] << 10,
        clusters=topo["clusters"],
    )
    config = ServerConfig(
        topology=topology,
        eval_workers=eval_workers,
        dpf_workers=dpf_workers,
        dpu_bw_mbps=topo["dpu_bw_mbps"],
        copy_bw_mbps=topo["copy_bw_mbps"],
    )
    srv = PirServer(db, config)
    host, port = parse_endpoint(listen)
    endpoint = netproto.ServerEndpoint(srv, host, port, mode=mode)
    with endpoint:
        click.echo(
            f"serving {db.n_items} x {db.record_len} B on {endpoint.address[0]}:"
            f"{endpoint.address[1]} ({mode} mode, {topology.p_dpus} DPUs)",
            err=True,
        )
        try:
            import threading

            threading.Event().wait()
        except KeyboardInterrupt:
            pass
    if timings_out:
        lines = ["query_id,phase,duration_us,bytes_moved"]
        with srv._timings_lock:
            timings = dict(srv._timings)
        for qid, timing in sorted(timings.items()):
            for phase in pimsim.PHASES:
                if phase in timing.measured:
                    lines.append(
                        f"{qid},{phase},{timing.measured[phase] * 1e6:.3f},"
                        f"{timing.bytes_moved.get(phase, 0)}"
                    )
        with open(timings_out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        click.echo(f"wrote {timings_out}", err=True)


@main.command()
@click.option("--servers", required=True, help="host:port,host:port")
@click.option("--index", "indices", type=int, multiple=True, help="Record index; repeatable.")
@click.option("--batch-file", type=click.Path(exists=True), default=None,
              help="File with one record index per line.")
@click.option("--seed", default=None, help="Hex seed for deterministic keys.")
def query(servers, indices, batch_file, seed) -> None:
    """Fetch records from a two-server deployment; prints lowercase hex."""
    endpoints = [parse_endpoint(part) for part in servers.split(",")]
    if len(endpoints) != 2:
        raise click.BadParameter("exactly two servers are required")
    wanted = list(indices)
    if batch_file:
        with open(batch_file) as fh:
            wanted += [int(line) for line in fh if line.strip()]
    if not wanted:
        raise click.BadParameter("no indices given (use --index or --batch-file)")
    with client.PirClient((endpoints[0], endpoints[1])) as c:
        records = c.fetch_many(wanted, seed_to_bytes32(seed))
    for record in records:
        click.echo(record.hex())


@main.command("bench-dbsize")
@click.option("--sizes", default="64MiB,128MiB,256MiB", show_default=True,
              help="Comma-separated DB sizes.")
@click.option("--batch", default=32, show_default=True)
@click.option("--engines", default="pim-sim,cpu-naive", show_default=True)
@harness_options
@topology_options
def bench_dbsize_cmd(sizes, batch, engines, csv_out, **kw) -> None:
    """Throughput/latency across database sizes (Fig. 7a/c shape)."""
    cfg = _harness_config({**kw, "batch": batch})
    rows = bench.bench_dbsize(parse_sizes(sizes), cfg, tuple(engines.split(",")))
    _emit(bench.rows_to_csv(rows), csv_out)


@main.command("bench-batch")
@click.option("--batches", default="1,2,4,8,16,32", show_default=True)
@click.option("--db-size", default="1GiB", show_default=True)
@click.option("--engines", default="pim-sim,cpu-naive", show_default=True)
@harness_options
@topology_options
def bench_batch_cmd(batches, db_size, engines, csv_out, **kw) -> None:
    """Throughput/latency across batch sizes at a fixed DB size (Fig. 7b/d shape)."""
    cfg = _harness_config(kw)
    batch_sizes = [int(b) for b in batches.split(",")]
    rows = bench.bench_batch(batch_sizes, parse_size(db_size), cfg, tuple(engines.split(",")))
    _emit(bench.rows_to_csv(rows), csv_out)


@main.command("bench-clusters")
@click.option("--cluster-counts", default="1,2,4,8", show_default=True)
@click.option("--db-size", default="64MiB", show_default=True)
@click.option("--batch", default=32, show_default=True)
@harness_options
@topology_options
def bench_clusters_cmd(cluster_counts, db_size, batch, csv_out, **kw) -> None:
    """Throughput across DPU cluster counts (Fig. 10 shape)."""
    cfg = _harness_config({**kw, "batch": batch})
    counts = [int(c) for c in cluster_counts.split(",")]
    rows = bench.bench_clusters(counts, parse_size(db_size), cfg)
    _emit(bench.rows_to_csv(rows), csv_out)


@main.command()
@click.option("--db-size", default="1GiB", show_default=True)
@harness_options
@topology_options
def breakdown(db_size, csv_out, **kw) -> None:
    """Per-phase latency breakdown of one query under both engines (Table 1 shape)."""
    cfg = _harness_config(kw)
    n_items = max(2, parse_size(db_size) // cfg.record_len)
    db = database.generate(n_items, cfg.record_len, cfg.seed)
    reports = bench.breakdown(db, cfg)
    blocks = []
    for engine in ("cpu-naive", "pim-sim"):
        blocks.append(f"# engine={engine}\n" + reports[engine].to_csv())
    _emit("\n".join(blocks), csv_out)


@main.command("bench-backends")
@click.option("--leaves", default=1 << 16, show_default=True, help="GGM leaves to expand.")
@click.option("--scan-size", default="64MiB", show_default=True, help="Bytes to scan.")
@click.option("--csv-out", type=click.Path(), default=None)
def bench_backends_cmd(leaves, scan_size, csv_out) -> None:
    """Compare the compiled kernel backend against the pure-Python fallback."""
    rows = bench.bench_backends(leaves, parse_size(scan_size))
    columns = list(rows[0].keys())
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(f"{row[c]:.6g}" if isinstance(row[c], float) else str(row[c]) for c in columns))
    _emit("\n".join(lines) + "\n", csv_out)


def run() -> None:
    try:
        main(standalone_mode=True)
    except ImpirError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    run()
