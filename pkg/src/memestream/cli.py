"""Command-line entry points: seq, par, synth, nmi, bench.

Every command is deterministic given its flags, input digest, and seed (in
deterministic mode); a manifest written next to the outputs records enough
to reproduce the run. Exit codes: 0 success, 1 runtime/IO failure, 2 usage.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import click

from . import __version__
from .cluster import Params, run_sequential
from .evaluation import MetricsReport, bench_report, lfk_nmi, read_cover, write_cover
from .ingest import IngestError, StepStream, SynthConfig, read_tweets, serialize_tweet, synth_stream
from .parallel import (CLUSTER_DELTA, FULL_CENTROIDS, Bootstrap, EngineConfig,
                       EngineError, bootstrap_from_steps, load_bootstrap,
                       run_parallel, save_bootstrap)
from .serialize import canonical_json, write_snapshots
from .sparse import ConsistencyError
from .textproc import STOPWORDS

log = logging.getLogger("memestream")

_STRATEGY_FLAGS = {"cluster-delta": CLUSTER_DELTA, "full-centroids": FULL_CENTROIDS}


def _setup_logging() -> None:
    level = os.environ.get("MEMESTREAM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _dump_stopwords(ctx, param, value):
    if not value or ctx.resilient_parsing:
        return
    for word in sorted(STOPWORDS):
        click.echo(word)
    ctx.exit(0)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    data = p.read_bytes()
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # pragma: no cover - py3.10 fallback
            try:
                import tomli as tomllib
            except ModuleNotFoundError:
                raise click.UsageError(
                    "TOML config requires Python 3.11+ (or the tomli package); "
                    "use JSON instead")
        return tomllib.loads(data.decode("utf-8"))
    return json.loads(data)


def _pick(flag, config: dict, key: str, default):
    """Flag > config file > default."""
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _sha256_file(path) -> tuple[str, int]:
    h = hashlib.sha256()
    size = 0
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
            size += len(chunk)
    return h.hexdigest(), size


def _write_manifest(out_dir: Path, command: str, config: dict, input_path,
                    outputs: list[Path], counters: dict, timings: dict) -> Path:
    manifest = {
        "command": command,
        "code_version": __version__,
        "config": config,
        "counters": counters,
    }
    if input_path is not None:
        digest, size = _sha256_file(input_path)
        manifest["input"] = {"path": str(input_path), "sha256": digest,
                             "bytes": size}
    out_entries = {}
    for path in outputs:
        digest, size = _sha256_file(path)
        out_entries[path.name] = {"sha256": digest, "bytes": size}
    manifest["outputs"] = out_entries
    manifest["timings"] = timings  # wall-clock: excluded from reproducibility
    target = out_dir / "manifest.json"
    tmp = out_dir / ".manifest.json.tmp"
    tmp.write_text(canonical_json(manifest) + "\n", encoding="utf-8")
    os.replace(tmp, target)
    return target


class _Peekable:
    def __init__(self, it):
        self._it = iter(it)
        self._head = None
        self._has_head = False

    def peek(self):
        if not self._has_head:
            self._head = next(self._it)
            self._has_head = True
        return self._head

    def __iter__(self):
        while True:
            if self._has_head:
                self._has_head = False
                yield self._head
            else:
                try:
                    yield next(self._it)
                except StopIteration:
                    return


def _open_step_stream(input_path, step_len: int, slack: int,
                      window_start: int | None):
    tweets = _Peekable(read_tweets(input_path))
    try:
        first = tweets.peek()
    except StopIteration:
        raise click.ClickException(f"no tweets in {input_path}")
    if window_start is None:
        window_start = first.created_at
    return StepStream(tweets, step_len, window_start, slack=slack)


def _split_prefix(batches, n_steps: int):
    """Split a TimeStepBatch iterator into (first n steps, remainder)."""
    it = _Peekable(batches)

    def prefix_gen():
        while True:
            try:
                b = it.peek()
            except StopIteration:
                return
            if b.step_index >= n_steps:
                return
            it._has_head = False
            yield b

    return prefix_gen(), iter(it)


def _params_from(config, k, step, window, nsigma, seed) -> Params:
    params = Params(
        k=int(_pick(k, config, "k", 20)),
        step_len=int(_pick(step, config, "step_seconds", 30)),
        window_steps=int(_pick(window, config, "window_steps", 6)),
        nsigma=float(_pick(nsigma, config, "nsigma", 2.0)),
        seed=int(_pick(seed, config, "seed", 0)),
    )
    try:
        params.validate()
    except ValueError as exc:
        raise click.UsageError(str(exc))
    return params


@click.group()
@click.option("--dump-stopwords", is_flag=True, expose_value=False, is_eager=True,
              callback=_dump_stopwords,
              help="Print the embedded stopword list and exit.")
@click.version_option(__version__)
def main():
    """Stream clustering of social-media posts: sequential reference run,
    parallel engine, synthetic streams, cover comparison, benchmarks."""
    _setup_logging()


_common_params = [
    click.option("--k", type=int, default=None, help="Number of clusters."),
    click.option("--step", type=int, default=None, help="Time-step length (s)."),
    click.option("--window", type=int, default=None, help="Window length in steps."),
    click.option("--nsigma", type=float, default=None, help="Outlier threshold in std devs."),
    click.option("--seed", type=int, default=None, help="Seed for the cold-start draw."),
    click.option("--slack", type=int, default=5, show_default=True,
                 help="Out-of-order tolerance (s); older tweets are dropped."),
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="JSON/TOML config file; flags override it."),
]


def _with(options):
    def deco(f):
        for opt in reversed(options):
            f = opt(f)
        return f
    return deco


@main.command("seq")
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_with(_common_params)
@click.option("--window-start", type=int, default=None,
              help="Epoch of step 0 (default: first tweet's timestamp).")
@click.option("--save-state", "save_state_path", type=click.Path(), default=None,
              help="Also save the full final state (usable as engine bootstrap).")
@click.option("--full-members/--no-full-members", default=False,
              help="Embed member protomemes in the snapshot rows.")
def cmd_seq(input_path, out_dir, k, step, window, nsigma, seed, slack,
            config_path, window_start, save_state_path, full_members):
    """Run the sequential sliding-window clustering over a JSONL stream."""
    config = _load_config(config_path)
    params = _params_from(config, k, step, window, nsigma, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        stream = _open_step_stream(input_path, params.step_len, slack, window_start)
        counters: dict = {}
        from .protomeme import RetweetIndex
        idx = RetweetIndex(params.window_steps)
        state, _ = run_sequential(stream, params, retweet_index=idx,
                                  counters=counters, on_step=lambda s, b: None)
        counters["late_dropped"] = stream.late_dropped
        snap_path = out / "snapshots.jsonl"
        write_snapshots(snap_path, state, full_members=full_members)
        outputs = [snap_path]
        if save_state_path:
            save_bootstrap(save_state_path, Bootstrap(state, idx))
            outputs.append(Path(save_state_path))
        elapsed = time.perf_counter() - t0
        cfg_obj = {"k": params.k, "step_seconds": params.step_len,
                   "window_steps": params.window_steps, "nsigma": params.nsigma,
                   "seed": params.seed, "slack": slack,
                   "window_start": window_start}
        _write_manifest(out, "seq", cfg_obj, input_path, outputs, counters,
                        {"wall_time_s": elapsed})
        click.echo(f"steps={counters.get('steps', 0)} "
                   f"protomemes={counters.get('protomemes', 0)} "
                   f"outliers={counters.get('outliers', 0)} "
                   f"late_dropped={counters.get('late_dropped', 0)} "
                   f"elapsed={elapsed:.2f}s")
    except (IngestError, ConsistencyError, OSError) as exc:
        raise click.ClickException(str(exc))


@main.command("par")
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_with(_common_params)
@click.option("--window-start", type=int, default=None)
@click.option("--workers", type=int, default=None, help="Parallel worker count.")
@click.option("--batch", "batch_size", type=int, default=None,
              help="Protomemes per synchronization batch.")
@click.option("--strategy", type=click.Choice(sorted(_STRATEGY_FLAGS)), default=None)
@click.option("--deterministic/--concurrent", "deterministic", default=None,
              help="Single-threaded reproducible scheduler vs one process per role.")
@click.option("--bootstrap-steps", type=int, default=0, show_default=True,
              help="Seed the engine by running the sequential algorithm over "
                   "the first N steps.")
@click.option("--bootstrap-state", "bootstrap_state_path",
              type=click.Path(exists=True), default=None,
              help="Load a saved state (from seq --save-state) as bootstrap.")
@click.option("--verify-sync/--no-verify-sync", default=False,
              help="Hash worker states after every sync (slow; for testing).")
@click.option("--full-members/--no-full-members", default=False)
def cmd_par(input_path, out_dir, k, step, window, nsigma, seed, slack,
            config_path, window_start, workers, batch_size, strategy,
            deterministic, bootstrap_steps, bootstrap_state_path, verify_sync,
            full_members):
    """Run the parallel generator/worker/coordinator engine."""
    config = _load_config(config_path)
    params = _params_from(config, k, step, window, nsigma, seed)
    workers = int(_pick(workers, config, "workers", 2))
    batch_size = int(_pick(batch_size, config, "batch_size", 40))
    strategy_flag = _pick(strategy, config, "strategy", "cluster-delta")
    strategy_key = _STRATEGY_FLAGS.get(strategy_flag.replace("_", "-"))
    if strategy_key is None:
        raise click.UsageError(f"unknown strategy {strategy_flag!r}")
    deterministic = bool(_pick(deterministic, config, "deterministic", True))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        stream = _open_step_stream(input_path, params.step_len, slack, window_start)
        counters: dict = {}
        if bootstrap_state_path:
            bootstrap = load_bootstrap(bootstrap_state_path)
            suffix = iter(stream)
            if bootstrap_steps:
                raise click.UsageError(
                    "--bootstrap-steps and --bootstrap-state are exclusive")
        elif bootstrap_steps > 0:
            prefix, suffix = _split_prefix(stream, bootstrap_steps)
            bootstrap = bootstrap_from_steps(prefix, params, counters)
        else:
            from .cluster import ClusterState
            bootstrap = Bootstrap(ClusterState.initial(params), None)
            suffix = iter(stream)
        cfg = EngineConfig(params=params, workers=workers, batch_size=batch_size,
                           strategy=strategy_key, deterministic=deterministic,
                           bootstrap=bootstrap, verify_sync=verify_sync)
        result = run_parallel(suffix, cfg)
        counters.update(result.counters)
        counters["late_dropped"] = stream.late_dropped
        snap_path = out / "snapshots.jsonl"
        write_snapshots(snap_path, result.state, full_members=full_members)
        metrics = MetricsReport(rows=result.rows, total_time_s=result.wall_time_s)
        metrics_path = out / "metrics.json"
        metrics_obj = metrics.to_obj()
        # wall-clock metrics are not reproducible; keep them out of the rows file
        metrics_path.write_text(canonical_json(metrics_obj) + "\n", encoding="utf-8")
        elapsed = time.perf_counter() - t0
        cfg_obj = {"k": params.k, "step_seconds": params.step_len,
                   "window_steps": params.window_steps, "nsigma": params.nsigma,
                   "seed": params.seed, "slack": slack,
                   "window_start": window_start, "workers": workers,
                   "batch_size": batch_size, "strategy": strategy_key,
                   "deterministic": deterministic,
                   "bootstrap_steps": bootstrap_steps}
        _write_manifest(out, "par", cfg_obj, input_path, [snap_path], counters,
                        {"wall_time_s": elapsed,
                         "engine_wall_time_s": result.wall_time_s})
        click.echo(f"batches={len(result.rows)} "
                   f"protomemes={counters.get('pmadd_tuples', 0) + counters.get('outlier_tuples', 0)} "
                   f"outlier_tuples={counters.get('outlier_tuples', 0)} "
                   f"elapsed={elapsed:.2f}s")
    except (IngestError, ConsistencyError, EngineError, OSError) as exc:
        raise click.ClickException(str(exc))


@main.command("synth")
@click.option("--memes", type=int, required=True)
@click.option("--tweets", "tweets_total", type=int, required=True)
@click.option("--duration", type=int, default=3600, show_default=True)
@click.option("--vocab", type=int, default=500, show_default=True)
@click.option("--users", type=int, default=1000, show_default=True)
@click.option("--retweet-prob", type=float, default=0.15, show_default=True)
@click.option("--mention-prob", type=float, default=0.4, show_default=True)
@click.option("--hashtag-prob", type=float, default=0.7, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--truth", "truth_path", type=click.Path(), default=None,
              help="Write the planted cover here (default: <out>.truth.jsonl).")
def cmd_synth(memes, tweets_total, duration, vocab, users, retweet_prob,
              mention_prob, hashtag_prob, seed, out_path, truth_path):
    """Generate a synthetic planted-meme stream with ground truth."""
    cfg = SynthConfig(num_memes=memes, tweets_total=tweets_total,
                      duration=duration, vocab_size=vocab, users=users,
                      retweet_prob=retweet_prob, mention_prob=mention_prob,
                      hashtag_prob=hashtag_prob, seed=seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise click.UsageError(str(exc))
    tweets, cover = synth_stream(cfg)
    out = Path(out_path)
    with open(out, "w", encoding="utf-8") as fh:
        for t in tweets:
            fh.write(serialize_tweet(t) + "\n")
    truth = Path(truth_path) if truth_path else out.with_suffix(".truth.jsonl")
    write_cover(truth, cover)
    click.echo(f"wrote {len(tweets)} tweets to {out} and "
               f"{len(cover)} ground-truth clusters to {truth}")


@main.command("nmi")
@click.option("--a", "path_a", type=click.Path(exists=True), required=True)
@click.option("--b", "path_b", type=click.Path(exists=True), required=True)
def cmd_nmi(path_a, path_b):
    """Print the overlap-aware NMI between two cover files."""
    try:
        score = lfk_nmi(read_cover(path_a), read_cover(path_b))
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"{score:.6f}")


@main.command("bench")
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_with(_common_params)
@click.option("--window-start", type=int, default=None)
@click.option("--workers", "workers_list", default="1,2,4", show_default=True,
              help="Comma-separated worker counts to sweep.")
@click.option("--batch", "batch_size", type=int, default=None)
@click.option("--strategy", type=click.Choice(sorted(_STRATEGY_FLAGS) + ["both"]),
              default="both", show_default=True)
@click.option("--deterministic/--concurrent", "deterministic", default=False,
              help="Benchmarks default to concurrent execution.")
@click.option("--bootstrap-steps", type=int, default=0, show_default=True)
def cmd_bench(input_path, out_dir, k, step, window, nsigma, seed, slack,
              config_path, window_start, workers_list, batch_size, strategy,
              deterministic, bootstrap_steps):
    """Sweep worker counts (and strategies) and report sync statistics."""
    config = _load_config(config_path)
    params = _params_from(config, k, step, window, nsigma, seed)
    batch_size = int(_pick(batch_size, config, "batch_size", 40))
    try:
        worker_counts = [int(w) for w in workers_list.split(",") if w.strip()]
    except ValueError:
        raise click.UsageError(f"bad --workers list {workers_list!r}")
    if not worker_counts:
        raise click.UsageError("empty --workers list")
    strategies = (list(_STRATEGY_FLAGS.values()) if strategy == "both"
                  else [_STRATEGY_FLAGS[strategy]])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        from .cluster import ClusterState
        stream = _open_step_stream(input_path, params.step_len, slack, window_start)
        all_batches = list(stream)
        prefix = [b for b in all_batches if b.step_index < bootstrap_steps]
        suffix = [b for b in all_batches if b.step_index >= bootstrap_steps]
        bootstrap = (bootstrap_from_steps(prefix, params) if prefix
                     else Bootstrap(ClusterState.initial(params), None))
        runs = []
        for strat in sorted(strategies):
            for w in worker_counts:
                cfg = EngineConfig(params=params, workers=w, batch_size=batch_size,
                                   strategy=strat, deterministic=deterministic,
                                   bootstrap=bootstrap)
                result = run_parallel(iter(suffix), cfg)
                metrics = MetricsReport(rows=result.rows,
                                        total_time_s=result.wall_time_s)
                run_cfg = {"workers": w, "strategy": strat,
                           "batch_size": batch_size}
                runs.append((run_cfg, metrics))
                tag = f"{strat}-w{w}"
                (out / f"metrics-{tag}.json").write_text(
                    canonical_json(metrics.to_obj()) + "\n", encoding="utf-8")
        table, rows = bench_report(runs)
        (out / "report.json").write_text(canonical_json(rows) + "\n",
                                         encoding="utf-8")
        (out / "report.txt").write_text(table + "\n", encoding="utf-8")
        click.echo(table)
    except (IngestError, ConsistencyError, EngineError, OSError) as exc:
        raise click.ClickException(str(exc))


if __name__ == "__main__":
    main()
