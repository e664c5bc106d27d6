"""``ipwf`` command line.

Exit codes: 0 success, 1 invalid input (bad flags, missing files, bad
values), 2 runtime failure (corrupt records, pipeline errors).  Output
files are written atomically, so a failed run leaves none behind.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import defaultdict

from . import __version__
from . import io as fio
from .cache import build_cache_index
from .entropy import build_entropy_table
from .fingerprint import build_domain_fingerprint, build_ip_fingerprints
from .matcher import AdBlockDetector, Matcher
from .simulator import ConfigError, CorpusConfig, Experiment, generate_corpus, sweep
from .stability import aged_accuracy, drift_reports

log = logging.getLogger("ipwf")

CDF_POINTS = (1, 2, 5, 10, 50)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def report_accuracy(results) -> list[tuple[str, float]]:
    """Totals, accuracy, tie rate and candidate-set-size CDF points."""
    results = list(results)
    if not results:
        raise ValueError("no match rows")
    if any(r.truth is None for r in results):
        raise ValueError("every match row needs a truth label")
    n = len(results)
    rows = [("total", n),
            ("correct", sum(r.correct for r in results)),
            ("accuracy", sum(r.correct for r in results) / n),
            ("tie_rate", sum(r.tie for r in results) / n)]
    for k in CDF_POINTS:
        rows.append((f"candidates_le_{k}", sum(r.n_candidates <= k for r in results) / n))
    return rows


def _need(path):
    if not os.path.isfile(path):
        raise UsageError(f"input file not found: {path}")


def _out(path):
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d):
        raise UsageError(f"output directory does not exist: {d}")


def _at_batch(observations, batch):
    return [o for o in observations if o.batch_id == batch]


# -- subcommands ---------------------------------------------------------------------

def cmd_ingest(args):
    _need(args.snapshots)
    _out(args.out)
    store = fio.store_from_snapshots(fio.read_snapshots(args.snapshots))
    n = fio.write_mappings(args.out, store)
    log.info("wrote %d mappings", n)


def cmd_classify_mappings(args):
    _need(args.mappings)
    _out(args.out)
    if args.total_batches < 1:
        raise UsageError("--total-batches must be >= 1")
    store = fio.read_mappings(args.mappings)
    rows = [(r.domain, r.ip, c.value) for r, c in store.classify(args.total_batches)]
    fio.write_csv(args.out, ["domain", "ip", "class"], rows)


def cmd_build_fingerprints(args):
    for p in (args.observations, args.mappings):
        _need(p)
    _out(args.out)
    store = fio.read_mappings(args.mappings)
    obs = _at_batch(fio.read_observations(args.observations), args.batch)
    fps, skipped = build_ip_fingerprints(obs, store, args.batch)
    if skipped:
        log.warning("%d websites skipped: primary domain unresolved at batch %d",
                    len(skipped), args.batch)
    unresolved = sum(len(fp.unresolved) for fp in fps)
    if unresolved:
        log.info("%d secondary domains unresolved", unresolved)
    fio.write_jsonl(args.out, (fio.fingerprint_row(fp) for fp in fps))
    log.info("wrote %d fingerprints", len(fps))


def cmd_entropy(args):
    for p in (args.observations, args.mappings):
        _need(p)
    _out(args.out)
    store = fio.read_mappings(args.mappings)
    obs = _at_batch(fio.read_observations(args.observations), args.batch)
    table = build_entropy_table((build_domain_fingerprint(o) for o in obs), store, args.batch)
    fio.write_entropy(args.out, table)


def cmd_cache_analyze(args):
    for p in (args.observations, args.mappings):
        _need(p)
    _out(args.out)
    store = fio.read_mappings(args.mappings)
    obs = _at_batch(fio.read_observations(args.observations), args.batch)
    fio.write_cache_index(args.out, build_cache_index(obs, store, args.batch))


def _matcher(args) -> Matcher:
    _need(args.fingerprints)
    _need(args.entropy)
    if getattr(args, "cache_index", None):
        _need(args.cache_index)
    if getattr(args, "blocklist", None):
        _need(args.blocklist)
    _need(args.traces)
    _out(args.out)
    cache_index = None
    if getattr(args, "revisit_elapsed", 0) > 0:
        if not args.cache_index:
            raise UsageError("--revisit-elapsed needs --cache-index")
        cache_index = fio.read_cache_index(args.cache_index)
    adblock = None
    if getattr(args, "blocklist", None):
        try:
            adblock = AdBlockDetector(fio.read_blocklist(args.blocklist), args.adblock_threshold)
        except ValueError as exc:
            raise UsageError(f"--blocklist: {exc}") from exc
    elif getattr(args, "mode", None) == "auto":
        raise UsageError("--mode auto needs --blocklist")
    return Matcher(list(fio.read_fingerprints(args.fingerprints)), fio.read_entropy(args.entropy),
                   cache_index=cache_index, adblock=adblock)


def cmd_match(args):
    matcher = _matcher(args)
    if args.revisit_elapsed > 0 and args.mode == "bucketed":
        raise UsageError("cache-aware matching supports --mode basic or auto")
    results = matcher.match_many(fio.read_traces(args.traces), args.mode, args.revisit_elapsed,
                                 threads=args.threads)
    fio.write_jsonl(args.out, (fio.match_row(r, args.top_k) for r in results))
    log.info("matched %d traces", len(results))


def cmd_aged_accuracy(args):
    matcher = _matcher(args)
    rows = aged_accuracy(matcher, list(fio.read_traces(args.traces)), args.mode)
    fio.write_csv(args.out, ["age_batches", "accuracy", "n"],
                  ([r.age_batches, repr(r.accuracy), r.n] for r in rows))


def cmd_stability(args):
    _need(args.observations)
    _out(args.out)
    store = None
    if args.kind == "ips":
        if not args.mappings:
            raise UsageError("--kind ips needs --mappings")
        _need(args.mappings)
        store = fio.read_mappings(args.mappings)
    sets = defaultdict(dict)
    for obs in fio.read_observations(args.observations):
        df = build_domain_fingerprint(obs)
        if store is None:
            s = set(df.all_domains)
        else:
            s = set()
            for d in df.all_domains:
                s |= store.ips_of(d, obs.batch_id)
        sets[obs.website_id][obs.batch_id] = s
    reports = drift_reports(sets, args.kind)
    fio.write_csv(args.out, ["website", "t0", "t1", "degree"],
                  ([r.website_id, r.t0_batch, r.t1_batch, repr(r.degree)] for r in reports))


def _load_json(path):
    _need(path)
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except ValueError as exc:
            raise UsageError(f"{path}: invalid JSON: {exc}") from exc


def cmd_simulate(args):
    raw = _load_json(args.config)
    trace_opts = raw.pop("trace_options", {}) if isinstance(raw, dict) else {}
    try:
        if args.seed is not None:
            raw["rng_seed"] = args.seed
        cfg = CorpusConfig.from_json(raw)
    except (ConfigError, TypeError) as exc:
        raise UsageError(f"{args.config}: {exc}") from exc
    os.makedirs(args.out_dir, exist_ok=True)
    corpus = generate_corpus(cfg)
    d = args.out_dir
    fio.write_jsonl(os.path.join(d, "observations.jsonl"),
                    (fio.observation_row(o) for o in corpus.observations()))
    fio.write_jsonl(os.path.join(d, "snapshots.jsonl"),
                    (fio.snapshot_row(b, s) for b, s in corpus.snapshots()))
    traces = [t for b in range(corpus.n_batches) for t in corpus.traces(b, **trace_opts)]
    fio.write_jsonl(os.path.join(d, "traces.jsonl"), (fio.trace_row(t) for t in traces))
    fio.write_jsonl(os.path.join(d, "truth.jsonl"),
                    ({"trace": t.trace_id, "website": t.truth, "batch": t.batch} for t in traces))
    block = sorted(set().union(*(corpus.blocklist_ips(b) for b in range(corpus.n_batches))))
    with fio.atomic_output(os.path.join(d, "blocklist.txt")) as fh:
        fh.writelines(ip + "\n" for ip in block)
    with fio.atomic_output(os.path.join(d, "sim.json")) as fh:
        fh.write(json.dumps({**cfg.to_json(), "trace_options": trace_opts}, indent=2) + "\n")


def cmd_sweep(args):
    grid = _load_json(args.grid)
    try:
        base = CorpusConfig.from_json(grid.get("base", {}))
        exp = Experiment(mode=args.mode or grid.get("mode", "bucketed"),
                         **grid.get("experiment", {}))
        params = grid.get("params", {})
        seeds = grid.get("seeds", 30)
        rows = sweep(base, params, seeds, exp)
    except (ConfigError, TypeError) as exc:
        raise UsageError(f"{args.grid}: {exc}") from exc
    _out(args.out)
    header = sorted(params) + ["mode", "n_seeds", "mean_accuracy", "std_accuracy",
                               "min_accuracy", "max_accuracy"]
    fio.write_csv(args.out, header, ([r[h] for h in header] for r in rows))


def cmd_report(args):
    _need(args.matches)
    try:
        rows = report_accuracy(fio.read_matches(args.matches))
    except fio.FormatError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.out:
        _out(args.out)
        fio.write_csv(args.out, ["metric", "value"], rows)
    else:
        for k, v in rows:
            print(f"{k},{v}")


# -- parser --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--seed", type=int, default=None, help="simulator seed override")
    common.add_argument("--quiet", action="store_true")

    p = _Parser(prog="ipwf", description="IP-based website fingerprinting toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help):
        sp = sub.add_parser(name, parents=[common], help=help)
        sp.set_defaults(func=fn)
        return sp

    sp = add("ingest", cmd_ingest, "fold DNS snapshots into a mapping store")
    sp.add_argument("--snapshots", required=True)
    sp.add_argument("--out", required=True)

    sp = add("classify-mappings", cmd_classify_mappings, "dynamic/static mapping classes")
    sp.add_argument("--mappings", required=True)
    sp.add_argument("--total-batches", type=int, required=True)
    sp.add_argument("--out", required=True)

    for name, fn, help in (("build-fingerprints", cmd_build_fingerprints, "resolve fingerprints"),
                           ("entropy", cmd_entropy, "domain and IP entropy table"),
                           ("cache-analyze", cmd_cache_analyze, "per-(website, ip) freshness")):
        sp = add(name, fn, help)
        sp.add_argument("--observations", required=True)
        sp.add_argument("--mappings", required=True)
        sp.add_argument("--batch", type=int, required=True)
        sp.add_argument("--out", required=True)

    sp = add("match", cmd_match, "identify websites from traces")
    sp.add_argument("--fingerprints", required=True)
    sp.add_argument("--entropy", required=True)
    sp.add_argument("--traces", required=True)
    sp.add_argument("--mode", choices=["naive", "basic", "bucketed", "auto"], default="bucketed")
    sp.add_argument("--blocklist")
    sp.add_argument("--adblock-threshold", type=int, default=0)
    sp.add_argument("--revisit-elapsed", type=float, default=0)
    sp.add_argument("--cache-index")
    sp.add_argument("--top-k", type=int, default=10)
    sp.add_argument("--out", required=True)

    sp = add("aged-accuracy", cmd_aged_accuracy, "accuracy per fingerprint age")
    sp.add_argument("--fingerprints", required=True)
    sp.add_argument("--traces", required=True)
    sp.add_argument("--entropy", required=True)
    sp.add_argument("--mode", choices=["naive", "basic", "bucketed"], default="bucketed")
    sp.add_argument("--out", required=True)

    sp = add("stability", cmd_stability, "difference degree between batches")
    sp.add_argument("--observations", required=True)
    sp.add_argument("--kind", choices=["domains", "ips"], default="domains")
    sp.add_argument("--mappings")
    sp.add_argument("--out", required=True)

    sp = add("simulate", cmd_simulate, "generate a synthetic corpus")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-dir", required=True)

    sp = add("sweep", cmd_sweep, "accuracy over a parameter grid")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--mode", choices=["naive", "basic", "bucketed", "auto"])
    sp.add_argument("--out", required=True)

    sp = add("report", cmd_report, "accuracy summary of matches.jsonl")
    sp.add_argument("--matches", required=True)
    sp.add_argument("--out")
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"ipwf: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="ipwf: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        args.func(args)
    except UsageError as exc:
        print(f"ipwf: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported via exit code
        print(f"ipwf: runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
