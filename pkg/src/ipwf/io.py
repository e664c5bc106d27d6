"""Readers and writers for the JSONL record files and CSV reports.

All files are UTF-8 with LF line endings.  Readers stream line by line and
raise :class:`FormatError` carrying the file and line number.
"""
from __future__ import annotations

import contextlib
import csv
import json
import os
import tempfile
from typing import Iterable, Iterator

from .cache import CachePolicy
from .entropy import EntropyTable
from .fingerprint import Bucket, BrowseObservation, IpFingerprint, Request, N_BUCKETS
from .mapping_store import DnsSnapshot, MappingStore
from .matcher import MatchResult, MatchMode, Trace, TraceEvent


class FormatError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


@contextlib.contextmanager
def atomic_output(path):
    """Write to a temp file next to ``path``; rename on success, delete on failure."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ipwf-", dir=d)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path, rows: Iterable[dict]) -> int:
    n = 0
    with atomic_output(path) as fh:
        for row in rows:
            fh.write(_dumps(row) + "\n")
            n += 1
    return n


def read_jsonl(path, parse=lambda x: x) -> Iterator:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield parse(json.loads(line))
            except FormatError:
                raise
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                raise FormatError(path, lineno, f"{type(exc).__name__}: {exc}") from exc


def write_csv(path, header: list[str], rows: Iterable) -> int:
    n = 0
    with atomic_output(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)
            n += 1
    return n


def read_csv(path, header: list[str]) -> Iterator[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        first = next(r, None)
        if first != header:
            raise FormatError(path, 1, f"expected header {header}, got {first}")
        for lineno, row in enumerate(r, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            yield lineno, dict(zip(header, row))


# -- mappings / snapshots ----------------------------------------------------

def mapping_rows(store: MappingStore) -> Iterator[dict]:
    for rec in store:
        yield {"domain": rec.domain, "ip": rec.ip, "batches": sorted(rec.observed_batches)}


def write_mappings(path, store: MappingStore) -> int:
    return write_jsonl(path, mapping_rows(store))


def read_mappings(path) -> MappingStore:
    store = MappingStore()

    def parse(obj):
        store.add_record(obj["domain"], obj["ip"], obj["batches"])
    for _ in read_jsonl(path, parse):
        pass
    return store.seal()


def snapshot_row(batch: int, snap: DnsSnapshot) -> dict:
    return {"domain": snap.domain, "ips": sorted(snap.ips),
            "resolved_at": int(snap.resolved_at), "batch": batch}


def read_snapshots(path) -> Iterator[tuple[int, DnsSnapshot]]:
    return read_jsonl(path, lambda o: (int(o["batch"]),
                                       DnsSnapshot(o["domain"], frozenset(o["ips"]),
                                                   float(o["resolved_at"]))))


def store_from_snapshots(snaps: Iterable[tuple[int, DnsSnapshot]]) -> MappingStore:
    store = MappingStore()
    for batch, snap in sorted(snaps, key=lambda x: x[0]):
        store.ingest_snapshot(snap, batch)
    return store.seal()


# -- observations --------------------------------------------------------------

def observation_row(obs: BrowseObservation) -> dict:
    return {"website": obs.website_id, "batch": obs.batch_id, "primary": obs.primary_domain,
            "requests": [{"domain": r.domain, "bucket": r.bucket.label, "t_ms": r.t_offset_ms,
                          "cache": r.cache.to_json()} for r in obs.requests]}


def parse_observation(o: dict) -> BrowseObservation:
    reqs = tuple(Request(r["domain"], Bucket.from_label(r["bucket"]), int(r.get("t_ms", 0)),
                         CachePolicy.from_json(r.get("cache")))
                 for r in o.get("requests", []))
    return BrowseObservation(str(o["website"]), int(o["batch"]), o["primary"], reqs)


def read_observations(path) -> Iterator[BrowseObservation]:
    return read_jsonl(path, parse_observation)


# -- fingerprints ----------------------------------------------------------------

def fingerprint_row(fp: IpFingerprint) -> dict:
    return {"website": fp.website_id, "built_at": fp.built_at_batch,
            "primary_ips": sorted(fp.primary_ips),
            "buckets": [sorted(b) for b in fp.bucket_ips]}


def parse_fingerprint(o: dict) -> IpFingerprint:
    buckets = o["buckets"]
    if len(buckets) != N_BUCKETS:
        raise ValueError(f"expected {N_BUCKETS} buckets")
    if not o["primary_ips"]:
        raise ValueError("fingerprint without primary IPs")
    return IpFingerprint(str(o["website"]), frozenset(o["primary_ips"]),
                         tuple(frozenset(b) for b in buckets), int(o["built_at"]))


def read_fingerprints(path) -> Iterator[IpFingerprint]:
    return read_jsonl(path, parse_fingerprint)


# -- entropy -------------------------------------------------------------------------

ENTROPY_HEADER = ["kind", "key", "bits"]


def entropy_rows(table: EntropyTable):
    yield ["total", "websites", table.total_websites]
    for d in sorted(table.domain_bits):
        yield ["domain", d, repr(table.domain_bits[d])]
    for ip in sorted(table.ip_bits):
        yield ["ip", ip, repr(table.ip_bits[ip])]


def write_entropy(path, table: EntropyTable) -> int:
    return write_csv(path, ENTROPY_HEADER, entropy_rows(table))


def read_entropy(path) -> EntropyTable:
    total, dom, ips = 0, {}, {}
    for lineno, row in read_csv(path, ENTROPY_HEADER):
        try:
            if row["kind"] == "total":
                total = int(row["bits"])
            elif row["kind"] == "domain":
                dom[row["key"]] = float(row["bits"])
            elif row["kind"] == "ip":
                ips[row["key"]] = float(row["bits"])
            else:
                raise ValueError(f"unknown kind {row['kind']!r}")
        except ValueError as exc:
            raise FormatError(path, lineno, str(exc)) from exc
    return EntropyTable(total, dom, ips)


# -- traces / matches --------------------------------------------------------------

def trace_row(t: Trace) -> dict:
    row = {"trace": t.trace_id, "events": [{"t_ms": e.t_ms, "ip": e.ip} for e in t.events],
           "truth": t.truth}
    if t.batch is not None:
        row["batch"] = t.batch
    return row


def parse_trace(o: dict) -> Trace:
    events = tuple(TraceEvent(int(e["t_ms"]), e["ip"]) for e in o["events"])
    if not events:
        raise ValueError("trace has no events")
    batch = o.get("batch")
    return Trace(str(o["trace"]), events, o.get("truth"), None if batch is None else int(batch))


def read_traces(path) -> Iterator[Trace]:
    return read_jsonl(path, parse_trace)


def match_row(r: MatchResult, top_k: int = 10) -> dict:
    return {"trace": r.trace_id, "mode": MatchMode(r.mode).value, "prediction": r.prediction,
            "score_bits": r.score_bits, "tie": r.tie,
            "candidates": [{"website": w, "score_bits": s} for w, s in r.candidates[:top_k]],
            "n_candidates": r.n_candidates, "truth": r.truth}


def parse_match(o: dict) -> MatchResult:
    cands = [(str(c["website"]), float(c["score_bits"])) for c in o["candidates"]]
    return MatchResult(str(o["trace"]), MatchMode(o["mode"]), o["prediction"],
                       float(o["score_bits"]), cands, bool(o["tie"]), o.get("truth"),
                       total_candidates=int(o.get("n_candidates", len(cands))))


def read_matches(path) -> Iterator[MatchResult]:
    return read_jsonl(path, parse_match)


# -- cache index ------------------------------------------------------------------------

CACHE_HEADER = ["website", "ip", "freshness"]


def write_cache_index(path, index: dict) -> int:
    return write_csv(path, CACHE_HEADER, ([w, ip, f] for (w, ip), f in sorted(index.items())))


def read_cache_index(path) -> dict:
    out = {}
    for lineno, row in read_csv(path, CACHE_HEADER):
        try:
            out[(row["website"], row["ip"])] = int(row["freshness"])
        except ValueError as exc:
            raise FormatError(path, lineno, str(exc)) from exc
    return out


def read_blocklist(path) -> set[str]:
    with open(path, encoding="utf-8") as fh:
        return {ln.split("#", 1)[0].strip() for ln in fh} - {""}
