"""Identify the visited website from a destination-IP trace.

Three modes share one candidate pool, the fingerprints whose primary IPs
contain the first destination of the trace:

* ``naive``: predict only when the pool has exactly one member;
* ``basic``: score each candidate by the entropy of trace IPs found in its
  secondary set;
* ``bucketed``: split the trace into three connection-time clusters and
  score each cluster only against the matching fingerprint bucket.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .entropy import EntropyTable
from .fingerprint import N_BUCKETS, IpFingerprint, merge_by_website
from .mapping_store import canonical_ip


class MatchError(ValueError):
    pass


class MatchMode(str, enum.Enum):
    NAIVE = "naive"
    BASIC = "basic"
    BUCKETED = "bucketed"


@dataclass(frozen=True)
class TraceEvent:
    t_ms: int
    ip: str


@dataclass(frozen=True)
class Trace:
    trace_id: str
    events: tuple
    truth: str | None = None
    batch: int | None = None

    def __post_init__(self):
        events = tuple(e if isinstance(e, TraceEvent) else TraceEvent(int(e[0]), e[1])
                       for e in self.events)
        events = tuple(TraceEvent(int(e.t_ms), canonical_ip(e.ip)) for e in events)
        for a, b in zip(events, events[1:]):
            if b.t_ms < a.t_ms:
                raise MatchError(f"trace {self.trace_id}: timestamps decrease at t={b.t_ms}")
        object.__setattr__(self, "events", events)

    @property
    def first_ip(self) -> str:
        if not self.events:
            raise MatchError(f"trace {self.trace_id} is empty")
        return self.events[0].ip


@dataclass
class MatchResult:
    trace_id: str
    mode: MatchMode
    prediction: str | None
    score_bits: float
    candidates: list  # (website_id, score_bits), best first
    tie: bool
    truth: str | None = None
    missing_entropy: int = 0
    total_candidates: int | None = None  # set when candidates were truncated

    @property
    def n_candidates(self) -> int:
        if self.total_candidates is not None:
            return self.total_candidates
        return len(self.candidates)

    @property
    def correct(self) -> bool:
        return self.prediction is not None and not self.tie and self.prediction == self.truth


class AdBlockDecision(str, enum.Enum):
    ASSUME_BLOCKING = "assume_blocking"
    ASSUME_NOT_BLOCKING = "assume_not_blocking"


@dataclass(frozen=True)
class AdBlockVerdict:
    blocked_ip_hits: int
    decision: AdBlockDecision

    @property
    def preferred_mode(self) -> MatchMode:
        if self.decision is AdBlockDecision.ASSUME_BLOCKING:
            return MatchMode.BASIC
        return MatchMode.BUCKETED


class AdBlockDetector:
    """Looks for connections to known ad/tracker IPs.

    A trace with at most ``threshold`` hits is taken to come from a client
    that blocks ads.
    """

    def __init__(self, blocklist_ips: Iterable[str], threshold: int = 0):
        self.blocklist = frozenset(canonical_ip(ip) for ip in blocklist_ips)
        if not self.blocklist:
            raise MatchError("blocklist is empty")
        if threshold < 0:
            raise MatchError("threshold must be >= 0")
        self.threshold = threshold

    def __call__(self, trace: Trace) -> AdBlockVerdict:
        hits = len({e.ip for e in trace.events} & self.blocklist)
        decision = (AdBlockDecision.ASSUME_BLOCKING if hits <= self.threshold
                    else AdBlockDecision.ASSUME_NOT_BLOCKING)
        return AdBlockVerdict(hits, decision)


def detect_adblock(trace: Trace, blocklist_ips, threshold: int = 0) -> AdBlockVerdict:
    detector = blocklist_ips if isinstance(blocklist_ips, AdBlockDetector) \
        else AdBlockDetector(blocklist_ips, threshold)
    return detector(trace)


def cluster_labels(times: Sequence[int], k: int = N_BUCKETS) -> np.ndarray:
    return kernels.kmeans_1d(np.asarray(times, dtype=np.float64), k)


def cluster_times(events: Sequence[TraceEvent], k: int = N_BUCKETS) -> list[list[TraceEvent]]:
    """Split secondary events into ``k`` clusters ordered by connection time."""
    labels = cluster_labels([e.t_ms for e in events], k)
    out: list[list[TraceEvent]] = [[] for _ in range(k)]
    for e, lab in zip(events, labels):
        out[int(lab)].append(e)
    return out


def _csr(rows: list[list[int]]):
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r in rows])
    flat = [x for r in rows for x in sorted(r)]
    return indptr, np.asarray(flat, dtype=np.int64)


class FingerprintDB:
    """Immutable, array-backed fingerprint collection for fast matching."""

    def __init__(self, fingerprints: Iterable[IpFingerprint], entropy: EntropyTable | None = None):
        self.fingerprints = merge_by_website(fingerprints)
        if not self.fingerprints:
            raise MatchError("fingerprint database is empty")
        self.website_ids = [fp.website_id for fp in self.fingerprints]
        vocab = sorted(set().union(*(fp.primary_ips | fp.secondary_ips for fp in self.fingerprints)))
        self.ip_index = {ip: i for i, ip in enumerate(vocab)}
        ip_bits = entropy.ip_bits if entropy is not None else {}
        self.bits = np.array([ip_bits.get(ip, 0.0) for ip in vocab], dtype=np.float64)
        self.has_bits = np.array([ip in ip_bits for ip in vocab], dtype=bool)
        self.bits.setflags(write=False)

        self.primary_pool: dict[str, list[int]] = {}
        for i, fp in enumerate(self.fingerprints):
            for ip in fp.primary_ips:
                self.primary_pool.setdefault(ip, []).append(i)
        idx = self.ip_index
        self.sec_indptr, self.sec_indices = _csr(
            [[idx[ip] for ip in fp.secondary_ips] for fp in self.fingerprints])
        self.bkt_indptr, self.bkt_indices = _csr(
            [[idx[ip] * N_BUCKETS + b for b in range(N_BUCKETS) for ip in fp.bucket_ips[b]]
             for fp in self.fingerprints])

    def __len__(self):
        return len(self.fingerprints)

    def pool(self, ip0: str) -> np.ndarray:
        return np.asarray(self.primary_pool.get(ip0, ()), dtype=np.int64)

    def ids(self, ips: Iterable[str]) -> list[int]:
        idx = self.ip_index
        return [idx[ip] for ip in ips if ip in idx]


def _ranked(db: FingerprintDB, pool: np.ndarray, scores: np.ndarray) -> list:
    return sorted(((db.website_ids[c], float(s)) for c, s in zip(pool, scores)),
                  key=lambda x: (-x[1], x[0]))


def _result(trace: Trace, mode: MatchMode, ranked: list, missing: int = 0) -> MatchResult:
    if not ranked:
        return MatchResult(trace.trace_id, mode, None, 0.0, [], False, trace.truth, missing)
    tie = len(ranked) > 1 and ranked[0][1] == ranked[1][1]
    return MatchResult(trace.trace_id, mode, ranked[0][0], ranked[0][1], ranked, tie,
                       trace.truth, missing)


class Matcher:
    """Matches traces against a sealed fingerprint database.

    ``cache_index`` maps ``(website, ip)`` to the minimum freshness of the
    resources that website loads from that IP; it is only consulted for
    revisits (``revisit_elapsed_s > 0``).
    """

    def __init__(self, fingerprints, entropy: EntropyTable | None = None, *,
                 cache_index: Mapping | None = None, adblock: AdBlockDetector | None = None):
        self.db = fingerprints if isinstance(fingerprints, FingerprintDB) \
            else FingerprintDB(fingerprints, entropy)
        self.cache_index = cache_index or {}
        self.adblock = adblock

    def _missing(self, ids: Iterable[int]) -> int:
        return int(sum(1 for i in set(ids) if not self.db.has_bits[i]))

    def naive(self, trace: Trace) -> MatchResult:
        pool = self.db.pool(trace.first_ip)
        ranked = sorted((self.db.website_ids[c], 0.0) for c in pool)
        res = _result(trace, MatchMode.NAIVE, ranked)
        if len(ranked) != 1:
            res.prediction = None
        return res

    def basic(self, trace: Trace) -> MatchResult:
        pool = self.db.pool(trace.first_ip)
        ids = sorted(set(self.db.ids(e.ip for e in trace.events[1:])))
        scores = kernels.score_candidates(pool, ids, self.db.sec_indptr, self.db.sec_indices,
                                          self.db.bits, 1)
        return _result(trace, MatchMode.BASIC, _ranked(self.db, pool, scores), self._missing(ids))

    def bucketed(self, trace: Trace) -> MatchResult:
        pool = self.db.pool(trace.first_ip)
        secondary = trace.events[1:]
        keys: set[int] = set()
        if secondary:
            labels = cluster_labels([e.t_ms for e in secondary])
            idx = self.db.ip_index
            keys = {idx[e.ip] * N_BUCKETS + int(lab)
                    for e, lab in zip(secondary, labels) if e.ip in idx}
        scores = kernels.score_candidates(pool, sorted(keys), self.db.bkt_indptr,
                                          self.db.bkt_indices, self.db.bits, N_BUCKETS)
        return _result(trace, MatchMode.BUCKETED, _ranked(self.db, pool, scores),
                       self._missing(k // N_BUCKETS for k in keys))

    def cache_aware(self, trace: Trace, revisit_elapsed_s: float) -> MatchResult:
        """Basic matching that ignores IPs a revisit would serve from cache."""
        if revisit_elapsed_s <= 0:
            return self.basic(trace)
        pool = self.db.pool(trace.first_ip)
        trace_ips = sorted({e.ip for e in trace.events[1:]} & self.db.ip_index.keys())
        scores = np.zeros(len(pool), dtype=np.float64)
        for i, c in enumerate(pool):
            site = self.db.website_ids[c]
            kept = []
            for ip in trace_ips:
                f = self.cache_index.get((site, ip))
                # missing entry: treat as non-cacheable and keep it
                if f is None or f <= 0 or f <= revisit_elapsed_s:
                    kept.append(self.db.ip_index[ip])
            scores[i] = kernels.score_candidates(
                np.array([c]), sorted(kept), self.db.sec_indptr, self.db.sec_indices,
                self.db.bits, 1)[0]
        return _result(trace, MatchMode.BASIC, _ranked(self.db, pool, scores),
                       self._missing(self.db.ids(trace_ips)))

    def auto_mode(self, trace: Trace) -> MatchMode:
        if self.adblock is None:
            return MatchMode.BUCKETED
        return self.adblock(trace).preferred_mode

    def match(self, trace: Trace, mode: MatchMode | str = MatchMode.BUCKETED,
              revisit_elapsed_s: float = 0) -> MatchResult:
        if not trace.events:
            raise MatchError(f"trace {trace.trace_id} is empty")
        mode = "auto" if mode == "auto" else MatchMode(mode)
        if mode == "auto":
            mode = MatchMode.BASIC if revisit_elapsed_s > 0 else self.auto_mode(trace)
        if mode is MatchMode.NAIVE:
            return self.naive(trace)
        if revisit_elapsed_s > 0:
            if mode is MatchMode.BUCKETED:
                raise MatchError("cache-aware matching uses basic mode only")
            return self.cache_aware(trace, revisit_elapsed_s)
        if mode is MatchMode.BASIC:
            return self.basic(trace)
        return self.bucketed(trace)

    def match_many(self, traces: Iterable[Trace], mode="bucketed", revisit_elapsed_s: float = 0,
                   threads: int = 1) -> list[MatchResult]:
        traces = list(traces)
        if threads <= 1 or len(traces) < 2:
            out = [self.match(t, mode, revisit_elapsed_s) for t in traces]
        else:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                out = list(ex.map(lambda t: self.match(t, mode, revisit_elapsed_s), traces))
        return sorted(out, key=lambda r: r.trace_id)


def _matcher(db, entropy=None, **kw) -> Matcher:
    return db if isinstance(db, Matcher) else Matcher(db, entropy, **kw)


def match_naive_primary(trace: Trace, db) -> MatchResult:
    return _matcher(db).match(trace, MatchMode.NAIVE)


def match_basic(trace: Trace, db, entropy: EntropyTable | None = None) -> MatchResult:
    return _matcher(db, entropy).match(trace, MatchMode.BASIC)


def match_bucketed(trace: Trace, db, entropy: EntropyTable | None = None) -> MatchResult:
    return _matcher(db, entropy).match(trace, MatchMode.BUCKETED)


def match_cache_aware(trace: Trace, db, entropy: EntropyTable | None, revisit_elapsed_s: float,
                      cache_index: Mapping) -> MatchResult:
    m = db if isinstance(db, Matcher) else Matcher(db, entropy, cache_index=cache_index)
    if not trace.events:
        raise MatchError(f"trace {trace.trace_id} is empty")
    return m.cache_aware(trace, revisit_elapsed_s)
