"""Time-ranged domain -> IP mappings built from repeated DNS snapshots."""
from __future__ import annotations

import enum
import functools
import ipaddress
import math
import os
import socket
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

DEFAULT_MIN_INTERVAL = 3 * 3600


class MappingError(ValueError):
    pass


class ResolutionError(RuntimeError):
    def __init__(self, domain: str, cause: object):
        super().__init__(f"could not resolve {domain!r}: {cause}")
        self.domain = domain
        self.cause = cause


class FeatureDisabledError(ResolutionError):
    def __init__(self, domain: str):
        super().__init__(domain, "live resolution is disabled (set IPWF_ALLOW_NETWORK=1)")


@functools.lru_cache(maxsize=1 << 20)
def canonical_ip(text: str) -> str:
    try:
        return str(ipaddress.ip_address(str(text).strip()))
    except ValueError:
        raise MappingError(f"malformed IP address: {text!r}") from None


def canonical_domain(name: str) -> str:
    d = str(name).strip().lower().rstrip(".")
    if not d:
        raise MappingError(f"empty domain name: {name!r}")
    return d


@dataclass(frozen=True)
class DnsSnapshot:
    domain: str
    ips: frozenset
    resolved_at: float

    def __post_init__(self):
        object.__setattr__(self, "domain", canonical_domain(self.domain))
        if not self.ips:
            raise MappingError(f"snapshot for {self.domain} has no IPs")
        object.__setattr__(self, "ips", frozenset(canonical_ip(ip) for ip in self.ips))
        if not math.isfinite(self.resolved_at):
            raise MappingError(f"non-finite timestamp for {self.domain}")


@dataclass
class MappingRecord:
    domain: str
    ip: str
    observed_batches: set = field(default_factory=set)

    @property
    def first_seen_batch(self) -> int:
        return min(self.observed_batches)

    @property
    def last_seen_batch(self) -> int:
        return max(self.observed_batches)


class LongevityClass(enum.Enum):
    DYNAMIC = "dynamic"
    STATIC = "static"
    INTERMEDIATE = "intermediate"


def classify_longevity(record: MappingRecord, total_batches: int) -> LongevityClass:
    """Dynamic: seen only inside a window of at most three consecutive batches.
    Static: seen in every batch.  Dynamic is checked first, which only
    matters when ``total_batches <= 3``.
    """
    if total_batches < 1:
        raise MappingError("total_batches must be >= 1")
    obs = record.observed_batches
    if not obs:
        raise MappingError(f"record {record.domain}/{record.ip} has no observations")
    lo, hi = min(obs), max(obs)
    if lo < 0 or hi >= total_batches:
        raise MappingError(
            f"record {record.domain}/{record.ip} observed at batch {hi} "
            f"outside 0..{total_batches - 1}")
    if hi - lo <= 2:
        return LongevityClass.DYNAMIC
    if len(obs) == total_batches:
        return LongevityClass.STATIC
    return LongevityClass.INTERMEDIATE


class MappingStore:
    """Domain -> IP records keyed by (domain, ip), each holding the batches
    in which the pair was observed.

    Ingestion is single-writer.  After :meth:`seal` the store rejects writes
    and can be shared between reader threads.
    """

    def __init__(self):
        self._records: dict[tuple[str, str], MappingRecord] = {}
        self._by_domain: dict[str, dict[str, MappingRecord]] = defaultdict(dict)
        self._last_resolved: dict[str, float] = {}
        self._last_batch: int | None = None
        self._sealed = False

    def __len__(self):
        return len(self._records)

    def __iter__(self) -> Iterator[MappingRecord]:
        for key in sorted(self._records):
            yield self._records[key]

    @property
    def sealed(self) -> bool:
        return self._sealed

    def seal(self) -> "MappingStore":
        self._sealed = True
        return self

    def domains(self) -> list[str]:
        return sorted(self._by_domain)

    def _check_batch(self, batch_id: int):
        if self._sealed:
            raise MappingError("store is sealed")
        if batch_id < 0:
            raise MappingError(f"negative batch id {batch_id}")
        if self._last_batch is not None and batch_id < self._last_batch:
            raise MappingError(
                f"batch {batch_id} arrives after batch {self._last_batch}")
        self._last_batch = batch_id

    def _add(self, domain: str, ip: str, batches: Iterable[int]) -> bool:
        rec = self._records.get((domain, ip))
        new = rec is None
        if new:
            rec = MappingRecord(domain, ip)
            self._records[(domain, ip)] = rec
            self._by_domain[domain][ip] = rec
        rec.observed_batches.update(batches)
        return new

    def ingest_snapshot(self, snapshot: DnsSnapshot, batch_id: int) -> int:
        """Record ``snapshot`` under ``batch_id``; return the number of new pairs."""
        if not isinstance(snapshot, DnsSnapshot):
            snapshot = DnsSnapshot(snapshot.domain, frozenset(snapshot.ips), snapshot.resolved_at)
        self._check_batch(batch_id)
        added = sum(self._add(snapshot.domain, ip, (batch_id,)) for ip in snapshot.ips)
        prev = self._last_resolved.get(snapshot.domain)
        if prev is None or snapshot.resolved_at > prev:
            self._last_resolved[snapshot.domain] = snapshot.resolved_at
        return added

    def add_record(self, domain: str, ip: str, batches: Iterable[int]):
        """Load a persisted record (no rate-limit bookkeeping)."""
        if self._sealed:
            raise MappingError("store is sealed")
        batches = [int(b) for b in batches]
        if not batches or min(batches) < 0:
            raise MappingError(f"record {domain}/{ip} needs non-negative batches")
        self._add(canonical_domain(domain), canonical_ip(ip), batches)

    def record(self, domain: str, ip: str) -> MappingRecord | None:
        return self._records.get((domain, ip))

    def ips_of(self, domain: str, batch_id: int) -> set[str]:
        recs = self._by_domain.get(domain)
        if not recs:
            return set()
        return {ip for ip, r in recs.items() if batch_id in r.observed_batches}

    def domains_by_ip(self, batch_id: int) -> dict[str, set[str]]:
        out: dict[str, set[str]] = defaultdict(set)
        for (domain, ip), rec in self._records.items():
            if batch_id in rec.observed_batches:
                out[ip].add(domain)
        return dict(out)

    def batches(self) -> list[int]:
        seen = set()
        for rec in self._records.values():
            seen |= rec.observed_batches
        return sorted(seen)

    def due_for_resolution(self, domain: str, now: float,
                           min_interval_seconds: int = DEFAULT_MIN_INTERVAL) -> bool:
        if min_interval_seconds <= 0:
            raise MappingError("min_interval_seconds must be positive")
        last = self._last_resolved.get(domain)
        return last is None or now - last >= min_interval_seconds

    def classify(self, total_batches: int) -> Iterator[tuple[MappingRecord, LongevityClass]]:
        for rec in self:
            yield rec, classify_longevity(rec, total_batches)


def network_enabled() -> bool:
    return os.environ.get("IPWF_ALLOW_NETWORK", "").strip().lower() in ("1", "true", "yes")


def resolve_live(domain: str, *, enabled: bool | None = None) -> DnsSnapshot:
    """Resolve A/AAAA records through the system resolver."""
    domain = canonical_domain(domain)
    if not (network_enabled() if enabled is None else enabled):
        raise FeatureDisabledError(domain)
    try:
        infos = socket.getaddrinfo(domain, None, proto=socket.IPPROTO_TCP)
    except (socket.gaierror, OSError, UnicodeError) as exc:
        raise ResolutionError(domain, exc) from exc
    ips = {info[4][0].split("%", 1)[0] for info in infos
           if info[0] in (socket.AF_INET, socket.AF_INET6)}
    if not ips:
        raise ResolutionError(domain, "no A/AAAA answers")
    return DnsSnapshot(domain, frozenset(ips), time.time())


def resolve_due(store: MappingStore, domains: Iterable[str], batch_id: int, now: float,
                min_interval_seconds: int = DEFAULT_MIN_INTERVAL,
                resolver: Callable[[str], DnsSnapshot] = resolve_live):
    """Resolve every due domain into ``store``.

    Failures are collected and returned instead of raised, so one bad
    domain never stops a crawl batch.  Returns ``(resolved, failures)``.
    """
    resolved, failures = [], []
    for domain in domains:
        if not store.due_for_resolution(domain, now, min_interval_seconds):
            continue
        try:
            snap = resolver(domain)
        except ResolutionError as exc:
            failures.append(exc)
            continue
        store.ingest_snapshot(snap, batch_id)
        resolved.append(snap.domain)
    return resolved, failures
