"""Domain-based and IP-based website fingerprints."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .cache import CachePolicy
from .mapping_store import MappingStore, canonical_domain

N_BUCKETS = 3


class FingerprintError(ValueError):
    pass


class Bucket(enum.IntEnum):
    """Rendering-path phase in which a request was issued."""
    LOADING = 0
    CONTENT_LOADED = 1
    COMPLETE = 2

    @property
    def label(self) -> str:
        return ("loading", "contentloaded", "complete")[self]

    @classmethod
    def from_label(cls, label: str) -> "Bucket":
        try:
            return cls(("loading", "contentloaded", "complete").index(str(label).lower()))
        except ValueError:
            raise FingerprintError(f"unknown bucket label {label!r}") from None


@dataclass(frozen=True)
class Request:
    domain: str
    bucket: Bucket
    t_offset_ms: int = 0
    cache: CachePolicy = field(default_factory=CachePolicy)

    def __post_init__(self):
        object.__setattr__(self, "domain", canonical_domain(self.domain))
        object.__setattr__(self, "bucket", Bucket(self.bucket))
        if self.t_offset_ms < 0:
            raise FingerprintError(f"negative offset for {self.domain}")


@dataclass(frozen=True)
class BrowseObservation:
    website_id: str
    batch_id: int
    primary_domain: str
    requests: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "primary_domain", canonical_domain(self.primary_domain))
        object.__setattr__(self, "requests", tuple(self.requests))


@dataclass(frozen=True)
class DomainFingerprint:
    website_id: str
    primary: str
    buckets: tuple  # three frozensets of domains

    @property
    def flat_secondary(self) -> frozenset:
        return frozenset().union(*self.buckets)

    @property
    def all_domains(self) -> frozenset:
        return self.flat_secondary | {self.primary}


@dataclass(frozen=True)
class IpFingerprint:
    website_id: str
    primary_ips: frozenset
    bucket_ips: tuple  # three frozensets of IPs
    built_at_batch: int = 0
    unresolved: frozenset = frozenset()

    @property
    def secondary_ips(self) -> frozenset:
        return frozenset().union(*self.bucket_ips)


def build_domain_fingerprint(obs: BrowseObservation) -> DomainFingerprint:
    buckets = [set() for _ in range(N_BUCKETS)]
    for req in obs.requests:
        # self-hosted sub-resources already live in the primary part
        if req.domain != obs.primary_domain:
            buckets[req.bucket].add(req.domain)
    return DomainFingerprint(obs.website_id, obs.primary_domain,
                             tuple(frozenset(b) for b in buckets))


def resolve_fingerprint(df: DomainFingerprint, store: MappingStore, batch_id: int) -> IpFingerprint:
    """Replace every domain by its IPs at ``batch_id``.

    Secondary domains missing from the store are listed in ``unresolved``.
    """
    primary = store.ips_of(df.primary, batch_id)
    if not primary:
        raise FingerprintError(
            f"primary domain {df.primary} of {df.website_id} unresolved at batch {batch_id}")
    cache: dict[str, set] = {}
    unresolved = set()
    bucket_ips = []
    for bucket in df.buckets:
        ips = set()
        for d in bucket:
            if d not in cache:
                cache[d] = store.ips_of(d, batch_id)
                if not cache[d]:
                    unresolved.add(d)
            ips |= cache[d]
        bucket_ips.append(frozenset(ips))
    return IpFingerprint(df.website_id, frozenset(primary), tuple(bucket_ips),
                         batch_id, frozenset(unresolved))


def merge_batches(fps: Sequence[IpFingerprint]) -> IpFingerprint:
    """Union of fingerprints of one website resolved at different batches."""
    if not fps:
        raise FingerprintError("nothing to merge")
    ids = {fp.website_id for fp in fps}
    if len(ids) != 1:
        raise FingerprintError(f"cannot merge fingerprints of different websites: {sorted(ids)}")
    return IpFingerprint(
        fps[0].website_id,
        frozenset().union(*(fp.primary_ips for fp in fps)),
        tuple(frozenset().union(*(fp.bucket_ips[b] for fp in fps)) for b in range(N_BUCKETS)),
        max(fp.built_at_batch for fp in fps),
        frozenset().union(*(fp.unresolved for fp in fps)),
    )


def merge_by_website(fps: Iterable[IpFingerprint]) -> list[IpFingerprint]:
    groups: dict[str, list] = {}
    for fp in fps:
        groups.setdefault(fp.website_id, []).append(fp)
    return [g[0] if len(g) == 1 else merge_batches(g) for _, g in sorted(groups.items())]


def build_ip_fingerprints(observations: Iterable[BrowseObservation], store: MappingStore,
                          batch_id: int, *, skip_unresolved: bool = True):
    """Build resolved fingerprints for every observation.

    Returns ``(fingerprints, skipped_website_ids)``; websites whose primary
    domain is unresolved are skipped unless ``skip_unresolved`` is false.
    """
    fps, skipped = [], []
    for obs in observations:
        try:
            fps.append(resolve_fingerprint(build_domain_fingerprint(obs), store, batch_id))
        except FingerprintError:
            if not skip_unresolved:
                raise
            skipped.append(obs.website_id)
    return merge_by_website(fps), skipped
