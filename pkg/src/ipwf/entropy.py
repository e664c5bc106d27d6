"""Per-domain and per-IP information content over a website corpus."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .fingerprint import DomainFingerprint


class EntropyError(ValueError):
    pass


@dataclass(frozen=True)
class EntropyTable:
    total_websites: int
    domain_bits: Mapping[str, float] = field(default_factory=dict)
    ip_bits: Mapping[str, float] = field(default_factory=dict)

    def scaled(self, factor: float) -> "EntropyTable":
        return EntropyTable(self.total_websites,
                            {k: v * factor for k, v in self.domain_bits.items()},
                            {k: v * factor for k, v in self.ip_bits.items()})


def domain_entropy(counts: Mapping[str, int], total_websites: int) -> dict[str, float]:
    """Bits gained by seeing each domain: ``-log2(count / total)``."""
    if total_websites <= 0:
        raise EntropyError("total_websites must be positive")
    out = {}
    for domain, c in counts.items():
        if not 1 <= c <= total_websites:
            raise EntropyError(f"count {c} for {domain} outside 1..{total_websites}")
        out[domain] = -math.log2(c / total_websites)
    return out


def website_counts(fingerprints: Iterable[DomainFingerprint]) -> tuple[Counter, int]:
    """Number of websites referencing each domain (primary included)."""
    counts: Counter = Counter()
    n = 0
    for df in fingerprints:
        counts.update(df.all_domains)
        n += 1
    return counts, n


def ip_entropy(store, batch_id: int, domain_bits: Mapping[str, float]) -> dict[str, float]:
    """Mean bits of the corpus domains hosted on each IP at ``batch_id``.

    IPs hosting no corpus domain are left out.
    """
    out = {}
    for ip, domains in store.domains_by_ip(batch_id).items():
        vals = sorted(domain_bits[d] for d in domains if d in domain_bits)
        if vals:
            # clamp: the rounded mean of equal values can drift by one ulp
            out[ip] = min(max(math.fsum(vals) / len(vals), vals[0]), vals[-1])
    return out


def build_entropy_table(fingerprints: Iterable[DomainFingerprint], store,
                        batch_id: int) -> EntropyTable:
    counts, n = website_counts(fingerprints)
    if n == 0:
        raise EntropyError("empty corpus")
    bits = domain_entropy(counts, n)
    return EntropyTable(n, bits, ip_entropy(store, batch_id, bits))
