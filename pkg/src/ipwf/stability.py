"""Fingerprint drift between batches and accuracy of aged fingerprints."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .matcher import Matcher, MatchMode, Trace

DEFAULT_STABLE_THRESHOLD = 0.2


class StabilityError(ValueError):
    pass


@dataclass(frozen=True)
class DifferenceReport:
    website_id: str
    t0_batch: int
    t1_batch: int
    degree: float
    set_kind: str = "domains"  # or "ips"


@dataclass(frozen=True)
class AgingRow:
    age_batches: int
    accuracy: float
    n: int


def difference_degree(set_t0, set_t1) -> float:
    """Share of the union that is not in the intersection (Jaccard distance)."""
    a, b = set(set_t0), set(set_t1)
    union = len(a | b)
    if union == 0:
        raise StabilityError("difference degree of two empty sets is undefined")
    return (union - len(a & b)) / union


def split_stable_unstable(reports: Iterable[DifferenceReport],
                          threshold: float = DEFAULT_STABLE_THRESHOLD):
    """Partition websites by whether every report stays below ``threshold``."""
    if not 0 <= threshold <= 1:
        raise StabilityError("threshold must lie in [0, 1]")
    worst: dict[str, float] = {}
    for r in reports:
        worst[r.website_id] = max(r.degree, worst.get(r.website_id, 0.0))
    stable = {w for w, d in worst.items() if d < threshold}
    return stable, set(worst) - stable


def drift_reports(sets_by_batch: dict, set_kind: str = "domains") -> list[DifferenceReport]:
    """Compare each website's earliest set with every later one.

    ``sets_by_batch`` maps website -> {batch: set}.
    """
    out = []
    for site in sorted(sets_by_batch):
        per = sets_by_batch[site]
        batches = sorted(per)
        t0 = batches[0]
        for t1 in batches[1:]:
            if per[t0] or per[t1]:
                out.append(DifferenceReport(site, t0, t1,
                                            difference_degree(per[t0], per[t1]), set_kind))
    return out


def accuracy(results) -> float:
    results = list(results)
    if not results:
        raise StabilityError("no labeled traces")
    return sum(r.correct for r in results) / len(results)


def aged_accuracy(matcher: Matcher, traces: Sequence[Trace], mode: MatchMode | str = "bucketed",
                  built_at_batch: int | None = None) -> list[AgingRow]:
    """Accuracy per fingerprint age (trace batch minus build batch).

    Ties count as misses.  Traces without a batch are treated as age 0.
    """
    labeled = [t for t in traces if t.truth is not None]
    if not labeled:
        raise StabilityError("no labeled traces")
    if built_at_batch is None:
        built_at_batch = max(fp.built_at_batch for fp in matcher.db.fingerprints)
    by_age = defaultdict(list)
    for t in labeled:
        age = 0 if t.batch is None else t.batch - built_at_batch
        by_age[age].append(matcher.match(t, mode).correct)
    return [AgingRow(age, sum(v) / len(v), len(v)) for age, v in sorted(by_age.items())]
