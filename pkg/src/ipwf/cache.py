"""HTTP freshness lifetimes and the per-(website, IP) cache index."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

UNCACHABLE = -1
REVALIDATE = 0

_NUMERIC = frozenset({"max-age", "s-maxage", "min-fresh", "max-stale", "stale-while-revalidate",
                      "stale-if-error"})


class CacheParseError(ValueError):
    pass


@dataclass(frozen=True)
class CachePolicy:
    directives: tuple = ()
    expires_at: int | None = None
    response_date: int | None = None

    @classmethod
    def parse(cls, cc: str | None, expires: int | None = None,
              date: int | None = None) -> "CachePolicy":
        return cls(parse_cache_control(cc or ""), expires, date)

    def get(self, name: str, default=None):
        for token, value in self.directives:
            if token == name:
                return value
        return default

    def has(self, name: str) -> bool:
        return any(token == name for token, _ in self.directives)

    @property
    def header(self) -> str:
        return ", ".join(t if v is None else f"{t}={v}" for t, v in self.directives)

    def to_json(self) -> dict:
        return {"cc": self.header, "expires": self.expires_at, "date": self.response_date}

    @classmethod
    def from_json(cls, obj: dict | None) -> "CachePolicy":
        if not obj:
            return cls()
        return cls.parse(obj.get("cc"), obj.get("expires"), obj.get("date"))


def parse_cache_control(header: str) -> tuple:
    out = []
    for raw in header.split(","):
        raw = raw.strip()
        if not raw:
            continue
        token, sep, value = raw.partition("=")
        token = token.strip().lower()
        if not token:
            raise CacheParseError(f"empty directive name in {raw!r}")
        if not sep:
            out.append((token, None))
            continue
        value = value.strip().strip('"')
        if token in _NUMERIC:
            if not value.isdigit():
                raise CacheParseError(f"directive {token!r} needs a non-negative integer, got {value!r}")
            out.append((token, int(value)))
        else:
            out.append((token, value))
    return tuple(out)


def freshness_timeline(policy: CachePolicy) -> int:
    """Seconds a response may be reused without contacting its origin.

    -1 means it may not be stored at all, 0 that every reuse needs
    revalidation.  Precedence: no-store, no-cache, s-maxage, max-age,
    Expires minus Date; anything else counts as 0.
    """
    if policy.has("no-store"):
        return UNCACHABLE
    if policy.has("no-cache"):
        return REVALIDATE
    for name in ("s-maxage", "max-age"):
        value = policy.get(name)
        if value is not None:
            return int(value)
    if policy.expires_at is not None and policy.response_date is not None:
        return max(int(policy.expires_at) - int(policy.response_date), REVALIDATE)
    return REVALIDATE


def freshness_class(value: int) -> str:
    if value == UNCACHABLE:
        return "uncachable"
    if value == REVALIDATE:
        return "revalidate"
    return "cacheable"


def needs_connection(freshness: int, revisit_elapsed_s: float) -> bool:
    """Whether a resource forces a connection when revisited after the gap.

    ``revisit_elapsed_s <= 0`` stands for a first visit.
    """
    if revisit_elapsed_s <= 0:
        return True
    return freshness <= 0 or freshness <= revisit_elapsed_s


def build_cache_index(observations: Iterable, store, batch_id: int | None = None) -> dict:
    """Map ``(website, ip)`` to the smallest freshness among resources on that IP.

    IPs come from the mapping store at each observation's batch (or at
    ``batch_id`` when given).
    """
    index: dict[tuple[str, str], int] = {}
    for obs in observations:
        b = obs.batch_id if batch_id is None else batch_id
        for req in obs.requests:
            f = freshness_timeline(req.cache)
            for ip in store.ips_of(req.domain, b):
                key = (obs.website_id, ip)
                cur = index.get(key)
                if cur is None or f < cur:
                    index[key] = f
    return index
