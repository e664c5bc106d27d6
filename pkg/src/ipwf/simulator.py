"""Synthetic website corpora, DNS histories and labeled traces.

Everything is a pure function of the config (seed included).  Random
draws come from numpy's PCG64 bit generator; every website, batch and
trace gets its own substream keyed by ``SeedSequence([seed, tag, ...])``,
so output does not depend on generation order.
"""
from __future__ import annotations

import dataclasses
import ipaddress
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cache import CachePolicy, freshness_timeline, needs_connection
from .entropy import build_entropy_table
from .fingerprint import (N_BUCKETS, Bucket, BrowseObservation, Request,
                          build_domain_fingerprint, build_ip_fingerprints)
from .mapping_store import DnsSnapshot, MappingStore
from .matcher import Matcher, Trace, TraceEvent
from .cache import build_cache_index

_TAG_GLOBAL, _TAG_SITE, _TAG_CHURN, _TAG_TRACE, _TAG_DOMAIN_CHURN = range(5)
_IP_BASE = int(ipaddress.IPv4Address("10.0.0.0"))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusConfig:
    n_websites: int = 100
    # site-unique secondary domains: Poisson mean, clipped to the max
    secondary_domains_per_site: float = 10.0
    secondary_domains_max: int = 20
    # shared third-party services; service k is included with
    # probability shared_inclusion_max / (k + 1) ** shared_inclusion_decay
    shared_service_domains: int = 10
    shared_inclusion_max: float = 0.55
    shared_inclusion_decay: float = 1.0
    # fraction of primaries living on shared IPs, co_location_degree per IP
    cohosted_primary_fraction: float = 0.0
    co_location_degree: int = 1
    secondary_co_location_degree: int = 1
    ips_per_domain: int = 1
    churn_rate_per_batch: float = 0.0
    primary_churn_rate: float = 0.0
    domain_churn_rate: float = 0.0
    multi_bucket_prob: float = 0.1
    n_batches: int = 2
    uncachable_fraction: float = 0.139
    revalidate_fraction: float = 0.219
    cacheable_lifetimes: tuple = (60, 300, 3600, 86400, 2592000, 31536000)
    adblock_removal_set: tuple = ()  # indices into the shared services
    bucket_windows_ms: tuple = ((0, 100), (300, 400), (800, 900))
    first_connection_gap_ms: int = 100
    batch_seconds: int = 216000
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cacheable_lifetimes", tuple(self.cacheable_lifetimes))
        object.__setattr__(self, "adblock_removal_set", tuple(self.adblock_removal_set))
        object.__setattr__(self, "bucket_windows_ms",
                           tuple(tuple(w) for w in self.bucket_windows_ms))
        self.validate()

    def validate(self):
        if self.n_websites < 1:
            raise ConfigError("n_websites must be >= 1")
        for name in ("secondary_domains_max", "shared_service_domains", "n_batches",
                     "first_connection_gap_ms", "batch_seconds"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.n_batches < 1:
            raise ConfigError("n_batches must be >= 1")
        if self.secondary_domains_per_site < 0:
            raise ConfigError("secondary_domains_per_site must be >= 0")
        for name in ("shared_inclusion_max", "cohosted_primary_fraction", "churn_rate_per_batch",
                     "primary_churn_rate", "domain_churn_rate", "multi_bucket_prob",
                     "uncachable_fraction", "revalidate_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.uncachable_fraction + self.revalidate_fraction > 1.0 + 1e-12:
            raise ConfigError("uncachable_fraction + revalidate_fraction exceeds 1")
        if self.cacheable_fraction > 0 and not self.cacheable_lifetimes:
            raise ConfigError("cacheable_lifetimes is empty")
        if any(v <= 0 for v in self.cacheable_lifetimes):
            raise ConfigError("cacheable lifetimes must be positive")
        if self.co_location_degree < 1 or self.secondary_co_location_degree < 1:
            raise ConfigError("co-location degrees must be >= 1")
        if self.ips_per_domain < 1:
            raise ConfigError("ips_per_domain must be >= 1")
        n_cohosted = self.n_cohosted_primaries
        if n_cohosted and self.co_location_degree > n_cohosted:
            raise ConfigError(
                f"co_location_degree {self.co_location_degree} exceeds the "
                f"{n_cohosted} co-hosted primary domains")
        if any(not 0 <= k < self.shared_service_domains for k in self.adblock_removal_set):
            raise ConfigError("adblock_removal_set refers to unknown shared services")
        if len(self.bucket_windows_ms) != N_BUCKETS or any(
                lo < 0 or hi <= lo for lo, hi in self.bucket_windows_ms):
            raise ConfigError("bucket_windows_ms needs three non-empty [lo, hi) windows")

    @property
    def cacheable_fraction(self) -> float:
        return max(0.0, 1.0 - self.uncachable_fraction - self.revalidate_fraction)

    @property
    def n_cohosted_primaries(self) -> int:
        return int(round(self.cohosted_primary_fraction * self.n_websites))

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["cacheable_lifetimes"] = list(self.cacheable_lifetimes)
        d["adblock_removal_set"] = list(self.adblock_removal_set)
        d["bucket_windows_ms"] = [list(w) for w in self.bucket_windows_ms]
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)

    def replace(self, **changes) -> "CorpusConfig":
        return dataclasses.replace(self, **changes)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *key])))


@dataclass
class _Site:
    website_id: str
    primary: str
    # (domain, bucket, t_offset_ms, policy, kind) with kind "unique"/"shared"
    requests: list = field(default_factory=list)


@dataclass
class GroundTruth:
    """Generation-time facts: which site each trace shows and every mapping."""
    mappings: dict  # batch -> {domain: frozenset(ips)}
    trace_sites: dict = field(default_factory=dict)  # trace_id -> website_id
    trace_buckets: dict = field(default_factory=dict)  # trace_id -> bucket per secondary event


class SimCorpus:
    def __init__(self, config: CorpusConfig, sites_by_batch: list, mappings: dict,
                 shared_domains: list):
        self.config = config
        self._sites_by_batch = sites_by_batch
        self.truth = GroundTruth(mappings)
        self.shared_domains = shared_domains

    @property
    def n_batches(self) -> int:
        return self.config.n_batches

    @property
    def website_ids(self) -> list[str]:
        return [s.website_id for s in self._sites_by_batch[0]]

    @property
    def removal_domains(self) -> frozenset:
        return frozenset(self.shared_domains[k] for k in self.config.adblock_removal_set)

    def observations(self, batch_id: int | None = None) -> list[BrowseObservation]:
        batches = range(self.n_batches) if batch_id is None else [batch_id]
        out = []
        for b in batches:
            for s in self._sites_by_batch[b]:
                reqs = tuple(Request(d, Bucket(bk), t, pol) for d, bk, t, pol, _ in s.requests)
                out.append(BrowseObservation(s.website_id, b, s.primary, reqs))
        return out

    def snapshots(self, batch_id: int | None = None) -> list[tuple[int, DnsSnapshot]]:
        batches = range(self.n_batches) if batch_id is None else [batch_id]
        out = []
        for b in batches:
            at = b * self.config.batch_seconds
            for domain, ips in sorted(self.truth.mappings[b].items()):
                out.append((b, DnsSnapshot(domain, ips, at)))
        return out

    def store(self, upto_batch: int | None = None) -> MappingStore:
        store = MappingStore()
        last = self.n_batches - 1 if upto_batch is None else upto_batch
        for b in range(last + 1):
            for domain, ips in sorted(self.truth.mappings[b].items()):
                store.ingest_snapshot(DnsSnapshot(domain, ips, b * self.config.batch_seconds), b)
        return store.seal()

    def blocklist_ips(self, batch_id: int) -> frozenset:
        m = self.truth.mappings[batch_id]
        return frozenset().union(*(m[d] for d in self.removal_domains if d in m))

    def traces(self, batch_id: int, *, revisit_elapsed: float = 0, adblock: bool = False,
               jitter_ms: int = 10) -> list[Trace]:
        return generate_traces(self, batch_id, revisit_elapsed=revisit_elapsed,
                               adblock=adblock, jitter_ms=jitter_ms)

    def bucket_labels(self, batch_id: int, website_id: str) -> dict:
        """Generated bucket per (domain, t_offset) of one site, for recovery checks."""
        for s in self._sites_by_batch[batch_id]:
            if s.website_id == website_id:
                return {(d, t): bk for d, bk, t, _, _ in s.requests}
        raise KeyError(website_id)


def _policy_table(cfg: CorpusConfig) -> list[CachePolicy]:
    return ([CachePolicy.parse("no-store"), CachePolicy.parse("no-cache")]
            + [CachePolicy.parse(f"max-age={life}") for life in cfg.cacheable_lifetimes])


def _draw_policies(rng: np.random.Generator, cfg: CorpusConfig, n: int) -> np.ndarray:
    """Indices into :func:`_policy_table`."""
    u = rng.random(n)
    life = rng.integers(0, max(len(cfg.cacheable_lifetimes), 1), size=n)
    out = 2 + life
    out[u < cfg.uncachable_fraction + cfg.revalidate_fraction] = 1
    out[u < cfg.uncachable_fraction] = 0
    return out


def _draw_times(rng: np.random.Generator, cfg: CorpusConfig, buckets: np.ndarray) -> np.ndarray:
    win = np.asarray(cfg.bucket_windows_ms, dtype=np.int64)
    lo, hi = win[buckets, 0], win[buckets, 1]
    return lo + np.floor(rng.random(len(buckets)) * (hi - lo)).astype(np.int64)


def _site_requests(rng, cfg: CorpusConfig, policies: list, unique: list[str],
                   shared: list[tuple[str, int]]):
    n = len(unique)
    buckets = rng.integers(0, N_BUCKETS, size=n)
    # keep every rendering phase populated once a site has three domains
    if n >= N_BUCKETS:
        slots = np.sort(rng.permutation(n)[:N_BUCKETS])
        buckets[slots] = np.arange(N_BUCKETS)
    extra = rng.random(n) < cfg.multi_bucket_prob
    shift = rng.integers(1, N_BUCKETS, size=n)
    tagged = []
    for j, d in enumerate(unique):
        tagged.append((d, int(buckets[j]), "unique"))
        if extra[j]:
            tagged.append((d, int((buckets[j] + shift[j]) % N_BUCKETS), "unique"))
    tagged += [(d, int(b), "shared") for d, b in shared]
    if not tagged:
        return []
    times = _draw_times(rng, cfg, np.array([b for _, b, _ in tagged], dtype=np.int64))
    pols = _draw_policies(rng, cfg, len(tagged))
    return [(d, b, int(t), policies[p], kind)
            for (d, b, kind), t, p in zip(tagged, times, pols)]


def generate_corpus(config: CorpusConfig) -> SimCorpus:
    """Generate websites, their per-batch observations and DNS mappings."""
    cfg = config
    seed = cfg.rng_seed
    width = max(5, len(str(cfg.n_websites - 1)))
    g = _rng(seed, _TAG_GLOBAL)

    shared = [f"svc{k:03d}.shared.example" for k in range(cfg.shared_service_domains)]
    shared_bucket = [int(b) for b in g.integers(0, N_BUCKETS, size=len(shared))]
    shared_prob = [cfg.shared_inclusion_max / (k + 1) ** cfg.shared_inclusion_decay
                   for k in range(len(shared))]

    # batch-0 site composition
    policies = _policy_table(cfg)
    sites0 = []
    for i in range(cfg.n_websites):
        r = _rng(seed, _TAG_SITE, i)
        wid = f"site{i:0{width}d}"
        n_unique = min(int(r.poisson(cfg.secondary_domains_per_site)), cfg.secondary_domains_max)
        unique = [f"s{j}.{wid}.example" for j in range(n_unique)]
        incl = r.random(len(shared))
        used = [(shared[k], shared_bucket[k]) for k in range(len(shared)) if incl[k] < shared_prob[k]]
        sites0.append(_Site(wid, f"{wid}.example", _site_requests(r, cfg, policies, unique, used)))

    # domain churn: site-unique domains swapped for fresh names
    sites_by_batch = [sites0]
    for b in range(1, cfg.n_batches):
        prev_batch = sites_by_batch[-1]
        cur = []
        for i, s in enumerate(prev_batch):
            r = _rng(seed, _TAG_DOMAIN_CHURN, b, i)
            names = sorted({d for d, *_rest, kind in s.requests if kind == "unique"})
            rename = {d: f"{d.split('.', 1)[0]}v{b}.{s.primary}"
                      for d in names if r.random() < cfg.domain_churn_rate}
            cur.append(_Site(s.website_id, s.primary,
                             [(rename.get(d, d), bk, t, pol, kind)
                              for d, bk, t, pol, kind in s.requests]))
        sites_by_batch.append(cur)

    # hosting groups share IPs; each group re-rolls as a whole
    order = [int(x) for x in g.permutation(cfg.n_websites)]
    cohosted = sorted(order[:cfg.n_cohosted_primaries])
    groups: list[tuple[list[str], bool]] = []  # (domains, is_primary)
    cohosted_set = set(cohosted)
    deg = cfg.co_location_degree
    for k in range(0, len(cohosted), deg):
        groups.append(([sites0[i].primary for i in cohosted[k:k + deg]], True))
    for i, s in enumerate(sites0):
        if i not in cohosted_set:
            groups.append(([s.primary], True))
    groups.extend(([d], False) for d in shared)
    uniq0 = sorted({d for s in sites0 for d, *_r, kind in s.requests if kind == "unique"})
    sdeg = cfg.secondary_co_location_degree
    groups.extend((uniq0[k:k + sdeg], False) for k in range(0, len(uniq0), sdeg))

    counter = itertools.count(1)

    def fresh():
        return frozenset(str(ipaddress.IPv4Address(_IP_BASE + next(counter)))
                         for _ in range(cfg.ips_per_domain))

    group_ips = [fresh() for _ in groups]
    known = set(uniq0)
    mappings = {}
    for b in range(cfg.n_batches):
        if b > 0:
            r = _rng(seed, _TAG_CHURN, b)
            draws = r.random(len(groups))
            for gi, (domains, is_primary) in enumerate(groups):
                rate = cfg.primary_churn_rate if is_primary else cfg.churn_rate_per_batch
                if draws[gi] < rate:
                    group_ips[gi] = fresh()
            new = sorted({d for s in sites_by_batch[b] for d, *_r, kind in s.requests
                          if kind == "unique"} - known)
            for d in new:
                groups.append(([d], False))
                group_ips.append(fresh())
                known.add(d)
        live = {s.primary for s in sites_by_batch[b]}
        live |= {d for s in sites_by_batch[b] for d, *_r in s.requests}
        m = {}
        for (domains, _), ips in zip(groups, group_ips):
            for d in domains:
                if d in live:
                    m[d] = ips
        mappings[b] = m
    return SimCorpus(cfg, sites_by_batch, mappings, shared)


def generate_traces(corpus: SimCorpus, batch_id: int, *, revisit_elapsed: float = 0,
                    adblock: bool = False, jitter_ms: int = 10) -> list[Trace]:
    """One labeled trace per website at ``batch_id``.

    ``adblock`` drops requests to the removal set; ``revisit_elapsed`` drops
    requests still fresh in the browser cache.
    """
    cfg = corpus.config
    if not 0 <= batch_id < corpus.n_batches:
        raise ConfigError(f"batch {batch_id} not generated")
    if jitter_ms < 0:
        raise ConfigError("jitter_ms must be >= 0")
    if jitter_ms >= cfg.first_connection_gap_ms:
        raise ConfigError("jitter_ms must stay below first_connection_gap_ms")
    m = corpus.truth.mappings[batch_id]
    removed = corpus.removal_domains if adblock else frozenset()
    out = []
    for i, s in enumerate(corpus._sites_by_batch[batch_id]):
        r = _rng(cfg.rng_seed, _TAG_TRACE, batch_id, i)
        n = len(s.requests)
        pick = r.random(n + 1)
        jit = r.integers(-jitter_ms, jitter_ms + 1, size=n) if jitter_ms else np.zeros(n, np.int64)
        primary_ips = sorted(m[s.primary])
        events = [(0, 0, primary_ips[int(pick[0] * len(primary_ips))], -1)]
        for seq, (d, bk, t, pol, _kind) in enumerate(s.requests, start=1):
            if d in removed or not needs_connection(freshness_timeline(pol), revisit_elapsed):
                continue
            ips = sorted(m[d])
            ip = ips[int(pick[seq] * len(ips))]
            events.append((cfg.first_connection_gap_ms + t + int(jit[seq - 1]), seq, ip, bk))
        events.sort()
        tid = f"{s.website_id}@b{batch_id}"
        corpus.truth.trace_sites[tid] = s.website_id
        corpus.truth.trace_buckets[tid] = tuple(e[3] for e in events[1:])
        out.append(Trace(tid, tuple(TraceEvent(e[0], e[2]) for e in events),
                         s.website_id, batch_id))
    return out


# ---------------------------------------------------------------------------
# experiments

@dataclass(frozen=True)
class Experiment:
    build_batch: int = 0
    trace_batch: int = 0
    mode: str = "bucketed"
    revisit_elapsed: float = 0
    adblock: bool = False
    jitter_ms: int = 10


def run_experiment(config: CorpusConfig, exp: Experiment = Experiment()) -> float:
    """Generate, build fingerprints, match and return accuracy."""
    corpus = generate_corpus(config)
    store = corpus.store()
    obs = corpus.observations(exp.build_batch)
    fps, _ = build_ip_fingerprints(obs, store, exp.build_batch)
    entropy = build_entropy_table((build_domain_fingerprint(o) for o in obs), store,
                                  exp.build_batch)
    cache_index = build_cache_index(obs, store) if exp.revisit_elapsed > 0 else None
    matcher = Matcher(fps, entropy, cache_index=cache_index)
    traces = corpus.traces(exp.trace_batch, revisit_elapsed=exp.revisit_elapsed,
                           adblock=exp.adblock, jitter_ms=exp.jitter_ms)
    mode = exp.mode
    if mode == "auto":
        from .matcher import AdBlockDetector
        block = corpus.blocklist_ips(exp.trace_batch)
        matcher.adblock = AdBlockDetector(block) if block else None
    results = [matcher.match(t, mode, exp.revisit_elapsed) for t in traces]
    return sum(r.correct for r in results) / len(results)


def expand_grid(params: dict) -> list[dict]:
    if not params:
        return [{}]
    names = sorted(params)
    return [dict(zip(names, combo)) for combo in itertools.product(*(params[n] for n in names))]


def sweep(base: CorpusConfig, params: dict, seeds: Sequence[int] | int,
          exp: Experiment = Experiment()) -> list[dict]:
    """Mean and spread of accuracy over seeds at every grid point."""
    if isinstance(seeds, int):
        seeds = range(seeds)
    seeds = list(seeds)
    points = expand_grid(params)
    if not points or not seeds:
        raise ConfigError("sweep grid is empty")
    rows = []
    for point in points:
        acc = np.array([run_experiment(base.replace(**point, rng_seed=int(s)), exp)
                        for s in seeds], dtype=np.float64)
        rows.append({**point, "mode": exp.mode, "n_seeds": len(seeds),
                     "mean_accuracy": float(acc.mean()), "std_accuracy": float(acc.std()),
                     "min_accuracy": float(acc.min()), "max_accuracy": float(acc.max())})
    return rows
