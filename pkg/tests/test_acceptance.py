"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion is reported rather than hidden.
"""
import random
import time
from fractions import Fraction

import numpy as np

from ipwf import io as fio
from ipwf.cache import CachePolicy, build_cache_index, freshness_timeline
from ipwf.entropy import EntropyTable, build_entropy_table, domain_entropy
from ipwf.fingerprint import IpFingerprint, build_domain_fingerprint, build_ip_fingerprints
from ipwf.matcher import Matcher, Trace, cluster_labels
from ipwf.simulator import CorpusConfig, Experiment, generate_corpus, run_experiment
from ipwf.stability import aged_accuracy, difference_degree

import oracle
from conftest import make_store, obs

N_CORPUS = 208_191
# websites per domain and the published bits, from the lowest-entropy table
LOWEST_ENTROPY = [(114_000, 0.87), (102_000, 1.03), (102_000, 1.04), (76_000, 1.44),
                  (72_000, 1.53), (64_000, 1.71), (53_000, 1.97), (53_000, 1.98),
                  (49_000, 2.09), (34_000, 2.62)]


def _build(corpus, batch):
    store = corpus.store()
    observations = corpus.observations(batch)
    fps, _ = build_ip_fingerprints(observations, store, batch)
    ent = build_entropy_table([build_domain_fingerprint(o) for o in observations], store, batch)
    return store, observations, fps, ent


def test_c01_entropy_fidelity(criterion):
    t = time.perf_counter()
    counts = {f"d{i}": c for i, (c, _) in enumerate(LOWEST_ENTROPY)}
    bits = domain_entropy(counts, N_CORPUS)
    err = max(abs(bits[f"d{i}"] - want) for i, (_, want) in enumerate(LOWEST_ENTROPY))
    dt = time.perf_counter() - t
    ok = err <= 0.02 and dt < 1.0
    criterion(1, ok, f"max |err| = {err:.4f} bits over 10 rows (tol 0.02), {dt * 1e3:.1f} ms")
    assert ok


def test_c02_unique_domain_entropy(criterion):
    t = time.perf_counter()
    v = domain_entropy({"u": 1}, N_CORPUS)["u"]
    dt = time.perf_counter() - t
    ok = abs(v - 17.67) <= 0.05 and dt < 0.1
    criterion(2, ok, f"c=1 -> {v:.4f} bits (17.67 +/- 0.05), {dt * 1e3:.2f} ms")
    assert ok


def test_c03_difference_degree_metric(criterion):
    t = time.perf_counter()
    rng = random.Random(3)
    universe = range(80)
    failures = 0

    def rand_set():
        return frozenset(rng.sample(universe, rng.randint(0, 50)))

    def exact(a, b):
        u = len(a | b)
        return Fraction(u - len(a & b), u) if u else Fraction(0)

    for _ in range(10_000):
        a, b, c = rand_set(), rand_set(), rand_set()
        if not (a or b):
            continue
        d = difference_degree(a, b)
        if not (0.0 <= d <= 1.0 and d == difference_degree(b, a)):
            failures += 1
        if (d == 0.0) != (a == b) or difference_degree(a, a | {0}) != float(exact(a, a | {0})):
            failures += 1
        if d != float(exact(a, b)):
            failures += 1
        if a or c:
            if exact(a, c) > exact(a, b) + exact(b, c):
                failures += 1
            lhs = difference_degree(a, c)
            rhs = d + (difference_degree(b, c) if b or c else 0.0)
            if lhs > rhs:
                failures += 1
    dt = time.perf_counter() - t
    ok = failures == 0 and dt < 5.0
    criterion(3, ok, f"10000 triples, {failures} violations, {dt:.2f} s")
    assert ok


def test_c04_oracle_equivalence(criterion):
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    traces_checked = mismatches = 0
    for k in range(100):
        churn = (0.0, 0.3)[k % 2]
        n = int(rng.integers(20, 1001)) if k % 10 == 0 else int(rng.integers(20, 301))
        cfg = CorpusConfig(n_websites=n, secondary_domains_max=15, shared_service_domains=5,
                           churn_rate_per_batch=churn, cohosted_primary_fraction=0.3,
                           co_location_degree=3, secondary_co_location_degree=2,
                           multi_bucket_prob=0.2, n_batches=2, rng_seed=k)
        corpus = generate_corpus(cfg)
        _, _, fps, ent = _build(corpus, 0)
        m = Matcher(fps, ent)
        ref = oracle.merge(fps)
        for tr in corpus.traces(1, jitter_ms=int(rng.integers(0, 51))):
            got_b, got_k = m.basic(tr), m.bucketed(tr)
            want_b = oracle.predict(oracle.basic_scores(tr, ref, ent.ip_bits))
            want_k = oracle.predict(oracle.bucketed_scores(tr, ref, ent.ip_bits))
            mismatches += (got_b.prediction, got_b.tie) != want_b
            mismatches += (got_k.prediction, got_k.tie) != want_k
            traces_checked += 1
    dt = time.perf_counter() - t
    ok = mismatches == 0 and dt < 120
    criterion(4, ok, f"100 corpora, {traces_checked} traces x 2 modes, {mismatches} mismatches, "
                     f"{dt:.1f} s")
    assert ok


def test_c05_closed_loop(criterion):
    t = time.perf_counter()
    cfg = CorpusConfig(n_websites=500, shared_service_domains=0, churn_rate_per_batch=0.0,
                       n_batches=1, rng_seed=5)
    corpus = generate_corpus(cfg)
    _, _, fps, ent = _build(corpus, 0)
    m = Matcher(fps, ent)
    traces = corpus.traces(0, jitter_ms=0)
    acc = {mode: sum(m.match(tr, mode).correct for tr in traces) / len(traces)
           for mode in ("naive", "basic", "bucketed")}

    # two sites with the same secondary IPs loaded in opposite phases
    two = [IpFingerprint("a", frozenset({"1.0.0.1"}), (frozenset({"2.0.0.1"}), frozenset(),
                                                       frozenset({"2.0.0.2"}))),
           IpFingerprint("b", frozenset({"1.0.0.1"}), (frozenset({"2.0.0.2"}), frozenset(),
                                                       frozenset({"2.0.0.1"})))]
    e2 = EntropyTable(2, {}, {"2.0.0.1": 1.0, "2.0.0.2": 1.0})
    m2 = Matcher(two, e2)
    pair = [Trace("ta", ((0, "1.0.0.1"), (120, "2.0.0.1"), (950, "2.0.0.2")), "a"),
            Trace("tb", ((0, "1.0.0.1"), (130, "2.0.0.2"), (940, "2.0.0.1")), "b")]
    basic_ties = all(m2.match(tr, "basic").tie for tr in pair)
    bucket_acc = sum(m2.match(tr, "bucketed").correct for tr in pair) / 2
    dt = time.perf_counter() - t
    ok = all(v == 1.0 for v in acc.values()) and basic_ties and bucket_acc == 1.0 and dt < 30
    criterion(5, ok, f"500 sites naive/basic/bucketed = {acc['naive']:.3f}/{acc['basic']:.3f}/"
                     f"{acc['bucketed']:.3f}; 2-site basic ties={basic_ties}, "
                     f"bucketed={bucket_acc:.1f}; {dt:.1f} s")
    assert ok


def test_c06_aging_monotonicity(criterion):
    t = time.perf_counter()
    base = CorpusConfig(n_websites=200, cohosted_primary_fraction=0.5, co_location_degree=5,
                        n_batches=2)
    grid = [0.0, 0.25, 0.5, 0.75, 1.0]
    means = []
    for churn in grid:
        accs = []
        for seed in range(30):
            corpus = generate_corpus(base.replace(churn_rate_per_batch=churn, rng_seed=seed))
            _, _, fps, ent = _build(corpus, 0)
            rows = aged_accuracy(Matcher(fps, ent), corpus.traces(1), "bucketed", 0)
            accs.append(rows[0].accuracy)
            assert rows[0].age_batches == 1
        means.append(float(np.mean(accs)))
    dt = time.perf_counter() - t
    ok = all(a >= b for a, b in zip(means, means[1:])) and dt < 300
    criterion(6, ok, "mean aged accuracy " + " >= ".join(f"{m:.4f}" for m in means)
              + f" over 30 seeds; {dt:.1f} s")
    assert ok


def test_c07_primary_persistence(criterion):
    t = time.perf_counter()
    base = CorpusConfig(n_websites=500, churn_rate_per_batch=1.0, primary_churn_rate=0.0,
                        n_batches=2, rng_seed=7)
    unique = run_experiment(base, Experiment(build_batch=0, trace_batch=1, mode="basic"))
    co = base.replace(cohosted_primary_fraction=0.5, co_location_degree=5)
    co_basic = run_experiment(co, Experiment(build_batch=0, trace_batch=1, mode="basic"))
    co_naive = run_experiment(co, Experiment(build_batch=0, trace_batch=1, mode="naive"))
    dt = time.perf_counter() - t
    ok = unique == 1.0 and co_basic >= co_naive and dt < 60
    criterion(7, ok, f"unique primaries basic={unique:.3f}; 50% co-hosted basic={co_basic:.3f} "
                     f">= naive={co_naive:.3f}; {dt:.1f} s")
    assert ok


def test_c08_kmeans_recovery(criterion):
    t = time.perf_counter()
    per_jitter = {}
    for jitter in (0, 10, 25, 50):
        hit = total = 0
        for seed in range(4):
            corpus = generate_corpus(CorpusConfig(n_websites=250, n_batches=1,
                                                  rng_seed=100 + seed))
            for tr in corpus.traces(0, jitter_ms=jitter):
                total += 1
                labels = tuple(int(x) for x in cluster_labels([e.t_ms for e in tr.events[1:]]))
                hit += labels == corpus.truth.trace_buckets[tr.trace_id]
        per_jitter[jitter] = hit / total
    dt = time.perf_counter() - t
    ok = min(per_jitter.values()) >= 0.99 and dt < 30
    criterion(8, ok, "exact recovery over 1000 traces: "
              + ", ".join(f"jitter {j} ms {v:.3f}" for j, v in per_jitter.items())
              + f"; {dt:.1f} s")
    assert ok


def test_c09_cache_semantics(criterion):
    t = time.perf_counter()
    examples = [freshness_timeline(CachePolicy.parse(cc)) for cc in
                ("no-store", "no-cache", "max-age=31536000")]
    ex_ok = examples == [-1, 0, 31_536_000]

    rng = random.Random(9)
    n_sites, n_ips = 200, 400
    choices = ["no-store", "no-cache"] + [f"max-age={v}" for v in (60, 300, 3600, 86400)]
    resources = [(f"w{rng.randrange(n_sites)}", rng.randrange(n_ips), rng.choice(choices))
                 for _ in range(10_000)]
    store = make_store({f"r{i}.com": [f"10.1.{i // 256}.{i % 256}"] for i in range(n_ips)})
    observations = [obs(w, "p.com", [(f"r{ip}.com", 0)], cc=cc) for w, ip, cc in resources]
    index = build_cache_index(observations, store)
    expect = {}
    for w, ip, cc in resources:
        key = (w, f"10.1.{ip // 256}.{ip % 256}")
        f = freshness_timeline(CachePolicy.parse(cc))
        expect[key] = min(f, expect.get(key, f))
    min_ok = index == expect

    corpus = generate_corpus(CorpusConfig(n_websites=300, n_batches=1, rng_seed=9))
    cstore, cobs, fps, ent = _build(corpus, 0)
    m = Matcher(fps, ent, cache_index=build_cache_index(cobs, cstore))
    same = all(
        (a.prediction, a.score_bits, a.candidates, a.tie) ==
        (b.prediction, b.score_bits, b.candidates, b.tie)
        for tr in corpus.traces(0)
        for a, b in [(m.cache_aware(tr, 0), m.basic(tr))])
    dt = time.perf_counter() - t
    ok = ex_ok and min_ok and same and dt < 30
    criterion(9, ok, f"class examples {examples}; min-index over 10000 resources={min_ok}; "
                     f"revisit 0 == basic={same}; {dt:.1f} s")
    assert ok


def _simulate_bytes(cfg, path):
    corpus = generate_corpus(cfg)
    fio.write_jsonl(path / "obs.jsonl", map(fio.observation_row, corpus.observations()))
    fio.write_jsonl(path / "snap.jsonl", (fio.snapshot_row(b, s) for b, s in corpus.snapshots()))
    fio.write_jsonl(path / "traces.jsonl",
                    (fio.trace_row(t) for b in range(corpus.n_batches) for t in corpus.traces(b)))
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_c10_determinism_and_round_trip(criterion, tmp_path):
    t = time.perf_counter()
    cfg = CorpusConfig(n_websites=150, n_batches=3, churn_rate_per_batch=0.3,
                       cohosted_primary_fraction=0.2, co_location_degree=3,
                       adblock_removal_set=(0,), rng_seed=42)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    same = _simulate_bytes(cfg, tmp_path / "a") == _simulate_bytes(cfg, tmp_path / "b")

    corpus = generate_corpus(cfg.replace(rng_seed=43))
    store, observations, fps, ent = _build(corpus, 0)
    traces = corpus.traces(1)
    results = Matcher(fps, ent).match_many(traces, "bucketed")
    d = tmp_path / "rt"
    d.mkdir()
    checks = {}
    fio.write_mappings(d / "m.jsonl", store)
    checks["mappings"] = list(fio.mapping_rows(fio.read_mappings(d / "m.jsonl"))) == \
        list(fio.mapping_rows(store))
    snaps = corpus.snapshots()
    fio.write_jsonl(d / "s.jsonl", (fio.snapshot_row(b, s) for b, s in snaps))
    checks["snapshots"] = list(fio.read_snapshots(d / "s.jsonl")) == snaps
    fio.write_jsonl(d / "o.jsonl", map(fio.observation_row, corpus.observations()))
    checks["observations"] = list(fio.read_observations(d / "o.jsonl")) == corpus.observations()
    fio.write_jsonl(d / "f.jsonl", map(fio.fingerprint_row, fps))
    checks["fingerprints"] = list(fio.read_fingerprints(d / "f.jsonl")) == \
        [IpFingerprint(f.website_id, f.primary_ips, f.bucket_ips, f.built_at_batch) for f in fps]
    fio.write_entropy(d / "e.csv", ent)
    checks["entropy"] = fio.read_entropy(d / "e.csv") == ent
    fio.write_jsonl(d / "t.jsonl", map(fio.trace_row, traces))
    checks["traces"] = list(fio.read_traces(d / "t.jsonl")) == traces
    fio.write_jsonl(d / "r.jsonl", (fio.match_row(r, top_k=10 ** 6) for r in results))
    back = list(fio.read_matches(d / "r.jsonl"))
    for r in results:
        r.total_candidates = len(r.candidates)
    checks["matches"] = back == results
    index = build_cache_index(observations, store)
    fio.write_cache_index(d / "c.csv", index)
    checks["cache_index"] = fio.read_cache_index(d / "c.csv") == index
    dt = time.perf_counter() - t
    ok = same and all(checks.values()) and dt < 60
    bad = [k for k, v in checks.items() if not v]
    criterion(10, ok, f"byte-identical reruns={same}; {len(checks)} formats round-trip"
                      f"{'' if not bad else ' except ' + ','.join(bad)}; {dt:.1f} s")
    assert ok
