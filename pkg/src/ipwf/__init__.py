"""IP-based website fingerprinting for encrypted-DNS traffic."""
from .cache import CachePolicy, build_cache_index, freshness_timeline
from .entropy import EntropyTable, build_entropy_table, domain_entropy, ip_entropy
from .fingerprint import (Bucket, BrowseObservation, DomainFingerprint, IpFingerprint, Request,
                          build_domain_fingerprint, merge_batches, resolve_fingerprint)
from .mapping_store import (DnsSnapshot, LongevityClass, MappingRecord, MappingStore,
                            classify_longevity)
from .matcher import (FingerprintDB, Matcher, MatchMode, MatchResult, Trace, TraceEvent,
                      cluster_times, detect_adblock, match_basic, match_bucketed,
                      match_cache_aware, match_naive_primary)
from .stability import difference_degree, split_stable_unstable

__version__ = "0.1.0"
