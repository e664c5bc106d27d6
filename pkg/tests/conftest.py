import pytest
from hypothesis import settings

from ipwf.cache import CachePolicy
from ipwf.fingerprint import BrowseObservation, Bucket, Request
from ipwf.mapping_store import DnsSnapshot, MappingStore

# first calls pay numba compilation, so wall-clock deadlines are meaningless
settings.register_profile("ipwf", deadline=None)
settings.load_profile("ipwf")

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])


def make_store(mapping: dict, batch: int = 0) -> MappingStore:
    """Store from ``{domain: [ips]}`` observed at one batch."""
    store = MappingStore()
    for d, ips in sorted(mapping.items()):
        store.ingest_snapshot(DnsSnapshot(d, frozenset(ips), batch * 10800), batch)
    return store.seal()


def obs(site: str, primary: str, reqs, batch: int = 0, cc: str = "max-age=60"):
    return BrowseObservation(site, batch, primary,
                             tuple(Request(d, Bucket(b), 0, CachePolicy.parse(cc))
                                   for d, b in reqs))
