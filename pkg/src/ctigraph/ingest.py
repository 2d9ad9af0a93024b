"""Source collection: periodic, incremental, rate-limited fetching.

Each source is a data-driven spec (local directory, HTML listing page, or
RSS/Atom feed) rather than bespoke crawler code. A persisted ledger keyed by
content hash makes collection incremental: re-fetching unchanged content
yields nothing. The scheduler reruns each source once per period and restarts
crashed fetch cycles on their next tick.
"""

from __future__ import annotations

import json
import logging
import random
import re
import threading
import time
import xml.etree.ElementTree as ElementTree
from dataclasses import dataclass, field
from enum import Enum
from hashlib import sha256
from pathlib import Path
from urllib.parse import urljoin

from .errors import BuildError, SourceUnavailable, WindowTooShort
from .htmldoc import parse_html, select
from .pipeline import RawItem

log = logging.getLogger(__name__)

OFFLINE_ENV_VAR = "CTIGRAPH_OFFLINE"

_PAGE_SUFFIX = re.compile(r"__page(\d+)$")

_EXT_CONTENT_TYPES = {
    ".html": "text/html",
    ".htm": "text/html",
    ".txt": "text/plain",
    ".pdf": "application/pdf",
}


# ---------------------------------------------------------------------------
# clocks (injectable so rate limits and periods are testable)
# ---------------------------------------------------------------------------

class SystemClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    def wait_until(self, deadline: float, stop: threading.Event) -> None:
        remaining = deadline - self.now()
        if remaining > 0:
            stop.wait(remaining)


class ManualClock:
    """Deterministic clock for tests.

    With ``auto_advance`` sleeping simply advances time; otherwise sleepers
    block until another thread calls :meth:`advance`.
    """

    def __init__(self, start: float = 0.0, auto_advance: bool = True):
        self._now = start
        self.auto_advance = auto_advance
        self._cond = threading.Condition()

    def now(self) -> float:
        with self._cond:
            return self._now

    def advance(self, seconds: float) -> None:
        with self._cond:
            self._now += seconds
            self._cond.notify_all()

    def sleep(self, seconds: float) -> None:
        if seconds <= 0:
            return
        if self.auto_advance:
            self.advance(seconds)
            return
        deadline = self.now() + seconds
        with self._cond:
            while self._now < deadline:
                self._cond.wait(timeout=0.05)

    def wait_until(self, deadline: float, stop: threading.Event) -> None:
        with self._cond:
            while self._now < deadline and not stop.is_set():
                self._cond.wait(timeout=0.05)


# ---------------------------------------------------------------------------
# source specs and the fetch ledger
# ---------------------------------------------------------------------------

class SourceKind(str, Enum):
    HTTP_LISTING = "http_listing"
    HTTP_FEED = "http_feed"
    LOCAL_DIR = "local_dir"


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.5

    def delay(self, attempt: int) -> float:
        """Exponential backoff capped at 10x the base."""
        return min(self.backoff_base * (2 ** attempt), 10 * self.backoff_base)


@dataclass(frozen=True)
class SourceSpec:
    source_id: str
    kind: SourceKind
    entry_locators: tuple[str, ...]
    period: float = 3600.0
    max_concurrency: int = 2
    rate_limit: float = 2.0  # requests per second
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    link_selector: str = "a[href]"

    def validate(self, offline: bool = False) -> None:
        if self.period <= 0:
            raise BuildError(f"source {self.source_id}: period must be positive")
        if self.rate_limit <= 0:
            raise BuildError(f"source {self.source_id}: rate_limit must be positive")
        if self.max_concurrency <= 0:
            raise BuildError(f"source {self.source_id}: max_concurrency must be positive")
        if not self.entry_locators:
            raise BuildError(f"source {self.source_id}: no entry locators")
        if offline and self.kind is not SourceKind.LOCAL_DIR:
            raise BuildError(
                f"source {self.source_id}: offline mode ({OFFLINE_ENV_VAR}=1) "
                f"allows local_dir sources only"
            )
        if self.kind is SourceKind.LOCAL_DIR:
            for locator in self.entry_locators:
                if not Path(locator).is_dir():
                    raise BuildError(
                        f"source {self.source_id}: directory {locator} does not exist"
                    )

    @classmethod
    def from_plain(cls, plain: dict, base_dir: Path | None = None) -> "SourceSpec":
        locators = []
        for locator in plain.get("entry_locators", []):
            if base_dir is not None and "://" not in locator and not Path(locator).is_absolute():
                locator = str(base_dir / locator)
            locators.append(locator)
        retry = plain.get("retry", {})
        return cls(
            source_id=plain["source_id"],
            kind=SourceKind(plain.get("kind", "local_dir")),
            entry_locators=tuple(locators),
            period=float(plain.get("period_seconds", 3600.0)),
            max_concurrency=int(plain.get("max_concurrency", 2)),
            rate_limit=float(plain.get("rate_limit_per_second", 2.0)),
            retry=RetryPolicy(
                max_attempts=int(retry.get("max_attempts", 3)),
                backoff_base=float(retry.get("backoff_base_seconds", 0.5)),
            ),
            link_selector=plain.get("link_selector", "a[href]"),
        )


@dataclass(frozen=True)
class LedgerEntry:
    content_hash: str
    last_fetched_at: float


class FetchLedger:
    """locator -> last seen content hash, persisted as line-delimited JSON.

    Entries are appended atomically per completed item, so a shutdown
    mid-fetch leaves unfinished locators unrecorded and they are refetched.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.entries: dict[str, LedgerEntry] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                plain = json.loads(line)
                self._put(plain["locator"],
                          LedgerEntry(plain["content_hash"], float(plain["last_fetched_at"])))

    def _put(self, locator: str, entry: LedgerEntry) -> None:
        previous = self.entries.get(locator)
        if previous is not None and entry.last_fetched_at < previous.last_fetched_at:
            return  # timestamps are monotone per locator
        self.entries[locator] = entry

    def seen_unchanged(self, locator: str, content_hash: str) -> bool:
        with self._lock:
            entry = self.entries.get(locator)
            return entry is not None and entry.content_hash == content_hash

    def record(self, locator: str, content_hash: str, fetched_at: float) -> None:
        with self._lock:
            self._put(locator, LedgerEntry(content_hash, fetched_at))
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({
                        "locator": locator,
                        "content_hash": content_hash,
                        "last_fetched_at": fetched_at,
                    }, sort_keys=True) + "\n")
                    fh.flush()


@dataclass
class FetchStats:
    discovered: int = 0
    yielded: int = 0
    skipped_unchanged: int = 0
    failures: int = 0
    retries: int = 0


class _RateLimiter:
    """Min-interval pacing; slots are computed multiplicatively from the
    first request so float error never accumulates across many requests."""

    def __init__(self, per_second: float, clock):
        self.interval = 1.0 / per_second
        self.clock = clock
        self._base = None
        self._count = 0
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self.clock.now()
            if self._base is None:
                self._base = now
            slot = self._base + self._count * self.interval
            self._count += 1
            if slot < now:
                # idle gap: re-anchor so bursts after quiet periods still pace
                self._base = now - (self._count - 1) * self.interval
                slot = now
            wait = slot - now
        if wait > 0:
            self.clock.sleep(wait)


def _default_http_get(url: str) -> tuple[bytes, str]:
    import requests

    response = requests.get(url, timeout=15)
    response.raise_for_status()
    content_type = response.headers.get("content-type", "text/html").split(";")[0].strip()
    return response.content, content_type


def _fetch_with_retry(fetch, locator: str, policy: RetryPolicy, clock,
                      stats: FetchStats):
    last_error = None
    for attempt in range(policy.max_attempts):
        try:
            return fetch()
        except Exception as err:
            last_error = err
            if attempt + 1 < policy.max_attempts:
                stats.retries += 1
                delay = policy.delay(attempt)
                log.info("retrying %s in %.2fs after: %s", locator, delay, err)
                clock.sleep(delay)
    raise SourceUnavailable(f"{locator}: {last_error}")


def _group_key_for(path: Path) -> str:
    return _PAGE_SUFFIX.sub("", path.stem)


def _discover(spec: SourceSpec, rate: _RateLimiter, clock, http_get, stats: FetchStats):
    """Yield (locator, fetch_payload, title_hint, group_key) lazily."""
    if spec.kind is SourceKind.LOCAL_DIR:
        for directory in spec.entry_locators:
            for path in sorted(Path(directory).rglob("*")):
                if not path.is_file():
                    continue
                content_type = _EXT_CONTENT_TYPES.get(path.suffix.lower())
                if content_type is None:
                    continue
                yield (
                    str(path),
                    lambda p=path, ct=content_type: (p.read_bytes(), ct),
                    path.stem,
                    f"{path.parent}/{_group_key_for(path)}",
                )
        return

    for entry in spec.entry_locators:
        rate.acquire()
        try:
            listing, _ = _fetch_with_retry(
                lambda: http_get(entry), entry, spec.retry, clock, stats
            )
        except SourceUnavailable as err:
            stats.failures += 1
            log.warning("source %s: %s", spec.source_id, err)
            continue
        if spec.kind is SourceKind.HTTP_LISTING:
            links = _listing_links(listing.decode("utf-8", errors="replace"),
                                   entry, spec.link_selector)
        else:
            links = _feed_links(listing)
        for url in links:
            yield url, lambda u=url: http_get(u), url.rsplit("/", 1)[-1], None


def _listing_links(html: str, base_url: str, selector: str) -> list[str]:
    root = parse_html(html)
    seen = []
    for el in select(root, selector):
        href = el.attrs.get("href", "")
        if not href or href.startswith("#"):
            continue
        absolute = urljoin(base_url, href)
        if absolute not in seen:
            seen.append(absolute)
    return seen


def _feed_links(blob: bytes) -> list[str]:
    try:
        root = ElementTree.fromstring(blob)
    except ElementTree.ParseError as err:
        log.warning("feed parse error: %s", err)
        return []
    links = []
    for item in root.iter():
        tag = item.tag.rsplit("}", 1)[-1]
        if tag == "item":  # RSS
            link = item.find("link")
            if link is not None and link.text:
                links.append(link.text.strip())
        elif tag == "entry":  # Atom
            for link in item:
                if link.tag.rsplit("}", 1)[-1] == "link" and link.get("href"):
                    links.append(link.get("href"))
    out = []
    for url in links:
        if url not in out:
            out.append(url)
    return out


def fetch_source(
    spec: SourceSpec,
    ledger: FetchLedger,
    clock=None,
    http_get=None,
    stats: FetchStats | None = None,
):
    """Yield new-or-changed raw items from one source.

    Honors the spec's rate limit and retry policy; unchanged content (by
    hash) is skipped; the ledger records an item only after it has been
    consumed, so nothing is lost on early shutdown.
    """
    clock = clock or SystemClock()
    http_get = http_get or _default_http_get
    stats = stats if stats is not None else FetchStats()
    rate = _RateLimiter(spec.rate_limit, clock)

    for locator, fetch_payload, title_hint, group_key in _discover(
        spec, rate, clock, http_get, stats
    ):
        stats.discovered += 1
        rate.acquire()
        try:
            payload, content_type = _fetch_with_retry(
                fetch_payload, locator, spec.retry, clock, stats
            )
        except SourceUnavailable as err:
            stats.failures += 1
            log.warning("source %s: %s", spec.source_id, err)
            continue
        digest = sha256(payload).hexdigest()
        if ledger.seen_unchanged(locator, digest):
            stats.skipped_unchanged += 1
            continue
        fetched_at = clock.now()
        yield RawItem(
            source_id=spec.source_id,
            origin_locator=locator,
            content_type=content_type,
            payload=payload,
            fetched_at=fetched_at,
            title_hint=title_hint,
            group_key=group_key,
        )
        stats.yielded += 1
        ledger.record(locator, digest, fetched_at)


# ---------------------------------------------------------------------------
# scheduler
# ---------------------------------------------------------------------------

@dataclass
class RestartRecord:
    source_id: str
    at: float
    error: str


class Scheduler:
    """Fetches every source once per period, restarting crashed cycles.

    ``cycle`` is called with the SourceSpec on the scheduler's worker thread
    for that source; a crash is recorded and the source runs again on its
    next tick. Sources never delay each other: cycles run on their own
    threads.
    """

    def __init__(
        self,
        specs: list[SourceSpec],
        cycle,
        clock=None,
        jitter_fraction: float = 0.1,
        seed: int = 0,
    ):
        ids = [s.source_id for s in specs]
        if len(set(ids)) != len(ids):
            raise BuildError("scheduler requires distinct source_ids")
        self.specs = list(specs)
        self.cycle = cycle
        self.clock = clock or SystemClock()
        self.jitter_fraction = jitter_fraction
        self._rng = random.Random(seed)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._cycle_threads: dict[str, threading.Thread] = {}
        self._lock = threading.Lock()
        self.restarts: list[RestartRecord] = []
        self.run_counts: dict[str, int] = {s.source_id: 0 for s in specs}
        self.skipped_overlaps: dict[str, int] = {s.source_id: 0 for s in specs}

    def _jittered(self, period: float) -> float:
        if self.jitter_fraction <= 0:
            return period
        return period + period * self.jitter_fraction * (2 * self._rng.random() - 1)

    def _launch(self, spec: SourceSpec, runs: int) -> None:
        """Run the cycle ``runs`` times serially on the source's own thread.

        Cycles for one source never overlap: if the previous thread is still
        running when a tick fires, that tick is skipped (counted), matching
        the drop-tick policy for slow sources. Crashes are recorded and the
        source simply runs again on its next tick."""
        previous = self._cycle_threads.get(spec.source_id)
        if previous is not None and previous.is_alive():
            with self._lock:
                self.skipped_overlaps[spec.source_id] += runs
            return

        def guarded() -> None:
            for _ in range(runs):
                try:
                    self.cycle(spec)
                except Exception as err:
                    with self._lock:
                        self.restarts.append(
                            RestartRecord(spec.source_id, self.clock.now(), str(err))
                        )
                    log.warning("fetch cycle for %s crashed (will rerun next tick): %s",
                                spec.source_id, err)

        thread = threading.Thread(target=guarded, name=f"fetch-{spec.source_id}", daemon=True)
        self._cycle_threads[spec.source_id] = thread
        with self._lock:
            self.run_counts[spec.source_id] += runs
        thread.start()

    def _loop(self) -> None:
        start = self.clock.now()
        next_due = {s.source_id: start + self._jittered(s.period) for s in self.specs}
        by_id = {s.source_id: s for s in self.specs}
        while not self._stop.is_set():
            now = self.clock.now()
            for source_id in sorted(next_due):
                missed = 0
                while next_due[source_id] <= now:
                    missed += 1
                    next_due[source_id] += self._jittered(by_id[source_id].period)
                if missed:
                    self._launch(by_id[source_id], missed)
            self.clock.wait_until(min(next_due.values()), self._stop)

    def start(self) -> "Scheduler":
        self._thread = threading.Thread(target=self._loop, name="scheduler", daemon=True)
        self._thread.start()
        return self

    def shutdown(self, timeout: float = 10.0) -> None:
        """Stop ticking and drain in-flight fetch cycles."""
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=timeout)
        for thread in self._cycle_threads.values():
            thread.join(timeout=timeout)


def schedule(specs: list[SourceSpec], cycle, clock=None, jitter_fraction: float = 0.1,
             seed: int = 0) -> Scheduler:
    return Scheduler(specs, cycle, clock=clock, jitter_fraction=jitter_fraction,
                     seed=seed).start()


def throughput_report(report_count: int, window_seconds: float) -> float:
    """Ingested-report rate in reports/minute over a window of at least 10s."""
    if window_seconds < 10.0:
        raise WindowTooShort(f"window of {window_seconds:.2f}s is under the 10s minimum")
    return report_count / window_seconds * 60.0
