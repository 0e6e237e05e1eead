"""Visit execution, ad collection, and structural isolation.

Personas fetch pages (and the exchange frames embedded in them) under their
own identity; discovered ad links are handed to a separate reader identity
that fetches landing pages out of band.  The persona loop never touches a
landing URL, which is what keeps ad content from contaminating the interest
profile being measured.  Every fetch goes into a request transcript so the
isolation property is auditable after the fact.
"""
from __future__ import annotations

import http.cookiejar
import json
import logging
import queue
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol

from .detect import AdxRuleset
from .identify import LandingSnapshot, build_snapshot
from .persona import Identity, PersonaSpec, VisitEvent, VisitKind, day_of
from .textprep import parse_page

logger = logging.getLogger(__name__)

__all__ = [
    "FetchResult",
    "Fetcher",
    "LiveFetcher",
    "LogicalClock",
    "WallClock",
    "AdLink",
    "AdObservation",
    "VisitOutcome",
    "TranscriptEntry",
    "execute_visit",
    "SyncAdReader",
    "ThreadedAdReader",
    "dispatch_parallel_fetch",
    "run_measurement",
    "RunResult",
    "audit_isolation",
    "DEFAULT_FRESHNESS_BOUND",
    "MAX_FRAME_DEPTH",
]

DEFAULT_FRESHNESS_BOUND = 30.0
MAX_FRAME_DEPTH = 3


@dataclass
class FetchResult:
    url: str
    final_url: str
    status: int
    html: str
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.status == 200 and not self.error


class Fetcher(Protocol):
    def fetch(self, url: str, identity: Identity) -> FetchResult: ...


class LiveFetcher:
    """Plain HTTP(S) GETs with one persistent cookie jar per identity."""

    def __init__(self, timeout: float = 30.0):
        self.timeout = timeout
        self._jars: dict[str, http.cookiejar.CookieJar] = {}

    def _opener(self, identity: Identity) -> urllib.request.OpenerDirector:
        jar = self._jars.setdefault(identity.cookie_jar, http.cookiejar.CookieJar())
        return urllib.request.build_opener(urllib.request.HTTPCookieProcessor(jar))

    def fetch(self, url: str, identity: Identity) -> FetchResult:
        req = urllib.request.Request(url, headers={"User-Agent": identity.user_agent})
        try:
            with self._opener(identity).open(req, timeout=self.timeout) as resp:
                body = resp.read().decode("utf-8", errors="replace")
                return FetchResult(url=url, final_url=resp.geturl(), status=resp.status, html=body)
        except urllib.error.HTTPError as exc:
            return FetchResult(url=url, final_url=url, status=exc.code, html="", error=str(exc))
        except Exception as exc:
            return FetchResult(url=url, final_url=url, status=0, html="", error=str(exc))


class LogicalClock:
    """Scheduler-advanced clock; nothing sleeps in simulation mode."""

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def advance_to(self, t: float) -> None:
        if t > self._now:
            self._now = t


class WallClock:
    def __init__(self):
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    def advance_to(self, t: float) -> None:
        delta = t - self.now()
        if delta > 0:
            time.sleep(delta)


@dataclass
class TranscriptEntry:
    at: float
    cookie_jar: str
    url: str
    purpose: str  # page | frame | landing
    status: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "at": round(self.at, 6),
                "cookie_jar": self.cookie_jar,
                "url": self.url,
                "purpose": self.purpose,
                "status": self.status,
            },
            ensure_ascii=False,
            sort_keys=True,
        )


@dataclass
class AdLink:
    """An ad spotted inside an exchange frame during a control visit."""

    href: str
    platform: str
    control_page: str
    discovered_at: float
    frame_path: list[int]
    persona: str


@dataclass
class AdObservation:
    """The reader's capture of one ad's landing page."""

    observation_id: str
    link: AdLink
    snapshot: Optional[LandingSnapshot]
    fetched_at: float
    fetch_identity: str
    day_index: int
    status: str = "ok"  # ok | failed | stale
    reason: str = ""


@dataclass
class VisitOutcome:
    event: VisitEvent
    persona: str
    ok: bool
    ad_links: list[AdLink] = field(default_factory=list)
    error: str = ""


def _walk_frames(
    page_url: str,
    frames: list[str],
    fetcher: Fetcher,
    identity: Identity,
    ruleset: AdxRuleset,
    persona: str,
    now: float,
    transcript: list[TranscriptEntry],
    path: list[int],
    inherited_platform: str,
) -> list[AdLink]:
    """Fetch exchange frames recursively, collecting ad links with attribution."""
    links: list[AdLink] = []
    if len(path) >= MAX_FRAME_DEPTH:
        return links
    for idx, src in enumerate(frames):
        matched = ruleset.match(src)
        platform = sorted(matched)[0] if matched else inherited_platform
        result = fetcher.fetch(src, identity)
        transcript.append(
            TranscriptEntry(at=now, cookie_jar=identity.cookie_jar, url=src, purpose="frame", status=result.status)
        )
        if not result.ok:
            continue
        parsed = parse_page(result.html)
        if platform:
            for href in parsed.links:
                links.append(
                    AdLink(
                        href=href,
                        platform=platform,
                        control_page=page_url,
                        discovered_at=now,
                        frame_path=path + [idx],
                        persona=persona,
                    )
                )
        links.extend(
            _walk_frames(
                page_url, parsed.frames, fetcher, identity, ruleset,
                persona, now, transcript, path + [idx], platform,
            )
        )
    return links


def execute_visit(
    event: VisitEvent,
    spec: PersonaSpec,
    fetcher: Fetcher,
    ruleset: AdxRuleset,
    transcript: Optional[list[TranscriptEntry]] = None,
) -> VisitOutcome:
    """Fetch the page under the persona identity; harvest ads on control visits.

    Training visits load the page only (the point is to be seen by the
    exchanges, not to read their ads), so they always return zero ad links.
    A failed fetch marks the visit failed and the run carries on.
    """
    transcript = transcript if transcript is not None else []
    result = fetcher.fetch(event.page, spec.identity)
    transcript.append(
        TranscriptEntry(
            at=event.at, cookie_jar=spec.identity.cookie_jar,
            url=event.page, purpose="page", status=result.status,
        )
    )
    if not result.ok:
        return VisitOutcome(event=event, persona=spec.interest, ok=False, error=result.error or f"status {result.status}")
    if event.kind != VisitKind.CONTROL:
        return VisitOutcome(event=event, persona=spec.interest, ok=True)
    parsed = parse_page(result.html)
    links = _walk_frames(
        event.page, parsed.frames, fetcher, spec.identity, ruleset,
        spec.interest, event.at, transcript, [], "",
    )
    return VisitOutcome(event=event, persona=spec.interest, ok=True, ad_links=links)


class SyncAdReader:
    """Ad reader that fetches inline; used with the logical clock in sim runs.

    fetch latency is logical (configurable), so freshness bookkeeping behaves
    exactly like the threaded reader without any sleeping.
    """

    def __init__(
        self,
        fetcher: Fetcher,
        identity: Identity,
        freshness_bound: float = DEFAULT_FRESHNESS_BOUND,
        transcript: Optional[list[TranscriptEntry]] = None,
        day_length: float = 86_400.0,
        logical_latency: float = 0.0,
    ):
        self.fetcher = fetcher
        self.identity = identity
        self.freshness_bound = freshness_bound
        self.transcript = transcript if transcript is not None else []
        self.day_length = day_length
        self.logical_latency = logical_latency
        self.observations: list[AdObservation] = []
        self._counter = 0

    def _next_id(self) -> str:
        self._counter += 1
        return f"obs-{self._counter:06d}"

    def _observe(self, link: AdLink, fetched_at: float) -> AdObservation:
        result = self.fetcher.fetch(link.href, self.identity)
        self.transcript.append(
            TranscriptEntry(
                at=fetched_at, cookie_jar=self.identity.cookie_jar,
                url=link.href, purpose="landing", status=result.status,
            )
        )
        obs_id = self._next_id()
        if not result.ok:
            return AdObservation(
                observation_id=obs_id, link=link, snapshot=None, fetched_at=fetched_at,
                fetch_identity=self.identity.cookie_jar,
                day_index=day_of(link.discovered_at, self.day_length),
                status="failed", reason=result.error or f"status {result.status}",
            )
        status = "ok"
        reason = ""
        if fetched_at - link.discovered_at > self.freshness_bound:
            status = "stale"
            reason = f"fetched {fetched_at - link.discovered_at:.1f}s after discovery"
        return AdObservation(
            observation_id=obs_id, link=link,
            snapshot=build_snapshot(result.final_url, result.html),
            fetched_at=fetched_at, fetch_identity=self.identity.cookie_jar,
            day_index=day_of(link.discovered_at, self.day_length),
            status=status, reason=reason,
        )

    def submit(self, links: Iterable[AdLink]) -> None:
        for link in links:
            self.observations.append(self._observe(link, link.discovered_at + self.logical_latency))

    def drain(self) -> list[AdObservation]:
        return self.observations


class ThreadedAdReader:
    """Bounded-queue worker pool for live runs; the submitting loop never blocks
    on fetch latency, only on queue capacity."""

    def __init__(
        self,
        fetcher: Fetcher,
        identity: Identity,
        freshness_bound: float = DEFAULT_FRESHNESS_BOUND,
        transcript: Optional[list[TranscriptEntry]] = None,
        day_length: float = 86_400.0,
        workers: int = 4,
        queue_size: int = 64,
        clock: Optional[WallClock] = None,
    ):
        self.fetcher = fetcher
        self.identity = identity
        self.freshness_bound = freshness_bound
        self.transcript = transcript if transcript is not None else []
        self.day_length = day_length
        self.clock = clock or WallClock()
        self.observations: list[AdObservation] = []
        self._queue: queue.Queue = queue.Queue(maxsize=queue_size)
        self._lock = threading.Lock()
        self._counter = 0
        self._threads = [threading.Thread(target=self._worker, daemon=True) for _ in range(workers)]
        for t in self._threads:
            t.start()

    def _next_id(self) -> str:
        with self._lock:
            self._counter += 1
            return f"obs-{self._counter:06d}"

    def _worker(self) -> None:
        while True:
            link = self._queue.get()
            if link is None:
                self._queue.task_done()
                return
            try:
                fetched_at = self.clock.now()
                result = self.fetcher.fetch(link.href, self.identity)
                entry = TranscriptEntry(
                    at=fetched_at, cookie_jar=self.identity.cookie_jar,
                    url=link.href, purpose="landing", status=result.status,
                )
                if result.ok:
                    age = fetched_at - link.discovered_at
                    status = "stale" if age > self.freshness_bound else "ok"
                    obs = AdObservation(
                        observation_id=self._next_id(), link=link,
                        snapshot=build_snapshot(result.final_url, result.html),
                        fetched_at=fetched_at, fetch_identity=self.identity.cookie_jar,
                        day_index=day_of(link.discovered_at, self.day_length),
                        status=status,
                        reason="" if status == "ok" else f"fetched {age:.1f}s after discovery",
                    )
                else:
                    obs = AdObservation(
                        observation_id=self._next_id(), link=link, snapshot=None,
                        fetched_at=fetched_at, fetch_identity=self.identity.cookie_jar,
                        day_index=day_of(link.discovered_at, self.day_length),
                        status="failed", reason=result.error or f"status {result.status}",
                    )
                with self._lock:
                    self.transcript.append(entry)
                    self.observations.append(obs)
            finally:
                self._queue.task_done()

    def submit(self, links: Iterable[AdLink]) -> None:
        for link in links:
            self._queue.put(link)

    def drain(self) -> list[AdObservation]:
        self._queue.join()
        for _ in self._threads:
            self._queue.put(None)
        for t in self._threads:
            t.join()
        # Landing order is nondeterministic under threads; normalize.
        self.observations.sort(key=lambda o: (o.link.discovered_at, o.link.href))
        return self.observations


def dispatch_parallel_fetch(
    links: list[AdLink],
    reader_identity: Identity,
    fetcher: Fetcher,
    freshness_bound: float = DEFAULT_FRESHNESS_BOUND,
    day_length: float = 86_400.0,
    transcript: Optional[list[TranscriptEntry]] = None,
) -> list[AdObservation]:
    """Fetch a batch of ad links under the reader identity, one observation each."""
    reader = SyncAdReader(
        fetcher, reader_identity, freshness_bound=freshness_bound,
        transcript=transcript, day_length=day_length,
    )
    reader.submit(links)
    return reader.drain()


@dataclass
class RunResult:
    visits: list[VisitOutcome]
    observations: list[AdObservation]
    transcript: list[TranscriptEntry]


def run_measurement(
    schedules: list[tuple[PersonaSpec, list[VisitEvent]]],
    fetcher: Fetcher,
    ruleset: AdxRuleset,
    reader_identity: Identity,
    freshness_bound: float = DEFAULT_FRESHNESS_BOUND,
    day_length: float = 86_400.0,
    on_advance: Optional[Callable[[int], None]] = None,
) -> RunResult:
    """Drive all persona schedules through one merged logical timeline.

    ``on_advance`` is invoked once per crossed day boundary (the simulator
    hooks its profile decay there).  The reader identity must be distinct
    from every persona jar; that separation is the isolation contract.
    """
    jars = set()
    for spec, _ in schedules:
        if spec.identity.cookie_jar == reader_identity.cookie_jar:
            raise ValueError("reader identity must not share a persona cookie jar")
        if spec.identity.cookie_jar in jars:
            raise ValueError(f"duplicate persona cookie jar: {spec.identity.cookie_jar!r}")
        jars.add(spec.identity.cookie_jar)

    merged: list[tuple[float, int, VisitEvent, PersonaSpec]] = []
    for idx, (spec, events) in enumerate(schedules):
        for ev in events:
            merged.append((ev.at, idx, ev, spec))
    merged.sort(key=lambda item: (item[0], item[1]))

    transcript: list[TranscriptEntry] = []
    reader = SyncAdReader(
        fetcher, reader_identity, freshness_bound=freshness_bound,
        transcript=transcript, day_length=day_length,
    )
    visits: list[VisitOutcome] = []
    current_day = 1
    for at, _, event, spec in merged:
        event_day = day_of(at, day_length)
        while current_day < event_day:
            current_day += 1
            if on_advance is not None:
                on_advance(current_day)
        outcome = execute_visit(event, spec, fetcher, ruleset, transcript)
        visits.append(outcome)
        if outcome.ad_links:
            reader.submit(outcome.ad_links)
    return RunResult(visits=visits, observations=reader.drain(), transcript=transcript)


def audit_isolation(
    transcript: Iterable[TranscriptEntry],
    persona_jars: set[str],
    is_landing_url: Callable[[str], bool],
) -> list[TranscriptEntry]:
    """Transcript entries where a persona identity touched an ad landing URL.

    An empty result is the isolation guarantee holding end to end.
    """
    return [
        entry
        for entry in transcript
        if entry.cookie_jar in persona_jars and is_landing_url(entry.url)
    ]
