"""Visit execution, the ad-reader identities, and isolation auditing."""
import pytest

from adxmeter.detect import AdxRuleset
from adxmeter.persona import Identity, PersonaSpec, VisitEvent, VisitKind
from adxmeter.runner import (
    FetchResult,
    SyncAdReader,
    ThreadedAdReader,
    TranscriptEntry,
    audit_isolation,
    dispatch_parallel_fetch,
    execute_visit,
    run_measurement,
)

RULES = AdxRuleset([("adnet", ["https://ads.adnet.example/"])])
PERSONA_ID = Identity("UA persona", "jar-p1")
READER_ID = Identity("UA reader", "jar-reader")

PAGE = "https://site.example/"
SLOT0 = "https://ads.adnet.example/slot0"
INNER = "https://ads.adnet.example/inner"
FOREIGN = "https://other.example/frame"
NESTED_IN_FOREIGN = "https://ads.adnet.example/deep"


class ScriptedFetcher:
    """Canned HTML per URL; anything else 404s.  Records every fetch."""

    def __init__(self, pages):
        self.pages = dict(pages)
        self.log = []

    def fetch(self, url, identity):
        self.log.append((url, identity.cookie_jar))
        html = self.pages.get(url)
        if html is None:
            return FetchResult(url=url, final_url=url, status=404, html="", error="not found")
        return FetchResult(url=url, final_url=url, status=200, html=html)


def _world_pages():
    return {
        PAGE: (
            f'<html><body><iframe src="{SLOT0}"></iframe>'
            f'<iframe src="{FOREIGN}"></iframe></body></html>'
        ),
        SLOT0: (
            '<html><body><a href="https://land.example/x">ad x</a>'
            f'<iframe src="{INNER}"></iframe></body></html>'
        ),
        INNER: '<html><body><a href="https://land.example/y">ad y</a></body></html>',
        FOREIGN: (
            '<html><body><a href="https://land.example/z">not an ad</a>'
            f'<iframe src="{NESTED_IN_FOREIGN}"></iframe></body></html>'
        ),
        NESTED_IN_FOREIGN: '<html><body><a href="https://land.example/w">ad w</a></body></html>',
        "https://land.example/x": "<html><title>x</title><body>landing</body></html>",
        "https://land.example/y": "<html><title>y</title><body>landing</body></html>",
    }


def _spec(training=(), control=None):
    control = list(control) if control is not None else [PAGE] + [
        f"https://pad{i}.example/" for i in range(4)
    ]
    return PersonaSpec("金融", PERSONA_ID, list(training), control)


def _control_event(at=10.0):
    return VisitEvent(at=at, page=PAGE, kind=VisitKind.CONTROL)


def test_training_visit_collects_no_ads():
    fetcher = ScriptedFetcher(_world_pages())
    spec = _spec(training=[PAGE], control=[f"https://pad{i}.example/" for i in range(5)])
    outcome = execute_visit(VisitEvent(5.0, PAGE, VisitKind.TRAINING), spec, fetcher, RULES)
    assert outcome.ok
    assert outcome.ad_links == []
    # only the page itself was fetched, no frames
    assert [u for u, _ in fetcher.log] == [PAGE]


def test_control_visit_walks_matching_frames():
    fetcher = ScriptedFetcher(_world_pages())
    transcript = []
    outcome = execute_visit(_control_event(), _spec(), fetcher, RULES, transcript)
    assert outcome.ok
    by_href = {link.href: link for link in outcome.ad_links}
    # x from the top frame, y from its nested frame, w from a matching frame
    # nested inside the unattributed one; z has no exchange attribution.
    assert set(by_href) == {
        "https://land.example/x", "https://land.example/y", "https://land.example/w",
    }
    assert by_href["https://land.example/x"].frame_path == [0]
    assert by_href["https://land.example/y"].frame_path == [0, 0]
    assert by_href["https://land.example/w"].frame_path == [1, 0]
    for link in outcome.ad_links:
        assert link.platform == "adnet"
        assert link.control_page == PAGE
        assert link.discovered_at == 10.0
    # the persona identity fetched page and frames, never a landing URL
    assert all(jar == "jar-p1" for _, jar in fetcher.log)
    assert not any(u.startswith("https://land.example/") for u, _ in fetcher.log)
    purposes = [e.purpose for e in transcript]
    assert purposes[0] == "page" and set(purposes[1:]) == {"frame"}


def test_frame_depth_is_capped():
    chain = {PAGE: f'<html><body><iframe src="{SLOT0}"></iframe></body></html>'}
    hrefs = []
    src = SLOT0
    for depth in range(6):
        nxt = f"https://ads.adnet.example/d{depth}"
        href = f"https://land.example/depth{depth}"
        hrefs.append(href)
        chain[src] = f'<html><body><a href="{href}">a</a><iframe src="{nxt}"></iframe></body></html>'
        src = nxt
    fetcher = ScriptedFetcher(chain)
    outcome = execute_visit(_control_event(), _spec(), fetcher, RULES)
    # Frames are fetched at paths of length 1..3; deeper ones are not followed.
    assert [link.href for link in outcome.ad_links] == hrefs[:3]


def test_failed_page_fetch_marks_visit_failed():
    fetcher = ScriptedFetcher({})
    outcome = execute_visit(_control_event(), _spec(), fetcher, RULES)
    assert not outcome.ok
    assert "not found" in outcome.error
    assert outcome.ad_links == []


def test_failed_frame_fetch_is_skipped():
    pages = _world_pages()
    del pages[SLOT0]
    fetcher = ScriptedFetcher(pages)
    outcome = execute_visit(_control_event(), _spec(), fetcher, RULES)
    assert outcome.ok
    assert [link.href for link in outcome.ad_links] == ["https://land.example/w"]


# -- readers ------------------------------------------------------------------------


def _links(outcome):
    return sorted(outcome.ad_links, key=lambda l: l.href)


def _collected_links():
    fetcher = ScriptedFetcher(_world_pages())
    outcome = execute_visit(_control_event(), _spec(), fetcher, RULES)
    return [l for l in _links(outcome) if l.href in (
        "https://land.example/x", "https://land.example/y",
    )]


def test_sync_reader_observes_fresh_landings():
    transcript = []
    reader = SyncAdReader(
        ScriptedFetcher(_world_pages()), READER_ID,
        freshness_bound=30.0, transcript=transcript, day_length=600, logical_latency=5.0,
    )
    reader.submit(_collected_links())
    obs = reader.drain()
    assert [o.observation_id for o in obs] == ["obs-000001", "obs-000002"]
    for o in obs:
        assert o.status == "ok"
        assert o.fetched_at == o.link.discovered_at + 5.0
        assert o.fetch_identity == "jar-reader"
        assert o.day_index == 1
        assert o.snapshot is not None and o.snapshot.title
    assert all(e.purpose == "landing" and e.cookie_jar == "jar-reader" for e in transcript)


def test_sync_reader_flags_stale_fetches():
    reader = SyncAdReader(
        ScriptedFetcher(_world_pages()), READER_ID,
        freshness_bound=30.0, logical_latency=31.0,
    )
    reader.submit(_collected_links())
    for o in reader.drain():
        assert o.status == "stale"
        assert "31.0s" in o.reason


def test_sync_reader_boundary_latency_is_still_fresh():
    reader = SyncAdReader(
        ScriptedFetcher(_world_pages()), READER_ID,
        freshness_bound=30.0, logical_latency=30.0,
    )
    reader.submit(_collected_links())
    assert all(o.status == "ok" for o in reader.drain())


def test_sync_reader_failed_landing():
    links = _collected_links()
    reader = SyncAdReader(ScriptedFetcher({}), READER_ID)
    reader.submit(links)
    for o in reader.drain():
        assert o.status == "failed"
        assert o.snapshot is None


def test_threaded_reader_matches_sync_results():
    links = _collected_links()
    sync_obs = dispatch_parallel_fetch(links, READER_ID, ScriptedFetcher(_world_pages()))
    reader = ThreadedAdReader(ScriptedFetcher(_world_pages()), READER_ID, workers=3)
    reader.submit(links)
    threaded_obs = reader.drain()
    assert {o.link.href for o in threaded_obs} == {o.link.href for o in sync_obs}
    assert [o.link.href for o in threaded_obs] == sorted(o.link.href for o in threaded_obs)
    assert all(o.snapshot is not None for o in threaded_obs)


# -- merged run --------------------------------------------------------------------


def test_run_measurement_merges_timelines_and_advances_days():
    fetcher = ScriptedFetcher(_world_pages())
    spec_a = _spec()
    spec_b = PersonaSpec("blank", Identity("UA blank", "jar-p2"), [], spec_a.control_pages)
    schedules = [
        (spec_a, [VisitEvent(10.0, PAGE, VisitKind.CONTROL),
                  VisitEvent(1500.0, PAGE, VisitKind.CONTROL)]),
        (spec_b, [VisitEvent(700.0, PAGE, VisitKind.CONTROL)]),
    ]
    seen_days = []
    result = run_measurement(
        schedules, fetcher, RULES, READER_ID,
        day_length=600.0, on_advance=seen_days.append,
    )
    assert [v.event.at for v in result.visits] == [10.0, 700.0, 1500.0]
    assert [v.persona for v in result.visits] == ["金融", "blank", "金融"]
    assert seen_days == [2, 3]  # one callback per crossed boundary
    assert len(result.observations) == 9  # 3 ads per control visit
    jars = {e.cookie_jar for e in result.transcript if e.purpose == "landing"}
    assert jars == {"jar-reader"}


def test_run_measurement_rejects_conflicting_jars():
    spec = _spec()
    with pytest.raises(ValueError, match="reader identity"):
        run_measurement([(spec, [])], ScriptedFetcher({}), RULES, PERSONA_ID)
    dup = PersonaSpec("blank", Identity("UA other", "jar-p1"), [], spec.control_pages)
    with pytest.raises(ValueError, match="duplicate persona"):
        run_measurement(
            [(spec, []), (dup, [])], ScriptedFetcher({}), RULES, READER_ID
        )


def test_audit_isolation_reports_violations():
    is_landing = lambda url: url.startswith("https://land.example/")  # noqa: E731
    clean = [
        TranscriptEntry(1.0, "jar-p1", PAGE, "page", 200),
        TranscriptEntry(2.0, "jar-reader", "https://land.example/x", "landing", 200),
    ]
    assert audit_isolation(clean, {"jar-p1"}, is_landing) == []
    dirty = clean + [TranscriptEntry(3.0, "jar-p1", "https://land.example/y", "page", 200)]
    bad = audit_isolation(dirty, {"jar-p1"}, is_landing)
    assert len(bad) == 1 and bad[0].url == "https://land.example/y"
