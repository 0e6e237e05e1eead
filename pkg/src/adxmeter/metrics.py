"""Behavioral-targeting scores over keyword sets.

Three sets drive everything: the persona's training keywords (union of its
training documents' selected feature terms), the keywords of ads the persona
received, and the keywords of ads the blank baseline persona received.  The
targeted-keyword score (ttk) is the share of training keywords that appear in
the persona's ads but not the baseline's; the behavioral-ad share (bailp) is
the fraction of ad keywords attributable to training rather than the ambient
ad market.  Both live in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

__all__ = [
    "KeywordSets",
    "normalize_keyword",
    "collect_keyword_sets",
    "ttk",
    "bailp",
    "bailp_detail",
    "BailpResult",
    "category_share_timeline",
    "ScoreRow",
    "ScoreSeries",
    "daily_scores",
    "BRANCH_BASELINE_OVERLAP",
    "BRANCH_NO_BASELINE_OVERLAP",
    "BRANCH_NO_ADS",
]

BRANCH_BASELINE_OVERLAP = "baseline-overlap"
BRANCH_NO_BASELINE_OVERLAP = "no-baseline-overlap"
BRANCH_NO_ADS = "no-ads"


def normalize_keyword(term: str) -> str:
    """Canonical keyword form: trimmed, Latin lowercased (CJK unaffected)."""
    return term.strip().lower()


def _normalize_set(terms: Iterable[str]) -> frozenset[str]:
    out = set()
    for t in terms:
        n = normalize_keyword(t)
        if n:
            out.add(n)
    return frozenset(out)


@dataclass(frozen=True)
class KeywordSets:
    """The three keyword sets a score is computed from."""

    training: frozenset[str]
    landing: frozenset[str]
    baseline: frozenset[str]

    @classmethod
    def build(cls, training: Iterable[str], landing: Iterable[str], baseline: Iterable[str]):
        return cls(_normalize_set(training), _normalize_set(landing), _normalize_set(baseline))


def collect_keyword_sets(
    training_terms: Iterable[str],
    persona_ad_keywords: Iterable[str],
    blank_ad_keywords: Optional[Iterable[str]],
) -> KeywordSets:
    """Assemble normalized keyword sets; missing baseline data is an error."""
    if blank_ad_keywords is None:
        raise ValueError("no blank-persona baseline data")
    return KeywordSets.build(training_terms, persona_ad_keywords, blank_ad_keywords)


def ttk(sets: KeywordSets) -> float:
    """Share of training keywords appearing in ads beyond the baseline."""
    if not sets.training:
        raise ValueError("training keyword set is empty")
    hits = sets.training & (sets.landing - sets.baseline)
    return len(hits) / len(sets.training)


@dataclass(frozen=True)
class BailpResult:
    value: float
    branch: str


def bailp_detail(sets: KeywordSets) -> BailpResult:
    """Behaviorally-attributable share of ad keywords, with the branch taken.

    When the baseline shares at least one training keyword, ads carrying
    baseline keywords are discounted; otherwise every training keyword seen in
    the ads counts.  No ads at all scores 0 under the no-ads branch.
    """
    if not sets.landing:
        return BailpResult(0.0, BRANCH_NO_ADS)
    if len(sets.training & sets.baseline) >= 1:
        hits = (sets.landing - sets.baseline) & sets.training
        branch = BRANCH_BASELINE_OVERLAP
    else:
        hits = sets.landing & sets.training
        branch = BRANCH_NO_BASELINE_OVERLAP
    return BailpResult(len(hits) / len(sets.landing), branch)


def bailp(sets: KeywordSets) -> float:
    return bailp_detail(sets).value


def category_share_timeline(
    rows: Iterable[tuple[str, int, str]],
) -> dict[tuple[str, int], dict[str, float]]:
    """Per (platform, day) category shares from (platform, day, category) rows.

    Unresolved ads keep their own bucket; shares over a cell sum to 1.
    """
    counts: dict[tuple[str, int], dict[str, int]] = {}
    for platform, day, category in rows:
        cell = counts.setdefault((platform, day), {})
        cell[category] = cell.get(category, 0) + 1
    shares: dict[tuple[str, int], dict[str, float]] = {}
    for key, cell in counts.items():
        total = sum(cell.values())
        shares[key] = {cat: n / total for cat, n in sorted(cell.items())}
    return shares


@dataclass
class ScoreRow:
    day: int
    ttk: Optional[float]
    bailp: float
    branch: str
    ads: int


@dataclass
class ScoreSeries:
    persona: str
    platform: str
    rows: list[ScoreRow] = field(default_factory=list)


def daily_scores(
    persona: str,
    platforms: Iterable[str],
    days: int,
    training_terms: Iterable[str],
    ad_keywords_by_day: Mapping[tuple[str, int], list[list[str]]],
    blank_keywords_by_day: Mapping[tuple[str, int], list[list[str]]],
    cumulative: bool = False,
) -> list[ScoreSeries]:
    """Score one persona against the blank baseline, one row per day.

    ``ad_keywords_by_day`` maps (platform, day) to the keyword lists of that
    day's identified ads.  The default mode restricts both the persona's and
    the baseline's ad keywords to the day under evaluation; cumulative mode
    unions everything up to and including it.
    """
    training = _normalize_set(training_terms)
    series: list[ScoreSeries] = []
    for platform in platforms:
        s = ScoreSeries(persona=persona, platform=platform)
        for day in range(1, days + 1):
            day_range = range(1, day + 1) if cumulative else (day,)
            landing: set[str] = set()
            baseline: set[str] = set()
            for d in day_range:
                for kws in ad_keywords_by_day.get((platform, d), []):
                    landing.update(kws)
                for kws in blank_keywords_by_day.get((platform, d), []):
                    baseline.update(kws)
            sets = KeywordSets.build(training, landing, baseline)
            ads = len(ad_keywords_by_day.get((platform, day), []))
            if cumulative:
                ads = sum(len(ad_keywords_by_day.get((platform, d), [])) for d in day_range)
            detail = bailp_detail(sets)
            row = ScoreRow(
                day=day,
                ttk=ttk(sets) if training else None,
                bailp=detail.value,
                branch=detail.branch,
                ads=ads,
            )
            s.rows.append(row)
        series.append(s)
    return series
