"""Interest personas and their visit schedules.

A persona owns a browsing identity (user agent + cookie jar) and a pooled
page list: up to 10 training pages of its interest plus exactly 5 control
pages.  Visits draw the page uniformly from the pool with i.i.d. exponential
gaps generated by inverse-CDF sampling on a seeded generator, so a schedule
is fully reproducible from its seed.
"""
from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

logger = logging.getLogger(__name__)

__all__ = [
    "BLANK",
    "Identity",
    "PersonaSpec",
    "VisitKind",
    "VisitEvent",
    "make_persona",
    "schedule_visits",
    "schedule_with_switch",
    "day_of",
]

# Interest marker for the no-training baseline persona.
BLANK = "blank"

DEFAULT_TRAINING_PAGES = 10
CONTROL_PAGE_COUNT = 5
DEFAULT_MEAN_GAP_SECONDS = 180.0
DEFAULT_DAY_LENGTH = 86_400.0


@dataclass(frozen=True)
class Identity:
    """Browsing identity: user agent plus a named cookie jar."""

    user_agent: str
    cookie_jar: str


class VisitKind(str, Enum):
    TRAINING = "TRAINING"
    CONTROL = "CONTROL"


@dataclass(frozen=True)
class VisitEvent:
    at: float
    page: str
    kind: VisitKind


@dataclass
class PersonaSpec:
    interest: str
    identity: Identity
    training_pages: list[str]
    control_pages: list[str]

    def __post_init__(self):
        if self.interest == BLANK and self.training_pages:
            raise ValueError("blank persona must have no training pages")
        if len(self.control_pages) != CONTROL_PAGE_COUNT:
            raise ValueError(
                f"expected exactly {CONTROL_PAGE_COUNT} control pages, got {len(self.control_pages)}"
            )
        overlap = set(self.training_pages) & set(self.control_pages)
        if overlap:
            raise ValueError(f"training and control pages overlap: {sorted(overlap)}")
        if len(set(self.training_pages)) != len(self.training_pages):
            raise ValueError("duplicate training pages")

    @property
    def pool(self) -> list[str]:
        return self.training_pages + self.control_pages


def make_persona(
    interest: str,
    labeled_pages: Sequence[tuple[str, str]],
    control_pages: Sequence[str],
    identity: Identity,
    top_k: int = DEFAULT_TRAINING_PAGES,
    ranking: Optional[Sequence[str]] = None,
) -> PersonaSpec:
    """Build a persona from category-labeled pages.

    Training pages are the first ``top_k`` pages labeled with ``interest``,
    in corpus order unless an explicit ``ranking`` (page URL order) is given.
    Fewer than ``top_k`` available pages is allowed with a warning; none at
    all is an error, as is an interest absent from the labels entirely.
    """
    if interest == BLANK:
        return PersonaSpec(
            interest=BLANK,
            identity=identity,
            training_pages=[],
            control_pages=list(control_pages),
        )
    labels = {label for _, label in labeled_pages}
    if interest not in labels:
        raise ValueError(f"no pages labeled with interest {interest!r}")
    candidates = [url for url, label in labeled_pages if label == interest]
    if ranking is not None:
        pos = {url: i for i, url in enumerate(ranking)}
        candidates.sort(key=lambda u: pos.get(u, len(pos)))
    if not candidates:
        raise ValueError(f"no pages labeled with interest {interest!r}")
    if len(candidates) < top_k:
        logger.warning(
            "interest %r has only %d labeled pages (wanted %d); using all of them",
            interest, len(candidates), top_k,
        )
    training = candidates[:top_k]
    return PersonaSpec(
        interest=interest,
        identity=identity,
        training_pages=training,
        control_pages=list(control_pages),
    )


def day_of(at: float, day_length: float = DEFAULT_DAY_LENGTH) -> int:
    """1-based day index of a timestamp."""
    return int(at // day_length) + 1


def _exponential_gap(rng: random.Random, mean_gap: float) -> float:
    # Inverse CDF of Exp(1/mean): -mean * ln(1 - u).  Resample the measure-zero
    # u = 0 case so timestamps stay strictly increasing.
    while True:
        u = rng.random()
        gap = -mean_gap * math.log(1.0 - u)
        if gap > 0.0:
            return gap


def schedule_visits(
    spec: PersonaSpec,
    horizon_days: int,
    mean_gap_seconds: float = DEFAULT_MEAN_GAP_SECONDS,
    seed: int = 0,
    day_length: float = DEFAULT_DAY_LENGTH,
) -> list[VisitEvent]:
    """Sample the persona's visit timeline over the horizon.

    Per event the generator draws the gap first, then the page, so schedules
    are byte-stable for a given seed.
    """
    if horizon_days < 1:
        raise ValueError("horizon_days must be >= 1")
    if mean_gap_seconds <= 0:
        raise ValueError("mean_gap_seconds must be positive")
    rng = random.Random(seed)
    pool = spec.pool
    if not pool:
        raise ValueError("persona has no pages to visit")
    training = set(spec.training_pages)
    end = horizon_days * day_length
    events: list[VisitEvent] = []
    t = 0.0
    while True:
        t += _exponential_gap(rng, mean_gap_seconds)
        if t >= end:
            break
        page = pool[rng.randrange(len(pool))]
        kind = VisitKind.TRAINING if page in training else VisitKind.CONTROL
        events.append(VisitEvent(at=t, page=page, kind=kind))
    return events


def schedule_with_switch(
    first: PersonaSpec,
    second: PersonaSpec,
    switch_day: int,
    horizon_days: int,
    mean_gap_seconds: float = DEFAULT_MEAN_GAP_SECONDS,
    seed: int = 0,
    day_length: float = DEFAULT_DAY_LENGTH,
) -> list[VisitEvent]:
    """One timeline that retrains the same identity on a new interest.

    Events before ``switch_day`` draw from ``first``'s pool, events from that
    day on draw from ``second``'s; both specs must share the identity since
    the point of a switch is continuity of the tracked cookie jar.
    """
    if first.identity != second.identity:
        raise ValueError("interest switch must keep the same identity")
    if not 1 < switch_day <= horizon_days:
        raise ValueError("switch_day must fall inside the horizon")
    rng = random.Random(seed)
    end = horizon_days * day_length
    events: list[VisitEvent] = []
    t = 0.0
    while True:
        t += _exponential_gap(rng, mean_gap_seconds)
        if t >= end:
            break
        spec = first if day_of(t, day_length) < switch_day else second
        pool = spec.pool
        page = pool[rng.randrange(len(pool))]
        kind = VisitKind.TRAINING if page in set(spec.training_pages) else VisitKind.CONTROL
        events.append(VisitEvent(at=t, page=page, kind=kind))
    return events
