"""Deterministic simulated ad ecosystem.

The world owns pages (each with a category and embedded exchange frames),
exchanges (RANDOM / CONTEXTUAL / BEHAVIORAL serving policies with reaction
delay and daily memory decay), and an ad inventory whose creatives land on
pages generated in three flavors: descriptive title, boilerplate title plus
product-detail markup, and image-only.  Everything is driven by seeded
generators, so a scenario file plus a seed reproduces a run byte for byte.
The world object doubles as a Fetcher: page URLs, exchange frame URLs, and
landing URLs all resolve through ``fetch``.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, quote, urlsplit

from .detect import AdxRuleset
from .identify import image_fixture_key
from .persona import Identity
from .runner import FetchResult

__all__ = [
    "ExchangeMode",
    "ExchangePolicy",
    "AdCreative",
    "SimPage",
    "SimExchange",
    "SimWorld",
    "ScenarioConfig",
    "PersonaConfig",
    "load_scenario",
    "LANDING_PREFIX",
]

LANDING_PREFIX = "https://ads-landing.example/"
HOUSE_LANDING = LANDING_PREFIX + "house"
IMAGE_PREFIX = "https://img-cdn.example/"

# Words shared by every generated page; with idf log2(N/N) = 0 they carry no
# clustering signal, which keeps category structure clean.
FILLER_WORDS = ("页面", "内容", "更新")

_EN_WORDS = (
    "global tech review daily coverage with benchmarks and hands on "
    "reports about hardware software and networks"
).split()


class ExchangeMode(str, Enum):
    RANDOM = "RANDOM"
    CONTEXTUAL = "CONTEXTUAL"
    BEHAVIORAL = "BEHAVIORAL"


@dataclass
class ExchangePolicy:
    mode: ExchangeMode
    profile_threshold: float = 1.0
    reaction_delay_days: int = 0
    targeting_boost: float = 0.0
    memory_decay_per_day: float = 0.0
    nest_frames: bool = False

    def __post_init__(self):
        self.mode = ExchangeMode(self.mode)
        if not 0.0 <= self.targeting_boost <= 1.0:
            raise ValueError("targeting_boost must be in [0, 1]")
        if not 0.0 <= self.memory_decay_per_day <= 1.0:
            raise ValueError("memory_decay_per_day must be in [0, 1]")
        if self.reaction_delay_days < 0:
            raise ValueError("reaction_delay_days must be >= 0")


class Flavor(str, Enum):
    TITLE = "TITLE"
    PRODUCT_DETAIL = "PRODUCT_DETAIL"
    IMAGE = "IMAGE"


@dataclass
class AdCreative:
    creative_id: str
    category: str
    flavor: Flavor
    keywords: list[str]
    landing_url: str
    image_ref: str
    anchor_text: str


@dataclass
class SimPage:
    url: str
    category: str
    exchanges: list[str]
    text: str
    language: str = "zh"


@dataclass
class SimExchange:
    """One exchange's serving policy plus its per-identity interest profiles."""

    platform: str
    policy: ExchangePolicy
    profiles: dict[str, dict[str, float]] = field(default_factory=dict)
    qualified_at: dict[tuple[str, str], float] = field(default_factory=dict)

    def record_visit(self, jar: str, category: str, now: float) -> None:
        prof = self.profiles.setdefault(jar, {})
        prof[category] = prof.get(category, 0.0) + 1.0
        key = (jar, category)
        if prof[category] >= self.policy.profile_threshold and key not in self.qualified_at:
            self.qualified_at[key] = now

    def top_category(self, jar: str) -> Optional[str]:
        prof = self.profiles.get(jar)
        if not prof:
            return None
        best = max(prof.values())
        return min(c for c, w in prof.items() if w == best)

    def targeting_category(self, jar: str, now: float, day_length: float) -> Optional[str]:
        """The category this identity is actively targeted on, if any."""
        top = self.top_category(jar)
        if top is None:
            return None
        prof = self.profiles[jar]
        if prof[top] < self.policy.profile_threshold:
            return None
        qualified = self.qualified_at.get((jar, top))
        if qualified is None:
            return None
        if now - qualified < self.policy.reaction_delay_days * day_length:
            return None
        return top

    def decay(self) -> None:
        factor = 1.0 - self.policy.memory_decay_per_day
        for prof in self.profiles.values():
            for cat in prof:
                prof[cat] *= factor


@dataclass
class PersonaConfig:
    interest: str
    user_agent: str
    seed: int
    switch_to: Optional[str] = None
    switch_day: Optional[int] = None


@dataclass
class ScenarioConfig:
    seed: int
    day_length: float
    horizon_days: int
    mean_gap_seconds: float
    control_pages: list[str]
    personas: list[PersonaConfig]
    reader_user_agent: str
    freshness_bound: float


class SimWorld:
    """Self-contained ad ecosystem; acts as the Fetcher for simulated runs."""

    def __init__(
        self,
        ruleset: AdxRuleset,
        taxonomy_keywords: dict[str, list[str]],
        scenario: dict,
    ):
        self.ruleset = ruleset
        self.seed = int(scenario.get("seed", 0))
        self.day_length = float(scenario.get("day_length", 86_400.0))
        self.clock = 0.0
        self.events: list[dict] = []
        self._build_rng = random.Random(f"{self.seed}:build")
        self._serve_rng = random.Random(f"{self.seed}:serve")

        self.exchanges: dict[str, SimExchange] = {}
        for ex in scenario.get("exchanges", []):
            platform = ex["platform"]
            if platform not in ruleset.platforms:
                raise ValueError(f"scenario exchange {platform!r} not in ruleset")
            policy = ExchangePolicy(
                mode=ex["mode"],
                profile_threshold=float(ex.get("profile_threshold", 1.0)),
                reaction_delay_days=int(ex.get("reaction_delay_days", 0)),
                targeting_boost=float(ex.get("targeting_boost", 0.0)),
                memory_decay_per_day=float(ex.get("memory_decay_per_day", 0.0)),
                nest_frames=bool(ex.get("nest_frames", False)),
            )
            self.exchanges[platform] = SimExchange(platform=platform, policy=policy)

        self.pages: dict[str, SimPage] = {}
        for group in scenario.get("page_groups", []):
            self._add_page_group(group, taxonomy_keywords)

        self.inventory: dict[str, list[AdCreative]] = {}
        self.landings: dict[str, AdCreative] = {}
        self._all_creatives: list[AdCreative] = []
        serial = 0
        flavors = [Flavor.TITLE, Flavor.PRODUCT_DETAIL, Flavor.IMAGE]
        for entry in scenario.get("inventory", []):
            category = entry["category"]
            if category not in taxonomy_keywords:
                raise ValueError(f"inventory category {category!r} not in taxonomy")
            pool = list(taxonomy_keywords[category])
            self._build_rng.shuffle(pool)
            creatives = []
            cursor = 0
            for j in range(int(entry["creatives"])):
                per = 2 + (j % 2)  # alternate 2- and 3-keyword creatives
                kws = [pool[(cursor + t) % len(pool)] for t in range(min(per, len(pool)))]
                cursor += per
                cid = f"cr{serial:03d}"
                serial += 1
                creative = AdCreative(
                    creative_id=cid,
                    category=category,
                    flavor=flavors[j % 3],
                    keywords=list(dict.fromkeys(kws)),
                    landing_url=f"{LANDING_PREFIX}{cid}",
                    image_ref=f"{IMAGE_PREFIX}{cid}.png",
                    anchor_text=" ".join(kws[:2]),
                )
                creatives.append(creative)
                self.landings[creative.landing_url] = creative
                self._all_creatives.append(creative)
            self.inventory[category] = creatives

    # -- construction helpers ------------------------------------------------
    def _add_page_group(self, group: dict, taxonomy_keywords: dict[str, list[str]]) -> None:
        category = group["category"]
        if category not in taxonomy_keywords:
            raise ValueError(f"page category {category!r} not in taxonomy")
        slug = group["slug"]
        language = group.get("language", "zh")
        for platform in group.get("exchanges", []):
            if platform not in self.exchanges:
                raise ValueError(f"page group {slug!r} embeds unknown exchange {platform!r}")
        for i in range(int(group["count"])):
            url = f"https://{slug}{i}.example/"
            if language == "en":
                words = list(_EN_WORDS)
                self._build_rng.shuffle(words)
                text = " ".join(words)
            else:
                pool = list(taxonomy_keywords[category])
                take = min(len(pool), 7)
                kws = self._build_rng.sample(pool, take)
                parts = []
                for kw in kws:
                    parts.extend([kw] * self._build_rng.randint(2, 5))
                self._build_rng.shuffle(parts)
                parts.extend(FILLER_WORDS)
                text = " ".join(parts)
            self.pages[url] = SimPage(
                url=url,
                category=category,
                exchanges=list(group.get("exchanges", [])),
                text=text,
                language=language,
            )

    # -- event log -----------------------------------------------------------
    def _log(self, actor: str, action: str, detail: str) -> None:
        self.events.append(
            {"time": round(self.clock, 6), "actor": actor, "action": action, "detail": detail}
        )

    def event_lines(self) -> list[str]:
        return [json.dumps(e, ensure_ascii=False, sort_keys=True) for e in self.events]

    # -- frame/url plumbing ----------------------------------------------------
    def frame_src(self, platform: str, page_url: str, slot: int) -> str:
        prefix = self.ruleset.first_prefix(platform).rstrip("/")
        return f"{prefix}/serve?page={quote(page_url, safe='')}&slot={slot}"

    def _inner_src(self, platform: str, creative_id: str) -> str:
        prefix = self.ruleset.first_prefix(platform).rstrip("/")
        return f"{prefix}/inner?ad={creative_id}"

    def is_landing_url(self, url: str) -> bool:
        return url.startswith(LANDING_PREFIX)

    def monitor_truth(self) -> dict[str, set[str]]:
        return {url: set(page.exchanges) for url, page in self.pages.items()}

    @property
    def day(self) -> int:
        return int(self.clock // self.day_length) + 1

    # -- core serving ----------------------------------------------------------
    def serve_page(self, url: str, identity: Identity) -> str:
        page = self.pages[url]
        for platform in page.exchanges:
            self.exchanges[platform].record_visit(identity.cookie_jar, page.category, self.clock)
            self._log(platform, "profile-visit", f"{identity.cookie_jar} {page.category}")
        self._log("world", "serve-page", f"{url} -> {identity.cookie_jar}")
        frames = "".join(
            f'<iframe src="{self.frame_src(platform, url, slot)}"></iframe>'
            for slot, platform in enumerate(page.exchanges)
        )
        return (
            f"<html><head><title>{page.url}</title></head>"
            f"<body><p>{page.text}</p>{frames}</body></html>"
        )

    def _pick_uniform(self, creatives: list[AdCreative]) -> Optional[AdCreative]:
        if not creatives:
            return None
        return creatives[self._serve_rng.randrange(len(creatives))]

    def serve_ad(self, platform: str, identity: Identity, context_page: str) -> tuple[AdCreative, str]:
        """Choose a creative per the exchange policy; returns (creative, mode used)."""
        exchange = self.exchanges[platform]
        policy = exchange.policy
        creative: Optional[AdCreative] = None
        mode_used = "RANDOM"
        if policy.mode == ExchangeMode.CONTEXTUAL:
            page = self.pages.get(context_page)
            if page is not None:
                creative = self._pick_uniform(self.inventory.get(page.category, []))
                mode_used = "CONTEXTUAL"
        elif policy.mode == ExchangeMode.BEHAVIORAL:
            target = exchange.targeting_category(identity.cookie_jar, self.clock, self.day_length)
            if target is not None and self._serve_rng.random() < policy.targeting_boost:
                creative = self._pick_uniform(self.inventory.get(target, []))
                mode_used = "BEHAVIORAL"
        if creative is None:
            creative = self._pick_uniform(self._all_creatives)
            mode_used = "RANDOM" if creative is not None else "HOUSE"
        if creative is None:
            creative = AdCreative(
                creative_id="house",
                category="",
                flavor=Flavor.TITLE,
                keywords=[],
                landing_url=HOUSE_LANDING,
                image_ref="",
                anchor_text="house",
            )
        self._log(
            platform, "serve-ad",
            f"{identity.cookie_jar} {creative.creative_id} {mode_used}",
        )
        return creative, mode_used

    def advance_day(self) -> None:
        self.clock += self.day_length
        for exchange in self.exchanges.values():
            exchange.decay()
        self._log("world", "advance-day", f"day {self.day}")

    # -- markup ------------------------------------------------------------------
    def _creative_markup(self, creative: AdCreative) -> str:
        img = f'<img src="{creative.image_ref}"/>' if creative.image_ref else ""
        return (
            f'<html><body><a href="{creative.landing_url}">{img}{creative.anchor_text}</a>'
            f"</body></html>"
        )

    def landing_markup(self, creative: AdCreative) -> str:
        if creative.landing_url == HOUSE_LANDING:
            return "<html><body></body></html>"
        kws = " ".join(creative.keywords)
        # Long enough that a page with a creative image still reads as text.
        body_filler = " ".join(creative.keywords * 40)
        if creative.flavor == Flavor.TITLE:
            return (
                f"<html><head><title>{kws}</title></head>"
                f'<body><p>{body_filler}</p><img src="{creative.image_ref}"/></body></html>'
            )
        if creative.flavor == Flavor.PRODUCT_DETAIL:
            return (
                "<html><head><title>淘宝热卖</title></head><body>"
                '<div class="details"><div class="basic"><h2>'
                f'<a href="#">{kws}</a></h2></div></div>'
                f"<p>{body_filler}</p></body></html>"
            )
        return f'<html><head></head><body><img src="{creative.image_ref}"/></body></html>'

    # -- fixtures ------------------------------------------------------------------
    def image_label_fixture(self) -> dict[str, list[str]]:
        return {
            image_fixture_key(c.image_ref): list(c.keywords)
            for c in self._all_creatives
            if c.flavor == Flavor.IMAGE
        }

    def keyword_fixture(self) -> dict[str, list[str]]:
        return {c.landing_url: list(c.keywords) for c in self._all_creatives}

    # -- Fetcher protocol ------------------------------------------------------------
    def fetch(self, url: str, identity: Identity) -> FetchResult:
        if url in self.pages:
            return FetchResult(url=url, final_url=url, status=200, html=self.serve_page(url, identity))
        if url in self.landings:
            html = self.landing_markup(self.landings[url])
            return FetchResult(url=url, final_url=url, status=200, html=html)
        if url == HOUSE_LANDING:
            return FetchResult(url=url, final_url=url, status=200, html="<html><body></body></html>")
        matched = self.ruleset.match(url)
        if matched:
            platform = sorted(matched)[0]
            if platform in self.exchanges:
                parts = urlsplit(url)
                params = parse_qs(parts.query)
                if parts.path.endswith("/serve"):
                    context = params.get("page", [""])[0]
                    creative, _ = self.serve_ad(platform, identity, context)
                    if self.exchanges[platform].policy.nest_frames:
                        inner = self._inner_src(platform, creative.creative_id)
                        html = f'<html><body><iframe src="{inner}"></iframe></body></html>'
                    else:
                        html = self._creative_markup(creative)
                    return FetchResult(url=url, final_url=url, status=200, html=html)
                if parts.path.endswith("/inner"):
                    cid = params.get("ad", [""])[0]
                    for creative in self._all_creatives:
                        if creative.creative_id == cid:
                            return FetchResult(
                                url=url, final_url=url, status=200,
                                html=self._creative_markup(creative),
                            )
                    return FetchResult(url=url, final_url=url, status=404, html="", error="no such ad")
        return FetchResult(url=url, final_url=url, status=404, html="", error="not found")

    # -- crawl log -------------------------------------------------------------------
    def crawl_request_log(self, crawl_id: int = 1) -> list[str]:
        """Synthesize an instrumented-crawl request log over every page."""
        lines = []
        serial = 0
        for visit_id, url in enumerate(sorted(self.pages), start=1):
            page = self.pages[url]
            host = urlsplit(url).netloc
            serial += 1
            lines.append(json.dumps({
                "id": serial, "crawl_id": crawl_id, "visit_id": visit_id,
                "url": url, "top_level_url": url, "method": "GET",
                "referrer": "", "headers": [["Host", host]],
            }, ensure_ascii=False, sort_keys=True))
            for slot, platform in enumerate(page.exchanges):
                src = self.frame_src(platform, url, slot)
                serial += 1
                lines.append(json.dumps({
                    "id": serial, "crawl_id": crawl_id, "visit_id": visit_id,
                    "url": src, "top_level_url": url, "method": "GET",
                    "referrer": url, "headers": [["Host", urlsplit(src).netloc]],
                }, ensure_ascii=False, sort_keys=True))
        return lines


def load_scenario(
    path: str | Path,
    ruleset: AdxRuleset,
    taxonomy_keywords: dict[str, list[str]],
) -> tuple[SimWorld, ScenarioConfig]:
    """Build a world and its run configuration from a scenario file."""
    with open(path, encoding="utf-8") as fh:
        scenario = json.load(fh)
    world = SimWorld(ruleset, taxonomy_keywords, scenario)
    schedule = scenario.get("schedule", {})
    personas = [
        PersonaConfig(
            interest=p["interest"],
            user_agent=p.get("user_agent", "Mozilla/5.0"),
            seed=int(p.get("seed", 0)),
            switch_to=p.get("switch_to"),
            switch_day=p.get("switch_day"),
        )
        for p in scenario.get("personas", [])
    ]
    config = ScenarioConfig(
        seed=int(scenario.get("seed", 0)),
        day_length=float(scenario.get("day_length", 86_400.0)),
        horizon_days=int(schedule.get("horizon_days", 10)),
        mean_gap_seconds=float(schedule.get("mean_gap_seconds", 180.0)),
        control_pages=list(scenario.get("control_pages", [])),
        personas=personas,
        reader_user_agent=scenario.get("reader", {}).get("user_agent", "Mozilla/5.0 (reader)"),
        freshness_bound=float(scenario.get("freshness_bound", 30.0)),
    )
    missing = [p for p in config.control_pages if p not in world.pages]
    if missing:
        raise ValueError(f"control pages not in world: {missing}")
    return world, config
