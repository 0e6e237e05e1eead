"""Command-line pipeline over a staged workspace.

Each subcommand owns one stage directory (parse, intersect, classify,
persona, run, identify, score, report) and re-runs only when its inputs
change; ``simulate`` chains all of them against the bundled simulator.
Exit codes: 0 success, 1 usage, 2 input error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import data_path
from .cluster import DocumentVector, select_k
from .detect import (
    AdxRuleset,
    build_monitor_matrix,
    filter_language,
    parse_request_log,
)
from .identify import (
    AdIdentifier,
    AdLabel,
    FixtureImageClient,
    FixtureKeywordClient,
    HttpImageClient,
    HttpKeywordClient,
    LandingSnapshot,
    Method,
    load_product_rules,
)
from .metrics import ScoreRow, ScoreSeries, category_share_timeline, daily_scores
from .persona import (
    BLANK,
    Identity,
    PersonaSpec,
    VisitEvent,
    VisitKind,
    make_persona,
    schedule_visits,
    schedule_with_switch,
)
from .report import render_report
from .runner import LiveFetcher, audit_isolation, run_measurement
from .sim import PersonaConfig, load_scenario
from .taxonomy import Taxonomy, label_clusters
from .textprep import GreedyDictTokenizer, TokenizedDocument, load_dictionary, parse_page
from .vectorize import TfidfFeaturizer
from .workspace import InputError, StageError, Workspace

DEFAULT_MEAN_GAP = 180.0
DEFAULT_HORIZON_DAYS = 10
DEFAULT_DAY_LENGTH = 86_400.0
DEFAULT_FRESHNESS = 30.0
CORPUS_IDENTITY = Identity("Mozilla/5.0 (compatible; CorpusFetch/1.0)", "jar-corpus")
READER_JAR = "jar-reader"


class UsageError(Exception):
    """Bad invocation: unknown flags, missing required arguments."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; this pipeline reserves 2
    # for input errors, so usage problems surface as exceptions instead.
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    workspace: Path
    ruleset: Path
    taxonomy: Path
    dictionary: Path
    mode: str
    scenario: Optional[Path]
    force: bool


def _config(args) -> RunConfig:
    mode = getattr(args, "mode", "live")
    scenario = getattr(args, "scenario", None)
    if mode == "sim" and scenario is None:
        raise UsageError("--mode sim requires --scenario")
    if mode == "live" and scenario is not None:
        raise UsageError("--scenario only applies to --mode sim")
    return RunConfig(
        workspace=Path(args.workspace),
        ruleset=Path(getattr(args, "ruleset", None) or data_path("ruleset.jsonl")),
        taxonomy=Path(getattr(args, "taxonomy", None) or data_path("taxonomy.jsonl")),
        dictionary=Path(getattr(args, "dictionary", None) or data_path("dictionary.txt")),
        mode=mode,
        scenario=Path(scenario) if scenario else None,
        force=bool(getattr(args, "force", False)),
    )


def _taxonomy_keywords(taxonomy: Taxonomy) -> dict[str, list[str]]:
    return {c.name: list(c.keywords) for c in taxonomy.categories}


def _sim_world(cfg: RunConfig, ruleset: AdxRuleset, taxonomy: Taxonomy):
    assert cfg.scenario is not None
    return load_scenario(cfg.scenario, ruleset, _taxonomy_keywords(taxonomy))


def _scenario_sections(path: Path) -> tuple[list[PersonaConfig], list[str], dict, str]:
    """Persona definitions shared by sim scenarios and live persona files."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    personas = [
        PersonaConfig(
            interest=p["interest"],
            user_agent=p.get("user_agent", "Mozilla/5.0"),
            seed=int(p.get("seed", 0)),
            switch_to=p.get("switch_to"),
            switch_day=p.get("switch_day"),
        )
        for p in obj.get("personas", [])
    ]
    reader_ua = obj.get("reader", {}).get("user_agent", "Mozilla/5.0 (compatible; AdReader/1.0)")
    defaults = {
        "mean_gap_seconds": obj.get("schedule", {}).get("mean_gap_seconds"),
        "horizon_days": obj.get("schedule", {}).get("horizon_days"),
        "day_length": obj.get("day_length"),
        "freshness_bound": obj.get("freshness_bound"),
    }
    return personas, list(obj.get("control_pages", [])), defaults, reader_ua


def _pick(flag_value, file_value, default):
    if flag_value is not None:
        return flag_value
    if file_value is not None:
        return file_value
    return default


# ---------------------------------------------------------------------------
# small io helpers


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def _write_lines(path: Path, lines) -> None:
    text = "\n".join(lines)
    path.write_text(text + "\n" if text else "", encoding="utf-8")


def _announce(name: str, path: Path, skipped: bool) -> None:
    state = "up to date" if skipped else "built"
    print(f"{name}: {state} ({path})")


# ---------------------------------------------------------------------------
# stage builders (shared between subcommands and `simulate`)


def build_parse_stage(ws: Workspace, cfg: RunConfig, log_path: Optional[Path]) -> tuple[Path, bool]:
    ruleset = AdxRuleset.load(cfg.ruleset)
    if cfg.mode == "sim":
        inputs = {"ruleset": cfg.ruleset, "scenario": cfg.scenario, "taxonomy": cfg.taxonomy}
        params = {"mode": "sim"}
    else:
        if log_path is None:
            raise UsageError("parse: --log is required in live mode")
        inputs = {"ruleset": cfg.ruleset, "log": log_path}
        params = {"mode": "live"}

    def build(tmp: Path) -> None:
        if cfg.mode == "sim":
            taxonomy = Taxonomy.load(cfg.taxonomy)
            world, _ = _sim_world(cfg, ruleset, taxonomy)
            lines = world.crawl_request_log()
            _write_lines(tmp / "log.jsonl", lines)
        else:
            lines = Path(log_path).read_text(encoding="utf-8").splitlines()
        result = parse_request_log(lines)
        matrix = build_monitor_matrix(result.records, ruleset)
        _write_lines(tmp / "matrix.jsonl", list(matrix.to_jsonl()))
        _write_lines(tmp / "matrix.csv", list(matrix.to_csv()))
        _write_lines(
            tmp / "skips.jsonl",
            [_dump({"line": n, "reason": r}) for n, r in result.skips],
        )
        (tmp / "meta.json").write_text(
            _dump(
                {
                    "pages": len(matrix.pages),
                    "platforms": matrix.platforms,
                    "records": len(result.records),
                    "skipped": result.skip_count,
                }
            ),
            encoding="utf-8",
        )

    return ws.run_stage("parse", inputs, params, build, cfg.force)


def build_intersect_stage(ws: Workspace, cfg: RunConfig, platforms: list[str]) -> tuple[Path, bool]:
    matrix_path = ws.stage_file("parse", "matrix.jsonl")
    meta = json.loads(ws.stage_file("parse", "meta.json").read_text(encoding="utf-8"))
    known = meta["platforms"]
    inputs = {"matrix": matrix_path}
    params = {"platforms": platforms}

    def build(tmp: Path) -> None:
        for platform in platforms:
            if platform not in known:
                raise InputError(f"unknown platform: {platform!r}")
        rows = _read_jsonl(matrix_path)
        pages = [r["page"] for r in rows if all(p in r["platforms"] for p in platforms)]
        _write_lines(tmp / "pages.txt", pages)
        (tmp / "meta.json").write_text(
            _dump({"platforms": platforms, "pages": len(pages)}), encoding="utf-8"
        )

    return ws.run_stage("intersect", inputs, params, build, cfg.force)


def build_classify_stage(
    ws: Workspace,
    cfg: RunConfig,
    min_cjk_ratio: float,
    per_doc_features: int,
    k_min: int,
    k_max: Optional[int],
    top_terms: int,
    seed: int,
) -> tuple[Path, bool]:
    pages_path = ws.stage_file("intersect", "pages.txt")
    inputs = {
        "pages": pages_path,
        "dictionary": cfg.dictionary,
        "taxonomy": cfg.taxonomy,
        "ruleset": cfg.ruleset,
    }
    if cfg.mode == "sim":
        inputs["scenario"] = cfg.scenario
    params = {
        "mode": cfg.mode,
        "min_cjk_ratio": min_cjk_ratio,
        "per_doc_features": per_doc_features,
        "k_min": k_min,
        "k_max": k_max,
        "top_terms": top_terms,
        "seed": seed,
    }

    def build(tmp: Path) -> None:
        pages = [p for p in pages_path.read_text(encoding="utf-8").splitlines() if p]
        ruleset = AdxRuleset.load(cfg.ruleset)
        taxonomy = Taxonomy.load(cfg.taxonomy)
        tokenizer = GreedyDictTokenizer(load_dictionary(cfg.dictionary))
        if cfg.mode == "sim":
            fetcher = _sim_world(cfg, ruleset, taxonomy)[0]
        else:
            fetcher = LiveFetcher()
        corpus_rows = []
        texts: list[tuple[str, str]] = []
        failed: list[str] = []
        for url in pages:
            result = fetcher.fetch(url, CORPUS_IDENTITY)
            if not result.ok:
                failed.append(url)
                continue
            corpus_rows.append(_dump({"url": url, "html": result.html}))
            texts.append((url, parse_page(result.html).text))
        _write_lines(tmp / "corpus.jsonl", corpus_rows)
        kept = filter_language(texts, min_cjk_ratio)
        dropped = sorted(set(u for u, _ in texts) - set(u for u, _ in kept))
        if len(kept) < 2:
            raise StageError(
                f"classify needs at least 2 usable pages, got {len(kept)} "
                f"({len(failed)} failed, {len(dropped)} filtered by language)"
            )
        tokenizer_docs = []
        for url, text in kept:
            tokenizer_docs.append(TokenizedDocument(url=url, tokens=tokenizer.tokenize(text)))
        featurizer = TfidfFeaturizer(per_doc_features=per_doc_features).fit(tokenizer_docs)
        X = featurizer.transform(tokenizer_docs)
        vectors = [
            DocumentVector(url=doc.url, weights=X[i]) for i, doc in enumerate(tokenizer_docs)
        ]
        best_k, clustering, table = select_k(vectors, k_min, k_max, seed=seed)
        categories = label_clusters(clustering, featurizer.vocabulary_, taxonomy, top_terms)
        cluster_rows = []
        for i, doc in enumerate(tokenizer_docs):
            c = clustering.assignments[doc.url]
            cluster_rows.append(
                _dump(
                    {
                        "url": doc.url,
                        "cluster": c,
                        "category": categories[c],
                        "features": featurizer.selected_terms_[i],
                    }
                )
            )
        _write_lines(tmp / "clusters.jsonl", cluster_rows)
        _write_lines(
            tmp / "silhouette.csv",
            ["k,mean_silhouette"] + [f"{k},{mean:.6f}" for k, mean in table],
        )
        (tmp / "meta.json").write_text(
            _dump(
                {
                    "k": best_k,
                    "mean_silhouette": round(clustering.mean_silhouette or 0.0, 6),
                    "documents": len(tokenizer_docs),
                    "vocabulary_size": len(featurizer.vocabulary_),
                    "labels": {str(c): cat for c, cat in sorted(categories.items())},
                    "failed_fetch": failed,
                    "dropped_language": dropped,
                }
            ),
            encoding="utf-8",
        )

    return ws.run_stage("classify", inputs, params, build, cfg.force)


def build_persona_stage(
    ws: Workspace,
    cfg: RunConfig,
    personas_path: Path,
    mean_gap: float,
    horizon_days: int,
    day_length: float,
) -> tuple[Path, bool]:
    clusters_path = ws.stage_file("classify", "clusters.jsonl")
    inputs = {"clusters": clusters_path, "personas": personas_path}
    params = {
        "mean_gap_seconds": mean_gap,
        "horizon_days": horizon_days,
        "day_length": day_length,
    }

    def build(tmp: Path) -> None:
        personas, control_pages, _, _ = _scenario_sections(personas_path)
        if not personas:
            raise InputError(f"no personas defined in {personas_path}")
        interests = [p.interest for p in personas]
        if len(set(interests)) != len(interests):
            raise InputError("persona interests must be unique")
        labeled = [(r["url"], r["category"]) for r in _read_jsonl(clusters_path)]
        persona_rows = []
        event_rows = []
        for i, p in enumerate(personas):
            identity = Identity(user_agent=p.user_agent, cookie_jar=f"jar-p{i + 1}")
            spec = make_persona(p.interest, labeled, control_pages, identity)
            switch_training: list[str] = []
            if p.switch_to:
                if not p.switch_day:
                    raise InputError(f"persona {p.interest!r} has switch_to but no switch_day")
                second = make_persona(p.switch_to, labeled, control_pages, identity)
                switch_training = second.training_pages
                events = schedule_with_switch(
                    spec, second, int(p.switch_day), horizon_days,
                    mean_gap_seconds=mean_gap, seed=p.seed, day_length=day_length,
                )
            else:
                events = schedule_visits(
                    spec, horizon_days,
                    mean_gap_seconds=mean_gap, seed=p.seed, day_length=day_length,
                )
            persona_rows.append(
                _dump(
                    {
                        "interest": p.interest,
                        "user_agent": p.user_agent,
                        "cookie_jar": identity.cookie_jar,
                        "training_pages": spec.training_pages,
                        "control_pages": spec.control_pages,
                        "seed": p.seed,
                        "switch_to": p.switch_to,
                        "switch_day": p.switch_day,
                        "switch_training_pages": switch_training,
                    }
                )
            )
            for ev in events:
                event_rows.append(
                    _dump(
                        {
                            "persona": p.interest,
                            "at": round(ev.at, 6),
                            "page": ev.page,
                            "kind": ev.kind.value,
                        }
                    )
                )
        _write_lines(tmp / "personas.jsonl", persona_rows)
        _write_lines(tmp / "schedule.jsonl", event_rows)
        (tmp / "meta.json").write_text(
            _dump(
                {
                    "personas": interests,
                    "events": len(event_rows),
                    "mean_gap_seconds": mean_gap,
                    "horizon_days": horizon_days,
                    "day_length": day_length,
                }
            ),
            encoding="utf-8",
        )

    return ws.run_stage("persona", inputs, params, build, cfg.force)


def build_run_stage(
    ws: Workspace,
    cfg: RunConfig,
    reader_ua: str,
    freshness_bound: float,
    day_length: float,
) -> tuple[Path, bool]:
    personas_path = ws.stage_file("persona", "personas.jsonl")
    schedule_path = ws.stage_file("persona", "schedule.jsonl")
    inputs = {"personas": personas_path, "schedule": schedule_path, "ruleset": cfg.ruleset}
    if cfg.mode == "sim":
        inputs["scenario"] = cfg.scenario
        inputs["taxonomy"] = cfg.taxonomy
    params = {
        "mode": cfg.mode,
        "reader_ua": reader_ua,
        "freshness_bound": freshness_bound,
        "day_length": day_length,
    }

    def build(tmp: Path) -> None:
        ruleset = AdxRuleset.load(cfg.ruleset)
        world = None
        if cfg.mode == "sim":
            taxonomy = Taxonomy.load(cfg.taxonomy)
            world, _ = _sim_world(cfg, ruleset, taxonomy)
        specs: dict[str, PersonaSpec] = {}
        meta_rows = []
        for row in _read_jsonl(personas_path):
            spec = PersonaSpec(
                interest=row["interest"],
                identity=Identity(row["user_agent"], row["cookie_jar"]),
                training_pages=list(row["training_pages"]),
                control_pages=list(row["control_pages"]),
            )
            specs[spec.interest] = spec
            meta_rows.append(
                {
                    "interest": row["interest"],
                    "cookie_jar": row["cookie_jar"],
                    "switch_to": row.get("switch_to"),
                    "switch_day": row.get("switch_day"),
                }
            )
        events_by_persona: dict[str, list[VisitEvent]] = {name: [] for name in specs}
        for row in _read_jsonl(schedule_path):
            events_by_persona[row["persona"]].append(
                VisitEvent(at=row["at"], page=row["page"], kind=VisitKind(row["kind"]))
            )
        schedules = [(specs[name], events_by_persona[name]) for name in specs]
        reader_identity = Identity(reader_ua, READER_JAR)
        on_advance = None
        if world is not None:
            on_advance = lambda day: world.advance_day()  # noqa: E731
        result = run_measurement(
            schedules,
            world if world is not None else LiveFetcher(),
            ruleset,
            reader_identity,
            freshness_bound=freshness_bound,
            day_length=day_length,
            on_advance=on_advance,
        )
        landing_urls = {obs.link.href for obs in result.observations}
        if world is not None:
            is_landing = world.is_landing_url
        else:
            is_landing = lambda url: url in landing_urls  # noqa: E731
        violations = audit_isolation(
            result.transcript, {s.identity.cookie_jar for s in specs.values()}, is_landing
        )
        if violations:
            raise StageError(
                f"isolation breach: {len(violations)} persona request(s) hit landing URLs"
            )
        visit_rows = []
        for outcome in result.visits:
            visit_rows.append(
                _dump(
                    {
                        "at": round(outcome.event.at, 6),
                        "persona": outcome.persona,
                        "page": outcome.event.page,
                        "kind": outcome.event.kind.value,
                        "ok": outcome.ok,
                        "ads": len(outcome.ad_links),
                        "error": outcome.error,
                    }
                )
            )
        obs_rows = []
        for obs in result.observations:
            snapshot = None
            if obs.snapshot is not None:
                snapshot = {
                    "final_url": obs.snapshot.final_url,
                    "title": obs.snapshot.title,
                    "body_text": obs.snapshot.body_text,
                    "image_refs": obs.snapshot.image_refs,
                    "html": obs.snapshot.html,
                }
            obs_rows.append(
                _dump(
                    {
                        "observation_id": obs.observation_id,
                        "persona": obs.link.persona,
                        "platform": obs.link.platform,
                        "control_page": obs.link.control_page,
                        "href": obs.link.href,
                        "frame_path": obs.link.frame_path,
                        "discovered_at": round(obs.link.discovered_at, 6),
                        "fetched_at": round(obs.fetched_at, 6),
                        "day": obs.day_index,
                        "status": obs.status,
                        "reason": obs.reason,
                        "snapshot": snapshot,
                    }
                )
            )
        _write_lines(tmp / "visits.jsonl", visit_rows)
        _write_lines(tmp / "observations.jsonl", obs_rows)
        _write_lines(tmp / "transcript.jsonl", [e.to_json() for e in result.transcript])
        persona_meta = json.loads(ws.stage_file("persona", "meta.json").read_text(encoding="utf-8"))
        platforms: list[str] = []
        if world is not None:
            platforms = list(world.exchanges)
            _write_lines(tmp / "sim_events.jsonl", world.event_lines())
            (tmp / "fixtures.json").write_text(
                _dump({"image": world.image_label_fixture(), "keyword": world.keyword_fixture()}),
                encoding="utf-8",
            )
        else:
            platforms = sorted({obs.link.platform for obs in result.observations})
        (tmp / "run_meta.json").write_text(
            _dump(
                {
                    "mode": cfg.mode,
                    "day_length": day_length,
                    "freshness_bound": freshness_bound,
                    "horizon_days": persona_meta["horizon_days"],
                    "platforms": platforms,
                    "personas": meta_rows,
                    "reader_jar": READER_JAR,
                    "observations": len(result.observations),
                }
            ),
            encoding="utf-8",
        )

    return ws.run_stage("run", inputs, params, build, cfg.force)


def build_identify_stage(
    ws: Workspace,
    cfg: RunConfig,
    product_rules_path: Path,
    fixtures_path: Optional[Path],
    image_endpoint: Optional[str],
    keyword_endpoint: Optional[str],
) -> tuple[Path, bool]:
    observations_path = ws.stage_file("run", "observations.jsonl")
    inputs = {
        "observations": observations_path,
        "dictionary": cfg.dictionary,
        "taxonomy": cfg.taxonomy,
        "product_rules": product_rules_path,
    }
    if fixtures_path is not None:
        inputs["fixtures"] = fixtures_path
    params = {"image_endpoint": image_endpoint, "keyword_endpoint": keyword_endpoint}

    def build(tmp: Path) -> None:
        tokenizer = GreedyDictTokenizer(load_dictionary(cfg.dictionary))
        taxonomy = Taxonomy.load(cfg.taxonomy)
        rules = load_product_rules(product_rules_path)
        image_client = None
        keyword_client = None
        if fixtures_path is not None:
            fixtures = json.loads(Path(fixtures_path).read_text(encoding="utf-8"))
            image_client = FixtureImageClient(fixtures.get("image", {}))
            keyword_client = FixtureKeywordClient(fixtures.get("keyword", {}))
        if image_endpoint:
            image_client = HttpImageClient(image_endpoint)
        if keyword_endpoint:
            keyword_client = HttpKeywordClient(keyword_endpoint)
        identifier = AdIdentifier(
            tokenizer=tokenizer,
            taxonomy=taxonomy,
            product_rules=rules,
            image_client=image_client,
            keyword_client=keyword_client,
        )
        label_rows = []
        methods: dict[str, int] = {}
        for row in _read_jsonl(observations_path):
            snap = row.get("snapshot")
            if snap is None:
                label = AdLabel(
                    observation_id=row["observation_id"],
                    keywords=[],
                    category="uncategorized",
                    method=Method.UNRESOLVED,
                    note="landing fetch failed",
                )
            else:
                snapshot = LandingSnapshot(
                    final_url=snap["final_url"],
                    title=snap["title"],
                    body_text=snap["body_text"],
                    image_refs=list(snap["image_refs"]),
                    html=snap.get("html", ""),
                )
                label = identifier.identify(snapshot, row["platform"], row["observation_id"])
            methods[label.method.value] = methods.get(label.method.value, 0) + 1
            label_rows.append(
                _dump(
                    {
                        "observation_id": label.observation_id,
                        "keywords": label.keywords,
                        "category": label.category,
                        "method": label.method.value,
                        "note": label.note,
                    }
                )
            )
        _write_lines(tmp / "labels.jsonl", label_rows)
        (tmp / "meta.json").write_text(
            _dump({"labels": len(label_rows), "methods": methods}), encoding="utf-8"
        )

    return ws.run_stage("identify", inputs, params, build, cfg.force)


def build_score_stage(
    ws: Workspace,
    cfg: RunConfig,
    cumulative: bool,
    days_override: Optional[int],
    platforms_override: Optional[list[str]],
) -> tuple[Path, bool]:
    personas_path = ws.stage_file("persona", "personas.jsonl")
    clusters_path = ws.stage_file("classify", "clusters.jsonl")
    observations_path = ws.stage_file("run", "observations.jsonl")
    labels_path = ws.stage_file("identify", "labels.jsonl")
    run_meta_path = ws.stage_file("run", "run_meta.json")
    inputs = {
        "personas": personas_path,
        "clusters": clusters_path,
        "observations": observations_path,
        "labels": labels_path,
        "run_meta": run_meta_path,
    }
    params = {
        "cumulative": cumulative,
        "days": days_override,
        "platforms": platforms_override,
    }

    def build(tmp: Path) -> None:
        run_meta = json.loads(run_meta_path.read_text(encoding="utf-8"))
        observations = _read_jsonl(observations_path)
        labels = {r["observation_id"]: r for r in _read_jsonl(labels_path)}
        features = {r["url"]: r["features"] for r in _read_jsonl(clusters_path)}
        personas = _read_jsonl(personas_path)
        platforms = platforms_override or run_meta.get("platforms") or sorted(
            {o["platform"] for o in observations}
        )
        days = days_override or run_meta["horizon_days"]

        # Per persona: (platform, day) -> list of keyword lists; scoring uses
        # fresh observations only, an ad read late may no longer be the ad
        # that was served.
        kw_by_persona: dict[str, dict[tuple[str, int], list[list[str]]]] = {}
        cat_rows_by_persona: dict[str, list[tuple[str, int, str]]] = {}
        for obs in observations:
            if obs["status"] != "ok":
                continue
            label = labels.get(obs["observation_id"])
            if label is None:
                raise InputError(f"no label for observation {obs['observation_id']!r}")
            key = (obs["platform"], obs["day"])
            kw_by_persona.setdefault(obs["persona"], {}).setdefault(key, []).append(
                list(label["keywords"])
            )
            cat_rows_by_persona.setdefault(obs["persona"], []).append(
                (obs["platform"], obs["day"], label["category"])
            )

        blank_rows = [p for p in personas if p["interest"] == BLANK]
        if not blank_rows:
            raise InputError("scoring requires a blank persona as the baseline")
        blank_map = kw_by_persona.get(BLANK, {})

        all_series: list[ScoreSeries] = []
        for p in personas:
            name = p["interest"]
            if name == BLANK:
                training_terms: list[str] = []
            else:
                missing = [u for u in p["training_pages"] if u not in features]
                if missing:
                    raise InputError(f"training pages missing from classify stage: {missing}")
                terms = set()
                for url in p["training_pages"]:
                    terms.update(features[url])
                training_terms = sorted(terms)
            all_series.extend(
                daily_scores(
                    name,
                    platforms,
                    days,
                    training_terms,
                    kw_by_persona.get(name, {}),
                    blank_map,
                    cumulative=cumulative,
                )
            )

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["persona", "platform", "day", "ttk", "bailp"])
        detail_rows = []
        for series in all_series:
            for row in series.rows:
                ttk_cell = "" if row.ttk is None else f"{row.ttk:.6f}"
                writer.writerow(
                    [series.persona, series.platform, row.day, ttk_cell, f"{row.bailp:.6f}"]
                )
                detail_rows.append(
                    _dump(
                        {
                            "persona": series.persona,
                            "platform": series.platform,
                            "day": row.day,
                            "ttk": None if row.ttk is None else round(row.ttk, 6),
                            "bailp": round(row.bailp, 6),
                            "branch": row.branch,
                            "ads": row.ads,
                        }
                    )
                )
        (tmp / "scores.csv").write_text(buf.getvalue(), encoding="utf-8")
        _write_lines(tmp / "scores_detail.jsonl", detail_rows)
        share_rows = []
        for p in personas:
            name = p["interest"]
            timeline = category_share_timeline(cat_rows_by_persona.get(name, []))
            for (platform, day), shares in sorted(timeline.items()):
                share_rows.append(
                    _dump(
                        {
                            "persona": name,
                            "platform": platform,
                            "day": day,
                            "shares": {c: round(v, 6) for c, v in shares.items()},
                        }
                    )
                )
        _write_lines(tmp / "shares.jsonl", share_rows)
        (tmp / "meta.json").write_text(
            _dump({"cumulative": cumulative, "days": days, "platforms": platforms}),
            encoding="utf-8",
        )

    return ws.run_stage("score", inputs, params, build, cfg.force)


def build_report_stage(ws: Workspace, cfg: RunConfig) -> tuple[Path, bool]:
    detail_path = ws.stage_file("score", "scores_detail.jsonl")
    shares_path = ws.stage_file("score", "shares.jsonl")
    scores_csv = ws.stage_file("score", "scores.csv")
    run_meta_path = ws.stage_file("run", "run_meta.json")
    inputs = {
        "scores_detail": detail_path,
        "shares": shares_path,
        "scores_csv": scores_csv,
        "run_meta": run_meta_path,
    }

    def build(tmp: Path) -> None:
        run_meta = json.loads(run_meta_path.read_text(encoding="utf-8"))
        days = run_meta["horizon_days"]
        switch_day = None
        for p in run_meta.get("personas", []):
            if p.get("switch_day"):
                switch_day = int(p["switch_day"])
                break
        series_map: dict[tuple[str, str], ScoreSeries] = {}
        order: list[tuple[str, str]] = []
        for row in _read_jsonl(detail_path):
            key = (row["persona"], row["platform"])
            if key not in series_map:
                series_map[key] = ScoreSeries(persona=row["persona"], platform=row["platform"])
                order.append(key)
            series_map[key].rows.append(
                ScoreRow(
                    day=row["day"],
                    ttk=row["ttk"],
                    bailp=row["bailp"],
                    branch=row["branch"],
                    ads=row["ads"],
                )
            )
        shares: dict[tuple[str, str], dict[int, dict[str, float]]] = {}
        share_csv_rows = []
        for row in _read_jsonl(shares_path):
            key = (row["persona"], row["platform"])
            shares.setdefault(key, {})[row["day"]] = row["shares"]
            for category, value in sorted(row["shares"].items()):
                share_csv_rows.append(
                    [row["persona"], row["platform"], str(row["day"]), category, f"{value:.6f}"]
                )
        render_report([series_map[k] for k in order], shares, tmp, days, switch_day)
        (tmp / "scores.csv").write_text(scores_csv.read_text(encoding="utf-8"), encoding="utf-8")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["persona", "platform", "day", "category", "share"])
        writer.writerows(share_csv_rows)
        (tmp / "shares.csv").write_text(buf.getvalue(), encoding="utf-8")

    return ws.run_stage("report", inputs, {}, build, cfg.force)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_parse(args) -> int:
    cfg = _config(args)
    ws = Workspace(cfg.workspace)
    log_path = Path(args.log) if args.log else None
    path, skipped = build_parse_stage(ws, cfg, log_path)
    _announce("parse", path, skipped)
    return 0


def _cmd_intersect(args) -> int:
    cfg = _config(args)
    ws = Workspace(cfg.workspace)
    path, skipped = build_intersect_stage(ws, cfg, list(args.platforms))
    _announce("intersect", path, skipped)
    return 0


def _cmd_classify(args) -> int:
    cfg = _config(args)
    ws = Workspace(cfg.workspace)
    path, skipped = build_classify_stage(
        ws, cfg, args.min_cjk_ratio, args.per_doc_features,
        args.k_min, args.k_max, args.top_terms, args.seed or 0,
    )
    _announce("classify", path, skipped)
    return 0


def _cmd_persona(args) -> int:
    cfg = _config(args)
    ws = Workspace(cfg.workspace)
    personas_path = Path(args.personas) if args.personas else cfg.scenario
    if personas_path is None:
        raise UsageError("persona: --personas is required in live mode")
    _, _, defaults, _ = _scenario_sections(personas_path)
    mean_gap = float(_pick(args.mean_gap, defaults["mean_gap_seconds"], DEFAULT_MEAN_GAP))
    horizon = int(_pick(args.days, defaults["horizon_days"], DEFAULT_HORIZON_DAYS))
    day_length = float(_pick(args.day_length, defaults["day_length"], DEFAULT_DAY_LENGTH))
    path, skipped = build_persona_stage(ws, cfg, personas_path, mean_gap, horizon, day_length)
    _announce("persona", path, skipped)
    return 0


def _cmd_run(args) -> int:
    cfg = _config(args)
    ws = Workspace(cfg.workspace)
    defaults = {"day_length": None, "freshness_bound": None}
    reader_ua = args.reader_ua
    if cfg.scenario is not None:
        _, _, defaults, scenario_reader_ua = _scenario_sections(cfg.scenario)
        if reader_ua is None:
            reader_ua = scenario_reader_ua
    if reader_ua is None:
        reader_ua = "Mozilla/5.0 (compatible; AdReader/1.0)"
    freshness = float(_pick(args.freshness_bound, defaults["freshness_bound"], DEFAULT_FRESHNESS))
    day_length = float(_pick(args.day_length, defaults["day_length"], DEFAULT_DAY_LENGTH))
    path, skipped = build_run_stage(ws, cfg, reader_ua, freshness, day_length)
    _announce("run", path, skipped)
    return 0


def _cmd_identify(args) -> int:
    cfg = _config(args)
    ws = Workspace(cfg.workspace)
    fixtures = Path(args.fixtures) if args.fixtures else None
    if fixtures is None and cfg.mode == "sim":
        fixtures = ws.stage_file("run", "fixtures.json")
    rules_path = Path(args.product_rules) if args.product_rules else data_path("product_rules.jsonl")
    path, skipped = build_identify_stage(
        ws, cfg, rules_path, fixtures, args.image_endpoint, args.keyword_endpoint
    )
    _announce("identify", path, skipped)
    return 0


def _cmd_score(args) -> int:
    cfg = _config(args)
    ws = Workspace(cfg.workspace)
    path, skipped = build_score_stage(ws, cfg, args.cumulative, args.days, args.platforms)
    _announce("score", path, skipped)
    return 0


def _cmd_report(args) -> int:
    cfg = _config(args)
    ws = Workspace(cfg.workspace)
    path, skipped = build_report_stage(ws, cfg)
    _announce("report", path, skipped)
    return 0


def _cmd_simulate(args) -> int:
    args.mode = "sim"
    if args.scenario is None:
        args.scenario = str(data_path("scenario_demo.json"))
    cfg = _config(args)
    ws = Workspace(cfg.workspace)
    personas, _, defaults, reader_ua = _scenario_sections(cfg.scenario)
    if not personas:
        raise InputError(f"scenario {cfg.scenario} defines no personas")
    mean_gap = float(_pick(args.mean_gap, defaults["mean_gap_seconds"], DEFAULT_MEAN_GAP))
    horizon = int(_pick(args.days, defaults["horizon_days"], DEFAULT_HORIZON_DAYS))
    day_length = float(_pick(args.day_length, defaults["day_length"], DEFAULT_DAY_LENGTH))
    freshness = float(_pick(args.freshness_bound, defaults["freshness_bound"], DEFAULT_FRESHNESS))

    ruleset = AdxRuleset.load(cfg.ruleset)
    taxonomy = Taxonomy.load(cfg.taxonomy)
    world, _ = _sim_world(cfg, ruleset, taxonomy)
    platforms = list(world.exchanges)
    if not platforms:
        raise InputError(f"scenario {cfg.scenario} defines no exchanges")

    _announce("parse", *build_parse_stage(ws, cfg, None))
    _announce("intersect", *build_intersect_stage(ws, cfg, platforms))
    _announce(
        "classify",
        *build_classify_stage(
            ws, cfg,
            args.min_cjk_ratio, args.per_doc_features,
            args.k_min, args.k_max, args.top_terms, args.seed or 0,
        ),
    )
    _announce(
        "persona", *build_persona_stage(ws, cfg, cfg.scenario, mean_gap, horizon, day_length)
    )
    _announce("run", *build_run_stage(ws, cfg, reader_ua, freshness, day_length))
    fixtures = ws.stage_file("run", "fixtures.json")
    _announce(
        "identify",
        *build_identify_stage(ws, cfg, data_path("product_rules.jsonl"), fixtures, None, None),
    )
    _announce("score", *build_score_stage(ws, cfg, args.cumulative, None, None))
    path, skipped = build_report_stage(ws, cfg)
    _announce("report", path, skipped)
    print(f"scores: {ws.stage_dir('score') / 'scores.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> argparse.ArgumentParser:
    wsp = _Parser(add_help=False)
    wsp.add_argument("-w", "--workspace", default="workspace", help="stage directory root")
    wsp.add_argument("--force", action="store_true", help="rebuild even if inputs are unchanged")

    mode = _Parser(add_help=False)
    mode.add_argument("--mode", choices=("live", "sim"), default="live")
    mode.add_argument("--scenario", default=None, help="simulator scenario file (sim mode)")

    data = _Parser(add_help=False)
    data.add_argument("--ruleset", default=None, help="platform prefix rules (jsonl)")
    data.add_argument("--taxonomy", default=None, help="category keyword lists (jsonl)")
    data.add_argument("--dict", dest="dictionary", default=None, help="tokenizer word list")

    sched = _Parser(add_help=False)
    sched.add_argument("--seed", type=int, default=None, help="clustering seed")
    sched.add_argument("--mean-gap", type=float, default=None, help="mean visit gap (seconds)")
    sched.add_argument("--days", type=int, default=None, help="horizon in days")
    sched.add_argument("--day-length", type=float, default=None, help="seconds per day")
    sched.add_argument("--freshness-bound", type=float, default=None,
                       help="max seconds between ad discovery and landing fetch")

    classify_opts = _Parser(add_help=False)
    classify_opts.add_argument("--min-cjk-ratio", type=float, default=0.30)
    classify_opts.add_argument("--per-doc-features", type=int, default=20)
    classify_opts.add_argument("--k-min", type=int, default=2)
    classify_opts.add_argument("--k-max", type=int, default=None)
    classify_opts.add_argument("--top-terms", type=int, default=10)

    parser = _Parser(
        prog="adxmeter",
        description="Measure behavioral ad targeting across exchange platforms.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("parse", parents=[wsp, mode, data],
                       help="request log -> page x platform monitor matrix")
    p.add_argument("--log", default=None, help="request log (jsonl), live mode")
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("intersect", parents=[wsp],
                       help="pages monitored by every listed platform")
    p.add_argument("--platforms", nargs="+", required=True, metavar="PLATFORM")
    p.set_defaults(func=_cmd_intersect)

    p = sub.add_parser("classify", parents=[wsp, mode, data, classify_opts],
                       help="fetch, cluster, and label the intersection pages")
    p.add_argument("--seed", type=int, default=None, help="clustering seed")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("persona", parents=[wsp, mode, sched],
                       help="build persona specs and visit schedules")
    p.add_argument("--personas", default=None,
                   help="persona definition file (defaults to the scenario in sim mode)")
    p.set_defaults(func=_cmd_persona)

    p = sub.add_parser("run", parents=[wsp, mode, data, sched],
                       help="execute schedules and collect ad observations")
    p.add_argument("--reader-ua", default=None, help="user agent of the ad reader identity")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("identify", parents=[wsp, mode, data],
                       help="observations -> keyword labels")
    p.add_argument("--product-rules", default=None, help="per-platform extraction rules (jsonl)")
    p.add_argument("--fixtures", default=None, help="recorded service replies (json)")
    p.add_argument("--image-endpoint", default=None, help="live image labeling service URL")
    p.add_argument("--keyword-endpoint", default=None, help="live keyword planner URL")
    p.set_defaults(func=_cmd_identify)

    p = sub.add_parser("score", parents=[wsp],
                       help="labels -> daily ttk/bailp score tables")
    p.add_argument("--cumulative", action="store_true",
                   help="union ad keywords up to each day instead of per day")
    p.add_argument("--days", type=int, default=None)
    p.add_argument("--platforms", nargs="+", default=None, metavar="PLATFORM")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("report", parents=[wsp], help="score tables -> SVG charts")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("simulate", parents=[wsp, data, sched, classify_opts],
                       help="end-to-end pipeline against the simulator")
    p.add_argument("--scenario", default=None,
                   help="scenario file (default: bundled demo)")
    p.add_argument("--cumulative", action="store_true")
    p.set_defaults(func=_cmd_simulate, mode="sim")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_help()
            return 1
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any other stage-internal failure
        print(f"stage failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
