"""Cross-platform ad measurement toolkit.

Parses crawler request logs to find which ad platforms serve a set of
pages, builds interest personas from clustered page text, replays their
browsing against those platforms, and scores how quickly served ads pick
up (and drop) the persona's interests.  A deterministic ad-ecosystem
simulator is included so the whole pipeline can run offline.
"""

from importlib import resources as _resources
from pathlib import Path

from .cluster import (
    Clustering,
    CosineKMeans,
    KSelector,
    cosine_distance_matrix,
    kmeans,
    select_k,
    silhouette,
)
from .detect import (
    AdxRuleset,
    HttpRequestRecord,
    MonitorMatrix,
    build_monitor_matrix,
    cjk_ratio,
    detect_platforms,
    filter_language,
    intersect_pages,
    normalize_page_url,
    parse_request_log,
)
from .identify import (
    AdIdentifier,
    AdLabel,
    FixtureImageClient,
    FixtureKeywordClient,
    LandingSnapshot,
    Method,
    ProductDetailRule,
    build_snapshot,
    load_product_rules,
)
from .metrics import (
    BailpResult,
    KeywordSets,
    bailp,
    bailp_detail,
    collect_keyword_sets,
    daily_scores,
    ttk,
)
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
from .runner import (
    AdLink,
    AdObservation,
    FetchResult,
    LiveFetcher,
    RunResult,
    SyncAdReader,
    ThreadedAdReader,
    audit_isolation,
    dispatch_parallel_fetch,
    execute_visit,
    run_measurement,
)
from .taxonomy import Taxonomy, label_clusters, match_category
from .textprep import GreedyDictTokenizer, extract_text, load_dictionary
from .vectorize import TfidfFeaturizer, tfidf_weight, vectorize_corpus

__version__ = "0.1.0"


def data_path(name: str) -> Path:
    """Return the path of a bundled data file (ruleset, taxonomy, ...)."""
    return Path(str(_resources.files("adxmeter") / "data" / name))


__all__ = [
    "AdIdentifier",
    "AdLabel",
    "AdLink",
    "AdObservation",
    "AdxRuleset",
    "BLANK",
    "BailpResult",
    "Clustering",
    "CosineKMeans",
    "FetchResult",
    "FixtureImageClient",
    "FixtureKeywordClient",
    "GreedyDictTokenizer",
    "HttpRequestRecord",
    "Identity",
    "KSelector",
    "KeywordSets",
    "LandingSnapshot",
    "LiveFetcher",
    "Method",
    "MonitorMatrix",
    "PersonaSpec",
    "ProductDetailRule",
    "RunResult",
    "SyncAdReader",
    "Taxonomy",
    "TfidfFeaturizer",
    "ThreadedAdReader",
    "VisitEvent",
    "VisitKind",
    "audit_isolation",
    "bailp",
    "bailp_detail",
    "build_monitor_matrix",
    "build_snapshot",
    "cjk_ratio",
    "collect_keyword_sets",
    "cosine_distance_matrix",
    "daily_scores",
    "data_path",
    "detect_platforms",
    "dispatch_parallel_fetch",
    "execute_visit",
    "extract_text",
    "filter_language",
    "intersect_pages",
    "kmeans",
    "label_clusters",
    "load_dictionary",
    "load_product_rules",
    "make_persona",
    "match_category",
    "normalize_page_url",
    "parse_request_log",
    "run_measurement",
    "schedule_visits",
    "schedule_with_switch",
    "select_k",
    "silhouette",
    "tfidf_weight",
    "ttk",
    "vectorize_corpus",
]
