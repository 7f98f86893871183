# /src/ingestion/cleaning.py
import logging
from collections import Counter
from typing import Dict, List, Sequence, Tuple

import pandas as pd

from ..core.models import GeoEntity

logger = logging.getLogger(__name__)


def deduplicate(entities: Sequence[GeoEntity]) -> Tuple[List[GeoEntity], List[GeoEntity]]:
    """
    Removes explicit (same id) and implicit (same label, start and location) duplicates.
    The first occurrence in input order is kept.
    """
    seen_ids = set()
    seen_content = set()
    kept: List[GeoEntity] = []
    removed: List[GeoEntity] = []
    for e in entities:
        content = (e.label, e.start, e.loc)
        if e.id in seen_ids or content in seen_content:
            removed.append(e)
            continue
        seen_ids.add(e.id)
        seen_content.add(content)
        kept.append(e)
    if removed:
        logger.info(f"Deduplication removed {len(removed)} of {len(entities)} entities")
    return kept, removed


def dataset_summary(entities: Sequence[GeoEntity]) -> Dict[str, List[Dict]]:
    """Per-type counts and relative frequencies, plus monthly and weekday distributions per kind."""
    if not entities:
        return {"types": [], "monthly": [], "weekday": []}
    df = pd.DataFrame({
        "kind": [e.etype.kind.value for e in entities],
        "type": [e.label for e in entities],
        "start": pd.to_datetime([e.start for e in entities], unit="s", utc=True),
    })
    type_counts = Counter(zip(df["kind"], df["type"]))
    kind_totals = Counter(df["kind"])
    types = [
        {"kind": kind, "type": label, "count": n, "share": n / kind_totals[kind]}
        for (kind, label), n in sorted(type_counts.items(), key=lambda kv: (kv[0][0], -kv[1], kv[0][1]))
    ]

    def distribution(key: pd.Series, name: str) -> List[Dict]:
        counts = df.groupby(["kind", key]).size()
        rows = []
        for (kind, value), n in counts.items():
            rows.append({"kind": kind, name: int(value), "count": int(n), "share": n / kind_totals[kind]})
        return sorted(rows, key=lambda r: (r["kind"], r[name]))

    return {
        "types": types,
        "monthly": distribution(df["start"].dt.month.rename("month"), "month"),
        "weekday": distribution(df["start"].dt.weekday.rename("weekday"), "weekday"),
    }
