# /src/longterm/testing.py
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Sequence, Tuple

from ..core.errors import BucketSkipped
from ..core.models import LongEntity
from ..numerics.stats import Alternative, welch_t_test_one_sided
from .vicinity import VicinityCounts

logger = logging.getLogger(__name__)

UNKNOWN_BUCKET = "UNKNOWN"


class BucketKind(str, Enum):
    LOCATION = "Location"
    DURATION = "Duration"
    TYPE = "Type"


class SignificanceTest(str, Enum):
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    T4 = "T4"
    T5 = "T5"
    T6 = "T6"


# test -> (comparison sample, alternative); the second sample is always the during-span counts
TEST_PLAN: Dict[SignificanceTest, Tuple[str, Alternative]] = {
    SignificanceTest.T1: ("avg", Alternative.MEAN_A_LESS),
    SignificanceTest.T2: ("avg", Alternative.MEAN_A_GREATER),
    SignificanceTest.T3: ("before", Alternative.MEAN_A_LESS),
    SignificanceTest.T4: ("before", Alternative.MEAN_A_GREATER),
    SignificanceTest.T5: ("after", Alternative.MEAN_A_LESS),
    SignificanceTest.T6: ("after", Alternative.MEAN_A_GREATER),
}
POSITIVE_TESTS = (SignificanceTest.T1, SignificanceTest.T3, SignificanceTest.T5)
NEGATIVE_TESTS = (SignificanceTest.T2, SignificanceTest.T4, SignificanceTest.T6)


@dataclass(frozen=True)
class Bucket:
    kind: BucketKind
    key: str
    members: Tuple[LongEntity, ...]


@dataclass(frozen=True)
class BucketTestResult:
    bucket_kind: BucketKind
    bucket_key: str
    test: SignificanceTest
    n: int
    t_stat: float
    df: float
    p_value: float
    significant_at: Tuple[float, ...] = ()
    degenerate: bool = False


@dataclass
class ImpactRow:
    bucket_kind: BucketKind
    bucket_key: str
    n: int
    impact: str
    confidence: Dict[SignificanceTest, float] = field(default_factory=dict)  # 1 - p per test


def _edge_text(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:g}"


def duration_bucket_key(hours: float, edges: Sequence[float]) -> Tuple[int, str]:
    """Half-open interval [lo, hi) of `edges` (with an implicit leading 0) containing `hours`."""
    lower = 0.0
    for i, upper in enumerate(edges):
        if hours < upper:
            return i, f"[{_edge_text(lower)},{_edge_text(upper)})"
        lower = upper
    return len(edges), f"[{_edge_text(lower)},inf)"


def bucketize(longs: Sequence[LongEntity], kind: BucketKind,
              duration_edges: Sequence[float] = (5, 10, 15, 20, 25, 30, 35, 40, 45, math.inf)) -> List[Bucket]:
    """Disjoint, exhaustive buckets of long entities by state, duration interval or label."""
    groups: Dict[Tuple, List[LongEntity]] = defaultdict(list)
    for l in longs:
        if kind == BucketKind.LOCATION:
            groups[(0, l.state or UNKNOWN_BUCKET)].append(l)
        elif kind == BucketKind.DURATION:
            groups[duration_bucket_key(l.duration / 3600.0, duration_edges)].append(l)
        else:
            groups[(0, l.label)].append(l)
    return [Bucket(kind, key[1], tuple(sorted(groups[key], key=lambda l: (l.start, l.id))))
            for key in sorted(groups)]


def run_tests(bucket: Bucket, counts: Mapping[str, VicinityCounts],
              levels: Sequence[float] = (0.90, 0.95, 0.99), pooled: bool = False) -> List[BucketTestResult]:
    """
    Tests T1-T6 on one bucket: mean of (before+after)/2, before or after counts against the
    during-span counts, one-sided in both directions. A test is significant at level c when p < 1 - c.
    """
    rows = [counts[l.id] for l in bucket.members if l.id in counts]
    if len(rows) < 2:
        raise BucketSkipped(bucket.kind.value, bucket.key, f"needs at least 2 long entities with counts, has {len(rows)}")
    samples = {
        "during": [c.s_r for c in rows],
        "before": [c.s_before for c in rows],
        "after": [c.s_after for c in rows],
        "avg": [(c.s_before + c.s_after) / 2.0 for c in rows],
    }
    results = []
    for test, (sample, alternative) in TEST_PLAN.items():
        res = welch_t_test_one_sided(samples[sample], samples["during"], alternative, pooled=pooled)
        results.append(BucketTestResult(
            bucket_kind=bucket.kind, bucket_key=bucket.key, test=test, n=len(rows),
            t_stat=res.t_stat, df=res.df, p_value=res.p_value,
            significant_at=tuple(c for c in levels if res.p_value < 1.0 - c),
            degenerate=res.degenerate,
        ))
    return results


def run_all_tests(buckets: Sequence[Bucket], counts: Mapping[str, VicinityCounts],
                  levels: Sequence[float] = (0.90, 0.95, 0.99),
                  pooled: bool = False) -> Tuple[List[BucketTestResult], List[BucketSkipped]]:
    results: List[BucketTestResult] = []
    skipped: List[BucketSkipped] = []
    for bucket in buckets:
        try:
            results.extend(run_tests(bucket, counts, levels, pooled))
        except BucketSkipped as e:
            logger.warning(str(e))
            skipped.append(e)
    return results, skipped


def impact_summary(results: Sequence[BucketTestResult], level: float = 0.95) -> List[ImpactRow]:
    """Positive when T1/T3/T5 is significant at `level`, Negative for T2/T4/T6, Mixed for both, else None."""
    grouped: Dict[Tuple[str, str], List[BucketTestResult]] = defaultdict(list)
    for r in results:
        grouped[(r.bucket_kind.value, r.bucket_key)].append(r)
    rows = []
    for (kind, key), tests in sorted(grouped.items()):
        by_test = {r.test: r for r in tests}
        alpha = 1.0 - level
        positive = any(by_test[t].p_value < alpha for t in POSITIVE_TESTS if t in by_test)
        negative = any(by_test[t].p_value < alpha for t in NEGATIVE_TESTS if t in by_test)
        impact = "Mixed" if positive and negative else "Positive" if positive else "Negative" if negative else "None"
        rows.append(ImpactRow(
            bucket_kind=BucketKind(kind), bucket_key=key, n=tests[0].n, impact=impact,
            confidence={t: 1.0 - r.p_value for t, r in sorted(by_test.items())},
        ))
    return rows
