# tests/test_longterm.py
import math

import numpy as np
import pytest

from src.core.config import PipelineConfig
from src.core.errors import BucketSkipped, DataError
from src.core.models import LongEntity
from src.longterm.entities import (
    extract_long_entities, intervals_overlap, long_duration_threshold, longs_collocated, merge_overlaps,
    type_frequency,
)
from src.longterm.testing import (
    UNKNOWN_BUCKET, Bucket, BucketKind, BucketTestResult, SignificanceTest, bucketize,
    duration_bucket_key, impact_summary, run_all_tests, run_tests,
)
from src.longterm.vicinity import (
    VicinityCounts, compute_all_vicinity_counts, estimate_vicinity_radius, sample_entities,
    vicinity_counts, window_shift,
)
from src.pipeline.stages import estimate_radius

from conftest import COLUMBUS, make_traffic, make_weather

DAY = 86400
METER_LAT = 1 / 111_195.0


def _north(meters, base=COLUMBUS):
    return (base[0] + meters * METER_LAT, base[1])


def test_long_duration_threshold_and_extraction(station_index):
    entities = [make_traffic(f"T-{i:03d}", duration=i * 60) for i in range(101)]
    threshold = long_duration_threshold(entities)
    assert threshold == pytest.approx(99 * 60)
    fog = make_weather("W-1", label="Fog", duration=3 * DAY)
    longs = extract_long_entities(entities + [fog], 99 * 60, station_index)
    assert [l.id for l in longs] == ["T-099", "T-100", "W-1"]
    traffic_long = longs[0]
    assert traffic_long.center == COLUMBUS
    assert traffic_long.zipcodes == frozenset({"43210"})
    assert traffic_long.traffic_members == 1
    assert longs[2].is_weather_only
    assert longs[2].state == "OH"
    with pytest.raises(DataError):
        long_duration_threshold([])


def _long_traffic(id, point, start=0, duration=5 * DAY, label="Construction", zipcode="43210"):
    return make_traffic(id, label=label, start=start, duration=duration, lat=point[0], lon=point[1], zipcode=zipcode)


def test_merge_runs_until_nothing_overlaps(station_index):
    rho = 500.0
    chain = [_long_traffic(f"T-{i}", _north(d), start=i * 60) for i, d in enumerate((0.0, 0.6 * rho, 1.2 * rho))]
    longs = extract_long_entities(chain, DAY, station_index)
    merged = merge_overlaps(longs, rho, station_index)
    assert len(merged) == 1
    only = merged[0]
    assert only.id == "T-0"
    assert only.member_ids == frozenset({"T-0", "T-1", "T-2"})
    assert only.label == "Construction"
    assert only.traffic_members == 3
    assert not only.mixed
    assert (only.start, only.end) == (0, 120 + 5 * DAY)


def test_weather_merges_through_its_station(station_index):
    construction = _long_traffic("T-1", COLUMBUS, start=DAY)
    fog = make_weather("W-1", label="Fog", start=0, duration=3 * DAY, airport="KCMH")
    elsewhere = make_weather("W-2", label="Fog", start=0, duration=3 * DAY, airport="KLCK")
    longs = extract_long_entities([construction, fog, elsewhere], DAY, station_index)
    merged = merge_overlaps(longs, 500.0, station_index)
    by_id = {l.id: l for l in merged}
    assert set(by_id) == {"W-1", "W-2"}
    mixed = by_id["W-1"]
    assert mixed.label == "Construction_Fog"
    assert mixed.mixed
    assert mixed.center == COLUMBUS
    assert mixed.airport_code == "KCMH"
    assert not by_id["W-2"].mixed


def test_disjoint_or_distant_entities_stay_apart(station_index):
    first = _long_traffic("T-1", COLUMBUS, start=0, duration=2 * DAY)
    later = _long_traffic("T-2", COLUMBUS, start=3 * DAY, duration=2 * DAY)
    distant = _long_traffic("T-3", _north(5000.0), start=0, duration=2 * DAY)
    longs = extract_long_entities([first, later, distant], DAY, station_index)
    assert len(merge_overlaps(longs, 500.0, station_index)) == 3
    assert type_frequency(longs) == [("Construction", 3)]
    with pytest.raises(DataError):
        merge_overlaps(longs, 0.0, station_index)


def test_window_shift_rounds_duration_up_to_days():
    l = LongEntity("L", "Construction", 0, int(1.5 * DAY), frozenset({"L"}), center=COLUMBUS)
    assert window_shift(l, 7) == 9 * DAY
    exact = LongEntity("L", "Construction", 0, DAY, frozenset({"L"}), center=COLUMBUS)
    assert window_shift(exact, 7) == 8 * DAY


START = 20 * DAY
SHIFT = 8 * DAY


def _vicinity_fixture():
    l = LongEntity("L", "Construction", START, START + DAY, frozenset({"T-L"}), center=COLUMBUS,
                   zipcodes=frozenset({"43210"}), state="OH", traffic_members=1)
    near = _north(100.0)
    entities = [
        make_traffic("T-L", start=START + 100, duration=600),
        make_traffic("T-in", start=START + 3600, lat=near[0], lon=near[1]),
        make_traffic("T-edge", start=START, duration=600),
        make_traffic("T-tail", start=START + DAY - 600, duration=600),
        make_traffic("T-far", start=START + 3600, lat=_north(2000.0)[0]),
        make_traffic("T-before", start=START - SHIFT + 7200),
        make_traffic("T-after1", start=START + SHIFT + 7200),
        make_traffic("T-after2", start=START + SHIFT + 9000, lat=near[0], lon=near[1]),
        make_weather("W-1", start=START + 3600),
    ]
    return l, entities


def test_vicinity_counts_are_strictly_inside_and_skip_members(station_index):
    l, entities = _vicinity_fixture()
    expected = VicinityCounts("L", 1, 1, 2)
    assert vicinity_counts(l, entities, 500.0, 7, station_index) == expected
    assert compute_all_vicinity_counts([l], entities, 500.0, 7, station_index) == {"L": expected}
    with pytest.raises(DataError):
        vicinity_counts(l, entities, 0.0, 7, station_index)


def test_weather_vicinity_uses_served_zipcodes(station_index):
    fog = LongEntity("W-1", "Fog", START, START + DAY, frozenset({"W-1"}), airport_code="KCMH")
    entities = [
        make_traffic("T-1", start=START + 3600, zipcode="43211"),
        make_traffic("T-2", start=START + 3600, zipcode="43207"),
        make_traffic("T-3", start=START - SHIFT + 3600, zipcode="43210"),
    ]
    expected = VicinityCounts("W-1", 1, 1, 0)
    assert vicinity_counts(fog, entities, 500.0, 7, station_index) == expected
    assert compute_all_vicinity_counts([fog], entities, 500.0, 7, station_index)["W-1"] == expected


@pytest.mark.parametrize("jobs", [1, 3])
def test_batched_counts_match_direct_counts(jobs, station_index):
    rng = np.random.default_rng(7)
    entities = []
    for i in range(300):
        north, east = rng.uniform(-2000, 2000, size=2)
        entities.append(make_traffic(
            f"T-{i:03d}", start=int(rng.integers(0, 60 * DAY)), duration=int(rng.integers(600, 4 * 3600)),
            lat=COLUMBUS[0] + north * METER_LAT,
            lon=COLUMBUS[1] + east * METER_LAT / math.cos(math.radians(COLUMBUS[0])),
            zipcode=["43210", "43207"][i % 2],
        ))
    longs = []
    for j in range(12):
        start = int(rng.integers(15 * DAY, 40 * DAY))
        center = (entities[j].loc.lat, entities[j].loc.lon)
        longs.append(LongEntity(f"L-{j}", "Construction", start, start + int(rng.integers(1, 4)) * DAY,
                                frozenset({entities[j].id}), center=center))
    longs.append(LongEntity("L-w", "Fog", 20 * DAY, 22 * DAY, frozenset({"W-9"}), airport_code="KLCK"))
    batched = compute_all_vicinity_counts(longs, entities, 800.0, 7, station_index, jobs=jobs)
    for l in longs:
        assert batched[l.id] == vicinity_counts(l, entities, 800.0, 7, station_index)
    assert any(c.s_r + c.s_before + c.s_after > 0 for c in batched.values())


def _blob_entities(seed, per_blob=50):
    rng = np.random.default_rng(seed)
    entities = []
    for b, base in enumerate([(39.96, -83.0), (40.40, -83.0), (40.84, -83.0)]):
        for i in range(per_blob):
            north, east = rng.normal(0, 30.0, size=2)
            entities.append(make_traffic(
                f"T-{b}-{i:02d}", lat=base[0] + north * METER_LAT,
                lon=base[1] + east * METER_LAT / math.cos(math.radians(base[0])),
            ))
    return entities


def test_estimate_vicinity_radius_on_tight_blobs():
    entities = _blob_entities(0)
    estimate = estimate_vicinity_radius(entities, entities)
    assert estimate.eps > 0
    assert estimate.min_pts >= 1
    assert estimate.num_clusters >= 1
    # clusters never span blobs tens of kilometers apart
    assert 0 < estimate.radius < 150.0


def test_estimate_vicinity_radius_needs_large_samples():
    entities = _blob_entities(0)
    with pytest.raises(DataError, match="at least 100"):
        estimate_vicinity_radius(entities, entities[:60])
    with pytest.raises(DataError):
        estimate_vicinity_radius(entities[:120], entities)


def test_sample_entities_is_seeded_and_order_preserving():
    entities = [make_traffic(f"T-{i:03d}", start=i) for i in range(50)]
    sample = sample_entities(entities, 10, seed=3)
    assert sample == sample_entities(entities, 10, seed=3)
    assert len(sample) == 10
    assert [e.start for e in sample] == sorted(e.start for e in sample)
    assert sample_entities(entities, 80, seed=3) == entities


def test_duration_bucket_keys():
    edges = (5, 10, 15, 20, 25, 30, 35, 40, 45, math.inf)
    assert duration_bucket_key(3.0, edges) == (0, "[0,5)")
    assert duration_bucket_key(5.0, edges) == (1, "[5,10)")
    assert duration_bucket_key(50.0, edges) == (9, "[45,inf)")


def _long(id, hours, state="OH", label="Construction"):
    return LongEntity(id, label, 0, int(hours * 3600), frozenset({id}), center=COLUMBUS, state=state)


def test_bucketize_is_disjoint_and_exhaustive():
    longs = [_long("A", 3), _long("B", 12, state=None), _long("C", 50, label="Fog"), _long("D", 4, state="CA")]
    by_location = {b.key: [l.id for l in b.members] for b in bucketize(longs, BucketKind.LOCATION)}
    assert by_location == {"CA": ["D"], "OH": ["A", "C"], UNKNOWN_BUCKET: ["B"]}
    by_duration = [(b.key, [l.id for l in b.members]) for b in bucketize(longs, BucketKind.DURATION)]
    assert by_duration == [("[0,5)", ["A", "D"]), ("[10,15)", ["B"]), ("[45,inf)", ["C"])]
    by_type = {b.key: len(b.members) for b in bucketize(longs, BucketKind.TYPE)}
    assert by_type == {"Construction": 3, "Fog": 1}


def _busy_bucket():
    members = tuple(_long(f"L-{i}", 30) for i in range(5))
    during = [10, 12, 11, 13, 12]
    before = [1, 2, 1, 2, 1]
    after = [2, 1, 2, 1, 2]
    counts = {m.id: VicinityCounts(m.id, d, b, a) for m, d, b, a in zip(members, during, before, after)}
    return Bucket(BucketKind.TYPE, "Construction", members), counts


def test_run_tests_flags_increased_activity():
    bucket, counts = _busy_bucket()
    results = run_tests(bucket, counts)
    by_test = {r.test: r for r in results}
    assert list(by_test) == list(SignificanceTest)
    for t in (SignificanceTest.T1, SignificanceTest.T3, SignificanceTest.T5):
        assert by_test[t].t_stat < 0
        assert by_test[t].significant_at == (0.90, 0.95, 0.99)
    for t in (SignificanceTest.T2, SignificanceTest.T4, SignificanceTest.T6):
        assert by_test[t].p_value > 0.9
        assert by_test[t].significant_at == ()
    assert [row.impact for row in impact_summary(results)] == ["Positive"]


def test_small_buckets_are_skipped():
    bucket, counts = _busy_bucket()
    lonely = Bucket(BucketKind.LOCATION, "WA", (bucket.members[0],))
    with pytest.raises(BucketSkipped):
        run_tests(lonely, counts)
    results, skipped = run_all_tests([bucket, lonely], counts)
    assert len(results) == 6
    assert [(s.bucket_kind, s.bucket_key) for s in skipped] == [("Location", "WA")]


def _result(test, p, key="X"):
    return BucketTestResult(BucketKind.TYPE, key, test, 5, 0.0, 4.0, p)


def test_impact_summary_mixed_and_none():
    mixed = [_result(t, 0.5) for t in SignificanceTest]
    mixed[0] = _result(SignificanceTest.T1, 0.01)
    mixed[3] = _result(SignificanceTest.T4, 0.02)
    quiet = [_result(t, 0.5, key="Y") for t in SignificanceTest]
    rows = impact_summary(mixed + quiet)
    assert [(r.bucket_key, r.impact) for r in rows] == [("X", "Mixed"), ("Y", "None")]
    assert rows[0].confidence[SignificanceTest.T1] == pytest.approx(0.99)
    assert [r.impact for r in impact_summary(mixed, level=0.99)] == ["None"]


def _random_longs(seed, n=30):
    rng = np.random.default_rng(seed)
    longs = []
    for i in range(n):
        start = int(rng.integers(0, 20 * DAY))
        end = start + int(rng.integers(DAY, 4 * DAY))
        if i % 6 == 5:
            longs.append(LongEntity(f"W-{i}", "Fog", start, end, frozenset({f"W-{i}"}),
                                    airport_code=("KCMH", "KLCK")[i % 2], state="OH"))
            continue
        north, east = rng.uniform(-1500, 1500, size=2)
        center = (COLUMBUS[0] + north * METER_LAT,
                  COLUMBUS[1] + east * METER_LAT / math.cos(math.radians(COLUMBUS[0])))
        label = str(rng.choice(["Construction", "Event", "Congestion"]))
        longs.append(LongEntity(f"T-{i}", label, start, end, frozenset({f"T-{i}"}), center=center,
                                zipcodes=frozenset({("43210", "43207")[i % 2]}), state="OH", traffic_members=1))
    return longs


@pytest.mark.parametrize("seed", range(50))
def test_merging_leaves_no_overlapping_collocated_pair(seed, station_index):
    rho = 500.0
    longs = _random_longs(seed)
    merged = merge_overlaps(longs, rho, station_index)
    for i, a in enumerate(merged):
        for b in merged[i + 1:]:
            assert not (intervals_overlap(a, b) and longs_collocated(a, b, rho, station_index))
    members = sorted(m for l in merged for m in l.member_ids)
    assert members == sorted(l.id for l in longs)
    for l in merged:
        parts = [p for p in longs if p.id in l.member_ids]
        assert (l.start, l.end) == (min(p.start for p in parts), max(p.end for p in parts))
        assert l.traffic_members == sum(p.traffic_members for p in parts)


def test_construction_and_event_merge_into_one_composite(station_index):
    construction = _long_traffic("T-1", COLUMBUS, start=0)
    event = _long_traffic("T-2", _north(100.0), start=DAY, label="Event")
    longs = extract_long_entities([event, construction], DAY, station_index)
    merged = merge_overlaps(longs, 500.0, station_index)
    assert [(l.id, l.label, l.member_ids, l.mixed) for l in merged] == [
        ("T-1", "Construction_Event", frozenset({"T-1", "T-2"}), False),
    ]
    assert type_frequency(merged) == [("Construction_Event", 1)]


def _poisson_fixture(seed, n=200, rate_before=2.0, rate_during=5.0, rate_after=2.0, gap_days=7):
    """n one-day long entities ~5 km apart, with Poisson traffic counts in each of their three windows."""
    rng = np.random.default_rng(seed)
    longs, entities = [], []
    for j in range(n):
        center = (30.0 + (j // 20) * 0.05, -90.0 + (j % 20) * 0.05)
        start = 30 * DAY + int(rng.integers(0, 10)) * 3600
        l = LongEntity(f"L-{j:03d}", "Construction", start, start + DAY, frozenset({f"M-{j:03d}"}),
                       center=center, state="LA", traffic_members=1)
        longs.append(l)
        shift = window_shift(l, gap_days)
        for window, rate in ((-shift, rate_before), (0, rate_during), (shift, rate_after)):
            for k in range(int(rng.poisson(rate))):
                begin = int(rng.integers(l.start + window + 60, l.end + window - 1800 - 60))
                entities.append(make_traffic(f"T-{j:03d}-{window}-{k}", label="Congestion", start=begin,
                                             lat=center[0], lon=center[1], zipcode="70112", state="LA"))
    return longs, entities


def test_planted_rate_increase_is_detected_end_to_end(station_index):
    longs, entities = _poisson_fixture(11)
    counts = compute_all_vicinity_counts(longs, entities, 500.0, 7, station_index)
    assert len(counts) == 200
    results = run_tests(Bucket(BucketKind.TYPE, "Construction", tuple(longs)), counts)
    by_test = {r.test: r for r in results}
    assert 0.99 in by_test[SignificanceTest.T1].significant_at
    assert by_test[SignificanceTest.T2].significant_at == ()
    assert [row.impact for row in impact_summary(results)] == ["Positive"]


def test_pipeline_radius_estimate_uses_its_own_percentile():
    entities = _blob_entities(0)
    cfg = PipelineConfig(radius_percentile=0.5, long_duration_percentile=0.9,
                         radius_sample_s1=1000, radius_sample_s2=1000)
    assert estimate_radius(cfg, entities) == estimate_vicinity_radius(entities, entities, q=0.5)
    default = estimate_radius(cfg.model_copy(update={"radius_percentile": 0.99}), entities)
    assert default == estimate_vicinity_radius(entities, entities, q=0.99)
    assert default.eps > estimate_radius(cfg, entities).eps
