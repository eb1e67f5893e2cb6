use std::collections::{BTreeMap, HashMap};

use fsd_core::geomatch::{haversine_m, CandidateLocation, GeoIndex, LatLon, Question, RTreeGeoIndex};
use fsd_core::{
    build_topology, compose_tiers, next_interval, AggregationFilter, AggregationFilterConfig, Clock, CollectSink,
    DehydrationPolicy, ElementId, Envelope, FilterDecision, Pipeline, RouteDecision, Stage, StatelessFilter,
    StatelessSplitter, TimeIndexedStore, TopologySpec, PASS,
};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Insert(u8),
    Advance(u16),
    Poll,
    Cancel(u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => any::<u8>().prop_map(|k| Op::Insert(k % 32)),
        2 => any::<u16>().prop_map(|d| Op::Advance(d % 5000)),
        2 => Just(Op::Poll),
        1 => any::<u8>().prop_map(|k| Op::Cancel(k % 32)),
    ]
}

fn policy() -> impl Strategy<Value = DehydrationPolicy> {
    (1u64..2000, 1.0f64..3.0, 0u64..20_000, 1_000u64..30_000).prop_map(|(base, factor, extra, max_age)| {
        DehydrationPolicy {
            max_age_ms: max_age,
            base_interval_ms: base,
            backoff_factor: factor,
            max_interval_ms: base + extra,
            max_retries: None,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dehydrator_releases_exactly_when_due(policy in policy(), ops in prop::collection::vec(op(), 1..200)) {
        let mut store: TimeIndexedStore<()> = TimeIndexedStore::new(policy).unwrap();
        let mut now = 0u64;
        let mut wakes: HashMap<String, u64> = HashMap::new();
        for op in ops {
            match op {
                Op::Insert(k) => {
                    let id = format!("e{k}");
                    let e = Envelope::new(id.as_str(), (), now, now);
                    match store.dehydrate(e, now, None) {
                        Ok(fsd_core::DehydrateOutcome::Stored(t)) => {
                            prop_assert!(t.wake_at_ms > now);
                            prop_assert!(wakes.insert(id, t.wake_at_ms).is_none());
                        }
                        Ok(fsd_core::DehydrateOutcome::Retired(_)) => unreachable!("fresh element"),
                        Err(_) => prop_assert!(wakes.contains_key(&id)),
                    }
                }
                Op::Advance(d) => now += d as u64,
                Op::Poll => {
                    let out = store.poll(now);
                    let mut released: Vec<&Envelope<()>> = out.rehydrated.iter().chain(&out.retired).collect();
                    released.sort_by_key(|e| e.element_id().clone());
                    let mut due: Vec<String> = wakes.iter().filter(|(_, &w)| w <= now).map(|(k, _)| k.clone()).collect();
                    due.sort();
                    let got: Vec<String> = released.iter().map(|e| e.element_id().as_str().to_string()).collect();
                    prop_assert_eq!(&got, &due);
                    for id in due {
                        wakes.remove(&id);
                    }
                }
                Op::Cancel(k) => {
                    let id = format!("e{k}");
                    let removed = store.cancel(&ElementId::from(id.as_str())).is_some();
                    prop_assert_eq!(removed, wakes.remove(&id).is_some());
                }
            }
            prop_assert!(store.is_consistent());
            prop_assert_eq!(store.len(), wakes.len());
        }
    }

    #[test]
    fn backoff_is_monotone_and_capped(policy in policy()) {
        let mut prev = 0;
        for r in 0..64 {
            let i = next_interval(r, &policy);
            prop_assert!(i >= prev);
            prop_assert!(i <= policy.max_interval_ms);
            prop_assert!(i >= policy.base_interval_ms.min(policy.max_interval_ms));
            prev = i;
        }
    }

    #[test]
    fn retirement_is_total(policy in policy()) {
        let mut store: TimeIndexedStore<()> = TimeIndexedStore::new(policy).unwrap();
        let mut e = Envelope::new("x", (), 0, 0);
        let mut now = 0;
        let mut rehydrations = 0u32;
        loop {
            match store.dehydrate(e, now, None).unwrap() {
                fsd_core::DehydrateOutcome::Retired(_) => break,
                fsd_core::DehydrateOutcome::Stored(t) => now = t.wake_at_ms,
            }
            let out = store.poll(now);
            if !out.retired.is_empty() {
                break;
            }
            e = out.rehydrated.into_iter().next().unwrap();
            rehydrations += 1;
            prop_assert!(rehydrations as u64 <= policy.max_age_ms / policy.base_interval_ms + 1);
        }
        prop_assert!(now <= policy.max_age_ms + policy.max_interval_ms);
    }

    #[test]
    fn top_x_matches_sorting(x in 1usize..20, scores in prop::collection::vec(-50i32..50, 1..300)) {
        let mut f = AggregationFilter::new(AggregationFilterConfig::new(x, |e: &Envelope<i32>| Ok(*e.payload() as f64))).unwrap();
        let mut all: Vec<(i32, String)> = Vec::new();
        for (i, s) in scores.iter().enumerate() {
            let id = format!("{i:04}");
            f.step(&Envelope::new(id.as_str(), *s, 0, 0)).unwrap();
            all.push((*s, id));
            let mut expect = all.clone();
            expect.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            expect.truncate(x);
            let got: Vec<(i32, String)> = f.candidates().iter().map(|e| (*e.payload(), e.element_id().as_str().to_string())).collect();
            prop_assert_eq!(got, expect);
        }
    }

    #[test]
    fn narrowing_tiers_equal_one_filter(x1 in 1usize..15, x2 in 1usize..15, scores in prop::collection::vec(0u16..100, 1..200)) {
        let score = |e: &Envelope<u16>| Ok(*e.payload() as f64);
        let mut tiered = compose_tiers(vec![
            AggregationFilter::new(AggregationFilterConfig::new(x1, score)).unwrap(),
            AggregationFilter::new(AggregationFilterConfig::new(x2, score).tier(1)).unwrap(),
        ]).unwrap();
        let mut single = AggregationFilter::new(AggregationFilterConfig::new(x1.min(x2), score)).unwrap();
        for (i, s) in scores.iter().enumerate() {
            let e = Envelope::new(format!("{i:04}"), *s, 0, 0);
            let FilterDecision::Soft(d) = tiered.step(&e).unwrap() else { unreachable!() };
            single.step(&e).unwrap();
            let a: Vec<_> = d.candidate_set.unwrap().iter().map(|e| e.element_id().clone()).collect();
            let b: Vec<_> = single.candidates().iter().map(|e| e.element_id().clone()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn index_keeps_latest_report(reports in prop::collection::vec((0u8..40, -1.0f64..1.0, -1.0f64..1.0, 0u64..1000), 1..300)) {
        let mut idx = RTreeGeoIndex::default();
        let mut latest: BTreeMap<String, (u64, f64, f64)> = BTreeMap::new();
        for (k, lat, lon, t) in reports {
            let id = format!("c{k}");
            idx.upsert_candidate(CandidateLocation::new(&id, lat, lon, t));
            let slot = latest.entry(id).or_insert((t, lat, lon));
            if t >= slot.0 {
                *slot = (t, lat, lon);
            }
        }
        prop_assert_eq!(idx.candidate_count(), latest.len());
        for (id, (t, lat, lon)) in &latest {
            let c = idx.candidate(id).unwrap();
            prop_assert_eq!((c.reported_ms, c.lat_deg, c.lon_deg), (*t, *lat, *lon));
        }
        // The tree agrees with the table: a huge question finds everyone once.
        let q = Question::new("q", 0.0, 0.0, 1_000_000.0, 0, 1);
        prop_assert_eq!(idx.match_question(&q, 0.0).inside.len(), latest.len());
    }

    #[test]
    fn haversine_is_a_symmetric_metric(a in (-90.0f64..90.0, -180.0f64..180.0), b in (-90.0f64..90.0, -180.0f64..180.0)) {
        let a = LatLon::new(a.0, a.1);
        let b = LatLon::new(b.0, b.1);
        let d = haversine_m(a, b);
        prop_assert!(d >= 0.0);
        prop_assert!((d - haversine_m(b, a)).abs() < 1e-6);
        prop_assert!(d <= std::f64::consts::PI * fsd_core::geomatch::EARTH_RADIUS_M + 1e-6);
        prop_assert_eq!(haversine_m(a, a), 0.0);
    }

    #[test]
    fn random_runs_conserve_envelopes(values in prop::collection::vec(0u32..1000, 0..200), modulus in 2u32..7) {
        // gate drops multiples of `modulus`; fan copies odd values to a second
        // sink as derivatives; even values go on unchanged.
        let spec = TopologySpec::new()
            .stage("gate", fsd_core::StageKind::Filter)
            .stage("fan", fsd_core::StageKind::Splitter)
            .stage("out", fsd_core::StageKind::Sink)
            .stage("copies", fsd_core::StageKind::Sink)
            .edge("gate", "fan", PASS)
            .edge("fan", "out", "main")
            .edge("fan", "copies", "copy");
        let topo = build_topology(&spec).unwrap();
        let (out, _) = CollectSink::new();
        let (copies, copied) = CollectSink::new();
        let mut b = HashMap::new();
        b.insert("gate".to_string(), Stage::filter(StatelessFilter::new(move |e: &Envelope<u32>| Ok::<bool, String>(e.payload() % modulus != 0))));
        b.insert("fan".to_string(), Stage::splitter(StatelessSplitter::new(|e: &Envelope<u32>| {
            let mut d = RouteDecision::single("main", e.clone());
            if e.payload() % 2 == 1 {
                d.push("copy", e.derive(format!("{}'", e.element_id()), *e.payload()));
            }
            Ok(d)
        })));
        b.insert("out".to_string(), Stage::sink(out));
        b.insert("copies".to_string(), Stage::sink(copies));
        let mut p = Pipeline::new(topo, b, Clock::simulated()).unwrap();
        for (i, v) in values.iter().enumerate() {
            p.submit(Envelope::new(format!("v{i}"), *v, 0, 0)).unwrap();
        }
        let c = p.run_until_idle().conservation;
        prop_assert!(c.holds(), "{:?}", c);
        prop_assert_eq!(c.in_flight, 0);
        let kept = values.iter().filter(|v| *v % modulus != 0).count() as u64;
        prop_assert_eq!(c.dropped, values.len() as u64 - kept);
        prop_assert_eq!(c.derived, copied.lock().len() as u64);
    }
}
