use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;

use katlas_core::codec::{self, CodecConfig, Compression};
use katlas_core::detect::{detect, set_score, DetectParams, Growth};
use katlas_core::legalize::{coverage, legalize};
use katlas_core::memdep::{extract_dependencies, segment_instances, Actor};
use katlas_core::sim::{random_program, run};
use katlas_core::{Address, AffinityMatrix, AffinityState, BlockId, Trace, TraceEvent};

fn random_trace() -> impl Strategy<Value = Trace> {
    (0u64..5_000).prop_map(|seed| run(&random_program(seed), seed).expect("generator respects the cap"))
}

fn events(blocks: u32) -> impl Strategy<Value = Vec<TraceEvent>> {
    let mem = (any::<bool>(), 0u64..256, 1u32..=8)
        .prop_map(|(store, a, w)| if store { TraceEvent::Store(Address::new(a, w)) } else { TraceEvent::Load(Address::new(a, w)) });
    prop::collection::vec((0..blocks, prop::collection::vec(mem, 0..3)), 1..300).prop_map(|steps| {
        let mut out = Vec::new();
        for (b, mem) in steps {
            out.push(TraceEvent::BlockEnter(BlockId(b)));
            out.extend(mem);
        }
        out
    })
}

fn brute_pairs(seq: &[BlockId], r: usize) -> HashMap<(BlockId, BlockId), u64> {
    let mut out = HashMap::new();
    for i in 2 * r..seq.len() {
        for &other in &seq[i - 2 * r..=i] {
            *out.entry((seq[i - r], other)).or_insert(0) += 1;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn streaming_pairs_equal_recount(seq in prop::collection::vec(0u32..7, 0..400), r in 1usize..=8) {
        let seq: Vec<BlockId> = seq.into_iter().map(BlockId).collect();
        let mut s = AffinityState::new(r).unwrap();
        s.extend(seq.iter().copied());
        prop_assert_eq!(s.pair_counts(), &brute_pairs(&seq, r));
        prop_assert!(s.window().count() <= 2 * r + 1);
    }

    #[test]
    fn row_mass_is_at_most_one(t in random_trace(), r in 1usize..=8) {
        let m = AffinityMatrix::<f64>::from_trace(&t, r).unwrap();
        let seq = t.block_sequence();
        for (a, _) in m.occurrence_counts() {
            let mass = m.row_mass(a);
            prop_assert!(mass <= 1.0 + 1e-12);
            // Never within r of either end: every occurrence was a window centre.
            let interior = seq.iter().enumerate().all(|(i, &b)| b != a || (i >= r && i + r < seq.len()));
            if interior {
                prop_assert!((mass - 1.0).abs() < 1e-9, "{a}: {mass}");
            }
            for &(_, f) in m.row(a) {
                prop_assert!((0.0..=1.0).contains(&f));
            }
        }
    }

    #[test]
    fn codec_round_trips(evs in events(9), burst in 4096usize..=131_072, deflate in any::<bool>(), level in 1u32..=9) {
        let t = Trace::new(evs, 9).unwrap();
        let comp = if deflate { Compression::Deflate } else { Compression::None };
        let cfg = CodecConfig::new(burst, comp, level).unwrap();
        let (bytes, stats) = codec::encode_trace(&t, cfg).unwrap();
        prop_assert_eq!(&codec::decode_trace(&bytes).unwrap(), &t);
        prop_assert_eq!(stats.events, t.len() as u64);
        let text = codec::encode_trace(&t, CodecConfig { burst_bytes: 4096, ..cfg }).unwrap().1.text_bytes;
        prop_assert_eq!(stats.text_bytes, text);
        prop_assert_eq!(stats.flushes, stats.text_bytes.div_ceil(burst as u64));
    }

    #[test]
    fn truncation_is_detected(evs in events(5), deflate in any::<bool>(), frac in 0.0f64..1.0) {
        let t = Trace::new(evs, 5).unwrap();
        let comp = if deflate { Compression::Deflate } else { Compression::None };
        let (bytes, _) = codec::encode_trace(&t, CodecConfig { compression: comp, ..CodecConfig::default() }).unwrap();
        let cut = ((bytes.len() as f64) * frac) as usize;
        prop_assert!(codec::decode_trace(&bytes[..cut.min(bytes.len() - 1)]).is_err());
    }

    #[test]
    fn detect_invariants(t in random_trace(), r in 1usize..=8, threshold in 0.5f64..=1.0, hot in 1u64..40) {
        let m = AffinityMatrix::<f64>::from_trace(&t, r).unwrap();
        for growth in [Growth::SeedRow, Growth::MinMass] {
            let params = DetectParams::new(threshold, hot).unwrap().with_growth(growth);
            let cands = detect(&m, &params).unwrap();
            let mut seen: BTreeSet<BlockId> = BTreeSet::new();
            let mut last_count = u64::MAX;
            for c in &cands {
                prop_assert!(!seen.contains(&c.seed), "seed {} already explained", c.seed);
                prop_assert!(m.occurrences(c.seed) >= hot);
                prop_assert!(m.occurrences(c.seed) <= last_count);
                prop_assert!(c.score >= threshold);
                if growth == Growth::MinMass {
                    prop_assert!(set_score(&m, &c.blocks).unwrap() >= threshold);
                }
                last_count = m.occurrences(c.seed);
                seen.extend(c.blocks.iter().copied());
            }
            prop_assert_eq!(&detect(&m, &params).unwrap(), &cands);
            let stricter = DetectParams::new(threshold, hot * 2).unwrap().with_growth(growth);
            prop_assert!(detect(&m, &stricter).unwrap().len() <= cands.len());
        }
    }

    #[test]
    fn legalize_grows_and_is_idempotent(t in random_trace(), r in 1usize..=4, hot in 1u64..20) {
        let m = AffinityMatrix::<f64>::from_trace(&t, r).unwrap();
        let cands = detect(&m, &DetectParams::new(0.9, hot).unwrap()).unwrap();
        let l = legalize(&t, &cands);
        prop_assert!(l.rejected.is_empty());
        for c in &cands {
            let c_set: BTreeSet<BlockId> = c.blocks.iter().copied().collect();
            prop_assert!(l.kernels.iter().any(|k| k.blocks.is_superset(&c_set)));
        }
        let mut sets: Vec<_> = l.kernels.iter().map(|k| k.blocks.clone()).collect();
        sets.sort();
        sets.dedup();
        prop_assert_eq!(sets.len(), l.kernels.len());
        for k in &l.kernels {
            for p in &k.parents {
                let parent = l.kernels.iter().find(|q| q.id == *p).unwrap();
                prop_assert!(k.blocks.is_subset(&parent.blocks) && k.blocks != parent.blocks);
            }
        }
        // Blocks that only ever sit strictly between two visits to K, with
        // no other candidate's block in the gap, must end up in K.
        let seq = t.block_sequence();
        let sets: Vec<BTreeSet<BlockId>> = cands.iter().map(|c| c.blocks.iter().copied().collect()).collect();
        for (k, set) in sets.iter().enumerate() {
            let foreign = |b: &BlockId| !set.contains(b) && sets.iter().enumerate().any(|(o, s)| o != k && s.contains(b));
            let mut enclosed: HashMap<BlockId, bool> = HashMap::new();
            let mut i = 0;
            while i < seq.len() {
                if set.contains(&seq[i]) {
                    i += 1;
                    continue;
                }
                let start = i;
                while i < seq.len() && !set.contains(&seq[i]) {
                    i += 1;
                }
                let gap = &seq[start..i];
                let ok = start > 0 && i < seq.len() && !gap.iter().any(foreign);
                for b in gap {
                    *enclosed.entry(*b).or_insert(true) &= ok;
                }
            }
            for (b, only_enclosed) in enclosed {
                if only_enclosed {
                    prop_assert!(
                        l.kernels.iter().any(|kk| kk.blocks.is_superset(set) && kk.blocks.contains(&b)),
                        "block {} enclosed by candidate {} was not absorbed", b, k
                    );
                }
            }
        }
        let again = legalize(&t, &l.kernels);
        prop_assert_eq!(&again.kernels, &l.kernels);
        let cov = coverage(&t, &l.kernels).as_f64();
        prop_assert!((0.0..=1.0).contains(&cov));
    }

    #[test]
    fn dependencies_are_witnessed(t in random_trace(), r in 1usize..=4) {
        let m = AffinityMatrix::<f64>::from_trace(&t, r).unwrap();
        let l = legalize(&t, &detect(&m, &DetectParams::new(0.9, 4).unwrap()).unwrap());
        let inst = segment_instances(&t, &l.kernels);
        let deps = extract_dependencies(&t, &inst).unwrap();
        let ev = t.events();
        let mut per_load: HashMap<usize, u64> = HashMap::new();
        for d in &deps.records {
            let (TraceEvent::Store(s), TraceEvent::Load(ld)) = (ev[d.store_index], ev[d.load_index]) else {
                return Err(TestCaseError::fail("record is not a store/load pair"));
            };
            prop_assert!(d.store_index < d.load_index);
            prop_assert!(s.overlaps(&ld));
            if let Actor::Instance(i) = d.producer {
                prop_assert!(inst[i].contains(d.store_index));
            }
            *per_load.entry(d.load_index).or_default() += u64::from(d.bytes);
        }
        // Each loaded byte is either attributed once or external.
        let loaded: u64 = ev.iter().filter_map(|e| match e { TraceEvent::Load(a) => Some(u64::from(a.size)), _ => None }).sum();
        prop_assert_eq!(per_load.values().sum::<u64>() + deps.external_bytes, loaded);
        let stored: BTreeSet<u64> = ev.iter().filter_map(|e| match e { TraceEvent::Store(a) => Some(a.bytes()), _ => None }).flatten().collect();
        prop_assert_eq!(deps.tracked_bytes, stored.len());
    }
}
