mod common;

use common::*;
use fedmarkov::binning::{BinningScheme, FeatureRange};
use fedmarkov::datagen::{generate_client_data, GeneratorSpec};
use fedmarkov::dataset::{Dataset, TimeSeriesRecord};
use fedmarkov::evaluation::score;
use fedmarkov::federation::{
    plaintext_digest, run_federation, ClientConfig, MessageKind, Phase, RoundParams,
};
use fedmarkov::imputer::{
    impute_backward, impute_bidirectional, impute_forward, impute_gap, impute_local_mean,
    impute_series, Gap,
};
use fedmarkov::secure_agg::{
    aggregate, derive_mask, digest_elements, mask_counts, ClientId, PairwiseSeed, RingConfig,
    SeedBook,
};
use fedmarkov::transitions::{
    count_transitions, count_transitions_with, normalize, CountMatrix, LagPolicy, ProbMatrix,
    TransitionCounts, TransitionMatrix,
};
use fedmarkov::Execution;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn counting_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let scheme = BinningScheme::new(vec![
        FeatureRange { name: "a".into(), min: 0.0, max: 10.0, n: 5 },
        FeatureRange { name: "b".into(), min: -3.0, max: 3.0, n: 7 },
    ])
    .unwrap();
    let edges = scheme_edges(&scheme);
    for trial in 0..20 {
        let records = random_records(&mut rng, 50, 2, 6, 0.25 * (trial % 3) as f64, -4.0, 12.0);
        let expected = oracle_counts(&records, &edges);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let got = count_transitions_with(&records, &scheme, LagPolicy::default(), exec).unwrap();
            for f in 0..2 {
                assert_eq!(got.feature(f).rows(), expected[f], "trial {trial} feature {f}");
            }
        }
    }
}

#[test]
fn pinned_mask_digest() {
    let seed = PairwiseSeed::new(ClientId::from("a"), ClientId::from("b"), [7u8; 32]).unwrap();
    let other = PairwiseSeed::new(ClientId::from("a"), ClientId::from("b"), [8u8; 32]).unwrap();
    let ring = RingConfig::default();
    let m = derive_mask(&seed, 8, ring).unwrap();
    assert_ne!(m, derive_mask(&other, 8, ring).unwrap());
    assert!(m.iter().all(|x| *x < ring.modulus()));
    assert_eq!(
        digest_elements(&m),
        "cf8423ce64b1be27e4ca94cde00ac90814e20c0a95e79e47a2d97eca2145a7d7"
    );
}

#[test]
fn masked_sum_equals_plaintext_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ring = RingConfig::default();
    for trial in 0..100 {
        let ids: Vec<ClientId> = (0..5).map(|i| ClientId(format!("icu{i}"))).collect();
        let book = SeedBook::provision(trial, &ids).unwrap();
        let counts: Vec<TransitionCounts> = (0..5)
            .map(|_| {
                TransitionCounts::from_matrices(
                    (0..2)
                        .map(|_| {
                            CountMatrix::from_row_major(4, (0..16).map(|_| rng.gen_range(0..10_000)).collect())
                                .unwrap()
                        })
                        .collect(),
                )
            })
            .collect();
        let mut plain = vec![0u64; 32];
        for c in &counts {
            for (p, x) in plain.iter_mut().zip(c.flatten()) {
                *p += x;
            }
        }
        let uploads: Vec<_> = ids
            .iter()
            .zip(&counts)
            .map(|(id, c)| mask_counts(c, id, &ids, &book.seeds_for(id), ring).unwrap())
            .collect();
        assert_eq!(aggregate(&uploads, &ids, ring).unwrap().flatten(), plain);

        let mut shuffled = uploads.clone();
        shuffled.reverse();
        assert_eq!(aggregate(&shuffled, &ids, ring).unwrap().flatten(), plain);
    }
}

#[test]
fn masked_coordinate_is_spread_over_the_ring() {
    // One client's first coordinate under 10^5 independent seed draws: every
    // value of the top byte of a 61-bit element must appear.
    let ring = RingConfig::default();
    let ids = [ClientId::from("a"), ClientId::from("b")];
    let counts = TransitionCounts::from_matrices(vec![CountMatrix::from_rows(vec![vec![3, 1], vec![0, 9]]).unwrap()]);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut seen = [false; 256];
    let mut first = None;
    for _ in 0..100_000 {
        let mut s = [0u8; 32];
        rng.fill(&mut s);
        let seed = PairwiseSeed::new(ids[0].clone(), ids[1].clone(), s).unwrap();
        let v = mask_counts(&counts, &ids[0], &ids, &[seed], ring).unwrap();
        seen[((v.payload[0] >> 53) & 0xff) as usize] = true;
        match &first {
            None => first = Some(v.payload.clone()),
            Some(p) => assert_ne!(p, &v.payload),
        }
    }
    assert!(seen.iter().all(|s| *s));
}

#[test]
fn single_slot_rules_match_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..200 {
        let n = 2 + trial % 5;
        let t = if trial % 4 == 0 { random_dyadic(n, &mut rng) } else { random_stochastic(n, &mut rng) };
        for l in 0..n {
            let fwd: Vec<f64> = (0..n).map(|j| t.get(l, j)).collect();
            assert_eq!(impute_forward(&t, l), scan_argmax(&fwd));
            let bwd: Vec<f64> = (0..n).map(|j| t.get(j, l)).collect();
            assert_eq!(impute_backward(&t, l), scan_argmax(&bwd));
            for r in 0..n {
                assert_eq!(impute_bidirectional(&t, l, r), oracle_bidirectional(&t, l, r));
            }
        }
    }
}

#[test]
fn two_slot_gap_matches_nine_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let t = random_stochastic(3, &mut rng);
        for l in 0..3 {
            for r in 0..3 {
                let gap = Gap { feature: 0, start: 1, end: 2, left_bin: Some(l), right_bin: Some(r) };
                assert_eq!(impute_gap(&t, &gap).bins, oracle_gap(&t, 2, Some(l), Some(r)));
            }
        }
    }
}

#[test]
fn selection_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let t = random_stochastic(5, &mut rng);
        let scaled = ProbMatrix::from_row_major_unchecked(5, t.as_slice().iter().map(|x| x * 8.0).collect());
        for l in 0..5 {
            assert_eq!(impute_forward(&t, l), impute_forward(&scaled, l));
            for r in 0..5 {
                assert_eq!(impute_bidirectional(&t, l, r), impute_bidirectional(&scaled, l, r));
                for len in 1..4 {
                    let gap = Gap { feature: 0, start: 1, end: len, left_bin: Some(l), right_bin: Some(r) };
                    assert_eq!(impute_gap(&t, &gap), impute_gap(&scaled, &gap));
                }
            }
        }
    }
}

#[test]
fn local_mean_matches_one_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let scheme = BinningScheme::uniform(&["a", "b", "c"], 0.0, 100.0, 10).unwrap();
    for _ in 0..20 {
        let train = random_records(&mut rng, 30, 3, 6, 0.4, 0.0, 100.0);
        let target = random_records(&mut rng, 10, 3, 6, 0.5, 0.0, 100.0);
        let mut means = Vec::new();
        for f in 0..3 {
            let (mut s, mut c) = (0.0, 0.0);
            for r in &train {
                for v in r.values[f].iter().flatten() {
                    s += v;
                    c += 1.0;
                }
            }
            means.push(s / c);
        }
        let out = impute_local_mean(&target, &train, &scheme).unwrap();
        for (o, t) in out.iter().zip(&target) {
            for f in 0..3 {
                for (ov, tv) in o.values[f].iter().zip(&t.values[f]) {
                    assert_eq!(ov.unwrap(), tv.unwrap_or(means[f]));
                }
            }
        }
    }
}

#[test]
fn generator_recovers_ground_truth_frequencies() {
    // 20000 subjects x 5 steps = 10^5 transitions of one feature.
    let spec = GeneratorSpec::synthetic(1, 10, 20_000, 0.0, 31).unwrap();
    let g = generate_client_data(&spec, 1, 0).unwrap();
    let scheme = spec.scheme().unwrap();
    let counts = count_transitions(&g.observed.records, &scheme, LagPolicy::default()).unwrap();
    assert_eq!(counts.total_transitions(), 100_000);
    let est = normalize(&counts, 0.0).unwrap();
    let err = est.mean_row_l1(&spec.ground_truth_matrix());
    assert!(err < 0.05, "mean row L1 {err}");
}

fn arb_record(features: usize, windows: usize) -> impl Strategy<Value = TimeSeriesRecord> {
    proptest::collection::vec(
        proptest::collection::vec(proptest::option::weighted(0.6, -5.0f64..15.0), windows),
        features,
    )
    .prop_map(|v| TimeSeriesRecord::new("p", v))
}

fn arb_matrix(n: usize) -> impl Strategy<Value = ProbMatrix> {
    proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, n), n).prop_map(move |rows| {
        let data = rows
            .into_iter()
            .flat_map(|r| {
                let s: f64 = r.iter().sum::<f64>() + 1e-9 * r.len() as f64;
                r.into_iter().map(move |x| (x + 1e-9) / s).collect::<Vec<_>>()
            })
            .collect();
        ProbMatrix::from_row_major(n, data).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn series_imputation_fills_everything_and_keeps_observations(
        record in arb_record(2, 6),
        t0 in arb_matrix(4),
        t1 in arb_matrix(4),
    ) {
        let scheme = BinningScheme::uniform(&["a", "b"], 0.0, 10.0, 4).unwrap();
        let t = TransitionMatrix::new(vec![t0, t1]);
        let (out, report) = impute_series(&record, &t, &scheme).unwrap();
        prop_assert!(out.is_complete());
        prop_assert_eq!(report.imputed_cells, record.missing_count());
        for (os, rs) in out.values.iter().zip(&record.values) {
            for (o, r) in os.iter().zip(rs) {
                if let Some(v) = r {
                    prop_assert_eq!(o.unwrap().to_bits(), v.to_bits());
                }
            }
        }
        let (again, _) = impute_series(&record, &t, &scheme).unwrap();
        prop_assert_eq!(again, out);
    }
}

proptest! {
    #[test]
    fn metrics_are_invariant_under_record_permutation(seed in 0u64..1000, rot in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scheme = BinningScheme::uniform(&["a"], 0.0, 10.0, 5).unwrap();
        let truth = random_records(&mut rng, 8, 1, 4, 0.0, 0.0, 10.0);
        let original: Vec<_> = truth
            .iter()
            .map(|r| {
                let mut r = r.clone();
                for c in r.values[0].iter_mut() {
                    if rng.gen::<f64>() < 0.4 { *c = None; }
                }
                r
            })
            .collect();
        let imputed = impute_local_mean(&original, &original, &scheme).unwrap();
        let ds = |r: Vec<TimeSeriesRecord>| Dataset::new(vec!["a".into()], 4, r).unwrap();
        let a = score(&ds(original.clone()), &ds(imputed.clone()), &ds(truth.clone()), &scheme).unwrap();
        let rotate = |mut v: Vec<TimeSeriesRecord>| { v.rotate_left(rot); v };
        let b = score(&ds(rotate(original)), &ds(rotate(imputed)), &ds(rotate(truth)), &scheme).unwrap();
        prop_assert_eq!(a.imputed_cells, b.imputed_cells);
        prop_assert_eq!(a.correct_bins, b.correct_bins);
        prop_assert!((a.squared_error - b.squared_error).abs() <= 1e-9 * a.squared_error.max(1.0));
    }
}

#[test]
fn gap_paths_match_enumeration_with_one_or_two_endpoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..120 {
        let n = 2 + trial % 4;
        let t = if trial % 3 == 0 { random_dyadic(n, &mut rng) } else { random_stochastic(n, &mut rng) };
        for len in 1..=3 {
            let l = rng.gen_range(0..n);
            let r = rng.gen_range(0..n);
            for (lb, rb) in [(Some(l), Some(r)), (Some(l), None), (None, Some(r))] {
                let gap = Gap { feature: 0, start: 1, end: len, left_bin: lb, right_bin: rb };
                let fill = impute_gap(&t, &gap);
                assert!(!fill.no_context);
                assert_eq!(fill.bins, oracle_gap(&t, len, lb, rb), "n={n} len={len} {lb:?} {rb:?}");
            }
        }
    }
}

fn federation_clients(seed: u64, intervals: &[u32]) -> (BinningScheme, Vec<ClientConfig>) {
    let spec = GeneratorSpec::synthetic(2, 6, 40, 0.2, seed).unwrap();
    let scheme = spec.scheme().unwrap();
    let clients = intervals
        .iter()
        .enumerate()
        .map(|(i, &k)| ClientConfig {
            id: ClientId(format!("c{i}")),
            dataset: generate_client_data(&spec, k as usize, i as u64).unwrap().observed,
            interval_hours: k,
        })
        .collect();
    (scheme, clients)
}

#[test]
fn federated_matrix_equals_centralized_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for seed in 0..10 {
        let k = rng.gen_range(2..6);
        let intervals: Vec<u32> = (0..k).map(|_| rng.gen_range(1..4)).collect();
        let (scheme, clients) = federation_clients(seed, &intervals);
        let mut pooled = Vec::new();
        for c in &clients {
            pooled.extend(c.dataset.records.iter().cloned());
        }
        let central = count_transitions(&pooled, &scheme, LagPolicy::default()).unwrap();
        let ids: Vec<ClientId> = clients.iter().map(|c| c.id.clone()).collect();
        let book = SeedBook::provision(seed, &ids).unwrap();
        let out = run_federation(clients, &scheme, &book, RoundParams::default()).unwrap();
        assert_eq!(out.aggregate_counts, central);
        assert_eq!(out.matrix, normalize(&central, 0.0).unwrap());
    }
}

#[test]
fn transcript_reveals_no_plaintext_and_phases_advance() {
    let (scheme, clients) = federation_clients(3, &[1, 1, 2, 3]);
    let locals: Vec<String> = clients
        .iter()
        .map(|c| plaintext_digest(&count_transitions(&c.dataset.records, &scheme, LagPolicy::default()).unwrap()))
        .collect();
    let ids: Vec<ClientId> = clients.iter().map(|c| c.id.clone()).collect();
    let book = SeedBook::provision(99, &ids).unwrap();
    let out = run_federation(clients, &scheme, &book, RoundParams::default()).unwrap();

    let uploads: Vec<_> = out.transcript.of_kind(MessageKind::MaskedUpload).collect();
    assert_eq!(uploads.len(), 4);
    for u in &uploads {
        let d = u.digest.as_ref().unwrap();
        assert!(!locals.contains(d));
        assert_eq!(u.recipient, "coordinator");
    }

    let rank = |k: MessageKind| match k {
        MessageKind::Register => 0,
        MessageKind::MaskedUpload => 1,
        MessageKind::AggregateDone => 2,
        MessageKind::MatrixBroadcast => 3,
    };
    let kinds: Vec<usize> = out.transcript.entries.iter().map(|e| rank(e.kind)).collect();
    assert!(kinds.windows(2).all(|w| w[0] <= w[1]));
    for (i, e) in out.transcript.entries.iter().enumerate() {
        assert_eq!(e.seq, i);
    }
    for c in &ids {
        let phases: Vec<Phase> = out
            .transcript
            .entries
            .iter()
            .filter(|e| e.sender == c.0)
            .filter_map(|e| e.sender_phase)
            .collect();
        assert_eq!(phases, [Phase::Init, Phase::Counted]);
    }
    for c in &out.clients {
        assert_eq!(c.phase, Phase::Imputed);
        assert!(c.imputed.records.iter().all(|r| r.is_complete()));
    }
}
