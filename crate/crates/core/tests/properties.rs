use affclt::affinity::{distance_ball, graph_neighborhood, m_ball, AffinityMap, DecayBound};
use affclt::apps::socio_distance;
use affclt::diagnostics::{a1_from_records, a1_sum, a2_from_records, a2_sum, records, Evaluation, Needs, SumOptions};
use affclt::io::{read_arrays_binary, read_arrays_csv, write_arrays_binary, write_arrays_csv};
use affclt::kernel::CovKernel;
use affclt::models::{sir_with_seeds, GraphTopology, Locations, Metric};
use affclt::normality::{ks_distance, w1_distance};
use affclt::omega::{omega_from_kernel, omega_partial, OmegaMatrix};
use affclt::{ModelId, SampleArray};
use proptest::prelude::*;

fn scalar(v: Vec<f64>) -> SampleArray {
    SampleArray::scalar(v, ModelId::MDependent, 0, false).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Fisher-Yates permutation driven by a proptest-chosen key.
fn permute<T: Clone>(v: &[T], key: u64) -> Vec<T> {
    let mut out = v.to_vec();
    let mut s = key | 1;
    for i in (1..out.len()).rev() {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        out.swap(i, (s % (i as u64 + 1)) as usize);
    }
    out
}

fn random_sets(n: usize, seeds: &[u64]) -> AffinityMap {
    let sets = (0..n)
        .map(|i| {
            let mut s: Vec<usize> = seeds.iter().map(|k| (*k as usize + i * 7) % n).collect();
            s.push(i);
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    AffinityMap::from_sets(n, 1, sets).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distances_ignore_sample_order(x in prop::collection::vec(-5.0f64..5.0, 10..200), key in any::<u64>()) {
        let y = permute(&x, key);
        prop_assert_eq!(ks_distance(&x).unwrap(), ks_distance(&y).unwrap());
        prop_assert_eq!(w1_distance(&x).unwrap(), w1_distance(&y).unwrap());
        let ks = ks_distance(&x).unwrap();
        prop_assert!((0.0..=1.0).contains(&ks));
    }

    #[test]
    fn omega_shards_merge_to_the_whole(acv in prop::collection::vec(-0.3f64..0.3, 1..5), n in 20usize..120, cut in 1usize..19) {
        let mut acv = acv;
        acv[0] = 1.0;
        let kernel = CovKernel::stationary(n, acv);
        let aff = m_ball(n, 2);
        let whole = omega_from_kernel(&kernel, &aff).unwrap();
        let a = omega_partial(&kernel, &aff, 0..cut).unwrap();
        let b = omega_partial(&kernel, &aff, cut..n).unwrap();
        let merged = a.merge(&b).finish(affclt::kernel::KernelKind::Analytic, n).unwrap();
        prop_assert!(close(merged.omega[0][0], whole.omega[0][0], 1e-12));
    }

    #[test]
    fn distance_balls_shrink_as_epsilon_grows(side in 3usize..9, e1 in 0.001f64..0.5, e2 in 0.001f64..0.5) {
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        let locs = Locations::grid(side, side, 1.0);
        let decay = DecayBound::PowerLaw { scale: 1.0, exponent: 2.5 };
        let big = distance_ball(&locs, lo, decay, Metric::Euclidean).unwrap();
        let small = distance_ball(&locs, hi, decay, Metric::Euclidean).unwrap();
        for a in 0..locs.len() {
            prop_assert!(small.set_len(a) <= big.set_len(a));
            for b in small.set(a) {
                prop_assert!(big.contains(a, b));
            }
        }
    }

    #[test]
    fn graph_neighborhoods_grow_with_radius(n in 5usize..40, p in 0.05f64..0.4, seed in any::<u64>()) {
        let g = GraphTopology::erdos_renyi(n, p, seed).unwrap();
        let one = graph_neighborhood(&g, 1).unwrap();
        let two = graph_neighborhood(&g, 2).unwrap();
        for a in 0..n {
            prop_assert!(one.contains(a, a));
            for b in one.set(a) {
                prop_assert!(two.contains(a, b));
            }
        }
    }

    #[test]
    fn socio_distance_is_a_metric(
        a in prop::collection::vec(0.0f64..1.0, 4),
        b in prop::collection::vec(0.0f64..1.0, 4),
        c in prop::collection::vec(0.0f64..1.0, 4),
    ) {
        let d = |x: &[f64], y: &[f64]| socio_distance(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        prop_assert!(socio_distance(&a, &b[..3]).is_err());
    }

    #[test]
    fn sir_is_monotone_in_q_and_seeds(
        n in 10usize..60,
        p in 0.05f64..0.3,
        q1 in 0.0f64..1.0,
        q2 in 0.0f64..1.0,
        key in any::<u64>(),
        seed in any::<u64>(),
    ) {
        let g = GraphTopology::erdos_renyi(n, p, seed).unwrap();
        let (lo, hi) = if q1 < q2 { (q1, q2) } else { (q2, q1) };
        let few = sir_with_seeds(&g, &[0], lo, n, key);
        let more_q = sir_with_seeds(&g, &[0], hi, n, key);
        let more_seeds = sir_with_seeds(&g, &[0, n / 2], lo, n, key);
        for i in 0..n {
            prop_assert!(!few.infected[i] || more_q.infected[i]);
            prop_assert!(!few.infected[i] || more_seeds.infected[i]);
        }
        prop_assert!(few.infected[0]);
    }

    #[test]
    fn exhaustive_triple_sum_matches_enumeration(
        n in 4usize..30,
        members in prop::collection::vec(0u64..1000, 0..4),
        reps in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 30), 3..8),
    ) {
        let aff = random_sets(n, &members);
        let arrays: Vec<SampleArray> = reps.iter().map(|r| scalar(r[..n].to_vec())).collect();
        let opts = SumOptions { evaluation: Evaluation::Exhaustive, ..SumOptions::default() };
        let est = a1_sum(&arrays, &aff, &opts).unwrap();
        let direct: f64 = arrays
            .iter()
            .map(|arr| {
                let z = arr.values();
                let mut s = 0.0;
                for a in 0..n {
                    for b in aff.set(a) {
                        for c in aff.set(a) {
                            s += z[a].abs() * z[b] * z[c];
                        }
                    }
                }
                s
            })
            .sum::<f64>()
            / arrays.len() as f64;
        prop_assert!(close(est.estimate, direct, 1e-10));
        prop_assert!(!est.subsampled && est.se_subsample == 0.0);
    }

    #[test]
    fn sums_ignore_replication_order(
        reps in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 25), 4..12),
        key in any::<u64>(),
    ) {
        let arrays: Vec<SampleArray> = reps.into_iter().map(scalar).collect();
        let aff = m_ball(25, 2);
        let opts = SumOptions::default();
        let recs = records(&arrays, &aff, &opts, Needs::default()).unwrap();
        let shuffled = permute(&recs, key);
        prop_assert!(close(a1_from_records(&recs).estimate, a1_from_records(&shuffled).estimate, 1e-12));
        prop_assert!(close(
            a2_from_records(&recs).unwrap().estimate,
            a2_from_records(&shuffled).unwrap().estimate,
            1e-10
        ));
    }

    #[test]
    fn budgeted_sums_are_reproducible(seed in any::<u64>()) {
        let arrays: Vec<SampleArray> = (0..6)
            .map(|r| scalar((0..40).map(|i| (((i * 31 + r * 17) % 13) as f64 - 6.0) / 3.0).collect()))
            .collect();
        let aff = m_ball(40, 3);
        let opts = SumOptions { s1: 50, s2: 50, evaluation: Evaluation::Sampled, seed };
        prop_assert_eq!(a1_sum(&arrays, &aff, &opts).unwrap(), a1_sum(&arrays, &aff, &opts).unwrap());
        prop_assert_eq!(a2_sum(&arrays, &aff, &opts).unwrap(), a2_sum(&arrays, &aff, &opts).unwrap());
    }

    #[test]
    fn whitening_inverts_coloring(
        d in prop::collection::vec(0.5f64..3.0, 2),
        off in -0.4f64..0.4,
        s in prop::collection::vec(-10.0f64..10.0, 2),
    ) {
        let c = off * (d[0] * d[1]).sqrt();
        let omega = OmegaMatrix::exact(vec![vec![d[0], c], vec![c, d[1]]], 10).unwrap();
        let w = omega.whitener(1e-8).unwrap();
        let back = w.color(&w.whiten(&s));
        prop_assert!(close(back[0], s[0], 1e-10) && close(back[1], s[1], 1e-10));
    }

    #[test]
    fn array_files_round_trip(
        n in 1usize..6,
        p in 1usize..3,
        vals in prop::collection::vec(-1e6f64..1e6, 36),
        reps in 1usize..3,
    ) {
        let arrays: Vec<SampleArray> = (0..reps)
            .map(|r| {
                let v = vals.iter().cycle().skip(r).take(n * p).copied().collect();
                SampleArray::new(n, p, v, ModelId::MaternGp, r as u64 * 11, true).unwrap()
            })
            .collect();
        let mut csv = Vec::new();
        write_arrays_csv(&arrays, Some("h".into()), &mut csv).unwrap();
        prop_assert_eq!(&read_arrays_csv(csv.as_slice()).unwrap(), &arrays);
        let mut bin = Vec::new();
        write_arrays_binary(&arrays, None, &mut bin).unwrap();
        prop_assert_eq!(&read_arrays_binary(bin.as_slice()).unwrap(), &arrays);
    }
}
