use idlewave::analysis::{default_threshold, detect_front, measure_speed, FrontQuery};
use idlewave::experiment::ExperimentConfig;
use idlewave::*;
use proptest::prelude::*;

const SCHEMES: [ConcurrencyScheme; 5] = ConcurrencyScheme::ALL;

fn sim(
    topology: TopologyMatrix,
    scheme: ConcurrencyScheme,
    protocol: Protocol,
    t_exec: f64,
    comm: f64,
    iterations: usize,
) -> SimConfig {
    let schedule = build_schedule(&topology, scheme, &DimensionMap::Natural).unwrap();
    SimConfig {
        topology,
        schedule,
        iterations,
        t_exec_s: t_exec,
        comm_cost: CommCost::Uniform(comm),
        protocol,
        delays: Vec::new(),
        noise: None,
        collectives: Vec::new(),
        seed: 0,
    }
}

fn distance_set() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::btree_set(1usize..8, 1..4).prop_map(|s| s.into_iter().collect())
}

fn protocol() -> impl Strategy<Value = Protocol> {
    prop_oneof![Just(Protocol::Eager), Just(Protocol::Rendezvous)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn topology_is_symmetric_and_bounded(d in distance_set(), extra in 1usize..40, periodic in any::<bool>()) {
        let j = *d.iter().max().unwrap();
        let n = 2 * j + extra;
        let boundary = if periodic { Boundary::Periodic } else { Boundary::OpenChain };
        let t = build_noncompact(n, &d, 64, boundary).unwrap();
        prop_assert!(t.is_symmetric());
        for r in 0..n {
            for e in t.neighbors(r) {
                prop_assert!(e.abs_distance() <= j);
                prop_assert!(e.partner != r);
                prop_assert!(t.edge(e.partner, r).is_some());
            }
        }
    }

    #[test]
    fn periodic_chain_has_more_edges(d in distance_set(), extra in 1usize..40) {
        let n = 2 * d.iter().max().unwrap() + extra;
        let open = build_noncompact(n, &d, 64, Boundary::OpenChain).unwrap();
        let ring = build_noncompact(n, &d, 64, Boundary::Periodic).unwrap();
        prop_assert!(ring.num_edges() > open.num_edges());
        for r in 0..n {
            prop_assert!(ring.neighbors(r).len() >= open.neighbors(r).len());
        }
    }

    #[test]
    fn schedules_match_for_every_scheme(d in distance_set(), extra in 1usize..30, periodic in any::<bool>(), s in 0usize..5) {
        let n = 2 * d.iter().max().unwrap() + extra;
        let boundary = if periodic { Boundary::Periodic } else { Boundary::OpenChain };
        let t = build_noncompact(n, &d, 64, boundary).unwrap();
        let schedule = build_schedule(&t, SCHEMES[s], &DimensionMap::Natural).unwrap();
        let pairs = validate_matching(&schedule).unwrap();
        let edges: usize = (0..n).map(|r| t.neighbors(r).len()).sum();
        prop_assert_eq!(pairs.len(), edges);
    }

    #[test]
    fn simulation_is_deterministic(j in 1usize..4, n in 10usize..40, s in 0usize..5, proto in protocol(), rank in 0usize..10, seed in any::<u64>()) {
        let t = build_compact(n, j, 64, Boundary::OpenChain).unwrap();
        let mut cfg = sim(t, SCHEMES[s], proto, 0.01, 0.001, 15);
        cfg.delays.push(DelayInjection { rank, iteration: 2, extra_s: 0.2 });
        cfg.noise = Some(NoiseSpec {
            distribution: NoiseDistribution::Exponential { mean_s: 0.001 },
            target_power: 0.05,
            seed,
        });
        prop_assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
    }

    #[test]
    fn scaling_all_times_scales_the_timeline(j in 1usize..4, n in 10usize..30, s in 0usize..5, proto in protocol(), lambda in 0.1f64..10.0) {
        let t = build_compact(n, j, 64, Boundary::OpenChain).unwrap();
        let mut a = sim(t, SCHEMES[s], proto, 0.01, 0.001, 12);
        a.delays.push(DelayInjection { rank: n / 2, iteration: 1, extra_s: 0.1 });
        let mut b = a.clone();
        b.t_exec_s *= lambda;
        b.comm_cost = a.comm_cost.scaled(lambda);
        b.delays[0].extra_s *= lambda;
        let (ta, tb) = (simulate(&a).unwrap(), simulate(&b).unwrap());
        for r in 0..n {
            prop_assert_eq!(ta.rank(r).len(), tb.rank(r).len());
            for (x, y) in ta.rank(r).iter().zip(tb.rank(r)) {
                prop_assert_eq!(x.phase, y.phase);
                prop_assert!((x.end_s * lambda - y.end_s).abs() <= 1e-9 * y.end_s.max(1.0));
            }
        }
    }

    #[test]
    fn periodic_ring_is_translation_invariant(j in 1usize..4, extra in 1usize..20, s in 0usize..5, shift in 1usize..30) {
        let n = 2 * j + extra;
        let shift = shift % n;
        let run = |rank: usize| {
            let t = build_compact(n, j, 64, Boundary::Periodic).unwrap();
            let mut cfg = sim(t, SCHEMES[s], Protocol::Eager, 0.01, 0.001, 15);
            cfg.delays.push(DelayInjection { rank, iteration: 2, extra_s: 0.3 });
            simulate(&cfg).unwrap()
        };
        let (a, b) = (run(0), run(shift));
        for r in 0..n {
            let (wa, wb) = (a.rank_total(r, Phase::Wait), b.rank_total((r + shift) % n, Phase::Wait));
            prop_assert!((wa - wb).abs() <= 1e-9, "rank {r}: {wa} vs {wb}");
        }
    }

    #[test]
    fn raising_the_threshold_never_lengthens_the_front(j in 1usize..4, s in 0usize..5, lo in 0.001f64..0.1, step in 0.0f64..0.3) {
        let t = build_compact(40, j, 64, Boundary::OpenChain).unwrap();
        let mut cfg = sim(t, SCHEMES[s], Protocol::Eager, 0.01, 0.001, 40);
        cfg.delays.push(DelayInjection { rank: 0, iteration: 1, extra_s: 0.3 });
        cfg.noise = Some(NoiseSpec {
            distribution: NoiseDistribution::Uniform { lo_s: 0.0, hi_s: 0.004 },
            target_power: 0.1,
            seed: 3,
        });
        let tl = simulate(&cfg).unwrap();
        let len = |thr: f64| detect_front(&tl, &FrontQuery::new(0, thr)).map_or(0, |f| f.points.len());
        prop_assert!(len(lo + step) <= len(lo));
    }

    #[test]
    fn speed_fit_is_shift_invariant_and_scales_inversely(j in 1usize..4, s in 0usize..5, shift in -100.0f64..100.0, lambda in 0.1f64..10.0) {
        let t = build_compact(60, j, 64, Boundary::OpenChain).unwrap();
        let mut cfg = sim(t, SCHEMES[s], Protocol::Eager, 0.01, 0.001, 70);
        cfg.delays.push(DelayInjection { rank: 0, iteration: 1, extra_s: 1.0 });
        let tl = simulate(&cfg).unwrap();
        let thr = default_threshold(&simulate(&cfg.silent_baseline()).unwrap(), cfg.t_exec_s);
        let front = detect_front(&tl, &FrontQuery::new(0, thr)).unwrap();
        let v = measure_speed(&front, 0).unwrap().speed_ranks_per_s;
        let mut shifted = front.clone();
        let mut scaled = front.clone();
        for p in &mut shifted.points {
            p.arrival_s += shift;
        }
        for p in &mut scaled.points {
            p.arrival_s *= lambda;
        }
        let vs = measure_speed(&shifted, 0).unwrap().speed_ranks_per_s;
        let vl = measure_speed(&scaled, 0).unwrap().speed_ranks_per_s;
        prop_assert!((vs - v).abs() <= 1e-6 * v);
        prop_assert!((vl * lambda - v).abs() <= 1e-9 * v);
    }

    #[test]
    fn shortening_is_monotone_and_lipschitz(d in 0.0f64..10.0, noise in prop::collection::vec(0.0f64..1.0, 0..20), extra in 0.0f64..1.0) {
        let base = predict_shortening(d, &noise);
        prop_assert!(base >= 0.0 && base <= d);
        let mut more = noise.clone();
        more.push(extra);
        let after = predict_shortening(d, &more);
        prop_assert!(after <= base);
        prop_assert!(base - after <= extra + 1e-12);
        let shifted = predict_shortening(d + extra, &noise);
        prop_assert!(shifted >= base && shifted - base <= extra + 1e-12);
    }

    #[test]
    fn compact_kappa_is_triangular(j in 2usize..40) {
        let k = |j: usize| {
            let t = build_compact(2 * j + 2, j, 64, Boundary::OpenChain).unwrap();
            kappa(&t, ConcurrencyScheme::MwsDim, Protocol::Eager).unwrap().kappa
        };
        prop_assert_eq!(k(j) - k(j - 1), j as f64);
    }

    #[test]
    fn calibrated_noise_hits_the_power_and_adds_over_ranks(family in 0usize..3, power in 0.001f64..0.2, seed in any::<u64>()) {
        let distribution = [
            NoiseDistribution::Shot { amplitude_s: 0.01, probability: 0.5 },
            NoiseDistribution::Exponential { mean_s: 0.001 },
            NoiseDistribution::Uniform { lo_s: 0.0, hi_s: 0.002 },
        ][family];
        let t = build_compact(16, 1, 64, Boundary::OpenChain).unwrap();
        let mut cfg = sim(t, ConcurrencyScheme::MwsDim, Protocol::Eager, 0.01, 0.001, 50);
        let spec = NoiseSpec { distribution, target_power: power, seed };
        cfg.noise = Some(calibrate_realized(&spec, 16, 50, cfg.silent_total()).unwrap());
        let tl = simulate(&cfg).unwrap();
        let total = tl.total(Phase::Noise);
        let per_rank: f64 = (0..16).map(|r| tl.rank_total(r, Phase::Noise)).sum();
        prop_assert!((total - per_rank).abs() <= 1e-12 * total.max(1.0));
        prop_assert!((total / cfg.silent_total() - power).abs() <= 1e-9 * power);
    }

    #[test]
    fn config_roundtrips_through_canonical_json(n in 8usize..200, j in 1usize..4, t_exec in 0.001f64..1.0, iterations in 1usize..500, seed in any::<u64>(), s in 0usize..5) {
        let text = format!(
            r#"{{"topology": {{"kind": "compact", "num_ranks": {n}, "j": {j}}},
                "concurrency": "{}",
                "timing": {{"t_exec_s": {t_exec}, "comm_cost_s": 0.001}},
                "iterations": {iterations}, "seed": {seed}}}"#,
            SCHEMES[s].name()
        );
        let cfg = ExperimentConfig::from_json_str(&text, "prop").unwrap();
        let again = ExperimentConfig::from_json_str(&cfg.to_canonical_json(), "prop").unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(cfg.content_hash(), again.content_hash());
    }
}
