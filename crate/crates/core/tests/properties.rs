#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;

use proptest::prelude::*;
use proptest::strategy::ValueTree;

use molalign::alignment::{beamforming, check_conditions, Tolerances};
use molalign::asymptotic::{
    build_beamforming, dof, verify_alignment, AsymptoticConfig, DiagonalChannelStack,
};
use molalign::detection::{message_triples, threshold_pe, ZfDetector};
use molalign::montecarlo::{simulate, SimConfig};
use molalign::search::{objective_pe, optimize, Method, Problem, SearchSpec};
use molalign::{channel_set, impulse_response, lemma2_region, Scenario, TimingSchedule};

const DYADIC: f64 = 1.0 / 1024.0;

fn dyadic_schedule(k: [u16; 12]) -> TimingSchedule {
    let mut a = [0.0; 12];
    for (i, v) in k.iter().enumerate() {
        a[i] = *v as f64 * DYADIC;
    }
    // sampling strictly after every release
    for v in a.iter_mut().skip(6) {
        *v += 2.0;
    }
    TimingSchedule::from_array(a)
}

fn schedule_strategy() -> impl Strategy<Value = [u16; 12]> {
    prop::array::uniform12(0u16..1024)
}

fn log_poisson_pmf(y: u64, lam: f64) -> f64 {
    let mut lf = 0.0;
    for k in 1..=y {
        lf += (k as f64).ln();
    }
    y as f64 * lam.ln() - lam - lf
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn green_function_integrates_to_one(
        t in 0.05f64..2.0,
        ty in 0usize..2,
        vx in -50f64..50.0,
        vz in -50f64..50.0,
    ) {
        let mut scn = Scenario::reference();
        scn.flow = [vx * 1e-6, 0.0, vz * 1e-6];
        let d = scn.diffusion[ty];
        let sigma = (2.0 * d * t).sqrt();
        let tx = scn.tx_positions[0];
        let centre = [tx[0] + scn.flow[0] * t, tx[1], tx[2] + scn.flow[2] * t];
        let h = sigma / 4.0;
        let half = 36i32;
        let mut total = 0.0;
        for i in -half..=half {
            for j in -half..=half {
                for k in -half..=half {
                    scn.rx_positions[0] = [
                        centre[0] + i as f64 * h,
                        centre[1] + j as f64 * h,
                        centre[2] + k as f64 * h,
                    ];
                    total += impulse_response(&scn, 0, 0, ty, t, 0.0);
                }
            }
        }
        total *= h * h * h;
        prop_assert!((total - 1.0).abs() < 1e-6, "mass {total}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gains_are_shift_invariant(k in schedule_strategy(), shift in 0u16..2048) {
        let scn = Scenario::reference();
        let ts = dyadic_schedule(k);
        let a = channel_set(&scn, &ts).unwrap();
        let b = channel_set(&scn, &ts.shifted(shift as f64 * DYADIC)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn gains_are_translation_invariant(
        k in schedule_strategy(),
        off in prop::array::uniform3(-512i32..512),
    ) {
        let step = (2.0f64).powi(-20);
        let mut scn = Scenario::reference();
        // dyadic positions keep the coordinate differences exact
        for p in scn.tx_positions.iter_mut().chain(scn.rx_positions.iter_mut()) {
            *p = p.map(|x| (x / step).round() * step);
        }
        let moved = scn.translated(off.map(|o| o as f64 * step));
        let ts = dyadic_schedule(k);
        prop_assert_eq!(channel_set(&scn, &ts).unwrap(), channel_set(&moved, &ts).unwrap());
    }

    #[test]
    fn alignment_conditions_ignore_flow(
        k in schedule_strategy(),
        v in prop::array::uniform3(-100f64..100.0),
    ) {
        let scn = Scenario::reference();
        let mut flowing = scn.clone();
        flowing.flow = v.map(|x| x * 1e-6);
        let ts = dyadic_schedule(k);
        let a = check_conditions(&scn, &ts, Tolerances::default()).unwrap();
        let b = check_conditions(&flowing, &ts, Tolerances::default()).unwrap();
        prop_assert_eq!(a.ia_residual, b.ia_residual);
        prop_assert_eq!(a.independency_residuals, b.independency_residuals);
    }

    #[test]
    fn zf_cancels_interference(u in 0.0f64..1.0) {
        let mut scn = Scenario::reference();
        scn.env_noise = [0.0; 2];
        let region = lemma2_region(&scn, 2.0).unwrap();
        let (lo, hi) = region.dt12_interval;
        let dt12 = lo + (hi - lo) * (0.02 + 0.96 * u);
        prop_assume!(region.admit(dt12).is_ok());
        let ts = region.times(dt12, None).unwrap();
        let ch = channel_set(&scn, &ts).unwrap();
        let bf = beamforming(&ch).unwrap();
        let det = ZfDetector::build(&ch, &bf, &scn).unwrap();
        for m in message_triples() {
            for i in 0..3 {
                let (mu, _) = det.rx[i].component(m);
                let own = scn.amplitudes[m[i] as usize];
                if i > 0 {
                    prop_assert!((mu - own).abs() <= 1e-8 * own, "rx{} {mu} vs {own}", i + 1);
                }
                // the statistic depends on the receiver's own message only
                let mut base = m;
                base[(i + 1) % 3] = 0;
                base[(i + 2) % 3] = 0;
                let (mu0, _) = det.rx[i].component(base);
                prop_assert!((mu - mu0).abs() <= 1e-8 * mu0.abs(), "rx{} {mu} vs {mu0}", i + 1);
            }
        }
    }

    #[test]
    fn zf_decisions_match_direct_mixture(
        u in 0.0f64..1.0,
        x in -0.5f64..1.5,
        i in 0usize..3,
    ) {
        let scn = Scenario::reference();
        let region = lemma2_region(&scn, 2.0).unwrap();
        let (lo, hi) = region.dt12_interval;
        let dt12 = lo + (hi - lo) * (0.02 + 0.96 * u);
        prop_assume!(region.admit(dt12).is_ok());
        let ts = region.times(dt12, None).unwrap();
        let ch = channel_set(&scn, &ts).unwrap();
        let bf = beamforming(&ch).unwrap();
        let det = ZfDetector::build(&ch, &bf, &scn).unwrap();
        let (m0, _) = det.rx[i].component([0; 3]);
        let mut one = [0; 3];
        one[i] = 1;
        let (m1, _) = det.rx[i].component(one);
        let n = m0 + x * (m1 - m0);
        let density = |bit: u8| -> f64 {
            message_triples()
                .into_iter()
                .filter(|m| m[i] == bit)
                .map(|m| {
                    let (mu, var) = det.rx[i].component(m);
                    (-(n - mu) * (n - mu) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
                })
                .sum()
        };
        let (p0, p1) = (density(0), density(1));
        prop_assume!((p1 - p0).abs() > 1e-9 * (p0 + p1));
        prop_assert_eq!(det.map_decide(i, n), u8::from(p1 > p0));
    }

    #[test]
    fn lemma2_round_trip(u in 0.0f64..1.0, t1 in 0.0f64..0.5) {
        let scn = Scenario::reference();
        let region = lemma2_region(&scn, 2.0).unwrap();
        let (lo, hi) = region.dt12_interval;
        let dt12 = lo + (hi - lo) * (0.01 + 0.98 * u);
        prop_assume!(region.admit(dt12).is_ok());
        let ts = region.times(dt12, Some(t1)).unwrap();
        ts.check_order().unwrap();
        let rep = check_conditions(&scn, &ts, Tolerances::default()).unwrap();
        prop_assert!(rep.ia_residual.abs() < 1e-8);
        for r in rep.reaction_residuals.unwrap() {
            prop_assert!(r.abs() < 1e-8);
        }
        let dt13 = region.dt13_on_line(dt12);
        prop_assert!((ts.release[0][0] - ts.release[1][0] - dt12).abs() < 1e-12);
        prop_assert!((ts.release[0][0] - ts.release[2][0] - dt13).abs() < 1e-12);
        let deltas = region.appendix_deltas(dt12, dt13);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((deltas[i][j] - ts.delta(i, j, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn threshold_pe_matches_summation(
        lam0 in 0.01f64..5.0,
        gap in 0.01f64..8.0,
        gamma in 0.0f64..15.0,
    ) {
        let lam1 = lam0 + gap;
        let mut miss = 0.0;
        let mut false_alarm = 0.0;
        for y in 0..200u64 {
            if (y as f64) > gamma {
                false_alarm += log_poisson_pmf(y, lam0).exp();
            } else {
                miss += log_poisson_pmf(y, lam1).exp();
            }
        }
        let brute = 0.5 * (miss + false_alarm);
        prop_assert!((threshold_pe(lam0, lam1, gamma) - brute).abs() < 1e-10);
    }

    #[test]
    fn dof_increases_towards_half_the_users(k in 3usize..9, n in 1u32..6) {
        let a = dof(&AsymptoticConfig::new(k, n).unwrap());
        let b = dof(&AsymptoticConfig::new(k, n + 1).unwrap());
        prop_assert!(a < b);
        let half = num_rational::Ratio::new(k as u128, 2);
        prop_assert!(b < half);
    }

    #[test]
    fn alignment_report_is_equivariant(seed in any::<u64>(), scale in 0.1f64..10.0, rot in 0usize..5) {
        let cfg = AsymptoticConfig::new(3, 2).unwrap();
        let l = cfg.types() as usize;
        let h = DiagonalChannelStack::random(3, l, seed);
        let base = verify_alignment(&cfg, &h, &build_beamforming(&cfg, &h).unwrap());
        let moved = DiagonalChannelStack::new(
            h.h.iter()
                .map(|row| {
                    row.iter()
                        .map(|d| {
                            let mut d: Vec<f64> = d.iter().map(|x| x * scale).collect();
                            d.rotate_left(rot % l);
                            d
                        })
                        .collect()
                })
                .collect(),
        );
        let other = verify_alignment(&cfg, &moved, &build_beamforming(&cfg, &moved).unwrap());
        prop_assert!(base.resolvable());
        prop_assert_eq!(base, other);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn simulation_is_reproducible(seed in any::<u64>(), isi in 0u8..2) {
        let scn = Scenario::reference();
        let region = lemma2_region(&scn, 2.0).unwrap();
        let ts = region.times(-0.2323, None).unwrap();
        let bf = beamforming(&channel_set(&scn, &ts).unwrap()).unwrap();
        let cfg = SimConfig { trials: 30_000, seed, isi_memory: isi, ..SimConfig::default() };
        let a = simulate(&scn, &ts, &bf, &cfg).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| simulate(&scn, &ts, &bf, &cfg).unwrap());
        prop_assert_eq!(a, b);
    }
}

#[test]
fn special_search_beats_random_probes() {
    let scn = Scenario::reference();
    let res = optimize(&SearchSpec::new(Problem::RSpecial), &scn).unwrap();
    let region = lemma2_region(&scn, 2.0).unwrap();
    let (lo, hi) = region.dt12_interval;
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let mut probes = 0;
    while probes < 50 {
        let u = (0.0f64..1.0).new_tree(&mut runner).unwrap().current();
        let dt12 = lo + (hi - lo) * u;
        let Ok(ts) = region.times(dt12, None) else {
            continue;
        };
        let Ok(pe) = objective_pe(&scn, &ts, Method::Analytic) else {
            continue;
        };
        probes += 1;
        assert!(
            res.objective <= pe * (1.0 + 1e-12),
            "probe {dt12}: {pe} < {}",
            res.objective
        );
    }
}
