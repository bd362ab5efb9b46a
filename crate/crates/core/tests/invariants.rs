//! Property tests on random small deployments.

use approx::assert_relative_eq;
use num_complex::Complex;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dmimo_isac::channel::CommChannels;
use dmimo_isac::estimator::{coherent_cost, ncp_cost, synthesize_echoes, PreparedEchoes, SensingModel};
use dmimo_isac::fisher::{fim, Parameterization};
use dmimo_isac::geometry::{aod_to_point, bistatic_range, ApMode, ApNode, ArrayGeometry, Position2D};
use dmimo_isac::scenario::{CommChannelModel, Region, Scenario, Target};
use dmimo_isac::selection::{select_comm_centric, select_sensing_centric, surrogate_sum_se};
use dmimo_isac::validate::{noisy_echoes, random_instance};
use dmimo_isac::waveform::{build_frame, SensingWaveform};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn costs_are_ordered_residuals(seed in 0u64..10_000, dx in -3.0f64..3.0, dy in -3.0f64..3.0) {
        let (mut s, f) = random_instance(2, 3, 2, 6, 1, 0.5, seed).unwrap();
        let echoes = noisy_echoes(&mut s, &f, 5.0, seed + 1).unwrap();
        let model = SensingModel::new(&s, &f).unwrap();
        let prepared = PreparedEchoes::new(&echoes);
        let p = s.targets[0].position.offset(dx, dy);
        let ncp = ncp_cost(&model, &prepared, &p);
        let coh = coherent_cost(&model, &prepared, &[p]);
        // Both are least-squares residuals; the coherent model is a restriction
        // of the non-coherent one.
        prop_assert!(ncp >= -1e-12 * prepared.energy);
        prop_assert!(ncp <= coh * (1.0 + 1e-9));
        prop_assert!(coh <= prepared.energy * (1.0 + 1e-9));
    }

    #[test]
    fn ncp_ignores_receiver_phases(seed in 0u64..10_000, a in 0.0f64..6.3, b in 0.0f64..6.3) {
        let (mut s, f) = random_instance(3, 2, 2, 6, 1, 0.3, seed).unwrap();
        let echoes = noisy_echoes(&mut s, &f, 10.0, seed).unwrap();
        let model = SensingModel::new(&s, &f).unwrap();
        let p = s.targets[0].position.offset(0.7, -0.4);
        let rotated = echoes.rotated(&[Complex::from_polar(1.0, a), Complex::from_polar(1.0, b)]);
        let before = ncp_cost(&model, &PreparedEchoes::new(&echoes), &p);
        let after = ncp_cost(&model, &PreparedEchoes::new(&rotated), &p);
        prop_assert!((before - after).abs() <= 1e-9 * before);
    }

    #[test]
    fn coherent_bound_never_exceeds_noncoherent(seed in 0u64..10_000, targets in 1usize..3) {
        let (mut s, f) = random_instance(2, 2, 3, 8, targets, 0.5, seed).unwrap();
        s.sensing_noise_power = 1e-18;
        let c = fim(&s, &f, &s.targets, Parameterization::Coherent).unwrap();
        let n = fim(&s, &f, &s.targets, Parameterization::NonCoherent).unwrap();
        let p = fim(&s, &f, &s.targets, Parameterization::PerPathPhase).unwrap();
        for t in 0..targets {
            prop_assert!(c.peb_per_target[t] <= n.peb_per_target[t] * (1.0 + 1e-6));
            // Free phase per path carries exactly the non-coherent information.
            prop_assert!((p.peb_per_target[t] - n.peb_per_target[t]).abs() <= 1e-6 * n.peb_per_target[t]);
        }
    }

    #[test]
    fn bistatic_range_respects_triangle_inequality(
        tx in (-500.0f64..500.0, -500.0f64..500.0),
        rx in (-500.0f64..500.0, -500.0f64..500.0),
        p in (-500.0f64..500.0, -500.0f64..500.0),
    ) {
        let (tx, rx, p) = (Position2D::new(tx.0, tx.1), Position2D::new(rx.0, rx.1), Position2D::new(p.0, p.1));
        prop_assume!(tx.distance(&p) > 1e-6 && rx.distance(&p) > 1e-6);
        let d = bistatic_range(&tx, &p, &rx).unwrap();
        prop_assert!(d + 1e-9 >= tx.distance(&rx));
        prop_assert!((d - bistatic_range(&rx, &p, &tx).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn sensing_centric_spreads_receivers(
        points in prop::collection::vec((0.0f64..1000.0, 0.0f64..1000.0), 3..12),
        frac in 0.0f64..1.0,
    ) {
        let pos: Vec<Position2D<f64>> = points.iter().map(|&(x, y)| Position2D::new(x, y)).collect();
        let m = pos.len();
        let k = 1 + ((m - 2) as f64 * frac) as usize;
        let a = select_sensing_centric(&pos, k).unwrap();
        prop_assert_eq!(a.receive_set.len(), k);
        prop_assert_eq!(a.transmit_set.len() + k, m);
        prop_assert!(a.receive_set.windows(2).all(|w| w[0] < w[1]));
        if k >= 2 {
            let diameter = (0..m)
                .flat_map(|i| (0..m).map(move |j| (i, j)))
                .map(|(i, j)| pos[i].distance(&pos[j]))
                .fold(0.0, f64::max);
            let spread = a.receive_set.iter()
                .flat_map(|&i| a.receive_set.iter().map(move |&j| (i, j)))
                .map(|(i, j)| pos[i].distance(&pos[j]))
                .fold(0.0, f64::max);
            prop_assert!((spread - diameter).abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_first_pick_is_best_single_ap(
        gains in prop::collection::vec(prop::collection::vec(0.01f64..10.0, 3), 4..9),
        noise in 0.01f64..10.0,
    ) {
        let (a, trace) = select_comm_centric(&gains, 2, noise).unwrap();
        let best = (0..gains.len())
            .map(|m| surrogate_sum_se(&gains, &[m], noise))
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(surrogate_sum_se(&gains, &[trace[0].chosen], noise), best);
        prop_assert_eq!(a.transmit_set.len(), 2);
    }
}

#[test]
fn noiseless_echoes_vanish_at_truth() {
    let (s, f) = random_instance(3, 3, 4, 8, 1, 0.5, 11).unwrap();
    let echoes = synthesize_echoes(&s, &f, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let model = SensingModel::new(&s, &f).unwrap();
    let prepared = PreparedEchoes::new(&echoes);
    let p = s.targets[0].position;
    assert!(ncp_cost(&model, &prepared, &p) < 1e-12 * prepared.energy);
    assert!(coherent_cost(&model, &prepared, &[p]) < 1e-12 * prepared.energy);
}

/// The kernels instantiate in single precision as well.
#[test]
fn single_precision_pipeline() {
    let carrier = 3.5e9f32;
    let array = ArrayGeometry::<f32>::half_wavelength(4, carrier).unwrap();
    let ap = |x: f32, y: f32, mode| ApNode {
        position: Position2D::new(x, y),
        boresight: 0.0,
        array,
        max_power: 1.0,
        comm_power_fraction: 0.5,
        mode,
    };
    let scenario = Scenario::<f32> {
        region: Region::square(1000.0),
        aps: vec![
            ap(0.0, 0.0, ApMode::Transmit),
            ap(0.0, 400.0, ApMode::Transmit),
            ap(200.0, 0.0, ApMode::Receive),
            ap(200.0, 400.0, ApMode::Receive),
        ],
        ues: vec![Position2D::new(800.0, 800.0)],
        ue_phase_offsets: vec![0.0],
        targets: vec![Target {
            position: Position2D::new(600.0, 180.0),
            rcs: 1.0,
            reflection_phase: 1.0,
        }],
        carrier_hz: carrier,
        bandwidth_hz: 1e5,
        sensing_noise_power: 1e-16,
        ue_noise_power: 4e-16,
        comm: CommChannelModel::default(),
    };
    let channels = CommChannels::synthesize(&scenario, |m, k| ChaCha8Rng::seed_from_u64((m * 10 + k) as u64)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frame = build_frame(&scenario, &channels, 8, &SensingWaveform::Isotropic, &mut rng).unwrap();
    let echoes = synthesize_echoes(&scenario, &frame, &mut rng).unwrap();
    let model = SensingModel::new(&scenario, &frame).unwrap();
    let prepared = PreparedEchoes::new(&echoes);
    let truth = scenario.targets[0].position;
    let far = truth.offset(30.0, 30.0);
    assert!(ncp_cost(&model, &prepared, &truth) < ncp_cost(&model, &prepared, &far));
    let peb = fim(&scenario, &frame, &scenario.targets, Parameterization::NonCoherent).unwrap().peb_per_target[0];
    assert!(peb.is_finite() && peb > 0.0);
    let angle = aod_to_point(&scenario.aps[0], &truth).unwrap();
    assert_relative_eq!(angle, (180.0f32 / 600.0).atan(), max_relative = 1e-5);
}
