use proptest::prelude::*;

use super::*;
use crate::tensor::finite_difference_check;

fn tensor(v: &[f32]) -> Tensor<f32> {
    Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
}

fn quantizer(alpha: f32, bit: u32, signed: bool) -> QuantParams<f32> {
    let mut q = QuantParams::new(alpha, 8.0, signed).unwrap();
    q.set_frozen_bit(Some(bit));
    q.set_mode(QuantMode::Quant);
    q
}

/// Exhaustive nearest-level search in grid units with ties broken away from zero.
fn nearest_level_oracle(x: f32, alpha: f32, bit: u32, signed: bool) -> f32 {
    let (lo, hi) = if signed {
        let h = (1i64 << (bit - 1)) - 1;
        (-h, h)
    } else {
        (0, (1i64 << bit) - 1)
    };
    let delta = alpha / hi as f32;
    let v = x / delta;
    let mut best = lo;
    let mut best_d = f32::INFINITY;
    for k in lo..=hi {
        let d = (v - k as f32).abs();
        if d < best_d || (d == best_d && (k as f32).abs() > (best as f32).abs()) {
            best = k;
            best_d = d;
        }
    }
    best as f32 * delta
}

#[test]
fn effective_alpha_examples() {
    let q = QuantParams::<f64>::from_raw(0.0, 0.0, false);
    assert!((q.alpha_value() - std::f64::consts::LN_2).abs() < 1e-12);
    let q = QuantParams::<f64>::from_raw(10.0, 0.0, false);
    assert!((q.alpha_value() - 10.000_045_4).abs() < 1e-7);
    let a: Vec<f64> = (-5..5)
        .map(|r| QuantParams::<f64>::from_raw(r as f64, 0.0, false).alpha_value())
        .collect();
    assert!(a.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn effective_bit_examples() {
    assert_eq!(QuantParams::<f64>::from_raw(0.0, 0.0, false).bit_value(), 8.0);
    assert!((QuantParams::<f64>::from_raw(0.0, -60.0, false).bit_value() - 2.0).abs() < 1e-12);
    assert!((QuantParams::<f64>::from_raw(0.0, 60.0, false).bit_value() - 14.0).abs() < 1e-12);
}

#[test]
fn raw_parametrization_round_trips() {
    let q = QuantParams::<f64>::new(2.5, 3.7, true).unwrap();
    assert!((q.alpha_value() - 2.5).abs() < 1e-12);
    assert!((q.bit_value() - 3.7).abs() < 1e-12);
    assert!(QuantParams::<f64>::new(-1.0, 4.0, false).is_err());
    assert!(QuantParams::<f64>::new(1.0, 14.0, false).is_err());
}

#[test]
fn step_size_examples() {
    let s = |a: f64, b: f64, signed| step_size(&Tensor::scalar(a), &Tensor::scalar(b), signed);
    assert!((s(1.0, 2.0, false).unwrap().item() - 1.0 / 3.0).abs() < 1e-15);
    assert!((s(3.0, 3.0, false).unwrap().item() - 3.0 / 7.0).abs() < 1e-15);
    assert_eq!(s(1.0, 2.0, true).unwrap().item(), 1.0);
    assert!(s(1.0, 1.5, true).is_err());
}

#[test]
fn noise_forward_zero_noise_is_identity_inside_range() {
    let q = QuantParams::<f32>::new(1.7, 4.0, false).unwrap();
    let x = tensor(&[0.0, 0.1, 0.33, 1.2345, 1.7]);
    let y = q.forward(&x, Noise::Zero).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
}

#[test]
fn noise_forward_truncates_above_alpha() {
    let q = QuantParams::<f32>::new(1.5, 4.0, false).unwrap();
    let alpha = q.alpha_value();
    let y = q.forward(&tensor(&[2.0 * alpha, -0.3]), Noise::Zero).unwrap();
    assert_eq!(y.to_vec(), vec![alpha, 0.0]);
}

#[test]
fn noise_forward_hand_example() {
    // alpha = 1, bit pinned at 4 through the straight-through policy, z = +1:
    // 0.5 + delta / 2 with delta = 1/15.
    let q = QuantParams::<f64>::new(1.0, 4.0, false)
        .unwrap()
        .with_noise(NoiseDist::Gaussian, BitNoisePolicy::Ste);
    let s = NoiseSamples { z: vec![1.0], z_bit: 0.0 };
    let y = q.noise_forward_with(&Tensor::from_vec(&[1], vec![0.5]).unwrap(), &s).unwrap();
    assert!((y.item() - (0.5 + 1.0 / 30.0)).abs() < 1e-12, "{}", y.item());
}

#[test]
fn uniform_noise_spans_one_step() {
    let q = QuantParams::<f64>::new(1.0, 4.0, false)
        .unwrap()
        .with_noise(NoiseDist::Uniform, BitNoisePolicy::Ste);
    let x = Tensor::from_vec(&[2], vec![0.5, 0.5]).unwrap();
    let s = NoiseSamples {
        z: vec![0.0, 0.999_999],
        z_bit: 0.0,
    };
    let y = q.noise_forward_with(&x, &s).unwrap().to_vec();
    assert!((y[0] - (0.5 - 1.0 / 30.0)).abs() < 1e-12);
    assert!((y[1] - (0.5 + 1.0 / 30.0)).abs() < 1e-6);
}

#[test]
fn mode_mismatch_is_rejected() {
    let q = quantizer(1.0, 4, false);
    let s = NoiseSamples { z: vec![0.0], z_bit: 0.0 };
    assert!(matches!(
        q.noise_forward_with(&tensor(&[0.1]), &s),
        Err(Error::ModeMismatch { expected: "noise", .. })
    ));
    let q = QuantParams::<f32>::new(1.0, 4.0, false).unwrap();
    assert!(q.quant_forward(&tensor(&[0.1])).is_err());
}

#[test]
fn quant_forward_unsigned_example() {
    let q = quantizer(1.0, 2, false);
    let y = q.quant_forward(&tensor(&[-0.2, 0.15, 0.4, 0.5, 0.9])).unwrap().to_vec();
    let expect = [0.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    for (a, b) in y.iter().zip(expect) {
        assert!((a - b).abs() < 1e-6, "{y:?}");
    }
}

#[test]
fn quant_forward_signed_example() {
    let q = quantizer(1.0, 2, true);
    let y = q.quant_forward(&tensor(&[-5.0, -0.4, 0.6])).unwrap().to_vec();
    assert_eq!(y, vec![-1.0, 0.0, 1.0]);
}

#[test]
fn quant_forward_fixes_grid_points() {
    let q = quantizer(2.0, 3, false);
    let delta = 2.0f32 / 7.0;
    let grid: Vec<f32> = (0..8).map(|k| k as f32 * delta).collect();
    assert_eq!(q.quant_forward(&tensor(&grid)).unwrap().to_vec(), grid);
}

#[test]
fn quant_forward_gradients_follow_lsq() {
    // alpha = 1, bit = 2 (delta = 1/3); x = 0.4 inside, x = 2 saturated.
    let mut q = QuantParams::<f64>::new(1.0, 8.0, false).unwrap();
    q.set_frozen_bit(Some(2));
    q.set_mode(QuantMode::Quant);
    let x = Tensor::param(&[2], vec![0.4, 2.0]).unwrap();
    q.quant_forward(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0, 0.0]);
    // d/d delta = (round(1.2) - 1.2) + 3 = 2.8; d delta / d alpha = 1/3;
    // d alpha / d alpha_raw = sigmoid(alpha_raw) = 1 - e^{-1}.
    let expect = 2.8 / 3.0 * (1.0 - (-1.0f64).exp());
    let got = q.alpha_raw.grad().unwrap()[0];
    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    assert!(q.bit_raw.grad().is_none_or(|g| g[0] == 0.0));
}

#[test]
fn set_mode_round_trip_keeps_parameters() {
    let mut q = QuantParams::<f32>::new(1.3, 5.2, true).unwrap();
    let before = (q.alpha_raw.to_vec(), q.bit_raw.to_vec());
    q.set_mode(QuantMode::Quant);
    let x = tensor(&[0.3, -0.77, 1.9]);
    let a = q.quant_forward(&x).unwrap().to_vec();
    let b = q.quant_forward(&x).unwrap().to_vec();
    assert_eq!(a, b);
    q.set_mode(QuantMode::Noise);
    assert_eq!((q.alpha_raw.to_vec(), q.bit_raw.to_vec()), before);
}

#[test]
fn noise_std_matches_half_step() {
    let q = QuantParams::<f64>::new(10.0, 3.0, false)
        .unwrap()
        .with_noise(NoiseDist::Gaussian, BitNoisePolicy::Ste);
    let n = 100_000;
    let x = Tensor::full(&[n], 5.0);
    let mut rng = RngStream::new(42, 0);
    let y = q.noise_forward(&x, &mut rng).unwrap().to_vec();
    let alpha = q.alpha_value();
    let d: Vec<f64> = y.iter().filter(|&&v| v > 0.0 && v < alpha).map(|v| v - 5.0).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
    let expect = 10.0 / 7.0 / 2.0;
    assert!((sd - expect).abs() / expect < 0.05, "sd {sd} vs {expect}");
}

/// Draws a random noise-mode case whose frozen forward stays clear of every
/// kink (truncation bounds and the noisy-bit clamp) by `margin`.
fn clear_noise_case(rng: &mut RngStream, signed: bool, margin: f64) -> (QuantParams<f64>, Vec<f64>, NoiseSamples<f64>) {
    loop {
        let alpha: f64 = 0.5 + 2.0 * rng.uniform::<f64>();
        let bit: f64 = 2.5 + 6.0 * rng.uniform::<f64>();
        let q = QuantParams::<f64>::new(alpha, bit, signed).unwrap();
        let n = 6;
        let lo = if signed { -1.3 * alpha } else { -0.3 * alpha };
        let x: Vec<f64> = (0..n).map(|_| lo + (1.3 * alpha - lo) * rng.uniform::<f64>()).collect();
        let s: NoiseSamples<f64> = NoiseSamples::draw(n, NoiseDist::Gaussian, rng);
        let noisy_bit = bit + s.z_bit / 2.0;
        let bit_lo: f64 = if signed { 2.0 } else { 1.0 };
        if (noisy_bit - bit_lo).abs() < margin || (noisy_bit - 16.0).abs() < margin {
            continue;
        }
        let denom = if signed {
            2f64.powf(noisy_bit - 1.0) - 1.0
        } else {
            2f64.powf(noisy_bit) - 1.0
        };
        let delta = alpha / denom;
        let clear = x.iter().zip(&s.z).all(|(&xi, &zi)| {
            let v = xi + zi * delta / 2.0;
            let lo_b = if signed { -alpha } else { 0.0 };
            (v - alpha).abs() > margin && (v - lo_b).abs() > margin
        });
        if clear {
            return (q, x, s);
        }
    }
}

#[test]
fn noise_forward_gradients_match_finite_differences() {
    let mut rng = RngStream::new(5, 0);
    for case in 0..30 {
        let signed = case % 2 == 1;
        let (q, xv, s) = clear_noise_case(&mut rng, signed, 1e-3);
        let x = Tensor::param(&[xv.len()], xv.clone()).unwrap();
        let weights: Vec<f64> = rng.normal_vec(xv.len());
        let w = Tensor::from_vec(&[xv.len()], weights).unwrap();
        let f = || q.noise_forward_with(&x, &s)?.mul(&w).map(|t| t.sum());
        let err = finite_difference_check(f, &[x.clone(), q.alpha_raw.clone(), q.bit_raw.clone()], 1e-6).unwrap();
        assert!(err < 1e-3, "case {case}: {err}");
    }
}

#[test]
fn alpha_gradient_is_negative_when_everything_is_truncated() {
    // All elements above alpha: d(sum)/d alpha = count.
    let q = QuantParams::<f64>::new(1.0, 4.0, false).unwrap();
    let x = Tensor::from_vec(&[3], vec![5.0, 6.0, 7.0]).unwrap();
    q.forward(&x, Noise::Zero).unwrap().sum().neg().backward().unwrap();
    assert!(q.alpha_raw.grad().unwrap()[0] < 0.0);
}

#[test]
fn quantizer_enum_dispatches() {
    let mut qz = Quantizer::Nipq(QuantParams::<f32>::new(1.0, 3.0, false).unwrap());
    assert_eq!(qz.mode(), QuantMode::Noise);
    qz.set_mode(QuantMode::Quant);
    assert_eq!(qz.freeze_bit(), 3);
    assert!(qz.alpha_raw().is_some());
    let mm = Quantizer::MinMax(MinMaxQuant::<f32>::new(3.0).unwrap());
    assert!(mm.alpha_raw().is_none());
}

#[test]
fn minmax_endpoints_are_levels() {
    let mut q = MinMaxQuant::<f32>::new(4.0).unwrap();
    q.set_frozen_bit(Some(2));
    q.set_mode(QuantMode::Quant);
    assert_eq!(q.quant_forward(&tensor(&[0.0, 1.0])).unwrap().to_vec(), vec![0.0, 1.0]);
}

#[test]
fn minmax_tie_rounds_away_from_zero() {
    let mut q = MinMaxQuant::<f32>::new(4.0).unwrap();
    q.set_frozen_bit(Some(2));
    q.set_mode(QuantMode::Quant);
    let y = q.quant_forward(&tensor(&[-2.0, 0.0, 2.0])).unwrap().to_vec();
    assert_eq!(y[0], -2.0);
    assert!((y[1] - 2.0 / 3.0).abs() < 1e-6, "{y:?}");
    assert_eq!(y[2], 2.0);
}

#[test]
fn minmax_two_point_weights_exact_at_two_bits() {
    let mut q = MinMaxQuant::<f32>::new(4.0).unwrap();
    q.set_frozen_bit(Some(2));
    q.set_mode(QuantMode::Quant);
    let w = [-0.7f32, 0.7, 0.7, -0.7];
    assert_eq!(q.quant_forward(&tensor(&w)).unwrap().to_vec(), w.to_vec());
}

#[test]
fn minmax_degenerate_and_zero_noise() {
    let mut q = MinMaxQuant::<f32>::new(4.0).unwrap();
    let x = tensor(&[0.1, -0.5, 0.9]);
    assert_eq!(q.forward(&x, Noise::Zero).unwrap().to_vec(), x.to_vec());
    q.set_mode(QuantMode::Quant);
    let c = tensor(&[0.3, 0.3]);
    assert_eq!(q.quant_forward(&c).unwrap().to_vec(), c.to_vec());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn quant_matches_nearest_level_oracle(
        xs in proptest::collection::vec(-12.0f32..12.0, 1..40),
        alpha in 0.1f32..10.0,
        bit in 2u32..=8,
        signed: bool,
    ) {
        let q = quantizer(alpha, bit, signed);
        let a = q.alpha_value();
        let y = q.quant_forward(&tensor(&xs)).unwrap().to_vec();
        for (&x, &yi) in xs.iter().zip(&y) {
            prop_assert_eq!(yi, nearest_level_oracle(x, a, bit, signed));
        }
    }

    #[test]
    fn quant_output_properties(
        mut xs in proptest::collection::vec(-12.0f32..12.0, 2..60),
        alpha in 0.1f32..10.0,
        bit in 2u32..=8,
        signed: bool,
    ) {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = quantizer(alpha, bit, signed);
        let a = q.alpha_value();
        let y = q.quant_forward(&tensor(&xs)).unwrap().to_vec();
        // range, up to the rounding of k * (alpha / k)
        let tol = a * 1e-6;
        let lo = if signed { -a } else { 0.0 };
        prop_assert!(y.iter().all(|&v| v >= lo - tol && v <= a + tol));
        // monotone on sorted input
        prop_assert!(y.windows(2).all(|w| w[0] <= w[1]));
        // idempotent
        let yy = q.quant_forward(&tensor(&y)).unwrap().to_vec();
        prop_assert_eq!(&yy, &y);
        // level count
        let mut distinct = y.clone();
        distinct.dedup();
        let max_levels = if signed { (1usize << bit) - 1 } else { 1usize << bit };
        prop_assert!(distinct.len() <= max_levels);
    }

    #[test]
    fn noise_output_stays_in_range(
        xs in proptest::collection::vec(-20.0f32..20.0, 1..40),
        alpha in 0.1f32..10.0,
        bit in 2.1f32..13.9,
        signed: bool,
        seed: u64,
    ) {
        let q = QuantParams::<f32>::new(alpha, bit, signed).unwrap();
        let a = q.alpha_value();
        let mut rng = RngStream::new(seed, 0);
        let y = q.noise_forward(&tensor(&xs), &mut rng).unwrap().to_vec();
        let lo = if signed { -a } else { 0.0 };
        prop_assert!(y.iter().all(|&v| v >= lo && v <= a));
    }
}
