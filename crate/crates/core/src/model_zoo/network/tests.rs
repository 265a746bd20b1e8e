use super::*;
use crate::model_zoo::{make_gaussian_blobs, EdgePolicy};

fn batch(n: usize, shape: &[usize], seed: u64) -> Tensor<f32> {
    let per: usize = shape.iter().product();
    let mut s = vec![n];
    s.extend_from_slice(shape);
    Tensor::from_vec(&s, RngStream::new(seed, 0).uniform_vec(n * per)).unwrap()
}

fn max_rel(a: &[f32], b: &[f32]) -> f32 {
    let scale = b.iter().fold(0f32, |m, v| m.max(v.abs())).max(1e-6);
    a.iter().zip(b).fold(0f32, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[test]
fn mlp_logits_shape() {
    let net = Network::<f32>::build(&NetworkSpec::default_mlp(), 0).unwrap();
    let y = net.forward(&batch(8, &[784], 1), &mut Forward::eval()).unwrap();
    assert_eq!(y.shape(), &[8, 10]);
    assert!(net.forward(&batch(8, &[783], 1), &mut Forward::eval()).is_err());
}

#[test]
fn cnn_and_regressor_shapes() {
    let cnn = Network::<f32>::build(&NetworkSpec::small_cnn([1, 8, 8], [4, 8, 8], 10), 0).unwrap();
    let y = cnn.forward(&batch(3, &[1, 8, 8], 2), &mut Forward::eval()).unwrap();
    assert_eq!(y.shape(), &[3, 10]);
    let reg = Network::<f32>::build(&NetworkSpec::tiny_regressor(16), 0).unwrap();
    assert_eq!(reg.forward(&batch(5, &[1], 3), &mut Forward::eval()).unwrap().shape(), &[5, 1]);
}

fn fp_and_quant14(spec: &NetworkSpec, x: &Tensor<f32>) -> (Vec<f32>, Vec<f32>) {
    let mut net = Network::<f32>::build(spec, 4).unwrap();
    net.calibrate(x).unwrap();
    let fp = net.forward(x, &mut Forward::eval().full_precision()).unwrap().to_vec();
    // widen activation boundaries to cover the data range
    for (_, role, q) in net.quantizers_mut() {
        if let (TensorRole::Activation, Some(p)) = (role, q.as_nipq_mut()) {
            let a = p.alpha_value();
            p.set_alpha(a * 4.0).unwrap();
        }
        q.set_mode(QuantMode::Quant);
        if let Some(p) = q.as_nipq_mut() {
            p.set_frozen_bit(Some(14));
        }
    }
    let q = net.forward(x, &mut Forward::eval()).unwrap().to_vec();
    (fp, q)
}

#[test]
fn fourteen_bit_quantization_is_near_identity() {
    let x = batch(16, &[20], 5);
    let (fp, q) = fp_and_quant14(&NetworkSpec::mlp(20, &[32, 16], 4), &x);
    assert!(max_rel(&q, &fp) < 1e-2, "{}", max_rel(&q, &fp));
    let x = batch(4, &[1, 8, 8], 6);
    let mut spec = NetworkSpec::small_cnn([1, 8, 8], [4, 8, 8], 10);
    spec.input_precision = InputPrecision::Fp;
    let (fp, q) = fp_and_quant14(&spec, &x);
    assert!(max_rel(&q, &fp) < 1e-2, "{}", max_rel(&q, &fp));
}

#[test]
fn keep_fp_edges_have_no_quantizers_and_untouched_weights() {
    let spec = NetworkSpec::mlp(6, &[5, 5], 3).with_edges(EdgePolicy::KeepFp);
    let net = Network::<f32>::build(&spec, 1).unwrap();
    let first = net.blocks[0].layer.weight.to_vec();
    let last = net.blocks[2].layer.weight.to_vec();
    let mut rng = RngStream::new(0, 0);
    net.forward(&batch(4, &[6], 0), &mut Forward::train(&mut rng)).unwrap();
    assert!(net.blocks[0].layer.w_quant.is_none() && net.blocks[0].layer.a_quant.is_none());
    assert!(net.blocks[2].layer.w_quant.is_none());
    assert!(net.blocks[1].layer.w_quant.is_some());
    assert_eq!(net.blocks[0].layer.weight.to_vec(), first);
    assert_eq!(net.blocks[2].layer.weight.to_vec(), last);
}

#[test]
fn forced_identity_quantizers_match_full_precision_bit_exactly() {
    let spec = NetworkSpec::small_cnn([1, 8, 8], [4, 4, 4], 3);
    let x = batch(5, &[1, 8, 8], 9);
    let net = Network::<f32>::build(&spec, 11).unwrap();
    for (_, _, q) in net.quantizers() {
        q.as_nipq().unwrap().set_alpha(1e4).unwrap();
    }
    let fp = net.forward(&x, &mut Forward::eval().full_precision()).unwrap().to_vec();
    let id = net.forward(&x, &mut Forward::eval()).unwrap().to_vec();
    assert_eq!(fp, id);
}

#[test]
fn batch_norm_running_stats_update_only_when_enabled() {
    let spec = NetworkSpec::small_cnn([1, 8, 8], [2, 2, 2], 3);
    let net = Network::<f32>::build(&spec, 0).unwrap();
    let bn = net.blocks[0].bn.as_ref().unwrap();
    let before = bn.running_mean.to_vec();
    let x = batch(4, &[1, 8, 8], 3);
    net.forward(&x, &mut Forward::eval()).unwrap();
    net.forward(&x, &mut Forward::eval().with_bn(BnMode::Batch)).unwrap();
    assert_eq!(bn.running_mean.to_vec(), before);
    net.forward(&x, &mut Forward::eval().with_bn(BnMode::Update { momentum: 0.5 }))
        .unwrap();
    assert_ne!(bn.running_mean.to_vec(), before);
}

#[test]
fn calibration_sets_activation_boundaries() {
    let data = make_gaussian_blobs::<f32>(64, 3, 5, 0).unwrap();
    let mut spec = NetworkSpec::mlp(5, &[8], 3);
    spec.signed_input = true;
    let net = Network::build(&spec, 0).unwrap();
    net.calibrate(&data.inputs).unwrap();
    let v = data.inputs.to_vec();
    let n = v.len() as f32;
    let mean = v.iter().sum::<f32>() / n;
    let std = (v.iter().map(|a| (a - mean).powi(2)).sum::<f32>() / n).sqrt();
    let a0 = net.blocks[0].layer.a_quant.as_ref().unwrap();
    assert!(a0.signed());
    assert!((a0.alpha_value().unwrap() - 3.0 * std).abs() < 1e-4 * std);
    assert!(!net.blocks[1].layer.a_quant.as_ref().unwrap().signed());
}

#[test]
fn named_params_are_unique_and_complete() {
    let net = Network::<f32>::build(&NetworkSpec::small_cnn([1, 8, 8], [2, 2, 2], 3), 0).unwrap();
    let p = net.named_params();
    let mut names: Vec<&str> = p.iter().map(|p| p.name.as_str()).collect();
    let n = names.len();
    names.sort_unstable();
    names.dedup();
    assert_eq!(names.len(), n);
    // 4 layers x (weight, w alpha, w bit, a alpha, a bit) + 3 bn x 4 + head bias
    assert_eq!(n, 4 * 5 + 3 * 4 + 1);
}

#[test]
fn weight_boundary_starts_at_max_abs_weight() {
    let net = Network::<f64>::build(&NetworkSpec::mlp(6, &[5], 3), 2).unwrap();
    for b in &net.blocks {
        let m = b.layer.weight.to_vec().iter().fold(0f64, |m, v| m.max(v.abs()));
        let q = b.layer.w_quant.as_ref().unwrap();
        assert!((q.alpha_value().unwrap() - m).abs() < 1e-12);
        assert!((q.bit_value() - 8.0).abs() < 1e-12);
    }
}

#[test]
fn deployed_bits_and_bops() {
    let mut net = Network::<f32>::build(&NetworkSpec::mlp(4, &[3], 2), 0).unwrap();
    net.freeze_bits();
    assert_eq!(net.deployed_bits(), vec![(8, 8), (8, 8)]);
    assert_eq!(net.total_bops(), (4 * 3 + 3 * 2) * 64);
    assert_eq!(net.bops_at(4), (4 * 3 + 3 * 2) * 16);
    assert_eq!(net.avg_deployed_bits(TensorRole::Weight), Some(8.0));
}

#[test]
fn sensitivity_pair_places_gain() {
    let p = constructed_sensitivity_pair::<f32>(0, false).unwrap();
    assert!(p.network.blocks[0].layer.input_gain.is_some());
    assert!(p.network.blocks[1].layer.input_gain.is_none());
    assert!(p.network.blocks[2].layer.w_quant.is_none());
    let s = constructed_sensitivity_pair::<f32>(0, true).unwrap();
    assert_eq!((s.sensitive, s.other), (1, 0));
    assert!(s.network.blocks[1].layer.input_gain.is_some());
}
