mod common;

use aecz_core::autoencoder::{build_autoencoder, InputShape};
use aecz_core::nn::{Activation, LayerSpec};
use aecz_core::pruning::MaskSet;
use aecz_core::quantization::*;
use aecz_core::rng::rng_from_seed;
use aecz_core::{Exec, Tensor};
use common::checks;
use proptest::prelude::*;
use rand::Rng as _;

#[test]
fn int_bits_unit_cases() {
    for (max, int_bits) in [(0.9f32, 0), (1.0, 0), (3.2, 2), (5.0, 3)] {
        let p = compute_linear_params(&[max, -max / 2.0], 8).unwrap();
        assert_eq!(p.int_bits, int_bits, "max {max}");
        assert_eq!(p.frac_bits, 8 - int_bits - 1);
    }
    assert_eq!(compute_linear_params(&[3.2], 8).unwrap().scale(), 0.03125);
}

#[test]
fn kmeans_matches_exhaustive_partition() {
    let detail = checks::kmeans_oracle(1000, 21).unwrap();
    println!("{detail}");
}

#[test]
fn linear_bounds_on_every_layer() {
    let enc = [
        LayerSpec::conv1d(3, 8, 3, 2, 1, Activation::Relu),
        LayerSpec::dense(32, 6, Activation::Relu),
    ];
    let mut model = build_autoencoder(InputShape { channels: 3, length: 8 }, &enc, 6, 4).unwrap();
    // widen the range so several int_bits settings are exercised
    for (l, layer) in model.layers_mut().enumerate() {
        for w in layer.weight.data_mut() {
            *w *= (1 << l) as f32;
        }
    }
    checks::linear_bounds(&model).unwrap();
}

#[test]
fn nonlinear_keeps_zeros_and_cardinality() {
    let mut rng = rng_from_seed(5);
    for case in 0..300u64 {
        let n = rng.random_range(1..=40);
        let omega = rng.random_range(1..=6);
        let w: Vec<f32> = (0..n)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(-1.0..1.0) })
            .collect();
        let cb = quantize_layer_nonlinear(&w, omega, 8, case).unwrap();
        let v = cb.values();
        let mut distinct: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        assert!(distinct.len() <= omega);
        assert!(cb.entries() <= omega);
        for (a, b) in w.iter().zip(&v) {
            if *a == 0.0 {
                assert_eq!(b.to_bits(), 0);
            }
        }
        let table = cb.centroids();
        for c in &table {
            assert_eq!(cb.params.quantize(*c), *c, "centroid off the psi-bit grid");
        }
    }
}

#[test]
fn quantized_model_keeps_mask_zeros() {
    let shape = InputShape { channels: 3, length: 8 };
    let enc = [
        LayerSpec::conv1d(3, 6, 3, 2, 1, Activation::Relu),
        LayerSpec::dense(24, 6, Activation::Relu),
    ];
    let mut model = build_autoencoder(shape, &enc, 6, 2).unwrap();
    let masks = MaskSet::from_densities(&model, &[0.3, 0.6, 0.5, 0.9]).unwrap();
    masks.apply(&mut model).unwrap();
    let mut rng = rng_from_seed(1);
    let calib = Tensor::new(vec![4, 3, 8], (0..96).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    for spec in [QuantSpec::linear(4), QuantSpec::linear(16), QuantSpec::nonlinear(4), QuantSpec::nonlinear(2)] {
        let q = quantize_model(&model, Some(&masks), &spec, &calib, Exec::Sequential).unwrap();
        let d = dequantize(&q).unwrap();
        for (m, l) in masks.masks.iter().zip(d.layers()) {
            for (&keep, &w) in m.keep.iter().zip(l.weight.data()) {
                if !keep {
                    assert_eq!(w.to_bits(), 0);
                }
            }
        }
    }
}

#[test]
fn quantization_is_independent_of_exec() {
    let shape = InputShape { channels: 2, length: 8 };
    let model = build_autoencoder(shape, &[LayerSpec::conv1d(2, 4, 3, 1, 1, Activation::Relu)], 32, 9).unwrap();
    let calib = Tensor::filled(vec![5, 2, 8], 0.5);
    let spec = QuantSpec::nonlinear(3);
    let a = quantize_model(&model, None, &spec, &calib, Exec::Sequential).unwrap();
    let b = quantize_model(&model, None, &spec, &calib, Exec::Parallel).unwrap();
    assert_eq!(a, b);
}

fn weights() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(prop_oneof![Just(0.0f32), -4.0f32..4.0], 1..64)
}

proptest! {
    #[test]
    fn linear_error_within_half_step(w in weights(), bits in prop::sample::select(vec![4u32, 5, 8, 16])) {
        let p = compute_linear_params(&w, bits).unwrap();
        let mut distinct = std::collections::BTreeSet::new();
        for &x in &w {
            let (q, code) = quantize_linear(x, &p);
            distinct.insert(code);
            if p.in_range(x) {
                prop_assert!(((x - q).abs() as f64) <= p.scale() / 2.0);
            }
            if x == 0.0 {
                prop_assert_eq!(code, 0);
            }
        }
        prop_assert!(distinct.len() as u64 <= 1u64 << bits);
    }

    #[test]
    fn linear_is_idempotent_on_the_lattice(w in weights(), bits in prop::sample::select(vec![4u32, 5, 8, 16])) {
        let p = compute_linear_params(&w, bits).unwrap();
        for &x in &w {
            let (q, code) = quantize_linear(x, &p);
            let (q2, code2) = quantize_linear(q, &p);
            prop_assert_eq!(q.to_bits(), q2.to_bits());
            prop_assert_eq!(code, code2);
        }
    }

    #[test]
    fn nonlinear_cardinality(w in weights(), omega in 1usize..8, psi in 4u32..16) {
        let cb = quantize_layer_nonlinear(&w, omega, psi, 0).unwrap();
        let mut distinct: Vec<u32> = cb.values().iter().map(|x| x.to_bits()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert!(distinct.len() <= omega);
        prop_assert_eq!(cb.indices.len(), w.len());
    }
}
