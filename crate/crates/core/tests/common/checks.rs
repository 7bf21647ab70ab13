//! Whole-property checks shared by the integration tests and the acceptance
//! runner. Each returns a one-line summary on success and the first
//! counterexample on failure.

use std::collections::BTreeSet;

use aecz_core::autoencoder::{build_autoencoder, train, InputShape, TrainSession};
use aecz_core::data::{generate_synthetic, window, AnomalySpec, LabeledSeries, MinMaxStats, SynthConfig, WindowConfig};
use aecz_core::detection::{best_f1, evaluate, EvalOptions};
use aecz_core::modelfile::ModelFile;
use aecz_core::nn::{Activation, Layer, LayerKind, LayerSpec};
use aecz_core::pruning::{argmax, lottery_search, select_mask, MaskSet, PruneConfig};
use aecz_core::quantization::{compute_linear_params, kmeans_1d, quantize_layer_nonlinear, quantize_linear, quantize_model, QuantSpec};
use aecz_core::rng::{rng_from_seed, Rng};
use aecz_core::{AutoencoderModel, Exec, Tensor, TrainConfig};
use rand::Rng as _;

use super::{act, brute_force_best_f1, brute_force_kmeans_sse, confusion, grad_close, layer_pre, to_f64};

pub type Check = Result<String, String>;

const H: f64 = 1e-3;
pub const GRAD_REL: f64 = 1e-3;
const GRAD_ABS_FLOOR: f64 = 1e-5;
pub const LINEAR_BITS: [u32; 4] = [4, 5, 8, 16];

fn random_layer(kind: LayerKind, rng: &mut Rng) -> Layer {
    let activation = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Identity };
    let c_in = rng.random_range(1..=3);
    let c_out = rng.random_range(1..=3);
    let mut layer = match kind {
        LayerKind::Dense => {
            let t = rng.random_range(1..=4);
            let spec = LayerSpec::dense(c_in * t, rng.random_range(1..=5), activation);
            Layer::init(spec, (c_in, t), None, rng).unwrap()
        }
        LayerKind::Conv1d => loop {
            let k = rng.random_range(1..=4);
            let stride = rng.random_range(1..=3);
            let padding = rng.random_range(0..=2);
            let t = rng.random_range(1..=9);
            let spec = LayerSpec::conv1d(c_in, c_out, k, stride, padding, activation);
            if let Ok(l) = Layer::init(spec, (c_in, t), None, rng) {
                break l;
            }
        },
        LayerKind::Conv1dTransposed => loop {
            let k = rng.random_range(1..=4);
            let stride = rng.random_range(1..=3);
            let padding = rng.random_range(0..=1);
            let output_padding = rng.random_range(0..stride);
            let t = rng.random_range(1..=6);
            let spec = LayerSpec::conv1d_transposed(c_in, c_out, k, stride, padding, output_padding, activation);
            if let Ok(l) = Layer::init(spec, (c_in, t), None, rng) {
                break l;
            }
        },
    };
    for b in layer.bias.data_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    layer
}

/// Scalar objective `sum_k g_k * act(pre_k)` evaluated by the oracle.
fn objective(layer: &Layer, w: &[f64], b: &[f64], x: &[f64], g: &[f64]) -> f64 {
    layer_pre(layer, w, b, x)
        .iter()
        .zip(g)
        .map(|(&p, &gk)| gk * act(layer.spec.activation, p))
        .sum()
}

/// Checks every weight, bias and input gradient of one layer; returns the
/// number of components compared.
fn check_layer(layer: &Layer, rng: &mut Rng) -> Result<usize, String> {
    let x: Vec<f32> = (0..layer.in_features()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g: Vec<f32> = (0..layer.out_features()).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut pre = vec![0.0; layer.out_features()];
    layer.forward_sample(&x, &mut pre);
    let mut post = pre.clone();
    layer.spec.activation.apply(&mut post);
    let mut grad_pre = g.clone();
    layer.spec.activation.backward(&pre, &post, &mut grad_pre);
    let mut gw = vec![0.0; layer.weight.len()];
    let mut gb = vec![0.0; layer.bias.len()];
    let mut gx = vec![0.0; x.len()];
    layer.backward_sample(&x, &grad_pre, &mut gw, &mut gb, &mut gx);

    let params = [to_f64(layer.weight.data()), to_f64(layer.bias.data()), to_f64(&x)];
    let gs = to_f64(&g);
    let mut compared = 0;
    for (which, (name, analytic)) in [("weight", &gw), ("bias", &gb), ("input", &gx)].into_iter().enumerate() {
        for (i, &a) in analytic.iter().enumerate() {
            let (mut plus, mut minus) = (params.clone(), params.clone());
            plus[which][i] += H;
            minus[which][i] -= H;
            let f = |p: &[Vec<f64>; 3]| objective(layer, &p[0], &p[1], &p[2], &gs);
            let numeric = (f(&plus) - f(&minus)) / (2.0 * H);
            if !grad_close(a as f64, numeric, GRAD_REL, GRAD_ABS_FLOOR) {
                return Err(format!("{:?} {name}[{i}]: analytic {a} vs numeric {numeric}", layer.spec));
            }
            compared += 1;
        }
    }
    Ok(compared)
}

/// Analytic against central-difference gradients over random layers.
pub fn layer_gradients(kind: LayerKind, instances: usize, seed: u64) -> Check {
    let mut rng = rng_from_seed(seed);
    let mut compared = 0;
    for _ in 0..instances {
        let layer = random_layer(kind, &mut rng);
        compared += check_layer(&layer, &mut rng)?;
    }
    Ok(format!("{kind:?}: {instances} instances, {compared} components within rel {GRAD_REL}"))
}

/// Half-step error for in-range weights, at most `2^bits` codes and
/// idempotence, for every layer of `model` at every width.
pub fn linear_bounds(model: &AutoencoderModel) -> Check {
    for (max, int_bits) in [(0.9f32, 0), (1.0, 0), (3.2, 2)] {
        let p = compute_linear_params(&[max, -max / 2.0], 8).map_err(|e| e.to_string())?;
        if p.int_bits != int_bits {
            return Err(format!("max |x| = {max}: int_bits {} instead of {int_bits}", p.int_bits));
        }
    }
    let mut worst = 0.0f64;
    let mut saturated = 0;
    for (l, layer) in model.layers().enumerate() {
        let w = layer.weight.data();
        for bits in LINEAR_BITS {
            let p = compute_linear_params(w, bits).map_err(|e| e.to_string())?;
            let half = p.scale() / 2.0;
            let mut codes = BTreeSet::new();
            for &x in w {
                let (q, code) = quantize_linear(x, &p);
                codes.insert(code);
                if p.in_range(x) {
                    let err = (x - q).abs() as f64;
                    if err > half {
                        return Err(format!("layer {l}, {bits} bits: |{x} - {q}| > {half}"));
                    }
                    worst = worst.max(err / half);
                } else {
                    saturated += 1;
                }
                let (q2, code2) = quantize_linear(q, &p);
                if q2.to_bits() != q.to_bits() || code2 != code {
                    return Err(format!("layer {l}, {bits} bits: {q} is not a fixed point"));
                }
            }
            if codes.len() as u64 > 1u64 << bits {
                return Err(format!("layer {l}, {bits} bits: {} distinct codes", codes.len()));
            }
        }
    }
    Ok(format!(
        "{} layers x {:?} bits: worst error {:.3} of a half step, {saturated} saturated weights, int_bits cases 0/0/2",
        model.num_layers(),
        LINEAR_BITS,
        worst
    ))
}

/// k-means SSE against the exhaustive optimum, codebook cardinality and zero
/// preservation.
pub fn kmeans_oracle(cases: usize, seed: u64) -> Check {
    let mut rng = rng_from_seed(seed);
    let (mut exact, mut local) = (0, Vec::new());
    for case in 0..cases {
        let n = rng.random_range(1..=12);
        let k = rng.random_range(1..=3);
        let values: Vec<f32> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let km = kmeans_1d(&values, k, case as u64).map_err(|e| e.to_string())?;
        let opt = brute_force_kmeans_sse(&to_f64(&values), k);
        if (km.sse - opt).abs() <= 1e-9 {
            exact += 1;
        } else if km.sse <= opt * 1.05 {
            local.push(format!("case {case}: {:.6} vs {opt:.6}", km.sse));
        } else {
            return Err(format!("case {case}: sse {} vs optimum {opt} ({values:?}, k={k})", km.sse));
        }
        if km.centroids.len() > k {
            return Err(format!("case {case}: {} centroids for k={k}", km.centroids.len()));
        }

        let omega = rng.random_range(1..=6);
        let w: Vec<f32> = (0..rng.random_range(1..=40))
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(-1.0..1.0) })
            .collect();
        let cb = quantize_layer_nonlinear(&w, omega, 8, case as u64).map_err(|e| e.to_string())?;
        let v = cb.values();
        let distinct: BTreeSet<u32> = v.iter().map(|x| x.to_bits()).collect();
        if distinct.len() > omega || cb.entries() > omega {
            return Err(format!("case {case}: {} values for omega {omega}", distinct.len()));
        }
        if w.iter().zip(&v).any(|(a, b)| *a == 0.0 && b.to_bits() != 0) {
            return Err(format!("case {case}: a zero weight was moved"));
        }
    }
    let mut detail = format!("{cases} cases: {exact} exact, {} within 5%", local.len());
    if !local.is_empty() {
        detail.push_str(&format!(" ({})", local.join("; ")));
    }
    Ok(detail)
}

/// Best F1 against the exhaustive sweep, plus confusion-count identities.
pub fn detection_oracle(cases: usize, seed: u64) -> Check {
    let mut rng = rng_from_seed(seed);
    for case in 0..cases {
        let n = rng.random_range(1..=20);
        // coarse scores force ties
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 * 0.5).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
        let r = best_f1(&scores, &labels, EvalOptions::default()).map_err(|e| e.to_string())?;
        let (f1, tau) = brute_force_best_f1(&scores, &labels);
        if (r.f1 - f1).abs() > 1e-12 || r.threshold != tau {
            return Err(format!("case {case}: f1 {} at {} vs {f1} at {tau}", r.f1, r.threshold));
        }
        if (r.tp, r.fp, r.fn_, r.tn) != confusion(&scores, &labels, tau) {
            return Err(format!("case {case}: confusion counts differ"));
        }
        if r.tp + r.fp + r.fn_ + r.tn != n {
            return Err(format!("case {case}: counts do not sum to {n}"));
        }
    }
    Ok(format!("{cases} series of length <= 20 match the exhaustive sweep"))
}

/// Small trained model plus data for the pruning checks.
pub struct PruneFixture {
    pub model: AutoencoderModel,
    pub windows: Tensor,
    pub val: LabeledSeries,
    pub wcfg: WindowConfig,
}

pub fn prune_fixture() -> PruneFixture {
    let anomalies = AnomalySpec {
        spikes: 2,
        level_shifts: 1,
        noise_bursts: 1,
        ..AnomalySpec::default()
    };
    let s = generate_synthetic(&SynthConfig {
        channels: 3,
        length: 1500,
        test_anomalies: anomalies.clone(),
        val_anomalies: anomalies,
        ..SynthConfig::default()
    })
    .unwrap();
    let stats = MinMaxStats::fit(&s.train);
    let wcfg = WindowConfig { length: 8, ..WindowConfig::default() };
    let windows = window(&stats.apply(&s.train).unwrap(), &wcfg).unwrap().data;
    let enc = [
        LayerSpec::conv1d(3, 6, 3, 2, 1, Activation::Relu),
        LayerSpec::dense(24, 6, Activation::Relu),
    ];
    let mut model = build_autoencoder(InputShape { channels: 3, length: 8 }, &enc, 6, 1).unwrap();
    train(&mut model, &windows, &TrainConfig { epochs: 2, seed: 1, ..TrainConfig::default() }, None).unwrap();
    PruneFixture {
        model,
        windows,
        val: stats.apply(&s.val).unwrap(),
        wcfg,
    }
}

pub fn prune_config(population: usize, lo: f64, hi: f64, layers: usize) -> PruneConfig {
    PruneConfig {
        population_size: population,
        density_min: vec![lo; layers],
        density_max: vec![hi; layers],
        short_epochs: 1,
        final_epochs: 2,
        train: TrainConfig { batches_per_epoch: Some(8), ..TrainConfig::default() },
        eval: EvalOptions::default(),
        seed: 5,
    }
}

/// Pruned weights read exactly zero after every masked epoch.
pub fn zero_conservation(f: &PruneFixture, epochs: usize) -> Check {
    let mut model = f.model.clone();
    let masks = MaskSet::from_densities(&model, &[0.3, 0.5, 0.7, 0.2]).map_err(|e| e.to_string())?;
    masks.apply(&mut model).map_err(|e| e.to_string())?;
    let mut session = TrainSession::new(&model, &TrainConfig { seed: 3, ..TrainConfig::default() }).unwrap();
    let mut checked = 0;
    for epoch in 0..epochs {
        session.run(&mut model, &f.windows, 1, Some(&masks)).map_err(|e| e.to_string())?;
        for (l, (m, layer)) in masks.masks.iter().zip(model.layers()).enumerate() {
            for (i, (&keep, &w)) in m.keep.iter().zip(layer.weight.data()).enumerate() {
                if !keep {
                    if w.to_bits() != 0 {
                        return Err(format!("epoch {epoch}, layer {l}, weight {i} = {w}"));
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{epochs} epochs, {checked} pruned-weight readings all +0.0"))
}

/// Achieved density within one weight of the target, and masks nested as
/// the target grows.
pub fn density_and_monotonicity(cases: usize, seed: u64) -> Check {
    let mut rng = rng_from_seed(seed);
    for case in 0..cases {
        let n = rng.random_range(1..=300);
        // coarse weights force magnitude ties
        let w = Tensor::from_vec((0..n).map(|_| rng.random_range(-8..=8) as f32 / 4.0).collect());
        let (a, b) = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = select_mask(&w, lo).map_err(|e| e.to_string())?;
        let large = select_mask(&w, hi).map_err(|e| e.to_string())?;
        for (d, m) in [(lo, &small), (hi, &large)] {
            if (m.density() - d).abs() > 1.0 / n as f64 {
                return Err(format!("case {case}: density {} for target {d} over {n} weights", m.density()));
            }
        }
        if small.keep.iter().zip(&large.keep).any(|(&s, &l)| s && !l) {
            return Err(format!("case {case}: mask at {lo} not contained in mask at {hi}"));
        }
    }
    Ok(format!("{cases} random layers: |achieved - target| <= 1/n, masks nested"))
}

/// The selected candidate is the first one with the highest F1.
pub fn argmax_selection(f: &PruneFixture, population: usize) -> Check {
    let cfg = prune_config(population, 0.2, 0.8, f.model.num_layers());
    let (pruned, report) =
        lottery_search(&f.model, &f.windows, &f.val, &f.wcfg, &cfg, Exec::Parallel).map_err(|e| e.to_string())?;
    let f1s: Vec<f64> = report.candidates.iter().map(|c| c.f1).collect();
    if argmax(&f1s) != Some(report.selected) {
        return Err(format!("selected {} for F1s {f1s:?}", report.selected));
    }
    if pruned.masks.achieved_densities() != report.candidates[report.selected].achieved_density {
        return Err("returned masks differ from the selected candidate".into());
    }
    if argmax(&[0.1, 0.5, 0.5, 0.2]) != Some(1) {
        return Err("ties do not go to the lowest index".into());
    }
    Ok(format!("{population} candidates, selected {} with F1 {:.4}", report.selected, f1s[report.selected]))
}

/// One full-density candidate equals plain retraining with its seed.
pub fn single_candidate_is_retraining(f: &PruneFixture) -> Check {
    let cfg = prune_config(1, 1.0, 1.0, f.model.num_layers());
    let (pruned, _) =
        lottery_search(&f.model, &f.windows, &f.val, &f.wcfg, &cfg, Exec::Parallel).map_err(|e| e.to_string())?;
    let mut plain = f.model.clone();
    let tc = TrainConfig {
        epochs: cfg.short_epochs + cfg.final_epochs,
        seed: cfg.candidate_train_seed(0),
        ..cfg.train.clone()
    };
    train(&mut plain, &f.windows, &tc, None).map_err(|e| e.to_string())?;
    if pruned.model != plain {
        return Err("search output differs from plain retraining".into());
    }
    Ok(format!("bit-identical to {} epochs of plain retraining", tc.epochs))
}

/// save -> load -> save is byte-identical for every stage, and reloaded
/// models score bit-identically.
pub fn serialization(
    baseline: &AutoencoderModel,
    calibration: &Tensor,
    test: &LabeledSeries,
    wcfg: &WindowConfig,
) -> Check {
    let err = |e: aecz_core::Error| e.to_string();
    let layers = baseline.num_layers();
    let densities: Vec<f64> = (0..layers).map(|l| 0.3 + 0.5 * l as f64 / layers as f64).collect();
    let masks = MaskSet::from_densities(baseline, &densities).map_err(err)?;
    let mut pruned = baseline.clone();
    masks.apply(&mut pruned).map_err(err)?;

    let mut files = vec![
        ("baseline".to_string(), ModelFile::baseline(baseline.clone())),
        ("pruned".to_string(), ModelFile::pruned(pruned.clone(), masks.clone()).map_err(err)?),
    ];
    let mut specs: Vec<QuantSpec> = LINEAR_BITS.iter().map(|&b| QuantSpec::linear(b)).collect();
    specs.extend([QuantSpec::nonlinear(4), QuantSpec::nonlinear(8)]);
    for spec in specs {
        for (name, model, m) in [("baseline", baseline, None), ("pruned", &pruned, Some(&masks))] {
            let q = quantize_model(model, m, &spec, calibration, Exec::Parallel).map_err(err)?;
            files.push((
                format!("{name}+{}{}", spec.scheme.as_str(), spec.bits),
                ModelFile::quantized(q).map_err(err)?,
            ));
        }
    }
    for (name, file) in &files {
        let bytes = file.to_bytes().map_err(err)?;
        let loaded = ModelFile::from_bytes(&bytes).map_err(err)?;
        if loaded.to_bytes().map_err(err)? != bytes {
            return Err(format!("{name}: second save differs"));
        }
        let opts = EvalOptions::default();
        let (s1, r1) = evaluate(&file.model, test, wcfg, opts, Exec::Parallel).map_err(err)?;
        let (s2, r2) = evaluate(&loaded.model, test, wcfg, opts, Exec::Sequential).map_err(err)?;
        if s1.iter().zip(&s2).any(|(a, b)| a.to_bits() != b.to_bits()) || r1.f1.to_bits() != r2.f1.to_bits() {
            return Err(format!("{name}: reloaded model scores differently"));
        }
    }
    Ok(format!("{} files (baseline, pruned, linear {:?}, nonlinear 4/8) byte-stable, F1 bit-identical", files.len(), LINEAR_BITS))
}
