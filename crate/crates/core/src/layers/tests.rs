use super::*;
use crate::autodiff::{fd_check, seed_inputs, softplus};
use crate::basis::{Activation, BsplineGrid};
use crate::geometry::{neural_metric, warp_and_volume, METRIC_FLOOR};
use rand::SeedableRng;

fn ekan(grid: usize, order: usize, act: Activation) -> LayerKind {
    LayerKind::EfficientKan { grid: BsplineGrid::new(grid, order), base_activation: act }
}

fn rbf(k: usize, m: usize, gamma: f64) -> LayerKind {
    LayerKind::LmKan { basis: BasisFamily::GaussianRbf { gamma }, k, metric_hidden: m }
}

fn random_params(n: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

#[test]
fn matched_capacity_counts() {
    let mlp = ModelSpec::stack(&[1, 140, 140, 1], LayerKind::Linear);
    assert_eq!(count_params(&mlp).unwrap(), 20161);
    let ek = ModelSpec::uniform(&[1, 57, 57, 1], ekan(3, 1, Activation::Silu));
    assert_eq!(count_params(&ek).unwrap(), 20178);
    let nn = ModelSpec::stack(&[1, 38, 38, 1], LayerKind::NnMetric { k: 12, metric_hidden: 8 });
    assert_eq!(count_params(&nn).unwrap(), 19734);
    let wav = ModelSpec::stack(
        &[1, 38, 38, 1],
        LayerKind::LmKan { basis: BasisFamily::MexicanHat, k: 12, metric_hidden: 8 },
    );
    assert_eq!(count_params(&wav).unwrap(), 19734);
    assert_eq!(count_params(&ModelSpec::stack(&[1, 38, 38, 1], rbf(12, 8, 2.0))).unwrap(), 19734);
    let gamma = ModelSpec::stack(&[1, 90, 90, 1], LayerKind::Gamma { k: 12 });
    assert_eq!(count_params(&gamma).unwrap(), 20200);
}

#[test]
fn case_study_counts() {
    let pikan = ModelSpec::uniform(&[2, 12, 8, 12, 1], ekan(5, 3, Activation::Sin));
    assert_eq!(count_params(&pikan).unwrap(), 2280);
    assert_eq!(count_params(&ModelSpec::uniform(&[2, 8, 4, 1], ekan(5, 3, Activation::Sin))).unwrap(), 520);
    assert_eq!(count_params(&ModelSpec::uniform(&[2, 12, 12, 2], ekan(5, 3, Activation::Silu))).unwrap(), 1920);
    assert_eq!(count_params(&ModelSpec::stack(&[2, 5, 5, 1], rbf(7, 9, 2.0))).unwrap(), 700);
    assert_eq!(count_params(&ModelSpec::stack(&[2, 8, 8, 1], rbf(8, 9, 2.5))).unwrap(), 1229);
    assert_eq!(count_params(&ModelSpec::stack(&[1, 4, 4, 4, 3], rbf(5, 9, 0.5))).unwrap(), 777);
    let fourier = LayerKind::LmKan {
        basis: BasisFamily::Fourier { k: 16, omega: std::f64::consts::PI },
        k: 16,
        metric_hidden: 18,
    };
    assert_eq!(count_params(&ModelSpec::stack(&[2, 4, 4, 2], fourier)).unwrap(), 1928);
    assert_eq!(count_params(&ModelSpec::new(vec![LayerSpec::linear(38, 1)])).unwrap(), 39);
}

#[test]
fn store_slices_partition_the_vector() {
    let spec = ModelSpec::stack(&[2, 5, 5, 1], rbf(7, 9, 2.0));
    let model = Model::new(spec.clone()).unwrap();
    let store = model.init_params(0);
    assert_eq!(store.len(), count_params(&spec).unwrap());
    let mut next = 0;
    for s in &store.slices {
        assert_eq!(s.offset, next);
        next += s.len;
    }
    assert_eq!(next, store.len());
    assert!(store.slice("layer0.metric").is_some());
}

#[test]
fn dimension_mismatch_is_a_spec_error() {
    let spec = ModelSpec::new(vec![LayerSpec::linear(2, 3), LayerSpec::linear(4, 1)]);
    assert!(matches!(count_params(&spec), Err(Error::Spec(_))));
    let l = LayerSpec::linear(2, 1);
    let h = seed_inputs(&[0.5]).unwrap();
    assert!(matches!(layer_forward(&l, &[0.0; 3], &h), Err(Error::Spec(_))));
}

#[test]
fn zero_mixing_outputs_bias() {
    let spec = LayerSpec { d_in: 2, d_out: 3, kind: rbf(4, 5, 2.0) };
    let model = Model::new(ModelSpec::new(vec![spec])).unwrap();
    let mut store = model.init_params(3);
    store.slice_mut("layer0.mix_weight").unwrap().fill(0.0);
    store.slice_mut("layer0.mix_bias").unwrap().copy_from_slice(&[0.25, -1.5, 2.0]);
    let out = layer_forward(&spec, &store.values, &seed_inputs(&[0.3, -0.8]).unwrap()).unwrap();
    assert_eq!(out.iter().map(|j| j.value).collect::<Vec<_>>(), vec![0.25, -1.5, 2.0]);
    assert!(out.iter().all(|j| j.grad == [0.0, 0.0]));
}

#[test]
fn nnmetric_with_zero_metric_matches_hand_computation() {
    let spec = LayerSpec { d_in: 2, d_out: 1, kind: LayerKind::NnMetric { k: 1, metric_hidden: 3 } };
    let model = Model::new(ModelSpec::new(vec![spec])).unwrap();
    let mut store = model.zero_params();
    store.slice_mut("layer0.atom_scale_logit").unwrap().fill(softplus_inv(1.0));
    store.slice_mut("layer0.mix_weight").unwrap().copy_from_slice(&[0.7, -0.4, 0.9]);
    store.slice_mut("layer0.mix_bias").unwrap()[0] = 0.1;
    let h = [0.6, -0.3];
    let out = layer_forward(&spec, &store.values, &seed_inputs(&h).unwrap()).unwrap()[0].value;

    let g = std::f64::consts::LN_2 + METRIC_FLOOR;
    let s = softplus(softplus_inv(1.0));
    let hat = |r: f64| (1.0 - r * r) * (-r * r / 2.0).exp();
    let xi = [h[0] * g.sqrt(), h[1] * g.sqrt()];
    let v = 2.0 * g.ln();
    let expect = 0.1 + 0.7 * hat(xi[0] / s) - 0.4 * hat(xi[1] / s) + 0.9 * v;
    assert!((out - expect).abs() < 1e-14, "{out} vs {expect}");
}

#[test]
fn gamma_identity_metric_reduces_to_affine_geo() {
    let spec = LayerSpec { d_in: 2, d_out: 1, kind: LayerKind::Gamma { k: 4 } };
    let model = Model::new(ModelSpec::new(vec![spec])).unwrap();
    let mut store = model.init_params(1);
    store.slice_mut("layer0.alpha").unwrap().copy_from_slice(&[1.3, -0.2]);
    store.slice_mut("layer0.beta").unwrap().copy_from_slice(&[5.0, 7.0]);
    store.slice_mut("layer0.delta").unwrap().copy_from_slice(&[0.4, 0.6]);
    // Only the geo columns of the mixing matrix are active.
    store.slice_mut("layer0.mix_weight").unwrap().copy_from_slice(&[0.0, 0.0, 1.0, 1.0]);
    let h = [0.5, -0.25];
    let out = layer_forward(&spec, &store.values, &seed_inputs(&h).unwrap()).unwrap()[0].value;
    let expect = (1.3 * h[0] + 0.4) + (-0.2 * h[1] + 0.6);
    assert!((out - expect).abs() < 1e-15);
}

#[test]
fn ekan_one_hot_spline_at_knot() {
    let spec = LayerSpec { d_in: 1, d_out: 1, kind: ekan(3, 1, Activation::Silu) };
    let model = Model::new(ModelSpec::new(vec![spec])).unwrap();
    let mut store = model.zero_params();
    store.slice_mut("layer0.base_weight").unwrap()[0] = 0.5;
    store.slice_mut("layer0.spline_coeff").unwrap()[2] = 1.0;
    store.slice_mut("layer0.spline_scaler").unwrap()[0] = 1.7;
    let x = 1.0 / 3.0;
    let out = layer_forward(&spec, &store.values, &seed_inputs(&[x]).unwrap()).unwrap()[0].value;
    let knots = BsplineGrid::new(3, 1).knots();
    let basis = crate::basis::bspline_bases(x, &BsplineGrid::new(3, 1))[2];
    assert!((knots[3] - x).abs() < 1e-15);
    assert!((basis - 1.0).abs() < 1e-12);
    let silu = x / (1.0 + (-x).exp());
    assert!((out - (1.7 * basis + 0.5 * silu)).abs() < 1e-12);
}

/// LM-KAN layer recomputed with scalar jets and the geometry primitives.
#[test]
fn lmkan_tape_matches_scalar_jet_composition() {
    let (d_in, d_out, k, m) = (2, 3, 4, 5);
    for basis in [BasisFamily::GaussianRbf { gamma: 2.0 }, BasisFamily::MexicanHat] {
        let spec = LayerSpec { d_in, d_out, kind: LayerKind::LmKan { basis, k, metric_hidden: m } };
        let model = Model::new(ModelSpec::new(vec![spec])).unwrap();
        let params = random_params(model.num_params(), 17, 0.8);
        let layout = &model.layers[0];
        let h = seed_inputs(&[0.35, -0.6]).unwrap();

        let net = MetricNet { offset: layout.at("metric"), d: d_in, m };
        let g = neural_metric(&params, &net, &h).unwrap();
        let (xi, v) = warp_and_volume(&h, &g).unwrap();
        let mut feats = Vec::new();
        for i in 0..d_in {
            for j in 0..k {
                let c = params[layout.at("atom_center") + i * k + j];
                let s = softplus(params[layout.at("atom_scale_logit") + i * k + j]);
                let r = (xi[i] - c) / s;
                feats.push(r.apply(basis.atom_primitive().unwrap()));
            }
        }
        feats.push(v);
        let nf = feats.len();
        let got = layer_forward(&spec, &params, &h).unwrap();
        for o in 0..d_out {
            let mut y = Jet::constant(params[layout.at("mix_bias") + o], 2);
            for (f, feat) in feats.iter().enumerate() {
                y = y + *feat * params[layout.at("mix_weight") + o * nf + f];
            }
            assert!((got[o].value - y.value).abs() < 1e-13);
            for a in 0..2 {
                assert!((got[o].grad[a] - y.grad[a]).abs() < 1e-12);
                for b in 0..2 {
                    assert!((got[o].hess[a][b] - y.hess[a][b]).abs() < 1e-11);
                }
            }
        }
    }
}

#[test]
fn identity_metric_leaves_wavelet_atoms_unwarped() {
    let (k, m) = (3, 4);
    let spec = LayerSpec { d_in: 2, d_out: 2, kind: LayerKind::LmKan { basis: BasisFamily::MexicanHat, k, metric_hidden: m } };
    let model = Model::new(ModelSpec::new(vec![spec])).unwrap();
    let mut store = model.init_params(4);
    let net = MetricNet { offset: model.layers[0].at("metric"), d: 2, m };
    // Zero final layer plus this bias pins g to 1.
    store.values[net.b3()..net.b3() + 2].fill(softplus_inv(1.0 - METRIC_FLOOR));
    let x = [0.45, -0.7];
    let got = layer_forward(&spec, &store.values, &seed_inputs(&x).unwrap()).unwrap();
    let l = &model.layers[0];
    for o in 0..2 {
        let mut y = store.values[l.at("mix_bias") + o];
        for i in 0..2 {
            for j in 0..k {
                let c = store.values[l.at("atom_center") + i * k + j];
                let s = softplus(store.values[l.at("atom_scale_logit") + i * k + j]);
                let r = (x[i] - c) / s;
                y += store.values[l.at("mix_weight") + o * (2 * k + 1) + i * k + j] * (1.0 - r * r) * (-r * r / 2.0).exp();
            }
        }
        assert!((got[o].value - y).abs() < 1e-12);
    }
}

#[test]
fn init_is_deterministic_and_near_identity() {
    let spec = ModelSpec::stack(&[2, 5, 5, 1], rbf(7, 9, 2.0));
    let model = Model::new(spec).unwrap();
    let a = model.init_params(42);
    assert_eq!(a, model.init_params(42));
    assert_ne!(a, model.init_params(43));
    let net = MetricNet { offset: model.layers[0].at("metric"), d: 2, m: 9 };
    let g = neural_metric(&a.values, &net, &seed_inputs(&[0.3, 0.9]).unwrap()).unwrap();
    for gi in g {
        assert!((gi.value - (std::f64::consts::LN_2 + METRIC_FLOOR)).abs() < 1e-15);
    }
    let scales = a.slice("layer0.atom_scale_logit").unwrap();
    assert!(scales.iter().all(|&l| (softplus(l) - 2.0 / 7.0).abs() < 1e-12));
}

#[test]
fn gamma_init_geo_is_identity() {
    let spec = ModelSpec::stack(&[1, 6, 1], LayerKind::Gamma { k: 5 });
    let store = init_params(&spec, 0).unwrap();
    assert!(store.slice("layer0.alpha").unwrap().iter().all(|&v| v == 1.0));
    assert!(store.slice("layer0.beta").unwrap().iter().all(|&v| v == 0.0));
    assert!(store.slice("layer0.delta").unwrap().iter().all(|&v| v == 0.0));
    let c = &store.slice("layer0.log_metric").unwrap()[..5];
    assert!(c.iter().all(|&v| v == 0.0));
}

#[test]
fn all_zero_params_give_zero_output() {
    for spec in [
        ModelSpec::stack(&[2, 5, 5, 1], rbf(7, 9, 2.0)),
        ModelSpec::stack(&[1, 6, 1], LayerKind::Gamma { k: 5 }),
        ModelSpec::stack(&[1, 4, 4, 1], LayerKind::Linear),
    ] {
        let model = Model::new(spec.clone()).unwrap();
        let zero = model.zero_params();
        let x = seed_inputs(&vec![0.3; spec.input_dim()]).unwrap();
        assert_eq!(model_forward(&spec, &zero, &x).unwrap()[0].value, 0.0);
    }
}

#[test]
fn readout_only_model_is_affine() {
    let spec = ModelSpec::new(vec![LayerSpec::linear(2, 1)]);
    let p = [2.0, -3.0, 0.5];
    let y = model_forward(&spec, &ParamStore { values: p.to_vec(), slices: vec![] }, &seed_inputs(&[1.0, 2.0]).unwrap())
        .unwrap();
    assert_eq!(y[0].value, 2.0 - 6.0 + 0.5);
    assert_eq!(y[0].grad, [2.0, -3.0]);
}

#[test]
fn input_domain_rescales_derivatives() {
    let spec = ModelSpec::new(vec![LayerSpec::linear(1, 1)]).with_input_domain(vec![[0.0, 4.0]]);
    let store = ParamStore { values: vec![1.0, 0.0], slices: vec![] };
    let y = model_forward(&spec, &store, &seed_inputs(&[3.0]).unwrap()).unwrap();
    assert_eq!(y[0].value, 0.5);
    assert_eq!(y[0].grad[0], 0.5);
}

#[test]
fn jet_gradient_matches_finite_differences() {
    let spec = ModelSpec::stack(&[2, 4, 4, 1], rbf(5, 6, 2.0));
    let model = Model::new(spec).unwrap();
    let params = random_params(model.num_params(), 8, 0.7);
    let x = [0.2, -0.45];
    let y = model.forward_jets(&params, &seed_inputs(&x).unwrap()).unwrap()[0];
    let f = |a: f64, b: f64| model.eval_batch(&params, &[a, b]).unwrap()[0];
    let h = 1e-5;
    let fx = (f(x[0] + h, x[1]) - f(x[0] - h, x[1])) / (2.0 * h);
    let ft = (f(x[0], x[1] + h) - f(x[0], x[1] - h)) / (2.0 * h);
    assert!((y.grad[0] - fx).abs() <= 1e-5 * fx.abs().max(1.0));
    assert!((y.grad[1] - ft).abs() <= 1e-5 * ft.abs().max(1.0));
    let h2 = 1e-4;
    let fxx = (f(x[0] + h2, x[1]) - 2.0 * f(x[0], x[1]) + f(x[0] - h2, x[1])) / (h2 * h2);
    assert!((y.hess[0][0] - fxx).abs() <= 1e-4 * fxx.abs().max(1.0));
}

fn every_kind() -> Vec<(&'static str, ModelSpec)> {
    vec![
        ("mlp", ModelSpec::stack(&[2, 4, 3, 1], LayerKind::Linear)),
        ("efficient_kan", ModelSpec::uniform(&[2, 3, 2], ekan(4, 3, Activation::Sin))),
        ("wav_kan", ModelSpec::uniform(&[2, 3, 2], LayerKind::WavKan)),
        ("nn_metric", ModelSpec::stack(&[2, 3, 1], LayerKind::NnMetric { k: 3, metric_hidden: 4 })),
        ("gamma", ModelSpec::stack(&[2, 3, 1], LayerKind::Gamma { k: 4 })),
        ("lmkan_rbf", ModelSpec::stack(&[2, 3, 1], rbf(3, 4, 2.0))),
        ("lmkan_wav", ModelSpec::stack(&[2, 3, 1], LayerKind::LmKan { basis: BasisFamily::MexicanHat, k: 3, metric_hidden: 4 })),
        (
            "lmkan_fourier",
            ModelSpec::stack(&[2, 3, 2], LayerKind::LmKan { basis: BasisFamily::Fourier { k: 3, omega: 2.0 }, k: 3, metric_hidden: 4 }),
        ),
    ]
}

/// Parameter gradients through value, gradient and Hessian channels.
#[test]
fn parameter_gradients_for_every_kind() {
    let pts = [0.3, -0.7, 0.55, 0.1, 0.8, -0.2];
    for (name, spec) in every_kind() {
        let model = Model::new(spec).unwrap();
        let mut p0 = model.init_params(11).values;
        for (v, r) in p0.iter_mut().zip(random_params(model.num_params(), 12, 0.2)) {
            *v += r;
        }
        let loss = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut t = Tape::new(p);
            let x = t.input(&pts, 2, Channels::D2)?;
            let y = model.forward(&mut t, x);
            let u = t.row(y, 0);
            let uxx = t.channel(u, Channels::D2.hess(0, 0));
            let ut = t.channel(u, Channels::D2.grad(1));
            let uxt = t.channel(u, Channels::D2.hess(0, 1));
            let v = t.channel(u, 0);
            let r = t.add(uxx, ut);
            let r = t.add(r, uxt);
            let r = t.add(r, v);
            let l = t.sum_squares(r, 1.0 / 3.0);
            Ok((t.scalar(l), t.gradient(l)?.values))
        };
        let err = fd_check(loss, &p0, 1e-6).unwrap();
        assert!(err <= 1e-5, "{name}: relative error {err}");
    }
}

#[test]
fn jets_stay_finite_on_random_inputs() {
    let spec = ModelSpec::stack(&[2, 5, 5, 1], rbf(7, 9, 2.0));
    let model = Model::new(spec).unwrap();
    let params = model.init_params(2).values;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let n = 10_000;
    let coords: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut t = Tape::new(&params);
    let x = t.input(&coords, 2, Channels::D2).unwrap();
    let y = model.forward(&mut t, x);
    assert!(t.value(y).iter().all(|v| v.is_finite()));
}

#[test]
fn model_spec_json_round_trip() {
    for (_, spec) in every_kind() {
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ModelSpec>(&s).unwrap(), spec);
    }
}
