use iqsei::dataset::Target;
use iqsei::nn::{
    load_checkpoint, rmsprop_step, save_checkpoint, train, Activation, LayerSpec, Network,
    NetworkConfig, NetworkModel, RmsProp, Shape3, Tensor, TrainConfig,
};
use iqsei::seed;
use iqsei::signal::{IqFrame, ImpairmentParams, ModulationScheme};
use num_complex::Complex32;
use rand::Rng;

fn dense(units: usize, activation: Activation) -> LayerSpec {
    LayerSpec::Dense { units, activation }
}

fn conv(filters: usize, kernel: [usize; 2], activation: Activation) -> LayerSpec {
    LayerSpec::Conv2d {
        filters,
        kernel,
        activation,
    }
}

fn config(input: Shape3, layers: Vec<LayerSpec>) -> NetworkConfig {
    NetworkConfig::new(input, layers)
}

fn random_input(shape: Shape3, batch: usize, seed_: u64) -> Tensor<f64> {
    let mut rng = seed::rng(seed_);
    let data = (0..batch * shape.len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::new(vec![batch, shape.channels, shape.height, shape.width], data).unwrap()
}

/// Every layer kind, small enough for an exhaustive finite-difference sweep.
fn mixed_config() -> NetworkConfig {
    config(
        Shape3::iq(12),
        vec![
            conv(3, [1, 3], Activation::Relu),
            conv(2, [2, 2], Activation::Linear),
            LayerSpec::MaxPool { size: [1, 2] },
            conv(2, [1, 2], Activation::Relu),
            LayerSpec::Flatten,
            dense(5, Activation::Relu),
            dense(4, Activation::Linear),
            dense(1, Activation::Linear),
        ],
    )
}

#[test]
fn zero_weights_give_zero_output() {
    let cfg = NetworkConfig::conv_dense(64, [4, 3], [8, 4], Some(2), [16, 8, 4]);
    let net = Network::<f64>::zeros(cfg.clone()).unwrap();
    let out = net.forward(&random_input(cfg.input, 5, 1)).unwrap();
    assert_eq!(out.shape(), &[5, 1]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn hand_computed_two_layer_network() {
    // x = [1, -2, 3, 0.5] -> Dense(2, relu) -> Dense(1).
    let cfg = config(
        Shape3::iq(2),
        vec![LayerSpec::Flatten, dense(2, Activation::Relu), dense(1, Activation::Linear)],
    );
    let mut net = Network::<f64>::zeros(cfg).unwrap();
    let p = net.params_mut();
    p[1].weight = vec![1.0, 1.0, 1.0, 1.0, 0.5, -1.0, 0.0, 2.0];
    p[1].bias = vec![0.5, -1.0];
    p[2].weight = vec![2.0, -3.0];
    p[2].bias = vec![0.25];
    // Hidden pre-activations: 1 - 2 + 3 + 0.5 + 0.5 = 3; 0.5 + 2 + 0 + 1 - 1 = 2.5.
    // Output: 2 * 3 - 3 * 2.5 + 0.25 = -1.25.
    let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
    let out = net.forward(&x).unwrap();
    assert!((out.data()[0] + 1.25).abs() < 1e-12);
}

#[test]
fn relu_clamps_negative_preactivations() {
    let cfg = config(
        Shape3::iq(1),
        vec![LayerSpec::Flatten, dense(2, Activation::Relu), dense(1, Activation::Linear)],
    );
    let mut net = Network::<f64>::zeros(cfg).unwrap();
    net.params_mut()[1].weight = vec![1.0, 0.0, 0.0, 1.0];
    let x = Tensor::new(vec![1, 1, 2, 1], vec![-1.0, 2.0]).unwrap();
    let pass = net.forward_pass(x).unwrap();
    assert_eq!(pass.activations[2].data(), &[0.0, 2.0]);
}

#[test]
fn dense_gradient_matches_closed_form() {
    let cfg = config(Shape3::iq(3), vec![LayerSpec::Flatten, dense(1, Activation::Linear)]);
    let net = Network::<f64>::new(cfg.clone(), 3).unwrap();
    let batch = 4;
    let x = random_input(cfg.input, batch, 9);
    let targets = [0.3, -0.2, 1.5, 0.0];
    let pass = net.forward_pass(x.clone()).unwrap();
    let y = pass.output().data().to_vec();
    let (loss, grads) = net.backward(&pass, &targets).unwrap();

    let mut expect_w = [0.0; 6];
    let mut expect_b = 0.0;
    let mut expect_loss = 0.0;
    for b in 0..batch {
        let r = y[b] - targets[b];
        expect_loss += r * r / batch as f64;
        expect_b += 2.0 * r / batch as f64;
        for (k, w) in expect_w.iter_mut().enumerate() {
            *w += 2.0 * r * x.item(b)[k] / batch as f64;
        }
    }
    assert!((loss - expect_loss).abs() < 1e-12);
    let layer = &grads.layers[1];
    for (g, e) in layer.weight.iter().zip(expect_w) {
        assert!((g - e).abs() < 1e-10, "{g} vs {e}");
    }
    assert!((layer.bias[0] - expect_b).abs() < 1e-10);
}

/// Relative difference with a floor so that vanishing gradients compare on
/// an absolute scale.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[test]
fn backprop_matches_central_differences() {
    const EPS: f64 = 1e-3;
    let batch = 3;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for s in 0..24u64 {
        // Every other seed runs with a scaled output layer.
        let cfg = mixed_config().with_output_scale(if s % 2 == 1 { 3.0 } else { 1.0 });
        let mut net = Network::<f64>::new(cfg.clone(), seed::derive(100, s)).unwrap();
        // Nonzero biases so that bias gradients are exercised through ReLUs.
        let mut rng = seed::rng(seed::derive(200, s));
        for p in net.params_mut() {
            p.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        let x = random_input(cfg.input, batch, seed::derive(300, s));
        let targets: Vec<f64> = (0..batch).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pass = net.forward_pass(x.clone()).unwrap();
        let base = pass.pattern(&cfg);
        let (_, grads) = net.backward(&pass, &targets).unwrap();

        for li in 0..cfg.layers.len() {
            let n_w = net.params()[li].weight.len();
            let n_b = net.params()[li].bias.len();
            for k in 0..n_w + n_b {
                let analytic = if k < n_w {
                    grads.layers[li].weight[k]
                } else {
                    grads.layers[li].bias[k - n_w]
                };
                let probe = |delta: f64| {
                    let mut moved = net.clone();
                    let p = &mut moved.params_mut()[li];
                    if k < n_w {
                        p.weight[k] += delta;
                    } else {
                        p.bias[k - n_w] += delta;
                    }
                    let pass = moved.forward_pass(x.clone()).unwrap();
                    (moved.mse(&x, &targets).unwrap(), pass.pattern(&cfg))
                };
                let (lp, pp) = probe(EPS);
                let (lm, pm) = probe(-EPS);
                if pp != base || pm != base {
                    skipped += 1;
                    continue;
                }
                let numeric = (lp - lm) / (2.0 * EPS);
                let err = rel_err(analytic, numeric);
                assert!(
                    err < 1e-4,
                    "seed {s} layer {li} param {k}: analytic {analytic} numeric {numeric}"
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 10 * skipped, "checked {checked}, skipped {skipped}");
}

/// Direct evaluation of a valid, stride-1 cross-correlation.
fn conv_reference(
    x: &[f64],
    input: Shape3,
    weight: &[f64],
    bias: &[f64],
    filters: usize,
    kernel: [usize; 2],
) -> Vec<f64> {
    let (oh, ow) = (input.height - kernel[0] + 1, input.width - kernel[1] + 1);
    let mut out = vec![0.0; filters * oh * ow];
    for f in 0..filters {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = bias[f];
                for c in 0..input.channels {
                    for u in 0..kernel[0] {
                        for v in 0..kernel[1] {
                            let w = weight[((f * input.channels + c) * kernel[0] + u) * kernel[1] + v];
                            acc += w * x[(c * input.height + i + u) * input.width + j + v];
                        }
                    }
                }
                out[(f * oh + i) * ow + j] = acc;
            }
        }
    }
    out
}

#[test]
fn convolution_matches_direct_loops() {
    let input = Shape3 {
        channels: 2,
        height: 3,
        width: 9,
    };
    let kernel = [2, 3];
    let cfg = config(
        input,
        vec![
            conv(4, kernel, Activation::Linear),
            LayerSpec::Flatten,
            dense(1, Activation::Linear),
        ],
    );
    let mut net = Network::<f64>::new(cfg.clone(), 17).unwrap();
    net.params_mut()[0].bias = vec![0.1, -0.2, 0.3, 0.0];
    let batch = 3;
    let x = random_input(input, batch, 5);
    let pass = net.forward_pass(x.clone()).unwrap();
    let p = &net.params()[0];
    for b in 0..batch {
        let expect = conv_reference(x.item(b), input, &p.weight, &p.bias, 4, kernel);
        for (got, want) in pass.activations[1].item(b).iter().zip(&expect) {
            assert!((got - want).abs() < 1e-10);
        }
    }
}

#[test]
fn max_pool_routes_gradient_to_the_maximum() {
    // Identity 1x1 convolution, a 1x2 pool, then a dense readout with unit
    // weights: the convolution weight gradient is the sum of the window
    // maxima scaled by the loss gradient.
    let cfg = config(
        Shape3 {
            channels: 1,
            height: 1,
            width: 6,
        },
        vec![
            conv(1, [1, 1], Activation::Linear),
            LayerSpec::MaxPool { size: [1, 2] },
            LayerSpec::Flatten,
            dense(1, Activation::Linear),
        ],
    );
    let mut net = Network::<f64>::zeros(cfg).unwrap();
    net.params_mut()[0].weight = vec![1.0];
    net.params_mut()[3].weight = vec![1.0, 1.0, 1.0];
    let x = Tensor::new(vec![1, 1, 1, 6], vec![0.5, -1.0, 2.0, 3.0, -4.0, -0.5]).unwrap();
    let pass = net.forward_pass(x).unwrap();
    assert_eq!(pass.activations[2].data(), &[0.5, 3.0, -0.5]);
    // y = 3, target 0: dL/dy = 6.
    let (loss, grads) = net.backward(&pass, &[0.0]).unwrap();
    assert!((loss - 9.0).abs() < 1e-12);
    assert!((grads.layers[0].weight[0] - 6.0 * 3.0).abs() < 1e-12);
    // Every pooled output receives the gradient exactly once.
    assert!((grads.layers[0].bias[0] - 6.0 * 3.0).abs() < 1e-12);
}

#[test]
fn f32_and_f64_forward_agree() {
    let cfg = mixed_config();
    let net64 = Network::<f64>::new(cfg.clone(), 8).unwrap();
    let net32: Network<f32> = net64.cast();
    let x64 = random_input(cfg.input, 6, 2);
    let y64 = net64.forward(&x64).unwrap();
    let y32 = net32.forward(&x64.cast()).unwrap();
    for (a, b) in y64.data().iter().zip(y32.data()) {
        assert!((a - *b as f64).abs() < 1e-4);
    }
}

#[test]
fn output_scale_multiplies_the_prediction() {
    let cfg = mixed_config();
    let net = Network::<f64>::new(cfg.clone(), 5).unwrap();
    let mut scaled = Network::<f64>::new(cfg.with_output_scale(10.0), 5).unwrap();
    for (dst, src) in scaled.params_mut().iter_mut().zip(net.params()) {
        *dst = src.clone();
    }
    let x = random_input(mixed_config().input, 4, 9);
    let a = net.forward(&x).unwrap();
    let b = scaled.forward(&x).unwrap();
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((10.0 * u - v).abs() < 1e-12, "{u} vs {v}");
    }
}

#[test]
fn wrong_input_shape_is_rejected() {
    let net = Network::<f32>::new(NetworkConfig::estimator(64, true), 1).unwrap();
    let x = Tensor::<f32>::zeros(vec![2, 1, 2, 32]);
    assert!(matches!(net.forward(&x), Err(iqsei::Error::Shape { .. })));
}

#[test]
fn invalid_configs_are_rejected() {
    let no_readout = config(Shape3::iq(8), vec![LayerSpec::Flatten, dense(3, Activation::Relu)]);
    assert!(Network::<f32>::zeros(no_readout).is_err());
    let oversized = config(
        Shape3::iq(8),
        vec![conv(2, [3, 3], Activation::Relu), LayerSpec::Flatten, dense(1, Activation::Linear)],
    );
    assert!(Network::<f32>::zeros(oversized).is_err());
}

/// Frames whose samples encode the gain offset directly, for fast training.
fn toy_frames(n: usize, len: usize, seed_: u64) -> Vec<IqFrame> {
    let mut rng = seed::rng(seed_);
    (0..n)
        .map(|i| {
            let alpha: f64 = rng.random_range(-0.5..0.5);
            let samples = (0..len)
                .map(|_| {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let q = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    Complex32::new((s * (1.0 + alpha)) as f32, q as f32)
                })
                .collect();
            let mut truth = ImpairmentParams::ideal(2.0, 30.0);
            truth.alpha = alpha;
            IqFrame {
                samples,
                truth,
                scheme: ModulationScheme::qpsk(),
                seed: i as u64,
            }
        })
        .collect()
}

fn toy_config(len: usize) -> NetworkConfig {
    NetworkConfig::conv_dense(len, [4, 4], [2, 2], Some(2), [16, 8, 8])
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        max_epochs: epochs,
        patience: epochs,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let frames = toy_frames(64, 16, 1);
    let mut model = NetworkModel::<f32>::new(toy_config(16), 4).unwrap();
    let before = model.net.clone();
    let cfg = TrainConfig {
        lr: 0.0,
        ..quick_cfg(2)
    };
    train(&mut model, &frames, &frames[..16], Target::GainImbalance, &cfg, |_| {}).unwrap();
    assert_eq!(model.net, before);
}

#[test]
fn zero_gradient_step_is_a_no_op() {
    let mut model = NetworkModel::<f64>::new(toy_config(16), 4).unwrap();
    let before = model.net.clone();
    let x = Tensor::<f64>::zeros(vec![1, 1, 2, 16]);
    let pass = model.net.forward_pass(x).unwrap();
    let (_, mut grads) = model.net.backward(&pass, &[0.0]).unwrap();
    for l in &mut grads.layers {
        l.weight.iter_mut().for_each(|g| *g = 0.0);
        l.bias.iter_mut().for_each(|g| *g = 0.0);
    }
    rmsprop_step(&mut model, &grads, &RmsProp::default()).unwrap();
    assert_eq!(model.net, before);
}

#[test]
fn training_lowers_the_loss_on_a_learnable_task() {
    let frames = toy_frames(512, 16, 2);
    let (tr, va) = frames.split_at(448);
    let mut model = NetworkModel::<f32>::new(toy_config(16), 6).unwrap();
    let cfg = TrainConfig {
        lr: 3e-3,
        ..quick_cfg(30)
    };
    let hist = train(&mut model, tr, va, Target::GainImbalance, &cfg, |_| {}).unwrap();
    let first = hist.first().unwrap().val_loss;
    let best = model.meta.best_val_loss.unwrap();
    // Label variance is 1/12 for U(-0.5, 0.5).
    assert!(best < 0.25 * first, "first {first}, best {best}");
}

#[test]
fn constant_labels_are_learned() {
    let mut frames = toy_frames(256, 16, 3);
    for f in &mut frames {
        f.truth.alpha = 0.3;
    }
    let mut model = NetworkModel::<f32>::new(toy_config(16), 2).unwrap();
    train(&mut model, &frames, &frames[..32], Target::GainImbalance, &quick_cfg(20), |_| {}).unwrap();
    let preds = model.net.predict(&frames[..32]).unwrap();
    for p in preds {
        assert!((p - 0.3).abs() < 0.05, "{p}");
    }
}

#[test]
fn training_is_deterministic() {
    let frames = toy_frames(128, 16, 4);
    let run = || {
        let mut model = NetworkModel::<f32>::new(toy_config(16), 9).unwrap();
        train(&mut model, &frames, &frames[..32], Target::GainImbalance, &quick_cfg(3), |_| {})
            .unwrap();
        model
    };
    assert_eq!(run(), run());
}

#[test]
fn target_mismatch_is_refused() {
    let frames = toy_frames(32, 16, 5);
    let mut model = NetworkModel::<f32>::new(toy_config(16), 9).unwrap();
    train(&mut model, &frames, &[], Target::GainImbalance, &quick_cfg(1), |_| {}).unwrap();
    let err = train(&mut model, &frames, &[], Target::PhaseImbalance, &quick_cfg(2), |_| {});
    assert!(matches!(err, Err(iqsei::Error::Config(_))));
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let frames = toy_frames(96, 16, 6);
    let mut model = NetworkModel::<f32>::new(toy_config(16), 1).unwrap();
    train(&mut model, &frames, &frames[..32], Target::GainImbalance, &quick_cfg(2), |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.rfpm");
    save_checkpoint(&path, &model).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.net.predict(&frames).unwrap(), model.net.predict(&frames).unwrap());
}

#[test]
fn resumed_training_continues_the_epoch_count() {
    let frames = toy_frames(96, 16, 7);
    let mut model = NetworkModel::<f32>::new(toy_config(16), 1).unwrap();
    train(&mut model, &frames, &frames[..32], Target::GainImbalance, &quick_cfg(2), |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.rfpm");
    save_checkpoint(&path, &model).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap();
    let more = train(&mut resumed, &frames, &frames[..32], Target::GainImbalance, &quick_cfg(4), |_| {})
        .unwrap();
    assert_eq!(more.iter().map(|s| s.epoch).collect::<Vec<_>>(), vec![2, 3]);
    assert_eq!(resumed.meta.history.len(), 4);
}
