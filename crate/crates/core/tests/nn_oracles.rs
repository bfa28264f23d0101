//! Independent checks of the network: a straight-line forward pass, finite
//! difference gradients and symmetry of the periodic convolution.

use rand::Rng;
use topoprobe::dataset::{DatasetMeta, LabeledDataset, ModelKind, Record, Sample};
use topoprobe::lattice::{Basis, LatticeGeometry, SpinConfig};
use topoprobe::predictor::{nn_train, Architecture, LabelScaler, LayerSpec, NeuralNet, Shape, TrainConfig};
use topoprobe::rng::rng_from_seed;

fn scaler() -> LabelScaler {
    LabelScaler::new(0.0, 5.0).unwrap()
}

fn grid(c: usize, n: usize) -> Shape {
    Shape::Grid {
        channels: c,
        height: n,
        width: n,
    }
}

/// Loop-by-loop forward pass written against the documented parameter layout:
/// conv weights as [out][in][ky][kx] followed by one bias per filter, dense
/// weights as [unit][input] followed by biases.
fn naive_forward(arch: &Architecture, params: &[f64], input: &[f64]) -> f64 {
    let mut x = input.to_vec();
    let (mut c, mut h, mut w) = match arch.input {
        Shape::Grid {
            channels,
            height,
            width,
        } => (channels, height, width),
        Shape::Flat { len } => (len, 1, 1),
    };
    let mut off = 0;
    for layer in &arch.layers {
        match *layer {
            LayerSpec::Conv { filters, kernel } => {
                let pad = (kernel - 1) / 2;
                let nw = filters * c * kernel * kernel;
                let (wt, bias) = (&params[off..off + nw], &params[off + nw..off + nw + filters]);
                let mut y = vec![0.0; filters * h * w];
                for o in 0..filters {
                    for r in 0..h {
                        for q in 0..w {
                            let mut acc = bias[o];
                            for i in 0..c {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let rr =
                                            (r as isize + ky as isize - pad as isize).rem_euclid(h as isize) as usize;
                                        let qq =
                                            (q as isize + kx as isize - pad as isize).rem_euclid(w as isize) as usize;
                                        acc += wt[((o * c + i) * kernel + ky) * kernel + kx] * x[(i * h + rr) * w + qq];
                                    }
                                }
                            }
                            y[(o * h + r) * w + q] = acc;
                        }
                    }
                }
                off += nw + filters;
                x = y;
                c = filters;
            }
            LayerSpec::Dense { units } => {
                let len = x.len();
                let mut y = vec![0.0; units];
                for (j, yj) in y.iter_mut().enumerate() {
                    *yj = params[off + len * units + j];
                    for k in 0..len {
                        *yj += params[off + j * len + k] * x[k];
                    }
                }
                off += len * units + units;
                x = y;
                (c, h, w) = (units, 1, 1);
            }
            LayerSpec::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            LayerSpec::Dropout { .. } => {}
            LayerSpec::GlobalAvgPool => {
                x = (0..c)
                    .map(|i| x[i * h * w..(i + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
                    .collect();
                (h, w) = (1, 1);
            }
            LayerSpec::Flatten => {
                (c, h, w) = (x.len(), 1, 1);
            }
        }
    }
    assert_eq!(off, params.len());
    arch.labels.descale(x[0])
}

fn architectures(n: usize) -> Vec<Architecture> {
    vec![
        Architecture {
            input: grid(2, n),
            layers: vec![
                LayerSpec::Conv { filters: 4, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::Conv { filters: 3, kernel: 2 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 6 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.3 },
                LayerSpec::Dense { units: 1 },
            ],
            labels: scaler(),
        },
        Architecture {
            input: grid(2, n),
            layers: vec![
                LayerSpec::Conv { filters: 5, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { units: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 1 },
            ],
            labels: scaler(),
        },
        Architecture::full(ModelKind::Stabilizer, n, scaler()),
    ]
}

fn random_input(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn forward_matches_straight_line_oracle() {
    for (k, arch) in architectures(4).into_iter().enumerate() {
        for seed in 0..5u64 {
            let net = NeuralNet::init(arch.clone(), seed).unwrap();
            let x = random_input(net.input_size(), 100 + seed + 10 * k as u64);
            let fast = net.forward(&x).unwrap();
            let slow = naive_forward(&arch, net.params(), &x);
            assert!((fast - slow).abs() < 1e-10, "arch {k} seed {seed}: {fast} vs {slow}");
            assert!(fast.is_finite());
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let eps = 1e-5;
    for (k, arch) in architectures(3).into_iter().enumerate() {
        let mut net = NeuralNet::init(arch, 7 + k as u64).unwrap();
        let x = random_input(net.input_size(), 50 + k as u64);
        let mut ws = net.workspace();
        let mask_seed = 99;
        let eval = |net: &NeuralNet, ws: &mut topoprobe::predictor::nn::Workspace| {
            let mut r = rng_from_seed(mask_seed);
            net.forward_scaled(ws, &x, Some(&mut r))
        };
        eval(&net, &mut ws);
        let mut grad = vec![0.0; net.param_count()];
        net.backward_scaled(&mut ws, 1.0, &mut grad);

        let mut pick = rng_from_seed(k as u64);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let i = pick.gen_range(0..net.param_count());
            let orig = net.params()[i];
            net.params_mut()[i] = orig + eps;
            let up = eval(&net, &mut ws);
            net.params_mut()[i] = orig - eps;
            let down = eval(&net, &mut ws);
            net.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let scale = grad[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((grad[i] - numeric).abs() / scale);
        }
        assert!(worst < 1e-4, "arch {k}: worst relative error {worst}");
    }
}

#[test]
fn periodic_convolution_with_pooling_is_translation_invariant() {
    let n = 5;
    let arch = &architectures(n)[1];
    let net = NeuralNet::init(arch.clone(), 3).unwrap();
    let x = random_input(2 * n * n, 8);
    let shift = |x: &[f64], dr: usize, dc: usize| -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for ch in 0..2 {
            for r in 0..n {
                for c in 0..n {
                    y[ch * n * n + ((r + dr) % n) * n + (c + dc) % n] = x[ch * n * n + r * n + c];
                }
            }
        }
        y
    };
    let base = net.forward(&x).unwrap();
    for (dr, dc) in [(1, 0), (0, 1), (2, 3)] {
        let moved = net.forward(&shift(&x, dr, dc)).unwrap();
        assert!((moved - base).abs() < 1e-12);
    }
}

#[test]
fn separates_two_clusters() {
    let n = 4;
    let g = LatticeGeometry::new(n).unwrap();
    let mut rng = rng_from_seed(11);
    let mut make = |count: usize| -> Vec<Record> {
        (0..count)
            .map(|k| {
                if k % 2 == 0 {
                    Record {
                        beta: 5.0,
                        sample: Sample::Spins(SpinConfig::all_up(&g, Basis::Z)),
                    }
                } else {
                    let v = (0..g.bond_count())
                        .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
                        .collect();
                    Record {
                        beta: 0.0,
                        sample: Sample::Spins(SpinConfig::new(v, Basis::Z).unwrap()),
                    }
                }
            })
            .collect()
    };
    let train = LabeledDataset {
        meta: DatasetMeta::new(ModelKind::Igt, n, vec![0.0, 5.0], 0, 0),
        records: make(1000),
    };
    let held = make(200);
    let arch = Architecture::desk(ModelKind::Igt, n, scaler());
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let (net, hist) = nn_train(&train, NeuralNet::init(arch, 0).unwrap(), &cfg).unwrap();
    assert!(hist.final_train() <= hist.initial);
    let mse = held
        .iter()
        .map(|r| (net.forward(&r.sample.features()).unwrap() - r.beta).powi(2))
        .sum::<f64>()
        / held.len() as f64;
    assert!(mse < 0.05, "held-out mse {mse}");
}
