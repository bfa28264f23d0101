//! Feed-forward regression network with periodic convolutions, trained by
//! Adam on the mean-squared error of scaled labels.
//!
//! All parameters live in one flat vector; each layer owns a contiguous slice
//! of it. Tensors are stored channel-major (C, H, W), which for spin inputs
//! means channel 0 holds the horizontal bonds and channel 1 the vertical
//! bonds, in the lattice's row-major order.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, ModelKind, Sample};
use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::rng::{mix, rng_from_seed, ChainRng};

use super::BetaPredictor;

pub const MODEL_MAGIC: &[u8; 5] = b"TPRB1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Same-size 2-D convolution with periodic wrap.
    Conv {
        filters: usize,
        kernel: usize,
    },
    Dense {
        units: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    GlobalAvgPool,
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Grid {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat {
        len: usize,
    },
}

impl Shape {
    pub fn size(self) -> usize {
        match self {
            Shape::Grid {
                channels,
                height,
                width,
            } => channels * height * width,
            Shape::Flat { len } => len,
        }
    }
}

/// Affine map of labels onto [0, 1] for training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    pub lo: f64,
    pub hi: f64,
}

impl LabelScaler {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!("label range [{lo}, {hi}] is empty")));
        }
        Ok(Self { lo, hi })
    }

    pub fn scale(&self, beta: f64) -> f64 {
        (beta - self.lo) / (self.hi - self.lo)
    }

    pub fn descale(&self, y: f64) -> f64 {
        self.lo + y * (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub labels: LabelScaler,
}

impl Architecture {
    /// Input shape for a dataset kind: two bond channels for spin strings,
    /// a flat vector for stabilizer expectations.
    pub fn input_for(kind: ModelKind, n: usize) -> Shape {
        match kind {
            ModelKind::Stabilizer => Shape::Flat { len: n * n },
            _ => Shape::Grid {
                channels: 2,
                height: n,
                width: n,
            },
        }
    }

    fn conv_block(filters: &[(usize, usize)]) -> Vec<LayerSpec> {
        filters
            .iter()
            .flat_map(|&(f, k)| [LayerSpec::Conv { filters: f, kernel: k }, LayerSpec::Relu])
            .collect()
    }

    fn dense_block(units: &[usize]) -> Vec<LayerSpec> {
        units
            .iter()
            .flat_map(|&u| [LayerSpec::Dense { units: u }, LayerSpec::Relu])
            .collect()
    }

    /// Full-width layer structure for a dataset kind.
    pub fn full(kind: ModelKind, n: usize, labels: LabelScaler) -> Self {
        let mut layers = Vec::new();
        match kind {
            ModelKind::Igt => {
                layers.extend(Self::conv_block(&[(128, 3), (128, 3)]));
                layers.push(LayerSpec::Flatten);
                layers.extend(Self::dense_block(&[300, 100]));
            }
            ModelKind::ToricX => {
                layers.extend(Self::conv_block(&[(100, 3), (100, 2)]));
                layers.push(LayerSpec::Flatten);
                layers.extend(Self::dense_block(&[100]));
                layers.push(LayerSpec::Dropout { rate: 0.15 });
            }
            ModelKind::ToricZ => {
                layers.extend(Self::conv_block(&[(128, 2), (128, 2)]));
                layers.push(LayerSpec::Flatten);
                layers.extend(Self::dense_block(&[100, 100, 50]));
            }
            ModelKind::Stabilizer => layers.extend(Self::dense_block(&[20, 20])),
        }
        layers.push(LayerSpec::Dense { units: 1 });
        Self {
            input: Self::input_for(kind, n),
            layers,
            labels,
        }
    }

    /// Desk-scale variant: a quarter of the filters and units, with global
    /// average pooling in place of flattening between the two stacks.
    pub fn desk(kind: ModelKind, n: usize, labels: LabelScaler) -> Self {
        let mut layers = Vec::new();
        match kind {
            ModelKind::Igt => {
                layers.extend(Self::conv_block(&[(32, 3), (32, 3)]));
                layers.push(LayerSpec::GlobalAvgPool);
                layers.extend(Self::dense_block(&[75, 25]));
            }
            ModelKind::ToricX => {
                layers.extend(Self::conv_block(&[(25, 3), (25, 2)]));
                layers.push(LayerSpec::GlobalAvgPool);
                layers.extend(Self::dense_block(&[25]));
                layers.push(LayerSpec::Dropout { rate: 0.15 });
            }
            ModelKind::ToricZ => {
                layers.extend(Self::conv_block(&[(32, 2), (32, 2)]));
                layers.push(LayerSpec::GlobalAvgPool);
                layers.extend(Self::dense_block(&[25, 25, 12]));
            }
            ModelKind::Stabilizer => return Self::full(kind, n, labels),
        }
        layers.push(LayerSpec::Dense { units: 1 });
        Self {
            input: Self::input_for(kind, n),
            layers,
            labels,
        }
    }
}

/// c[m × n] = a[m × k] · b[k × n] + beta · c, with (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Conv {
        in_c: usize,
        out_c: usize,
        kernel: usize,
        height: usize,
        width: usize,
        // for each (in channel, ky, kx) row of the unfolded input, the source index of each output pixel
        gather: Vec<u32>,
    },
    Dense {
        inputs: usize,
        units: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    GlobalAvgPool {
        channels: usize,
        pixels: usize,
    },
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    op: Op,
    offset: usize,
    params: usize,
    in_size: usize,
    out_size: usize,
}

/// A network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralNet {
    arch: Architecture,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

fn build_layers(arch: &Architecture) -> Result<(Vec<Layer>, usize)> {
    let mut shape = arch.input;
    let mut offset = 0;
    let mut layers = Vec::with_capacity(arch.layers.len());
    let bad = |msg: String| Error::InvalidParameter(format!("architecture: {msg}"));
    for (li, spec) in arch.layers.iter().enumerate() {
        let in_size = shape.size();
        let (op, params, next) = match (spec.clone(), shape) {
            (
                LayerSpec::Conv { filters, kernel },
                Shape::Grid {
                    channels,
                    height,
                    width,
                },
            ) => {
                if filters == 0 || kernel == 0 || kernel > height.min(width) {
                    return Err(bad(format!(
                        "layer {li}: bad conv {filters}x{kernel} on {height}x{width}"
                    )));
                }
                let pad = (kernel - 1) / 2;
                let hw = height * width;
                let mut gather = Vec::with_capacity(channels * kernel * kernel * hw);
                for i in 0..channels {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            for y in 0..height {
                                for x in 0..width {
                                    let sy = (y + height + ky - pad) % height;
                                    let sx = (x + width + kx - pad) % width;
                                    gather.push((i * hw + sy * width + sx) as u32);
                                }
                            }
                        }
                    }
                }
                (
                    Op::Conv {
                        in_c: channels,
                        out_c: filters,
                        kernel,
                        height,
                        width,
                        gather,
                    },
                    filters * channels * kernel * kernel + filters,
                    Shape::Grid {
                        channels: filters,
                        height,
                        width,
                    },
                )
            }
            (LayerSpec::Conv { .. }, Shape::Flat { .. }) => {
                return Err(bad(format!("layer {li}: convolution needs a grid input")))
            }
            (LayerSpec::Dense { units }, Shape::Flat { len }) => {
                if units == 0 {
                    return Err(bad(format!("layer {li}: dense layer with zero units")));
                }
                (
                    Op::Dense { inputs: len, units },
                    len * units + units,
                    Shape::Flat { len: units },
                )
            }
            (LayerSpec::Dense { .. }, Shape::Grid { .. }) => {
                return Err(bad(format!(
                    "layer {li}: dense layer needs a flat input (add flatten or pooling)"
                )))
            }
            (LayerSpec::Relu, s) => (Op::Relu, 0, s),
            (LayerSpec::Dropout { rate }, s) => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(bad(format!("layer {li}: dropout rate {rate} outside [0, 1)")));
                }
                (Op::Dropout { rate }, 0, s)
            }
            (
                LayerSpec::GlobalAvgPool,
                Shape::Grid {
                    channels,
                    height,
                    width,
                },
            ) => (
                Op::GlobalAvgPool {
                    channels,
                    pixels: height * width,
                },
                0,
                Shape::Flat { len: channels },
            ),
            (LayerSpec::GlobalAvgPool, Shape::Flat { .. }) => {
                return Err(bad(format!("layer {li}: pooling needs a grid input")))
            }
            (LayerSpec::Flatten, s) => (Op::Flatten, 0, Shape::Flat { len: s.size() }),
        };
        layers.push(Layer {
            op,
            offset,
            params,
            in_size,
            out_size: next.size(),
        });
        offset += params;
        shape = next;
    }
    if shape != (Shape::Flat { len: 1 }) {
        return Err(bad("the last layer must produce a single output".into()));
    }
    Ok((layers, offset))
}

/// Per-sample scratch space for forward and backward passes.
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    cols: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
    dcols: Vec<f64>,
}

impl NeuralNet {
    /// Fan-in-scaled uniform initialization, U(−√(6/fan_in), √(6/fan_in)), zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let (layers, count) = build_layers(&arch)?;
        let mut params = vec![0.0; count];
        let mut rng = rng_from_seed(mix(seed ^ 0x006e_6e5f_696e_6974));
        for layer in &layers {
            let (weights, fan_in) = match layer.op {
                Op::Conv {
                    in_c, out_c, kernel, ..
                } => (out_c * in_c * kernel * kernel, in_c * kernel * kernel),
                Op::Dense { inputs, units } => (inputs * units, inputs),
                _ => continue,
            };
            let limit = (6.0 / fan_in as f64).sqrt();
            for w in &mut params[layer.offset..layer.offset + weights] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(Self { arch, layers, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let (layers, count) = build_layers(&arch)?;
        if params.len() != count {
            return Err(Error::SizeMismatch {
                expected: count,
                found: params.len(),
            });
        }
        Ok(Self { arch, layers, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_size(&self) -> usize {
        self.arch.input.size()
    }

    pub fn workspace(&self) -> Workspace {
        let mut acts = vec![vec![0.0; self.input_size()]];
        let mut cols = Vec::new();
        let mut masks = Vec::new();
        let mut widest = self.input_size();
        let mut widest_cols = 0;
        for layer in &self.layers {
            acts.push(vec![0.0; layer.out_size]);
            widest = widest.max(layer.out_size);
            cols.push(match &layer.op {
                Op::Conv { gather, .. } => {
                    widest_cols = widest_cols.max(gather.len());
                    vec![0.0; gather.len()]
                }
                _ => Vec::new(),
            });
            masks.push(match layer.op {
                Op::Dropout { .. } => vec![1.0; layer.out_size],
                _ => Vec::new(),
            });
        }
        Workspace {
            acts,
            cols,
            masks,
            grad_a: vec![0.0; widest],
            grad_b: vec![0.0; widest],
            dcols: vec![0.0; widest_cols],
        }
    }

    /// Forward pass on raw features, returning the scaled output. With `rng`
    /// present, dropout is active and its masks are drawn from it.
    pub fn forward_scaled(&self, ws: &mut Workspace, input: &[f64], mut rng: Option<&mut ChainRng>) -> f64 {
        ws.acts[0].copy_from_slice(input);
        for (li, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(li + 1);
            let x = &head[li];
            let y = &mut tail[0];
            let p = &self.params[layer.offset..layer.offset + layer.params];
            match &layer.op {
                Op::Conv {
                    in_c,
                    out_c,
                    kernel,
                    height,
                    width,
                    gather,
                } => {
                    let hw = height * width;
                    let rows = in_c * kernel * kernel;
                    let cols = &mut ws.cols[li];
                    for (c, &g) in cols.iter_mut().zip(gather) {
                        *c = x[g as usize];
                    }
                    let (w, b) = p.split_at(out_c * rows);
                    for o in 0..*out_c {
                        y[o * hw..(o + 1) * hw].fill(b[o]);
                    }
                    // y[out_c × hw] += W[out_c × rows] · cols[rows × hw]
                    gemm(*out_c, rows, hw, w, (rows, 1), cols, (hw, 1), 1.0, y, (hw, 1));
                }
                Op::Dense { inputs, units } => {
                    let (w, b) = p.split_at(inputs * units);
                    for j in 0..*units {
                        let row = &w[j * inputs..(j + 1) * inputs];
                        y[j] = b[j] + row.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                Op::Relu => {
                    for (yo, &xi) in y.iter_mut().zip(x.iter()) {
                        *yo = xi.max(0.0);
                    }
                }
                Op::Dropout { rate } => match rng.as_deref_mut() {
                    Some(r) => {
                        let keep = 1.0 / (1.0 - rate);
                        let mask = &mut ws.masks[li];
                        for ((yo, &xi), m) in y.iter_mut().zip(x.iter()).zip(mask.iter_mut()) {
                            *m = if r.gen::<f64>() < *rate { 0.0 } else { keep };
                            *yo = xi * *m;
                        }
                    }
                    None => {
                        ws.masks[li].fill(1.0);
                        y.copy_from_slice(x);
                    }
                },
                Op::GlobalAvgPool { channels, pixels } => {
                    let inv = 1.0 / *pixels as f64;
                    for c in 0..*channels {
                        y[c] = x[c * pixels..(c + 1) * pixels].iter().sum::<f64>() * inv;
                    }
                }
                Op::Flatten => y.copy_from_slice(x),
            }
        }
        ws.acts[self.layers.len()][0]
    }

    /// Accumulates ∂(output)/∂θ · `upstream` into `grad`, using the state of
    /// the last forward pass in `ws`.
    pub fn backward_scaled(&self, ws: &mut Workspace, upstream: f64, grad: &mut [f64]) {
        let Workspace {
            acts,
            cols,
            masks,
            grad_a,
            grad_b,
            dcols,
        } = ws;
        grad_a[0] = upstream;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = &acts[li];
            let y = &acts[li + 1];
            let dy = &grad_a[..layer.out_size];
            let dx = &mut grad_b[..layer.in_size];
            let p = &self.params[layer.offset..layer.offset + layer.params];
            let g = &mut grad[layer.offset..layer.offset + layer.params];
            match &layer.op {
                Op::Conv {
                    in_c,
                    out_c,
                    kernel,
                    height,
                    width,
                    gather,
                } => {
                    let hw = height * width;
                    let rows = in_c * kernel * kernel;
                    let col = &cols[li];
                    let (w, _) = p.split_at(out_c * rows);
                    let (gw, gb) = g.split_at_mut(out_c * rows);
                    for o in 0..*out_c {
                        gb[o] += dy[o * hw..(o + 1) * hw].iter().sum::<f64>();
                    }
                    // gW += dY · colsᵀ
                    gemm(*out_c, hw, rows, dy, (hw, 1), col, (1, hw), 1.0, gw, (rows, 1));
                    if li > 0 {
                        // dcols = Wᵀ · dY, scattered back through the gather map
                        let dcol = &mut dcols[..rows * hw];
                        gemm(rows, *out_c, hw, w, (1, rows), dy, (hw, 1), 0.0, dcol, (hw, 1));
                        dx.fill(0.0);
                        for (&src, &dc) in gather.iter().zip(dcol.iter()) {
                            dx[src as usize] += dc;
                        }
                    }
                }
                Op::Dense { inputs, units } => {
                    let (w, _) = p.split_at(inputs * units);
                    let (gw, gb) = g.split_at_mut(inputs * units);
                    if li > 0 {
                        dx.fill(0.0);
                    }
                    for j in 0..*units {
                        let d = dy[j];
                        gb[j] += d;
                        if d == 0.0 {
                            continue;
                        }
                        for (gwi, &xi) in gw[j * inputs..(j + 1) * inputs].iter_mut().zip(x.iter()) {
                            *gwi += d * xi;
                        }
                        if li > 0 {
                            for (dxi, &wi) in dx.iter_mut().zip(&w[j * inputs..(j + 1) * inputs]) {
                                *dxi += d * wi;
                            }
                        }
                    }
                }
                Op::Relu => {
                    for ((dxi, &dyi), &yi) in dx.iter_mut().zip(dy).zip(y.iter()) {
                        *dxi = if yi > 0.0 { dyi } else { 0.0 };
                    }
                }
                Op::Dropout { .. } => {
                    for ((dxi, &dyi), &m) in dx.iter_mut().zip(dy).zip(masks[li].iter()) {
                        *dxi = dyi * m;
                    }
                }
                Op::GlobalAvgPool { channels, pixels } => {
                    let inv = 1.0 / *pixels as f64;
                    for c in 0..*channels {
                        dx[c * pixels..(c + 1) * pixels].fill(dy[c] * inv);
                    }
                }
                Op::Flatten => dx.copy_from_slice(dy),
            }
            std::mem::swap(grad_a, grad_b);
        }
    }

    /// Inference in β units (dropout off).
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.input_size() {
            return Err(Error::SizeMismatch {
                expected: self.input_size(),
                found: input.len(),
            });
        }
        let mut ws = self.workspace();
        Ok(self.arch.labels.descale(self.forward_scaled(&mut ws, input, None)))
    }

    pub fn predict_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut ws = self.workspace();
        inputs
            .iter()
            .map(|x| {
                if x.len() != self.input_size() {
                    return Err(Error::SizeMismatch {
                        expected: self.input_size(),
                        found: x.len(),
                    });
                }
                Ok(self.arch.labels.descale(self.forward_scaled(&mut ws, x, None)))
            })
            .collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&ModelHeader {
            architecture: self.arch.clone(),
            param_count: self.params.len(),
        })?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: ModelHeader = serde_json::from_slice(&header)?;
        let mut params = Vec::with_capacity(header.param_count);
        let mut buf = [0u8; 8];
        for _ in 0..header.param_count {
            r.read_exact(&mut buf)?;
            params.push(f64::from_le_bytes(buf));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format("trailing bytes after parameter blob".into()));
        }
        Self::from_params(header.architecture, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    architecture: Architecture,
    param_count: usize,
}

impl BetaPredictor for NeuralNet {
    fn predict(&self, sample: &Sample) -> Result<f64> {
        self.forward(&sample.features())
    }

    fn predict_many(&self, samples: &[&Sample]) -> Result<Vec<f64>> {
        let mut ws = self.workspace();
        let mut x = vec![0.0; self.input_size()];
        samples
            .iter()
            .map(|s| {
                if s.dim() != x.len() {
                    return Err(Error::SizeMismatch {
                        expected: x.len(),
                        found: s.dim(),
                    });
                }
                s.write_features(&mut x);
                Ok(self.arch.labels.descale(self.forward_scaled(&mut ws, &x, None)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            epochs: 20,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidParameter("batch size and epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidParameter(
                "bad learning rate or validation fraction".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    /// Inference-mode training loss before the first update.
    pub initial: f64,
    /// Mean minibatch loss per epoch.
    pub train: Vec<f64>,
    /// Inference-mode loss on the held-out split per epoch (empty without one).
    pub validation: Vec<f64>,
}

impl LossHistory {
    pub fn final_train(&self) -> f64 {
        *self.train.last().unwrap_or(&self.initial)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Flattened features and scaled labels of a dataset.
pub struct Features {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Features {
    pub fn from_dataset(ds: &LabeledDataset, scaler: &LabelScaler) -> Self {
        let dim = ds.meta.input_dim;
        let mut x = vec![0.0; dim * ds.len()];
        for (r, chunk) in ds.records.iter().zip(x.chunks_mut(dim)) {
            r.sample.write_features(chunk);
        }
        Self {
            dim,
            x,
            y: ds.records.iter().map(|r| scaler.scale(r.beta)).collect(),
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

fn mse(model: &NeuralNet, ws: &mut Workspace, f: &Features, idx: &[usize]) -> f64 {
    idx.iter()
        .map(|&i| (model.forward_scaled(ws, f.row(i), None) - f.y[i]).powi(2))
        .sum::<f64>()
        / idx.len() as f64
}

/// Minibatch Adam on L = (1/n) Σ (ŷ − y)² over scaled labels.
pub fn nn_train(dataset: &LabeledDataset, model: NeuralNet, cfg: &TrainConfig) -> Result<(NeuralNet, LossHistory)> {
    cfg.check()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset".into()));
    }
    if dataset.meta.input_dim != model.input_size() {
        return Err(Error::SizeMismatch {
            expected: model.input_size(),
            found: dataset.meta.input_dim,
        });
    }
    if dataset.records.iter().any(|r| !r.beta.is_finite()) {
        return Err(Error::InvalidParameter("non-finite label".into()));
    }
    let features = Features::from_dataset(dataset, &model.arch.labels);
    train_on_features(&features, model, cfg)
}

pub fn train_on_features(
    features: &Features,
    mut model: NeuralNet,
    cfg: &TrainConfig,
) -> Result<(NeuralNet, LossHistory)> {
    let mut rng = rng_from_seed(mix(cfg.seed ^ 0x0074_7261_696e));
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((features.len() as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = if n_val >= features.len() { 0 } else { n_val };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let mut ws = model.workspace();
    let initial = mse(&model, &mut ws, features, &train_idx);
    if !initial.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            loss: initial,
        });
    }
    let mut history = LossHistory {
        initial,
        train: Vec::with_capacity(cfg.epochs),
        validation: Vec::new(),
    };
    let mut adam = Adam::new(model.param_count());
    let mut grad = vec![0.0; model.param_count()];
    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let out = model.forward_scaled(&mut ws, features.row(i), Some(&mut rng));
                let err = out - features.y[i];
                total += err * err;
                model.backward_scaled(&mut ws, scale * err, &mut grad);
            }
            adam.step(&mut model.params, &grad, cfg);
        }
        let loss = total / train_idx.len() as f64;
        if !loss.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch, loss });
        }
        history.train.push(loss);
        if !val_idx.is_empty() {
            history.validation.push(mse(&model, &mut ws, features, &val_idx));
        }
    }
    Ok((model, history))
}

/// `seeds.len()` independently initialized and trained copies of `arch`.
/// Member k uses `seeds[k]` for both initialization and training order.
pub fn ensemble_train(
    dataset: &LabeledDataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<(NeuralNet, LossHistory)>> {
    cfg.check()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset".into()));
    }
    let features = Features::from_dataset(dataset, &arch.labels);
    map_indexed(seeds.len(), |k| {
        let model = NeuralNet::init(arch.clone(), seeds[k])?;
        train_on_features(&features, model, &TrainConfig { seed: seeds[k], ..*cfg })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetMeta, Record};
    use crate::lattice::{Basis, SpinConfig};

    fn scaler() -> LabelScaler {
        LabelScaler::new(0.0, 5.0).unwrap()
    }

    fn conv_arch(n: usize) -> Architecture {
        Architecture {
            input: Shape::Grid {
                channels: 2,
                height: n,
                width: n,
            },
            layers: vec![
                LayerSpec::Conv { filters: 3, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::Conv { filters: 2, kernel: 2 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { units: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 1 },
            ],
            labels: scaler(),
        }
    }

    #[test]
    fn stabilizer_parameter_count() {
        let arch = Architecture::full(ModelKind::Stabilizer, 2, scaler());
        assert_eq!(NeuralNet::init(arch, 0).unwrap().param_count(), 541);
    }

    #[test]
    fn presets_are_well_formed() {
        for kind in [
            ModelKind::Igt,
            ModelKind::ToricX,
            ModelKind::ToricZ,
            ModelKind::Stabilizer,
        ] {
            for n in [4, 8] {
                NeuralNet::init(Architecture::full(kind, n, scaler()), 1).unwrap();
                NeuralNet::init(Architecture::desk(kind, n, scaler()), 1).unwrap();
            }
        }
        let bad = Architecture {
            input: Shape::Flat { len: 4 },
            layers: vec![LayerSpec::Dense { units: 2 }],
            labels: scaler(),
        };
        assert!(NeuralNet::init(bad, 0).is_err());
    }

    #[test]
    fn initialization_is_seeded() {
        let a = NeuralNet::init(conv_arch(4), 0).unwrap();
        let b = NeuralNet::init(conv_arch(4), 0).unwrap();
        let c = NeuralNet::init(conv_arch(4), 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn zero_network_returns_descaled_bias() {
        let mut net = NeuralNet::init(conv_arch(4), 0).unwrap();
        let count = net.param_count();
        net.params_mut().fill(0.0);
        net.params_mut()[count - 1] = 0.3;
        for seed in 0..3u64 {
            let x: Vec<f64> = (0..32).map(|i| ((i as u64 * 7 + seed) % 5) as f64 - 2.0).collect();
            assert!((net.forward(&x).unwrap() - scaler().descale(0.3)).abs() < 1e-15);
        }
        assert!(net.forward(&[0.0; 3]).is_err());
    }

    #[test]
    fn label_scaling_round_trip() {
        let s = LabelScaler::new(0.0, 5.0).unwrap();
        for b in crate::dataset::linspace(0.0, 5.0, 100) {
            assert!((s.descale(s.scale(b)) - b).abs() < 1e-12);
        }
        assert!(LabelScaler::new(1.0, 1.0).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let net = NeuralNet::init(conv_arch(3), 5).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"TPRB1");
        let back = NeuralNet::read_from(&buf[..]).unwrap();
        assert_eq!(back, net);
        buf[0] = b'X';
        assert!(NeuralNet::read_from(&buf[..]).is_err());
    }

    fn dataset_from(records: Vec<Record>, n: usize) -> LabeledDataset {
        LabeledDataset {
            meta: DatasetMeta::new(ModelKind::Igt, n, vec![], 0, 0),
            records,
        }
    }

    #[test]
    fn learns_a_constant_target() {
        let n = 3;
        let g = crate::lattice::LatticeGeometry::new(n).unwrap();
        let mut rng = rng_from_seed(2);
        let mut random_config = || {
            let v = (0..g.bond_count())
                .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
                .collect();
            SpinConfig::new(v, Basis::Z).unwrap()
        };
        let records: Vec<Record> = (0..2000)
            .map(|_| Record {
                beta: 0.7,
                sample: Sample::Spins(random_config()),
            })
            .collect();
        let ds = dataset_from(records, n);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let mut arch = conv_arch(n);
        arch.labels = LabelScaler::new(0.0, 1.0).unwrap();
        let (net, hist) = nn_train(&ds, NeuralNet::init(arch, 1).unwrap(), &cfg).unwrap();
        assert!(hist.final_train() <= hist.initial);
        let preds: Vec<f64> = (0..200)
            .map(|_| net.predict(&Sample::Spins(random_config())).unwrap())
            .collect();
        let m = crate::stats::mean(&preds);
        assert!((m - 0.7).abs() < 0.01, "mean prediction {m}");
        assert!(preds.iter().all(|p| (p - 0.7).abs() < 0.05));
    }

    #[test]
    fn training_is_deterministic() {
        let n = 3;
        let g = crate::lattice::LatticeGeometry::new(n).unwrap();
        let records: Vec<Record> = (0..40u64)
            .map(|k| Record {
                beta: (k % 5) as f64,
                sample: Sample::Spins(SpinConfig::from_bitmask(&g, mix(k) & 0x3ffff, Basis::Z)),
            })
            .collect();
        let ds = dataset_from(records, n);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut arch = conv_arch(n);
        arch.layers.insert(6, LayerSpec::Dropout { rate: 0.2 });
        let a = nn_train(&ds, NeuralNet::init(arch.clone(), 4).unwrap(), &cfg).unwrap();
        let b = nn_train(&ds, NeuralNet::init(arch, 4).unwrap(), &cfg).unwrap();
        assert_eq!(a.0.params(), b.0.params());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn rejects_bad_training_input() {
        let net = NeuralNet::init(conv_arch(3), 0).unwrap();
        let ds = dataset_from(vec![], 3);
        assert!(nn_train(&ds, net.clone(), &TrainConfig::default()).is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(nn_train(&ds, net, &cfg).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let n = 3;
        let g = crate::lattice::LatticeGeometry::new(n).unwrap();
        let records: Vec<Record> = (0..16u64)
            .map(|k| Record {
                beta: 1e300 * (k % 2) as f64,
                sample: Sample::Spins(SpinConfig::from_bitmask(&g, mix(k) & 0x3ffff, Basis::Z)),
            })
            .collect();
        let mut arch = conv_arch(n);
        arch.labels = LabelScaler::new(0.0, 1.0).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let err = nn_train(&dataset_from(records, n), NeuralNet::init(arch, 0).unwrap(), &cfg);
        assert!(matches!(err, Err(Error::Divergence { .. })));
    }
}
