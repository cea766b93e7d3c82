//! Convolutional review classifier: an L×D matrix of word vectors passes
//! through conv + max-pool + tanh layers and one fully connected sigmoid
//! layer with two outputs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Polarity;
use crate::embeddings::EmbeddingModel;
use crate::error::{Error, Result};
use crate::linear::sigmoid;

const MAGIC: &[u8; 8] = b"SENTICNN";

/// Narrowest embedding the convolution stack is meant for.
pub const MIN_EMBEDDING_DIM: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvPoolSpec {
    pub kernels: usize,
    pub kernel_rows: usize,
    pub kernel_cols: usize,
    pub pool_rows: usize,
    pub pool_cols: usize,
}

impl ConvPoolSpec {
    const fn square(kernels: usize, k: usize) -> Self {
        Self {
            kernels,
            kernel_rows: k,
            kernel_cols: k,
            pool_rows: 2,
            pool_cols: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnArchitecture {
    pub input_rows: usize,
    pub input_cols: usize,
    pub layers: Vec<ConvPoolSpec>,
}

impl Default for CnnArchitecture {
    /// 60×60 input; 40, 50 and 50 kernels of 5×5, each followed by 2×1 pooling.
    fn default() -> Self {
        Self {
            input_rows: 60,
            input_cols: 60,
            layers: vec![
                ConvPoolSpec::square(40, 5),
                ConvPoolSpec::square(50, 5),
                ConvPoolSpec::square(50, 5),
            ],
        }
    }
}

impl CnnArchitecture {
    /// Frame size entering each layer followed by the final frame size.
    pub fn frame_chain(&self) -> Result<Vec<(usize, usize)>> {
        if self.layers.is_empty() {
            return Err(Error::Architecture(
                "at least one conv layer is required".into(),
            ));
        }
        let mut frames = vec![(self.input_rows, self.input_cols)];
        let (mut r, mut c) = (self.input_rows, self.input_cols);
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernels == 0 || l.kernel_rows == 0 || l.kernel_cols == 0 {
                return Err(Error::Architecture(format!(
                    "layer {} has an empty kernel",
                    i + 1
                )));
            }
            if l.pool_cols != 1 {
                return Err(Error::Architecture(format!(
                    "layer {} pools across {} embedding columns; pooling must keep columns apart",
                    i + 1,
                    l.pool_cols
                )));
            }
            if l.pool_rows == 0 {
                return Err(Error::Architecture(format!(
                    "layer {} has a zero pool",
                    i + 1
                )));
            }
            if r < l.kernel_rows || c < l.kernel_cols {
                return Err(Error::Architecture(format!(
                    "layer {} kernel {}x{} exceeds its {}x{} input",
                    i + 1,
                    l.kernel_rows,
                    l.kernel_cols,
                    r,
                    c
                )));
            }
            let (cr, cc) = (r - l.kernel_rows + 1, c - l.kernel_cols + 1);
            if cr % l.pool_rows != 0 || cc % l.pool_cols != 0 {
                return Err(Error::IndivisiblePool {
                    rows: cr,
                    cols: cc,
                    pool_rows: l.pool_rows,
                    pool_cols: l.pool_cols,
                });
            }
            r = cr / l.pool_rows;
            c = cc / l.pool_cols;
            frames.push((r, c));
        }
        Ok(frames)
    }

    /// Length of the flattened final frame stack fed to the output layer.
    pub fn flat_len(&self) -> Result<usize> {
        let frames = self.frame_chain()?;
        let (r, c) = frames[frames.len() - 1];
        Ok(self.layers[self.layers.len() - 1].kernels * r * c)
    }
}

/// One convolution layer: every kernel spans all input maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvPoolLayer {
    pub in_maps: usize,
    pub spec: ConvPoolSpec,
    /// `kernels × (in_maps · kernel_rows · kernel_cols)`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub arch: CnnArchitecture,
    pub layers: Vec<ConvPoolLayer>,
    /// `2 × flat_len`
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

/// L×D matrix of word vectors, one row per word position.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewMatrix(pub Array2<f64>);

/// Rows are the vectors of the first `rows` tokens; a shorter review is
/// repeated from its beginning until all rows are filled. Unknown tokens keep
/// their position as zero rows.
pub fn build_review_matrix(
    tokens: &[String],
    model: &EmbeddingModel,
    rows: usize,
) -> Result<ReviewMatrix> {
    let dim = model.dim();
    let vectors: Vec<Option<&[f32]>> = tokens.iter().take(rows).map(|t| model.vector(t)).collect();
    if vectors.iter().all(Option::is_none) {
        return Err(Error::NoKnownTokens);
    }
    let mut m = Array2::zeros((rows, dim));
    for (r, mut row) in m.rows_mut().into_iter().enumerate() {
        if let Some(v) = vectors[r % vectors.len()] {
            for (dst, &src) in row.iter_mut().zip(v) {
                *dst = src as f64;
            }
        }
    }
    Ok(ReviewMatrix(m))
}

/// Block maximum over `pool_rows × pool_cols` tiles.
pub fn maxpool(
    frame: ArrayView2<'_, f64>,
    pool_rows: usize,
    pool_cols: usize,
) -> Result<Array2<f64>> {
    let (r, c) = frame.dim();
    if pool_rows == 0 || pool_cols == 0 || r % pool_rows != 0 || c % pool_cols != 0 {
        return Err(Error::IndivisiblePool {
            rows: r,
            cols: c,
            pool_rows,
            pool_cols,
        });
    }
    Ok(Array2::from_shape_fn(
        (r / pool_rows, c / pool_cols),
        |(i, j)| {
            let mut best = f64::NEG_INFINITY;
            for a in 0..pool_rows {
                for b in 0..pool_cols {
                    best = best.max(frame[[i * pool_rows + a, j * pool_cols + b]]);
                }
            }
            best
        },
    ))
}

struct LayerCache {
    cols: Array2<f64>,
    /// Flat index into the unpooled `rows × cols` plane of each pooled cell.
    argmax: Vec<usize>,
    out: Array3<f64>,
}

fn im2col(input: &Array3<f64>, kr: usize, kc: usize) -> Array2<f64> {
    let (maps, h, w) = input.dim();
    let (ho, wo) = (h - kr + 1, w - kc + 1);
    let mut cols = Array2::zeros((maps * kr * kc, ho * wo));
    for m in 0..maps {
        for i in 0..kr {
            for j in 0..kc {
                let row = (m * kr + i) * kc + j;
                let mut dst = cols.row_mut(row);
                let dst = dst.as_slice_mut().expect("standard layout");
                for y in 0..ho {
                    let src = input.slice(ndarray::s![m, y + i, j..j + wo]);
                    for (d, s) in dst[y * wo..(y + 1) * wo].iter_mut().zip(src.iter()) {
                        *d = *s;
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &Array2<f64>, shape: (usize, usize, usize), kr: usize, kc: usize) -> Array3<f64> {
    let (maps, h, w) = shape;
    let (ho, wo) = (h - kr + 1, w - kc + 1);
    let mut out = Array3::zeros(shape);
    for m in 0..maps {
        for i in 0..kr {
            for j in 0..kc {
                let row = dcols.row((m * kr + i) * kc + j);
                for y in 0..ho {
                    for x in 0..wo {
                        out[[m, y + i, x + j]] += row[y * wo + x];
                    }
                }
            }
        }
    }
    out
}

impl ConvPoolLayer {
    fn forward_cached(&self, input: &Array3<f64>) -> LayerCache {
        let s = self.spec;
        let (_, h, w) = input.dim();
        let (ho, wo) = (h - s.kernel_rows + 1, w - s.kernel_cols + 1);
        let (hp, wp) = (ho / s.pool_rows, wo / s.pool_cols);
        let cols = im2col(input, s.kernel_rows, s.kernel_cols);
        let z = self.weights.dot(&cols);
        let mut argmax = Vec::with_capacity(s.kernels * hp * wp);
        let mut out = Array3::zeros((s.kernels, hp, wp));
        // Pooling before bias + tanh gives the same result as after: both
        // are monotone and the bias is shared across the map.
        for k in 0..s.kernels {
            let plane = z.row(k);
            for i in 0..hp {
                for j in 0..wp {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for a in 0..s.pool_rows {
                        for b in 0..s.pool_cols {
                            let idx = (i * s.pool_rows + a) * wo + j * s.pool_cols + b;
                            if plane[idx] > best {
                                best = plane[idx];
                                at = idx;
                            }
                        }
                    }
                    argmax.push(at);
                    out[[k, i, j]] = (best + self.bias[k]).tanh();
                }
            }
        }
        LayerCache { cols, argmax, out }
    }
}

/// Valid cross-correlation with every kernel, bias, tanh, then max-pooling.
pub fn conv_forward(input: &Array3<f64>, layer: &ConvPoolLayer) -> Result<Array3<f64>> {
    let s = layer.spec;
    let (maps, h, w) = input.dim();
    if maps != layer.in_maps {
        return Err(Error::DimensionMismatch {
            expected: layer.in_maps,
            got: maps,
        });
    }
    if h < s.kernel_rows || w < s.kernel_cols {
        return Err(Error::Architecture(format!(
            "{h}x{w} input is smaller than the {}x{} kernel",
            s.kernel_rows, s.kernel_cols
        )));
    }
    let (ho, wo) = (h - s.kernel_rows + 1, w - s.kernel_cols + 1);
    if ho % s.pool_rows != 0 || wo % s.pool_cols != 0 {
        return Err(Error::IndivisiblePool {
            rows: ho,
            cols: wo,
            pool_rows: s.pool_rows,
            pool_cols: s.pool_cols,
        });
    }
    Ok(layer.forward_cached(input).out)
}

#[derive(Debug, Clone)]
struct Grads {
    layers: Vec<(Array2<f64>, Array1<f64>)>,
    out_w: Array2<f64>,
    out_b: Array1<f64>,
}

impl Grads {
    fn zeros(model: &CnnModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
                .collect(),
            out_w: Array2::zeros(model.out_w.dim()),
            out_b: Array1::zeros(model.out_b.len()),
        }
    }

    fn add(&mut self, o: &Grads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&o.layers) {
            *w += ow;
            *b += ob;
        }
        self.out_w += &o.out_w;
        self.out_b += &o.out_b;
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Stop once an epoch improves the mean loss by less than this.
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for CnnParams {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 50,
            lr: 0.05,
            min_improvement: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CnnFit {
    pub model: CnnModel,
    /// Mean per-example loss of each completed epoch.
    pub epoch_loss: Vec<f64>,
}

impl CnnModel {
    /// Randomly initialized network; weights are uniform in
    /// `±√(6 / (fan_in + fan_out))`, biases zero.
    pub fn new(arch: CnnArchitecture, seed: u64) -> Result<Self> {
        let flat = arch.flat_len()?;
        if arch.input_cols < MIN_EMBEDDING_DIM {
            log::warn!(
                "CNN input has {} embedding columns; at least {MIN_EMBEDDING_DIM} are recommended",
                arch.input_cols
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_maps = 1;
        let mut layers = Vec::new();
        for &spec in &arch.layers {
            let area = spec.kernel_rows * spec.kernel_cols;
            let scale = (6.0 / ((in_maps + spec.kernels) * area) as f64).sqrt();
            let weights = Array2::from_shape_fn((spec.kernels, in_maps * area), |_| {
                rng.gen_range(-scale..scale)
            });
            layers.push(ConvPoolLayer {
                in_maps,
                spec,
                weights,
                bias: Array1::zeros(spec.kernels),
            });
            in_maps = spec.kernels;
        }
        let scale = (6.0 / (flat + 2) as f64).sqrt();
        let out_w = Array2::from_shape_fn((2, flat), |_| rng.gen_range(-scale..scale));
        Ok(Self {
            arch,
            layers,
            out_w,
            out_b: Array1::zeros(2),
        })
    }

    /// All parameters zero; every output is sigmoid(0).
    pub fn zeros(arch: CnnArchitecture) -> Result<Self> {
        let mut m = Self::new(arch, 0)?;
        for l in &mut m.layers {
            l.weights.fill(0.0);
        }
        m.out_w.fill(0.0);
        Ok(m)
    }

    fn check_input(&self, x: &ReviewMatrix) -> Result<()> {
        let want = (self.arch.input_rows, self.arch.input_cols);
        if x.0.dim() != want {
            return Err(Error::Architecture(format!(
                "expected a {}x{} review matrix, got {}x{}",
                want.0,
                want.1,
                x.0.nrows(),
                x.0.ncols()
            )));
        }
        Ok(())
    }

    fn forward_all(&self, x: &ReviewMatrix) -> (Vec<LayerCache>, Array1<f64>) {
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        let first = x.0.view().insert_axis(ndarray::Axis(0)).to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let cache = if i == 0 {
                layer.forward_cached(&first)
            } else {
                layer.forward_cached(&caches[i - 1].out)
            };
            caches.push(cache);
        }
        let last = &caches[caches.len() - 1].out;
        let flat = last.as_slice().expect("standard layout");
        let z = self.out_w.dot(
            &ArrayView2::from_shape((flat.len(), 1), flat)
                .unwrap()
                .column(0),
        ) + &self.out_b;
        (caches, z)
    }

    /// Frames produced by each conv layer, for shape inspection.
    pub fn trace(&self, x: &ReviewMatrix) -> Result<Vec<Array3<f64>>> {
        self.check_input(x)?;
        Ok(self.forward_all(x).0.into_iter().map(|c| c.out).collect())
    }

    /// Sigmoid outputs for (negative, positive).
    pub fn forward(&self, x: &ReviewMatrix) -> Result<[f64; 2]> {
        self.check_input(x)?;
        let (_, z) = self.forward_all(x);
        Ok([sigmoid(z[0]), sigmoid(z[1])])
    }

    /// Argmax of the two outputs; a tie goes to positive.
    pub fn predict(&self, x: &ReviewMatrix) -> Result<Polarity> {
        let s = self.forward(x)?;
        Ok(Polarity::from_bit(s[1] >= s[0]))
    }

    /// Cross-entropy of both sigmoid outputs against the one-hot label.
    pub fn loss(&self, x: &ReviewMatrix, label: Polarity) -> Result<f64> {
        self.check_input(x)?;
        let (_, z) = self.forward_all(x);
        Ok(Self::loss_from_logits(&z, label))
    }

    fn loss_from_logits(z: &Array1<f64>, label: Polarity) -> f64 {
        (0..2)
            .map(|k| {
                let t = if k == label.index() { 1.0 } else { 0.0 };
                softplus(z[k]) - t * z[k]
            })
            .sum()
    }

    fn example_grad(&self, x: &ReviewMatrix, label: Polarity) -> (f64, Grads) {
        let (caches, z) = self.forward_all(x);
        let loss = Self::loss_from_logits(&z, label);
        let dz = Array1::from_shape_fn(2, |k| {
            sigmoid(z[k]) - if k == label.index() { 1.0 } else { 0.0 }
        });
        let last = &caches[caches.len() - 1].out;
        let flat = last.as_slice().expect("standard layout");
        let mut g = Grads::zeros(self);
        for k in 0..2 {
            for (dst, &f) in g.out_w.row_mut(k).iter_mut().zip(flat) {
                *dst = dz[k] * f;
            }
        }
        g.out_b.assign(&dz);
        let dflat = self.out_w.t().dot(&dz);
        let mut d_out = Array3::from_shape_vec(last.dim(), dflat.to_vec()).expect("shape");

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let cache = &caches[li];
            let s = layer.spec;
            let (kernels, hp, wp) = cache.out.dim();
            let plane = cache.cols.ncols();
            let mut dz = Array2::zeros((kernels, plane));
            let mut db = Array1::zeros(kernels);
            for k in 0..kernels {
                for i in 0..hp {
                    for j in 0..wp {
                        let a = cache.out[[k, i, j]];
                        let d = d_out[[k, i, j]] * (1.0 - a * a);
                        db[k] += d;
                        dz[[k, cache.argmax[(k * hp + i) * wp + j]]] += d;
                    }
                }
            }
            g.layers[li].0 = dz.dot(&cache.cols.t());
            g.layers[li].1 = db;
            if li > 0 {
                let dcols = layer.weights.t().dot(&dz);
                let shape = caches[li - 1].out.dim();
                d_out = col2im(&dcols, shape, s.kernel_rows, s.kernel_cols);
            }
        }
        (loss, g)
    }

    fn apply(&mut self, g: &Grads, step: f64) {
        for (l, (gw, gb)) in self.layers.iter_mut().zip(&g.layers) {
            l.weights.scaled_add(-step, gw);
            l.bias.scaled_add(-step, gb);
        }
        self.out_w.scaled_add(-step, &g.out_w);
        self.out_b.scaled_add(-step, &g.out_b);
    }

    /// All parameters flattened: each layer's weights then biases, then the
    /// output weights and biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend(l.weights.iter());
            v.extend(l.bias.iter());
        }
        v.extend(self.out_w.iter());
        v.extend(self.out_b.iter());
        v
    }

    /// Inverse of [`CnnModel::parameters`].
    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.parameters().len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        let mut src = values.iter();
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|p| *p = *src.next().unwrap());
        }
        self.out_w
            .iter_mut()
            .chain(self.out_b.iter_mut())
            .for_each(|p| *p = *src.next().unwrap());
        Ok(())
    }

    /// Loss of one example and its gradient in [`CnnModel::parameters`] order.
    pub fn loss_gradient(&self, x: &ReviewMatrix, label: Polarity) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let (loss, g) = self.example_grad(x, label);
        let mut v = Vec::new();
        for (w, b) in &g.layers {
            v.extend(w.iter());
            v.extend(b.iter());
        }
        v.extend(g.out_w.iter());
        v.extend(g.out_b.iter());
        Ok((loss, v))
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        fn u32le<W: Write>(out: &mut W, v: usize) -> std::io::Result<()> {
            out.write_all(&(v as u32).to_le_bytes())
        }
        fn f32s<'a, W: Write>(
            out: &mut W,
            vals: impl Iterator<Item = &'a f64>,
        ) -> std::io::Result<()> {
            for v in vals {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
            Ok(())
        }
        out.write_all(MAGIC)?;
        u32le(&mut out, self.layers.len())?;
        u32le(&mut out, self.arch.input_rows)?;
        u32le(&mut out, self.arch.input_cols)?;
        for l in &self.layers {
            let s = l.spec;
            for v in [
                l.in_maps,
                s.kernels,
                s.kernel_rows,
                s.kernel_cols,
                s.pool_rows,
                s.pool_cols,
            ] {
                u32le(&mut out, v)?;
            }
            f32s(&mut out, l.weights.iter())?;
            f32s(&mut out, l.bias.iter())?;
        }
        u32le(&mut out, self.out_w.nrows())?;
        u32le(&mut out, self.out_w.ncols())?;
        f32s(&mut out, self.out_w.iter())?;
        f32s(&mut out, self.out_b.iter())?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        fn u32le<R: Read>(input: &mut R) -> Result<usize> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        }
        fn f32s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 4];
            input.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect())
        }
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a CNN model file".into()));
        }
        let count = u32le(&mut input)?;
        let input_rows = u32le(&mut input)?;
        let input_cols = u32le(&mut input)?;
        let mut layers = Vec::with_capacity(count);
        let mut specs = Vec::with_capacity(count);
        for _ in 0..count {
            let in_maps = u32le(&mut input)?;
            let spec = ConvPoolSpec {
                kernels: u32le(&mut input)?,
                kernel_rows: u32le(&mut input)?,
                kernel_cols: u32le(&mut input)?,
                pool_rows: u32le(&mut input)?,
                pool_cols: u32le(&mut input)?,
            };
            let cols = in_maps * spec.kernel_rows * spec.kernel_cols;
            let weights = Array2::from_shape_vec(
                (spec.kernels, cols),
                f32s(&mut input, spec.kernels * cols)?,
            )
            .map_err(|e| Error::Parse(e.to_string()))?;
            let bias = Array1::from(f32s(&mut input, spec.kernels)?);
            specs.push(spec);
            layers.push(ConvPoolLayer {
                in_maps,
                spec,
                weights,
                bias,
            });
        }
        let arch = CnnArchitecture {
            input_rows,
            input_cols,
            layers: specs,
        };
        let flat = arch.flat_len()?;
        let rows = u32le(&mut input)?;
        let cols = u32le(&mut input)?;
        if rows != 2 || cols != flat {
            return Err(Error::DimensionMismatch {
                expected: flat,
                got: cols,
            });
        }
        let out_w = Array2::from_shape_vec((rows, cols), f32s(&mut input, rows * cols)?)
            .map_err(|e| Error::Parse(e.to_string()))?;
        let out_b = Array1::from(f32s(&mut input, 2)?);
        Ok(Self {
            arch,
            layers,
            out_w,
            out_b,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(BufReader::new(file))
    }
}

/// Mini-batch SGD on the summed cross-entropy of both outputs. Example
/// gradients inside a batch may be computed in parallel; they are summed in
/// index order so the result is the same for any thread count.
pub fn cnn_train(
    mut model: CnnModel,
    data: &[(ReviewMatrix, Polarity)],
    params: &CnnParams,
) -> Result<CnnFit> {
    if data.is_empty() {
        return Err(Error::Empty("CNN training data"));
    }
    for (x, _) in data {
        model.check_input(x)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history: Vec<f64> = Vec::new();
    let batch = params.batch_size.max(1);
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let parts: Vec<(f64, Grads)> = chunk
                .par_iter()
                .map(|&i| model.example_grad(&data[i].0, data[i].1))
                .collect();
            let mut sum = Grads::zeros(&model);
            for (l, g) in &parts {
                total += l;
                sum.add(g);
            }
            model.apply(&sum, params.lr / chunk.len() as f64);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1 });
        }
        log::debug!("cnn epoch {} loss {mean:.6}", epoch + 1);
        let stop = history
            .last()
            .is_some_and(|&prev| prev - mean < params.min_improvement);
        history.push(mean);
        if stop {
            break;
        }
    }
    Ok(CnnFit {
        model,
        epoch_loss: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_arch() -> CnnArchitecture {
        CnnArchitecture {
            input_rows: 6,
            input_cols: 6,
            layers: vec![ConvPoolSpec {
                kernels: 1,
                kernel_rows: 3,
                kernel_cols: 3,
                pool_rows: 2,
                pool_cols: 1,
            }],
        }
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ReviewMatrix {
        ReviewMatrix(Array2::from_shape_fn((rows, cols), |_| {
            rng.gen_range(-1.0..1.0)
        }))
    }

    #[test]
    fn default_frame_chain() {
        let arch = CnnArchitecture::default();
        assert_eq!(
            arch.frame_chain().unwrap(),
            vec![(60, 60), (28, 56), (12, 52), (4, 48)]
        );
        assert_eq!(arch.flat_len().unwrap(), 9600);
    }

    #[test]
    fn architecture_rules() {
        let mut arch = CnnArchitecture::default();
        arch.layers[0].pool_cols = 2;
        assert!(matches!(arch.frame_chain(), Err(Error::Architecture(_))));
        let mut arch = CnnArchitecture::default();
        arch.layers[1].pool_rows = 5;
        assert!(matches!(
            arch.frame_chain(),
            Err(Error::IndivisiblePool { .. })
        ));
    }

    #[test]
    fn maxpool_cases() {
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(maxpool(m.view(), 2, 2).unwrap(), array![[4.0]]);
        assert_eq!(maxpool(m.view(), 1, 1).unwrap(), m);
        let big = Array2::from_shape_fn((60, 60), |(i, j)| (i * 60 + j) as f64);
        let pooled = maxpool(big.view(), 10, 10).unwrap();
        assert_eq!(pooled.dim(), (6, 6));
        assert_eq!(pooled[[0, 0]], (9 * 60 + 9) as f64);
        assert!(maxpool(m.view(), 3, 1).is_err());
    }

    #[test]
    fn hand_convolution() {
        let layer = ConvPoolLayer {
            in_maps: 1,
            spec: ConvPoolSpec {
                kernels: 1,
                kernel_rows: 2,
                kernel_cols: 2,
                pool_rows: 1,
                pool_cols: 1,
            },
            weights: Array2::ones((1, 4)),
            bias: Array1::zeros(1),
        };
        let x =
            Array3::from_shape_vec((1, 3, 3), (1..=9).map(|v| v as f64 * 0.1).collect()).unwrap();
        let out = conv_forward(&x, &layer).unwrap();
        let sums = [[1.2, 1.6], [2.4, 2.8]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((out[[0, i, j]] - f64::tanh(sums[i][j])).abs() < 1e-12);
            }
        }
        let zero = ConvPoolLayer {
            weights: Array2::zeros((1, 4)),
            ..layer
        };
        assert!(conv_forward(&x, &zero).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_model_outputs_half() {
        let model = CnnModel::zeros(CnnArchitecture::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(60, 60, &mut rng);
        assert_eq!(model.forward(&x).unwrap(), [0.5, 0.5]);
        assert_eq!(model.predict(&x).unwrap(), Polarity::Positive);
        let frames = model.trace(&x).unwrap();
        let dims: Vec<_> = frames.iter().map(|f| f.dim()).collect();
        assert_eq!(dims, vec![(40, 28, 56), (50, 12, 52), (50, 4, 48)]);
        assert!(model.forward(&random_matrix(59, 60, &mut rng)).is_err());
    }

    #[test]
    fn flat_parameters_round_trip() {
        let model = CnnModel::new(tiny_arch(), 3).unwrap();
        let p = model.parameters();
        let mut other = CnnModel::zeros(tiny_arch()).unwrap();
        other.set_parameters(&p).unwrap();
        assert_eq!(other, model);
        assert!(other.set_parameters(&p[1..]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(6, 6, &mut rng);
        let (loss, g) = model.loss_gradient(&x, Polarity::Negative).unwrap();
        assert_eq!(g.len(), p.len());
        assert!((loss - model.loss(&x, Polarity::Negative).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let model = CnnModel::new(tiny_arch(), 7).unwrap();
        let x = random_matrix(6, 6, &mut rng);
        let label = Polarity::Positive;
        let (_, g) = model.example_grad(&x, label);
        let h = 1e-6;
        let check = |analytic: f64, perturb: &dyn Fn(&mut CnnModel, f64)| {
            let mut plus = model.clone();
            perturb(&mut plus, h);
            let mut minus = model.clone();
            perturb(&mut minus, -h);
            let fd = (plus.loss(&x, label).unwrap() - minus.loss(&x, label).unwrap()) / (2.0 * h);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-7);
            assert!(rel < 1e-4, "fd {fd} analytic {analytic}");
        };
        for k in 0..9 {
            check(g.layers[0].0[[0, k]], &|m, d| {
                m.layers[0].weights[[0, k]] += d
            });
        }
        check(g.layers[0].1[0], &|m, d| m.layers[0].bias[0] += d);
        for c in 0..2 {
            for k in 0..8 {
                check(g.out_w[[c, k]], &|m, d| m.out_w[[c, k]] += d);
            }
            check(g.out_b[c], &|m, d| m.out_b[c] += d);
        }
    }

    #[test]
    fn two_layer_gradients_match() {
        let arch = CnnArchitecture {
            input_rows: 10,
            input_cols: 5,
            layers: vec![
                ConvPoolSpec {
                    kernels: 2,
                    kernel_rows: 3,
                    kernel_cols: 2,
                    pool_rows: 2,
                    pool_cols: 1,
                },
                ConvPoolSpec {
                    kernels: 2,
                    kernel_rows: 2,
                    kernel_cols: 2,
                    pool_rows: 1,
                    pool_cols: 1,
                },
            ],
        };
        let model = CnnModel::new(arch, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(10, 5, &mut rng);
        let (_, g) = model.example_grad(&x, Polarity::Negative);
        let h = 1e-6;
        for (li, layer) in model.layers.iter().enumerate() {
            for idx in 0..layer.weights.len() {
                let (r, c) = (idx / layer.weights.ncols(), idx % layer.weights.ncols());
                let mut p = model.clone();
                p.layers[li].weights[[r, c]] += h;
                let mut m = model.clone();
                m.layers[li].weights[[r, c]] -= h;
                let fd = (p.loss(&x, Polarity::Negative).unwrap()
                    - m.loss(&x, Polarity::Negative).unwrap())
                    / (2.0 * h);
                let a = g.layers[li].0[[r, c]];
                assert!((fd - a).abs() / fd.abs().max(a.abs()).max(1e-7) < 1e-4);
            }
        }
    }

    #[test]
    fn zero_rate_leaves_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data: Vec<_> = (0..6)
            .map(|i| {
                (
                    random_matrix(6, 6, &mut rng),
                    Polarity::from_bit(i % 2 == 0),
                )
            })
            .collect();
        let model = CnnModel::new(tiny_arch(), 1).unwrap();
        let params = CnnParams {
            lr: 0.0,
            epochs: 3,
            batch_size: 4,
            min_improvement: f64::NEG_INFINITY,
            seed: 0,
        };
        let fit = cnn_train(model.clone(), &data, &params).unwrap();
        assert_eq!(fit.model, model);
    }

    #[test]
    fn review_matrix_repeats_and_truncates() {
        let words: Vec<(String, Vec<f32>)> = (0..100)
            .map(|i| (format!("w{i}"), vec![i as f32, -(i as f32)]))
            .collect();
        let model = EmbeddingModel::from_vectors(2, words).unwrap();
        let toks = |r: std::ops::Range<usize>| r.map(|i| format!("w{i}")).collect::<Vec<_>>();
        let m = build_review_matrix(&toks(1..4), &model, 6).unwrap();
        let firsts: Vec<f64> = m.0.column(0).to_vec();
        assert_eq!(firsts, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let m = build_review_matrix(&toks(0..100), &model, 60).unwrap();
        assert_eq!(
            m.0.column(0).to_vec(),
            (0..60).map(|i| i as f64).collect::<Vec<_>>()
        );
        let unknown = vec!["zzz".to_string()];
        assert!(matches!(
            build_review_matrix(&unknown, &model, 6),
            Err(Error::NoKnownTokens)
        ));
    }

    #[test]
    fn batch_context_does_not_matter() {
        let model = CnnModel::new(tiny_arch(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<_> = (0..5).map(|_| random_matrix(6, 6, &mut rng)).collect();
        let batch: Vec<_> = xs.par_iter().map(|x| model.forward(x).unwrap()).collect();
        for (x, b) in xs.iter().zip(&batch) {
            assert_eq!(model.forward(x).unwrap(), *b);
        }
    }

    #[test]
    fn binary_round_trip() {
        let model = CnnModel::new(tiny_arch(), 4).unwrap();
        let mut buf = Vec::new();
        model.write_binary(&mut buf).unwrap();
        let back = CnnModel::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.arch, model.arch);
        for (a, b) in back.out_w.iter().zip(model.out_w.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
