//! Desk-scale trainable encoder with hand-written analytic gradients.
//!
//! The architecture is the minimal residual stack: a linear (or lookup)
//! embedding, `L` blocks of [attention + residual, position-wise
//! feed-forward + residual], mean pooling over tokens and a linear
//! classifier. No layer normalization, so the attention variants are
//! compared on equal footing. Training runs entirely in f64; the same code
//! path serves the finite-difference gradient checks.
//!
//! The differentiable attention distance is `sqrt(|q - k|^2 + 1e-12)`: the
//! softening keeps the derivative `(q - k) / dist` bounded through
//! coincident pairs (a weight-tied self-pair contributes exactly zero
//! gradient, its two-sided limit), while shifting scores by at most one part
//! in 1e-12 of the kernel scale.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::attention::{AblationMode, AttentionConfig, AttentionVariant, Manifold, ProjectionMode};
use crate::error::{Error, Result};
use crate::spectral::spectral_gap;
use crate::synthetic::{Sample, SyntheticTask};

/// Softening constant added under the square root of the attention distance.
pub const DIST_EPS: f64 = 1e-12;

/// Input layer shape: continuous token vectors through a learned linear map,
/// or discrete ids through a lookup table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InputSpec {
    Vectors { dim: usize },
    Tokens { vocab: usize },
}

/// Complete architecture description.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EncoderSpec {
    pub depth: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Feed-forward hidden width.
    pub hidden: usize,
    pub input: InputSpec,
    pub max_seq_len: usize,
    pub num_classes: usize,
    pub attention: AttentionConfig,
    pub projection: ProjectionMode,
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidParameter {
                name: "depth",
                reason: "need at least one block",
                value: 0.0,
            });
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::DimensionMismatch(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.attention.d != self.d_model || self.attention.heads != self.heads {
            return Err(Error::DimensionMismatch(
                "attention config disagrees with encoder dims".into(),
            ));
        }
        if self.attention.manifold != Manifold::Euclidean {
            return Err(Error::InvalidParameter {
                name: "manifold",
                reason: "the trainable encoder supports Euclidean attention only",
                value: 1.0,
            });
        }
        if self.num_classes < 2 || self.hidden == 0 || self.max_seq_len == 0 {
            return Err(Error::DimensionMismatch(
                "need >= 2 classes, hidden >= 1, max_seq_len >= 1".into(),
            ));
        }
        Ok(())
    }

    fn d_h(&self) -> usize {
        self.d_model / self.heads
    }

    fn input_rows_cols(&self) -> (usize, usize) {
        match self.input {
            // Linear map from ambient vectors: d_model x dim.
            InputSpec::Vectors { dim } => (self.d_model, dim),
            // Lookup table: vocab x d_model.
            InputSpec::Tokens { vocab } => (vocab, self.d_model),
        }
    }
}

/// Query/key parameters under each projection constraint.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum QkParams {
    /// Free `W_Q`, `W_K`.
    General { w_q: DMatrix<f64>, w_k: DMatrix<f64> },
    /// `W_Q = I`; `W_K` is the Cayley image of the skew part of a free seed,
    /// so it stays exactly orthogonal through every optimizer step.
    Orthogonal { seed_k: DMatrix<f64> },
    /// `W_Q = W_K = I`, no parameters.
    Tied,
}

/// Parameters of one block.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LayerParams {
    pub qk: QkParams,
    pub w_v: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

/// All trainable tensors.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Params {
    pub embed_w: DMatrix<f64>,
    pub embed_b: DVector<f64>,
    pub layers: Vec<LayerParams>,
    pub head_w: DMatrix<f64>,
    pub head_b: DVector<f64>,
}

fn uniform_init<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> DMatrix<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl Params {
    /// Symmetric-uniform initialization scaled by `1/sqrt(fan_in)`; biases
    /// and Cayley seeds start at zero (identity projections).
    pub fn init(spec: &EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.d_model;
        let (er, ec) = spec.input_rows_cols();
        let embed_fan_in = match spec.input {
            InputSpec::Vectors { dim } => dim,
            InputSpec::Tokens { .. } => d,
        };
        let embed_w = uniform_init(&mut rng, er, ec, embed_fan_in);
        let embed_b = DVector::zeros(d);
        let mut layers = Vec::with_capacity(spec.depth);
        for _ in 0..spec.depth {
            let qk = match spec.projection {
                ProjectionMode::General => QkParams::General {
                    w_q: uniform_init(&mut rng, d, d, d),
                    w_k: uniform_init(&mut rng, d, d, d),
                },
                ProjectionMode::Orthogonal => QkParams::Orthogonal { seed_k: DMatrix::zeros(d, d) },
                ProjectionMode::WeightTiedIdentity => QkParams::Tied,
            };
            layers.push(LayerParams {
                qk,
                w_v: uniform_init(&mut rng, d, d, d),
                w1: uniform_init(&mut rng, spec.hidden, d, d),
                b1: DVector::zeros(spec.hidden),
                w2: uniform_init(&mut rng, d, spec.hidden, spec.hidden),
                b2: DVector::zeros(d),
            });
        }
        let head_w = uniform_init(&mut rng, spec.num_classes, d, d);
        let head_b = DVector::zeros(spec.num_classes);
        Ok(Self { embed_w, embed_b, layers, head_w, head_b })
    }

    /// Zero-valued clone, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.embed_w.fill(0.0);
        out.embed_b.fill(0.0);
        for l in &mut out.layers {
            match &mut l.qk {
                QkParams::General { w_q, w_k } => {
                    w_q.fill(0.0);
                    w_k.fill(0.0);
                }
                QkParams::Orthogonal { seed_k } => seed_k.fill(0.0),
                QkParams::Tied => {}
            }
            l.w_v.fill(0.0);
            l.w1.fill(0.0);
            l.b1.fill(0.0);
            l.w2.fill(0.0);
            l.b2.fill(0.0);
        }
        out.head_w.fill(0.0);
        out.head_b.fill(0.0);
        out
    }

    /// Named tensors in canonical (flattening) order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["embed_w".into(), "embed_b".into()];
        for (i, l) in self.layers.iter().enumerate() {
            match &l.qk {
                QkParams::General { .. } => {
                    names.push(format!("layer{i}.w_q"));
                    names.push(format!("layer{i}.w_k"));
                }
                QkParams::Orthogonal { .. } => names.push(format!("layer{i}.seed_k")),
                QkParams::Tied => {}
            }
            for t in ["w_v", "w1", "b1", "w2", "b2"] {
                names.push(format!("layer{i}.{t}"));
            }
        }
        names.push("head_w".into());
        names.push("head_b".into());
        names
    }

    fn visit<'a>(&'a self, mut f: impl FnMut(&'a [f64])) {
        f(self.embed_w.as_slice());
        f(self.embed_b.as_slice());
        for l in &self.layers {
            match &l.qk {
                QkParams::General { w_q, w_k } => {
                    f(w_q.as_slice());
                    f(w_k.as_slice());
                }
                QkParams::Orthogonal { seed_k } => f(seed_k.as_slice()),
                QkParams::Tied => {}
            }
            f(l.w_v.as_slice());
            f(l.w1.as_slice());
            f(l.b1.as_slice());
            f(l.w2.as_slice());
            f(l.b2.as_slice());
        }
        f(self.head_w.as_slice());
        f(self.head_b.as_slice());
    }

    fn visit_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        f(self.embed_w.as_mut_slice());
        f(self.embed_b.as_mut_slice());
        for l in &mut self.layers {
            match &mut l.qk {
                QkParams::General { w_q, w_k } => {
                    f(w_q.as_mut_slice());
                    f(w_k.as_mut_slice());
                }
                QkParams::Orthogonal { seed_k } => f(seed_k.as_mut_slice()),
                QkParams::Tied => {}
            }
            f(l.w_v.as_mut_slice());
            f(l.w1.as_mut_slice());
            f(l.b1.as_mut_slice());
            f(l.w2.as_mut_slice());
            f(l.b2.as_mut_slice());
        }
        f(self.head_w.as_mut_slice());
        f(self.head_b.as_mut_slice());
    }

    /// Total scalar parameter count.
    pub fn len(&self) -> usize {
        let mut n = 0;
        self.visit(|s| n += s.len());
        n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flatten every tensor into one vector (canonical order).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.visit(|s| out.extend_from_slice(s));
        out
    }

    /// Spans of each named tensor inside the flattened vector.
    pub fn layout(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let names = self.tensor_names();
        let mut spans = Vec::new();
        let mut offset = 0;
        let mut idx = 0;
        self.visit(|s| {
            spans.push((names[idx].clone(), offset..offset + s.len()));
            offset += s.len();
            idx += 1;
        });
        spans
    }

    /// Overwrite all tensors from a flat vector (canonical order).
    pub fn unflatten_from(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "flat vector has {} entries, parameters have {}",
                flat.len(),
                self.len()
            )));
        }
        let mut offset = 0;
        self.visit_mut(|s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        Ok(())
    }

    /// In-place `self += scale * other`, matching shapes.
    pub fn axpy(&mut self, scale: f64, other: &Self) {
        let flat = other.flatten();
        let mut offset = 0;
        self.visit_mut(|s| {
            for v in s.iter_mut() {
                *v += scale * flat[offset];
                offset += 1;
            }
        });
    }
}

/// Skew part of a free seed matrix.
fn skew(seed: &DMatrix<f64>) -> DMatrix<f64> {
    (seed - seed.transpose()) * 0.5
}

/// Materialize `W_K` from a Cayley seed: `(I - S)^-1 (I + S)` with
/// `S = (seed - seed^T)/2`.
pub fn realize_w_k(seed_k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = skew(seed_k);
    let d = s.nrows();
    let eye = DMatrix::identity(d, d);
    (&eye - &s)
        .try_inverse()
        .map(|inv| inv * (&eye + &s))
        .ok_or_else(|| Error::NumericalDegeneracy("Cayley factor is singular".into()))
}

struct RealizedQk {
    w_q: Option<DMatrix<f64>>,
    w_k: Option<DMatrix<f64>>,
    /// Kept for the Cayley backward pass.
    skew_k: Option<DMatrix<f64>>,
}

fn realize_qk(qk: &QkParams) -> Result<RealizedQk> {
    Ok(match qk {
        QkParams::General { w_q, w_k } => RealizedQk {
            w_q: Some(w_q.clone()),
            w_k: Some(w_k.clone()),
            skew_k: None,
        },
        QkParams::Orthogonal { seed_k } => {
            let s = skew(seed_k);
            let d = s.nrows();
            let eye = DMatrix::identity(d, d);
            let inv = (&eye - &s)
                .try_inverse()
                .ok_or_else(|| Error::NumericalDegeneracy("Cayley factor is singular".into()))?;
            RealizedQk { w_q: None, w_k: Some(inv * (&eye + &s)), skew_k: Some(s) }
        }
        QkParams::Tied => RealizedQk { w_q: None, w_k: None, skew_k: None },
    })
}

/// Project onto one head's rows: `e * w_h^T`, or a column slice when the
/// projection is the identity.
fn head_proj(e: &DMatrix<f64>, w: Option<&DMatrix<f64>>, h: usize, d_h: usize) -> DMatrix<f64> {
    match w {
        Some(w) => e * w.rows(h * d_h, d_h).transpose(),
        None => e.columns(h * d_h, d_h).into_owned(),
    }
}

/// Randomized attention suppression applied at evaluation time.
#[derive(Debug, Clone, Copy)]
pub struct AblationSpec {
    pub p: f64,
    pub mode: AblationMode,
    pub seed: u64,
}

struct HeadCache {
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    a: DMatrix<f64>,
    /// FNA only: kernel values and softened distances.
    phi: Option<DMatrix<f64>>,
    dist: Option<DMatrix<f64>>,
    row_sums: Option<Vec<f64>>,
}

struct LayerCache {
    e_in: DMatrix<f64>,
    heads: Vec<HeadCache>,
    e_mid: DMatrix<f64>,
    z: DMatrix<f64>,
}

struct ForwardCache {
    e0: DMatrix<f64>,
    layers: Vec<LayerCache>,
    pooled: DVector<f64>,
    logits: DVector<f64>,
}

fn embed(spec: &EncoderSpec, params: &Params, sample: &Sample) -> Result<DMatrix<f64>> {
    let n = sample.tokens.nrows();
    if n == 0 || n > spec.max_seq_len {
        return Err(Error::DimensionMismatch(format!(
            "sequence length {n} outside [1, {}]",
            spec.max_seq_len
        )));
    }
    match spec.input {
        InputSpec::Vectors { dim } => {
            if sample.tokens.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "ambient dim {} vs input spec {dim}",
                    sample.tokens.ncols()
                )));
            }
            let mut e = &sample.tokens * params.embed_w.transpose();
            for i in 0..n {
                for c in 0..spec.d_model {
                    e[(i, c)] += params.embed_b[c];
                }
            }
            Ok(e)
        }
        InputSpec::Tokens { vocab } => {
            let mut e = DMatrix::zeros(n, spec.d_model);
            for i in 0..n {
                let id = sample.tokens[(i, 0)] as usize;
                if sample.tokens.ncols() != 1 || id >= vocab {
                    return Err(Error::DimensionMismatch(format!(
                        "token id column required with ids < {vocab}"
                    )));
                }
                for c in 0..spec.d_model {
                    e[(i, c)] = params.embed_w[(id, c)] + params.embed_b[c];
                }
            }
            Ok(e)
        }
    }
}

/// Kernel value and its derivative with respect to the squared distance.
fn fna_phi_and_dphi(spec: &EncoderSpec, sq: f64) -> (f64, f64, f64) {
    let kappa = spec.attention.kappa;
    let dist = (sq + DIST_EPS).sqrt();
    if spec.attention.alpha.is_local() {
        // exp(-(sq + eps)/kappa^2): derivative in sq is -phi/kappa^2.
        let phi = (-(sq + DIST_EPS) / (kappa * kappa)).exp();
        (phi, -phi / (kappa * kappa), dist)
    } else {
        let e = spec.attention.d_m() as f64 + spec.attention.alpha.value();
        let base = 1.0 + dist / kappa;
        let phi = base.powf(-e);
        // d phi / d sq = -e base^-(e+1) / (2 kappa dist).
        let dphi = -e * base.powf(-e - 1.0) / (2.0 * kappa * dist);
        (phi, dphi, dist)
    }
}

fn forward_sample(
    spec: &EncoderSpec,
    params: &Params,
    sample: &Sample,
    ablation: Option<(&AblationSpec, u64)>,
) -> Result<ForwardCache> {
    let n = sample.tokens.nrows();
    let d = spec.d_model;
    let d_h = spec.d_h();
    let mut e = embed(spec, params, sample)?;
    let e0 = e.clone();
    let mut layers = Vec::with_capacity(spec.depth);
    for (li, layer) in params.layers.iter().enumerate() {
        let rq = realize_qk(&layer.qk)?;
        let e_in = e.clone();
        let mut heads = Vec::with_capacity(spec.heads);
        let mut attn_out = DMatrix::zeros(n, d);
        for h in 0..spec.heads {
            let q = head_proj(&e_in, rq.w_q.as_ref(), h, d_h);
            let k = head_proj(&e_in, rq.w_k.as_ref(), h, d_h);
            let v = &e_in * layer.w_v.rows(h * d_h, d_h).transpose();
            let (mut a, phi, dist, row_sums) = match spec.attention.variant {
                AttentionVariant::Fna => {
                    let mut phi = DMatrix::zeros(n, n);
                    let mut dist = DMatrix::zeros(n, n);
                    for i in 0..n {
                        for j in 0..n {
                            let mut sq = 0.0;
                            for t in 0..d_h {
                                let diff = q[(i, t)] - k[(j, t)];
                                sq += diff * diff;
                            }
                            let (p, _, dst) = fna_phi_and_dphi(spec, sq);
                            phi[(i, j)] = p;
                            dist[(i, j)] = dst;
                        }
                    }
                    let mut a = phi.clone();
                    let mut sums = vec![0.0; n];
                    for i in 0..n {
                        let s: f64 = a.row(i).iter().sum();
                        sums[i] = s;
                        for j in 0..n {
                            a[(i, j)] /= s;
                        }
                    }
                    (a, Some(phi), Some(dist), Some(sums))
                }
                AttentionVariant::DotProduct => {
                    let c = &q * k.transpose() / spec.attention.kappa;
                    let mut a = DMatrix::zeros(n, n);
                    for i in 0..n {
                        let mut max = f64::NEG_INFINITY;
                        for j in 0..n {
                            max = max.max(c[(i, j)]);
                        }
                        let mut s = 0.0;
                        for j in 0..n {
                            let v = (c[(i, j)] - max).exp();
                            a[(i, j)] = v;
                            s += v;
                        }
                        for j in 0..n {
                            a[(i, j)] /= s;
                        }
                    }
                    (a, None, None, None)
                }
            };
            if let Some((ab, draw_seed)) = ablation {
                apply_ablation(&mut a, spec.attention.variant, ab, draw_seed, li, h);
            }
            let o = &a * &v;
            for i in 0..n {
                for t in 0..d_h {
                    attn_out[(i, h * d_h + t)] = o[(i, t)];
                }
            }
            heads.push(HeadCache { q, k, v, a, phi, dist, row_sums });
        }
        let e_mid = &e_in + attn_out;
        let mut z = &e_mid * layer.w1.transpose();
        for i in 0..n {
            for c in 0..spec.hidden {
                z[(i, c)] += layer.b1[c];
            }
        }
        let relu = z.map(|v| v.max(0.0));
        let mut e_out = &e_mid + relu * layer.w2.transpose();
        for i in 0..n {
            for c in 0..d {
                e_out[(i, c)] += layer.b2[c];
            }
        }
        layers.push(LayerCache { e_in, heads, e_mid, z });
        e = e_out;
    }
    let mut pooled = DVector::zeros(d);
    for c in 0..d {
        pooled[c] = e.column(c).sum() / n as f64;
    }
    let logits = &params.head_w * &pooled + &params.head_b;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NanProduced("classifier logits"));
    }
    Ok(ForwardCache { e0, layers, pooled, logits })
}

/// Suppress attention in one head's weight matrix, with the degenerate-row
/// convention matching the variant: kernel rows go to zero (pure residual),
/// softmax rows go uniform.
fn apply_ablation(
    a: &mut DMatrix<f64>,
    variant: AttentionVariant,
    ab: &AblationSpec,
    draw_seed: u64,
    layer: usize,
    head: usize,
) {
    let n = a.nrows();
    let stream = ab
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(draw_seed)
        .wrapping_add((layer as u64) << 32)
        .wrapping_add(head as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut touched = vec![false; n];
    match ab.mode {
        AblationMode::Edges => {
            for i in 0..n {
                for j in 0..n {
                    if rng.random::<f64>() < ab.p {
                        touched[i] = true;
                        a[(i, j)] = 0.0;
                    }
                }
            }
        }
        AblationMode::Nodes => {
            for j in 0..n {
                if rng.random::<f64>() < ab.p {
                    for i in 0..n {
                        touched[i] = true;
                        a[(i, j)] = 0.0;
                    }
                }
            }
        }
    }
    for i in 0..n {
        if !touched[i] {
            continue;
        }
        let s: f64 = a.row(i).iter().sum();
        if s > 0.0 {
            for j in 0..n {
                a[(i, j)] /= s;
            }
        } else if variant == AttentionVariant::DotProduct {
            for j in 0..n {
                a[(i, j)] = 1.0 / n as f64;
            }
        }
    }
}

/// Logits for one sequence.
pub fn forward(spec: &EncoderSpec, params: &Params, sample: &Sample) -> Result<DVector<f64>> {
    Ok(forward_sample(spec, params, sample, None)?.logits)
}

fn softmax_vec(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.map(|v| (v - max).exp());
    let s = p.sum();
    p /= s;
    p
}

/// Cross-entropy loss of one sample.
pub fn loss(spec: &EncoderSpec, params: &Params, sample: &Sample) -> Result<f64> {
    let logits = forward(spec, params, sample)?;
    let p = softmax_vec(&logits);
    Ok(-p[sample.label].max(1e-300).ln())
}

fn backward_sample(
    spec: &EncoderSpec,
    params: &Params,
    sample: &Sample,
    cache: &ForwardCache,
    grads: &mut Params,
) -> Result<f64> {
    let n = sample.tokens.nrows();
    let d = spec.d_model;
    let d_h = spec.d_h();
    let p = softmax_vec(&cache.logits);
    let loss = -p[sample.label].max(1e-300).ln();
    let mut g_logits = p;
    g_logits[sample.label] -= 1.0;

    // Classifier head.
    grads.head_w += &g_logits * cache.pooled.transpose();
    grads.head_b += &g_logits;
    let g_pooled = params.head_w.transpose() * &g_logits;
    // Mean pooling spreads the gradient uniformly over tokens.
    let mut g_e = DMatrix::zeros(n, d);
    for i in 0..n {
        for c in 0..d {
            g_e[(i, c)] = g_pooled[c] / n as f64;
        }
    }

    for (li, layer) in params.layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];
        let gl = &mut grads.layers[li];
        // Feed-forward: e_out = e_mid + relu(z) w2^T + b2.
        let relu = lc.z.map(|v| v.max(0.0));
        gl.w2 += g_e.transpose() * &relu;
        for c in 0..d {
            gl.b2[c] += g_e.column(c).sum();
        }
        let g_relu = &g_e * &layer.w2;
        let mut g_z = g_relu;
        for i in 0..n {
            for c in 0..spec.hidden {
                if lc.z[(i, c)] <= 0.0 {
                    g_z[(i, c)] = 0.0;
                }
            }
        }
        gl.w1 += g_z.transpose() * &lc.e_mid;
        for c in 0..spec.hidden {
            gl.b1[c] += g_z.column(c).sum();
        }
        let g_mid = g_e + &g_z * &layer.w1;

        // Attention: e_mid = e_in + concat_h(A_h V_h).
        let rq = realize_qk(&layer.qk)?;
        let mut g_in = g_mid.clone();
        let mut g_wk_full: Option<DMatrix<f64>> = match layer.qk {
            QkParams::Orthogonal { .. } => Some(DMatrix::zeros(d, d)),
            _ => None,
        };
        for h in 0..spec.heads {
            let hc = &lc.heads[h];
            let g_o = g_mid.columns(h * d_h, d_h).into_owned();
            let g_a = &g_o * hc.v.transpose();
            let g_v = hc.a.transpose() * &g_o;
            // Value path: v = e_in W_vh^T.
            {
                let mut gw = gl.w_v.rows_mut(h * d_h, d_h);
                gw += g_v.transpose() * &lc.e_in;
            }
            g_in += &g_v * layer.w_v.rows(h * d_h, d_h);

            // Normalization backward.
            let mut g_q = DMatrix::zeros(n, d_h);
            let mut g_k = DMatrix::zeros(n, d_h);
            match spec.attention.variant {
                AttentionVariant::Fna => {
                    let phi = hc.phi.as_ref().expect("fna cache");
                    let dist = hc.dist.as_ref().expect("fna cache");
                    let sums = hc.row_sums.as_ref().expect("fna cache");
                    let kappa = spec.attention.kappa;
                    let local = spec.attention.alpha.is_local();
                    let tail = spec.attention.d_m() as f64 + spec.attention.alpha.value();
                    for i in 0..n {
                        let mut dot = 0.0;
                        for j in 0..n {
                            dot += g_a[(i, j)] * hc.a[(i, j)];
                        }
                        for j in 0..n {
                            let g_phi = (g_a[(i, j)] - dot) / sums[i];
                            let dphi_dsq = if local {
                                -phi[(i, j)] / (kappa * kappa)
                            } else {
                                let base = 1.0 + dist[(i, j)] / kappa;
                                -tail * phi[(i, j)] / (base * kappa * 2.0 * dist[(i, j)])
                            };
                            let g_sq = g_phi * dphi_dsq;
                            for t in 0..d_h {
                                let diff = hc.q[(i, t)] - hc.k[(j, t)];
                                g_q[(i, t)] += 2.0 * g_sq * diff;
                                g_k[(j, t)] -= 2.0 * g_sq * diff;
                            }
                        }
                    }
                }
                AttentionVariant::DotProduct => {
                    let kappa = spec.attention.kappa;
                    let mut g_c = DMatrix::zeros(n, n);
                    for i in 0..n {
                        let mut dot = 0.0;
                        for j in 0..n {
                            dot += g_a[(i, j)] * hc.a[(i, j)];
                        }
                        for j in 0..n {
                            g_c[(i, j)] = hc.a[(i, j)] * (g_a[(i, j)] - dot) / kappa;
                        }
                    }
                    g_q += &g_c * &hc.k;
                    g_k += g_c.transpose() * &hc.q;
                }
            }

            // Query path.
            match (&layer.qk, &rq.w_q) {
                (QkParams::General { .. }, Some(w_q)) => {
                    if let QkParams::General { .. } = layer.qk {
                        if let QkParams::General { w_q: gw_q, .. } = &mut gl.qk {
                            let mut slice = gw_q.rows_mut(h * d_h, d_h);
                            slice += g_q.transpose() * &lc.e_in;
                        }
                    }
                    g_in += &g_q * w_q.rows(h * d_h, d_h);
                }
                _ => {
                    // Identity projection: gradient lands on the slice.
                    for i in 0..n {
                        for t in 0..d_h {
                            g_in[(i, h * d_h + t)] += g_q[(i, t)];
                        }
                    }
                }
            }
            // Key path.
            match (&layer.qk, rq.w_k.as_ref()) {
                (QkParams::General { .. }, Some(w_k)) => {
                    if let QkParams::General { w_k: gw_k, .. } = &mut gl.qk {
                        let mut slice = gw_k.rows_mut(h * d_h, d_h);
                        slice += g_k.transpose() * &lc.e_in;
                    }
                    g_in += &g_k * w_k.rows(h * d_h, d_h);
                }
                (QkParams::Orthogonal { .. }, Some(w_k)) => {
                    let full = g_wk_full.as_mut().expect("orthogonal accumulator");
                    let mut slice = full.rows_mut(h * d_h, d_h);
                    slice += g_k.transpose() * &lc.e_in;
                    g_in += &g_k * w_k.rows(h * d_h, d_h);
                }
                _ => {
                    for i in 0..n {
                        for t in 0..d_h {
                            g_in[(i, h * d_h + t)] += g_k[(i, t)];
                        }
                    }
                }
            }
        }
        // Cayley chain rule: dW = (I-S)^-1 dS (W + I), so
        // g_S = (I-S)^-T g_W (W + I)^T, then skew-project onto the seed.
        if let (Some(g_wk), QkParams::Orthogonal { .. }) = (g_wk_full, &layer.qk) {
            let s = rq.skew_k.as_ref().expect("skew cache");
            let w = rq.w_k.as_ref().expect("realized w_k");
            let eye = DMatrix::identity(d, d);
            let m_inv_t = (&eye - s)
                .try_inverse()
                .ok_or_else(|| Error::NumericalDegeneracy("Cayley factor is singular".into()))?
                .transpose();
            let g_s = m_inv_t * g_wk * (w + &eye).transpose();
            let g_seed = (&g_s - g_s.transpose()) * 0.5;
            if let QkParams::Orthogonal { seed_k } = &mut gl.qk {
                *seed_k += g_seed;
            }
        }
        g_e = g_in;
    }

    // Embedding.
    match spec.input {
        InputSpec::Vectors { .. } => {
            grads.embed_w += g_e.transpose() * &sample.tokens;
            for c in 0..d {
                grads.embed_b[c] += g_e.column(c).sum();
            }
        }
        InputSpec::Tokens { .. } => {
            for i in 0..n {
                let id = sample.tokens[(i, 0)] as usize;
                for c in 0..d {
                    grads.embed_w[(id, c)] += g_e[(i, c)];
                }
            }
            for c in 0..d {
                grads.embed_b[c] += g_e.column(c).sum();
            }
        }
    }
    let _ = &cache.e0;
    Ok(loss)
}

/// Mean loss and mean gradients over a batch.
pub fn backward(
    spec: &EncoderSpec,
    params: &Params,
    batch: &[Sample],
) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::DimensionMismatch("empty batch".into()));
    }
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for sample in batch {
        let cache = forward_sample(spec, params, sample, None)?;
        total += backward_sample(spec, params, sample, &cache, &mut grads)?;
    }
    let scale = 1.0 / batch.len() as f64;
    let zero = grads.zeros_like();
    let mut mean = zero;
    mean.axpy(scale, &grads);
    Ok((total * scale, mean))
}

/// Adam optimizer over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.t += 1;
        let g = grads.flatten();
        let mut theta = params.flatten();
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            theta[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
        params.unflatten_from(&theta).expect("shape preserved");
    }
}

/// Optimizer and schedule settings. The learning rate is divided by
/// `lr_decay_factor` at the start of `lr_decay_epoch` (1-based), if set.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 25,
            batch_size: 32,
            seed: 0,
            lr_decay_epoch: None,
            lr_decay_factor: 5.0,
        }
    }
}

/// One metrics row, in the order they are emitted.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

/// Full per-epoch history; epoch 0 is the evaluation at initialization.
#[derive(Debug, Clone)]
pub struct MetricsHistory {
    pub rows: Vec<MetricsRow>,
}

impl MetricsHistory {
    pub fn final_test_accuracy(&self) -> f64 {
        self.rows
            .iter()
            .rev()
            .find(|r| r.split == "test")
            .map(|r| r.accuracy)
            .unwrap_or(0.0)
    }

    pub fn final_test_loss(&self) -> f64 {
        self.rows
            .iter()
            .rev()
            .find(|r| r.split == "test")
            .map(|r| r.loss)
            .unwrap_or(f64::NAN)
    }
}

/// Mean loss and accuracy over a sample set, optionally under ablation.
pub fn evaluate(
    spec: &EncoderSpec,
    params: &Params,
    samples: &[Sample],
    ablation: Option<&AblationSpec>,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::DimensionMismatch("empty evaluation set".into()));
    }
    let mut loss_acc = 0.0;
    let mut correct = 0usize;
    for (idx, s) in samples.iter().enumerate() {
        let cache = forward_sample(spec, params, s, ablation.map(|a| (a, idx as u64)))?;
        let p = softmax_vec(&cache.logits);
        loss_acc += -p[s.label].max(1e-300).ln();
        let pred = (0..p.len()).max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap()).unwrap();
        if pred == s.label {
            correct += 1;
        }
    }
    Ok((loss_acc / samples.len() as f64, correct as f64 / samples.len() as f64))
}

/// Train an encoder on a synthetic task. Deterministic given the config
/// seed: parameter init, batch shuffling and the dataset all derive from it.
/// Aborts with [`Error::Diverged`] if the training loss exceeds ten times
/// its initial value.
pub fn train(
    spec: &EncoderSpec,
    task: &SyntheticTask,
    cfg: &TrainConfig,
) -> Result<(Params, MetricsHistory)> {
    spec.validate()?;
    let data = task.generate();
    let mut params = Params::init(spec, cfg.seed)?;
    let mut adam = Adam::new(params.len(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD1B5_4A32_D192_ED03);
    let mut rows = Vec::new();
    let mut lr = cfg.lr;

    let (l0_train, a0_train) = evaluate(spec, &params, &data.train, None)?;
    let (l0_test, a0_test) = evaluate(spec, &params, &data.test, None)?;
    rows.push(MetricsRow { epoch: 0, split: "train", loss: l0_train, accuracy: a0_train, lr });
    rows.push(MetricsRow { epoch: 0, split: "test", loss: l0_test, accuracy: a0_test, lr });
    let initial_loss = l0_train;

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        if cfg.lr_decay_epoch == Some(epoch) {
            lr /= cfg.lr_decay_factor;
        }
        // Fisher-Yates shuffle from the deterministic stream.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| data.train[i].clone()).collect();
            let (_, grads) = backward(spec, &params, &batch)?;
            adam.step(&mut params, &grads, lr);
        }
        let (lt, at) = evaluate(spec, &params, &data.train, None)?;
        let (lv, av) = evaluate(spec, &params, &data.test, None)?;
        rows.push(MetricsRow { epoch, split: "train", loss: lt, accuracy: at, lr });
        rows.push(MetricsRow { epoch, split: "test", loss: lv, accuracy: av, lr });
        if lt > 10.0 * initial_loss.max(1e-12) {
            return Err(Error::Diverged { epoch, loss: lt, initial: initial_loss });
        }
    }
    Ok((params, MetricsHistory { rows }))
}

/// One attention variant entering a sweep.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct VariantSpec {
    pub name: String,
    pub variant: AttentionVariant,
    pub alpha: f64,
    /// Distance scale; `None` selects the sequence-task convention for the
    /// variant (`sqrt(d_h)` scaled for the power-law branch).
    pub kappa: Option<f64>,
    pub projection: ProjectionMode,
}

impl VariantSpec {
    pub fn kappa_for(&self, d_h: usize) -> Result<f64> {
        match self.kappa {
            Some(k) => Ok(k),
            None => crate::kernel::kappa_convention(
                crate::kernel::KappaTask::Text,
                crate::kernel::FractionalOrder::new(self.alpha)?,
                d_h,
                d_h,
            ),
        }
    }
}

/// Assemble an encoder spec for a sweep cell.
pub fn build_spec(
    task: &SyntheticTask,
    variant: &VariantSpec,
    d_model: usize,
    depth: usize,
    heads: usize,
    hidden: usize,
) -> Result<EncoderSpec> {
    let alpha = crate::kernel::FractionalOrder::new(variant.alpha)?;
    let kappa = variant.kappa_for(d_model / heads.max(1))?;
    let attention = AttentionConfig::new(
        alpha,
        kappa,
        heads,
        d_model,
        Manifold::Euclidean,
        variant.variant,
    )?;
    Ok(EncoderSpec {
        depth,
        heads,
        d_model,
        hidden,
        input: InputSpec::Vectors { dim: task.ambient_dim },
        max_seq_len: task.n_tokens,
        num_classes: task.num_classes(),
        attention,
        projection: variant.projection,
    })
}

/// One result row of a dimension/depth sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepCell {
    pub variant: String,
    pub alpha: f64,
    pub d_model: usize,
    pub depth: usize,
    pub seed: u64,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: f64,
    pub final_test_loss: f64,
    /// Mean spectral gap of the first block's first-head attention over test
    /// sequences, computed on the trained model.
    pub spectral_gap_mean: f64,
}

/// Train every `(dimension, depth, variant, seed)` cell and report final
/// metrics plus the mean attention spectral gap. Cells run concurrently;
/// each one is internally deterministic from its own seed.
pub fn sweep(
    task: &SyntheticTask,
    dims: &[usize],
    depths: &[usize],
    variants: &[VariantSpec],
    cfg: &TrainConfig,
    n_seeds: u64,
    hidden: usize,
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::new();
    for &d in dims {
        for &l in depths {
            for v in variants {
                for seed in 0..n_seeds {
                    cells.push((d, l, v.clone(), seed));
                }
            }
        }
    }
    let results: Vec<Result<SweepCell>> = cells
        .par_iter()
        .map(|(d, l, v, seed)| {
            let spec = build_spec(task, v, *d, *l, 1, hidden)?;
            let mut cell_cfg = cfg.clone();
            cell_cfg.seed = cfg.seed ^ (seed.wrapping_mul(0x9E37_79B9) + 1);
            let (params, hist) = train(&spec, task, &cell_cfg)?;
            let data = task.generate();
            let gap = mean_attention_gap(&spec, &params, &data.test, 100)?;
            let train_acc = hist
                .rows
                .iter()
                .rev()
                .find(|r| r.split == "train")
                .map(|r| r.accuracy)
                .unwrap_or(0.0);
            Ok(SweepCell {
                variant: v.name.clone(),
                alpha: v.alpha,
                d_model: *d,
                depth: *l,
                seed: *seed,
                final_train_accuracy: train_acc,
                final_test_accuracy: hist.final_test_accuracy(),
                final_test_loss: hist.final_test_loss(),
                spectral_gap_mean: gap,
            })
        })
        .collect();
    results.into_iter().collect()
}

/// Mean spectral gap of the first block's first head over up to `limit`
/// sequences.
pub fn mean_attention_gap(
    spec: &EncoderSpec,
    params: &Params,
    samples: &[Sample],
    limit: usize,
) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0;
    for s in samples.iter().take(limit) {
        let cache = forward_sample(spec, params, s, None)?;
        let a = &cache.layers[0].heads[0].a;
        let sm = crate::attention::row_normalize(&a.map(|v| v.max(0.0)), None)?;
        acc += spectral_gap(&sm);
        count += 1;
    }
    if count == 0 {
        return Err(Error::DimensionMismatch("no samples for gap".into()));
    }
    Ok(acc / count as f64)
}

/// Accuracy under node or edge ablation across a probability grid.
pub fn ablation_sweep(
    spec: &EncoderSpec,
    params: &Params,
    test: &[Sample],
    p_grid: &[f64],
    mode: AblationMode,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(p_grid.len());
    for &p in p_grid {
        let ab = AblationSpec { p, mode, seed };
        let (_, acc) = evaluate(spec, params, test, if p > 0.0 { Some(&ab) } else { None })?;
        out.push((p, acc));
    }
    Ok(out)
}

/// Versioned structured-text checkpoint of an encoder and its parameters.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config_hash: String,
    pub spec: EncoderSpec,
    pub params: Params,
}

pub const CHECKPOINT_FORMAT: &str = "fna-checkpoint-v1";

/// Serialize a checkpoint to JSON.
pub fn save_checkpoint(spec: &EncoderSpec, params: &Params, config_hash: &str) -> Result<String> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        config_hash: config_hash.into(),
        spec: spec.clone(),
        params: params.clone(),
    };
    serde_json::to_string(&ck).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Parse and validate a checkpoint produced by [`save_checkpoint`].
pub fn load_checkpoint(text: &str) -> Result<Checkpoint> {
    let ck: Checkpoint =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {}", ck.format)));
    }
    ck.spec.validate()?;
    Ok(ck)
}

/// Maximum gradient deviation between the analytic backward pass and
/// central finite differences with step `h`, over every parameter.
///
/// The comparison is `|a - f| <= rtol * max(|a|, |f|) + atol` per
/// coordinate; the returned value is the largest violation ratio
/// `|a - f| / (rtol * max(|a|,|f|) + atol)`, so anything below 1 passes.
pub fn gradient_check(
    spec: &EncoderSpec,
    params: &Params,
    batch: &[Sample],
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<f64> {
    let (_, analytic) = backward(spec, params, batch)?;
    let a = analytic.flatten();
    let theta0 = params.flatten();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let batch_loss = |p: &Params| -> Result<f64> {
        let mut acc = 0.0;
        for s in batch {
            acc += loss(spec, p, s)?;
        }
        Ok(acc / batch.len() as f64)
    };
    for i in 0..theta0.len() {
        let mut theta = theta0.clone();
        theta[i] = theta0[i] + h;
        probe.unflatten_from(&theta)?;
        let lp = batch_loss(&probe)?;
        theta[i] = theta0[i] - h;
        probe.unflatten_from(&theta)?;
        let lm = batch_loss(&probe)?;
        let fd = (lp - lm) / (2.0 * h);
        let tol = rtol * a[i].abs().max(fd.abs()) + atol;
        worst = worst.max((a[i] - fd).abs() / tol);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::FractionalOrder;
    use crate::synthetic::{make_synthetic_task, TaskKind};

    fn small_spec(
        variant: AttentionVariant,
        alpha: f64,
        projection: ProjectionMode,
        depth: usize,
        heads: usize,
        input: InputSpec,
    ) -> EncoderSpec {
        let d = 4 * heads;
        let attention = AttentionConfig::new(
            FractionalOrder::new(alpha).unwrap(),
            1.5,
            heads,
            d,
            Manifold::Euclidean,
            variant,
        )
        .unwrap();
        EncoderSpec {
            depth,
            heads,
            d_model: d,
            hidden: 5,
            input,
            max_seq_len: 8,
            num_classes: 2,
            attention,
            projection,
        }
    }

    fn vector_sample(n: usize, dim: usize, seed: u64, label: usize) -> Sample {
        Sample { tokens: crate::synthetic::gaussian_cloud(n, dim, 1.0, seed), label }
    }

    #[test]
    fn zero_head_gives_uniform_logits() {
        let spec = small_spec(
            AttentionVariant::Fna,
            1.2,
            ProjectionMode::WeightTiedIdentity,
            1,
            1,
            InputSpec::Vectors { dim: 3 },
        );
        let mut params = Params::init(&spec, 1).unwrap();
        params.head_w.fill(0.0);
        params.head_b.fill(0.0);
        let logits = forward(&spec, &params, &vector_sample(4, 3, 2, 0)).unwrap();
        assert_eq!(logits[0], logits[1]);
    }

    #[test]
    fn single_token_residual_only() {
        let spec = small_spec(
            AttentionVariant::Fna,
            2.0,
            ProjectionMode::WeightTiedIdentity,
            1,
            1,
            InputSpec::Vectors { dim: 4 },
        );
        let mut params = Params::init(&spec, 3).unwrap();
        params.layers[0].w_v.fill(0.0);
        params.layers[0].w1.fill(0.0);
        params.layers[0].w2.fill(0.0);
        params.layers[0].b1.fill(0.0);
        params.layers[0].b2.fill(0.0);
        let s = vector_sample(1, 4, 5, 1);
        let logits = forward(&spec, &params, &s).unwrap();
        // Expected: head(embed(x)); attention weight on a single token is 1
        // but W_V = 0 kills its contribution.
        let e = &s.tokens * params.embed_w.transpose();
        let pooled = DVector::from_fn(4, |c, _| e[(0, c)] + params.embed_b[c]);
        let want = &params.head_w * pooled + &params.head_b;
        assert!((logits - want).norm() < 1e-14);
    }

    #[test]
    fn residual_sanity_zero_outputs_equal_pooled_classifier() {
        let spec = small_spec(
            AttentionVariant::Fna,
            1.2,
            ProjectionMode::General,
            2,
            2,
            InputSpec::Vectors { dim: 4 },
        );
        let mut params = Params::init(&spec, 7).unwrap();
        for l in &mut params.layers {
            l.w_v.fill(0.0);
            l.w2.fill(0.0);
            l.b2.fill(0.0);
        }
        let s = vector_sample(5, 4, 9, 0);
        let logits = forward(&spec, &params, &s).unwrap();
        let e = &s.tokens * params.embed_w.transpose();
        let d = spec.d_model;
        let mut pooled = DVector::zeros(d);
        for c in 0..d {
            pooled[c] = e.column(c).sum() / 5.0 + params.embed_b[c];
        }
        let want = &params.head_w * pooled + &params.head_b;
        assert!((logits - want).norm() < 1e-12);
    }

    /// Straight-line scalar re-implementation of the full forward pipeline
    /// for a one-block weight-tied kernel model.
    #[test]
    fn forward_matches_scalar_oracle() {
        let spec = small_spec(
            AttentionVariant::Fna,
            1.2,
            ProjectionMode::WeightTiedIdentity,
            1,
            1,
            InputSpec::Vectors { dim: 3 },
        );
        let params = Params::init(&spec, 11).unwrap();
        let s = vector_sample(4, 3, 13, 0);
        let logits = forward(&spec, &params, &s).unwrap();

        let (n, d, hdim) = (4usize, 4usize, 5usize);
        let kappa = spec.attention.kappa;
        let tail = spec.attention.d_m() as f64 + 1.2;
        // Embedding.
        let mut e = vec![vec![0.0; d]; n];
        for i in 0..n {
            for c in 0..d {
                let mut acc = params.embed_b[c];
                for t in 0..3 {
                    acc += params.embed_w[(c, t)] * s.tokens[(i, t)];
                }
                e[i][c] = acc;
            }
        }
        // Attention (weight tied: q = k = e).
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let mut sq = 0.0;
                for c in 0..d {
                    sq += (e[i][c] - e[j][c]).powi(2);
                }
                let dist = (sq + DIST_EPS).sqrt();
                a[i][j] = (1.0 + dist / kappa).powf(-tail);
                sum += a[i][j];
            }
            for j in 0..n {
                a[i][j] /= sum;
            }
        }
        let w_v = &params.layers[0].w_v;
        let mut e1 = e.clone();
        for i in 0..n {
            for c in 0..d {
                let mut acc = 0.0;
                for j in 0..n {
                    let mut v = 0.0;
                    for t in 0..d {
                        v += w_v[(c, t)] * e[j][t];
                    }
                    acc += a[i][j] * v;
                }
                e1[i][c] += acc;
            }
        }
        // Feed-forward.
        let (w1, b1, w2, b2) =
            (&params.layers[0].w1, &params.layers[0].b1, &params.layers[0].w2, &params.layers[0].b2);
        let mut e2 = e1.clone();
        for i in 0..n {
            for c in 0..d {
                let mut acc = b2[c];
                for hcol in 0..hdim {
                    let mut z = b1[hcol];
                    for t in 0..d {
                        z += w1[(hcol, t)] * e1[i][t];
                    }
                    acc += w2[(c, hcol)] * z.max(0.0);
                }
                e2[i][c] += acc;
            }
        }
        // Pool and classify.
        let mut want = vec![0.0; 2];
        for k in 0..2 {
            let mut acc = params.head_b[k];
            for c in 0..d {
                let pooled: f64 = (0..n).map(|i| e2[i][c]).sum::<f64>() / n as f64;
                acc += params.head_w[(k, c)] * pooled;
            }
            want[k] = acc;
        }
        for k in 0..2 {
            assert!((logits[k] - want[k]).abs() < 1e-10, "{} vs {}", logits[k], want[k]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let configs = [
            (AttentionVariant::Fna, 2.0, ProjectionMode::General, 1, 1),
            (AttentionVariant::Fna, 1.2, ProjectionMode::General, 1, 1),
            (AttentionVariant::Fna, 1.2, ProjectionMode::Orthogonal, 1, 1),
            (AttentionVariant::Fna, 2.0, ProjectionMode::Orthogonal, 2, 2),
            (AttentionVariant::Fna, 1.2, ProjectionMode::WeightTiedIdentity, 1, 1),
            (AttentionVariant::DotProduct, 2.0, ProjectionMode::General, 1, 1),
            (AttentionVariant::DotProduct, 2.0, ProjectionMode::WeightTiedIdentity, 2, 2),
        ];
        for (variant, alpha, projection, depth, heads) in configs {
            let spec = small_spec(variant, alpha, projection, depth, heads, InputSpec::Vectors { dim: 3 });
            let mut params = Params::init(&spec, 17).unwrap();
            // Move orthogonal seeds off the identity start so the Cayley
            // chain rule is exercised at a generic point.
            for l in &mut params.layers {
                if let QkParams::Orthogonal { seed_k } = &mut l.qk {
                    let mut rng = ChaCha8Rng::seed_from_u64(23);
                    *seed_k = DMatrix::from_fn(seed_k.nrows(), seed_k.ncols(), |_, _| {
                        rng.random_range(-0.3..0.3)
                    });
                }
            }
            let batch = vec![
                vector_sample(5, 3, 19, 0),
                vector_sample(3, 3, 29, 1),
            ];
            let worst = gradient_check(&spec, &params, &batch, 1e-5, 1e-4, 1e-9).unwrap();
            assert!(
                worst < 1.0,
                "{variant:?} alpha={alpha} {projection:?} L={depth} H={heads}: violation {worst}"
            );
        }
    }

    #[test]
    fn token_input_gradcheck_and_unused_row_zero_grad() {
        let spec = small_spec(
            AttentionVariant::Fna,
            1.2,
            ProjectionMode::General,
            1,
            1,
            InputSpec::Tokens { vocab: 7 },
        );
        let params = Params::init(&spec, 31).unwrap();
        let ids = |v: &[usize]| {
            Sample {
                tokens: DMatrix::from_fn(v.len(), 1, |i, _| v[i] as f64),
                label: 0,
            }
        };
        let batch = vec![ids(&[0, 2, 3]), ids(&[2, 2, 5])];
        let worst = gradient_check(&spec, &params, &batch, 1e-5, 1e-4, 1e-9).unwrap();
        assert!(worst < 1.0, "token input violation {worst}");
        // Vocabulary rows never referenced get exactly zero gradient.
        let (_, grads) = backward(&spec, &params, &batch).unwrap();
        for c in 0..spec.d_model {
            assert_eq!(grads.embed_w[(1, c)], 0.0);
            assert_eq!(grads.embed_w[(6, c)], 0.0);
        }
    }

    #[test]
    fn orthogonality_preserved_after_every_step() {
        let spec = small_spec(
            AttentionVariant::Fna,
            1.2,
            ProjectionMode::Orthogonal,
            1,
            1,
            InputSpec::Vectors { dim: 3 },
        );
        let mut params = Params::init(&spec, 41).unwrap();
        let mut adam = Adam::new(params.len(), 0.9, 0.999, 1e-8);
        let batch = vec![vector_sample(4, 3, 43, 0), vector_sample(4, 3, 47, 1)];
        for _ in 0..20 {
            let (_, grads) = backward(&spec, &params, &batch).unwrap();
            adam.step(&mut params, &grads, 5e-2);
            if let QkParams::Orthogonal { seed_k } = &params.layers[0].qk {
                let w = realize_w_k(seed_k).unwrap();
                let gram = w.transpose() * &w;
                let defect = (gram - DMatrix::identity(4, 4)).abs().max();
                assert!(defect < 1e-8, "defect {defect}");
            } else {
                panic!("expected orthogonal mode");
            }
        }
    }

    #[test]
    fn zero_epochs_returns_initial_metrics_and_determinism() {
        let task = make_synthetic_task(TaskKind::ClusterLabel, 4, 3, 51)
            .unwrap()
            .with_samples(60);
        let spec = build_spec(
            &task,
            &VariantSpec {
                name: "fna12".into(),
                variant: AttentionVariant::Fna,
                alpha: 1.2,
                kappa: None,
                projection: ProjectionMode::WeightTiedIdentity,
            },
            8,
            1,
            1,
            8,
        )
        .unwrap();
        let mut cfg = TrainConfig { epochs: 0, ..Default::default() };
        cfg.seed = 5;
        let (params, hist) = train(&spec, &task, &cfg).unwrap();
        assert_eq!(hist.rows.len(), 2);
        let data = task.generate();
        let (l, a) = evaluate(&spec, &params, &data.train, None).unwrap();
        assert_eq!(hist.rows[0].loss, l);
        assert_eq!(hist.rows[0].accuracy, a);

        cfg.epochs = 2;
        let (_, h1) = train(&spec, &task, &cfg).unwrap();
        let (_, h2) = train(&spec, &task, &cfg).unwrap();
        for (r1, r2) in h1.rows.iter().zip(&h2.rows) {
            assert_eq!(r1.loss, r2.loss);
            assert_eq!(r1.accuracy, r2.accuracy);
        }
    }

    /// The separable two-cluster task is solvable by a linear model on
    /// pooled means (the oracle), and the trained encoder matches it.
    #[test]
    fn separable_cluster_task_trains_to_95() {
        let task = make_synthetic_task(TaskKind::ClusterLabel, 6, 8, 61)
            .unwrap()
            .with_samples(600);
        // Oracle: logistic regression on pooled token means.
        let data = task.generate();
        let pool = |s: &Sample| {
            DVector::from_fn(8, |c, _| s.tokens.column(c).sum() / s.tokens.nrows() as f64)
        };
        let mut w = DVector::zeros(8);
        let mut b = 0.0;
        for _ in 0..200 {
            let mut gw = DVector::zeros(8);
            let mut gb = 0.0;
            for s in &data.train {
                let x = pool(s);
                let m = (w.dot(&x) + b).exp() / (1.0 + (w.dot(&x) + b).exp());
                let err = m - s.label as f64;
                gw += x * err;
                gb += err;
            }
            w -= gw * (0.1 / data.train.len() as f64);
            b -= gb * (0.1 / data.train.len() as f64);
        }
        let oracle_acc = data
            .test
            .iter()
            .filter(|s| ((w.dot(&pool(s)) + b > 0.0) as usize) == s.label)
            .count() as f64
            / data.test.len() as f64;
        assert!(oracle_acc >= 0.95, "oracle {oracle_acc}");

        let spec = build_spec(
            &task,
            &VariantSpec {
                name: "fna12".into(),
                variant: AttentionVariant::Fna,
                alpha: 1.2,
                kappa: None,
                projection: ProjectionMode::WeightTiedIdentity,
            },
            8,
            1,
            1,
            16,
        )
        .unwrap();
        let cfg = TrainConfig { epochs: 25, seed: 3, ..Default::default() };
        let (_, hist) = train(&spec, &task, &cfg).unwrap();
        assert!(
            hist.final_test_accuracy() >= 0.95,
            "model {}",
            hist.final_test_accuracy()
        );
        // Loss decreases from initialization by epoch 5.
        let initial = hist.rows[0].loss;
        let epoch5 = hist
            .rows
            .iter()
            .find(|r| r.epoch == 5 && r.split == "train")
            .unwrap()
            .loss;
        assert!(epoch5 < initial);
    }

    #[test]
    fn divergence_aborts() {
        let task = make_synthetic_task(TaskKind::ClusterLabel, 4, 3, 71)
            .unwrap()
            .with_samples(60);
        let spec = build_spec(
            &task,
            &VariantSpec {
                name: "dp".into(),
                variant: AttentionVariant::DotProduct,
                alpha: 2.0,
                kappa: Some(1.0),
                projection: ProjectionMode::General,
            },
            8,
            1,
            1,
            8,
        )
        .unwrap();
        let cfg = TrainConfig { epochs: 30, lr: 1e4, seed: 1, ..Default::default() };
        match train(&spec, &task, &cfg) {
            Err(Error::Diverged { .. }) | Err(Error::NanProduced(_)) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn ablation_p0_matches_unablated_and_p1_kills_fna_attention() {
        let task = make_synthetic_task(TaskKind::LongRangePair, 6, 4, 81)
            .unwrap()
            .with_samples(100);
        let spec = build_spec(
            &task,
            &VariantSpec {
                name: "fna12".into(),
                variant: AttentionVariant::Fna,
                alpha: 1.2,
                kappa: None,
                projection: ProjectionMode::WeightTiedIdentity,
            },
            8,
            1,
            1,
            8,
        )
        .unwrap();
        let params = Params::init(&spec, 91).unwrap();
        let data = task.generate();
        let grid = ablation_sweep(&spec, &params, &data.test, &[0.0, 1.0], AblationMode::Nodes, 7)
            .unwrap();
        let (_, plain) = evaluate(&spec, &params, &data.test, None).unwrap();
        assert_eq!(grid[0].1, plain);

        // At p = 1 under the kernel variant, the attention output vanishes:
        // forward equals the residual-only path.
        let ab = AblationSpec { p: 1.0, mode: AblationMode::Nodes, seed: 7 };
        let s = &data.test[0];
        let cache = forward_sample(&spec, &params, s, Some((&ab, 0))).unwrap();
        assert!(cache.layers[0].heads[0].a.iter().all(|&w| w == 0.0));
        let mut residual = Params::init(&spec, 91).unwrap();
        residual.layers[0].w_v.fill(0.0);
        let want = forward(&spec, &residual, s).unwrap();
        assert!((cache.logits - want).norm() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let spec = small_spec(
            AttentionVariant::Fna,
            1.2,
            ProjectionMode::General,
            1,
            1,
            InputSpec::Vectors { dim: 3 },
        );
        let params = Params::init(&spec, 101).unwrap();
        let text = save_checkpoint(&spec, &params, "abc123").unwrap();
        let ck = load_checkpoint(&text).unwrap();
        assert_eq!(ck.config_hash, "abc123");
        assert_eq!(ck.params.flatten(), params.flatten());
        assert!(load_checkpoint("{\"format\":\"bogus\"}").is_err());
    }

    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
}
