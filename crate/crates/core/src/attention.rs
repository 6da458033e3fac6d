//! Attention score computation on Euclidean and spherical geometry, row
//! normalization, the residual attention block, the softmax dot-product
//! baseline, projection parametrizations and masking/ablation hooks.
//!
//! Embeddings are stored row-major, one token per row (`n x d`). Formulations
//! that write the token matrix column-major are the transpose of this
//! convention; it is applied consistently everywhere in the crate.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{FractionalOrder, KernelSpec};

/// Row sums of a stochastic matrix must match 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Orthogonality checks (`W^T W = I`) use this entrywise tolerance.
pub const ORTHO_TOL: f64 = 1e-10;

/// Token embeddings, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: DMatrix<f64>,
}

impl EmbeddingMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "embedding matrix must be at least 1x1, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding matrix"));
        }
        Ok(Self { data })
    }

    pub fn tokens(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    /// Copy with every row rescaled to unit Euclidean norm.
    pub fn unit_normalized(&self) -> Result<Self> {
        let mut out = self.data.clone();
        for mut row in out.row_iter_mut() {
            let norm = row.norm();
            if norm == 0.0 {
                return Err(Error::NumericalDegeneracy(
                    "cannot project a zero token onto the sphere".into(),
                ));
            }
            row /= norm;
        }
        Ok(Self { data: out })
    }
}

/// How the query/key projections are constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ProjectionMode {
    /// Unconstrained square matrices.
    General,
    /// `W_Q` and `W_K` orthogonal; distances are preserved for single-head
    /// attention.
    Orthogonal,
    /// `W_Q = W_K = I` exactly, the fully reduced weight-tied form.
    WeightTiedIdentity,
}

/// Query, key and value projections with their constraint mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub mode: ProjectionMode,
}

fn check_square(m: &DMatrix<f64>, d: usize, name: &str) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be {d}x{d}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection matrix"));
    }
    Ok(())
}

fn max_orthogonality_defect(w: &DMatrix<f64>) -> f64 {
    let gram = w.transpose() * w;
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - want).abs());
        }
    }
    worst
}

impl ProjectionSet {
    pub fn general(w_q: DMatrix<f64>, w_k: DMatrix<f64>, w_v: DMatrix<f64>) -> Result<Self> {
        let d = w_q.nrows();
        check_square(&w_q, d, "w_q")?;
        check_square(&w_k, d, "w_k")?;
        check_square(&w_v, d, "w_v")?;
        Ok(Self { w_q, w_k, w_v, mode: ProjectionMode::General })
    }

    /// Orthogonal mode; rejects matrices whose Gram defect exceeds
    /// [`ORTHO_TOL`].
    pub fn orthogonal(w_q: DMatrix<f64>, w_k: DMatrix<f64>, w_v: DMatrix<f64>) -> Result<Self> {
        let d = w_q.nrows();
        check_square(&w_q, d, "w_q")?;
        check_square(&w_k, d, "w_k")?;
        check_square(&w_v, d, "w_v")?;
        for (name, w) in [("w_q", &w_q), ("w_k", &w_k)] {
            let defect = max_orthogonality_defect(w);
            if defect > ORTHO_TOL {
                return Err(Error::InvalidParameter {
                    name: if name == "w_q" { "w_q" } else { "w_k" },
                    reason: "not orthogonal within tolerance",
                    value: defect,
                });
            }
        }
        Ok(Self { w_q, w_k, w_v, mode: ProjectionMode::Orthogonal })
    }

    /// Weight-tied reduction: `W_Q = W_K = I` exactly.
    pub fn weight_tied_identity(d: usize, w_v: DMatrix<f64>) -> Result<Self> {
        check_square(&w_v, d, "w_v")?;
        Ok(Self {
            w_q: DMatrix::identity(d, d),
            w_k: DMatrix::identity(d, d),
            w_v,
            mode: ProjectionMode::WeightTiedIdentity,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.nrows()
    }

    /// True when per-head projections preserve distances: only single-head
    /// orthogonal or weight-tied modes qualify. Per-head slices of an
    /// orthogonal matrix are merely semi-orthogonal, so multi-head attention
    /// never is.
    pub fn is_isometric(&self, heads: usize) -> bool {
        heads == 1 && matches!(self.mode, ProjectionMode::Orthogonal | ProjectionMode::WeightTiedIdentity)
    }
}

/// Geometry the projected tokens live on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Manifold {
    Euclidean,
    Spherical,
}

/// Score rule: distance-kernel attention or the softmax dot-product baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AttentionVariant {
    Fna,
    DotProduct,
}

/// Full configuration of one attention map.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttentionConfig {
    pub alpha: FractionalOrder,
    pub kappa: f64,
    pub heads: usize,
    pub d: usize,
    pub manifold: Manifold,
    pub variant: AttentionVariant,
    /// Tail dimension of the power-law kernel; defaults to the head
    /// dimension `d / heads` when absent.
    pub d_m: Option<usize>,
}

impl AttentionConfig {
    pub fn new(
        alpha: FractionalOrder,
        kappa: f64,
        heads: usize,
        d: usize,
        manifold: Manifold,
        variant: AttentionVariant,
    ) -> Result<Self> {
        if heads == 0 || d == 0 || d % heads != 0 {
            return Err(Error::DimensionMismatch(format!(
                "embedding dim {d} must be a positive multiple of heads {heads}"
            )));
        }
        if !kappa.is_finite() || kappa <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "kappa",
                reason: "distance scale must be positive",
                value: kappa,
            });
        }
        Ok(Self { alpha, kappa, heads, d, manifold, variant, d_m: None })
    }

    pub fn with_d_m(mut self, d_m: usize) -> Self {
        self.d_m = Some(d_m);
        self
    }

    pub fn d_h(&self) -> usize {
        self.d / self.heads
    }

    pub fn d_m(&self) -> usize {
        self.d_m.unwrap_or_else(|| self.d_h())
    }

    fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.alpha, self.d_m(), self.kappa)
    }
}

/// Row-stochastic attention weights together with their provenance: the
/// pre-normalization score matrix and the key-padding mask, if any.
///
/// Every row sums to 1 within [`ROW_SUM_TOL`], except that ablation may leave
/// rows exactly all-zero (see [`ablate`]); such degenerate rows contribute
/// nothing to the block output.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    weights: DMatrix<f64>,
    score: DMatrix<f64>,
    mask: Option<Vec<bool>>,
}

impl StochasticMatrix {
    fn validated(
        weights: DMatrix<f64>,
        score: DMatrix<f64>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        for (i, row) in weights.row_iter().enumerate() {
            let sum: f64 = row.iter().sum();
            let all_zero = row.iter().all(|&w| w == 0.0);
            if !all_zero && (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NumericalDegeneracy(format!(
                    "row {i} sums to {sum}, beyond tolerance"
                )));
            }
            if row.iter().any(|&w| w < 0.0) {
                return Err(Error::NumericalDegeneracy(format!(
                    "row {i} carries a negative weight"
                )));
            }
        }
        Ok(Self { weights, score, mask })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn score(&self) -> &DMatrix<f64> {
        &self.score
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Indices of all-zero rows (possible only after ablation).
    pub fn degenerate_rows(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.weights.row(i).iter().all(|&w| w == 0.0))
            .collect()
    }
}

fn project_head(
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    head: usize,
    d_h: usize,
    normalize: bool,
) -> Result<DMatrix<f64>> {
    let w_h = w.rows(head * d_h, d_h);
    let mut out = x * w_h.transpose();
    if normalize {
        for mut row in out.row_iter_mut() {
            let norm = row.norm();
            if norm == 0.0 {
                return Err(Error::NumericalDegeneracy(
                    "projected token has zero norm on the sphere".into(),
                ));
            }
            row /= norm;
        }
    }
    Ok(out)
}

/// Per-head attention score matrices `C[i][j] = Phi_alpha(dist(q_i, k_j) / kappa)`.
///
/// On the sphere the distance is the geodesic `arccos` of the query-key dot
/// product, clamped to `[-1, 1]` against floating-point drift, and tokens are
/// unit-normalized first; projections that are not isometries are normalized
/// back onto the sphere. A masked key column is assigned the maximal geodesic
/// `pi * r` (with `r = 1/kappa`) in place of its true distance, which is the
/// smallest score the kernel can emit; Euclidean masking is handled entirely
/// by [`row_normalize`].
pub fn head_scores(
    x: &EmbeddingMatrix,
    p: &ProjectionSet,
    cfg: &AttentionConfig,
    mask: Option<&[bool]>,
) -> Result<Vec<DMatrix<f64>>> {
    if cfg.variant != AttentionVariant::Fna {
        return Err(Error::InvalidParameter {
            name: "variant",
            reason: "head_scores computes kernel scores; use dot_product_attention",
            value: 1.0,
        });
    }
    if x.dim() != cfg.d || p.dim() != cfg.d {
        return Err(Error::DimensionMismatch(format!(
            "embeddings {}x{}, projections {}x{}, config d={}",
            x.tokens(),
            x.dim(),
            p.dim(),
            p.dim(),
            cfg.d
        )));
    }
    if let Some(m) = mask {
        if m.len() != x.tokens() {
            return Err(Error::DimensionMismatch(format!(
                "mask length {} for {} tokens",
                m.len(),
                x.tokens()
            )));
        }
    }
    let n = x.tokens();
    let d_h = cfg.d_h();
    let spec = cfg.kernel_spec()?;
    let spherical = cfg.manifold == Manifold::Spherical;
    let base;
    let src = if spherical {
        base = x.unit_normalized()?;
        &base
    } else {
        x
    };
    // Projected vectors stay on the sphere only for a genuine isometry; any
    // other projection is pulled back by normalization.
    let renorm = spherical && !p.is_isometric(cfg.heads);
    // A masked key is treated as maximally distant: the scaled distance
    // becomes pi/kappa (the diameter pi*r of the sphere of radius r = 1/kappa
    // on which the scaled geometry lives), the smallest score the kernel
    // can emit.
    let masked_dist = std::f64::consts::PI;

    let mut out = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let q = project_head(src.data(), &p.w_q, h, d_h, renorm)?;
        let k = project_head(src.data(), &p.w_k, h, d_h, renorm)?;
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let dist = if spherical {
                    if mask.map_or(false, |m| m[j]) {
                        masked_dist
                    } else {
                        let dot = q.row(i).dot(&k.row(j)).clamp(-1.0, 1.0);
                        dot.acos()
                    }
                } else {
                    let mut sq = 0.0;
                    for t in 0..d_h {
                        let diff = q[(i, t)] - k[(j, t)];
                        sq += diff * diff;
                    }
                    sq.sqrt()
                };
                c[(i, j)] = spec.phi(dist)?;
            }
        }
        out.push(c);
    }
    Ok(out)
}

/// Single-head kernel score matrix; the `heads = 1` case of [`head_scores`].
pub fn fna_score(
    x: &EmbeddingMatrix,
    p: &ProjectionSet,
    cfg: &AttentionConfig,
) -> Result<DMatrix<f64>> {
    if cfg.heads != 1 {
        return Err(Error::DimensionMismatch(format!(
            "fna_score is the single-head entry point, config has {} heads",
            cfg.heads
        )));
    }
    Ok(head_scores(x, p, cfg, None)?.pop().expect("one head"))
}

/// Row normalization of a nonnegative score matrix into attention weights.
///
/// Masked key columns (mask entry `true`) are zeroed before normalizing, so
/// padded keys carry no weight while every query row still sums to 1. A row
/// left without any positive entry is an error here; only ablation is allowed
/// to produce degenerate rows.
pub fn row_normalize(score: &DMatrix<f64>, mask: Option<&[bool]>) -> Result<StochasticMatrix> {
    let n = score.nrows();
    if score.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "score matrix must be square, got {}x{}",
            n,
            score.ncols()
        )));
    }
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "mask length {} for {n} keys",
                m.len()
            )));
        }
    }
    let mut weights = score.clone();
    for v in weights.iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite("score matrix"));
        }
        if *v < 0.0 {
            return Err(Error::InvalidParameter {
                name: "score",
                reason: "entries must be nonnegative",
                value: *v,
            });
        }
    }
    if let Some(m) = mask {
        for (j, &masked) in m.iter().enumerate() {
            if masked {
                for i in 0..n {
                    weights[(i, j)] = 0.0;
                }
            }
        }
    }
    for i in 0..n {
        let sum: f64 = weights.row(i).iter().sum();
        if sum <= 0.0 {
            return Err(Error::DegenerateRow { row: i });
        }
        for j in 0..n {
            weights[(i, j)] /= sum;
        }
    }
    StochasticMatrix::validated(weights, score.clone(), mask.map(|m| m.to_vec()))
}

/// Softmax dot-product baseline: weights `softmax_j(q_i . k_j / kappa)` with
/// per-row max subtraction before exponentiation. Single-head entry point.
pub fn dot_product_attention(
    x: &EmbeddingMatrix,
    p: &ProjectionSet,
    cfg: &AttentionConfig,
) -> Result<StochasticMatrix> {
    if cfg.heads != 1 {
        return Err(Error::DimensionMismatch(
            "dot_product_attention is the single-head entry point".into(),
        ));
    }
    let scores = dot_scores(x.data(), p, cfg, 0)?;
    softmax_rows(&scores, None)
}

fn dot_scores(
    x: &DMatrix<f64>,
    p: &ProjectionSet,
    cfg: &AttentionConfig,
    head: usize,
) -> Result<DMatrix<f64>> {
    if x.ncols() != cfg.d || p.dim() != cfg.d {
        return Err(Error::DimensionMismatch(format!(
            "embeddings dim {} vs config d={}",
            x.ncols(),
            cfg.d
        )));
    }
    let d_h = cfg.d_h();
    let q = project_head(x, &p.w_q, head, d_h, false)?;
    let k = project_head(x, &p.w_k, head, d_h, false)?;
    Ok(q * k.transpose() / cfg.kappa)
}

/// Row-wise softmax with max subtraction; masked columns are excluded before
/// normalization.
pub(crate) fn softmax_rows(
    scores: &DMatrix<f64>,
    mask: Option<&[bool]>,
) -> Result<StochasticMatrix> {
    let n = scores.nrows();
    let mut weights = DMatrix::zeros(n, scores.ncols());
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for j in 0..scores.ncols() {
            if mask.map_or(false, |m| m[j]) {
                continue;
            }
            max = max.max(scores[(i, j)]);
        }
        if !max.is_finite() {
            return Err(Error::DegenerateRow { row: i });
        }
        let mut sum = 0.0;
        for j in 0..scores.ncols() {
            if mask.map_or(false, |m| m[j]) {
                continue;
            }
            let e = (scores[(i, j)] - max).exp();
            weights[(i, j)] = e;
            sum += e;
        }
        for j in 0..scores.ncols() {
            weights[(i, j)] /= sum;
        }
    }
    StochasticMatrix::validated(weights, scores.clone(), mask.map(|m| m.to_vec()))
}

/// Residual attention block `X + concat_h(A_h (X W_V_h^T))`.
///
/// The weights `A_h` come from the kernel scores under the `Fna` variant and
/// from the softmax baseline under `DotProduct`; heads act on contiguous
/// row slices of the projection matrices and are concatenated along the
/// feature axis.
pub fn fna_block(
    x: &EmbeddingMatrix,
    p: &ProjectionSet,
    cfg: &AttentionConfig,
) -> Result<EmbeddingMatrix> {
    let n = x.tokens();
    let d_h = cfg.d_h();
    let per_head: Vec<DMatrix<f64>> = match cfg.variant {
        AttentionVariant::Fna => head_scores(x, p, cfg, None)?
            .into_iter()
            .map(|c| row_normalize(&c, None).map(|s| s.weights))
            .collect::<Result<_>>()?,
        AttentionVariant::DotProduct => (0..cfg.heads)
            .map(|h| {
                let c = dot_scores(x.data(), p, cfg, h)?;
                softmax_rows(&c, None).map(|s| s.weights)
            })
            .collect::<Result<_>>()?,
    };
    let mut out = x.data().clone();
    for (h, a) in per_head.iter().enumerate() {
        let v = x.data() * p.w_v.rows(h * d_h, d_h).transpose();
        let mixed = a * v;
        for i in 0..n {
            for t in 0..d_h {
                out[(i, h * d_h + t)] += mixed[(i, t)];
            }
        }
    }
    EmbeddingMatrix::new(out)
}

/// Reduce an orthogonal single-head projection pair to the equivalent
/// `(I, W_Q^T W_K)` pair; kernel scores are unchanged because orthogonal maps
/// preserve all query-key distances.
pub fn reduce_projections(p: &ProjectionSet) -> Result<ProjectionSet> {
    if p.mode != ProjectionMode::Orthogonal {
        return Err(Error::InvalidParameter {
            name: "mode",
            reason: "reduction applies to the orthogonal mode only",
            value: 0.0,
        });
    }
    for w in [&p.w_q, &p.w_k] {
        let defect = max_orthogonality_defect(w);
        if defect > ORTHO_TOL {
            return Err(Error::InvalidParameter {
                name: "projection",
                reason: "not orthogonal within tolerance",
                value: defect,
            });
        }
    }
    let d = p.dim();
    Ok(ProjectionSet {
        w_q: DMatrix::identity(d, d),
        w_k: p.w_q.transpose() * &p.w_k,
        w_v: p.w_v.clone(),
        mode: ProjectionMode::Orthogonal,
    })
}

/// Cayley map `(I - S)^-1 (I + S)` from a skew-symmetric seed to an
/// orthogonal matrix.
///
/// For real skew-symmetric `S` the factor `I - S` is nonsingular (its
/// eigenvalues are `1 - i lambda`); if extreme entries defeat the inversion
/// numerically, the seed is contracted by `1 - 1e-9` once and retried.
pub fn orthogonal_parametrization(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = s.nrows();
    if s.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "skew seed must be square, got {}x{}",
            d,
            s.ncols()
        )));
    }
    let mut defect = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            defect = defect.max((s[(i, j)] + s[(j, i)]).abs());
        }
    }
    if defect > 1e-12 {
        return Err(Error::InvalidParameter {
            name: "seed",
            reason: "not skew-symmetric within 1e-12",
            value: defect,
        });
    }
    let eye = DMatrix::identity(d, d);
    let plus = &eye + s;
    if let Some(inv) = (&eye - s).try_inverse() {
        return Ok(inv * plus);
    }
    let contracted = s * (1.0 - 1e-9);
    let plus = &eye + &contracted;
    (&eye - &contracted)
        .try_inverse()
        .map(|inv| inv * plus)
        .ok_or_else(|| Error::NumericalDegeneracy("Cayley factor is singular".into()))
}

/// Random masking mode: independent entries or whole key columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AblationMode {
    Edges,
    Nodes,
}

/// What a fully masked row becomes after ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegeneratePolicy {
    /// All-zero row: the attention output contributes nothing and the block
    /// reduces to its residual path. Matches plain row normalization, where
    /// zero scores carry zero mass.
    ZeroRow,
    /// Uniform row `1/n`: matches softmax semantics, where masking scores to
    /// a large negative constant leaves equal mass everywhere once every key
    /// is masked.
    Uniform,
}

/// Randomly suppress attention with Bernoulli probability `p`, then
/// re-normalize the surviving rows.
///
/// `Edges` masks each `(i, j)` entry independently (row-major draw order);
/// `Nodes` masks whole key columns (ascending index). Rows that lose all
/// their mass follow the [`DegeneratePolicy::ZeroRow`] convention here; use
/// [`ablate_with_policy`] for the softmax baseline.
pub fn ablate(
    a: &StochasticMatrix,
    p: f64,
    mode: AblationMode,
    seed: u64,
) -> Result<StochasticMatrix> {
    ablate_with_policy(a, p, mode, seed, DegeneratePolicy::ZeroRow)
}

/// [`ablate`] with an explicit degenerate-row convention.
pub fn ablate_with_policy(
    a: &StochasticMatrix,
    p: f64,
    mode: AblationMode,
    seed: u64,
    policy: DegeneratePolicy,
) -> Result<StochasticMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter {
            name: "p",
            reason: "masking probability must lie in [0, 1]",
            value: p,
        });
    }
    let n = a.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = a.weights().clone();
    let mut touched = vec![false; n];
    match mode {
        AblationMode::Edges => {
            for i in 0..n {
                for j in 0..n {
                    if rng.random::<f64>() < p {
                        touched[i] = touched[i] || weights[(i, j)] != 0.0;
                        weights[(i, j)] = 0.0;
                    }
                }
            }
        }
        AblationMode::Nodes => {
            for j in 0..n {
                if rng.random::<f64>() < p {
                    for i in 0..n {
                        touched[i] = touched[i] || weights[(i, j)] != 0.0;
                        weights[(i, j)] = 0.0;
                    }
                }
            }
        }
    }
    // Rows that lost no mass are left bit-identical; p = 0 is the identity.
    for i in 0..n {
        if !touched[i] {
            continue;
        }
        let sum: f64 = weights.row(i).iter().sum();
        if sum > 0.0 {
            for j in 0..n {
                weights[(i, j)] /= sum;
            }
        } else if policy == DegeneratePolicy::Uniform {
            for j in 0..n {
                weights[(i, j)] = 1.0 / n as f64;
            }
        }
    }
    StochasticMatrix::validated(weights, a.score().clone(), a.mask().map(|m| m.to_vec()))
}
