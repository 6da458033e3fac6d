//! Markov-chain diagonalization of symmetric attention kernels, recovery of
//! fractional-operator eigenvalues, power-law scaling fits, diffusion maps
//! and distances, spectral gaps, and the anisotropic normalization family.
//!
//! For a symmetric nonnegative score matrix `C` with degrees
//! `D_ii = sum_j C_ij`, the row-normalized chain `A = D^-1 C` is adjoint to
//! the symmetric matrix `Ahat = D^-1/2 C D^-1/2`; every decomposition here
//! goes through `Ahat` with a symmetric solver for stability, mapping the
//! orthonormal eigenvectors `v_k` back to right/left eigenvectors of `A` as
//! `psi_k = sqrt(sum D) D^-1/2 v_k` and `phi_k = D^1/2 v_k / sqrt(sum D)`.
//! That scaling makes `psi_0` the constant vector of ones and `phi_0` the
//! stationary distribution, so transition rows expand as
//! `p(tau, y | x_i) = sum_k eta_k^tau psi_k(i) phi_k(y)` with no stray
//! normalization factors.

use nalgebra::DMatrix;

use crate::attention::{row_normalize, StochasticMatrix};
use crate::error::{Error, Result};
use crate::kernel::{FractionalOrder, KernelSpec};

/// Symmetry tolerance accepted by [`diagonalize`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues and bi-orthonormal left/right eigenvectors of a
/// row-normalized symmetric kernel.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// Descending eigenvalues, `eta_0 = 1` first.
    pub eigenvalues: Vec<f64>,
    /// Right eigenvectors of the chain, one per column; `psi_0` is constant.
    pub right: DMatrix<f64>,
    /// Left eigenvectors, one per column; `phi_0` is the stationary
    /// distribution and sums to 1.
    pub left: DMatrix<f64>,
    /// Kernel degrees (row sums of the score matrix).
    pub degrees: Vec<f64>,
}

impl SpectralDecomposition {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Transition row `p(tau, . | x_i)` reconstructed spectrally.
    pub fn transition_row(&self, tau: f64, i: usize) -> Result<Vec<f64>> {
        let n = self.n();
        let mut row = vec![0.0; n];
        for k in 0..n {
            let w = eta_pow(self.eigenvalues[k], tau)? * self.right[(i, k)];
            for (y, r) in row.iter_mut().enumerate() {
                *r += w * self.left[(y, k)];
            }
        }
        Ok(row)
    }
}

/// `eta^tau` with the convention that negative eigenvalues admit only
/// integer diffusion times.
fn eta_pow(eta: f64, tau: f64) -> Result<f64> {
    if eta >= 0.0 || tau.fract() == 0.0 {
        let v = eta.powf(tau);
        if v.is_finite() {
            return Ok(v);
        }
    }
    Err(Error::NumericalDegeneracy(format!(
        "eta^tau undefined for eta = {eta}, tau = {tau}"
    )))
}

/// Diagonalize a symmetric nonnegative score matrix through its adjoint
/// symmetric form.
///
/// Floating-point asymmetry up to [`SYMMETRY_TOL`] is repaired by averaging
/// with the transpose; anything beyond is an error. Eigenvalues are sorted
/// descending with ties broken by original index, and each eigenvector pair
/// is sign-fixed so the first significant component of `psi_k` is positive.
pub fn diagonalize(score: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    diagonalize_inner(score, SYMMETRY_TOL)
}

/// [`diagonalize`] with the symmetry check relaxed: the input is averaged
/// with its transpose no matter how asymmetric it is.
pub fn diagonalize_forced(score: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    diagonalize_inner(score, f64::INFINITY)
}

fn diagonalize_inner(score: &DMatrix<f64>, tol: f64) -> Result<SpectralDecomposition> {
    let n = score.nrows();
    if score.ncols() != n || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "score matrix must be square and nonempty, got {}x{}",
            n,
            score.ncols()
        )));
    }
    let mut max_asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((score[(i, j)] - score[(j, i)]).abs());
        }
    }
    if max_asym > tol {
        return Err(Error::NotSymmetric { max_asymmetry: max_asym, tol });
    }
    let mut degrees = vec![0.0; n];
    for i in 0..n {
        let d: f64 = score.row(i).iter().sum();
        if !(d > 0.0) {
            return Err(Error::ZeroDegree { row: i });
        }
        degrees[i] = d;
    }
    let sqrt_d: Vec<f64> = degrees.iter().map(|d| d.sqrt()).collect();
    let mut ahat = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            ahat[(i, j)] = score[(i, j)] / (sqrt_d[i] * sqrt_d[j]);
        }
    }
    // Repair round-off asymmetry before handing to the symmetric solver.
    let ahat = (&ahat + ahat.transpose()) * 0.5;
    let (eigenvalues_asc, eigenvectors) = crate::eigh::symmetric_eigen(&ahat)?;

    // The solver returns ascending order; this decomposition is descending
    // with stable ties, so reverse while keeping original-index tiebreaks.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigenvalues_asc[b]
            .partial_cmp(&eigenvalues_asc[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let total_degree: f64 = degrees.iter().sum();
    let scale = total_degree.sqrt();
    let mut eigenvalues = Vec::with_capacity(n);
    let mut right = DMatrix::zeros(n, n);
    let mut left = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        eigenvalues.push(eigenvalues_asc[src]);
        let v = eigenvectors.column(src);
        // Sign convention: first significant component of psi made positive;
        // psi and phi flip together to preserve bi-orthonormality.
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut sign = 1.0;
        for x in v.iter() {
            if x.abs() > 1e-12 * vmax {
                sign = x.signum();
                break;
            }
        }
        for i in 0..n {
            right[(i, k)] = sign * scale * v[i] / sqrt_d[i];
            left[(i, k)] = sign * sqrt_d[i] * v[i] / scale;
        }
    }
    Ok(SpectralDecomposition { eigenvalues, right, left, degrees })
}

/// Fractional-operator eigenvalue estimates recovered from a kernel
/// decomposition via `lambda_i = -log(eta_i) / t` with `t = epsilon^(alpha/2)`.
#[derive(Debug, Clone)]
pub struct FractionalSpectrum {
    /// Ascending nonnegative eigenvalue estimates; `lambda_0 = 0` for
    /// connected kernels.
    pub lambdas: Vec<f64>,
    pub epsilon: f64,
    /// Diffusion time `epsilon^(alpha/2)`.
    pub t: f64,
    /// How many trailing eigenvalues were non-positive and dropped (the log
    /// is undefined there); dropping truncates only the tail of the
    /// ascending sequence.
    pub dropped: usize,
}

/// Build the kernel matrix on `points` (one point per row) with
/// `kappa = sqrt(epsilon)`, diagonalize it and recover the operator spectrum.
///
/// `d_m` is the tail dimension of the power-law branch. Points must be
/// pairwise distinct, and a kernel whose second eigenvalue reaches 1 within
/// 1e-12 is reported as disconnected rather than silently producing a
/// spurious zero eigenvalue.
pub fn fractional_spectrum(
    points: &DMatrix<f64>,
    alpha: FractionalOrder,
    epsilon: f64,
    d_m: usize,
) -> Result<FractionalSpectrum> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: "bandwidth must be positive",
            value: epsilon,
        });
    }
    let n = points.nrows();
    if n < 2 {
        return Err(Error::DimensionMismatch(
            "need at least two points for a spectrum".into(),
        ));
    }
    let spec = KernelSpec::new(alpha, d_m, epsilon.sqrt())?;
    let mut score = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut sq = 0.0;
            for t in 0..points.ncols() {
                let diff = points[(i, t)] - points[(j, t)];
                sq += diff * diff;
            }
            let dist = sq.sqrt();
            if i != j && dist == 0.0 {
                return Err(Error::InvalidParameter {
                    name: "points",
                    reason: "points must be pairwise distinct",
                    value: i as f64,
                });
            }
            let v = spec.phi(dist)?;
            score[(i, j)] = v;
            score[(j, i)] = v;
        }
    }
    let decomp = diagonalize(&score)?;
    let eta1 = decomp.eigenvalues[1];
    if eta1 >= 1.0 - 1e-12 {
        return Err(Error::DisconnectedKernel { eta1 });
    }
    let t = epsilon.powf(alpha.value() / 2.0);
    let mut lambdas = Vec::with_capacity(n);
    let mut dropped = 0;
    for &eta in &decomp.eigenvalues {
        if eta > 0.0 {
            lambdas.push(-eta.ln() / t);
        } else {
            dropped += 1;
        }
    }
    Ok(FractionalSpectrum { lambdas, epsilon, t, dropped })
}

/// Least-squares fit of `log lambda_j` against `log j`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct WeylFit {
    pub slope: f64,
    pub r_squared: f64,
    pub lo: usize,
    pub hi: usize,
    /// Indices actually used (positive eigenvalues inside the window).
    pub points_used: usize,
}

/// Fit the log-log eigenvalue growth over the inclusive index window
/// `[lo, hi]` of the ascending spectrum; index 0 is the trivial zero mode and
/// must stay outside the window.
pub fn weyl_fit(spectrum: &FractionalSpectrum, lo: usize, hi: usize) -> Result<WeylFit> {
    if lo == 0 || hi < lo || hi >= spectrum.lambdas.len() {
        return Err(Error::InvalidParameter {
            name: "window",
            reason: "need 1 <= lo <= hi < len(lambdas)",
            value: lo as f64,
        });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for j in lo..=hi {
        let l = spectrum.lambdas[j];
        if l > 0.0 {
            xs.push((j as f64).ln());
            ys.push(l.ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::InvalidParameter {
            name: "window",
            reason: "fewer than 3 usable indices in the fit window",
            value: xs.len() as f64,
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(WeylFit { slope, r_squared, lo, hi, points_used: xs.len() })
}

/// Default fit window `[5, n/10]`, clear of the trivial mode and of the noisy
/// tail where discretization error grows with eigenvalue magnitude.
pub fn default_weyl_window(n: usize) -> (usize, usize) {
    (5, (n / 10).max(8))
}

/// Eigen-coordinates of tokens under the diffusion map: column `k` holds
/// `eta_k^tau psi_k`, for `k = 1..=m` (the trivial constant mode is always
/// excluded).
#[derive(Debug, Clone)]
pub struct DiffusionEmbedding {
    pub coordinates: DMatrix<f64>,
    pub tau: f64,
    pub m: usize,
}

impl DiffusionEmbedding {
    /// Euclidean distance between tokens `i` and `j` in embedding space.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let mut sq = 0.0;
        for k in 0..self.m {
            let diff = self.coordinates[(i, k)] - self.coordinates[(j, k)];
            sq += diff * diff;
        }
        sq.sqrt()
    }

    /// Largest pairwise embedding distance.
    pub fn diameter(&self) -> f64 {
        let n = self.coordinates.nrows();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.max(self.distance(i, j));
            }
        }
        best
    }
}

/// Diffusion-map embedding with `m` retained components at diffusion time
/// `tau`.
pub fn diffusion_map(
    decomp: &SpectralDecomposition,
    tau: f64,
    m: usize,
) -> Result<DiffusionEmbedding> {
    let n = decomp.n();
    if m == 0 || m > n - 1 {
        return Err(Error::DimensionMismatch(format!(
            "retained components m = {m} must lie in [1, n-1] with n = {n}"
        )));
    }
    let mut coordinates = DMatrix::zeros(n, m);
    for k in 1..=m {
        let w = eta_pow(decomp.eigenvalues[k], tau)?;
        for i in 0..n {
            coordinates[(i, k - 1)] = w * decomp.right[(i, k)];
        }
    }
    Ok(DiffusionEmbedding { coordinates, tau, m })
}

/// Diffusion distance between tokens `i` and `j` at time `tau`:
/// the density-weighted L2 distance between their `tau`-step transition
/// rows, `sum_y (p(tau,y|x_i) - p(tau,y|x_j))^2 / phi_0(y)`, returned as a
/// distance (square root).
pub fn diffusion_distance(
    decomp: &SpectralDecomposition,
    tau: f64,
    i: usize,
    j: usize,
) -> Result<f64> {
    let n = decomp.n();
    if i >= n || j >= n {
        return Err(Error::DimensionMismatch(format!(
            "token indices ({i}, {j}) out of range for n = {n}"
        )));
    }
    for y in 0..n {
        if decomp.left[(y, 0)] <= 0.0 {
            return Err(Error::NumericalDegeneracy(format!(
                "stationary density non-positive at token {y}"
            )));
        }
    }
    let p_i = decomp.transition_row(tau, i)?;
    let p_j = decomp.transition_row(tau, j)?;
    let mut acc = 0.0;
    for y in 0..n {
        let diff = p_i[y] - p_j[y];
        acc += diff * diff / decomp.left[(y, 0)];
    }
    Ok(acc.max(0.0).sqrt())
}

/// Spectral gap `1 - |eta_1|` of a stochastic matrix: one minus the
/// second-largest eigenvalue modulus, clamped to `[0, 1]`.
///
/// The full complex spectrum is used, so non-normal matrices (general
/// projections, softmax baseline) are handled by modulus; for
/// adjoint-symmetric chains this coincides with `1 - eta_1`.
pub fn spectral_gap(a: &StochasticMatrix) -> f64 {
    let n = a.n();
    if n < 2 {
        return 1.0;
    }
    let eigs = a.weights().clone().complex_eigenvalues();
    let mut moduli: Vec<f64> = eigs.iter().map(|c| c.norm()).collect();
    moduli.sort_by(|x, y| y.partial_cmp(x).unwrap());
    (1.0 - moduli[1]).clamp(0.0, 1.0)
}

/// Weighted graph-Laplacian normalization family: rescale the kernel by
/// `D^-a C D^-a`, then row-normalize. `a = 0` reproduces plain row
/// normalization bit-for-bit; `a = 1` divides out sampling-density effects.
pub fn anisotropic_normalize(score: &DMatrix<f64>, a: f64) -> Result<StochasticMatrix> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::InvalidParameter {
            name: "a",
            reason: "normalization exponent must lie in [0, 1]",
            value: a,
        });
    }
    let n = score.nrows();
    if score.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "score matrix must be square, got {}x{}",
            n,
            score.ncols()
        )));
    }
    let mut degrees = vec![0.0; n];
    for i in 0..n {
        let d: f64 = score.row(i).iter().sum();
        if !(d > 0.0) {
            return Err(Error::ZeroDegree { row: i });
        }
        degrees[i] = d.powf(a);
    }
    let mut rescaled = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            rescaled[(i, j)] = score[(i, j)] / (degrees[i] * degrees[j]);
        }
    }
    row_normalize(&rescaled, None)
}
