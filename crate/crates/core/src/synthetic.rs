//! Deterministic synthetic geometries and sequence-classification tasks.
//!
//! Everything here is reproducible from a single `u64` seed via a counter
//! based stream, so datasets can be regenerated anywhere without shipping
//! files.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// `n` uniformly spaced points on the circle of unit circumference
/// (radius `1/2pi`), embedded in the plane.
///
/// The spacing between neighbors is `1/n`, so kernel bandwidths resolve the
/// lattice comfortably at the scales used by the spectrum benchmarks.
pub fn unit_circumference_circle(n: usize) -> DMatrix<f64> {
    let r = 1.0 / (2.0 * std::f64::consts::PI);
    DMatrix::from_fn(n, 2, |i, c| {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        if c == 0 {
            r * theta.cos()
        } else {
            r * theta.sin()
        }
    })
}

/// Centers of the three-cluster planar mixture used by the connectivity and
/// spectral-gap benchmarks.
pub const THREE_CLUSTER_MODES: [[f64; 2]; 3] = [[3.0, 0.0], [-3.0, 0.0], [0.0, 1.732_050_807_568_877_2]];

/// Sample `n` tokens from the three-mode Gaussian mixture with covariance
/// `I/4` (per-coordinate standard deviation 1/2); modes are assigned
/// round-robin so cluster sizes stay balanced. Returns the embeddings and
/// the cluster index of each token.
pub fn three_cluster_embeddings(n: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = DMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let m = i % 3;
        labels.push(m);
        for c in 0..2 {
            let noise: f64 = StandardNormal.sample(&mut rng);
            points[(i, c)] = THREE_CLUSTER_MODES[m][c] + 0.5 * noise;
        }
    }
    (points, labels)
}

/// Isotropic Gaussian cloud of `n` points in `d` dimensions with the given
/// per-coordinate standard deviation.
pub fn gaussian_cloud(n: usize, d: usize, spread: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        spread * v
    })
}

/// Task family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TaskKind {
    /// Every token of a sequence is drawn around one mode; the label is that
    /// mode's index (nearest mode, since modes are well separated).
    ClusterLabel,
    /// The first and last tokens carry a strong signal `+/- c u` along a
    /// random unit direction `u`; the label says whether their signs agree.
    /// Middle tokens are low-norm clutter, so no per-token statistic reveals
    /// the label: only interactions between the two far tokens do.
    LongRangePair,
}

/// One labeled sequence.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Token vectors, one per row (`n_tokens x ambient_dim`).
    pub tokens: DMatrix<f64>,
    pub label: usize,
}

/// Train/test split of a generated dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Deterministic generator for a synthetic sequence-classification task.
///
/// Labels are derivable from the generated sequence itself (Bayes accuracy
/// is 1), and the whole dataset regenerates bit-identically from the seed.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub n_tokens: usize,
    pub ambient_dim: usize,
    pub seed: u64,
    /// Total sample count; generation splits 80/20 into train/test.
    pub n_samples: usize,
    /// Mode centers for [`TaskKind::ClusterLabel`]; class count equals the
    /// number of modes.
    pub modes: Vec<Vec<f64>>,
    /// Signal amplitude of the end tokens for [`TaskKind::LongRangePair`].
    pub signal: f64,
    /// Noise on the signal tokens.
    pub signal_noise: f64,
    /// Standard deviation of the middle clutter tokens.
    pub clutter: f64,
}

/// Construct a task with its documented defaults: the binary two-mode
/// cluster task at `+/- 3 e_1`, or the long-range pair task with signal 5,
/// signal noise 0.2 and clutter 0.4.
pub fn make_synthetic_task(
    kind: TaskKind,
    n_tokens: usize,
    ambient_dim: usize,
    seed: u64,
) -> Result<SyntheticTask> {
    if n_tokens < 2 || ambient_dim == 0 {
        return Err(Error::DimensionMismatch(format!(
            "need n_tokens >= 2 and ambient_dim >= 1, got {n_tokens} and {ambient_dim}"
        )));
    }
    let modes = match kind {
        TaskKind::ClusterLabel => {
            let mut plus = vec![0.0; ambient_dim];
            plus[0] = 3.0;
            let mut minus = vec![0.0; ambient_dim];
            minus[0] = -3.0;
            vec![minus, plus]
        }
        TaskKind::LongRangePair => Vec::new(),
    };
    Ok(SyntheticTask {
        kind,
        n_tokens,
        ambient_dim,
        seed,
        n_samples: 2560,
        modes,
        signal: 5.0,
        signal_noise: 0.2,
        clutter: 0.4,
    })
}

impl SyntheticTask {
    pub fn with_samples(mut self, n_samples: usize) -> Self {
        self.n_samples = n_samples;
        self
    }

    /// Replace the cluster mode set; each mode must have `ambient_dim`
    /// coordinates. The planar three-cluster benchmark uses
    /// [`THREE_CLUSTER_MODES`].
    pub fn with_modes(mut self, modes: Vec<Vec<f64>>) -> Result<Self> {
        if modes.len() < 2 || modes.iter().any(|m| m.len() != self.ambient_dim) {
            return Err(Error::DimensionMismatch(
                "need >= 2 modes, each of ambient_dim coordinates".into(),
            ));
        }
        self.modes = modes;
        Ok(self)
    }

    pub fn with_long_range_shape(mut self, signal: f64, signal_noise: f64, clutter: f64) -> Self {
        self.signal = signal;
        self.signal_noise = signal_noise;
        self.clutter = clutter;
        self
    }

    pub fn num_classes(&self) -> usize {
        match self.kind {
            TaskKind::ClusterLabel => self.modes.len(),
            TaskKind::LongRangePair => 2,
        }
    }

    /// Generate the full dataset with its 80/20 train/test split.
    pub fn generate(&self) -> Dataset {
        let n_train = self.n_samples * 4 / 5;
        let mut train = Vec::with_capacity(n_train);
        let mut test = Vec::with_capacity(self.n_samples - n_train);
        for idx in 0..self.n_samples {
            let s = self.sample(idx);
            if idx < n_train {
                train.push(s);
            } else {
                test.push(s);
            }
        }
        Dataset { train, test }
    }

    /// Deterministically generate sample `idx`.
    pub fn sample(&self, idx: usize) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        match self.kind {
            TaskKind::ClusterLabel => self.sample_cluster(&mut rng),
            TaskKind::LongRangePair => self.sample_long_range(&mut rng),
        }
    }

    fn sample_cluster(&self, rng: &mut ChaCha8Rng) -> Sample {
        let label = rng.random_range(0..self.modes.len());
        let mode = &self.modes[label];
        let mut tokens = DMatrix::zeros(self.n_tokens, self.ambient_dim);
        for i in 0..self.n_tokens {
            for c in 0..self.ambient_dim {
                let noise: f64 = StandardNormal.sample(rng);
                tokens[(i, c)] = mode[c] + 0.5 * noise;
            }
        }
        Sample { tokens, label }
    }

    fn sample_long_range(&self, rng: &mut ChaCha8Rng) -> Sample {
        let d = self.ambient_dim;
        // Random unit signal direction, fresh per sample: no fixed axis a
        // per-token readout could latch onto.
        let mut u = vec![0.0; d];
        loop {
            let mut sq = 0.0f64;
            for v in u.iter_mut() {
                *v = StandardNormal.sample(rng);
                sq += *v * *v;
            }
            if sq > 1e-12 {
                let norm = sq.sqrt();
                for v in u.iter_mut() {
                    *v /= norm;
                }
                break;
            }
        }
        let s_first: f64 = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
        let agree = rng.random::<f64>() < 0.5;
        let s_last = if agree { s_first } else { -s_first };
        let mut tokens = DMatrix::zeros(self.n_tokens, d);
        for i in 0..self.n_tokens {
            let (scale, coeff) = if i == 0 {
                (self.signal_noise, s_first * self.signal)
            } else if i == self.n_tokens - 1 {
                (self.signal_noise, s_last * self.signal)
            } else {
                (self.clutter, 0.0)
            };
            for c in 0..d {
                let noise: f64 = StandardNormal.sample(rng);
                tokens[(i, c)] = coeff * u[c] + scale * noise;
            }
        }
        Sample { tokens, label: agree as usize }
    }
}
