//! Distance-based attention with local (exponential) and non-local
//! (power-law) heat kernels, together with the spectral, graph-theoretic and
//! training machinery used to analyze the mechanism.
//!
//! The crate is organized around five subsystems:
//!
//! - [`kernel`]: scalar kernel profiles, the heat-kernel dichotomy,
//!   normalization constants, distance-scale conventions and symmetric
//!   alpha-stable sampling;
//! - [`attention`]: score matrices, row normalization, the residual
//!   attention block, the softmax dot-product baseline, projection
//!   parametrizations, masking and ablation;
//! - [`spectral`]: Markov-chain diagonalization, fractional-spectrum
//!   recovery, diffusion maps and distances, spectral gaps and the
//!   anisotropic normalization family;
//! - [`graph`]: attention graphs with reciprocal-weight edge lengths and
//!   path-length statistics;
//! - [`model`]: a small trainable encoder with hand-written analytic
//!   gradients, an Adam optimizer, and sweep/ablation harnesses over the
//!   synthetic sequence-classification tasks in [`synthetic`].

pub mod attention;
pub mod eigh;
pub mod error;
pub mod graph;
pub mod hqr;
pub mod kernel;
pub mod model;
pub mod spectral;
pub mod synthetic;

pub use attention::{
    ablate, ablate_with_policy, dot_product_attention, fna_block, fna_score, head_scores,
    orthogonal_parametrization, reduce_projections, row_normalize, AblationMode, AttentionConfig,
    AttentionVariant, DegeneratePolicy, EmbeddingMatrix, Manifold, ProjectionMode, ProjectionSet,
    StochasticMatrix,
};
pub use error::{Error, Result};
pub use graph::{
    build_graph, mean_path_vs_length, shortest_hops, shortest_weighted_lengths, AttentionGraph,
    PathStats,
};
pub use kernel::{
    c_d_alpha, characteristic_function, gaussian_heat_kernel, kappa_convention, phi_local,
    phi_nonlocal, sample_sas, FractionalOrder, KappaTask, KernelSpec, StableParams,
};
pub use model::{
    ablation_sweep, backward, build_spec, evaluate, forward, gradient_check, sweep, train,
    AblationSpec, EncoderSpec, InputSpec, MetricsHistory, Params, SweepCell, TrainConfig,
    VariantSpec,
};
pub use spectral::{
    anisotropic_normalize, diagonalize, diagonalize_forced, diffusion_distance, diffusion_map,
    fractional_spectrum, spectral_gap, weyl_fit, DiffusionEmbedding, FractionalSpectrum,
    SpectralDecomposition, WeylFit,
};
pub use synthetic::{
    gaussian_cloud, make_synthetic_task, three_cluster_embeddings, unit_circumference_circle,
    Dataset, Sample, SyntheticTask, TaskKind,
};
