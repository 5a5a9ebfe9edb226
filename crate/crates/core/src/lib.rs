//! Supervised contrastive domain adaptation for multi-center slide
//! embeddings.
//!
//! Slides arrive as bags of patch embeddings, are pooled into one vector per
//! slide, and are mapped by a small learned head into a common space where
//! same-class slides from different centers sit together. The head is trained
//! with a supervised contrastive loss on batches that always contain every
//! class from every center; classification is by nearest class prototype.
//!
//! Modules:
//!
//! * [`embedding`], [`format`]: data model, pooling, splits, binary I/O
//! * [`loss`]: the contrastive objective and its gradient
//! * [`sampler`]: cross-center batch construction
//! * [`adapter`]: the head, its backward pass, Adam training
//! * [`prototype`]: prototype classification and balanced accuracy
//! * [`stain`]: Macenko stain estimation and normalization baseline
//! * [`synth`], [`harness`]: synthetic benchmark and experiment grids
//! * [`projection`]: 2-D PCA views
//! * [`config`]: run configuration files

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adapter;
pub mod config;
pub mod embedding;
pub mod error;
pub mod format;
pub mod harness;
pub mod linalg;
pub mod loss;
pub mod projection;
pub mod prototype;
pub mod rng;
pub mod sampler;
pub mod stain;
pub mod synth;

pub use adapter::{backward, forward, init_head, train, transform, AdapterHead, HeadShape, TrainConfig, TrainReport};
pub use embedding::{bgap, l2_normalize, split_dataset, DatasetManifest, SlideBag, SlideEmbedding, Split};
pub use error::{Result, ScdaError};
pub use format::{load_embeddings, save_embeddings};
pub use harness::{run_crosscenter_grid, run_fewshot, DatasetView, FewShotConfig, Method, Report};
pub use linalg::Matrix;
pub use loss::{pairwise_similarity, supcon_loss, LossBatch, LossResult};
pub use projection::{pca2d, Projection2D};
pub use prototype::{balanced_accuracy, build_prototypes, evaluate, predict, ConfusionMatrix, PrototypeBank};
pub use sampler::{check_feasibility, make_batches, BatchPlan, BatchSpec, TrainingPool};
pub use stain::{estimate_stain_profile, normalize_to_target, MacenkoParams, RgbImage, StainProfile};
pub use synth::{generate, SynthConfig, SyntheticDataset};
