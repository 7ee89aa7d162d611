//! Spectral graph convolutional network with complex Möbius-transformation
//! filters, for lifting 2D human joint positions to 3D. Includes the dense
//! linear algebra, reverse-mode autodiff, skeleton graph machinery, training
//! loop, synthetic data generation, and evaluation metrics that the CLI is
//! built on.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod mobius;
pub mod train;

pub use checkpoint::{load_checkpoint, peek_topology_hash, save_checkpoint};
pub use data::{generate_synthetic, read_dataset, write_dataset, CameraModel, GeneratorConfig, PoseSample};
pub use error::{Error, Result};
pub use graph::{decompose, SkeletonTopology, SpectralDecomposition};
pub use linalg::{ComplexMatrix, EigenResult, RealMatrix};
pub use metrics::{evaluate, mpjpe, pck_150, EvalReport};
pub use mobius::{count_parameters, init_network, standard_widths, MobiusNetwork};
pub use train::{train, NormalizationStats, TrainConfig, TrainOutcome};
