//! Photometric localization against 3D Gaussian splat scenes.
//!
//! The pipeline has three phases: thumbnail-descriptor retrieval against a
//! pose database ([`retrieval`]), a scale-aware 1D photometric search along
//! the query's central ray ([`initializer`]), and mask-guided photometric
//! refinement with an analytic pose gradient ([`refiner`]). Supporting
//! modules provide camera geometry ([`geometry`]), scene synthesis and splat
//! PLY I/O ([`scene`]), a deterministic tile-based forward/backward renderer
//! ([`render`]), photometric losses and reliability masks ([`photometry`]),
//! pose-error metrics ([`metrics`]), and the experiment harness ([`harness`]).

pub mod geometry;
pub mod harness;
pub mod image;
pub mod initializer;
pub mod metrics;
pub mod photometry;
pub mod refiner;
pub mod render;
pub mod retrieval;
pub mod scene;

pub use geometry::{CameraPose, Intrinsics, Rotation, So3Increment};
pub use harness::{ExperimentConfig, ExperimentReport, LocalizationResult, PhaseStaging};
pub use image::{Image, ScalarImage};
pub use photometry::{PhotometricLoss, ReliabilityMask, TauPolicy};
pub use refiner::{RefineConfig, RefineTrace};
pub use render::{PoseGradient, RenderConfig, RenderedView};
pub use retrieval::{GlobalDescriptor, PoseDatabase, ViewSource};
pub use scene::{ArtifactSpec, GaussianPrimitive, GaussianScene, SceneRecipe};
