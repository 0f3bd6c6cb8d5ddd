//! Head modeling and pose manipulation by analysis-by-synthesis.

pub mod config;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod harmonic;
pub mod image;
pub mod losses;
pub mod manipulate;
pub mod model;
pub mod render;
pub mod scene;

pub use error::{Error, Result};
pub use geometry::{Camera, DepthMap, Pose, RegionMasks};
pub use image::{Image, Mask};
pub use manipulate::{HeadAssets, PoseTarget};
pub use model::{FaceCoefficients, MorphableModel};
