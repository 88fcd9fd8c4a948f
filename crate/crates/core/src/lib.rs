//! Biologically inspired multi-scale feature extraction and coarse-to-fine
//! template matching.
//!
//! An image is analyzed by a stack of `M` layers. Each layer convolves the
//! image with a bank of oriented odd-phase Gabor kernels at scale
//! `sigma_1 * sqrt(2)^(m-1)`, pools the signed maxima over disc-shaped
//! receptive fields, and quantizes them into contrast-invariant integer
//! feature vectors. Templates trained around key points store the vectors of
//! every layer; search matches a large layer first to estimate scale and
//! correct position, then localizes with the smallest layer.
//!
//! Modules follow the pipeline:
//!
//! - [`raster`]: grayscale images, PGM/PNG I/O
//! - [`transform`]: benchmark transformations with exact coordinate maps
//! - [`gabor`]: kernels, convolution, receptive-field pooling
//! - [`topology`]: layer stack and hexagonal layouts
//! - [`features`]: raw responses, quantization, similarity
//! - [`template`]: training and template files
//! - [`matcher`]: the two-step coarse-to-fine search
//! - [`synth`]: seeded synthetic test imagery

pub mod error;
pub mod features;
pub mod gabor;
pub mod geom;
pub mod matcher;
pub mod raster;
pub mod synth;
pub mod template;
pub mod topology;
pub mod transform;

pub use error::{Error, Result};
pub use geom::Point;
pub use raster::Image;
