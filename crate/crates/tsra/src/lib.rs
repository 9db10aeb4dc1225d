//! Alignment toolkit for weakly misaligned RGB/infrared rotated-box
//! annotations.
//!
//! Paired RGB/IR aerial images are usually registered globally but still
//! disagree per object: the same vehicle carries slightly different
//! position, size and angle in the two modalities' annotations. This crate
//! provides the pieces needed to measure, simulate and correct that
//! misalignment at desk scale, with no learning framework underneath:
//!
//! - [`geometry`]: rotated-rectangle algebra and exact IoU via convex
//!   clipping.
//! - [`deviation`]: the five-component translation/scale/rotation codec
//!   between a reference and a sensed box.
//! - [`pooling`]: rotated RoIAlign over dense feature maps.
//! - [`align`]: a three-branch fully connected head that predicts deviations
//!   from subtracted region features, trained by explicit backpropagation.
//! - [`modality`]: the pixel-counting modality-selection score that picks
//!   the better-annotated modality per object.
//! - [`jitter`]: Gaussian proposal jitter augmentation.
//! - [`evaluation`]: rotated mAP and deviation statistics.
//! - [`simulator`]: synthetic paired scenes with known ground-truth
//!   deviations, so every claim above is checkable.
//! - [`pipeline`]: glue that turns simulator datasets into training samples
//!   and alignment reports.
//!
//! The `tsra` command-line tool (its own crate) drives the full
//! simulate → train → evaluate loop on top of this library. A narrative
//! guide lives in `book/`; its code snippets compile as doc-tests.

pub mod align;
pub mod deviation;
pub mod evaluation;
pub mod geometry;
pub mod image;
pub mod jitter;
pub mod modality;
pub mod pipeline;
pub mod pooling;
pub mod rng;
pub mod simulator;

mod booktest;

pub use deviation::{decode, encode, Deviation, DeviationError, RotationMode};
pub use geometry::{corners, rotated_iou, GeometryError, Polygon, RotatedBox};
pub use image::GrayImage;
pub use pooling::{fuse, rotated_roi_align, subtract, FeatureMap, PooledFeature, PoolingError};
