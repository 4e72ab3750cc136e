//! Generation of bounding boxes that overlap a reference box with a
//! guaranteed minimum IoU, and of positive RoI sets built on top of it.

pub mod analysis;
pub mod balanced;
pub mod error;
pub mod feasible;
pub mod generator;
pub mod geometry;
pub mod io;
pub mod oracle;
pub mod proi;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use geometry::{area, intersection, iou, BBox, Point};
pub use rng::SeededRng;
