//! Horizontal resolution evaluation for 3D elevation products.
//!
//! A reference lidar DSM and a test product (point cloud, DSM or mesh) are
//! brought onto a common grid, aligned, and compared over evaluation regions
//! built from pairs of parallel building edges. Each region yields a contrast
//! value; a Gaussian-PSF contrast model `C(d) = A exp(-(pi sigma / d)^2)` is
//! fitted to the contrast-vs-separation scatter, and the separation where the
//! model crosses a threshold is reported as the resolvable distance.

pub mod alignment;
pub mod crs;
pub mod error;
pub mod footprints;
pub mod geom;
pub mod metrics;
pub mod pointcloud;
pub mod raster;
pub mod regions;

pub use error::{Error, Result};
pub use geom::{OrientedRect, Point2, Polygon, Segment};
pub use raster::Raster;
