//! Detection-dataset engineering toolkit.
//!
//! The crate covers the offline data pathway of a single-class detector:
//! lossless raster I/O and warping ([`imagery`]), annotation parsing
//! ([`labels`]), seeded geometric/photometric/compositional augmentation with
//! bounding-box propagation ([`augment`]), structure-preserving synthetic
//! color variation ([`synthcolor`]), patient-aware dataset variants and
//! splits ([`datasetops`]), and evaluation of externally produced detections
//! ([`metrics`]).
//!
//! Every operation is a pure function of its inputs; anything randomized
//! takes an explicit seed or generator, so whole pipelines replay
//! byte-identically.

pub mod augment;
pub mod datasetops;
pub mod imagery;
pub mod labels;
pub mod metrics;
pub mod synthcolor;

#[cfg(feature = "oracle")]
pub mod oracle;
