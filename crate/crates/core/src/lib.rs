//! Teleoperated-driving LiDAR benchmark core.
//!
//! The pipeline runs synthetic LiDAR frames through two geometry codec
//! families, scores a geometric detector on the reconstructed clouds with
//! interpolated average precision, and feeds the measured frame sizes and
//! processing times into a discrete-event V2X uplink simulator whose output
//! is checked against 3GPP requirement profiles.

pub mod codec;
pub mod detect;
pub mod eval;
pub mod io;
pub mod netsim;
pub mod pc;
pub mod pipeline;
pub mod rangecoder;
pub mod scenegen;
pub mod stats;

pub use pc::{Box3D, ClassLabel, LabeledFrame, Point3, PointCloud};
