//! Style co-analysis of 3D shape collections from multi-view feature-line
//! drawings.

pub mod apps;
pub mod cache;
pub mod cluster;
pub mod config;
pub mod error;
pub mod hog;
pub mod io;
pub mod kmeans;
pub mod lineproj;
pub mod mesh;
pub mod patchbank;
pub mod pipeline;
pub mod pslf;
pub mod synth;
pub mod workflow;

pub use error::{Error, Result};
