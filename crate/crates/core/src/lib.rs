//! Landmark detection on lateral cephalograms: chin edge tracing, weighted
//! template matching and line estimation, with training and evaluation.

pub mod dataset;
pub mod edges;
pub mod error;
pub mod image;
pub mod imaging;
pub mod landmark;
pub mod pnm;
pub mod regions;
pub mod chin;
pub mod wtm;
pub mod lines;
pub mod evaluation;
pub mod config;
pub mod phantom;
pub mod overlay;
pub mod pipeline;
