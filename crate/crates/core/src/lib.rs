//! Simulation, reconstruction and evaluation of charged tracks in a
//! cylindrical drift chamber.

pub mod config;
pub mod dataset;
pub mod finder;
pub mod fitter;
pub mod geometry;
pub mod helix;
pub mod metrics;
pub mod pipeline;
pub mod reco;
pub mod sim;
pub mod stereo;
