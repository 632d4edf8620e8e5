//! Template-based retrosynthesis with staged discrete graph diffusion.

pub mod cli;
pub mod denoiser;
pub mod evalrank;
pub mod features;
pub mod molgraph;
pub mod noise;
pub mod pipeline;
pub mod reaction;
pub mod synth;
