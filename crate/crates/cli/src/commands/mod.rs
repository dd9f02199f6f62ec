pub mod consistency;
pub mod eval;
pub mod project;
pub mod synth;
pub mod warp;
