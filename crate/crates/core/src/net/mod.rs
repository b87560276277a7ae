//! The interpolation network and the machinery to train it.

mod layers;
mod params;
mod real;
mod se;
mod unet;

pub use params::{ParamId, ParamStore, Segment};
pub use real::Real;
pub use se::{bottleneck_width, se_forward, SeWeights};
pub use unet::{build_network, FramePair, InterpolationNetwork, Mode, NetConfig, NetTape, KERNEL};
