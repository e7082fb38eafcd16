//! Functional and architectural simulator for hidden-network inference
//! accelerators: blocked convolution with layer-penetrative tiling, an
//! activation-localized three-core CIM machine model, and the access-count
//! and energy analyses built on top of it.
//!
//! Module map:
//! - [`netspec`]: network descriptions, quantized tensors, core geometry.
//! - [`hnn`]: deterministic weight generation, supermasks, masked weights.
//! - [`refconv`]: the golden functional engine (standard and block conv,
//!   tile concatenation, whole-network reference execution).
//! - [`lpt`]: the tiling planner, schedule walker, footprint and
//!   fused-access analyses, plan validation.
//! - [`alsim`]: the architectural simulator with access counters.
//! - [`energy`]: SRAM access-energy model and dataflow comparisons.

pub mod alsim;
pub mod energy;
pub mod error;
pub mod hnn;
pub mod lpt;
pub mod netspec;
pub mod refconv;

pub use error::{Error, Result};
