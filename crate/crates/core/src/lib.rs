//! Zero-shot video editing consistency engine.
//!
//! The crate is organised around the per-frame editing loop:
//!
//! - [`diffusion`]: noise schedules, the DDIM update shared by inversion and
//!   sampling, guidance and the [`diffusion::DenoiserBackend`] trait.
//! - [`memory`]: the bounded spatio-temporal feature memory and its
//!   neighbour-gap eviction policy.
//! - [`propagation`]: most-similar token propagation against the memory.
//! - [`mask`]: cross-attention masks, contours, hole filling and the
//!   temporal overlap between consecutive frames.
//! - [`blend`]: masked background injection of source latents.
//! - [`pipeline`]: the orchestration of all of the above, live or replayed
//!   from recorded tensors.
//! - [`metrics`]: PSNR/SSIM (optionally background-restricted) and token drift.
//! - [`io`]: the tensor file format, PGM masks, manifests and run configs.
//!
//! Data-parallel inner loops go through [`exec::Execution`]; with the
//! `parallel` feature disabled every path runs sequentially.

pub mod blend;
pub mod diffusion;
pub mod exec;
pub mod io;
pub mod mask;
pub mod memory;
pub mod metrics;
pub mod pipeline;
pub mod propagation;

pub use exec::Execution;
