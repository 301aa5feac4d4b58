//! Wavelet-assisted state-space super-resolution network.
//!
//! ```text
//! x ─ shallow conv ─┬─ N_g × [ N_m × block ─ conv ─ (+group input) ] ─ (+) ─ conv ─ shuffle(r) ─ conv ─ y
//!                   └────────────────────────────────────────────────────┘
//! ```
//!
//! A block splits its input into Haar bands. The low band goes through the
//! state-space branch; the three high bands are gated by difference
//! convolutions driven by the low-band result. The low-band output is tiled
//! over the three high bands and multiplied in, all four bands are refined
//! by one 3×3 conv, reconstructed, and added to the block input.

mod config;
mod layers;
mod model;

pub use config::{ModelConfig, CHANNEL_SWEEP_REFERENCE, CONFIG_KEYS, DEPTH_SWEEP_REFERENCE};
pub use layers::{
    Builder, Conv3, Ctx, DwConv3, Fc, GatedFfn, Group, Hfem, Init, Lfssm, Norm, PdConv, ScanDir, Vssm, Wam,
    KAIMING_GAIN,
};
pub use model::{PdcMode, WmsrModel, MIN_INPUT_SIDE};
