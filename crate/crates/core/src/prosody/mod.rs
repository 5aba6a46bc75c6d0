//! Prosody path: discrete indices to frame-level prosody vectors, then
//! downsample-upsample filtering.

mod encoder;
mod filters;

pub use encoder::{EncoderCache, ProsodyEncoder, ProsodyEncoderConfig};
pub use filters::{
    adpf, adpf_grad, rdpf, rdpf_blocks, rdpf_phone_blocks, rdpf_phones, repeat_rows, repeat_rows_backward, select_in_blocks, AdpfCache,
    AdpfParams, FilteredProsody, Provenance, RdpfMode,
};

/// Width of prosody vectors (and of every filter output).
pub const PROSODY_DIM: usize = 4;
