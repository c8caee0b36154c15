//! MPEG-2 video elementary-stream decoder with per-frame bandwidth
//! accounting.

pub mod bandwidth;
pub mod bitio;
pub mod decoder;
pub mod error;
pub mod fixtures;
pub mod framestore;
pub mod headers;
pub mod macroblock;
pub mod motion;
pub mod par;
pub mod transform;
pub mod vlc;

pub use error::{Error, Result};
pub use decoder::{decode_stream, DecodeOptions, DecodeOutput, Strictness};
pub use par::ExecMode;
