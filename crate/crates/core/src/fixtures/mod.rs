//! Deterministic generator of small MPEG-2 elementary streams together with
//! their expected decoded pictures and exact per-picture bit counts.

mod generator;
pub mod oracle;
pub mod spec;
pub mod syntax;
mod writer;

pub use generator::{generate, generate_from_toml, GeneratedPicture, GeneratedSlice, GeneratedStream};
pub use spec::{FixtureSpec, OptionsPatch, Override, PictureOptions, Recipe, Structure};
pub use writer::BitWriter;
