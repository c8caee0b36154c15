#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use m2vscope::fixtures::{generate, FixtureSpec, GeneratedStream};

pub fn spec_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/specs")
}

pub fn fixture(name: &str) -> GeneratedStream {
    let text = std::fs::read_to_string(spec_dir().join(format!("{name}.toml"))).unwrap();
    generate(&FixtureSpec::from_toml(&text).unwrap()).unwrap()
}

/// Writes the named fixture's stream into `dir` and returns its path.
pub fn write_fixture(dir: &Path, name: &str) -> (GeneratedStream, PathBuf) {
    let g = fixture(name);
    let path = dir.join(format!("{name}.m2v"));
    std::fs::write(&path, &g.bytes).unwrap();
    (g, path)
}

pub fn m2vscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_m2vscope"))
        .args(args)
        .env_remove("M2VSCOPE_LOG")
        .output()
        .unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Rewrites the sequence extension of a generated stream to signal 4:2:2.
pub fn with_422_chroma(bytes: &[u8]) -> Vec<u8> {
    let mut out = bytes.to_vec();
    let at = out
        .windows(5)
        .position(|w| w[..4] == [0, 0, 1, 0xB5] && w[4] >> 4 == 1)
        .expect("sequence extension");
    // chroma_format sits in bits 2..1 of the second payload byte.
    out[at + 5] = (out[at + 5] & !0b110) | 0b100;
    out
}
