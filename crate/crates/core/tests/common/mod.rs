#![allow(dead_code)]

pub mod gradsuite;

use std::path::PathBuf;

/// Scratch directory under the build's target tree.
pub fn scratch_dir() -> tempfile::TempDir {
    tempfile::Builder::new()
        .prefix("vqa-")
        .tempdir_in(PathBuf::from(env!("CARGO_TARGET_TMPDIR")))
        .expect("scratch dir")
}
