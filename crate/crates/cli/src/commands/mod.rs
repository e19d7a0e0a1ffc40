pub mod convert;
pub mod encode;
pub mod eval;
pub mod extract;
pub mod synth;
pub mod train;

use std::path::Path;

use anyhow::Context as _;

use crate::error::Failure;

pub fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(Failure::Data)
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Data)
}
