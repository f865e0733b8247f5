mod compare;
mod data;
mod eval;
mod gradcheck;
mod restore;
mod train;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub use compare::compare;
pub use data::{prepare_data, synth_data};
pub use eval::eval;
pub use gradcheck::gradcheck;
pub use restore::restore;
pub use train::train;

/// PNG files directly inside `dir`, sorted by file name.
pub(crate) fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && has_png_extension(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub(crate) fn has_png_extension(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub(crate) fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Worker cap: `LCMKIT_THREADS` if set, else the available cores; one in
/// deterministic mode.
pub(crate) fn worker_count(jobs: usize, deterministic: bool) -> usize {
    if deterministic {
        return 1;
    }
    let cap = std::env::var("LCMKIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    cap.min(jobs).max(1)
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}
