//! Artifact files. Everything goes through a temp file in the target
//! directory and a rename, so a final path never holds a partial file.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

pub fn ensure_dir(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)
}

/// Writes `path` atomically through `fill`.
pub fn write_atomic<F>(path: &Path, fill: F) -> std::io::Result<PathBuf>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    ensure_dir(dir)?;
    let tmp = NamedTempFile::new_in(dir)?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        fill(&mut out)?;
        out.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(path.to_path_buf())
}

pub fn write_string(path: &Path, text: &str) -> std::io::Result<PathBuf> {
    write_atomic(path, |out| out.write_all(text.as_bytes()))
}

/// Adapts a library writer (which reports its own error type) to
/// [`write_atomic`].
pub fn write_with<F>(path: &Path, fill: F) -> std::io::Result<PathBuf>
where
    F: FnOnce(&mut dyn Write) -> singular_cbf::Result<()>,
{
    write_atomic(path, |out| fill(out).map_err(std::io::Error::other))
}
