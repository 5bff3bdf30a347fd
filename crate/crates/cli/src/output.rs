//! All-or-nothing output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tempfile::NamedTempFile;

/// Output files staged next to their destinations and renamed into place
/// only once every one of them has been written.
#[derive(Default)]
pub struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
}

impl Staged {
    pub fn write(
        &mut self,
        dest: &Path,
        fill: impl FnOnce(&mut BufWriter<&File>) -> Result<()>,
    ) -> Result<()> {
        let dir = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let tmp = NamedTempFile::new_in(dir)
            .with_context(|| format!("cannot write into {}", dir.display()))?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            fill(&mut w)?;
            w.flush()
                .with_context(|| format!("writing {}", dest.display()))?;
        }
        tmp.as_file()
            .sync_all()
            .with_context(|| format!("writing {}", dest.display()))?;
        self.files.push((tmp, dest.to_path_buf()));
        Ok(())
    }

    pub fn commit(self) -> Result<()> {
        for (tmp, dest) in self.files {
            tmp.persist(&dest)
                .with_context(|| format!("cannot move output into {}", dest.display()))?;
        }
        Ok(())
    }
}

/// `run.csv` becomes `run.profile.csv`.
pub fn sidecar(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}
