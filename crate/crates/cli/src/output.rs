//! File emission helpers. Every artifact is written to a temporary sibling and renamed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::path(root, e))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `name` through `body`; a failed write leaves no partial file.
    pub fn write<F>(&mut self, name: &str, body: F) -> CliResult<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> CliResult<()>,
    {
        let dest = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        let file = File::create(&tmp).map_err(|e| CliError::path(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let res = body(&mut w).and_then(|_| w.flush().map_err(|e| CliError::path(&tmp, e)));
        drop(w);
        if let Err(e) = res {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        fs::rename(&tmp, &dest).map_err(|e| CliError::path(&dest, e))?;
        self.written.push(dest.clone());
        Ok(dest)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Core(pnr_core::Error::Io(e.into())))?;
            w.write_all(b"\n").map_err(|e| CliError::Core(e.into()))
        })
    }

    pub fn written(&self) -> Vec<String> {
        self.written.iter().map(|p| p.display().to_string()).collect()
    }
}
