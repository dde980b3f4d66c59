use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use tfq::nn::{Label, Pair};

use crate::StudioError;

/// Append-only pair file. Each annotation becomes two lines written with a
/// single call, so a reader never sees half an annotation.
#[derive(Debug)]
pub struct PairLog {
    path: PathBuf,
    file: File,
    total_lines: usize,
    accepted: usize,
}

impl PairLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StudioError> {
        let path = path.as_ref().to_path_buf();
        let io = |e| StudioError::io(&path, e);
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path).map_err(io)?;
        let mut existing = String::new();
        file.read_to_string(&mut existing).map_err(io)?;
        let total_lines = existing.lines().filter(|l| !l.trim().is_empty()).count();
        if !existing.is_empty() && !existing.ends_with('\n') {
            file.write_all(b"\n").map_err(io)?;
        }
        Ok(PairLog {
            path,
            file,
            total_lines,
            accepted: 0,
        })
    }

    pub fn append(&mut self, reference: &str, similar: &str, dissimilar: &str) -> Result<(), StudioError> {
        let text = format!(
            "{}\n{}\n",
            Pair::new(reference, similar, Label::Similar).to_json_line(),
            Pair::new(reference, dissimilar, Label::Dissimilar).to_json_line()
        );
        self.file
            .write_all(text.as_bytes())
            .map_err(|e| StudioError::io(&self.path, e))?;
        self.total_lines += 2;
        self.accepted += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), StudioError> {
        self.file
            .sync_data()
            .map_err(|e| StudioError::io(&self.path, e))
    }

    /// Pairs written since this log was opened.
    pub fn session_pairs(&self) -> usize {
        self.accepted * 2
    }

    /// Lines in the file, including earlier sessions.
    pub fn total_pairs(&self) -> usize {
        self.total_lines
    }
}
