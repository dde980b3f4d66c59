use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use walkdir::WalkDir;

use crate::StudioError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusEntry {
    /// The path relative to the corpus root, `/`-separated.
    pub id: String,
    pub relpath: String,
    pub width: u32,
    pub height: u32,
}

/// PNG files found under a root directory, keyed and sorted by id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    root: PathBuf,
    entries: BTreeMap<String, CorpusEntry>,
}

impl Corpus {
    pub fn scan(root: impl AsRef<Path>) -> Result<Self, StudioError> {
        let root = root.as_ref().to_path_buf();
        let mut entries = BTreeMap::new();
        for item in WalkDir::new(&root).follow_links(false).sort_by_file_name() {
            let item = item.map_err(|e| StudioError::Corpus(format!("{}: {e}", root.display())))?;
            if !item.file_type().is_file() {
                continue;
            }
            let path = item.path();
            let rel = path.strip_prefix(&root).expect("walk stays under root");
            let Some(id) = rel_id(rel) else {
                log::warn!("skipping {}: name is not valid UTF-8", path.display());
                continue;
            };
            let is_png = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if !is_png {
                log::info!("skipping {id}: not a PNG image");
                continue;
            }
            match image::image_dimensions(path) {
                Ok((width, height)) => {
                    entries.insert(
                        id.clone(),
                        CorpusEntry {
                            relpath: id.clone(),
                            id,
                            width,
                            height,
                        },
                    );
                }
                Err(e) => log::warn!("skipping {id}: {e}"),
            }
        }
        Ok(Corpus { root, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CorpusEntry> {
        self.entries.get(id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.values()
    }

    /// The file behind a listed id. Unlisted ids never reach the file system.
    pub fn path_of(&self, id: &str) -> Option<PathBuf> {
        self.entries.get(id).map(|e| self.root.join(&e.relpath))
    }
}

fn rel_id(rel: &Path) -> Option<String> {
    let parts: Option<Vec<&str>> = rel.components().map(|c| c.as_os_str().to_str()).collect();
    Some(parts?.join("/"))
}
