//! MVTec-style dataset indexing.
//!
//! ```text
//! <root>/<category>/test/<defect>/<name>.png
//! <root>/<category>/ground_truth/<defect>/<name>_mask.png
//! ```
//!
//! `good` images carry no ground truth and are evaluated as all-negative.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io;
use crate::types::BinaryMask;

pub const GOOD: &str = "good";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub category: String,
    pub split: String,
    pub defect: String,
    pub name: String,
    pub image_path: PathBuf,
    pub truth_path: Option<PathBuf>,
}

impl DatasetEntry {
    /// `<category>/<defect>/<name>`; also the relative output path stem.
    pub fn id(&self) -> String {
        format!("{}/{}/{}", self.category, self.defect, self.name)
    }

    pub fn is_good(&self) -> bool {
        self.defect == GOOD
    }

    /// Ground truth at the image's own size.
    pub fn truth(&self) -> Result<BinaryMask> {
        match &self.truth_path {
            Some(p) => io::read_mask_png(p),
            None => {
                let (w, h) = image::image_dimensions(&self.image_path).map_err(|source| {
                    Error::Image {
                        path: self.image_path.clone(),
                        source,
                    }
                })?;
                BinaryMask::empty(h as usize, w as usize)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
}

fn sorted_children(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() == want_dirs {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

impl DatasetIndex {
    /// Indexes the `test` split of every category under `root`, sorted by id.
    pub fn scan(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Index(format!("{} is not a directory", root.display())));
        }
        let mut entries = Vec::new();
        for category_dir in sorted_children(root, true)? {
            let test_dir = category_dir.join("test");
            if !test_dir.is_dir() {
                continue;
            }
            let category = file_name(&category_dir);
            for defect_dir in sorted_children(&test_dir, true)? {
                let defect = file_name(&defect_dir);
                for image_path in sorted_children(&defect_dir, false)? {
                    if image_path.extension().and_then(|e| e.to_str()) != Some("png") {
                        continue;
                    }
                    let name = image_path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    let truth_path = if defect == GOOD {
                        None
                    } else {
                        let p = category_dir
                            .join("ground_truth")
                            .join(&defect)
                            .join(format!("{name}_mask.png"));
                        if !p.is_file() {
                            return Err(Error::Index(format!(
                                "missing ground truth {} for {}",
                                p.display(),
                                image_path.display()
                            )));
                        }
                        Some(p)
                    };
                    entries.push(DatasetEntry {
                        category: category.clone(),
                        split: "test".into(),
                        defect: defect.clone(),
                        name,
                        image_path,
                        truth_path,
                    });
                }
            }
        }
        if entries.is_empty() {
            return Err(Error::Index(format!(
                "no test images under {}",
                root.display()
            )));
        }
        entries.sort_by_key(DatasetEntry::id);
        Ok(DatasetIndex {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
