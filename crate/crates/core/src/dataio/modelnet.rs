use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{DataError, Result};

/// Categories (in sorted order) used for training in the by-category split.
pub const CATEGORY_TRAIN_COUNT: usize = 20;

/// A mesh file found under `<root>/<category>/<train|test>/<name>.off`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct MeshEntry {
    pub category: String,
    pub official_split: String,
    pub id: String,
    pub path: PathBuf,
}

/// Every `.off` file in a ModelNet-style tree, sorted by category, split and
/// file name.
pub fn scan_modelnet(root: &Path) -> Result<Vec<MeshEntry>> {
    let mut out = Vec::new();
    for cat in sorted_dirs(root)? {
        let category = file_name(&cat);
        for split in ["train", "test"] {
            let dir = cat.join(split);
            if !dir.is_dir() {
                continue;
            }
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")));
            files.sort();
            for path in files {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                out.push(MeshEntry {
                    category: category.clone(),
                    official_split: split.to_string(),
                    id: format!("{category}/{split}/{stem}"),
                    path,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(DataError::InvalidArgument(format!(
            "no <category>/<train|test>/*.off files under {}",
            root.display()
        )));
    }
    Ok(out)
}

fn sorted_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    dirs.retain(|p| p.is_dir());
    dirs.sort();
    Ok(dirs)
}

fn file_name(p: &Path) -> String {
    p.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// The dataset's own train/test folders.
    #[default]
    ByShape,
    /// First categories train, the rest test.
    ByCategory,
}

impl FromStr for SplitMode {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "by-shape" => Ok(SplitMode::ByShape),
            "by-category" => Ok(SplitMode::ByCategory),
            _ => Err(DataError::InvalidArgument(format!(
                "unknown split mode {s:?} (by-shape, by-category)"
            ))),
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::ByShape => "by-shape",
            SplitMode::ByCategory => "by-category",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub mode: SplitMode,
    pub train: Vec<MeshEntry>,
    pub test: Vec<MeshEntry>,
}

impl DatasetSplit {
    pub fn new(entries: &[MeshEntry], mode: SplitMode) -> Self {
        let (train, test) = match mode {
            SplitMode::ByShape => entries.iter().cloned().partition(|e| e.official_split == "train"),
            SplitMode::ByCategory => {
                let mut cats: Vec<&str> = entries.iter().map(|e| e.category.as_str()).collect();
                cats.sort_unstable();
                cats.dedup();
                let train_cats: Vec<String> = cats.iter().take(CATEGORY_TRAIN_COUNT).map(|c| c.to_string()).collect();
                entries.iter().cloned().partition(|e| train_cats.contains(&e.category))
            }
        };
        Self { mode, train, test }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(cats: usize) -> tempfile::TempDir {
        let d = tempfile::tempdir().unwrap();
        for c in 0..cats {
            for split in ["train", "test"] {
                let dir = d.path().join(format!("cat{c:02}")).join(split);
                std::fs::create_dir_all(&dir).unwrap();
                std::fs::write(dir.join(format!("cat{c:02}_0001.off")), "OFF\n0 0 0\n").unwrap();
            }
        }
        d
    }

    #[test]
    fn splits_are_disjoint() {
        let d = tree(22);
        let entries = scan_modelnet(d.path()).unwrap();
        assert_eq!(entries.len(), 44);
        let s = DatasetSplit::new(&entries, SplitMode::ByShape);
        assert_eq!((s.train.len(), s.test.len()), (22, 22));
        let s = DatasetSplit::new(&entries, SplitMode::ByCategory);
        assert_eq!((s.train.len(), s.test.len()), (40, 4));
        assert!(s.test.iter().all(|e| e.category == "cat20" || e.category == "cat21"));
    }
}
