use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{read_skl, write_skl, SkeletonSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

/// Labelled sequences sharing joint and channel counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sequences: Vec<SkeletonSequence>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(sequences: Vec<SkeletonSequence>, num_classes: usize, split: Split) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("dataset needs at least one class".into()));
        }
        let mut ids = HashSet::new();
        for seq in &sequences {
            match seq.label() {
                Some(l) if l < num_classes => {}
                Some(l) => {
                    return Err(Error::Argument(format!(
                        "sample `{}` has label {l} outside [0, {num_classes})",
                        seq.sample_id()
                    )))
                }
                None => {
                    return Err(Error::Argument(format!(
                        "sample `{}` has no label",
                        seq.sample_id()
                    )))
                }
            }
            if !ids.insert(seq.sample_id().to_string()) {
                return Err(Error::Argument(format!(
                    "duplicate sample id `{}`",
                    seq.sample_id()
                )));
            }
        }
        if let Some(first) = sequences.first() {
            for seq in &sequences {
                if seq.joints() != first.joints() || seq.channels() != first.channels() {
                    return Err(Error::Dimension(format!(
                        "sample `{}` has V={} C={}, expected V={} C={}",
                        seq.sample_id(),
                        seq.joints(),
                        seq.channels(),
                        first.joints(),
                        first.channels()
                    )));
                }
            }
        }
        Ok(Dataset {
            sequences,
            num_classes,
            split,
        })
    }

    pub fn sequences(&self) -> &[SkeletonSequence] {
        &self.sequences
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.sequences
            .iter()
            .map(|s| s.label().expect("validated"))
            .collect()
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.sequences.iter().map(|s| s.sample_id().to_string()).collect()
    }

    /// `(sample_id, label)` pairs in dataset order.
    pub fn id_labels(&self) -> Vec<(String, usize)> {
        self.sample_ids().into_iter().zip(self.labels()).collect()
    }

    /// Apply a per-sequence transform, keeping labels and split.
    pub fn map<F>(&self, f: F) -> Result<Dataset>
    where
        F: FnMut(&SkeletonSequence) -> Result<SkeletonSequence>,
    {
        let sequences = self.sequences.iter().map(f).collect::<Result<Vec<_>>>()?;
        Dataset::new(sequences, self.num_classes, self.split)
    }
}

/// Contents of `dataset.toml` at the root of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub num_joints: usize,
    pub channels: usize,
    pub topology: String,
    pub splits: Vec<Split>,
}

impl DatasetManifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let path = root.as_ref().join("dataset.toml");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Write each split as `<root>/<split>/<sample_id>.skl` plus a manifest.
pub fn write_dataset(root: impl AsRef<Path>, topology: &str, splits: &[&Dataset]) -> Result<()> {
    let root = root.as_ref();
    let first = splits
        .first()
        .ok_or_else(|| Error::Argument("no splits to write".into()))?;
    let (num_joints, channels) = first
        .sequences()
        .first()
        .map(|s| (s.joints(), s.channels()))
        .ok_or_else(|| Error::Argument("cannot write an empty dataset".into()))?;
    for ds in splits {
        let dir = root.join(ds.split().as_str());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for seq in ds.sequences() {
            write_skl(dir.join(format!("{}.skl", seq.sample_id())), seq)?;
        }
    }
    let manifest = DatasetManifest {
        num_classes: first.num_classes(),
        num_joints,
        channels,
        topology: topology.to_string(),
        splits: splits.iter().map(|d| d.split()).collect(),
    };
    let path = root.join("dataset.toml");
    let text = toml::to_string(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Load one split, ordered by file name.
pub fn read_split(root: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let root = root.as_ref();
    let manifest = DatasetManifest::load(root)?;
    let dir = root.join(split.as_str());
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "skl"))
        .collect();
    paths.sort();
    let sequences = paths.iter().map(read_skl).collect::<Result<Vec<_>>>()?;
    Dataset::new(sequences, manifest.num_classes, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Modality;
    use ndarray::Array4;

    fn seq(id: &str, label: Option<usize>, v: usize) -> SkeletonSequence {
        SkeletonSequence::new(Array4::zeros((1, 2, v, 2)), Modality::Joint, id, label).unwrap()
    }

    #[test]
    fn validates_labels_and_ids() {
        assert!(Dataset::new(vec![seq("a", Some(0), 3), seq("b", Some(1), 3)], 2, Split::Train).is_ok());
        assert!(Dataset::new(vec![seq("a", Some(2), 3)], 2, Split::Train).is_err());
        assert!(Dataset::new(vec![seq("a", None, 3)], 2, Split::Train).is_err());
        assert!(Dataset::new(vec![seq("a", Some(0), 3), seq("a", Some(1), 3)], 2, Split::Train).is_err());
        assert!(Dataset::new(vec![seq("a", Some(0), 3), seq("b", Some(1), 4)], 2, Split::Train).is_err());
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let train = Dataset::new(vec![seq("b", Some(1), 3), seq("a", Some(0), 3)], 2, Split::Train).unwrap();
        write_dataset(dir.path(), "tiny", &[&train]).unwrap();
        let back = read_split(dir.path(), Split::Train).unwrap();
        assert_eq!(back.sample_ids(), vec!["a", "b"]);
        assert_eq!(back.labels(), vec![0, 1]);
        let manifest = DatasetManifest::load(dir.path()).unwrap();
        assert_eq!(manifest.num_joints, 3);
        assert_eq!(manifest.splits, vec![Split::Train]);
    }
}
