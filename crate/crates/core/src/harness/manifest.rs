use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::egoflow::{CameraIntrinsics, PoseSE3};
use crate::label::{Category, CategoryTable};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidConfig(format!("unknown split {s:?}"))),
        }
    }
}

/// One frame. Paths are relative to the manifest's directory; every path
/// field is optional and only required by the tracks that read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub id: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panoptic_gt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panoptic_pred: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ca_gt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ca_pred: Option<String>,
    /// Observed optical flow to the next frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_to_next: Option<PoseSE3>,
    /// Moving (`true`) or static flag per instance id of `ca_gt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<BTreeMap<u32, bool>>,
    /// Semantic ids: 0 ignore, `1..=C` known, `C + 1` unknown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_gt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_pred: Option<String>,
    /// Per-pixel embedding tensor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<String>,
    /// Fine-grained class ids (keys of `class_names`), 0 elsewhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_labels: Option<String>,
}

impl FrameRecord {
    pub fn new(id: impl Into<String>, split: Split) -> Self {
        Self {
            id: id.into(),
            split,
            panoptic_gt: None,
            panoptic_pred: None,
            ca_gt: None,
            ca_pred: None,
            flow: None,
            depth: None,
            intrinsics: None,
            pose_to_next: None,
            motion: None,
            semantic_gt: None,
            semantic_pred: None,
            embeddings: None,
            fine_labels: None,
        }
    }

    fn paths(&self) -> impl Iterator<Item = &str> {
        [
            &self.panoptic_gt,
            &self.panoptic_pred,
            &self.ca_gt,
            &self.ca_pred,
            &self.flow,
            &self.depth,
            &self.semantic_gt,
            &self.semantic_pred,
            &self.embeddings,
            &self.fine_labels,
        ]
        .into_iter()
        .flatten()
        .map(String::as_str)
    }

    /// The field's value, or a [`Error::MissingField`] naming it.
    pub fn require<'a, T>(&self, field: &'a Option<T>, what: &str) -> Result<&'a T> {
        field.as_ref().ok_or_else(|| Error::MissingField {
            frame: self.id.clone(),
            what: what.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub categories: CategoryTable,
    /// Names of fine-grained classes, keyed by id.
    pub class_names: BTreeMap<u32, String>,
    /// Known semantic classes `C` for the open-set track.
    pub num_known_classes: Option<usize>,
    pub frames: Vec<FrameRecord>,
    root: PathBuf,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc<F> {
    #[serde(default)]
    categories: Vec<Category>,
    #[serde(default)]
    class_names: BTreeMap<u32, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_known_classes: Option<usize>,
    frames: Vec<F>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            categories: CategoryTable::default(),
            class_names: BTreeMap::new(),
            num_known_classes: None,
            frames: Vec::new(),
            root: root.into(),
        }
    }

    /// Directory that relative paths resolve against.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn read(&self, rel: &str) -> Result<Vec<u8>> {
        let p = self.resolve(rel);
        std::fs::read(&p).map_err(|e| Error::io(p, e))
    }

    /// Parses and validates a manifest whose relative paths resolve
    /// against `root`.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let doc: ManifestDoc<serde_json::Value> = serde_json::from_str::<serde_json::Value>(text)
            .map_err(Error::from)
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Schema(e.to_string())))?;
        let mut seen = HashSet::new();
        let mut frames = Vec::with_capacity(doc.frames.len());
        for (i, raw) in doc.frames.into_iter().enumerate() {
            let id = match raw.get("id") {
                Some(serde_json::Value::String(s)) => s.clone(),
                _ => return Err(Error::Schema(format!("frame #{i} has no string id"))),
            };
            match raw.get("split") {
                Some(serde_json::Value::String(s)) if s == "train" || s == "test" => {}
                Some(other) => {
                    let split = other.as_str().map_or_else(|| other.to_string(), str::to_string);
                    return Err(Error::InvalidSplit { frame: id, split });
                }
                None => {
                    return Err(Error::MissingField {
                        frame: id,
                        what: "split".into(),
                    })
                }
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateFrameId(id));
            }
            let frame: FrameRecord =
                serde_json::from_value(raw).map_err(|e| Error::Schema(format!("frame {id:?}: {e}")))?;
            frames.push(frame);
        }
        let m = Self {
            categories: CategoryTable::new(doc.categories)?,
            class_names: doc.class_names,
            num_known_classes: doc.num_known_classes,
            frames,
            root: root.into(),
        };
        m.check_files()?;
        Ok(m)
    }

    fn check_files(&self) -> Result<()> {
        for f in &self.frames {
            for rel in f.paths() {
                let p = self.resolve(rel);
                if !p.is_file() {
                    return Err(Error::MissingFile {
                        frame: f.id.clone(),
                        path: p,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ManifestDoc {
            categories: self.categories.entries().to_vec(),
            class_names: self.class_names.clone(),
            num_known_classes: self.num_known_classes,
            frames: self.frames.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Writes the manifest; its paths stay relative, so `path` should sit in
    /// [`Manifest::root`] for them to keep resolving.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn frames_in(&self, split: Option<Split>) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(move |f| split.is_none_or(|s| f.split == s))
    }
}

/// Reads and validates a manifest; paths resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Manifest::parse(&text, root)
}
