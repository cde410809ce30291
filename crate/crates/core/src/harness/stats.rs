use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::evaluate::load_label_map;
use super::manifest::{Manifest, Split};
use crate::label::{extract_segments, split_panoptic_id, IdEncoding, VOID_ID};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MotionCounts {
    pub moving: u64,
    #[serde(rename = "static")]
    pub static_: u64,
}

impl MotionCounts {
    pub fn total(&self) -> u64 {
        self.moving + self.static_
    }

    fn add(&mut self, o: &MotionCounts) {
        self.moving += o.moving;
        self.static_ += o.static_;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train: MotionCounts,
    pub test: MotionCounts,
    pub total: MotionCounts,
    /// Pixels per panoptic category, over frames with a panoptic ground truth.
    pub class_pixels: BTreeMap<u32, u64>,
}

/// Moving and static instance counts from the motion flags, and per-class
/// pixel counts from the panoptic ground truth. When a frame has a
/// class-agnostic ground truth, each of its instances must carry a flag.
pub fn compute_stats(m: &Manifest) -> Result<DatasetStats> {
    let mut s = DatasetStats::default();
    for f in &m.frames {
        let flags = f.require(&f.motion, "motion flags")?;
        if let Some(rel) = &f.ca_gt {
            for seg in extract_segments(&load_label_map(m, rel)?, IdEncoding::ClassAgnostic) {
                if !flags.contains_key(&seg.id) {
                    return Err(Error::MissingField {
                        frame: f.id.clone(),
                        what: format!("motion flag for instance {}", seg.id),
                    });
                }
            }
        }
        let c = MotionCounts {
            moving: flags.values().filter(|&&v| v).count() as u64,
            static_: flags.values().filter(|&&v| !v).count() as u64,
        };
        match f.split {
            Split::Train => s.train.add(&c),
            Split::Test => s.test.add(&c),
        }
        s.total.add(&c);
        if let Some(rel) = &f.panoptic_gt {
            for &id in load_label_map(m, rel)?.ids() {
                if id != VOID_ID {
                    *s.class_pixels.entry(split_panoptic_id(id).0).or_default() += 1;
                }
            }
        }
    }
    Ok(s)
}

impl DatasetStats {
    /// Motion counts per split, then pixels per class (named from `m`).
    pub fn to_csv(&self, m: &Manifest) -> String {
        let mut out = String::from("split,moving,static,total\n");
        for (name, c) in [("train", &self.train), ("test", &self.test), ("all", &self.total)] {
            let _ = writeln!(out, "{name},{},{},{}", c.moving, c.static_, c.total());
        }
        out.push_str("\ncategory,name,pixels\n");
        for (id, n) in &self.class_pixels {
            let name = m.categories.get(*id).map_or("-", |c| c.name.as_str());
            let _ = writeln!(out, "{id},{name},{n}");
        }
        out
    }
}
