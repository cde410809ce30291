//! Label maps, segments, binary masks and pixel-set IoU.
//!
//! A [`LabelMap`] stores one 32-bit segment id per pixel, row-major, with id
//! `0` reserved for void. Panoptic maps encode the category in the id as
//! `category * 1000 + instance`; class-agnostic maps use raw ids with no
//! category.

mod codec;
mod contingency;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use codec::{decode_label_sidecar, decode_panoptic_png, encode_label_sidecar, encode_panoptic_png};
pub use contingency::ContingencyTable;

/// Segment id reserved for void / ignored pixels.
pub const VOID_ID: u32 = 0;

/// Divisor of the panoptic id encoding.
pub const PANOPTIC_DIVISOR: u32 = 1000;

pub fn panoptic_id(category: u32, instance: u32) -> u32 {
    category * PANOPTIC_DIVISOR + instance
}

/// Splits a panoptic id into `(category, instance)`.
pub fn split_panoptic_id(id: u32) -> (u32, u32) {
    (id / PANOPTIC_DIVISOR, id % PANOPTIC_DIVISOR)
}

/// How segment ids relate to categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdEncoding {
    /// `id = category * 1000 + instance`.
    Panoptic,
    /// Raw instance ids, no category.
    ClassAgnostic,
}

impl IdEncoding {
    pub fn category_of(self, id: u32) -> Option<u32> {
        match self {
            IdEncoding::Panoptic => Some(split_panoptic_id(id).0),
            IdEncoding::ClassAgnostic => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    ids: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != width * height {
            return Err(Error::BufferSize {
                width,
                height,
                len: ids.len(),
            });
        }
        Ok(Self { width, height, ids })
    }

    /// An all-void map.
    pub fn void(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ids: vec![VOID_ID; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u32) -> Self {
        let mut ids = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                ids.push(f(x, y));
            }
        }
        Self { width, height, ids }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.ids[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, id: u32) {
        self.ids[y * self.width + x] = id;
    }

    pub fn into_ids(self) -> Vec<u32> {
        self.ids
    }

    /// Rewrites every id through `f`.
    pub fn map_ids(&self, mut f: impl FnMut(u32) -> u32) -> LabelMap {
        LabelMap {
            width: self.width,
            height: self.height,
            ids: self.ids.iter().map(|&id| f(id)).collect(),
        }
    }

    pub fn mask_of(&self, id: u32) -> BinaryMask {
        self.mask_where(|v| v == id)
    }

    pub fn mask_where(&self, pred: impl Fn(u32) -> bool) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.ids.iter().map(|&v| pred(v)).collect(),
        }
    }

    pub(crate) fn check_same_dims(&self, other: &LabelMap) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

/// One connected-by-id region of a label map. `area` is at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: u32,
    pub category: Option<u32>,
    pub area: u64,
}

/// One segment per distinct nonzero id, sorted by id.
pub fn extract_segments(map: &LabelMap, encoding: IdEncoding) -> Vec<Segment> {
    let mut areas: HashMap<u32, u64> = HashMap::new();
    for &id in map.ids() {
        if id != VOID_ID {
            *areas.entry(id).or_default() += 1;
        }
    }
    let mut segments: Vec<Segment> = areas
        .into_iter()
        .map(|(id, area)| Segment {
            id,
            category: encoding.category_of(id),
            area,
        })
        .collect();
    segments.sort_unstable_by_key(|s| s.id);
    segments
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
    pub isthing: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryTable {
    entries: Vec<Category>,
}

impl CategoryTable {
    pub fn new(entries: Vec<Category>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for c in &entries {
            if !seen.insert(c.id) {
                return Err(Error::InvalidCategoryTable(format!(
                    "duplicate category id {}",
                    c.id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Category] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, id: u32) -> Option<&Category> {
        self.entries.iter().find(|c| c.id == id)
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.entries.iter().position(|c| c.id == id)
    }

    /// Checks the table can split results into things and stuff.
    pub fn validate_for_panoptic(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyCategoryTable);
        }
        if !self.entries.iter().any(|c| c.isthing) {
            return Err(Error::InvalidCategoryTable("no thing category".into()));
        }
        if !self.entries.iter().any(|c| !c.isthing) {
            return Err(Error::InvalidCategoryTable("no stuff category".into()));
        }
        Ok(())
    }
}

/// A binary pixel mask with the same row-major layout as [`LabelMap`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::BufferSize {
                width,
                height,
                len: bits.len(),
            });
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// `(|a ∩ b|, |a ∪ b|)`.
    pub fn overlap(&self, other: &BinaryMask) -> Result<(u64, u64)> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        let (mut inter, mut union) = (0u64, 0u64);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as u64;
            union += (a || b) as u64;
        }
        Ok((inter, union))
    }
}

/// `|a ∩ b| / |a ∪ b|` for two nonempty pixel sets.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySegment);
    }
    let (inter, union) = a.overlap(b)?;
    Ok(inter as f64 / union as f64)
}
