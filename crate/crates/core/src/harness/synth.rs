use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{FrameRecord, Manifest, Split};
use crate::egoflow::{compute_ego_flow, encode_depth_png, encode_flow_png, CameraIntrinsics, DepthMap, FlowField, PoseSE3};
use crate::label::{encode_panoptic_png, panoptic_id, Category, CategoryTable, LabelMap, VOID_ID};
use crate::prototypes::{encode_tensor, FeatureMap};
use crate::{Error, Result};

/// Allowed gap between an object's target and achieved prediction IoU.
pub const IOU_TOLERANCE: f64 = 0.02;

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> i64 {
        (self.x1 - self.x0).max(0) * (self.y1 - self.y0).max(0)
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn intersect(&self, o: &Rect) -> Rect {
        Rect::new(self.x0.max(o.x0), self.y0.max(o.y0), self.x1.min(o.x1), self.y1.min(o.y1))
    }

    pub fn iou(&self, o: &Rect) -> f64 {
        let inter = self.intersect(o).area();
        let union = self.area() + o.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as i64, y as i64);
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0.max(0)..self.y1).flat_map(move |y| (self.x0.max(0)..self.x1).map(move |x| (x as usize, y as usize)))
    }
}

/// A rectangle minus its last `trim` pixels in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub rect: Rect,
    pub trim: i64,
}

impl Shape {
    pub fn area(&self) -> i64 {
        (self.rect.area() - self.trim).max(0)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        if !self.rect.contains(x, y) {
            return false;
        }
        let r = &self.rect;
        let idx = (y as i64 - r.y0) * (r.x1 - r.x0) + (x as i64 - r.x0);
        idx < self.area()
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rect.pixels().take(self.area() as usize)
    }

    pub fn iou(&self, gt: &Rect) -> f64 {
        let inter = self.pixels().filter(|&(x, y)| gt.contains(x, y)).count() as i64;
        let union = self.area() + gt.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

impl From<Rect> for Shape {
    fn from(rect: Rect) -> Self {
        Shape { rect, trim: 0 }
    }
}

/// Searches shifts, erosions, dilations and one-sided crops/extensions of
/// `gt`, clipped to `bounds`, for a rectangle whose IoU with `gt` is within
/// [`IOU_TOLERANCE`] of `target`, then falls back to trimming pixels off
/// `gt`. A target of 1 returns `gt`; a target of 0 returns `None` (no
/// prediction).
pub fn perturb_rect(
    gt: Rect,
    target: f64,
    bounds: Rect,
    object: usize,
    rng: &mut impl Rng,
) -> Result<(Option<Shape>, f64)> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidSceneSpec(format!("target IoU {target} outside [0, 1]")));
    }
    if target == 0.0 {
        return Ok((None, 0.0));
    }
    if target == 1.0 {
        return Ok((Some(gt.into()), 1.0));
    }
    if !(gt.intersect(&bounds) == gt) || gt.is_empty() {
        return Err(Error::InvalidSceneSpec(format!("object {object} is empty or leaves its bounds")));
    }
    let reach = (gt.x1 - gt.x0).max(gt.y1 - gt.y0);
    type Family = fn(Rect, i64) -> Rect;
    let mut families: Vec<Family> = vec![
        |r, k| Rect::new(r.x0 + k, r.y0, r.x1 + k, r.y1),
        |r, k| Rect::new(r.x0 - k, r.y0, r.x1 - k, r.y1),
        |r, k| Rect::new(r.x0, r.y0 + k, r.x1, r.y1 + k),
        |r, k| Rect::new(r.x0, r.y0 - k, r.x1, r.y1 - k),
        |r, k| Rect::new(r.x0 + k, r.y0 + k, r.x1 + k, r.y1 + k),
        |r, k| Rect::new(r.x0 - k, r.y0 - k, r.x1 + k, r.y1 + k),
        |r, k| Rect::new(r.x0 + k, r.y0 + k, r.x1 - k, r.y1 - k),
        |r, k| Rect::new(r.x0, r.y0, r.x1 - k, r.y1),
        |r, k| Rect::new(r.x0, r.y0 + k, r.x1, r.y1),
        |r, k| Rect::new(r.x0, r.y0, r.x1 + k, r.y1),
        |r, k| Rect::new(r.x0 - k, r.y0, r.x1, r.y1),
    ];
    families.shuffle(rng);
    let mut best: Option<(Rect, f64)> = None;
    for f in families {
        let mut family_best: Option<(Rect, f64)> = None;
        for k in 1..=reach {
            let r = f(gt, k).intersect(&bounds);
            if r.is_empty() {
                continue;
            }
            let iou = r.iou(&gt);
            if family_best.is_none_or(|(_, b)| (iou - target).abs() < (b - target).abs()) {
                family_best = Some((r, iou));
            }
        }
        if let Some((r, iou)) = family_best {
            if (iou - target).abs() <= IOU_TOLERANCE {
                return Ok((Some(r.into()), iou));
            }
            if best.is_none_or(|(_, b)| (iou - target).abs() < (b - target).abs()) {
                best = Some((r, iou));
            }
        }
    }
    // Fine local search over independent edge offsets.
    let k = reach.min(4);
    for a in -k..=k {
        for b in -k..=k {
            for c in -k..=k {
                for d in -k..=k {
                    let r = Rect::new(gt.x0 + a, gt.y0 + c, gt.x1 + b, gt.y1 + d).intersect(&bounds);
                    if r.is_empty() {
                        continue;
                    }
                    let iou = r.iou(&gt);
                    if best.is_none_or(|(_, b)| (iou - target).abs() < (b - target).abs()) {
                        best = Some((r, iou));
                    }
                }
            }
        }
    }
    if let Some((r, iou)) = best.filter(|(_, iou)| (iou - target).abs() <= IOU_TOLERANCE) {
        return Ok((Some(r.into()), iou));
    }
    // Trimming k pixels gives IoU (A - k) / A.
    let a = gt.area();
    let k = ((1.0 - target) * a as f64).round().clamp(0.0, (a - 1) as f64) as i64;
    let trimmed = Shape { rect: gt, trim: k };
    let iou = trimmed.iou(&gt);
    if (iou - target).abs() <= IOU_TOLERANCE {
        return Ok((Some(trimmed), iou));
    }
    if best.is_none_or(|(_, b)| (iou - target).abs() < (b - target).abs()) {
        best = Some((gt, iou));
    }
    Err(Error::UnachievableIou {
        object,
        target,
        best: best.map_or(0.0, |b| b.1),
    })
}

/// What to place in a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Objects of known thing categories.
    pub things: usize,
    /// Objects of no known category (void in the panoptic ground truth).
    pub unknowns: usize,
    pub moving_fraction: f64,
    /// Per-object target IoU, drawn uniformly from this range.
    pub iou_range: [f64; 2],
    /// Fraction of objects left without a prediction.
    pub miss_rate: f64,
    /// Spurious predictions placed in unused grid cells.
    pub false_positives: usize,
    /// Largest independent motion of a moving object, in pixels.
    pub max_motion: f64,
    /// Whether the camera moves between frames.
    pub ego_motion: bool,
    pub embedding_dim: usize,
    pub embedding_noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 96,
            things: 4,
            unknowns: 2,
            moving_fraction: 0.5,
            iou_range: [0.55, 0.95],
            miss_rate: 0.1,
            false_positives: 1,
            max_motion: 4.0,
            ego_motion: true,
            embedding_dim: 4,
            embedding_noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectKind {
    Thing { category: u32, instance: u32 },
    Unknown { fine_class: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    /// Instance id in the class-agnostic ground truth.
    pub ca_id: u32,
    pub kind: ObjectKind,
    pub rect: Rect,
    pub depth: f64,
    pub moving: bool,
    /// Independent image-plane motion added to the ego flow, pixels.
    pub motion: [f64; 2],
    pub target_iou: f64,
    pub prediction: Option<Shape>,
    pub achieved_iou: f64,
}

/// A generated frame. Every map is derived from `objects`, the stuff
/// layout, the depth planes and the camera motion.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub objects: Vec<PlacedObject>,
    pub spurious: Vec<Rect>,
    pub intrinsics: CameraIntrinsics,
    pub pose: PoseSE3,
    pub panoptic_gt: LabelMap,
    pub panoptic_pred: LabelMap,
    pub ca_gt: LabelMap,
    pub ca_pred: LabelMap,
    pub semantic_gt: LabelMap,
    pub semantic_pred: LabelMap,
    pub fine_labels: LabelMap,
    pub depth: DepthMap,
    pub ego_flow: FlowField,
    /// Ego flow plus each moving object's motion on its pixels.
    pub flow: FlowField,
    pub embeddings: FeatureMap,
}

const ROAD: u32 = 1;
const BUILDING: u32 = 2;
const THING_CATEGORIES: [u32; 3] = [3, 4, 5];
const FINE_CLASSES: [&str; 4] = ["animal", "cart", "stroller", "debris"];
const CENTER_SEED: u64 = 0x5eed_cafe;
/// Objects of at least 25 pixels can meet any target by trimming.
const MIN_SIDE: i64 = 5;

/// Road and building (stuff), car, person and cyclist (things).
pub fn synth_categories() -> CategoryTable {
    let c = |id, name: &str, isthing| Category {
        id,
        name: name.into(),
        isthing,
    };
    CategoryTable::new(vec![
        c(ROAD, "road", false),
        c(BUILDING, "building", false),
        c(3, "car", true),
        c(4, "person", true),
        c(5, "cyclist", true),
    ])
    .unwrap()
}

/// Names of the fine-grained unknown classes, keyed by id.
pub fn synth_class_names() -> BTreeMap<u32, String> {
    FINE_CLASSES.iter().enumerate().map(|(i, n)| (i as u32 + 1, n.to_string())).collect()
}

/// Known semantic classes: one per category.
pub fn synth_num_known_classes() -> usize {
    synth_categories().len()
}

/// Embedding centers shared by every scene: one per known class followed by
/// one per fine unknown class. Unknown centers sit in their own region.
fn embedding_centers(dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(CENTER_SEED ^ dim as u64);
    let known = synth_num_known_classes();
    (0..known + FINE_CLASSES.len())
        .map(|k| {
            let mut c: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            if k >= known {
                c[0] = 8.0 + 2.0 * (k - known) as f64;
            }
            c
        })
        .collect()
}

fn quantize_depth(z: f64) -> f64 {
    (z * 256.0).round() / 256.0
}

fn validate(spec: &SceneSpec) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidSceneSpec(m));
    let n = spec.things + spec.unknowns + spec.false_positives;
    if spec.width < 16 || spec.height < 16 || spec.width > 4096 || spec.height > 4096 {
        return bad(format!("canvas {}x{} outside 16..=4096", spec.width, spec.height));
    }
    let [lo, hi] = spec.iou_range;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return bad(format!("iou_range {:?} is not an interval in [0, 1]", spec.iou_range));
    }
    if !(0.0..=1.0).contains(&spec.moving_fraction) || !(0.0..=1.0).contains(&spec.miss_rate) {
        return bad("moving_fraction and miss_rate must lie in [0, 1]".into());
    }
    if !(spec.max_motion >= 1.0 && spec.max_motion <= 64.0) {
        return bad("max_motion must lie in [1, 64] pixels".into());
    }
    if spec.embedding_dim == 0 || !(spec.embedding_noise >= 0.0) {
        return bad("embedding_dim must be positive and embedding_noise non-negative".into());
    }
    if spec.things > 999 {
        return bad("at most 999 thing instances".into());
    }
    let (cols, rows) = grid(spec, n);
    if spec.width / cols.max(1) < 8 || spec.height / rows.max(1) < 8 {
        return bad(format!("{n} objects do not fit a {}x{} canvas", spec.width, spec.height));
    }
    Ok(())
}

fn grid(spec: &SceneSpec, n: usize) -> (usize, usize) {
    let cols = ((n as f64 * spec.width as f64 / spec.height as f64).sqrt().ceil() as usize).max(1);
    (cols, n.div_ceil(cols).max(1))
}

/// Deterministic in `seed`: objects on distinct grid cells, stuff split
/// into building (top) and road (bottom), fronto-parallel depth planes.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<SynthScene> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let n_obj = spec.things + spec.unknowns;
    let (cols, rows) = grid(spec, n_obj + spec.false_positives);
    let (cw, ch) = ((w / cols) as i64, (h / rows) as i64);
    let mut cells: Vec<Rect> = (0..rows * cols)
        .map(|i| {
            let (c, r) = ((i % cols) as i64, (i / cols) as i64);
            Rect::new(c * cw, r * ch, (c + 1) * cw, (r + 1) * ch)
        })
        .collect();
    cells.shuffle(&mut rng);

    let intrinsics = CameraIntrinsics::new(w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0)?;
    let horizon = h / 2;
    let background_depth = |y: usize| {
        if y < horizon {
            40.0
        } else {
            // Flat road seen from 1.5 m above it.
            quantize_depth((intrinsics.fy * 1.5 / (y as f64 + 0.5 - intrinsics.cy)).clamp(2.0, 80.0))
        }
    };

    let mut objects = Vec::with_capacity(n_obj);
    let kinds: Vec<ObjectKind> = (0..n_obj)
        .map(|i| {
            if i < spec.things {
                ObjectKind::Thing {
                    category: THING_CATEGORIES[rng.random_range(0..THING_CATEGORIES.len())],
                    instance: i as u32 + 1,
                }
            } else {
                ObjectKind::Unknown {
                    fine_class: rng.random_range(1..=FINE_CLASSES.len() as u32),
                }
            }
        })
        .collect();
    let mut ca_ids: Vec<u32> = (1..=n_obj as u32).collect();
    ca_ids.shuffle(&mut rng);
    for (i, kind) in kinds.into_iter().enumerate() {
        let cell = cells[i];
        // Object between a quarter and a half of the cell, centred-ish.
        let ow = rng.random_range((cw / 4).max(MIN_SIDE)..=(cw / 2).max(MIN_SIDE));
        let oh = rng.random_range((ch / 4).max(MIN_SIDE)..=(ch / 2).max(MIN_SIDE));
        let x0 = cell.x0 + rng.random_range(cw / 8..=(cw - ow - cw / 8).max(cw / 8));
        let y0 = cell.y0 + rng.random_range(ch / 8..=(ch - oh - ch / 8).max(ch / 8));
        let rect = Rect::new(x0, y0, x0 + ow, y0 + oh);
        let moving = rng.random_bool(spec.moving_fraction);
        let motion = if moving {
            let mag = rng.random_range(1.0..=spec.max_motion);
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            [mag * ang.cos(), mag * ang.sin()]
        } else {
            [0.0, 0.0]
        };
        let [lo, hi] = spec.iou_range;
        let target_iou = if rng.random_bool(spec.miss_rate) {
            0.0
        } else if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        };
        let (prediction, achieved_iou) = perturb_rect(rect, target_iou, cell, i, &mut rng)?;
        objects.push(PlacedObject {
            ca_id: ca_ids[i],
            kind,
            rect,
            depth: quantize_depth(rng.random_range(5.0..30.0)),
            moving,
            motion,
            target_iou,
            prediction,
            achieved_iou,
        });
    }
    let spurious: Vec<Rect> = cells[n_obj..n_obj + spec.false_positives]
        .iter()
        .map(|c| {
            let (a, b) = (c.x0 + cw / 4, c.y0 + ch / 4);
            Rect::new(a, b, a + (cw / 3).max(1), b + (ch / 3).max(1))
        })
        .collect();

    let at = |x: usize, y: usize| objects.iter().find(|o| o.rect.contains(x, y));
    let pred_at = |x: usize, y: usize| objects.iter().find(|o| o.prediction.is_some_and(|r| r.contains(x, y)));
    let stuff = |y: usize| if y < horizon { BUILDING } else { ROAD };
    let cats = synth_categories();
    let sem_of_cat = |c: u32| cats.position(c).unwrap() as u32 + 1;
    let unknown_sem = cats.len() as u32 + 1;

    let panoptic_gt = LabelMap::from_fn(w, h, |x, y| match at(x, y).map(|o| o.kind) {
        Some(ObjectKind::Thing { category, instance }) => panoptic_id(category, instance),
        Some(ObjectKind::Unknown { .. }) => VOID_ID,
        None => panoptic_id(stuff(y), 0),
    });
    let panoptic_pred = LabelMap::from_fn(w, h, |x, y| match pred_at(x, y).map(|o| o.kind) {
        Some(ObjectKind::Thing { category, instance }) => panoptic_id(category, instance),
        _ if spurious.iter().any(|r| r.contains(x, y)) => panoptic_id(THING_CATEGORIES[0], 999),
        _ => panoptic_id(stuff(y), 0),
    });
    let ca_gt = LabelMap::from_fn(w, h, |x, y| at(x, y).map_or(VOID_ID, |o| o.ca_id));
    let fp_base = n_obj as u32 + 1;
    let ca_pred = LabelMap::from_fn(w, h, |x, y| match pred_at(x, y) {
        Some(o) => o.ca_id,
        None => spurious
            .iter()
            .position(|r| r.contains(x, y))
            .map_or(VOID_ID, |k| fp_base + k as u32),
    });
    let semantic = |id: u32, obj: Option<&PlacedObject>, y: usize| match obj.map(|o| o.kind) {
        Some(ObjectKind::Unknown { .. }) => unknown_sem,
        _ if id == VOID_ID => sem_of_cat(stuff(y)),
        _ => sem_of_cat(id / 1000),
    };
    let semantic_gt = LabelMap::from_fn(w, h, |x, y| semantic(panoptic_gt.get(x, y), at(x, y), y));
    let semantic_pred = LabelMap::from_fn(w, h, |x, y| semantic(panoptic_pred.get(x, y), pred_at(x, y), y));
    let fine_labels = LabelMap::from_fn(w, h, |x, y| match at(x, y).map(|o| o.kind) {
        Some(ObjectKind::Unknown { fine_class }) => fine_class,
        _ => VOID_ID,
    });

    let depth = DepthMap::from_fn(w, h, |x, y| Some(at(x, y).map_or_else(|| background_depth(y), |o| o.depth)))?;
    let pose = if spec.ego_motion {
        PoseSE3::from_euler(
            0.0,
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.02..0.02),
            [rng.random_range(-0.1..0.1), rng.random_range(-0.05..0.05), rng.random_range(-1.0..-0.3)],
        )
    } else {
        PoseSE3::identity()
    };
    let ego_flow = compute_ego_flow(&depth, &intrinsics, &pose)?;
    let mut flow = ego_flow.clone();
    for o in objects.iter().filter(|o| o.moving) {
        for (x, y) in o.rect.pixels() {
            flow.add_at(x, y, o.motion[0], o.motion[1]);
        }
    }

    let centers = embedding_centers(spec.embedding_dim);
    let noise = Normal::new(0.0, spec.embedding_noise).map_err(|e| Error::InvalidSceneSpec(e.to_string()))?;
    let known = cats.len();
    let mut values = Vec::with_capacity(w * h * spec.embedding_dim);
    for y in 0..h {
        for x in 0..w {
            let k = match fine_labels.get(x, y) {
                VOID_ID => semantic_gt.get(x, y) as usize - 1,
                f => known + f as usize - 1,
            };
            values.extend(centers[k].iter().map(|c| c + noise.sample(&mut rng)));
        }
    }
    let embeddings = FeatureMap::new(w, h, spec.embedding_dim, values)?;

    Ok(SynthScene {
        seed,
        width: w,
        height: h,
        objects,
        spurious,
        intrinsics,
        pose,
        panoptic_gt,
        panoptic_pred,
        ca_gt,
        ca_pred,
        semantic_gt,
        semantic_pred,
        fine_labels,
        depth,
        ego_flow,
        flow,
        embeddings,
    })
}

impl SynthScene {
    pub fn motion_flags(&self) -> BTreeMap<u32, bool> {
        self.objects.iter().map(|o| (o.ca_id, o.moving)).collect()
    }

    /// Writes every map next to `dir` as `<id>_<kind>.png` (embeddings as a
    /// tensor file) and returns the matching manifest record.
    pub fn write(&self, dir: &Path, id: &str, split: Split) -> Result<FrameRecord> {
        let put = |suffix: &str, bytes: Vec<u8>| -> Result<String> {
            let name = format!("{id}_{suffix}");
            let p = dir.join(&name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(p, e))?;
            Ok(name)
        };
        let mut f = FrameRecord::new(id, split);
        f.panoptic_gt = Some(put("panoptic_gt.png", encode_panoptic_png(&self.panoptic_gt)?)?);
        f.panoptic_pred = Some(put("panoptic_pred.png", encode_panoptic_png(&self.panoptic_pred)?)?);
        f.ca_gt = Some(put("ca_gt.png", encode_panoptic_png(&self.ca_gt)?)?);
        f.ca_pred = Some(put("ca_pred.png", encode_panoptic_png(&self.ca_pred)?)?);
        f.semantic_gt = Some(put("semantic_gt.png", encode_panoptic_png(&self.semantic_gt)?)?);
        f.semantic_pred = Some(put("semantic_pred.png", encode_panoptic_png(&self.semantic_pred)?)?);
        f.fine_labels = Some(put("fine.png", encode_panoptic_png(&self.fine_labels)?)?);
        f.flow = Some(put("flow.png", encode_flow_png(&self.flow)?)?);
        f.depth = Some(put("depth.png", encode_depth_png(&self.depth)?)?);
        f.embeddings = Some(put("embeddings.bin", encode_tensor(&self.embeddings.to_tensor()))?);
        f.intrinsics = Some(self.intrinsics);
        f.pose_to_next = Some(self.pose);
        f.motion = Some(self.motion_flags());
        Ok(f)
    }
}

/// Generates `frames` scenes into `dir` with a `manifest.json`. Every fifth
/// frame goes to the test split. Frame seeds are drawn from `seed`.
pub fn synth_dataset(seed: u64, frames: usize, spec: &SceneSpec, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Manifest::new(dir);
    m.categories = synth_categories();
    m.class_names = synth_class_names();
    m.num_known_classes = Some(synth_num_known_classes());
    for i in 0..frames {
        let scene = generate_scene(rng.random(), spec)?;
        let split = if i % 5 == 4 { Split::Test } else { Split::Train };
        m.frames.push(scene.write(dir, &format!("{i:06}"), split)?);
    }
    m.save(dir.join("manifest.json"))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::iou;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn perturbation_hits_target() {
        let sq = Rect::new(20, 20, 40, 40);
        let bounds = Rect::new(0, 0, 64, 64);
        assert_eq!(perturb_rect(sq, 1.0, bounds, 0, &mut rng()).unwrap(), (Some(sq.into()), 1.0));
        let small = Rect::new(3, 3, 8, 8);
        let (p, got) = perturb_rect(small, 0.975, bounds, 0, &mut rng()).unwrap();
        assert!((got - 0.975).abs() <= IOU_TOLERANCE && p.unwrap().trim > 0);
        for seed in 0..20 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let (p, got) = perturb_rect(sq, 0.6, bounds, 0, &mut r).unwrap();
            // Pixel-count oracle.
            let m = |r: Rect| crate::label::BinaryMask::from_fn(64, 64, |x, y| r.contains(x, y));
            let p = p.unwrap();
            let oracle = iou(&crate::label::BinaryMask::from_fn(64, 64, |x, y| p.contains(x, y)), &m(sq)).unwrap();
            assert_eq!(oracle, got);
            assert!((0.58..=0.62).contains(&got), "{got}");
        }
    }

    #[test]
    fn tiny_objects_cannot_hit_every_target() {
        let dot = Rect::new(5, 5, 6, 6);
        let e = perturb_rect(dot, 0.6, Rect::new(0, 0, 16, 16), 3, &mut rng());
        assert!(matches!(e, Err(Error::UnachievableIou { object: 3, .. })));
    }

    #[test]
    fn scenes_are_deterministic_and_consistent() {
        let spec = SceneSpec::default();
        let a = generate_scene(11, &spec).unwrap();
        assert_eq!(a, generate_scene(11, &spec).unwrap());
        assert_ne!(a.ca_gt, generate_scene(12, &spec).unwrap().ca_gt);
        for o in &a.objects {
            assert!((o.achieved_iou - o.target_iou).abs() <= IOU_TOLERANCE);
            for (x, y) in o.rect.pixels() {
                let (fu, fv) = a.flow.get(x, y).unwrap();
                let (eu, ev) = a.ego_flow.get(x, y).unwrap();
                assert!((fu - eu - o.motion[0]).abs() < 1e-12);
                assert!((fv - ev - o.motion[1]).abs() < 1e-12);
                assert_eq!(a.ca_gt.get(x, y), o.ca_id);
            }
        }
    }

    #[test]
    fn perfect_predictions() {
        let spec = SceneSpec {
            iou_range: [1.0, 1.0],
            miss_rate: 0.0,
            false_positives: 0,
            ..Default::default()
        };
        let s = generate_scene(5, &spec).unwrap();
        assert_eq!(s.ca_gt, s.ca_pred);
        assert_eq!(s.semantic_gt, s.semantic_pred);
    }

    #[test]
    fn overcrowded_canvas_rejected() {
        let spec = SceneSpec {
            width: 16,
            height: 16,
            things: 30,
            ..Default::default()
        };
        assert!(matches!(generate_scene(0, &spec), Err(Error::InvalidSceneSpec(_))));
    }

    #[test]
    fn default_specs_generate_across_seeds() {
        let small = SceneSpec {
            width: 64,
            height: 64,
            things: 7,
            unknowns: 2,
            ..Default::default()
        };
        let wide = SceneSpec {
            width: 320,
            height: 96,
            iou_range: [0.3, 1.0],
            ..Default::default()
        };
        for spec in [SceneSpec::default(), small, wide] {
            for seed in 0..300 {
                generate_scene(seed, &spec).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            }
        }
    }
}
