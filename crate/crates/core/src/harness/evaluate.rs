use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{FrameRecord, Manifest, Split};
use crate::egoflow::{compute_ego_flow, decode_depth_png, decode_flow_png, snap_flow_to_png_grid, suppress_ego_flow, FlowField};
use crate::label::{decode_label_sidecar, decode_panoptic_png, BinaryMask, LabelMap, VOID_ID};
use crate::metrics::{
    match_instances, CaCounts, CaIouCounts, CaReport, MatchOptions, PanopticCounts, PanopticReport, SemanticCounts,
    VoidPolicy,
};
use crate::openset::{predict_labels, EmbeddingMap, OpenSetParams, PixelLabel};
use crate::prototypes::{decode_tensor, FeatureMap};
use crate::{Error, Result};

/// Environment variable consulted when no worker count is given.
pub const WORKERS_ENV: &str = "VCAS_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    /// Class-agnostic instances: SQ, RQ, CAQ.
    Ca,
    Panoptic,
    /// Semantic maps with an unknown class: mIoU, CA-IoU.
    Openset,
}

impl Track {
    /// Class-agnostic background is a real label, panoptic void is not.
    pub fn default_void_policy(self) -> VoidPolicy {
        match self {
            Track::Ca => VoidPolicy::Background,
            Track::Panoptic | Track::Openset => VoidPolicy::Ignore,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Subtract camera-induced flow before flow diagnostics.
    pub efs: bool,
    /// `None` picks [`Track::default_void_policy`].
    pub void_policy: Option<VoidPolicy>,
    /// `None` reads [`WORKERS_ENV`], then falls back to the core count.
    pub workers: Option<usize>,
    pub split: Option<Split>,
    /// Flow magnitude (pixels) above which a pixel counts as moving.
    pub motion_threshold: f64,
    /// Predict open-set labels from frame embeddings instead of reading
    /// `semantic_pred`.
    pub checkpoint: Option<OpenSetParams>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            efs: false,
            void_policy: None,
            workers: None,
            split: None,
            motion_threshold: 1.0,
            checkpoint: None,
        }
    }
}

/// Mean flow magnitude over one ground-truth instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstanceFlow {
    pub id: u32,
    pub moving: bool,
    /// `None` when the instance has no valid flow pixel.
    pub mean_flow: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowDiagnostics {
    /// Whether ego flow was subtracted first.
    pub suppressed: bool,
    pub instances: Vec<InstanceFlow>,
    /// Thresholded flow magnitude against the moving-instance mask.
    pub motion_mask: CaIouCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum FrameMetrics {
    Ca {
        counts: CaCounts,
        report: CaReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        flow: Option<FlowDiagnostics>,
    },
    Panoptic {
        counts: PanopticCounts,
        report: PanopticReport,
    },
    Openset {
        counts: SemanticCounts,
        miou: Option<f64>,
        ca_iou: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub id: String,
    pub split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<FrameMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSummary {
    pub suppressed: bool,
    pub static_instances: usize,
    pub moving_instances: usize,
    /// Mean over static instances of their mean flow magnitude.
    pub residual_static: Option<f64>,
    pub residual_moving: Option<f64>,
    pub flow_motion_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpenSetSummary {
    pub miou: Option<f64>,
    pub ca_iou: f64,
}

/// Totals over the successful frames of one split (or `"all"`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub split: String,
    pub frames: usize,
    pub failed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ca: Option<CaReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub panoptic: Option<PanopticReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub openset: Option<OpenSetSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub track: Track,
    pub efs: bool,
    pub void_policy: VoidPolicy,
    pub frames: Vec<FrameReport>,
    pub aggregate: Vec<AggregateRow>,
    pub failures: usize,
}

fn resolve_workers(w: Option<usize>) -> Result<usize> {
    let n = match w {
        Some(n) => n,
        None => match std::env::var(WORKERS_ENV) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{WORKERS_ENV}={s:?} is not a worker count")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, usize::from),
        },
    };
    if n == 0 {
        return Err(Error::InvalidConfig("worker count must be positive".into()));
    }
    Ok(n)
}

/// Reads a label map stored as a 16-bit PNG or, for other extensions, the
/// raw sidecar format.
pub fn load_label_map(m: &Manifest, rel: &str) -> Result<LabelMap> {
    let bytes = m.read(rel)?;
    if rel.to_ascii_lowercase().ends_with(".png") {
        decode_panoptic_png(&bytes)
    } else {
        decode_label_sidecar(&bytes)
    }
}

pub fn load_features(m: &Manifest, rel: &str) -> Result<FeatureMap> {
    FeatureMap::from_tensor(decode_tensor(&m.read(rel)?)?)
}

fn same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, actual: b });
    }
    Ok(())
}

struct Context<'a> {
    manifest: &'a Manifest,
    track: Track,
    opts: &'a EvalOptions,
    policy: VoidPolicy,
    num_classes: usize,
}

impl Context<'_> {
    fn frame(&self, f: &FrameRecord) -> Result<FrameMetrics> {
        match self.track {
            Track::Ca => self.ca(f),
            Track::Panoptic => self.panoptic(f),
            Track::Openset => self.openset(f),
        }
    }

    fn labels(&self, f: &FrameRecord, field: &Option<String>, what: &str) -> Result<LabelMap> {
        load_label_map(self.manifest, f.require(field, what)?)
    }

    fn ca(&self, f: &FrameRecord) -> Result<FrameMetrics> {
        let gt = self.labels(f, &f.ca_gt, "ca_gt")?;
        let pred = self.labels(f, &f.ca_pred, "ca_pred")?;
        let opts = MatchOptions {
            class_aware: false,
            void_policy: self.policy,
        };
        let counts = CaCounts::from_match(&match_instances(&pred, &gt, opts)?);
        let flow = if self.opts.efs || (f.flow.is_some() && f.motion.is_some()) {
            Some(self.flow_diagnostics(f, &gt)?)
        } else {
            None
        };
        Ok(FrameMetrics::Ca {
            report: counts.report(),
            counts,
            flow,
        })
    }

    fn flow_diagnostics(&self, f: &FrameRecord, gt: &LabelMap) -> Result<FlowDiagnostics> {
        let rel = f.require(&f.flow, "flow")?;
        let motion = f.require(&f.motion, "motion flags")?;
        let is_png = rel.to_ascii_lowercase().ends_with(".png");
        let observed = decode_flow_png(&self.manifest.read(rel)?)?;
        same_dims(gt.dims(), observed.dims())?;
        let flow = if self.opts.efs {
            let depth = decode_depth_png(&self.manifest.read(f.require(&f.depth, "depth")?)?)?;
            same_dims(observed.dims(), depth.dims())?;
            let k = f.require(&f.intrinsics, "intrinsics")?;
            let pose = f.require(&f.pose_to_next, "pose_to_next")?;
            let ego = compute_ego_flow(&depth, k, pose)?;
            // Compare at the precision the observed flow was stored with.
            let ego = if is_png { snap_flow_to_png_grid(&ego) } else { ego };
            suppress_ego_flow(&observed, &ego)?
        } else {
            observed
        };
        let moving = |id: u32| {
            motion.get(&id).copied().ok_or_else(|| Error::MissingField {
                frame: f.id.clone(),
                what: format!("motion flag for instance {id}"),
            })
        };
        let mut sums: BTreeMap<u32, (f64, u64)> = BTreeMap::new();
        let mut gt_moving = Vec::with_capacity(gt.ids().len());
        for (i, &id) in gt.ids().iter().enumerate() {
            if id == VOID_ID {
                gt_moving.push(false);
                continue;
            }
            gt_moving.push(moving(id)?);
            let e = sums.entry(id).or_default();
            if let Some(n) = flow.norm_at(i) {
                e.0 += n;
                e.1 += 1;
            }
        }
        let instances = sums
            .into_iter()
            .map(|(id, (sum, n))| {
                Ok(InstanceFlow {
                    id,
                    moving: moving(id)?,
                    mean_flow: (n > 0).then(|| sum / n as f64),
                })
            })
            .collect::<Result<_>>()?;
        let (w, h) = gt.dims();
        let pred_mask = BinaryMask::new(w, h, flow_motion_bits(&flow, self.opts.motion_threshold))?;
        let gt_mask = BinaryMask::new(w, h, gt_moving)?;
        Ok(FlowDiagnostics {
            suppressed: self.opts.efs,
            instances,
            motion_mask: CaIouCounts::from_masks(&pred_mask, &gt_mask)?,
        })
    }

    fn panoptic(&self, f: &FrameRecord) -> Result<FrameMetrics> {
        let gt = self.labels(f, &f.panoptic_gt, "panoptic_gt")?;
        let pred = self.labels(f, &f.panoptic_pred, "panoptic_pred")?;
        let opts = MatchOptions {
            class_aware: true,
            void_policy: self.policy,
        };
        let mut counts = PanopticCounts::default();
        counts.add(&match_instances(&pred, &gt, opts)?);
        Ok(FrameMetrics::Panoptic {
            report: counts.report(&self.manifest.categories)?,
            counts,
        })
    }

    fn openset(&self, f: &FrameRecord) -> Result<FrameMetrics> {
        let gt = self.labels(f, &f.semantic_gt, "semantic_gt")?;
        let pred = match &self.opts.checkpoint {
            Some(p) => {
                let features = load_features(self.manifest, f.require(&f.embeddings, "embeddings")?)?;
                same_dims(gt.dims(), features.dims())?;
                let (w, h) = features.dims();
                let batch = EmbeddingMap::new(features, vec![PixelLabel::Ignore; w * h])?;
                let ids = predict_labels(&batch, p)?.into_iter().map(|k| k as u32 + 1).collect();
                LabelMap::new(w, h, ids)?
            }
            None => self.labels(f, &f.semantic_pred, "semantic_pred")?,
        };
        let counts = SemanticCounts::from_maps(&pred, &gt, self.num_classes)?;
        Ok(FrameMetrics::Openset {
            miou: counts.miou(),
            ca_iou: counts.ca_iou(),
            counts,
        })
    }
}

fn flow_motion_bits(flow: &FlowField, threshold: f64) -> Vec<bool> {
    (0..flow.u().len()).map(|i| flow.norm_at(i).is_some_and(|n| n > threshold)).collect()
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Folds frame partials, in the given order, into one summary row.
fn aggregate(
    label: &str,
    frames: &[&FrameReport],
    track: Track,
    efs: bool,
    m: &Manifest,
    num_classes: usize,
) -> Result<AggregateRow> {
    let ok: Vec<&FrameMetrics> = frames.iter().filter_map(|f| f.metrics.as_ref()).collect();
    let mut row = AggregateRow {
        split: label.to_string(),
        frames: frames.len(),
        failed: frames.len() - ok.len(),
        ca: None,
        flow: None,
        panoptic: None,
        openset: None,
    };
    match track {
        Track::Ca => {
            let mut c = CaCounts::default();
            let mut inst = Vec::new();
            let mut mask = CaIouCounts::default();
            let mut any_flow = false;
            for fm in &ok {
                if let FrameMetrics::Ca { counts, flow, .. } = fm {
                    c.merge(counts);
                    if let Some(d) = flow {
                        any_flow = true;
                        inst.extend(d.instances.iter().copied());
                        mask.merge(&d.motion_mask);
                    }
                }
            }
            row.ca = Some(c.report());
            if any_flow {
                let of = |moving: bool| inst.iter().filter(move |i| i.moving == moving);
                row.flow = Some(FlowSummary {
                    suppressed: efs,
                    static_instances: of(false).count(),
                    moving_instances: of(true).count(),
                    residual_static: mean(of(false).filter_map(|i| i.mean_flow)),
                    residual_moving: mean(of(true).filter_map(|i| i.mean_flow)),
                    flow_motion_iou: mask.iou(),
                });
            }
        }
        Track::Panoptic => {
            let mut c = PanopticCounts::default();
            for fm in &ok {
                if let FrameMetrics::Panoptic { counts, .. } = fm {
                    c.merge(counts);
                }
            }
            row.panoptic = Some(c.report(&m.categories)?);
        }
        Track::Openset => {
            let mut c = SemanticCounts::new(num_classes);
            for fm in &ok {
                if let FrameMetrics::Openset { counts, .. } = fm {
                    c.merge(counts)?;
                }
            }
            row.openset = Some(OpenSetSummary {
                miou: c.miou(),
                ca_iou: c.ca_iou(),
            });
        }
    }
    Ok(row)
}

/// Evaluates every selected frame on a fixed-size worker pool, then folds
/// the per-frame partials in manifest order, so the report does not depend
/// on the worker count. Frame-level failures are recorded in the report;
/// configuration problems are returned as errors.
pub fn evaluate_dataset(m: &Manifest, track: Track, opts: &EvalOptions) -> Result<EvaluationReport> {
    if !(opts.motion_threshold >= 0.0 && opts.motion_threshold.is_finite()) {
        return Err(Error::InvalidConfig("motion threshold must be finite and non-negative".into()));
    }
    let num_classes = match track {
        Track::Panoptic => {
            m.categories.validate_for_panoptic()?;
            0
        }
        Track::Openset => match (m.num_known_classes, &opts.checkpoint) {
            (Some(c), Some(p)) if c != p.num_classes() => {
                return Err(Error::InvalidConfig(format!(
                    "manifest declares {c} known classes, checkpoint has {}",
                    p.num_classes()
                )))
            }
            (Some(c), _) => c,
            (None, Some(p)) => p.num_classes(),
            (None, None) => return Err(Error::Schema("num_known_classes is required for the open-set track".into())),
        },
        Track::Ca => 0,
    };
    let ctx = Context {
        manifest: m,
        track,
        opts,
        policy: opts.void_policy.unwrap_or(track.default_void_policy()),
        num_classes,
    };
    let selected: Vec<&FrameRecord> = m.frames_in(opts.split).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_workers(opts.workers)?)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let frames: Vec<FrameReport> = pool.install(|| {
        selected
            .par_iter()
            .map(|f| {
                let (metrics, error) = match ctx.frame(f) {
                    Ok(mtr) => (Some(mtr), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                FrameReport {
                    id: f.id.clone(),
                    split: f.split,
                    error,
                    metrics,
                }
            })
            .collect()
    });
    let mut aggregate_rows = Vec::new();
    for split in [Split::Train, Split::Test] {
        let part: Vec<&FrameReport> = frames.iter().filter(|f| f.split == split).collect();
        if !part.is_empty() {
            aggregate_rows.push(aggregate(split.as_str(), &part, track, opts.efs, m, num_classes)?);
        }
    }
    let all: Vec<&FrameReport> = frames.iter().collect();
    aggregate_rows.push(aggregate("all", &all, track, opts.efs, m, num_classes)?);
    Ok(EvaluationReport {
        track,
        efs: opts.efs,
        void_policy: ctx.policy,
        failures: frames.iter().filter(|f| f.error.is_some()).count(),
        frames,
        aggregate: aggregate_rows,
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn opt_pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), pct)
}

fn opt_px(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per aggregate; quality columns in percent with one decimal,
    /// flow residuals in pixels.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let with_flow = self.aggregate.iter().any(|r| r.flow.is_some());
        match self.track {
            Track::Ca => {
                out.push_str("split,frames,failed,SQ,RQ,CAQ,TP,FP,FN");
                if with_flow {
                    out.push_str(",EFS,residual_static_px,residual_moving_px,flow_motion_IoU");
                }
            }
            Track::Panoptic => out.push_str("split,frames,failed,PQ_All,PQ_Th,PQ_St"),
            Track::Openset => out.push_str("split,frames,failed,mIoU,CA-IoU"),
        }
        out.push('\n');
        for r in &self.aggregate {
            let _ = write!(out, "{},{},{}", r.split, r.frames, r.failed);
            if let Some(c) = &r.ca {
                let _ = write!(out, ",{},{},{},{},{},{}", pct(c.sq), pct(c.rq), pct(c.caq), c.tp, c.fp, c.fn_);
            }
            if with_flow {
                match &r.flow {
                    Some(fl) => {
                        let _ = write!(
                            out,
                            ",{},{},{},{}",
                            if fl.suppressed { "yes" } else { "no" },
                            opt_px(fl.residual_static),
                            opt_px(fl.residual_moving),
                            pct(fl.flow_motion_iou)
                        );
                    }
                    None => out.push_str(",-,-,-,-"),
                }
            }
            if let Some(p) = &r.panoptic {
                let _ = write!(out, ",{},{},{}", opt_pct(p.pq_all), opt_pct(p.pq_th), opt_pct(p.pq_st));
            }
            if let Some(o) = &r.openset {
                let _ = write!(out, ",{},{}", opt_pct(o.miou), pct(o.ca_iou));
            }
            out.push('\n');
        }
        out
    }
}
