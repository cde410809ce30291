//! Dataset manifests, synthetic scenes with known answers, batch evaluation
//! and dataset statistics.

mod evaluate;
mod manifest;
mod stats;
mod synth;

pub use evaluate::{
    evaluate_dataset, load_features, load_label_map, AggregateRow, EvalOptions, EvaluationReport, FlowDiagnostics,
    FlowSummary, FrameMetrics, FrameReport, InstanceFlow, OpenSetSummary, Track, WORKERS_ENV,
};
pub use manifest::{load_manifest, FrameRecord, Manifest, Split};
pub use stats::{compute_stats, DatasetStats, MotionCounts};
pub use synth::{
    generate_scene, perturb_rect, synth_categories, synth_class_names, synth_dataset, synth_num_known_classes, ObjectKind,
    PlacedObject, Rect, SceneSpec, Shape, SynthScene, IOU_TOLERANCE,
};
