mod losses;
mod mask;
mod metrics;

pub use losses::{ce_loss, combined_loss, dice_loss, LossWeights, DEFAULT_SMOOTH};
pub use mask::LabelMask;
pub use metrics::{
    dsc, evaluate_case, hd95, percentile, pixel_distance, surface, surface_distances, CaseReport, ClassMetrics,
    ClassSummary, MetricReport,
};
