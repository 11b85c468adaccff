mod batch;
mod dataset;
mod nseg;
mod synth;

pub use batch::{augment, batch_plan, batches, collate, epoch_plan, Flips};
pub use dataset::{load_dataset, resize_nearest, Dataset, Manifest, ManifestEntry, SegSample, Split};
pub use nseg::{NsegDtype, NsegTensor, NSEG_MAGIC, NSEG_VERSION};
pub use synth::generate_synthetic;
