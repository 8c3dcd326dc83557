//! Flow-grid datasets: on-disk format, normalization, sample construction
//! and a synthetic city generator.

pub mod dataset;
pub mod external;
pub mod normalize;
pub mod samples;
pub mod synth;

pub use dataset::{FlowDataset, Meta, TIMESTAMP_FORMAT};
pub use external::{external_vector, Condition, WeatherRow, WeatherScaler, EXTERNAL_WIDTH, SUB_FACTORS};
pub use normalize::Normalizer;
pub use samples::{prepare, prepare_fitted, Batch, Frames, Prepared, Sample, SampleSet, SplitSpec};
pub use synth::{generate, SynthSpec};
