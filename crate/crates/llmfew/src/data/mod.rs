//! Dataset ingestion: UEA `.ts` parsing, normalization, statistics and the
//! built-in synthetic generator.

pub mod dataset;
pub mod synthetic;
pub mod ts;

pub use dataset::{
    check_against_reference, dataset_stats, reference_for, znormalize_instance, Dataset,
    DatasetPair, MultivariateSeries, Split, Stats, UeaDatasetInfo, UEA_REFERENCE,
};
pub use synthetic::{synthetic_sinusoid, SyntheticSpec, SYNTHETIC_DATASET_NAME};
pub use ts::{load_dataset_dir, parse_ts_file, parse_ts_str, write_ts};
