//! In-memory dataset types, normalization and reference statistics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One labeled instance: `(channels, time)` values plus the class label as
/// read from the file.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateSeries {
    pub values: Array2<f64>,
    pub label: String,
}

impl MultivariateSeries {
    pub fn channels(&self) -> usize {
        self.values.dim().0
    }

    pub fn len(&self) -> usize {
        self.values.dim().1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A split of one UEA dataset with uniform dimensions after padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub instances: Vec<MultivariateSeries>,
    pub class_names: Vec<String>,
    dims: usize,
    length: usize,
}

impl Dataset {
    /// Validates the dataset invariants: at least one instance, shared
    /// `(M, L)` across instances, labels drawn from `class_names`, and at
    /// least two classes.
    pub fn new(
        name: impl Into<String>,
        split: Split,
        instances: Vec<MultivariateSeries>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let name = name.into();
        if instances.is_empty() {
            return Err(Error::Argument(format!(
                "dataset {name}: no instances (invariants need shared dims and length)"
            )));
        }
        if class_names.len() < 2 {
            return Err(Error::Argument(format!(
                "dataset {name}: needs at least 2 classes, got {}",
                class_names.len()
            )));
        }
        let dims = instances[0].channels();
        let length = instances[0].len();
        for (i, inst) in instances.iter().enumerate() {
            if inst.channels() != dims {
                return Err(Error::Argument(format!(
                    "dataset {name}: instance {i} has {} channels, expected {dims}",
                    inst.channels()
                )));
            }
            if inst.len() != length {
                return Err(Error::Argument(format!(
                    "dataset {name}: instance {i} has length {}, expected {length}",
                    inst.len()
                )));
            }
            if inst.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument(format!(
                    "dataset {name}: instance {i} contains non-finite values"
                )));
            }
            if !class_names.contains(&inst.label) {
                return Err(Error::Argument(format!(
                    "dataset {name}: instance {i} label {:?} not in class set",
                    inst.label
                )));
            }
        }
        Ok(Self {
            name,
            split,
            instances,
            class_names,
            dims,
            length,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Class index of a label in declaration order.
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == label)
    }

    /// Per-instance class indices in declaration order.
    pub fn label_indices(&self) -> Vec<usize> {
        self.instances
            .iter()
            .map(|s| self.label_index(&s.label).expect("validated at construction"))
            .collect()
    }

    /// Copy with every instance z-normalized per channel.
    pub fn znormalized(&self) -> Dataset {
        Dataset {
            name: self.name.clone(),
            split: self.split,
            instances: self
                .instances
                .iter()
                .map(znormalize_instance)
                .collect(),
            class_names: self.class_names.clone(),
            dims: self.dims,
            length: self.length,
        }
    }

    /// Right-pad every instance to `target_len` by repeating each channel's
    /// last value. No-op when already long enough.
    pub fn pad_to_length(&mut self, target_len: usize) {
        if target_len <= self.length {
            return;
        }
        for inst in &mut self.instances {
            inst.values = pad_values(&inst.values, target_len);
        }
        self.length = target_len;
    }
}

pub(crate) fn pad_values(values: &Array2<f64>, target_len: usize) -> Array2<f64> {
    let (dims, len) = values.dim();
    if target_len <= len {
        return values.clone();
    }
    let mut out = Array2::zeros((dims, target_len));
    for m in 0..dims {
        let last = values[[m, len - 1]];
        for t in 0..target_len {
            out[[m, t]] = if t < len { values[[m, t]] } else { last };
        }
    }
    out
}

/// Z-normalize each channel to zero mean and unit standard deviation,
/// population convention. A zero-variance channel becomes all zeros.
pub fn znormalize_instance(s: &MultivariateSeries) -> MultivariateSeries {
    let (dims, len) = s.values.dim();
    let n = len as f64;
    let mut values = s.values.clone();
    for m in 0..dims {
        let mean = values.row(m).sum() / n;
        let var = values.row(m).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var <= 0.0 {
            values.row_mut(m).fill(0.0);
        } else {
            let inv = 1.0 / var.sqrt();
            values.row_mut(m).mapv_inplace(|v| (v - mean) * inv);
        }
    }
    MultivariateSeries {
        values,
        label: s.label.clone(),
    }
}

/// Train and test splits of one dataset.
#[derive(Debug, Clone)]
pub struct DatasetPair {
    pub train: Dataset,
    pub test: Dataset,
}

impl DatasetPair {
    /// Re-pad both splits to the shared maximum length so one model fits
    /// both. Required for archives whose raw splits have different maxima.
    pub fn align_lengths(&mut self) {
        let target = self.train.length().max(self.test.length());
        self.train.pad_to_length(target);
        self.test.pad_to_length(target);
    }

    pub fn znormalized(&self) -> DatasetPair {
        DatasetPair {
            train: self.train.znormalized(),
            test: self.test.znormalized(),
        }
    }
}

/// Summary statistics of a train/test pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub train_size: usize,
    pub test_size: usize,
    pub dims: usize,
    pub length: usize,
    pub num_classes: usize,
}

pub fn dataset_stats(pair: &DatasetPair) -> Stats {
    Stats {
        train_size: pair.train.len(),
        test_size: pair.test.len(),
        dims: pair.train.dims().max(pair.test.dims()),
        length: pair.train.length().max(pair.test.length()),
        num_classes: pair.train.num_classes(),
    }
}

/// Published statistics of the ten benchmark UEA datasets.
#[derive(Debug, Clone, Copy)]
pub struct UeaDatasetInfo {
    pub abbrev: &'static str,
    pub name: &'static str,
    pub train_size: usize,
    pub test_size: usize,
    pub dims: usize,
    pub length: usize,
    pub num_classes: usize,
}

pub const UEA_REFERENCE: &[UeaDatasetInfo; 10] = &[
    UeaDatasetInfo { abbrev: "EC", name: "EthanolConcentration", train_size: 261, test_size: 263, dims: 3, length: 1751, num_classes: 4 },
    UeaDatasetInfo { abbrev: "FD", name: "FaceDetection", train_size: 5890, test_size: 3524, dims: 144, length: 62, num_classes: 2 },
    UeaDatasetInfo { abbrev: "HW", name: "Handwriting", train_size: 150, test_size: 850, dims: 3, length: 152, num_classes: 26 },
    UeaDatasetInfo { abbrev: "HB", name: "Heartbeat", train_size: 204, test_size: 205, dims: 61, length: 405, num_classes: 2 },
    UeaDatasetInfo { abbrev: "JV", name: "JapaneseVowels", train_size: 270, test_size: 370, dims: 12, length: 29, num_classes: 9 },
    UeaDatasetInfo { abbrev: "PS", name: "PEMS-SF", train_size: 267, test_size: 173, dims: 963, length: 144, num_classes: 7 },
    UeaDatasetInfo { abbrev: "SCP1", name: "SelfRegulationSCP1", train_size: 268, test_size: 293, dims: 6, length: 896, num_classes: 2 },
    UeaDatasetInfo { abbrev: "SCP2", name: "SelfRegulationSCP2", train_size: 200, test_size: 180, dims: 7, length: 1152, num_classes: 2 },
    UeaDatasetInfo { abbrev: "SAD", name: "SpokenArabicDigits", train_size: 6599, test_size: 2199, dims: 13, length: 93, num_classes: 10 },
    UeaDatasetInfo { abbrev: "UGL", name: "UWaveGestureLibrary", train_size: 120, test_size: 320, dims: 3, length: 315, num_classes: 8 },
];

pub fn reference_for(name: &str) -> Option<&'static UeaDatasetInfo> {
    UEA_REFERENCE
        .iter()
        .find(|i| i.name.eq_ignore_ascii_case(name) || i.abbrev.eq_ignore_ascii_case(name))
}

/// Compare measured statistics against the published reference. Returns a
/// list of human-readable mismatches; empty means exact agreement.
pub fn check_against_reference(stats: &Stats, info: &UeaDatasetInfo) -> Vec<String> {
    let mut mismatches = Vec::new();
    let mut check = |field: &str, got: usize, want: usize| {
        if got != want {
            mismatches.push(format!("{field}: got {got}, expected {want}"));
        }
    };
    check("train size", stats.train_size, info.train_size);
    check("test size", stats.test_size, info.test_size);
    check("dimensions", stats.dims, info.dims);
    check("length", stats.length, info.length);
    check("classes", stats.num_classes, info.num_classes);
    mismatches
}
