//! Patching of multivariate series.
//!
//! Each channel is cut into windows of length `P` every `S` steps after
//! appending `S` copies of the channel's last value, so the tail of the
//! series is never dropped. The patch count is
//! `N_P = floor((L - P) / S) + 2` and patch `j` reads padded positions
//! `[j*S, j*S + P)`.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Patch length and stride. `stride = None` means half the patch length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_len: usize,
    pub stride: Option<usize>,
}

impl PatchConfig {
    pub fn new(patch_len: usize) -> Self {
        Self {
            patch_len,
            stride: None,
        }
    }

    pub fn with_stride(patch_len: usize, stride: usize) -> Self {
        Self {
            patch_len,
            stride: Some(stride),
        }
    }

    /// Effective stride: explicit value or `patch_len / 2`.
    pub fn effective_stride(&self) -> usize {
        self.stride.unwrap_or_else(|| (self.patch_len / 2).max(1))
    }
}

/// Patched representation of one instance: `(channels, patch_len, n_patches)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchArray {
    pub data: Array3<f64>,
    pub patch_len: usize,
    pub stride: usize,
    pub source_len: usize,
}

impl PatchArray {
    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_patches(&self) -> usize {
        self.data.dim().2
    }
}

fn validate(len: usize, patch_len: usize, stride: usize) -> Result<()> {
    if patch_len == 0 || stride == 0 {
        return Err(Error::Argument(
            "patch length and stride must be positive".into(),
        ));
    }
    if patch_len > len {
        return Err(Error::Argument(format!(
            "patch length {patch_len} exceeds series length {len}"
        )));
    }
    if stride > patch_len {
        return Err(Error::Argument(format!(
            "stride {stride} exceeds patch length {patch_len} (gaps not allowed)"
        )));
    }
    Ok(())
}

/// `floor((L - P) / S) + 2`.
pub fn num_patches(len: usize, patch_len: usize, stride: usize) -> Result<usize> {
    validate(len, patch_len, stride)?;
    Ok((len - patch_len) / stride + 2)
}

/// Cut `values: (M, L)` into a [`PatchArray`], leaving the input untouched.
pub fn patch(values: &Array2<f64>, patch_len: usize, stride: usize) -> Result<PatchArray> {
    let (channels, len) = values.dim();
    let n = num_patches(len, patch_len, stride)?;
    let mut data = Array3::zeros((channels, patch_len, n));
    for m in 0..channels {
        let last = values[[m, len - 1]];
        for j in 0..n {
            for p in 0..patch_len {
                let pos = j * stride + p;
                data[[m, p, j]] = if pos < len { values[[m, pos]] } else { last };
            }
        }
    }
    Ok(PatchArray {
        data,
        patch_len,
        stride,
        source_len: len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    /// Independent oracle: count window starts `j*S` with
    /// `j*S + P <= L + S` on the padded sequence.
    fn enumerate_starts(len: usize, patch_len: usize, stride: usize) -> usize {
        let padded = len + stride;
        let mut count = 0;
        let mut start = 0;
        while start + patch_len <= padded {
            count += 1;
            start += stride;
        }
        count
    }

    #[test]
    fn matches_enumeration_on_benchmark_shapes() {
        assert_eq!(num_patches(152, 16, 8).unwrap(), 19);
        assert_eq!(enumerate_starts(152, 16, 8), 19);
        assert_eq!(num_patches(1751, 64, 32).unwrap(), 54);
        assert_eq!(enumerate_starts(1751, 64, 32), 54);
    }

    #[test]
    fn length_equal_to_patch_gives_two() {
        for stride in [1, 3, 7] {
            assert_eq!(num_patches(7, 7, stride).unwrap(), 2);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(num_patches(4, 5, 2), Err(Error::Argument(_))));
        assert!(matches!(num_patches(10, 4, 5), Err(Error::Argument(_))));
        assert!(matches!(num_patches(10, 0, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn hand_enumerated_patches() {
        let x = arr2(&[[1.0, 2.0, 3.0, 4.0]]);
        let p = patch(&x, 2, 2).unwrap();
        assert_eq!(p.n_patches(), 3);
        // padded sequence [1,2,3,4,4,4]
        let expect = [[1.0, 2.0], [3.0, 4.0], [4.0, 4.0]];
        for (j, pj) in expect.iter().enumerate() {
            for (i, v) in pj.iter().enumerate() {
                assert_eq!(p.data[[0, i, j]], *v);
            }
        }
        // source untouched
        assert_eq!(x, arr2(&[[1.0, 2.0, 3.0, 4.0]]));
    }

    #[test]
    fn constant_series_gives_constant_patches() {
        let x = Array2::from_elem((1, 9), 2.5);
        let p = patch(&x, 4, 2).unwrap();
        assert!(p.data.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn channels_patch_independently() {
        let x = arr2(&[
            [1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            [10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            [-1.0, -2.0, -3.0, -4.0, -5.0, -6.0],
        ]);
        let whole = patch(&x, 3, 2).unwrap();
        for m in 0..3 {
            let single = patch(
                &x.row(m).insert_axis(ndarray::Axis(0)).to_owned(),
                3,
                2,
            )
            .unwrap();
            assert_eq!(
                whole.data.index_axis(ndarray::Axis(0), m),
                single.data.index_axis(ndarray::Axis(0), 0)
            );
        }
    }

    #[test]
    fn non_overlapping_patches_tile_the_series() {
        let x = arr2(&[[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]]);
        let p = patch(&x, 4, 4).unwrap();
        // first floor(L/P) patches reproduce the series exactly
        for j in 0..(9 / 4) {
            for i in 0..4 {
                assert_eq!(p.data[[0, i, j]], x[[0, j * 4 + i]]);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn count_matches_enumeration(len in 1usize..512, patch_len in 1usize..64, stride in 1usize..64) {
            proptest::prop_assume!(patch_len <= len && stride <= patch_len);
            let got = num_patches(len, patch_len, stride).unwrap();
            proptest::prop_assert_eq!(got, enumerate_starts(len, patch_len, stride));
        }

        #[test]
        fn coverage_stays_within_padded_range(len in 1usize..256, patch_len in 1usize..48, stride in 1usize..48) {
            proptest::prop_assume!(patch_len <= len && stride <= patch_len);
            let n = num_patches(len, patch_len, stride).unwrap();
            // last patch must end inside the padded range (L + S) and the
            // windows must cover every position in [0, L)
            proptest::prop_assert!((n - 1) * stride + patch_len <= len + stride);
            proptest::prop_assert!((n - 1) * stride + patch_len >= len);
        }

        #[test]
        fn padded_tail_equals_last_value(len in 2usize..64, patch_len in 1usize..16, stride in 1usize..16) {
            proptest::prop_assume!(patch_len <= len && stride <= patch_len);
            let x = Array2::from_shape_fn((2, len), |(m, t)| (m * 100 + t) as f64);
            let p = patch(&x, patch_len, stride).unwrap();
            for m in 0..2 {
                let last = x[[m, len - 1]];
                for j in 0..p.n_patches() {
                    for i in 0..patch_len {
                        let pos = j * stride + i;
                        let expect = if pos < len { x[[m, pos]] } else { last };
                        proptest::prop_assert_eq!(p.data[[m, i, j]], expect);
                    }
                }
            }
        }
    }
}
