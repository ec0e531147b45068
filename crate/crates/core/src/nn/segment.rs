use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::NnError;

/// Edge aggregation weight: `w_k = 1` (sum) or `w_k = 1 / n_e` (mean).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    SegmentSum,
    #[default]
    SegmentMean,
}

/// Reduces rows of `values` grouped by `segment_ids`. Empty segments are zero
/// rows under both modes.
pub fn segment_reduce(
    values: ArrayView2<'_, f64>,
    segment_ids: &[usize],
    num_segments: usize,
    mode: Aggregation,
) -> Result<Array2<f64>, NnError> {
    if values.nrows() != segment_ids.len() {
        return Err(NnError::ShapeMismatch(format!(
            "segment_reduce: {} rows but {} segment ids",
            values.nrows(),
            segment_ids.len()
        )));
    }
    if let Some(&bad) = segment_ids.iter().find(|&&s| s >= num_segments) {
        return Err(NnError::IndexOutOfBounds {
            index: bad,
            len: num_segments,
        });
    }
    Ok(segment_reduce_unchecked(values, segment_ids, num_segments, mode))
}

pub(crate) fn segment_reduce_unchecked(
    values: ArrayView2<'_, f64>,
    segment_ids: &[usize],
    num_segments: usize,
    mode: Aggregation,
) -> Array2<f64> {
    let mut out = Array2::zeros((num_segments, values.ncols()));
    for (row, &s) in values.rows().into_iter().zip(segment_ids) {
        let mut target = out.row_mut(s);
        target += &row;
    }
    if mode == Aggregation::SegmentMean {
        let counts = segment_counts(segment_ids, num_segments);
        for (mut row, &c) in out.rows_mut().into_iter().zip(&counts) {
            if c > 0 {
                row /= c as f64;
            }
        }
    }
    out
}

pub(crate) fn segment_counts(segment_ids: &[usize], num_segments: usize) -> Vec<usize> {
    let mut counts = vec![0usize; num_segments];
    for &s in segment_ids {
        counts[s] += 1;
    }
    counts
}
