//! Dense matrix helpers, grouped row partitions, and deterministic inits.
//!
//! All numeric code in this crate works on `ndarray::Array2<f64>` in standard
//! (row-major) layout. This module adds what the factorization code needs on
//! top of plain arrays: Frobenius norms, a grouped view of a data matrix with
//! cached per-group norms, validated factor pairs, and a seeded uniform
//! initializer that reproduces bit-identically across platforms.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Frobenius norm of a matrix.
pub fn frobenius_norm(m: ArrayView2<'_, f64>) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::EmptyMatrix {
            context: "frobenius_norm",
        });
    }
    Ok(m.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Uniform-[0,1) matrix drawn from a ChaCha8 stream seeded with `seed`.
///
/// The generator is pinned (ChaCha8 via `seed_from_u64`) and entries are
/// drawn in row-major order, so a seed identifies one matrix on every
/// platform. All random initialization in this crate goes through here.
pub fn random_nonneg(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random()).collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches buffer length")
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a stream of tags.
///
/// One experiment seed has to fan out into many independent streams (per
/// trial, per baseline run, per factor). Mixing each tag through SplitMix64
/// keeps the streams decorrelated while staying a pure function of
/// `(master, tags)`.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    s
}

/// One row group: a label and the original row indices carrying it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub label: String,
    pub rows: Vec<usize>,
}

/// A non-negative data matrix partitioned into labeled row groups.
///
/// Groups are ordered by first appearance of their label. The Frobenius norm
/// of every group block is computed once at construction and must be
/// positive, since the per-group relative measures downstream divide by it.
#[derive(Debug, Clone)]
pub struct GroupedMatrix {
    data: Array2<f64>,
    groups: Vec<Group>,
    norms: Vec<f64>,
    group_of_row: Vec<usize>,
}

/// Partitions the rows of `data` by label, preserving first-appearance order.
pub fn row_partition(data: Array2<f64>, labels: &[&str]) -> Result<GroupedMatrix> {
    if data.is_empty() {
        return Err(Error::EmptyMatrix {
            context: "row_partition",
        });
    }
    if data.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "row_partition",
            expected: format!("{} labels", data.nrows()),
            got: format!("{}", labels.len()),
        });
    }
    validate_nonneg(&data.view())?;

    let mut groups: Vec<Group> = Vec::new();
    let mut group_of_row = Vec::with_capacity(labels.len());
    for (row, &label) in labels.iter().enumerate() {
        let idx = match groups.iter().position(|g| g.label == label) {
            Some(idx) => idx,
            None => {
                groups.push(Group {
                    label: label.to_string(),
                    rows: Vec::new(),
                });
                groups.len() - 1
            }
        };
        groups[idx].rows.push(row);
        group_of_row.push(idx);
    }

    GroupedMatrix::from_parts(data, groups, group_of_row)
}

impl GroupedMatrix {
    /// Builds a grouped matrix by stacking one block per label.
    pub fn from_blocks(blocks: &[(&str, Array2<f64>)]) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::EmptyInput {
                context: "GroupedMatrix::from_blocks",
            });
        }
        let cols = blocks[0].1.ncols();
        let rows: usize = blocks.iter().map(|(_, b)| b.nrows()).sum();
        let mut data = Array2::zeros((rows, cols));
        let mut labels = Vec::with_capacity(rows);
        let mut offset = 0;
        for (label, block) in blocks {
            if block.ncols() != cols {
                return Err(Error::DimensionMismatch {
                    context: "GroupedMatrix::from_blocks",
                    expected: format!("{cols} columns"),
                    got: format!("{}", block.ncols()),
                });
            }
            data.slice_mut(ndarray::s![offset..offset + block.nrows(), ..])
                .assign(block);
            labels.extend(std::iter::repeat_n(*label, block.nrows()));
            offset += block.nrows();
        }
        row_partition(data, &labels)
    }

    pub(crate) fn from_parts(
        data: Array2<f64>,
        groups: Vec<Group>,
        group_of_row: Vec<usize>,
    ) -> Result<Self> {
        let mut sq_norms = vec![0.0; groups.len()];
        for (row, &g) in group_of_row.iter().enumerate() {
            sq_norms[g] += data.row(row).iter().map(|v| v * v).sum::<f64>();
        }
        let norms: Vec<f64> = sq_norms.into_iter().map(f64::sqrt).collect();
        for (g, &norm) in norms.iter().enumerate() {
            if norm <= 0.0 {
                return Err(Error::DegenerateGroup {
                    label: groups[g].label.clone(),
                });
            }
        }
        Ok(Self {
            data,
            groups,
            norms,
            group_of_row,
        })
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn labels(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.label.as_str()).collect()
    }

    /// Cached Frobenius norms of the group blocks, in group order.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Group index of each original row.
    pub fn group_of_row(&self) -> &[usize] {
        &self.group_of_row
    }

    /// Materializes the block of rows belonging to group `g`.
    pub fn block(&self, g: usize) -> Result<Array2<f64>> {
        let group = self.groups.get(g).ok_or(Error::IndexOutOfRange {
            index: g,
            len: self.groups.len(),
        })?;
        Ok(self.data.select(Axis(0), &group.rows))
    }

    /// Gathers the rows of `m` belonging to group `g` (e.g. a block of `W`).
    pub fn gather_rows(&self, m: ArrayView2<'_, f64>, g: usize) -> Result<Array2<f64>> {
        if m.nrows() != self.nrows() {
            return Err(Error::DimensionMismatch {
                context: "GroupedMatrix::gather_rows",
                expected: format!("{} rows", self.nrows()),
                got: format!("{}", m.nrows()),
            });
        }
        let group = self.groups.get(g).ok_or(Error::IndexOutOfRange {
            index: g,
            len: self.groups.len(),
        })?;
        Ok(m.select(Axis(0), &group.rows))
    }

    /// Per-group Frobenius errors `‖X_g − (WH)_g‖` in one pass.
    pub fn group_errors(&self, w: ArrayView2<'_, f64>, h: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if w.nrows() != self.nrows() || h.ncols() != self.ncols() || w.ncols() != h.nrows() {
            return Err(Error::DimensionMismatch {
                context: "GroupedMatrix::group_errors",
                expected: format!("W {}×r, H r×{}", self.nrows(), self.ncols()),
                got: format!(
                    "W {}×{}, H {}×{}",
                    w.nrows(),
                    w.ncols(),
                    h.nrows(),
                    h.ncols()
                ),
            });
        }
        let product = w.dot(&h);
        let mut acc = vec![0.0; self.groups.len()];
        for (row, &g) in self.group_of_row.iter().enumerate() {
            let mut s = 0.0;
            for (x, p) in self.data.row(row).iter().zip(product.row(row).iter()) {
                let d = x - p;
                s += d * d;
            }
            acc[g] += s;
        }
        Ok(acc.into_iter().map(f64::sqrt).collect())
    }
}

/// A non-negative factor pair `(W, H)` with `W` m×r and `H` r×n.
#[derive(Debug, Clone)]
pub struct FactorPair {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
}

impl FactorPair {
    pub fn new(w: Array2<f64>, h: Array2<f64>) -> Result<Self> {
        if w.is_empty() || h.is_empty() {
            return Err(Error::EmptyMatrix {
                context: "FactorPair::new",
            });
        }
        if w.ncols() != h.nrows() {
            return Err(Error::DimensionMismatch {
                context: "FactorPair::new",
                expected: format!("H with {} rows", w.ncols()),
                got: format!("{}", h.nrows()),
            });
        }
        validate_nonneg(&w.view())?;
        validate_nonneg(&h.view())?;
        Ok(Self { w, h })
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    /// The reconstruction `WH`.
    pub fn product(&self) -> Array2<f64> {
        self.w.dot(&self.h)
    }
}

pub(crate) fn validate_nonneg(m: &ArrayView2<'_, f64>) -> Result<()> {
    for ((row, col), &value) in m.indexed_iter() {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidEntry { row, col, value });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn frobenius_norm_hand_cases() {
        assert_eq!(frobenius_norm(array![[3.0, 4.0]].view()).unwrap(), 5.0);
        let id = Array2::eye(2);
        assert!((frobenius_norm(id.view()).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        assert!((frobenius_norm(m.view()).unwrap() - 30f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn frobenius_norm_rejects_empty() {
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            frobenius_norm(empty.view()),
            Err(Error::EmptyMatrix { .. })
        ));
    }

    #[test]
    fn random_nonneg_is_deterministic_and_in_range() {
        let a = random_nonneg(40, 7, 99);
        let b = random_nonneg(40, 7, 99);
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| (0.0..1.0).contains(&v)));
        assert_ne!(a, random_nonneg(40, 7, 100));
    }

    #[test]
    fn random_nonneg_mean_is_near_half() {
        let m = random_nonneg(1000, 20, 3);
        let mean = m.iter().sum::<f64>() / (1000.0 * 20.0);
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn derive_seed_is_pure_and_tag_sensitive() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }

    #[test]
    fn row_partition_orders_groups_by_first_appearance() {
        let data = array![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        let gm = row_partition(data, &["a", "b", "a"]).unwrap();
        assert_eq!(gm.n_groups(), 2);
        assert_eq!(gm.groups()[0].label, "a");
        assert_eq!(gm.groups()[0].rows, vec![0, 2]);
        assert_eq!(gm.groups()[1].rows, vec![1]);
        assert_eq!(gm.group_of_row(), &[0, 1, 0]);
    }

    #[test]
    fn row_partition_single_label_is_one_group() {
        let data = array![[1.0], [2.0]];
        let gm = row_partition(data, &["only", "only"]).unwrap();
        assert_eq!(gm.n_groups(), 1);
        assert_eq!(gm.groups()[0].rows, vec![0, 1]);
    }

    #[test]
    fn cached_norms_match_independent_recomputation() {
        let data = array![[1.0, 2.0], [0.5, 0.25], [3.0, 1.0], [0.0, 4.0],];
        let gm = row_partition(data.clone(), &["f", "f", "m", "m"]).unwrap();
        // Recompute each block norm with a plain loop over the raw rows.
        let sq = |rows: &[usize]| -> f64 {
            rows.iter()
                .map(|&r| data.row(r).iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt()
        };
        assert!((gm.norms()[0] - sq(&[0, 1])).abs() < 1e-15);
        assert!((gm.norms()[1] - sq(&[2, 3])).abs() < 1e-15);
    }

    #[test]
    fn all_zero_group_is_rejected() {
        let data = array![[1.0, 1.0], [0.0, 0.0]];
        let err = row_partition(data, &["ok", "zero"]).unwrap_err();
        assert!(matches!(err, Error::DegenerateGroup { label } if label == "zero"));
    }

    #[test]
    fn negative_entries_are_rejected() {
        let data = array![[1.0, -0.5]];
        assert!(matches!(
            row_partition(data, &["a"]),
            Err(Error::InvalidEntry { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn label_count_mismatch_is_rejected() {
        let data = array![[1.0], [2.0]];
        assert!(matches!(
            row_partition(data, &["a"]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn blocks_reassemble_the_partition() {
        let data = array![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        let gm = row_partition(data, &["a", "b", "a"]).unwrap();
        let a = gm.block(0).unwrap();
        assert_eq!(a, array![[1.0, 0.0], [3.0, 0.0]]);
        let b = gm.block(1).unwrap();
        assert_eq!(b, array![[2.0, 0.0]]);
    }

    #[test]
    fn group_errors_match_blockwise_norms() {
        let data = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let gm = row_partition(data, &["a", "a", "b"]).unwrap();
        let w = array![[1.0], [1.0], [1.0]];
        let h = array![[1.0, 1.0]];
        let errs = gm.group_errors(w.view(), h.view()).unwrap();
        // Residual rows: (0,1), (2,3), (4,5).
        assert!((errs[0] - (0.0f64 + 1.0 + 4.0 + 9.0).sqrt()).abs() < 1e-12);
        assert!((errs[1] - (16.0f64 + 25.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn factor_pair_validates_shapes_and_sign() {
        let w = array![[1.0], [2.0]];
        let h = array![[1.0, 0.0]];
        let f = FactorPair::new(w.clone(), h.clone()).unwrap();
        assert_eq!(f.rank(), 1);
        assert!(FactorPair::new(w.clone(), array![[1.0], [1.0]]).is_err());
        assert!(FactorPair::new(array![[-1.0], [2.0]], h).is_err());
    }
}
