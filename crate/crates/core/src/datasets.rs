//! Dataset generation, ingestion, and preprocessing.
//!
//! Synthetic data is built per group as a product of two uniform random
//! factors, so each group block has a known planted rank. Every group draws
//! from its own derived seed; reordering or reconfiguring one group never
//! changes the data of another.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::matrix::{derive_seed, random_nonneg, row_partition, GroupedMatrix};

pub(crate) const TAG_SYNTH_W: u64 = 0xD1;
pub(crate) const TAG_SYNTH_H: u64 = 0xD2;

/// One synthetic group: `rows` rows with planted rank `rank`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticGroup {
    pub label: String,
    pub rows: usize,
    pub rank: usize,
}

impl SyntheticGroup {
    pub fn new(label: &str, rows: usize, rank: usize) -> Self {
        Self {
            label: label.to_string(),
            rows,
            rank,
        }
    }
}

/// Recipe for a grouped synthetic dataset with a shared column count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub groups: Vec<SyntheticGroup>,
    pub cols: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The benchmark mix used throughout the tests and the CLI default: one
    /// large easy group, one medium easy group, and one small group whose
    /// higher planted rank makes it the hardest to reconstruct at low rank.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            groups: vec![
                SyntheticGroup::new("large-low-rank", 1000, 3),
                SyntheticGroup::new("medium-low-rank", 500, 3),
                SyntheticGroup::new("small-high-rank", 250, 6),
            ],
            cols: 20,
            seed,
        }
    }

    pub fn total_rows(&self) -> usize {
        self.groups.iter().map(|g| g.rows).sum()
    }
}

/// Generates the grouped matrix described by `spec`.
///
/// Each group block is `W_g · H_g` with `W_g` of shape `rows × rank` and
/// `H_g` of shape `rank × cols`, both drawn uniformly from `[0, 1)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<GroupedMatrix> {
    const CONTEXT: &str = "generate_synthetic";
    if spec.groups.is_empty() {
        return Err(Error::EmptyInput { context: CONTEXT });
    }
    if spec.cols == 0 {
        return Err(Error::EmptyMatrix { context: CONTEXT });
    }
    for (g, group) in spec.groups.iter().enumerate() {
        if group.rows == 0 || group.rank == 0 || group.rank > group.rows.min(spec.cols) {
            return Err(Error::DimensionMismatch {
                context: CONTEXT,
                expected: format!(
                    "group {g} with rows ≥ 1 and rank in 1..={}",
                    group.rows.min(spec.cols)
                ),
                got: format!("rows {}, rank {}", group.rows, group.rank),
            });
        }
        if spec.groups[..g]
            .iter()
            .any(|other| other.label == group.label)
        {
            return Err(Error::DuplicateLabel {
                label: group.label.clone(),
            });
        }
    }

    let mut blocks = Vec::with_capacity(spec.groups.len());
    for (g, group) in spec.groups.iter().enumerate() {
        let w = random_nonneg(
            group.rows,
            group.rank,
            derive_seed(spec.seed, &[TAG_SYNTH_W, g as u64]),
        );
        let h = random_nonneg(
            group.rank,
            spec.cols,
            derive_seed(spec.seed, &[TAG_SYNTH_H, g as u64]),
        );
        blocks.push((group.label.as_str(), w.dot(&h)));
    }
    GroupedMatrix::from_blocks(&blocks)
}

/// Rescales every feature column to unit Euclidean norm.
///
/// Group norms are recomputed for the rescaled data. A column that is zero
/// everywhere cannot be normalized and is reported by index.
pub fn normalize_features(x: &GroupedMatrix) -> Result<GroupedMatrix> {
    let mut data = x.data().to_owned();
    for (index, mut column) in data.columns_mut().into_iter().enumerate() {
        let norm = column.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateFeature { index });
        }
        column.mapv_inplace(|v| v / norm);
    }
    GroupedMatrix::from_parts(data, x.groups().to_vec(), x.group_of_row().to_vec())
}

/// Loads a grouped matrix from a CSV file with a header row.
///
/// `group_column` names the column holding group labels; `drop_columns`
/// names columns to ignore entirely (identifiers, free text). Every
/// remaining column must parse as a non-negative finite number, and parse
/// failures are reported with the file, line, and column that caused them.
pub fn load_grouped_csv(
    path: &Path,
    group_column: &str,
    drop_columns: &[&str],
) -> Result<GroupedMatrix> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();

    let group_index = headers
        .iter()
        .position(|h| h == group_column)
        .ok_or_else(|| Error::CsvColumn {
            path: display.clone(),
            column: group_column.to_string(),
        })?;
    for &drop in drop_columns {
        if !headers.iter().any(|h| h == drop) {
            return Err(Error::CsvColumn {
                path: display.clone(),
                column: drop.to_string(),
            });
        }
    }
    let feature_indices: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(i, h)| *i != group_index && !drop_columns.contains(h))
        .map(|(i, _)| i)
        .collect();
    if feature_indices.is_empty() {
        return Err(Error::CsvFile {
            path: display.clone(),
            problem: "no feature columns remain after dropping".to_string(),
        });
    }

    let mut labels: Vec<String> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        labels.push(record[group_index].to_string());
        for &i in &feature_indices {
            let raw = &record[i];
            let column = headers[i].to_string();
            let value: f64 = raw.trim().parse().map_err(|_| Error::CsvCell {
                path: display.clone(),
                line,
                column: column.clone(),
                problem: format!("'{raw}' is not a number"),
            })?;
            if !value.is_finite() || value < 0.0 {
                return Err(Error::CsvCell {
                    path: display.clone(),
                    line,
                    column,
                    problem: format!("{value} is not a non-negative finite number"),
                });
            }
            values.push(value);
        }
    }
    if labels.is_empty() {
        return Err(Error::CsvFile {
            path: display,
            problem: "no data rows".to_string(),
        });
    }

    let data = Array2::from_shape_vec((labels.len(), feature_indices.len()), values)
        .expect("row-major cell buffer matches the record count");
    let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    row_partition(data, &label_refs)
}

/// Writes a grouped matrix as CSV with a `group` label column and features
/// named `f0..`. Values use the shortest representation that parses back to
/// the same float, so a write/load round trip is lossless.
pub fn write_grouped_csv(x: &GroupedMatrix, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["group".to_string()];
    for j in 0..x.ncols() {
        header.push(format!("f{j}"));
    }
    writer.write_record(&header)?;

    let labels = x.labels();
    let mut cell = String::new();
    for (i, row) in x.data().rows().into_iter().enumerate() {
        let mut record = vec![labels[x.group_of_row()[i]].to_string()];
        for value in row {
            cell.clear();
            write!(cell, "{value}").expect("formatting a float into a string cannot fail");
            record.push(cell.clone());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            groups: vec![
                SyntheticGroup::new("a", 8, 2),
                SyntheticGroup::new("b", 5, 1),
            ],
            cols: 6,
            seed: 42,
        }
    }

    #[test]
    fn generated_data_has_the_requested_shape() {
        let x = generate_synthetic(&small_spec()).unwrap();
        assert_eq!(x.nrows(), 13);
        assert_eq!(x.ncols(), 6);
        assert_eq!(x.labels(), vec!["a", "b"]);
        assert_eq!(x.block(0).unwrap().dim(), (8, 6));
        assert_eq!(x.block(1).unwrap().dim(), (5, 6));
        assert!(x.data().iter().all(|&v| v >= 0.0));
        assert!(x.norms().iter().all(|&n| n > 0.0));
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let one = generate_synthetic(&small_spec()).unwrap();
        let two = generate_synthetic(&small_spec()).unwrap();
        assert_eq!(one.data(), two.data());

        let mut reseeded = small_spec();
        reseeded.seed = 43;
        let three = generate_synthetic(&reseeded).unwrap();
        assert_ne!(one.data(), three.data());
    }

    #[test]
    fn groups_draw_independent_randomness() {
        // Reconfiguring group a must not change group b's block.
        let base = generate_synthetic(&small_spec()).unwrap();
        let mut changed = small_spec();
        changed.groups[0].rank = 3;
        let other = generate_synthetic(&changed).unwrap();
        assert_eq!(base.block(1).unwrap(), other.block(1).unwrap());
        assert_ne!(base.block(0).unwrap(), other.block(0).unwrap());
    }

    #[test]
    fn rank_one_group_has_proportional_rows() {
        let x = generate_synthetic(&small_spec()).unwrap();
        let block = x.block(1).unwrap();
        let first = block.row(0);
        for row in block.rows() {
            for j in 1..block.ncols() {
                // Cross-multiplication avoids dividing by small entries.
                let lhs = row[j] * first[0];
                let rhs = row[0] * first[j];
                assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn benchmark_mix_is_shaped_as_documented() {
        let spec = SyntheticSpec::benchmark(7);
        assert_eq!(spec.total_rows(), 1750);
        assert_eq!(spec.cols, 20);
        let x = generate_synthetic(&spec).unwrap();
        assert_eq!(x.n_groups(), 3);
        assert_eq!(x.block(2).unwrap().nrows(), 250);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut empty = small_spec();
        empty.groups.clear();
        assert!(generate_synthetic(&empty).is_err());

        let mut bad_rank = small_spec();
        bad_rank.groups[1].rank = 7;
        assert!(generate_synthetic(&bad_rank).is_err());

        let mut duplicate = small_spec();
        duplicate.groups[1].label = "a".to_string();
        assert!(matches!(
            generate_synthetic(&duplicate),
            Err(Error::DuplicateLabel { .. })
        ));
    }

    #[test]
    fn normalization_yields_unit_columns_and_is_idempotent() {
        let x = generate_synthetic(&small_spec()).unwrap();
        let normalized = normalize_features(&x).unwrap();
        for column in normalized.data().columns() {
            let norm = column.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        // Group norms reflect the rescaled data.
        for g in 0..normalized.n_groups() {
            let block = normalized.block(g).unwrap();
            let direct = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((normalized.norms()[g] - direct).abs() < 1e-12);
        }

        let again = normalize_features(&normalized).unwrap();
        for (a, b) in again.data().iter().zip(normalized.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_ignores_a_common_scale() {
        let x = generate_synthetic(&small_spec()).unwrap();
        let scaled = GroupedMatrix::from_parts(
            x.data().mapv(|v| v * 3.0),
            x.groups().to_vec(),
            x.group_of_row().to_vec(),
        )
        .unwrap();
        let a = normalize_features(&x).unwrap();
        let b = normalize_features(&scaled).unwrap();
        for (p, q) in a.data().iter().zip(b.data().iter()) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_feature_columns_are_reported_by_index() {
        let generated = generate_synthetic(&small_spec()).unwrap();
        let mut data = generated.data().to_owned();
        data.column_mut(3).fill(0.0);
        let labels: Vec<&str> = (0..13).map(|i| if i < 8 { "a" } else { "b" }).collect();
        let x = row_partition(data, &labels).unwrap();
        assert!(matches!(
            normalize_features(&x),
            Err(Error::DegenerateFeature { index: 3 })
        ));
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let x = generate_synthetic(&small_spec()).unwrap();
        write_grouped_csv(&x, &path).unwrap();
        let loaded = load_grouped_csv(&path, "group", &[]).unwrap();
        assert_eq!(loaded.data(), x.data());
        assert_eq!(loaded.labels(), x.labels());
        assert_eq!(loaded.group_of_row(), x.group_of_row());
    }

    #[test]
    fn csv_loader_drops_requested_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(
            &path,
            "id,sex,height,weight\n1,f,1.6,55\n2,m,1.8,80\n3,f,1.7,60\n",
        )
        .unwrap();
        let x = load_grouped_csv(&path, "sex", &["id"]).unwrap();
        assert_eq!(x.nrows(), 3);
        assert_eq!(x.ncols(), 2);
        assert_eq!(x.labels(), vec!["f", "m"]);
        assert_eq!(x.block(0).unwrap().nrows(), 2);
        assert_eq!(x.data()[[1, 1]], 80.0);
    }

    #[test]
    fn csv_errors_carry_their_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "g,v\na,1.0\nb,oops\n").unwrap();
        match load_grouped_csv(&path, "g", &[]) {
            Err(Error::CsvCell { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "v");
            }
            other => panic!("expected a located cell error, got {other:?}"),
        }

        std::fs::write(&path, "g,v\na,-1.0\n").unwrap();
        assert!(matches!(
            load_grouped_csv(&path, "g", &[]),
            Err(Error::CsvCell { line: 2, .. })
        ));

        std::fs::write(&path, "g,v\na,1.0\n").unwrap();
        assert!(matches!(
            load_grouped_csv(&path, "missing", &[]),
            Err(Error::CsvColumn { .. })
        ));
        assert!(matches!(
            load_grouped_csv(&path, "g", &["absent"]),
            Err(Error::CsvColumn { .. })
        ));
        assert!(matches!(
            load_grouped_csv(&path, "g", &["v"]),
            Err(Error::CsvFile { .. })
        ));

        std::fs::write(&path, "g,v\n").unwrap();
        assert!(matches!(
            load_grouped_csv(&path, "g", &[]),
            Err(Error::CsvFile { .. })
        ));
    }
}
