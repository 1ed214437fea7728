//! CIF parsing, periodic point sets and the average-minimum-distance (AMD)
//! descriptor.

mod cif;
mod lattice;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::scalar::Scalar;

pub use cif::parse_cif;
pub use lattice::PeriodicPointSet;

pub const DEFAULT_AMD_K: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrystalError {
    #[error("CIF line {line}: {msg}")]
    Cif { line: usize, msg: String },
    #[error("degenerate cell (determinant {0:e})")]
    Degenerate(f64),
    #[error("motif is empty")]
    EmptyMotif,
    #[error("motif points {first} and {second} coincide")]
    Coincident { first: usize, second: usize },
    #[error("descriptor {index} has length {got}, expected {expected}")]
    LengthMismatch { index: usize, expected: usize, got: usize },
    #[error("reference set is empty")]
    EmptyReference,
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {msg}")]
    File { path: PathBuf, msg: String },
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> CrystalError {
    CrystalError::File {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Reads and parses a CIF file.
pub fn read_cif<T: Scalar>(path: &Path) -> Result<PeriodicPointSet<T>, CrystalError> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    parse_cif(&text).map_err(|e| file_err(path, e))
}

/// `values[j]` is the mean over motif points of the distance to the
/// `(j+1)`-th nearest neighbour.
pub fn amd<T: Scalar>(set: &PeriodicPointSet<T>, k: usize) -> Result<Vec<T>, CrystalError> {
    amd_padded(set, k, 0)
}

/// [`amd`] with additional lattice shells searched past the completeness bound.
pub fn amd_padded<T: Scalar>(set: &PeriodicPointSet<T>, k: usize, extra_shells: usize) -> Result<Vec<T>, CrystalError> {
    let per_point = set.kth_nearest_distances(k, extra_shells)?;
    let m = T::of(per_point.len() as f64);
    Ok((0..k)
        .map(|j| per_point.iter().map(|d| d[j]).sum::<T>() / m)
        .collect())
}

fn euclid<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum::<T>().sqrt()
}

fn check_lengths<T>(sets: &[&[Vec<T>]]) -> Result<(), CrystalError> {
    let mut expected = None;
    let mut index = 0;
    for set in sets {
        for d in set.iter() {
            let want = *expected.get_or_insert(d.len());
            if d.len() != want {
                return Err(CrystalError::LengthMismatch {
                    index,
                    expected: want,
                    got: d.len(),
                });
            }
            index += 1;
        }
    }
    Ok(())
}

/// Symmetric matrix of pairwise Euclidean distances.
pub fn descriptor_distance_matrix<T: Scalar>(descriptors: &[Vec<T>]) -> Result<Vec<Vec<T>>, CrystalError> {
    check_lengths(&[descriptors])?;
    let n = descriptors.len();
    let mut m = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclid(&descriptors[i], &descriptors[j]);
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

/// For each candidate, the distance to (and index of) its nearest reference.
pub fn novelty_score<T: Scalar>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
) -> Result<Vec<(T, usize)>, CrystalError> {
    if references.is_empty() {
        return Err(CrystalError::EmptyReference);
    }
    check_lengths(&[candidates, references])?;
    Ok(candidates
        .iter()
        .map(|c| {
            references
                .iter()
                .enumerate()
                .map(|(i, r)| (euclid(c, r), i))
                .fold(None, |best: Option<(T, usize)>, cur| match best {
                    Some(b) if b.0 <= cur.0 => Some(b),
                    _ => Some(cur),
                })
                .expect("non-empty references")
        })
        .collect())
}

/// `id,amd_1,...,amd_k` rows.
pub fn write_descriptor_csv<T: Scalar>(path: &Path, rows: &[(String, Vec<T>)]) -> Result<(), CrystalError> {
    let k = rows.first().map_or(0, |r| r.1.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
    let mut header = vec!["id".to_string()];
    header.extend((1..=k).map(|j| format!("amd_{j}")));
    w.write_record(&header).map_err(|e| file_err(path, e))?;
    for (id, v) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(v.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

/// Reads a descriptor CSV written by [`write_descriptor_csv`].
pub fn read_descriptor_csv<T: Scalar>(path: &Path) -> Result<Vec<(String, Vec<T>)>, CrystalError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| file_err(path, e))?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| file_err(path, e))?;
        let id = row.get(0).unwrap_or_default().to_string();
        let values = row
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>()
                    .map(T::of)
                    .map_err(|e| file_err(path, format!("row {}: {e}", i + 2)))
            })
            .collect::<Result<Vec<T>, _>>()?;
        out.push((id, values));
    }
    Ok(out)
}

/// Square matrix with ids as the header row and first column.
pub fn write_matrix_csv<T: Scalar>(path: &Path, ids: &[String], m: &[Vec<T>]) -> Result<(), CrystalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
    let mut header = vec!["id".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header).map_err(|e| file_err(path, e))?;
    for (id, row) in ids.iter().zip(m) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

/// `id,novelty,nearest_reference` rows.
pub fn write_novelty_csv<T: Scalar>(
    path: &Path,
    ids: &[String],
    reference_ids: &[String],
    scores: &[(T, usize)],
) -> Result<(), CrystalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
    w.write_record(["id", "novelty", "nearest_reference"])
        .map_err(|e| file_err(path, e))?;
    for (id, (d, r)) in ids.iter().zip(scores) {
        w.write_record([id.clone(), d.to_string(), reference_ids[*r].clone()])
            .map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}
