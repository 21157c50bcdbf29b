//! Column-sparse code matrix with an eagerly maintained row occupancy index.

use crate::error::{Error, Result};
use crate::matrix::{axpy, DenseMatrix, Dictionary};

/// An `m x n` coefficient matrix with at most `k` nonzeros per column.
///
/// Each column keeps its `(atom, coefficient)` entries in insertion order.
/// `rows[j]` lists, in ascending order, the columns whose code uses atom `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCodeMatrix {
    atoms: usize,
    k: usize,
    columns: Vec<Vec<(usize, f64)>>,
    rows: Vec<Vec<usize>>,
}

impl SparseCodeMatrix {
    pub fn new(atoms: usize, samples: usize, k: usize) -> Self {
        Self {
            atoms,
            k,
            columns: vec![Vec::new(); samples],
            rows: vec![Vec::new(); atoms],
        }
    }

    /// Builds from per-column entry lists, validating indices, distinctness
    /// and the per-column budget.
    pub fn from_columns(atoms: usize, k: usize, columns: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut rows = vec![Vec::new(); atoms];
        for (s, col) in columns.iter().enumerate() {
            if col.len() > k {
                return Err(Error::SparsityExceeded { col: s, k });
            }
            for (i, &(j, v)) in col.iter().enumerate() {
                if j >= atoms {
                    return Err(Error::DimensionMismatch(format!(
                        "atom index {j} in a code matrix with {atoms} atoms"
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::Precondition(format!(
                        "non-finite coefficient at ({j}, {s})"
                    )));
                }
                if col[..i].iter().any(|&(p, _)| p == j) {
                    return Err(Error::Precondition(format!(
                        "atom {j} appears twice in column {s}"
                    )));
                }
                rows[j].push(s);
            }
        }
        Ok(Self {
            atoms,
            k,
            columns,
            rows,
        })
    }

    pub fn atoms(&self) -> usize {
        self.atoms
    }

    pub fn samples(&self) -> usize {
        self.columns.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    pub fn column(&self, s: usize) -> &[(usize, f64)] {
        &self.columns[s]
    }

    pub fn columns(&self) -> &[Vec<(usize, f64)>] {
        &self.columns
    }

    /// Ω_j: the columns whose code uses atom `j`, ascending.
    pub fn row_support(&self, j: usize) -> &[usize] {
        &self.rows[j]
    }

    pub fn occupancy(&self, j: usize) -> usize {
        self.rows[j].len()
    }

    pub fn value(&self, atom: usize, s: usize) -> f64 {
        self.columns[s]
            .iter()
            .find(|e| e.0 == atom)
            .map_or(0.0, |e| e.1)
    }

    /// Coefficients of atom `j` over its support, in support order.
    pub fn row_values(&self, j: usize) -> Vec<f64> {
        self.rows[j].iter().map(|&s| self.value(j, s)).collect()
    }

    /// Adds `value` to entry `(atom, s)`, creating it if needed.
    pub fn insert(&mut self, s: usize, atom: usize, value: f64) -> Result<()> {
        if atom >= self.atoms || s >= self.columns.len() {
            return Err(Error::DimensionMismatch(format!(
                "entry ({atom}, {s}) outside {}x{}",
                self.atoms,
                self.columns.len()
            )));
        }
        let col = &mut self.columns[s];
        if let Some(e) = col.iter_mut().find(|e| e.0 == atom) {
            e.1 += value;
            return Ok(());
        }
        if col.len() >= self.k {
            return Err(Error::SparsityExceeded { col: s, k: self.k });
        }
        col.push((atom, value));
        let row = &mut self.rows[atom];
        let pos = row.partition_point(|&c| c < s);
        row.insert(pos, s);
        Ok(())
    }

    /// Overwrites the coefficients of atom `j` on its existing support.
    pub fn set_row_values(&mut self, j: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.rows[j].len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a support of size {}",
                values.len(),
                self.rows[j].len()
            )));
        }
        for (&s, &v) in self.rows[j].iter().zip(values) {
            if let Some(e) = self.columns[s].iter_mut().find(|e| e.0 == j) {
                e.1 = v;
            }
        }
        Ok(())
    }

    /// Removes every entry of atom `j`.
    pub fn clear_row(&mut self, j: usize) {
        for s in std::mem::take(&mut self.rows[j]) {
            self.columns[s].retain(|e| e.0 != j);
        }
    }

    /// Appends the columns of `other` (same atom count) after this matrix.
    pub fn append(&mut self, other: &SparseCodeMatrix) -> Result<()> {
        if other.atoms != self.atoms {
            return Err(Error::DimensionMismatch(format!(
                "appending codes over {} atoms to codes over {}",
                other.atoms, self.atoms
            )));
        }
        let offset = self.columns.len();
        self.k = self.k.max(other.k);
        for (j, row) in other.rows.iter().enumerate() {
            self.rows[j].extend(row.iter().map(|s| s + offset));
        }
        self.columns.extend(other.columns.iter().cloned());
        Ok(())
    }

    /// Adds the entries of `part` with atom indices shifted by `offset`.
    /// The atom ranges must not overlap existing entries.
    pub fn merge_block(&mut self, offset: usize, part: &SparseCodeMatrix) -> Result<()> {
        if part.samples() != self.samples() || offset + part.atoms > self.atoms {
            return Err(Error::DimensionMismatch(
                "code block does not fit the target matrix".into(),
            ));
        }
        for (s, col) in part.columns.iter().enumerate() {
            for &(j, v) in col {
                self.insert(s, offset + j, v)?;
            }
        }
        Ok(())
    }

    /// Keeps only atoms `start..start + count`, renumbered from zero.
    pub fn restrict_atoms(&self, start: usize, count: usize) -> SparseCodeMatrix {
        let columns = self
            .columns
            .iter()
            .map(|c| {
                c.iter()
                    .filter(|e| e.0 >= start && e.0 < start + count)
                    .map(|&(j, v)| (j - start, v))
                    .collect()
            })
            .collect();
        SparseCodeMatrix::from_columns(count, self.k, columns).expect("restriction of valid codes")
    }

    /// Nonzero pattern as sorted `(col, atom)` pairs.
    pub fn support_pattern(&self) -> Vec<(usize, usize)> {
        let mut p: Vec<_> = self
            .columns
            .iter()
            .enumerate()
            .flat_map(|(s, c)| c.iter().map(move |e| (s, e.0)))
            .collect();
        p.sort_unstable();
        p
    }

    /// Walks both views and checks they describe the same entries.
    pub fn audit(&self) -> Result<()> {
        let mut count = 0;
        for (s, col) in self.columns.iter().enumerate() {
            if col.len() > self.k {
                return Err(Error::SparsityExceeded { col: s, k: self.k });
            }
            for (i, &(j, _)) in col.iter().enumerate() {
                if col[..i].iter().any(|e| e.0 == j) {
                    return Err(Error::Corrupt(format!("duplicate atom {j} in column {s}")));
                }
                if self.rows[j].binary_search(&s).is_err() {
                    return Err(Error::Corrupt(format!("({j}, {s}) missing from row index")));
                }
                count += 1;
            }
        }
        for (j, row) in self.rows.iter().enumerate() {
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Corrupt(format!("row {j} index not strictly sorted")));
            }
        }
        let indexed: usize = self.rows.iter().map(Vec::len).sum();
        if indexed != count {
            return Err(Error::Corrupt(format!(
                "row index holds {indexed} entries, columns hold {count}"
            )));
        }
        Ok(())
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.atoms, self.samples());
        for (s, col) in self.columns.iter().enumerate() {
            for &(j, v) in col {
                out.set(j, s, v);
            }
        }
        out
    }

    /// `D x_s` for one column.
    pub fn reconstruct_column(&self, dict: &Dictionary, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; dict.dim()];
        for &(j, v) in &self.columns[s] {
            axpy(v, dict.atom(j), &mut out);
        }
        out
    }

    pub fn reconstruct(&self, dict: &Dictionary) -> DenseMatrix {
        let d = dict.dim();
        let mut data = Vec::with_capacity(d * self.samples());
        for s in 0..self.samples() {
            data.extend(self.reconstruct_column(dict, s));
        }
        DenseMatrix::from_raw(d, self.samples(), data)
    }

    /// `Y - D X`.
    pub fn residual(&self, data: &DenseMatrix, dict: &Dictionary) -> Result<DenseMatrix> {
        if data.cols() != self.samples() || data.rows() != dict.dim() {
            return Err(Error::DimensionMismatch(format!(
                "data {:?}, dictionary {}x{}, codes {}x{}",
                data.shape(),
                dict.dim(),
                dict.atoms(),
                self.atoms,
                self.samples()
            )));
        }
        data.sub(&self.reconstruct(dict))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn insert_sums_repeated_atoms() {
        let mut x = SparseCodeMatrix::new(4, 2, 2);
        x.insert(0, 3, 1.5).unwrap();
        x.insert(0, 3, -0.5).unwrap();
        assert_eq!(x.column(0), &[(3, 1.0)]);
        assert_eq!(x.row_support(3), &[0]);
        x.insert(0, 1, 2.0).unwrap();
        assert!(matches!(
            x.insert(0, 2, 1.0),
            Err(Error::SparsityExceeded { col: 0, k: 2 })
        ));
        x.audit().unwrap();
    }

    #[test]
    fn set_row_values_keeps_support() {
        let mut x =
            SparseCodeMatrix::from_columns(3, 2, vec![vec![(0, 1.0), (2, 2.0)], vec![(2, 3.0)]])
                .unwrap();
        x.set_row_values(2, &[7.0, 8.0]).unwrap();
        assert_eq!(x.row_values(2), vec![7.0, 8.0]);
        assert_eq!(x.value(0, 0), 1.0);
        assert!(x.set_row_values(2, &[1.0]).is_err());
        x.clear_row(2);
        assert_eq!(x.occupancy(2), 0);
        assert_eq!(x.column(1), &[]);
        x.audit().unwrap();
    }

    #[test]
    fn rejects_duplicate_atoms() {
        assert!(SparseCodeMatrix::from_columns(3, 2, vec![vec![(1, 1.0), (1, 2.0)]]).is_err());
    }

    proptest! {
        #[test]
        fn row_index_tracks_mutations(
            ops in proptest::collection::vec((0usize..12, 0usize..6, -3.0f64..3.0, 0u8..4), 1..80)
        ) {
            let mut x = SparseCodeMatrix::new(6, 12, 3);
            for (s, j, v, kind) in ops {
                match kind {
                    0 => x.clear_row(j),
                    1 => {
                        let n = x.occupancy(j);
                        x.set_row_values(j, &vec![v; n]).unwrap();
                    }
                    _ => { let _ = x.insert(s, j, v); }
                }
                prop_assert!(x.audit().is_ok());
            }
            let dense = x.to_dense();
            for j in 0..6 {
                for s in 0..12 {
                    prop_assert_eq!(dense.get(j, s), x.value(j, s));
                    prop_assert_eq!(x.row_support(j).contains(&s),
                        x.column(s).iter().any(|e| e.0 == j));
                }
            }
        }
    }
}
