use crate::numeric::Array;

/// Sparse `rows x cols` matrix in coordinate form.
///
/// Entries may repeat; repeated coordinates add.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn from_entries(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        debug_assert!(entries.iter().all(|&(r, c, _)| r < rows && c < cols));
        Self { rows, cols, entries }
    }

    pub fn push(&mut self, row: usize, col: usize, weight: f64) {
        assert!(row < self.rows && col < self.cols, "sparse entry out of bounds");
        self.entries.push((row, col, weight));
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `self . m`
    pub fn apply(&self, m: &Array) -> Array {
        let c = m.cols();
        let mut out = Array::zeros(&[self.rows, c]);
        for &(r, k, w) in &self.entries {
            let src = m.row(k);
            for (o, s) in out.row_mut(r).iter_mut().zip(src) {
                *o += w * s;
            }
        }
        out
    }

    /// `self^T . m`
    pub fn apply_transposed(&self, m: &Array) -> Array {
        let c = m.cols();
        let mut out = Array::zeros(&[self.cols, c]);
        for &(r, k, w) in &self.entries {
            let src = m.row(r);
            for (o, s) in out.row_mut(k).iter_mut().zip(src) {
                *o += w * s;
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array {
        let mut out = Array::zeros(&[self.rows, self.cols]);
        let cols = self.cols;
        for &(r, c, w) in &self.entries {
            out.data_mut()[r * cols + c] += w;
        }
        out
    }
}
