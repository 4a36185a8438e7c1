/// Row-compressed sparse matrix used for fixed linear maps on the tape:
/// barycentric interpolation, per-triangle gathers, scatter of face normals
/// onto vertices and one-ring averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    n_in: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseRows {
    pub fn new(n_in: usize) -> Self {
        SparseRows {
            n_in,
            offsets: vec![0],
            indices: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Appends one output row as a weighted sum of input rows.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (idx, w) in entries {
            assert!(
                idx < self.n_in,
                "contract violation: sparse index {idx} out of range {}",
                self.n_in
            );
            self.indices.push(idx);
            self.weights.push(w);
        }
        self.offsets.push(self.indices.len());
    }

    /// Plain row selection: output row `r` is input row `rows[r]`.
    pub fn gather(rows: &[usize], n_in: usize) -> Self {
        let mut s = SparseRows::new(n_in);
        for &r in rows {
            s.push_row([(r, 1.0)]);
        }
        s
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[r]..self.offsets[r + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }
}
