use rustc_hash::FxHashMap;

/// Occupied lattice cells and their counts. Empty cells are never stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseHistogram {
    counts: FxHashMap<Box<[i64]>, u64>,
    total: u64,
}

impl SparseHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, cell: &[i64]) {
        self.add(cell, 1);
    }

    /// Adds `n > 0` observations of `cell`.
    pub fn add(&mut self, cell: &[i64], n: u64) {
        if n == 0 {
            return;
        }
        match self.counts.get_mut(cell) {
            Some(c) => *c += n,
            None => {
                self.counts.insert(cell.into(), n);
            }
        }
        self.total += n;
    }

    #[inline]
    pub fn count(&self, cell: &[i64]) -> u64 {
        self.counts.get(cell).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of occupied cells.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Occupied cells in lexicographic key order.
    pub fn sorted_cells(&self) -> Vec<(&[i64], u64)> {
        let mut cells: Vec<(&[i64], u64)> = self.counts.iter().map(|(k, &c)| (&**k, c)).collect();
        cells.sort_unstable_by(|a, b| a.0.cmp(b.0));
        cells
    }
}
