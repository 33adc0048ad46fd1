//! Block-structured vectors and the bounded iterate history used for
//! delayed (stale, per-block inconsistent) reads.
//!
//! Blocks are indexed from 0. An iterate `x^n` with `n < 0` is, by
//! convention, the initial iterate `x^0`.

use std::collections::VecDeque;
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Decomposition of the ambient space into `m` consecutive blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidLayout("at least one block is required".into()));
        }
        if let Some(pos) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidLayout(format!("block {pos} has size 0")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for &s in &sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self { sizes, offsets })
    }

    /// `m` blocks of equal size.
    pub fn uniform(m: usize, block_size: usize) -> Result<Self> {
        Self::new(vec![block_size; m])
    }

    /// One scalar per block.
    pub fn scalar(n: usize) -> Result<Self> {
        Self::uniform(n, 1)
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().expect("offsets never empty")
    }

    pub fn block_size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Coordinate range of block `i`.
    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn check_block(&self, i: usize) -> Result<()> {
        if i < self.num_blocks() {
            Ok(())
        } else {
            Err(Error::BlockOutOfRange {
                index: i,
                blocks: self.num_blocks(),
            })
        }
    }
}

/// A point of the product space, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    layout: Arc<BlockLayout>,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn new(layout: Arc<BlockLayout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.dim() {
            return Err(Error::LayoutMismatch {
                expected: layout.dim(),
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("block vector"));
        }
        Ok(Self { layout, data })
    }

    pub fn zeros(layout: Arc<BlockLayout>) -> Self {
        let data = vec![0.0; layout.dim()];
        Self { layout, data }
    }

    /// No finiteness check; used for iterates of failed runs.
    pub(crate) fn from_raw(layout: Arc<BlockLayout>, data: Vec<f64>) -> Self {
        debug_assert_eq!(layout.dim(), data.len());
        Self { layout, data }
    }

    /// Convenience constructor with one scalar per block.
    pub fn from_scalars(data: Vec<f64>) -> Result<Self> {
        let layout = Arc::new(BlockLayout::scalar(data.len())?);
        Self::new(layout, data)
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[self.layout.range(i)]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.range(i);
        &mut self.data[r]
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.data).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn same_layout(&self, other: &BlockVector) -> Result<()> {
        if self.layout.as_ref() == other.layout.as_ref() {
            Ok(())
        } else {
            Err(Error::LayoutMismatch {
                expected: self.dim(),
                got: other.dim(),
            })
        }
    }
}

/// Euclidean distance `‖x − y‖`.
pub fn distance(x: &BlockVector, y: &BlockVector) -> Result<f64> {
    x.same_layout(y)?;
    Ok(dist2(x.as_slice(), y.as_slice()).sqrt())
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Per-block ages `j(k,i)` of a delayed read.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DelayVector(pub Vec<usize>);

impl DelayVector {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0; m])
    }

    pub fn constant(m: usize, delay: usize) -> Self {
        Self(vec![delay; m])
    }

    pub fn components(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Current delay: the age of the oldest block.
    pub fn current(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

/// The last `window` iterates plus `x^0`, readable by iteration index.
#[derive(Debug, Clone)]
pub struct IterateHistory {
    layout: Arc<BlockLayout>,
    window: usize,
    x0: Vec<f64>,
    entries: VecDeque<Vec<f64>>,
    /// Index of the most recent entry; meaningless while `entries` is empty.
    top: u64,
}

impl IterateHistory {
    pub fn new(x0: &BlockVector, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidConfig("history window must be positive".into()));
        }
        Ok(Self {
            layout: x0.layout().clone(),
            window,
            x0: x0.as_slice().to_vec(),
            entries: VecDeque::with_capacity(window),
            top: 0,
        })
    }

    /// Window that covers reads delayed by up to `max_delay`.
    pub fn default_window(max_delay: usize) -> usize {
        2 * max_delay + 2
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index of the most recent iterate, if any has been pushed.
    pub fn top(&self) -> Option<u64> {
        (!self.entries.is_empty()).then_some(self.top)
    }

    fn oldest(&self) -> i64 {
        self.top as i64 + 1 - self.entries.len() as i64
    }

    pub fn push(&mut self, x: &BlockVector, k: u64) -> Result<()> {
        if x.dim() != self.layout.dim() {
            return Err(Error::LayoutMismatch {
                expected: self.layout.dim(),
                got: x.dim(),
            });
        }
        self.push_slice(x.as_slice(), k)
    }

    pub(crate) fn push_slice(&mut self, x: &[f64], k: u64) -> Result<()> {
        let expected = if self.entries.is_empty() { 0 } else { self.top + 1 };
        if k != expected {
            return Err(Error::NonConsecutiveIndex { expected, got: k });
        }
        let slot = if self.entries.len() == self.window {
            let mut recycled = self.entries.pop_front().expect("window is positive");
            recycled.copy_from_slice(x);
            recycled
        } else {
            x.to_vec()
        };
        self.entries.push_back(slot);
        self.top = k;
        Ok(())
    }

    /// The iterate `x^n`; `n < 0` reads `x^0`.
    pub fn read(&self, n: i64) -> Result<&[f64]> {
        if n < 0 {
            return Ok(&self.x0);
        }
        let oldest = self.oldest();
        if self.entries.is_empty() || n > self.top as i64 {
            return Err(Error::WindowExceeded { index: n, oldest });
        }
        if n < oldest {
            return Err(Error::WindowExceeded { index: n, oldest });
        }
        Ok(&self.entries[(n - oldest) as usize])
    }

    /// `x̂` with block `i` taken from `x^{k − j(k,i)}`.
    pub fn delayed_read(&self, k: u64, d: &DelayVector) -> Result<BlockVector> {
        let mut out = vec![0.0; self.layout.dim()];
        self.delayed_read_into(k, d, &mut out)?;
        Ok(BlockVector {
            layout: self.layout.clone(),
            data: out,
        })
    }

    pub(crate) fn delayed_read_into(&self, k: u64, d: &DelayVector, out: &mut [f64]) -> Result<()> {
        if d.len() != self.layout.num_blocks() {
            return Err(Error::LayoutMismatch {
                expected: self.layout.num_blocks(),
                got: d.len(),
            });
        }
        if self.top() != Some(k) {
            return Err(Error::WindowExceeded {
                index: k as i64,
                oldest: self.oldest(),
            });
        }
        for (i, &age) in d.components().iter().enumerate() {
            let src = self.read(k as i64 - age as i64)?;
            let r = self.layout.range(i);
            out[r.clone()].copy_from_slice(&src[r]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> BlockVector {
        BlockVector::from_scalars(data.to_vec()).unwrap()
    }

    #[test]
    fn layout_offsets_are_prefix_sums() {
        let l = BlockLayout::new(vec![2, 1, 3]).unwrap();
        assert_eq!(l.dim(), 6);
        assert_eq!(l.range(0), 0..2);
        assert_eq!(l.range(1), 2..3);
        assert_eq!(l.range(2), 3..6);
        assert!(BlockLayout::new(vec![]).is_err());
        assert!(BlockLayout::new(vec![1, 0]).is_err());
    }

    #[test]
    fn rejects_non_finite_entries() {
        assert_eq!(
            BlockVector::from_scalars(vec![1.0, f64::NAN]),
            Err(Error::NonFinite("block vector"))
        );
    }

    #[test]
    fn distance_examples() {
        let x = v(&[3.0, 4.0]);
        assert_eq!(distance(&x, &x).unwrap(), 0.0);
        assert_eq!(distance(&x, &v(&[0.0, 0.0])).unwrap(), 5.0);
        assert!(matches!(
            distance(&x, &v(&[0.0, 0.0, 0.0])),
            Err(Error::LayoutMismatch { .. })
        ));
    }

    #[test]
    fn zero_delay_reads_top() {
        let mut h = IterateHistory::new(&v(&[1.0, 1.0]), 4).unwrap();
        h.push(&v(&[1.0, 1.0]), 0).unwrap();
        assert_eq!(h.read(0).unwrap(), &[1.0, 1.0]);
        h.push(&v(&[2.0, 3.0]), 1).unwrap();
        let r = h.delayed_read(1, &DelayVector::zeros(2)).unwrap();
        assert_eq!(r.as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn mixed_delay_read() {
        let mut h = IterateHistory::new(&v(&[1.0, 1.0]), 4).unwrap();
        h.push(&v(&[1.0, 1.0]), 0).unwrap();
        h.push(&v(&[2.0, 3.0]), 1).unwrap();
        let r = h.delayed_read(1, &DelayVector(vec![1, 0])).unwrap();
        assert_eq!(r.as_slice(), &[1.0, 3.0]);
    }

    #[test]
    fn negative_indices_read_x0() {
        let mut h = IterateHistory::new(&v(&[7.0, -1.0]), 3).unwrap();
        h.push(&v(&[7.0, -1.0]), 0).unwrap();
        let r = h.delayed_read(0, &DelayVector(vec![5, 5])).unwrap();
        assert_eq!(r.as_slice(), &[7.0, -1.0]);
        assert_eq!(h.read(-3).unwrap(), &[7.0, -1.0]);
    }

    #[test]
    fn capacity_evicts_oldest() {
        let w = 3;
        let mut h = IterateHistory::new(&v(&[0.0]), w).unwrap();
        for k in 0..=w as u64 {
            h.push(&v(&[k as f64]), k).unwrap();
        }
        assert_eq!(h.read(0), Err(Error::WindowExceeded { index: 0, oldest: 1 }));
        assert_eq!(h.read(1).unwrap(), &[1.0]);
        assert!(matches!(
            h.delayed_read(3, &DelayVector(vec![3])),
            Err(Error::WindowExceeded { .. })
        ));
    }

    #[test]
    fn push_must_be_consecutive() {
        let mut h = IterateHistory::new(&v(&[0.0]), 8).unwrap();
        assert_eq!(
            h.push(&v(&[0.0]), 1),
            Err(Error::NonConsecutiveIndex { expected: 0, got: 1 })
        );
        for k in 0..=3 {
            h.push(&v(&[0.0]), k).unwrap();
        }
        assert_eq!(
            h.push(&v(&[0.0]), 5),
            Err(Error::NonConsecutiveIndex { expected: 4, got: 5 })
        );
    }
}
