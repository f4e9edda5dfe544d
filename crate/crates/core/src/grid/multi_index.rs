//! Multi-indices `(i_1, ..., i_p)` with `i_1 + ... + i_p = c` and the layout
//! of a derivative stack holding every order `0..=M`.

use super::GridError;

/// Largest supported derivative order.
pub const MAX_ORDER: usize = 6;

/// Ordering key `sum_l i_l * base^(l-1)` with base `c + 1`.
///
/// For `c >= 2` this gives the same order as base `c`; base `c + 1` also
/// separates the order-1 indices, whose base-`c` keys all coincide.
pub fn ordering_key(index: &[usize]) -> u64 {
    let c: usize = index.iter().sum();
    let base = c as u64 + 1;
    index
        .iter()
        .rev()
        .fold(0u64, |acc, &i| acc * base + i as u64)
}

/// All multi-indices of a fixed order, sorted by [`ordering_key`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    order: usize,
    dims: usize,
    indices: Vec<Vec<usize>>,
}

impl MultiIndexSet {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.iter().map(Vec::as_slice)
    }
}

pub fn enumerate_multi_indices(order: usize, dims: usize) -> MultiIndexSet {
    assert!(dims >= 1, "multi-indices need at least one dimension");
    let mut indices = Vec::new();
    let mut current = vec![0; dims];
    fill(order, 0, &mut current, &mut indices);
    indices.sort_by_key(|idx| ordering_key(idx));
    MultiIndexSet {
        order,
        dims,
        indices,
    }
}

fn fill(remaining: usize, axis: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if axis + 1 == current.len() {
        current[axis] = remaining;
        out.push(current.clone());
        return;
    }
    for i in 0..=remaining {
        current[axis] = i;
        fill(remaining - i, axis + 1, current, out);
    }
    current[axis] = 0;
}

/// Flattened list of every multi-index of orders `0..=M`.
///
/// Entry 0 is the zero index; entries of order `c` occupy
/// `order_range(c)`. Every entry of order `c >= 1` records the order-`c-1`
/// parent obtained by decrementing its lowest-numbered nonzero axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackLayout {
    dims: usize,
    max_order: usize,
    indices: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    parents: Vec<Option<(usize, usize)>>,
}

impl StackLayout {
    pub fn new(dims: usize, max_order: usize) -> Result<Self, GridError> {
        if max_order > MAX_ORDER {
            return Err(GridError::OrderTooHigh {
                order: max_order,
                bound: MAX_ORDER,
            });
        }
        let mut indices = Vec::new();
        let mut offsets = vec![0];
        for c in 0..=max_order {
            indices.extend(enumerate_multi_indices(c, dims).indices);
            offsets.push(indices.len());
        }
        let mut layout = Self {
            dims,
            max_order,
            indices,
            offsets,
            parents: Vec::new(),
        };
        layout.parents = (0..layout.indices.len())
            .map(|e| {
                let idx = &layout.indices[e];
                let axis = idx.iter().position(|&i| i > 0)?;
                let mut parent = idx.clone();
                parent[axis] -= 1;
                Some((layout.position(&parent).expect("parent present"), axis))
            })
            .collect();
        Ok(layout)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Total number of entries across all orders.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of entries with order `<= c`.
    pub fn entries_through(&self, c: usize) -> usize {
        self.offsets[c.min(self.max_order) + 1]
    }

    pub fn order_range(&self, c: usize) -> std::ops::Range<usize> {
        self.offsets[c]..self.offsets[c + 1]
    }

    pub fn index(&self, entry: usize) -> &[usize] {
        &self.indices[entry]
    }

    pub fn order_of(&self, entry: usize) -> usize {
        self.indices[entry].iter().sum()
    }

    pub fn key(&self, entry: usize) -> u64 {
        ordering_key(&self.indices[entry])
    }

    pub fn parent(&self, entry: usize) -> Option<(usize, usize)> {
        self.parents[entry]
    }

    pub fn position(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.dims {
            return None;
        }
        let c: usize = index.iter().sum();
        if c > self.max_order {
            return None;
        }
        self.order_range(c)
            .find(|&e| self.indices[e].as_slice() == index)
    }
}
