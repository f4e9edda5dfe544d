//! Forward/backward first differences and their repeated application.

use super::{DerivativeStack, GridError, GridField, Partition, StackLayout};

/// Treatment of the last lattice point along an axis, where no forward
/// neighbour exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryRule {
    /// Backward difference `(f(x) - f(x - h e)) / h`.
    #[default]
    Backward,
    /// `(f(x - h e) - f(x)) / h`, the negated backward difference.
    NegatedBackward,
}

/// Difference operators on a fixed partition.
#[derive(Debug, Clone, Copy)]
pub struct Stencil<'a> {
    partition: &'a Partition,
    rule: BoundaryRule,
}

impl<'a> Stencil<'a> {
    pub fn new(partition: &'a Partition, rule: BoundaryRule) -> Self {
        Self { partition, rule }
    }

    pub fn partition(&self) -> &Partition {
        self.partition
    }

    pub fn rule(&self) -> BoundaryRule {
        self.rule
    }

    /// Derivative orders must stay below `2 max(n_l)` and within the
    /// storage bound.
    pub fn check_order(&self, order: usize) -> Result<(), GridError> {
        let bound = (2 * self.partition.max_count()).min(super::MAX_ORDER + 1);
        if order >= bound {
            return Err(GridError::OrderTooHigh {
                order,
                bound: bound - 1,
            });
        }
        Ok(())
    }

    pub fn first_difference(&self, field: &GridField, axis: usize) -> Result<GridField, GridError> {
        if axis >= self.partition.dims() {
            return Err(GridError::InvalidAxis {
                axis,
                dims: self.partition.dims(),
            });
        }
        field.check_points(self.partition)?;
        let q = field.components();
        let mut out = GridField::zeros(field.points(), q);
        for point in 0..field.points() {
            let (a, b, h) = self.neighbours(point, axis);
            let dst = out.at_mut(point);
            for r in 0..q {
                dst[r] = (field.values()[b * q + r] - field.values()[a * q + r]) / h;
            }
        }
        Ok(out)
    }

    /// Repeated first differences of `field` up to total order `max_order`.
    pub fn derivative_stack(
        &self,
        field: &GridField,
        max_order: usize,
    ) -> Result<DerivativeStack, GridError> {
        self.check_order(max_order)?;
        field.check_points(self.partition)?;
        let layout = StackLayout::new(self.partition.dims(), max_order)?;
        let q = field.components();
        let entries = layout.len();
        let mut values = vec![0.0; field.points() * entries * q];
        for point in 0..field.points() {
            values[point * entries * q..point * entries * q + q].copy_from_slice(field.at(point));
        }
        self.fill_stack(&layout, q, &mut values);
        Ok(DerivativeStack::from_parts(layout, q, field.points(), values))
    }

    /// Fill entries `1..` of a point-major stack buffer from entry 0.
    ///
    /// `values` is laid out as `[point][entry][component]` with `width`
    /// components.
    pub fn fill_stack(&self, layout: &StackLayout, width: usize, values: &mut [f64]) {
        let entries = layout.len();
        let row = entries * width;
        let points = self.partition.point_count();
        debug_assert_eq!(values.len(), points * row);
        for e in 1..entries {
            let (parent, axis) = layout.parent(e).expect("non-root entries have parents");
            for point in 0..points {
                let (a, b, h) = self.neighbours(point, axis);
                for r in 0..width {
                    let fb = values[b * row + parent * width + r];
                    let fa = values[a * row + parent * width + r];
                    values[point * row + e * width + r] = (fb - fa) / h;
                }
            }
        }
    }

    /// Returns `(a, b, h)` such that the difference at `point` is
    /// `(f(b) - f(a)) / h`.
    fn neighbours(&self, point: usize, axis: usize) -> (usize, usize, f64) {
        let h = self.partition.spacing(axis);
        let stride = self.partition.stride(axis);
        let j = self.partition.lattice_coordinate(point, axis);
        if j < self.partition.counts()[axis] {
            (point, point + stride, h)
        } else {
            match self.rule {
                BoundaryRule::Backward => (point - stride, point, h),
                BoundaryRule::NegatedBackward => (point, point - stride, h),
            }
        }
    }
}

/// First difference along `axis` with the backward boundary rule.
pub fn first_difference(
    field: &GridField,
    axis: usize,
    partition: &Partition,
) -> Result<GridField, GridError> {
    Stencil::new(partition, BoundaryRule::Backward).first_difference(field, axis)
}

pub fn build_derivative_stack(
    field: &GridField,
    max_order: usize,
    partition: &Partition,
) -> Result<DerivativeStack, GridError> {
    Stencil::new(partition, BoundaryRule::Backward).derivative_stack(field, max_order)
}
