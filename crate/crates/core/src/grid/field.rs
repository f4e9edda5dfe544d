use super::{GridError, Partition, StackLayout};

/// Values of a vector- or matrix-valued function on every lattice point.
///
/// Storage is point-major: `values[point * components + component]`.
/// Matrix-valued fields (`q x d`) are stored row-major per point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    components: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(points: usize, components: usize) -> Self {
        Self {
            components,
            values: vec![0.0; points * components],
        }
    }

    pub fn from_values(components: usize, values: Vec<f64>) -> Self {
        assert!(components > 0 && values.len() % components == 0);
        Self { components, values }
    }

    /// Sample `f(x, out)` at every lattice point.
    pub fn from_fn<F>(partition: &Partition, components: usize, mut f: F) -> Self
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let mut field = Self::zeros(partition.point_count(), components);
        let mut x = vec![0.0; partition.dims()];
        for point in 0..partition.point_count() {
            partition.coordinates_into(point, &mut x);
            f(&x, field.at_mut(point));
        }
        field
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn points(&self) -> usize {
        self.values.len() / self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, point: usize) -> &[f64] {
        &self.values[point * self.components..(point + 1) * self.components]
    }

    pub fn at_mut(&mut self, point: usize) -> &mut [f64] {
        &mut self.values[point * self.components..(point + 1) * self.components]
    }

    pub(crate) fn check_points(&self, partition: &Partition) -> Result<(), GridError> {
        if self.points() != partition.point_count() {
            return Err(GridError::ShapeMismatch(format!(
                "field has {} points, partition has {}",
                self.points(),
                partition.point_count()
            )));
        }
        Ok(())
    }
}

/// A field together with its stencil derivatives of every order `0..=M`.
///
/// Storage is `values[(point * entries + entry) * components + component]`,
/// with entries ordered as in [`StackLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStack {
    layout: StackLayout,
    components: usize,
    points: usize,
    values: Vec<f64>,
}

impl DerivativeStack {
    pub(crate) fn from_parts(
        layout: StackLayout,
        components: usize,
        points: usize,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(values.len(), layout.len() * components * points);
        Self {
            layout,
            components,
            points,
            values,
        }
    }

    pub fn layout(&self) -> &StackLayout {
        &self.layout
    }

    pub fn max_order(&self) -> usize {
        self.layout.max_order()
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entry values (all components) at a point.
    pub fn entry(&self, point: usize, entry: usize) -> &[f64] {
        let start = (point * self.layout.len() + entry) * self.components;
        &self.values[start..start + self.components]
    }

    /// Entry values addressed by multi-index.
    pub fn get(&self, point: usize, index: &[usize]) -> Option<&[f64]> {
        self.layout.position(index).map(|e| self.entry(point, e))
    }

    /// The order-`c`, multi-index `index` derivative as a standalone field.
    pub fn field(&self, index: &[usize]) -> Option<GridField> {
        let e = self.layout.position(index)?;
        let values = (0..self.points)
            .flat_map(|pt| self.entry(pt, e).iter().copied())
            .collect();
        Some(GridField::from_values(self.components, values))
    }

    /// The underlying order-0 field.
    pub fn base(&self) -> GridField {
        self.field(&vec![0; self.layout.dims()]).expect("order 0 present")
    }

    /// Largest absolute value over all order-`c` entries, components and points.
    pub fn order_sup(&self, c: usize) -> f64 {
        let range = self.layout.order_range(c);
        let mut sup: f64 = 0.0;
        for pt in 0..self.points {
            for e in range.clone() {
                for v in self.entry(pt, e) {
                    sup = sup.max(v.abs());
                }
            }
        }
        sup
    }
}
