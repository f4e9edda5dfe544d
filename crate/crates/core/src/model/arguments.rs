use crate::grid::StackLayout;

/// Operator inputs at one `(t, x)`: derivative stacks of `V` (`q` components
/// per entry) and of `V̄` (`q x d` per entry, row-major).
///
/// Entries follow `layout`, so every order `c` occupies the contiguous block
/// `layout.order_range(c)`.
#[derive(Debug, Clone, Copy)]
pub struct OperatorArguments<'a> {
    pub t: f64,
    pub x: &'a [f64],
    layout: &'a StackLayout,
    q: usize,
    d: usize,
    v: &'a [f64],
    vbar: &'a [f64],
}

impl<'a> OperatorArguments<'a> {
    pub fn new(
        t: f64,
        x: &'a [f64],
        layout: &'a StackLayout,
        q: usize,
        d: usize,
        v: &'a [f64],
        vbar: &'a [f64],
    ) -> Self {
        debug_assert_eq!(v.len() % q, 0);
        debug_assert_eq!(vbar.len() % (q * d), 0);
        debug_assert!(v.len() / q <= layout.len());
        debug_assert!(vbar.len() / (q * d) <= layout.len());
        Self {
            t,
            x,
            layout,
            q,
            d,
            v,
            vbar,
        }
    }

    pub fn layout(&self) -> &'a StackLayout {
        self.layout
    }

    pub fn components(&self) -> usize {
        self.q
    }

    pub fn noise_dims(&self) -> usize {
        self.d
    }

    /// Number of `V` entries present.
    pub fn v_entries(&self) -> usize {
        self.v.len() / self.q
    }

    pub fn vbar_entries(&self) -> usize {
        self.vbar.len() / (self.q * self.d)
    }

    pub fn v_values(&self) -> &'a [f64] {
        self.v
    }

    pub fn vbar_values(&self) -> &'a [f64] {
        self.vbar
    }

    /// `V` itself.
    pub fn value(&self) -> &'a [f64] {
        self.v_entry(0)
    }

    /// `V̄` itself, `q x d`.
    pub fn integrand(&self) -> &'a [f64] {
        self.vbar_entry(0)
    }

    pub fn v_entry(&self, entry: usize) -> &'a [f64] {
        &self.v[entry * self.q..(entry + 1) * self.q]
    }

    pub fn vbar_entry(&self, entry: usize) -> &'a [f64] {
        let w = self.q * self.d;
        &self.vbar[entry * w..(entry + 1) * w]
    }

    /// `V^{(c)}` for the multi-index `index`.
    ///
    /// # Panics
    /// If the index is not part of the supplied stack.
    pub fn v(&self, index: &[usize]) -> &'a [f64] {
        let e = self.entry_of(index);
        assert!(e < self.v_entries(), "V entry {index:?} not supplied");
        self.v_entry(e)
    }

    /// `V̄^{(c)}` for the multi-index `index`.
    ///
    /// # Panics
    /// If the index is not part of the supplied stack.
    pub fn vbar(&self, index: &[usize]) -> &'a [f64] {
        let e = self.entry_of(index);
        assert!(e < self.vbar_entries(), "V̄ entry {index:?} not supplied");
        self.vbar_entry(e)
    }

    /// Pure second derivative along `axis`.
    pub fn second(&self, axis: usize) -> &'a [f64] {
        let mut index = vec![0; self.layout.dims()];
        index[axis] = 2;
        self.v(&index)
    }

    fn entry_of(&self, index: &[usize]) -> usize {
        self.layout
            .position(index)
            .unwrap_or_else(|| panic!("multi-index {index:?} outside the stack layout"))
    }
}

/// Owned copy of an argument bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnedArguments {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub vbar: Vec<f64>,
}

impl OwnedArguments {
    pub fn from_borrowed(args: &OperatorArguments<'_>) -> Self {
        Self {
            t: args.t,
            x: args.x.to_vec(),
            v: args.v.to_vec(),
            vbar: args.vbar.to_vec(),
        }
    }

    pub fn view<'a>(&'a self, layout: &'a StackLayout, q: usize, d: usize) -> OperatorArguments<'a> {
        OperatorArguments::new(self.t, &self.x, layout, q, d, &self.v, &self.vbar)
    }
}
