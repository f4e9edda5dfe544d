use super::GridError;

/// Largest supported number of spatial dimensions.
pub const MAX_SPATIAL_DIMS: usize = 3;

/// Joint time/space partition of `[0, T] x [0, b_1] x ... x [0, b_p]`.
///
/// Spatial points are stored in a flat order with the first axis varying
/// fastest, so point `i` has lattice coordinate `(i / stride_l) % (n_l + 1)`
/// along axis `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    times: Vec<f64>,
    edges: Vec<f64>,
    counts: Vec<usize>,
    spacings: Vec<f64>,
    strides: Vec<usize>,
    point_count: usize,
}

impl Partition {
    /// Uniform time grid `t_j = j T / n0` with a uniform spatial lattice.
    pub fn uniform(
        terminal_time: f64,
        time_steps: usize,
        edges: &[f64],
        counts: &[usize],
    ) -> Result<Self, GridError> {
        if !(terminal_time > 0.0 && terminal_time.is_finite()) {
            return Err(GridError::InvalidDomain(format!(
                "terminal time must be positive, got {terminal_time}"
            )));
        }
        if time_steps == 0 {
            return Err(GridError::InvalidPartition(
                "number of time steps must be at least 1".into(),
            ));
        }
        let n0 = time_steps as f64;
        let mut times: Vec<f64> = (0..=time_steps)
            .map(|j| j as f64 * terminal_time / n0)
            .collect();
        times[time_steps] = terminal_time;
        Self::with_times(times, edges, counts)
    }

    /// Partition with a user-supplied time grid `0 = t_0 < ... < t_{n0} = T`.
    pub fn with_times(times: Vec<f64>, edges: &[f64], counts: &[usize]) -> Result<Self, GridError> {
        if times.len() < 2 {
            return Err(GridError::InvalidPartition(
                "time grid needs at least two points".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(GridError::InvalidPartition(format!(
                "time grid must start at 0, got {}",
                times[0]
            )));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GridError::InvalidPartition(
                "time grid must be finite and strictly increasing".into(),
            ));
        }
        if edges.len() != counts.len() {
            return Err(GridError::InvalidPartition(format!(
                "{} edge lengths but {} point counts",
                edges.len(),
                counts.len()
            )));
        }
        if edges.is_empty() || edges.len() > MAX_SPATIAL_DIMS {
            return Err(GridError::InvalidPartition(format!(
                "spatial dimension must be in 1..={MAX_SPATIAL_DIMS}, got {}",
                edges.len()
            )));
        }
        if let Some(b) = edges.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(GridError::InvalidDomain(format!(
                "edge lengths must be positive, got {b}"
            )));
        }
        if counts.contains(&0) {
            return Err(GridError::InvalidPartition(
                "every spatial count must be at least 1".into(),
            ));
        }

        let spacings = edges
            .iter()
            .zip(counts)
            .map(|(b, n)| b / *n as f64)
            .collect();
        let mut strides = Vec::with_capacity(counts.len());
        let mut stride = 1;
        for n in counts {
            strides.push(stride);
            stride *= n + 1;
        }
        Ok(Self {
            times,
            edges: edges.to_vec(),
            counts: counts.to_vec(),
            spacings,
            strides,
            point_count: stride,
        })
    }

    pub fn terminal_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Number of time steps `n0`.
    pub fn time_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, j: usize) -> f64 {
        self.times[j]
    }

    /// Length of the `j`-th time step `t_j - t_{j-1}` for `j >= 1`.
    pub fn step(&self, j: usize) -> f64 {
        self.times[j] - self.times[j - 1]
    }

    /// Spatial dimension `p`.
    pub fn dims(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacings(&self) -> &[f64] {
        &self.spacings
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacings[axis]
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Mesh size: the largest time increment or spatial spacing.
    pub fn mesh_size(&self) -> f64 {
        let dt = (1..self.times.len())
            .map(|j| self.step(j))
            .fold(0.0, f64::max);
        self.spacings.iter().copied().fold(dt, f64::max)
    }

    /// Number of lattice points `prod(n_l + 1)`.
    pub fn point_count(&self) -> usize {
        self.point_count
    }

    /// Lattice coordinate of `point` along `axis`.
    pub fn lattice_coordinate(&self, point: usize, axis: usize) -> usize {
        (point / self.strides[axis]) % (self.counts[axis] + 1)
    }

    pub fn coordinates_into(&self, point: usize, out: &mut [f64]) {
        for (axis, slot) in out.iter_mut().enumerate().take(self.dims()) {
            *slot = self.lattice_coordinate(point, axis) as f64 * self.spacings[axis];
        }
        // the far edge is stored exactly
        for (axis, slot) in out.iter_mut().enumerate().take(self.dims()) {
            if self.lattice_coordinate(point, axis) == self.counts[axis] {
                *slot = self.edges[axis];
            }
        }
    }

    pub fn coordinates(&self, point: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dims()];
        self.coordinates_into(point, &mut out);
        out
    }

    /// All lattice points in storage order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.point_count).map(|i| self.coordinates(i)).collect()
    }

    /// Largest `n_l`; derivative orders must stay below twice this value.
    pub fn max_count(&self) -> usize {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Refine time and every spatial axis by the same integer factor.
    pub fn refine(&self, factor: usize) -> Result<Self, GridError> {
        if factor == 0 {
            return Err(GridError::InvalidPartition(
                "refinement factor must be at least 1".into(),
            ));
        }
        let mut times = Vec::with_capacity(self.time_steps() * factor + 1);
        for j in 1..self.times.len() {
            let (a, b) = (self.times[j - 1], self.times[j]);
            for r in 0..factor {
                times.push(a + (b - a) * r as f64 / factor as f64);
            }
        }
        times.push(self.terminal_time());
        let counts: Vec<usize> = self.counts.iter().map(|n| n * factor).collect();
        Self::with_times(times, &self.edges, &counts)
    }

    /// `max_{x in D} (|x_1| + ... + |x_p|)` for the rectangle `[0, b]`.
    pub fn l1_radius(&self) -> f64 {
        self.edges.iter().sum()
    }

    /// True when every time point of `coarse` is a time point of `self`.
    pub fn time_ratio_to(&self, coarse: &Partition) -> Option<usize> {
        let (nf, nc) = (self.time_steps(), coarse.time_steps());
        if nf % nc != 0 || self.terminal_time() != coarse.terminal_time() {
            return None;
        }
        let r = nf / nc;
        let tol = 1e-12 * self.terminal_time();
        (0..=nc)
            .all(|j| (self.time(j * r) - coarse.time(j)).abs() <= tol)
            .then_some(r)
    }
}

/// Free-function form of [`Partition::uniform`].
pub fn build_partition(
    terminal_time: f64,
    time_steps: usize,
    edges: &[f64],
    counts: &[usize],
) -> Result<Partition, GridError> {
    Partition::uniform(terminal_time, time_steps, edges, counts)
}
