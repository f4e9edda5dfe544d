use std::io::Write;

use super::{Algorithm, SolverError};
use crate::grid::{Partition, StackLayout};
use crate::stochastics::FitCoefficients;

/// All samples' derivative stacks of `V` and `V̄` at one grid time.
///
/// `v` is laid out `[sample][point][entry][component]` and `vbar`
/// `[sample][point][entry][component][noise]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSlice {
    pub index: usize,
    pub time: f64,
    pub samples: usize,
    pub points: usize,
    pub entries: usize,
    pub q: usize,
    pub d: usize,
    pub v: Vec<f64>,
    pub vbar: Vec<f64>,
    /// Fixed-point iterations used to reach this slice (implicit scheme).
    pub fp_iterations: Option<usize>,
    /// Fitted estimator coefficients for this step, when recorded.
    pub coefficients: Option<FitCoefficients>,
}

impl TimeSlice {
    pub(crate) fn zeros(index: usize, time: f64, samples: usize, points: usize, entries: usize, q: usize, d: usize) -> Self {
        Self {
            index,
            time,
            samples,
            points,
            entries,
            q,
            d,
            v: vec![0.0; samples * points * entries * q],
            vbar: vec![0.0; samples * points * entries * q * d],
            fp_iterations: None,
            coefficients: None,
        }
    }

    pub fn v(&self, sample: usize, point: usize, entry: usize) -> &[f64] {
        let start = ((sample * self.points + point) * self.entries + entry) * self.q;
        &self.v[start..start + self.q]
    }

    pub fn vbar(&self, sample: usize, point: usize, entry: usize) -> &[f64] {
        let w = self.q * self.d;
        let start = ((sample * self.points + point) * self.entries + entry) * w;
        &self.vbar[start..start + w]
    }

    /// One sample's `V` stacks, `[point][entry][component]`.
    pub fn sample_v(&self, sample: usize) -> &[f64] {
        let len = self.points * self.entries * self.q;
        &self.v[sample * len..(sample + 1) * len]
    }

    /// One sample's `V̄` stacks, `[point][entry][component][noise]`.
    pub fn sample_vbar(&self, sample: usize) -> &[f64] {
        let len = self.points * self.entries * self.q * self.d;
        &self.vbar[sample * len..(sample + 1) * len]
    }

    /// Largest cross-sample range `max - min` of any stored value.
    pub fn sample_spread(&self) -> f64 {
        spread(&self.v, self.samples).max(spread(&self.vbar, self.samples))
    }
}

fn spread(values: &[f64], samples: usize) -> f64 {
    if samples == 0 {
        return 0.0;
    }
    let len = values.len() / samples;
    (0..len)
        .map(|k| {
            let (lo, hi) = (0..samples).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                let v = values[s * len + k];
                (lo.min(v), hi.max(v))
            });
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Solution values at every grid time, indexed by time index `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionLattice {
    pub algorithm: Algorithm,
    pub partition: Partition,
    pub layout: StackLayout,
    pub q: usize,
    pub d: usize,
    pub samples: usize,
    slices: Vec<TimeSlice>,
}

impl SolutionLattice {
    /// Assemble from slices in any order; every index `0..=n0` must appear once.
    pub fn from_slices(
        algorithm: Algorithm,
        partition: Partition,
        layout: StackLayout,
        mut slices: Vec<TimeSlice>,
    ) -> Result<Self, SolverError> {
        slices.sort_by_key(|s| s.index);
        let n0 = partition.time_steps();
        if slices.len() != n0 + 1 || slices.iter().enumerate().any(|(j, s)| s.index != j) {
            return Err(SolverError::InvalidConfig(format!(
                "lattice needs one slice per time index 0..={n0}"
            )));
        }
        let first = &slices[0];
        Ok(Self {
            algorithm,
            q: first.q,
            d: first.d,
            samples: first.samples,
            partition,
            layout,
            slices,
        })
    }

    pub fn slices(&self) -> &[TimeSlice] {
        &self.slices
    }

    pub fn slice(&self, j: usize) -> &TimeSlice {
        &self.slices[j]
    }

    pub fn terminal_slice(&self) -> &TimeSlice {
        self.slices.last().expect("lattice is never empty")
    }

    pub fn time_steps(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn v(&self, sample: usize, j: usize, point: usize, entry: usize) -> &[f64] {
        self.slices[j].v(sample, point, entry)
    }

    pub fn vbar(&self, sample: usize, j: usize, point: usize, entry: usize) -> &[f64] {
        self.slices[j].vbar(sample, point, entry)
    }

    /// Index of the slice read at time `t` under the piecewise-constant
    /// extension: `t_j` for `t` in `[t_j, t_{j+1})`, and `t_{n0}` at `T`.
    pub fn slice_index_at(&self, t: f64) -> usize {
        let times = self.partition.times();
        match times.iter().rposition(|&tj| tj <= t) {
            Some(j) => j,
            None => 0,
        }
    }

    /// Largest cross-sample range over all slices.
    pub fn sample_spread(&self) -> f64 {
        self.slices.iter().map(TimeSlice::sample_spread).fold(0.0, f64::max)
    }

    /// Write `V` rows `sample, j, t, x1.., c, key, component, value` and the
    /// matching `V̄` rows with an extra `noise` column.
    pub fn write_csv<W1: Write, W2: Write>(&self, v_out: W1, vbar_out: W2) -> Result<(), SolverError> {
        let err = |e: csv::Error| SolverError::Output(e.to_string());
        let p = self.partition.dims();
        let xs: Vec<String> = (1..=p).map(|l| format!("x{l}")).collect();
        let mut vw = csv::Writer::from_writer(v_out);
        let mut bw = csv::Writer::from_writer(vbar_out);
        let mut head: Vec<String> = vec!["sample".into(), "j".into(), "t".into()];
        head.extend(xs.iter().cloned());
        head.extend(["c".into(), "key".into(), "component".into()]);
        let mut vhead = head.clone();
        vhead.push("value".into());
        vw.write_record(&vhead).map_err(err)?;
        let mut bhead = head;
        bhead.extend(["noise".into(), "value".into()]);
        bw.write_record(&bhead).map_err(err)?;

        let coords: Vec<Vec<String>> = (0..self.partition.point_count())
            .map(|pt| self.partition.coordinates(pt).iter().map(|x| x.to_string()).collect())
            .collect();
        for s in 0..self.samples {
            for slice in &self.slices {
                let t = slice.time.to_string();
                let j = slice.index.to_string();
                for (pt, xc) in coords.iter().enumerate() {
                    for e in 0..slice.entries {
                        let c = self.layout.order_of(e).to_string();
                        let key = self.layout.key(e).to_string();
                        let prefix = |row: &mut Vec<String>| {
                            row.push(s.to_string());
                            row.push(j.clone());
                            row.push(t.clone());
                            row.extend(xc.iter().cloned());
                            row.push(c.clone());
                            row.push(key.clone());
                        };
                        for (r, value) in slice.v(s, pt, e).iter().enumerate() {
                            let mut row = Vec::with_capacity(8 + p);
                            prefix(&mut row);
                            row.push(r.to_string());
                            row.push(format!("{value:e}"));
                            vw.write_record(&row).map_err(err)?;
                        }
                        for (ri, value) in slice.vbar(s, pt, e).iter().enumerate() {
                            let mut row = Vec::with_capacity(9 + p);
                            prefix(&mut row);
                            row.push((ri / self.d).to_string());
                            row.push((ri % self.d).to_string());
                            row.push(format!("{value:e}"));
                            bw.write_record(&row).map_err(err)?;
                        }
                    }
                }
            }
        }
        vw.flush().map_err(|e| SolverError::Output(e.to_string()))?;
        bw.flush().map_err(|e| SolverError::Output(e.to_string()))
    }
}
