use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::Vector;

/// Uniform tensor grid on `[-half_width, half_width]^D`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    pub half_width: f64,
    pub nodes_per_axis: usize,
}

#[allow(clippy::len_without_is_empty)]
impl SpaceGrid {
    pub fn new(half_width: f64, nodes_per_axis: usize) -> Result<Self> {
        if !(half_width > 0.0) || nodes_per_axis < 2 {
            return domain(format!("grid needs L > 0 and at least 2 nodes, got {half_width}, {nodes_per_axis}"));
        }
        Ok(Self { half_width, nodes_per_axis })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.nodes_per_axis - 1) as f64
    }

    pub fn axis(&self) -> Vec<f64> {
        (0..self.nodes_per_axis).map(|i| self.coordinate(i)).collect()
    }

    #[inline]
    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_width + self.spacing() * i as f64
    }

    pub fn len<const D: usize>(&self) -> usize {
        self.nodes_per_axis.pow(D as u32)
    }

    pub fn node<const D: usize>(&self, mut flat: usize) -> Vector<D> {
        let n = self.nodes_per_axis;
        Vector::<D>::from_fn(|_, _| {
            let i = flat % n;
            flat /= n;
            self.coordinate(i)
        })
    }

    pub fn contains<const D: usize>(&self, x: &Vector<D>) -> bool {
        x.iter().all(|c| c.abs() <= self.half_width)
    }

    /// Cell index and local coordinate per axis. Outside the box the edge
    /// cell is used with a local coordinate outside `[0, 1]`.
    #[inline]
    fn locate(&self, c: f64) -> (usize, f64) {
        let h = self.spacing();
        let s = (c + self.half_width) / h;
        let i = (s.floor().max(0.0) as usize).min(self.nodes_per_axis - 2);
        (i, s - i as f64)
    }

    /// Multilinear interpolation of the node values `values`, extended
    /// linearly beyond the box.
    pub fn interpolate<const D: usize>(&self, values: &[f64], x: &Vector<D>) -> f64 {
        let n = self.nodes_per_axis;
        let mut cells = [(0usize, 0.0f64); D];
        for (k, cell) in cells.iter_mut().enumerate() {
            *cell = self.locate(x[k]);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << D) {
            let mut w = 1.0;
            let mut flat = 0;
            let mut stride = 1;
            for (k, (i, f)) in cells.iter().enumerate() {
                let up = corner >> k & 1 == 1;
                w *= if up { *f } else { 1.0 - f };
                flat += (i + up as usize) * stride;
                stride *= n;
            }
            acc += w * values[flat];
        }
        acc
    }

    /// Gradient of the interpolant inside the cell containing `x`.
    pub fn gradient<const D: usize>(&self, values: &[f64], x: &Vector<D>) -> Vector<D> {
        let n = self.nodes_per_axis;
        let h = self.spacing();
        let mut cells = [(0usize, 0.0f64); D];
        for (k, cell) in cells.iter_mut().enumerate() {
            *cell = self.locate(x[k]);
        }
        let mut g = Vector::<D>::zeros();
        for corner in 0..(1usize << D) {
            let mut flat = 0;
            let mut stride = 1;
            let mut weights = [0.0; D];
            for (k, (i, f)) in cells.iter().enumerate() {
                let up = corner >> k & 1 == 1;
                weights[k] = if up { *f } else { 1.0 - f };
                flat += (i + up as usize) * stride;
                stride *= n;
            }
            for d in 0..D {
                let mut w = if corner >> d & 1 == 1 { 1.0 / h } else { -1.0 / h };
                for (k, wk) in weights.iter().enumerate() {
                    if k != d {
                        w *= wk;
                    }
                }
                g[d] += w * values[flat];
            }
        }
        g
    }
}

/// `v(s_j, x_g)` on decreasing slices `T = s_0 > ... > s_M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction<const D: usize> {
    pub times: Vec<f64>,
    pub grid: SpaceGrid,
    pub values: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    times: Vec<f64>,
    grid: SpaceGrid,
}

impl<const D: usize> ValueFunction<D> {
    pub fn from_fn<F: Fn(f64, &Vector<D>) -> f64>(times: Vec<f64>, grid: SpaceGrid, f: F) -> Result<Self> {
        if times.is_empty() || times.windows(2).any(|w| !(w[0] > w[1])) {
            return domain("slice times must be strictly decreasing");
        }
        let values = times
            .iter()
            .map(|s| (0..grid.len::<D>()).map(|g| f(*s, &grid.node::<D>(g))).collect())
            .collect();
        Ok(Self { times, grid, values })
    }

    pub fn zeros(times: Vec<f64>, grid: SpaceGrid) -> Result<Self> {
        Self::from_fn(times, grid, |_, _| 0.0)
    }

    pub fn horizon(&self) -> f64 {
        self.times[0]
    }

    pub fn t_min(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn slice(&self, j: usize, x: &Vector<D>) -> f64 {
        self.grid.interpolate(&self.values[j], x)
    }

    pub fn slice_gradient(&self, j: usize, x: &Vector<D>) -> Vector<D> {
        self.grid.gradient(&self.values[j], x)
    }

    /// Bracketing slices `(j, j + 1)` and the weight of slice `j`.
    fn bracket(&self, s: f64) -> Result<(usize, usize, f64)> {
        let tol = 1e-12 * (1.0 + self.horizon().abs());
        if s > self.horizon() + tol || s < self.t_min() - tol {
            return Err(Error::Interpolation { time: s, lo: self.t_min(), hi: self.horizon() });
        }
        if self.times.len() == 1 {
            return Ok((0, 0, 1.0));
        }
        let j = self.times.partition_point(|t| *t > s).saturating_sub(1).min(self.times.len() - 2);
        let w = ((s - self.times[j + 1]) / (self.times[j] - self.times[j + 1])).clamp(0.0, 1.0);
        Ok((j, j + 1, w))
    }

    pub fn eval(&self, s: f64, x: &Vector<D>) -> Result<f64> {
        let (j, k, w) = self.bracket(s)?;
        Ok(w * self.slice(j, x) + (1.0 - w) * self.slice(k, x))
    }

    pub fn gradient(&self, s: f64, x: &Vector<D>) -> Result<Vector<D>> {
        let (j, k, w) = self.bracket(s)?;
        Ok(self.slice_gradient(j, x) * w + self.slice_gradient(k, x) * (1.0 - w))
    }

    /// Index of the slice at time `s`, if there is one.
    pub fn slice_index(&self, s: f64) -> Option<usize> {
        self.times.iter().position(|t| (t - s).abs() <= 1e-12 * (1.0 + s.abs()))
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// One JSON header line, then CSV rows `slice,node,value` at 17
    /// significant digits.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header { dim: D, times: self.times.clone(), grid: self.grid };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slice", "node", "value"])?;
        for (j, row) in self.values.iter().enumerate() {
            for (g, v) in row.iter().enumerate() {
                w.write_record([j.to_string(), g.to_string(), format!("{v:.16e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = String::new();
        input.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim())?;
        if header.dim != D {
            return Err(Error::Format(format!("value function of dimension {} read as {D}", header.dim)));
        }
        let mut vf = Self::zeros(header.times, header.grid)?;
        let mut seen = 0;
        for rec in csv::Reader::from_reader(input).records() {
            let rec = rec?;
            let parse = |i: usize| rec.get(i).ok_or_else(|| Error::Format("short value row".into()));
            let j: usize = parse(0)?.parse().map_err(|e| Error::Format(format!("{e}")))?;
            let g: usize = parse(1)?.parse().map_err(|e| Error::Format(format!("{e}")))?;
            let v: f64 = parse(2)?.parse().map_err(|e| Error::Format(format!("{e}")))?;
            *vf.values
                .get_mut(j)
                .and_then(|r| r.get_mut(g))
                .ok_or_else(|| Error::Format(format!("cell ({j}, {g}) out of range")))? = v;
            seen += 1;
        }
        if seen != vf.times.len() * vf.grid.len::<D>() {
            return Err(Error::Format(format!("expected {} values, read {seen}", vf.times.len() * vf.grid.len::<D>())));
        }
        Ok(vf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vf2() -> ValueFunction<2> {
        let grid = SpaceGrid::new(2.0, 9).unwrap();
        ValueFunction::from_fn(vec![1.0, 0.5, 0.0], grid, |s, x| s + x[0] * x[1] + (3.0 * x[0]).sin()).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let v = vf2();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        let back = ValueFunction::<2>::read(buf.as_slice()).unwrap();
        assert_eq!(back, v);
        assert!(ValueFunction::<1>::read(buf.as_slice()).is_err());
    }

    #[test]
    fn nodes_are_reproduced_and_time_is_linear() {
        let v = vf2();
        for g in 0..v.grid.len::<2>() {
            let x = v.grid.node::<2>(g);
            assert_eq!(v.slice(1, &x), v.values[1][g]);
            let mid = v.eval(0.75, &x).unwrap();
            assert!((mid - 0.5 * (v.values[0][g] + v.values[1][g])).abs() < 1e-14);
        }
        assert!(v.eval(1.5, &Vector::<2>::zeros()).is_err());
    }

    #[test]
    fn affine_functions_are_exact_everywhere() {
        let grid = SpaceGrid::new(1.0, 5).unwrap();
        let v = ValueFunction::<2>::from_fn(vec![0.0], grid, |_, x| 1.0 + 2.0 * x[0] - 3.0 * x[1]).unwrap();
        for x in [Vector::<2>::new(0.13, -0.77), Vector::<2>::new(3.0, -2.5)] {
            assert!((v.slice(0, &x) - (1.0 + 2.0 * x[0] - 3.0 * x[1])).abs() < 1e-12);
            let g = v.slice_gradient(0, &x);
            assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] + 3.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn interpolant_lies_between_cell_corners(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let v = vf2();
            let p = Vector::<2>::new(x, y);
            let val = v.slice(2, &p);
            let (lo, hi) = v.values[2].iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
            prop_assert!(val >= lo - 1e-12 && val <= hi + 1e-12);
            let eps = 1e-7;
            let fd = (v.slice(2, &Vector::<2>::new(x + eps, y)) - v.slice(2, &Vector::<2>::new(x - eps, y))) / (2.0 * eps);
            let g = v.slice_gradient(2, &p);
            // kinks between cells: compare only away from cell faces
            let h = v.grid.spacing();
            let s = (x + 2.0) / h;
            if (s - s.round()).abs() > 1e-4 {
                prop_assert!((fd - g[0]).abs() < 1e-5);
            }
        }
    }
}
