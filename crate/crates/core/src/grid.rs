//! Uniform rectangular grids (1D and 2D), nodal density fields, and the
//! interpolation/sampling helpers built on top of them.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the trapezoidal mass of a [`DensityField`].
pub const MASS_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
            return Err(Error::InvalidArgument(format!(
                "axis bounds must satisfy lower < upper, got [{lower}, {upper}]"
            )));
        }
        if points < 2 {
            return Err(Error::InvalidArgument(format!(
                "an axis needs at least 2 points, got {points}"
            )));
        }
        Ok(Self { lower, upper, points })
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weights along this axis.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.points];
        w[0] = 0.5 * h;
        w[self.points - 1] = 0.5 * h;
        w
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Cubic Lagrange stencil at `x`: first node index, weights, and
    /// derivative weights. Requires at least 4 points.
    pub fn lagrange4(&self, x: f64) -> (usize, [f64; 4], [f64; 4]) {
        let h = self.spacing();
        let n = self.points;
        let s = (x - self.lower) / h;
        let base = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
        let t = s - base as f64;
        let (t0, t1, t2, t3) = (t, t - 1.0, t - 2.0, t - 3.0);
        let w = [
            -t1 * t2 * t3 / 6.0,
            t0 * t2 * t3 / 2.0,
            -t0 * t1 * t3 / 2.0,
            t0 * t1 * t2 / 6.0,
        ];
        let d = [
            -(t2 * t3 + t1 * t3 + t1 * t2) / (6.0 * h),
            (t2 * t3 + t0 * t3 + t0 * t2) / (2.0 * h),
            -(t1 * t3 + t0 * t3 + t0 * t1) / (2.0 * h),
            (t1 * t2 + t0 * t2 + t0 * t1) / (6.0 * h),
        ];
        (base, w, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Unsupported(format!(
                "grids are 1D or 2D, got dimension {}",
                axes.len()
            )));
        }
        Ok(Self { axes })
    }

    pub fn new_1d(lower: f64, upper: f64, points: usize) -> Result<Self> {
        Self::new(vec![Axis::new(lower, upper, points)?])
    }

    pub fn new_2d(x: (f64, f64, usize), y: (f64, f64, usize)) -> Result<Self> {
        Self::new(vec![Axis::new(x.0, x.1, x.2)?, Axis::new(y.0, y.1, y.2)?])
    }

    /// Square grid `[lower, upper]^dim` with `points` nodes per axis.
    pub fn cube(dim: usize, lower: f64, upper: f64, points: usize) -> Result<Self> {
        let axis = Axis::new(lower, upper, points)?;
        Self::new(vec![axis; dim])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    #[inline]
    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    #[inline]
    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self, k: usize) -> f64 {
        self.axes[k].spacing()
    }

    /// Smallest spacing over all axes.
    pub fn min_spacing(&self) -> f64 {
        self.axes
            .iter()
            .map(Axis::spacing)
            .fold(f64::INFINITY, f64::min)
    }

    /// Volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    /// Row-major flat index; the last axis varies fastest.
    #[inline]
    pub fn flat(&self, idx: &[usize]) -> usize {
        match self.axes.len() {
            1 => idx[0],
            _ => idx[0] * self.axes[1].points + idx[1],
        }
    }

    #[inline]
    pub fn multi(&self, flat: usize) -> [usize; 2] {
        match self.axes.len() {
            1 => [flat, 0],
            _ => [flat / self.axes[1].points, flat % self.axes[1].points],
        }
    }

    /// Coordinates of node `flat` written into `out` (length `dim`).
    #[inline]
    pub fn point_into(&self, flat: usize, out: &mut [f64]) {
        let m = self.multi(flat);
        for (k, axis) in self.axes.iter().enumerate() {
            out[k] = axis.node(m[k]);
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point_into(flat, &mut p);
        p
    }

    /// All node coordinates, flattened `len × dim`.
    pub fn points(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len() * d];
        for i in 0..self.len() {
            self.point_into(i, &mut out[i * d..(i + 1) * d]);
        }
        out
    }

    /// Tensor trapezoid weights, one per node.
    pub fn weights(&self) -> Vec<f64> {
        let w: Vec<Vec<f64>> = self.axes.iter().map(Axis::weights).collect();
        (0..self.len())
            .map(|i| {
                let m = self.multi(i);
                w.iter().enumerate().map(|(k, wk)| wk[m[k]]).product()
            })
            .collect()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        self.weights().iter().zip(values).map(|(w, v)| w * v).sum()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.axes.iter().zip(x).all(|(a, &xi)| a.contains(xi))
    }

    /// Index of the node nearest to `x` (clamped to the domain).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut idx = [0usize; 2];
        for (k, axis) in self.axes.iter().enumerate() {
            let s = ((x[k] - axis.lower) / axis.spacing()).round();
            idx[k] = s.clamp(0.0, (axis.points - 1) as f64) as usize;
        }
        self.flat(&idx[..self.dim()])
    }

    /// Evaluate a tensor cubic Lagrange interpolant of nodal `values` at `x`,
    /// also writing the gradient into `grad` when provided.
    pub fn interpolate(&self, values: &[f64], x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        match self.dim() {
            1 => {
                let (b, w, d) = self.axes[0].lagrange4(x[0]);
                let v = &values[b..b + 4];
                if let Some(g) = grad {
                    g[0] = d[0] * v[0] + d[1] * v[1] + d[2] * v[2] + d[3] * v[3];
                }
                w[0] * v[0] + w[1] * v[1] + w[2] * v[2] + w[3] * v[3]
            }
            _ => {
                let (bx, wx, dx) = self.axes[0].lagrange4(x[0]);
                let (by, wy, dy) = self.axes[1].lagrange4(x[1]);
                let ny = self.axes[1].points;
                let (mut f, mut gx, mut gy) = (0.0, 0.0, 0.0);
                for a in 0..4 {
                    let row = (bx + a) * ny + by;
                    let mut r = 0.0;
                    let mut rd = 0.0;
                    for c in 0..4 {
                        r += wy[c] * values[row + c];
                        rd += dy[c] * values[row + c];
                    }
                    f += wx[a] * r;
                    gx += dx[a] * r;
                    gy += wx[a] * rd;
                }
                if let Some(g) = grad {
                    g[0] = gx;
                    g[1] = gy;
                }
                f
            }
        }
    }
}

/// Probability density sampled at grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub time: f64,
}

impl DensityField {
    /// Wrap nodal values that already carry unit trapezoidal mass.
    pub fn new(grid: Grid, values: Vec<f64>, time: f64) -> Result<Self> {
        let field = Self::unchecked(grid, values, time)?;
        let mass = field.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "density has trapezoidal mass {mass}, expected 1 ± {MASS_TOLERANCE}"
            )));
        }
        Ok(field)
    }

    /// Wrap nodal values and rescale them to unit trapezoidal mass.
    pub fn normalized(grid: Grid, values: Vec<f64>, time: f64) -> Result<Self> {
        let mut field = Self::unchecked(grid, values, time)?;
        let mass = field.mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize a density of mass {mass}"
            )));
        }
        field.values.iter_mut().for_each(|v| *v /= mass);
        Ok(field)
    }

    /// Density of `f` evaluated at the nodes, normalized.
    pub fn from_fn(grid: Grid, time: f64, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut p = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|i| {
                grid.point_into(i, &mut p);
                f(&p)
            })
            .collect();
        Self::normalized(grid, values, time)
    }

    fn unchecked(grid: Grid, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "density values must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self { grid, values, time })
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Default floor for log/ratio operations.
    pub fn default_floor(&self) -> f64 {
        1e-12 * self.max()
    }

    pub fn l1_distance(&self, other: &[f64]) -> f64 {
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .collect();
        self.grid.integrate(&diff)
    }

    /// Logarithm of the floored nodal values.
    pub fn log_values(&self, floor: f64) -> Vec<f64> {
        self.values.iter().map(|v| v.max(floor).ln()).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.grid.dim();
        writeln!(w, "{}", if d == 1 { "x,rho" } else { "x,y,rho" })?;
        let mut p = vec![0.0; d];
        for (i, v) in self.values.iter().enumerate() {
            self.grid.point_into(i, &mut p);
            for c in &p {
                write!(w, "{},", fmt17(*c))?;
            }
            writeln!(w, "{}", fmt17(*v))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Parse the CSV layout produced by [`DensityField::write_csv`]. The
    /// result is normalized when its mass is within tolerance of one.
    pub fn read_csv<R: BufRead>(r: R, time: f64) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty density file".into()))??;
        let dim = match header.trim() {
            "x,rho" => 1,
            "x,y,rho" => 2,
            other => return Err(Error::Parse(format!("unexpected header `{other}`"))),
        };
        let mut coords: Vec<Vec<f64>> = vec![Vec::new(); dim];
        let mut values = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Parse(format!("row {}: expected {} fields", n + 2, dim + 1)));
            }
            let parsed: Vec<f64> = fields
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {}: {e}", n + 2)))
                })
                .collect::<Result<_>>()?;
            for k in 0..dim {
                coords[k].push(parsed[k]);
            }
            values.push(parsed[dim]);
        }
        let mut axes = Vec::new();
        for c in &coords {
            let mut u = c.clone();
            u.sort_by(f64::total_cmp);
            u.dedup();
            if u.len() < 2 {
                return Err(Error::Parse("grid needs at least 2 nodes per axis".into()));
            }
            axes.push(Axis::new(u[0], u[u.len() - 1], u.len())?);
        }
        let grid = Grid::new(axes)?;
        if grid.len() != values.len() {
            return Err(Error::Parse("rows do not form a rectangular grid".into()));
        }
        let mut p = vec![0.0; dim];
        for i in 0..values.len() {
            grid.point_into(i, &mut p);
            for k in 0..dim {
                let h = grid.spacing(k);
                if (coords[k][i] - p[k]).abs() > 1e-9 * h.max(p[k].abs()) {
                    return Err(Error::Parse(format!(
                        "row {} is not in row-major uniform grid order",
                        i + 2
                    )));
                }
            }
        }
        Self::unchecked(grid, values, time)
    }

    pub fn load_csv(path: impl AsRef<Path>, time: f64) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f), time)
    }

    /// Draw one point from the piecewise-linear (1D) or bilinear (2D)
    /// interpolant of the nodal values.
    pub fn sampler(&self) -> Result<GridSampler> {
        GridSampler::new(self)
    }
}

/// 17-significant-digit decimal, enough to round-trip any `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Inverse-CDF sampler over grid cells.
#[derive(Debug, Clone)]
pub struct GridSampler {
    grid: Grid,
    values: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridSampler {
    fn new(field: &DensityField) -> Result<Self> {
        let grid = field.grid.clone();
        let cells = cell_count(&grid);
        let mut cdf = Vec::with_capacity(cells);
        let mut acc = 0.0;
        for c in 0..cells {
            acc += cell_mean(&grid, &field.values, c);
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::InvalidArgument("cannot sample a zero density".into()));
        }
        cdf.iter_mut().for_each(|v| *v /= acc);
        Ok(Self {
            grid,
            values: field.values.clone(),
            cdf,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let u: f64 = rng.gen();
        let c = self.cdf.partition_point(|&p| p < u).min(self.cdf.len() - 1);
        match self.grid.dim() {
            1 => {
                let a = self.grid.axis(0);
                let (f0, f1) = (self.values[c], self.values[c + 1]);
                let v: f64 = rng.gen();
                // invert the CDF of a linear density on [0, 1]
                let t = if (f1 - f0).abs() < 1e-12 * (f0 + f1) {
                    v
                } else {
                    let disc = f0 * f0 + v * (f1 * f1 - f0 * f0);
                    (disc.max(0.0).sqrt() - f0) / (f1 - f0)
                };
                out[0] = a.node(c) + t.clamp(0.0, 1.0) * a.spacing();
            }
            _ => {
                let (ax, ay) = (self.grid.axis(0), self.grid.axis(1));
                let ny = ay.points;
                let (i, j) = (c / (ny - 1), c % (ny - 1));
                let f = [
                    self.values[i * ny + j],
                    self.values[i * ny + j + 1],
                    self.values[(i + 1) * ny + j],
                    self.values[(i + 1) * ny + j + 1],
                ];
                let fmax = f.iter().cloned().fold(0.0, f64::max);
                loop {
                    let (s, t): (f64, f64) = (rng.gen(), rng.gen());
                    let val = f[0] * (1.0 - s) * (1.0 - t)
                        + f[1] * (1.0 - s) * t
                        + f[2] * s * (1.0 - t)
                        + f[3] * s * t;
                    if rng.gen::<f64>() * fmax <= val {
                        out[0] = ax.node(i) + s * ax.spacing();
                        out[1] = ay.node(j) + t * ay.spacing();
                        break;
                    }
                }
            }
        }
    }
}

fn cell_count(grid: &Grid) -> usize {
    grid.axes().iter().map(|a| a.points - 1).product()
}

fn cell_mean(grid: &Grid, values: &[f64], c: usize) -> f64 {
    match grid.dim() {
        1 => 0.5 * (values[c] + values[c + 1]),
        _ => {
            let ny = grid.axis(1).points;
            let (i, j) = (c / (ny - 1), c % (ny - 1));
            0.25 * (values[i * ny + j]
                + values[i * ny + j + 1]
                + values[(i + 1) * ny + j]
                + values[(i + 1) * ny + j + 1])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nodes_are_uniform() {
        let g = Grid::new_1d(-8.0, 8.0, 641).unwrap();
        assert_eq!(g.spacing(0), 0.025);
        assert_eq!(g.point(0)[0], -8.0);
        assert_eq!(g.point(320)[0], -8.0 + 320.0 * 0.025);
        assert!(Axis::new(1.0, 1.0, 5).is_err());
        assert!(Axis::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let g = Grid::new_2d((0.0, 2.0, 11), (-1.0, 3.0, 21)).unwrap();
        let v: Vec<f64> = (0..g.len())
            .map(|i| {
                let p = g.point(i);
                1.0 + 2.0 * p[0] + 3.0 * p[1] + p[0] * p[1]
            })
            .collect();
        // integral over [0,2]x[-1,3]
        let exact = 8.0 + 2.0 * 8.0 + 3.0 * 8.0 + 2.0 * 4.0;
        assert!((g.integrate(&v) - exact).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = Grid::new_2d((-1.0, 1.0, 7), (0.0, 3.0, 5)).unwrap();
        let f = DensityField::from_fn(g, 0.0, |p| (-(p[0] * p[0]) - 0.3 * p[1]).exp()).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = DensityField::read_csv(&buf[..], 0.0).unwrap();
        assert_eq!(back.values, f.values);
        assert_eq!(back.grid.len(), f.grid.len());
        assert!(String::from_utf8(buf).unwrap().starts_with("x,y,rho\n"));
    }

    #[test]
    fn cubic_interpolation_reproduces_cubics() {
        let g = Grid::new_2d((-2.0, 2.0, 9), (-1.0, 1.0, 7)).unwrap();
        let f = |x: f64, y: f64| x * x * x - 2.0 * x * y + y * y - 0.5;
        let vals: Vec<f64> = (0..g.len())
            .map(|i| {
                let p = g.point(i);
                f(p[0], p[1])
            })
            .collect();
        for &(x, y) in &[(0.13, -0.77), (-1.99, 0.99), (1.7, 0.2)] {
            let mut grad = [0.0; 2];
            let v = g.interpolate(&vals, &[x, y], Some(&mut grad));
            assert!((v - f(x, y)).abs() < 1e-12);
            assert!((grad[0] - (3.0 * x * x - 2.0 * y)).abs() < 1e-11);
            assert!((grad[1] - (-2.0 * x + 2.0 * y)).abs() < 1e-11);
        }
    }

    #[test]
    fn sampler_matches_mean_and_variance() {
        let g = Grid::new_1d(-8.0, 8.0, 321).unwrap();
        let f = DensityField::from_fn(g, 0.0, |p| (-(p[0] - 1.0).powi(2) / 2.0).exp()).unwrap();
        let s = f.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let mut x = [0.0];
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            s.sample(&mut rng, &mut x);
            m1 += x[0];
            m2 += x[0] * x[0];
        }
        let mean = m1 / n as f64;
        let var = m2 / n as f64 - mean * mean;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn mass_tolerance_is_enforced() {
        let g = Grid::new_1d(0.0, 1.0, 11).unwrap();
        assert!(DensityField::new(g.clone(), vec![1.0; 11], 0.0).is_ok());
        assert!(DensityField::new(g.clone(), vec![1.01; 11], 0.0).is_err());
        assert!(DensityField::new(g, vec![-1.0; 11], 0.0).is_err());
    }
}
