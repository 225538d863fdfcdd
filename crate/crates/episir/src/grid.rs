//! State-space grids: uniform susceptible axis, shifted-exponential prevalence
//! axis, optional uniform belief axis, and interpolation of node fields.

use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Grid configuration. `n_mu = 0` disables the belief dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n_s: usize,
    pub s_lo: f64,
    pub s_hi: f64,
    pub n_i: usize,
    pub i_lo: f64,
    pub i_hi: f64,
    pub i_median: f64,
    pub n_mu: usize,
}

impl GridSpec {
    /// 100-point uniform susceptible grid and 400-point exponential prevalence
    /// grid on [1e-8, 1] with median 1e-4.
    pub fn benchmark() -> Self {
        GridSpec {
            n_s: 100,
            s_lo: 1e-8,
            s_hi: 1.0,
            n_i: 400,
            i_lo: 1e-8,
            i_hi: 1.0,
            i_median: 1e-4,
            n_mu: 0,
        }
    }

    pub fn with_mu(mut self, n_mu: usize) -> Self {
        self.n_mu = n_mu;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidGrid(m));
        if self.n_s < 2 {
            return err("susceptible grid needs at least 2 nodes".into());
        }
        if self.n_i < 3 {
            return err("prevalence grid needs at least 3 nodes".into());
        }
        if !(self.s_lo < self.s_hi) {
            return err("susceptible bounds must be ordered".into());
        }
        if !(self.i_lo < self.i_hi) {
            return err("prevalence bounds must be ordered".into());
        }
        if !(self.i_median > self.i_lo) {
            return err(format!(
                "prevalence median {} must exceed the lower bound {}",
                self.i_median, self.i_lo
            ));
        }
        if !(self.i_median < 0.5 * (self.i_lo + self.i_hi)) {
            return err(format!(
                "prevalence median {} must lie below the arithmetic midpoint {}",
                self.i_median,
                0.5 * (self.i_lo + self.i_hi)
            ));
        }
        if self.n_mu == 1 {
            return err("belief grid needs at least 2 nodes when enabled".into());
        }
        Ok(())
    }

    pub fn hash(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.n_s.hash(&mut h);
        self.n_i.hash(&mut h);
        self.n_mu.hash(&mut h);
        for v in [self.s_lo, self.s_hi, self.i_lo, self.i_hi, self.i_median] {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Evenly spaced nodes inclusive of both endpoints.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(lo < hi) {
        return Err(Error::InvalidGrid(format!(
            "uniform grid needs ordered bounds and n >= 2, got [{lo}, {hi}] n={n}"
        )));
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|k| lo + step * k as f64).collect();
    v[0] = lo;
    v[n - 1] = hi;
    Ok(v)
}

/// Exponentially spaced nodes on [a, b] whose median matches c: evenly spaced
/// in log(x + s) with shift s = (c^2 - ab) / (a + b - 2c). Requires
/// a < c < (a+b)/2 so that the shift is finite and a + s > 0.
pub fn exponential_grid(a: f64, b: f64, c: f64, n: usize) -> Result<Vec<f64>> {
    if n < 3 {
        return Err(Error::InvalidGrid(format!(
            "exponential grid needs n >= 3, got {n}"
        )));
    }
    if !(a < c) {
        return Err(Error::InvalidGrid(format!(
            "exponential grid median {c} must exceed the lower bound {a}"
        )));
    }
    if !(c < 0.5 * (a + b)) {
        return Err(Error::InvalidGrid(format!(
            "exponential grid median {c} must lie below the arithmetic midpoint {}",
            0.5 * (a + b)
        )));
    }
    let s = (c * c - a * b) / (a + b - 2.0 * c);
    let (la, lb) = ((a + s).ln(), (b + s).ln());
    let step = (lb - la) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n)
        .map(|k| (la + step * k as f64).exp() - s)
        .collect();
    v[0] = a;
    v[n - 1] = b;
    for w in v.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidGrid(
                "exponential grid nodes failed to be strictly increasing".into(),
            ));
        }
    }
    Ok(v)
}

/// Constructed product grid with precomputed steps and log coordinates.
#[derive(Debug, Clone)]
pub struct StateGrid {
    pub spec: GridSpec,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub mu: Vec<f64>,
    pub delta_s: f64,
    /// Backward prevalence step; zero at the lowest node.
    pub d_i_minus: Vec<f64>,
    /// Forward prevalence step; zero at the highest node.
    pub d_i_plus: Vec<f64>,
    pub delta_mu: f64,
    /// Shift of the exponential prevalence grid.
    pub shift: f64,
    log_i: Vec<f64>,
}

impl StateGrid {
    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let s = uniform_grid(spec.s_lo, spec.s_hi, spec.n_s)?;
        let i = exponential_grid(spec.i_lo, spec.i_hi, spec.i_median, spec.n_i)?;
        let shift = (spec.i_median * spec.i_median - spec.i_lo * spec.i_hi)
            / (spec.i_lo + spec.i_hi - 2.0 * spec.i_median);
        let delta_s = (spec.s_hi - spec.s_lo) / (spec.n_s - 1) as f64;
        let mut d_i_minus = vec![0.0; spec.n_i];
        let mut d_i_plus = vec![0.0; spec.n_i];
        for k in 1..spec.n_i {
            d_i_minus[k] = i[k] - i[k - 1];
            d_i_plus[k - 1] = i[k] - i[k - 1];
        }
        let (mu, delta_mu) = if spec.n_mu >= 2 {
            (
                uniform_grid(0.0, 1.0, spec.n_mu)?,
                1.0 / (spec.n_mu - 1) as f64,
            )
        } else {
            (Vec::new(), 0.0)
        };
        let log_i = i.iter().map(|&x| (x + shift).ln()).collect();
        Ok(StateGrid {
            spec: *spec,
            s,
            i,
            mu,
            delta_s,
            d_i_minus,
            d_i_plus,
            delta_mu,
            shift,
            log_i,
        })
    }

    pub fn n_s(&self) -> usize {
        self.spec.n_s
    }

    pub fn n_i(&self) -> usize {
        self.spec.n_i
    }

    pub fn n_mu(&self) -> usize {
        self.spec.n_mu
    }

    /// Flat index of node (js, ji) in an (S, I) field.
    pub fn idx(&self, js: usize, ji: usize) -> usize {
        js * self.spec.n_i + ji
    }

    /// Bracketing index and weight along a sorted axis of log coordinates.
    fn locate_i(&self, i: f64) -> (usize, f64, bool) {
        let n = self.spec.n_i;
        let clamped = i < self.i[0] || i > self.i[n - 1];
        let x = (i.clamp(self.i[0], self.i[n - 1]) + self.shift).ln();
        let ji = match self.log_i.partition_point(|&v| v <= x) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let w = ((x - self.log_i[ji]) / (self.log_i[ji + 1] - self.log_i[ji])).clamp(0.0, 1.0);
        (ji, w, clamped)
    }

    fn locate_s(&self, s: f64) -> (usize, f64, bool) {
        let n = self.spec.n_s;
        let clamped = s < self.s[0] || s > self.s[n - 1];
        let t = (s.clamp(self.s[0], self.s[n - 1]) - self.s[0]) / self.delta_s;
        let js = (t.floor() as usize).min(n - 2);
        let w = (t - js as f64).clamp(0.0, 1.0);
        (js, w, clamped)
    }

    /// Bilinear interpolation, linear in S and in log(I + shift). Out-of-range
    /// coordinates evaluate at the clamped boundary and set the flag.
    pub fn interpolate_flagged(&self, values: &[f64], s: f64, i: f64) -> (f64, bool) {
        debug_assert_eq!(values.len(), self.spec.n_s * self.spec.n_i);
        let (js, ws, cs) = self.locate_s(s);
        let (ji, wi, ci) = self.locate_i(i);
        let v00 = values[self.idx(js, ji)];
        let v01 = values[self.idx(js, ji + 1)];
        let v10 = values[self.idx(js + 1, ji)];
        let v11 = values[self.idx(js + 1, ji + 1)];
        let v = (1.0 - ws) * ((1.0 - wi) * v00 + wi * v01) + ws * ((1.0 - wi) * v10 + wi * v11);
        (v, cs || ci)
    }

    pub fn interpolate(&self, values: &[f64], s: f64, i: f64) -> f64 {
        self.interpolate_flagged(values, s, i).0
    }

    /// Interpolation along the prevalence axis within a single S column.
    pub fn interp_column(&self, column: &[f64], i: f64) -> f64 {
        debug_assert_eq!(column.len(), self.spec.n_i);
        let (ji, wi, _) = self.locate_i(i);
        (1.0 - wi) * column[ji] + wi * column[ji + 1]
    }
}

/// Scalar values on the grid nodes, S-major (then I, then belief when present).
#[derive(Debug, Clone)]
pub struct Field {
    pub values: Vec<f64>,
    pub n_s: usize,
    pub n_i: usize,
    pub n_mu: usize,
    pub label: String,
    pub params_hash: u64,
}

impl Field {
    pub fn new2(n_s: usize, n_i: usize, label: &str, params_hash: u64) -> Self {
        Field {
            values: vec![0.0; n_s * n_i],
            n_s,
            n_i,
            n_mu: 0,
            label: label.to_string(),
            params_hash,
        }
    }

    pub fn new3(n_s: usize, n_i: usize, n_mu: usize, label: &str, params_hash: u64) -> Self {
        Field {
            values: vec![0.0; n_s * n_i * n_mu],
            n_s,
            n_i,
            n_mu,
            label: label.to_string(),
            params_hash,
        }
    }

    pub fn at(&self, js: usize, ji: usize) -> f64 {
        self.values[js * self.n_i + ji]
    }

    pub fn at_mut(&mut self, js: usize, ji: usize) -> &mut f64 {
        &mut self.values[js * self.n_i + ji]
    }

    pub fn at3(&self, js: usize, ji: usize, jm: usize) -> f64 {
        self.values[(js * self.n_i + ji) * self.n_mu + jm]
    }

    pub fn at3_mut(&mut self, js: usize, ji: usize, jm: usize) -> &mut f64 {
        &mut self.values[(js * self.n_i + ji) * self.n_mu + jm]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Write one row per node: "S,I[,mu],value" at full double precision.
    pub fn write_csv(&self, grid: &StateGrid, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        if self.n_mu == 0 {
            writeln!(out, "S,I,value")?;
            for js in 0..self.n_s {
                for ji in 0..self.n_i {
                    writeln!(
                        out,
                        "{:.16e},{:.16e},{:.16e}",
                        grid.s[js],
                        grid.i[ji],
                        self.at(js, ji)
                    )?;
                }
            }
        } else {
            writeln!(out, "S,I,mu,value")?;
            for js in 0..self.n_s {
                for ji in 0..self.n_i {
                    for jm in 0..self.n_mu {
                        writeln!(
                            out,
                            "{:.16e},{:.16e},{:.16e},{:.16e}",
                            grid.s[js],
                            grid.i[ji],
                            grid.mu[jm],
                            self.at3(js, ji, jm)
                        )?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Read a 2-D field written by [`Field::write_csv`], verifying that the
    /// node coordinates match the grid.
    pub fn read_csv(grid: &StateGrid, path: &Path, label: &str) -> Result<Field> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some("S,I,value") => {}
            other => {
                return Err(Error::Data(format!(
                    "expected header 'S,I,value', found {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut field = Field::new2(grid.n_s(), grid.n_i(), label, 0);
        let mut count = 0usize;
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |p: Option<&str>| -> Result<f64> {
                p.and_then(|x| x.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Data(format!("malformed field row {}", lineno + 2)))
            };
            let s = parse(parts.next())?;
            let i = parse(parts.next())?;
            let v = parse(parts.next())?;
            let js = count / grid.n_i();
            let ji = count % grid.n_i();
            if js >= grid.n_s() {
                return Err(Error::Data("field file has more rows than grid nodes".into()));
            }
            let tol = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-30);
            if !tol(s, grid.s[js]) || !tol(i, grid.i[ji]) {
                return Err(Error::Data(format!(
                    "field row {} coordinates ({s}, {i}) do not match the grid node ({}, {})",
                    lineno + 2,
                    grid.s[js],
                    grid.i[ji]
                )));
            }
            field.values[count] = v;
            count += 1;
        }
        if count != grid.n_s() * grid.n_i() {
            return Err(Error::Data(format!(
                "field file holds {count} rows, grid has {}",
                grid.n_s() * grid.n_i()
            )));
        }
        Ok(field)
    }
}
