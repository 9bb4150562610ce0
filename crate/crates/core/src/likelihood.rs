//! Discretized detection likelihood `P(B | A, px)`.
//!
//! Rows are indexed by the dimensionless area `a = A / px`; each row is the
//! distribution of the number of registered pixels when the particle center is
//! uniform over one pixel period. All rows share the same set of offsets, so
//! the pointwise monotonicity of registration carries over to every row
//! exactly (in particular `P(B = 0 | a)` never increases with `a`).

use std::fmt;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{register, GridSpec, Offset, Particle, HIT_THRESHOLD, MISS_THRESHOLD};
use crate::io::{data_lines, fmt_f64, parse_f64, Metadata};
use crate::rng::{stream_rng, STREAM_TABLE_OFFSETS};

/// Row-stochasticity tolerance.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Default upper end of detection tables, in units of `px`.
pub const DEFAULT_A_MAX: f64 = 12.0;
pub const DEFAULT_A_STEPS: usize = 600;

// R2 low-discrepancy generators (inverse powers of the plastic number)
const R2_ALPHA_U: f64 = 0.754_877_666_246_692_7;
const R2_ALPHA_V: f64 = 0.569_840_290_998_053_2;

/// How offsets inside one pixel period are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OffsetScheme {
    /// Randomly shifted rank-1 lattice: every point is marginally uniform.
    #[default]
    QuasiLattice,
    PseudoRandom,
}

impl fmt::Display for OffsetScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OffsetScheme::QuasiLattice => "quasi-lattice",
            OffsetScheme::PseudoRandom => "pseudo-random",
        })
    }
}

impl FromStr for OffsetScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "quasi-lattice" => Ok(OffsetScheme::QuasiLattice),
            "pseudo-random" => Ok(OffsetScheme::PseudoRandom),
            other => Err(Error::invalid(format!("unknown offset scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TableMeta {
    pub offsets_per_a: usize,
    pub seed: u64,
    pub scheme: OffsetScheme,
}

/// Nonzero band of one row: `probs[k] = P(B = first_b + k)`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Row {
    pub(crate) first_b: u32,
    pub(crate) probs: Vec<f64>,
}

impl Row {
    fn from_dense(dense: &[f64]) -> Option<Self> {
        let first = dense.iter().position(|&p| p != 0.0)?;
        let last = dense.iter().rposition(|&p| p != 0.0)?;
        Some(Row {
            first_b: first as u32,
            probs: dense[first..=last].to_vec(),
        })
    }

    #[inline]
    pub(crate) fn get(&self, b: u32) -> f64 {
        if b < self.first_b {
            return 0.0;
        }
        self.probs
            .get((b - self.first_b) as usize)
            .copied()
            .unwrap_or(0.0)
    }

    fn last_b(&self) -> u32 {
        self.first_b + self.probs.len() as u32 - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodTable {
    grid: GridSpec,
    a_grid: Vec<f64>,
    rows: Vec<Row>,
    max_b: u32,
    meta: TableMeta,
}

/// Mean registered area against true area, both in units of `px`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanCurve {
    pub a_values: Vec<f64>,
    pub mean_b: Vec<f64>,
    pub mean_b_over_a: Vec<f64>,
}

/// `L(A | b)` as a function of `A` (not normalized over `A`).
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodSlice {
    pub b: u32,
    pub a_values: Vec<f64>,
    pub values: Vec<f64>,
}

impl LikelihoodSlice {
    /// Linear interpolation between table nodes; zero above the table.
    pub fn value_at(&self, a: f64) -> f64 {
        let below = if self.b == 0 { 1.0 } else { 0.0 };
        interpolate(&self.a_values, &self.values, below, a)
    }
}

/// Normalized posterior density of `A` (units of `px`) given one record `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSlice {
    pub b: u32,
    pub a_values: Vec<f64>,
    pub density: Vec<f64>,
}

impl PosteriorSlice {
    pub fn mean(&self) -> f64 {
        trapezoid(&self.a_values, |i| self.a_values[i] * self.density[i])
    }
}

impl LikelihoodTable {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Node areas in units of `px`.
    pub fn a_grid(&self) -> &[f64] {
        &self.a_grid
    }

    pub fn a_max(&self) -> f64 {
        *self.a_grid.last().expect("tables are never empty")
    }

    pub fn max_b(&self) -> u32 {
        self.max_b
    }

    pub fn meta(&self) -> &TableMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.a_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_grid.is_empty()
    }

    /// `P(B = b | A = a_grid[i])`.
    pub fn prob(&self, i: usize, b: u32) -> f64 {
        self.rows[i].get(b)
    }

    /// Row `i` as a dense vector of length `max_b + 1`.
    pub fn row_dense(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.max_b as usize + 1];
        let row = &self.rows[i];
        for (k, &p) in row.probs.iter().enumerate() {
            out[row.first_b as usize + k] = p;
        }
        out
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].probs.iter().sum()
    }

    pub(crate) fn rows(&self) -> &[Row] {
        &self.rows
    }

    /// The same table read at another pixel size (registration depends on
    /// `A / px` only).
    pub fn rescaled(&self, pixel_area: f64) -> Result<Self> {
        Ok(Self {
            grid: GridSpec::new(pixel_area)?,
            ..self.clone()
        })
    }

    /// Interpolated `P(B = 0 | A = a px)`; monotone, clamped to `[0, 1]`,
    /// zero above the table.
    pub fn p_b0(&self, a: f64) -> Result<f64> {
        if a.is_nan() || a < 0.0 {
            return Err(Error::invalid(format!("area ratio must be >= 0, got {a}")));
        }
        let p0: Vec<f64> = self.rows.iter().map(|r| r.get(0)).collect();
        Ok(interpolate(&self.a_grid, &p0, 1.0, a).clamp(0.0, 1.0))
    }

    /// Knots `(a, P(B=0|a))` of the piecewise-linear miss probability,
    /// starting at `(0, 1)`.
    pub(crate) fn p_b0_knots(&self) -> Vec<(f64, f64)> {
        std::iter::once((0.0, 1.0))
            .chain(
                self.a_grid
                    .iter()
                    .zip(&self.rows)
                    .map(|(&a, r)| (a, r.get(0).clamp(0.0, 1.0))),
            )
            .collect()
    }

    pub fn likelihood_slice(&self, b: u32) -> Result<LikelihoodSlice> {
        if b > self.max_b {
            return Err(Error::invalid(format!(
                "b = {b} outside the table range 0..={}",
                self.max_b
            )));
        }
        Ok(LikelihoodSlice {
            b,
            a_values: self.a_grid.clone(),
            values: self.rows.iter().map(|r| r.get(b)).collect(),
        })
    }

    pub fn mean_curve(&self) -> MeanCurve {
        let mean_b: Vec<f64> = self
            .rows
            .iter()
            .map(|r| {
                r.probs
                    .iter()
                    .enumerate()
                    .map(|(k, p)| (r.first_b as usize + k) as f64 * p)
                    .sum()
            })
            .collect();
        let mean_b_over_a = mean_b
            .iter()
            .zip(&self.a_grid)
            .map(|(m, a)| m / a)
            .collect();
        MeanCurve {
            a_values: self.a_grid.clone(),
            mean_b,
            mean_b_over_a,
        }
    }

    /// Posterior of `A` given `b` under `prior` on `[0, a_max]`, normalized by
    /// the trapezoid rule over the table nodes plus `a = 0`.
    pub fn posterior_slice<F>(&self, b: u32, prior: F) -> Result<PosteriorSlice>
    where
        F: Fn(f64) -> f64,
    {
        let slice = self.likelihood_slice(b)?;
        let mut a_values = Vec::with_capacity(self.len() + 1);
        let mut values = Vec::with_capacity(self.len() + 1);
        a_values.push(0.0);
        values.push(if b == 0 { prior(0.0) } else { 0.0 });
        for (a, l) in slice.a_values.iter().zip(&slice.values) {
            a_values.push(*a);
            values.push(l * prior(*a));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("prior must be finite and nonnegative"));
        }
        let z = trapezoid(&a_values, |i| values[i]);
        if !(z > 0.0) {
            return Err(Error::ZeroNormalizer(b));
        }
        Ok(PosteriorSlice {
            b,
            a_values,
            density: values.into_iter().map(|v| v / z).collect(),
        })
    }

    /// Serializes the table as comma-separated text.
    pub fn write_csv<W: Write>(&self, w: &mut W, meta: &Metadata) -> io::Result<()> {
        meta.write_to(w)?;
        writeln!(w, "pixel_area,a_max,a_steps,offsets_per_a,seed,scheme")?;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_f64(self.grid.pixel_area()),
            fmt_f64(self.a_max()),
            self.len(),
            self.meta.offsets_per_a,
            self.meta.seed,
            self.meta.scheme
        )?;
        write!(w, "a_value")?;
        for b in 0..=self.max_b {
            write!(w, ",p_b{b}")?;
        }
        writeln!(w)?;
        for (i, a) in self.a_grid.iter().enumerate() {
            write!(w, "{}", fmt_f64(*a))?;
            for p in self.row_dense(i) {
                write!(w, ",{}", fmt_f64(p))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let lines = data_lines(path)?;
        let bad = |msg: String| Error::format(path, msg);
        if lines.len() < 4 {
            return Err(bad("table file is truncated".into()));
        }
        if lines[0].trim() != "pixel_area,a_max,a_steps,offsets_per_a,seed,scheme" {
            return Err(bad(format!("unexpected table header {:?}", lines[0])));
        }
        let head: Vec<&str> = lines[1].split(',').collect();
        if head.len() != 6 {
            return Err(bad("table parameter row must have 6 fields".into()));
        }
        let grid = GridSpec::new(parse_f64(head[0], path, "pixel_area")?)?;
        let a_steps: usize = head[2]
            .trim()
            .parse()
            .map_err(|_| bad("bad a_steps".into()))?;
        let offsets_per_a: usize = head[3]
            .trim()
            .parse()
            .map_err(|_| bad("bad offsets_per_a".into()))?;
        let seed: u64 = head[4].trim().parse().map_err(|_| bad("bad seed".into()))?;
        let scheme: OffsetScheme = head[5].parse()?;

        let columns: Vec<&str> = lines[2].split(',').collect();
        if columns.first().map(|c| c.trim()) != Some("a_value") || columns.len() < 2 {
            return Err(bad("missing a_value,p_b0,... column header".into()));
        }
        let width = columns.len() - 1;
        let mut a_grid = Vec::with_capacity(a_steps);
        let mut rows = Vec::with_capacity(a_steps);
        for (k, line) in lines[3..].iter().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width + 1 {
                return Err(bad(format!("row {k} has {} fields, expected {}", fields.len(), width + 1)));
            }
            a_grid.push(parse_f64(fields[0], path, "a_value")?);
            let dense = fields[1..]
                .iter()
                .map(|f| parse_f64(f, path, "probability"))
                .collect::<Result<Vec<f64>>>()?;
            if dense.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(bad(format!("row {k} has a probability outside [0, 1]")));
            }
            let sum: f64 = dense.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(bad(format!("row {k} sums to {sum}")));
            }
            rows.push(Row::from_dense(&dense).ok_or_else(|| bad(format!("row {k} is empty")))?);
        }
        if a_grid.len() != a_steps {
            return Err(bad(format!("expected {a_steps} rows, found {}", a_grid.len())));
        }
        check_a_grid(&a_grid)?;
        let max_b = rows.iter().map(Row::last_b).max().unwrap_or(0);
        Ok(Self {
            grid,
            a_grid,
            rows,
            max_b,
            meta: TableMeta {
                offsets_per_a,
                seed,
                scheme,
            },
        })
    }
}

/// Uniform node areas `a_max * k / steps`, `k = 1..=steps`.
pub fn uniform_a_grid(a_max: f64, steps: usize) -> Result<Vec<f64>> {
    check_range(a_max, steps)?;
    Ok((1..=steps)
        .map(|k| a_max * k as f64 / steps as f64)
        .collect())
}

/// Uniform grid with half of the nodes packed between the guaranteed-miss and
/// guaranteed-hit thresholds.
pub fn refined_a_grid(a_max: f64, steps: usize) -> Result<Vec<f64>> {
    check_range(a_max, steps)?;
    let coarse = steps - steps / 2;
    let fine = steps / 2;
    let lo = MISS_THRESHOLD;
    let hi = HIT_THRESHOLD.min(a_max);
    let mut nodes = uniform_a_grid(a_max, coarse.max(2))?;
    if hi > lo && fine > 0 {
        nodes.extend((0..fine).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / fine as f64));
    }
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    Ok(nodes)
}

/// Grid for likelihoods used in fitting: step 0.02 up to 12, then spacing
/// growing like `A^(1/4)` (the spread of `B` at fixed `A`), ending at `a_max`.
pub fn fitting_a_grid(a_max: f64) -> Result<Vec<f64>> {
    if !(a_max.is_finite() && a_max > 0.0) {
        return Err(Error::invalid(format!("a_max must be positive, got {a_max}")));
    }
    let fine_step = 0.02;
    let mut nodes = Vec::new();
    let mut k = 1u32;
    loop {
        let a = fine_step * k as f64;
        if a > DEFAULT_A_MAX.min(a_max) + 1e-9 {
            break;
        }
        nodes.push(a);
        k += 1;
    }
    let mut a = nodes.last().copied().unwrap_or(0.0);
    loop {
        a += (0.25 * a.powf(0.25)).max(fine_step);
        if a >= a_max {
            break;
        }
        nodes.push(a);
    }
    if nodes.last().is_none_or(|&last| last < a_max) {
        nodes.push(a_max);
    }
    Ok(nodes)
}

fn check_range(a_max: f64, steps: usize) -> Result<()> {
    if !(a_max.is_finite() && a_max > 0.0) {
        return Err(Error::invalid(format!("a_max must be positive, got {a_max}")));
    }
    if steps < 2 {
        return Err(Error::invalid(format!("a_steps must be >= 2, got {steps}")));
    }
    Ok(())
}

fn check_a_grid(a_grid: &[f64]) -> Result<()> {
    if a_grid.len() < 2 {
        return Err(Error::invalid("area grid needs at least two nodes"));
    }
    if a_grid.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::invalid("area grid values must be positive and finite"));
    }
    if a_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("area grid must be strictly increasing"));
    }
    Ok(())
}

/// Offset fractions in `[0, 1)^2` shared by every row of a table.
pub fn offset_fractions(n: usize, seed: u64, scheme: OffsetScheme) -> Vec<(f64, f64)> {
    let mut rng = stream_rng(seed, STREAM_TABLE_OFFSETS);
    match scheme {
        OffsetScheme::QuasiLattice => {
            let su: f64 = rng.random();
            let sv: f64 = rng.random();
            (0..n)
                .map(|k| {
                    let k = k as f64;
                    ((su + k * R2_ALPHA_U).fract(), (sv + k * R2_ALPHA_V).fract())
                })
                .collect()
        }
        OffsetScheme::PseudoRandom => (0..n).map(|_| (rng.random(), rng.random())).collect(),
    }
}

/// Builds a detection table on the uniform grid `a_max * k / a_steps` with the
/// default quasi-lattice offsets.
pub fn build_table(
    grid: GridSpec,
    a_max: f64,
    a_steps: usize,
    offsets_per_a: usize,
    seed: u64,
) -> Result<LikelihoodTable> {
    let a_grid = uniform_a_grid(a_max, a_steps)?;
    build_table_on_grid(grid, a_grid, offsets_per_a, seed, OffsetScheme::QuasiLattice)
}

/// Builds a table on an arbitrary strictly increasing grid of `A / px` values.
///
/// Rows are computed in parallel; each row depends only on its area and the
/// shared offsets, so the result does not depend on the worker count.
pub fn build_table_on_grid(
    grid: GridSpec,
    a_grid: Vec<f64>,
    offsets_per_a: usize,
    seed: u64,
    scheme: OffsetScheme,
) -> Result<LikelihoodTable> {
    check_a_grid(&a_grid)?;
    if offsets_per_a == 0 {
        return Err(Error::invalid("offsets_per_a must be >= 1"));
    }
    let offsets = offset_fractions(offsets_per_a, seed, scheme);
    let side = grid.pixel_side();
    let offsets: Vec<Offset> = offsets
        .iter()
        .map(|&(fu, fv)| Offset::wrapped(fu * side, fv * side, &grid))
        .collect::<Result<_>>()?;

    let rows: Vec<Row> = a_grid
        .par_iter()
        .map(|&a| {
            let particle = Particle::new(a * grid.pixel_area())?;
            Ok(row_from_offsets(&particle, &grid, &offsets))
        })
        .collect::<Result<_>>()?;
    let max_b = rows.iter().map(Row::last_b).max().unwrap_or(0);
    Ok(LikelihoodTable {
        grid,
        a_grid,
        rows,
        max_b,
        meta: TableMeta {
            offsets_per_a,
            seed,
            scheme,
        },
    })
}

fn row_from_offsets(particle: &Particle, grid: &GridSpec, offsets: &[Offset]) -> Row {
    let bs: Vec<u32> = offsets
        .iter()
        .map(|o| register(particle, grid, o).covered_pixels as u32)
        .collect();
    let lo = *bs.iter().min().expect("at least one offset");
    let hi = *bs.iter().max().expect("at least one offset");
    let mut counts = vec![0u64; (hi - lo) as usize + 1];
    for b in bs {
        counts[(b - lo) as usize] += 1;
    }
    let n = offsets.len() as f64;
    Row {
        first_b: lo,
        probs: counts.into_iter().map(|c| c as f64 / n).collect(),
    }
}

/// Piecewise-linear interpolation through `(0, at_zero)` and the nodes; zero
/// above the last node.
fn interpolate(xs: &[f64], ys: &[f64], at_zero: f64, x: f64) -> f64 {
    let last = *xs.last().expect("nonempty grid");
    if x > last {
        return 0.0;
    }
    let k = xs.partition_point(|&v| v < x);
    if k < xs.len() && xs[k] == x {
        return ys[k];
    }
    let (x0, y0) = if k == 0 { (0.0, at_zero) } else { (xs[k - 1], ys[k - 1]) };
    let (x1, y1) = (xs[k], ys[k]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

fn trapezoid<F: Fn(usize) -> f64>(xs: &[f64], f: F) -> f64 {
    (1..xs.len())
        .map(|i| 0.5 * (f(i) + f(i - 1)) * (xs[i] - xs[i - 1]))
        .sum()
}
