//! Marginal distribution of registered pixel counts under a log-t size law.
//!
//! `P(b | theta, px) = int P(b | A, px) lt(A | theta) dA`, split in three parts:
//!
//! * areas below the first table row that can register anything: all of that
//!   mass goes to `b = 0` (exact, through the CDF);
//! * the table range: one cell per row, midpoint weights renormalized to the
//!   exact CDF mass of the range;
//! * areas above the table: deterministic `b = floor(rho A / px)` with `rho` the
//!   mean erosion ratio of the last row, integrated exactly through the CDF.

use crate::error::{Error, Result};
use crate::likelihood::LikelihoodTable;
use crate::sizedist::{LnDensity, LogTParams};

/// Largest log-t mass allowed above the table for [`marginal_b_pmf`].
pub const MAX_UNCOVERED_MASS: f64 = 1e-4;

/// Marginal pmf over `b >= 0`.
#[derive(Clone, Debug)]
pub struct MarginalPmf {
    params: LogTParams,
    px: f64,
    table_part: Vec<f64>,
    edge: f64,
    ratio: f64,
    tail_mass: f64,
}

impl MarginalPmf {
    pub fn params(&self) -> &LogTParams {
        &self.params
    }

    pub fn prob(&self, b: u32) -> f64 {
        self.table_part.get(b as usize).copied().unwrap_or(0.0) + self.tail_prob(b, b)
    }

    pub fn p_zero(&self) -> f64 {
        self.prob(0)
    }

    /// `P(b | b >= 1)`.
    pub fn truncated_prob(&self, b: u32) -> f64 {
        if b == 0 {
            0.0
        } else {
            self.prob(b) / (1.0 - self.p_zero())
        }
    }

    /// `P(lo <= b <= hi)`.
    pub fn range_mass(&self, lo: u32, hi: u32) -> f64 {
        if hi < lo {
            return 0.0;
        }
        let top = (hi as usize + 1).min(self.table_part.len());
        let table: f64 = if (lo as usize) < top {
            self.table_part[lo as usize..top].iter().sum()
        } else {
            0.0
        };
        table + self.tail_prob(lo, hi)
    }

    /// Mass above the table, mapped by the erosion-ratio approximation.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn total(&self) -> f64 {
        self.table_part.iter().sum::<f64>() + self.tail_mass
    }

    /// Dense pmf for `b = 0..=b_max`.
    pub fn to_vec(&self, b_max: u32) -> Vec<f64> {
        (0..=b_max).map(|b| self.prob(b)).collect()
    }

    fn tail_prob(&self, lo: u32, hi: u32) -> f64 {
        // areas (in px units) mapped to b in [lo, hi]
        let a_lo = (lo as f64 / self.ratio).max(self.edge);
        let a_hi = (hi as f64 + 1.0) / self.ratio;
        if a_hi <= self.edge {
            return 0.0;
        }
        self.params.mass_between(a_lo * self.px, a_hi * self.px)
    }
}

/// Table-dependent precomputation shared by every parameter evaluation.
#[derive(Clone, Debug)]
pub(crate) struct MarginalModel<'t> {
    table: &'t LikelihoodTable,
    px: f64,
    first_active: usize,
    zero_cut: f64,
    nodes: Vec<f64>,
    widths: Vec<f64>,
    cells: Vec<(f64, f64)>,
    edge: f64,
    ratio: f64,
}

impl<'t> MarginalModel<'t> {
    pub(crate) fn new(table: &'t LikelihoodTable) -> Self {
        let px = table.grid().pixel_area();
        let a = table.a_grid();
        let rows = table.rows();
        let first_active = rows
            .iter()
            .position(|r| !(r.first_b == 0 && r.probs.len() == 1))
            .unwrap_or(rows.len());
        let boundary = |k: usize| -> f64 {
            if k == 0 {
                0.0
            } else if k >= a.len() {
                a[a.len() - 1]
            } else {
                0.5 * (a[k - 1] + a[k])
            }
        };
        let cells: Vec<(f64, f64)> = (first_active..a.len())
            .map(|k| (boundary(k) * px, boundary(k + 1) * px))
            .collect();
        let nodes = (first_active..a.len()).map(|k| a[k] * px).collect();
        let widths = cells.iter().map(|(l, h)| h - l).collect();
        let edge = table.a_max();
        let curve = table.mean_curve();
        let last_ratio = *curve.mean_b_over_a.last().expect("nonempty table");
        Self {
            table,
            px,
            first_active,
            zero_cut: boundary(first_active) * px,
            nodes,
            widths,
            cells,
            edge,
            ratio: last_ratio.clamp(1e-3, 1.0),
        }
    }

    pub(crate) fn evaluate(&self, params: &LogTParams) -> MarginalPmf {
        let mut part = vec![0.0; self.table.max_b() as usize + 1];
        part[0] = params.cdf(self.zero_cut);
        let edge_phys = self.edge * self.px;
        let target = params.mass_between(self.zero_cut, edge_phys);

        if target > 0.0 && !self.nodes.is_empty() {
            let lnf = LnDensity::new(params);
            let mut weights: Vec<f64> = self
                .nodes
                .iter()
                .zip(&self.widths)
                .map(|(a, w)| lnf.eval(*a).exp() * w)
                .collect();
            let sum: f64 = weights.iter().sum();
            let scale = target / sum;
            if sum > 0.0 && (scale - 1.0).abs() < 1e-2 {
                weights.iter_mut().for_each(|w| *w *= scale);
            } else {
                // distribution too narrow for midpoint weights
                weights = self
                    .cells
                    .iter()
                    .map(|(lo, hi)| params.mass_between(*lo, *hi))
                    .collect();
            }
            let rows = &self.table.rows()[self.first_active..];
            for (row, w) in rows.iter().zip(&weights) {
                if *w == 0.0 {
                    continue;
                }
                let base = row.first_b as usize;
                for (slot, p) in part[base..base + row.probs.len()].iter_mut().zip(&row.probs) {
                    *slot += w * p;
                }
            }
        }

        MarginalPmf {
            params: *params,
            px: self.px,
            table_part: part,
            edge: self.edge,
            ratio: self.ratio,
            tail_mass: params.mass_between(edge_phys, f64::INFINITY),
        }
    }
}

/// Marginal pmf of `b` under `params` at the table's pixel size.
///
/// Fails when more than [`MAX_UNCOVERED_MASS`] of the size distribution lies
/// above the table.
pub fn marginal_b_pmf(params: &LogTParams, table: &LikelihoodTable) -> Result<MarginalPmf> {
    let model = MarginalModel::new(table);
    let pmf = model.evaluate(params);
    if pmf.tail_mass > MAX_UNCOVERED_MASS {
        return Err(Error::InsufficientCoverage(format!(
            "{:.3e} of the size distribution lies above A = {} um^2 (table a_max = {} px)",
            pmf.tail_mass,
            table.a_max() * table.grid().pixel_area(),
            table.a_max()
        )));
    }
    Ok(pmf)
}
