//! Attainment-region membership and 2-D slice extraction.
//!
//! A point belongs to the attainment region when its predicted success
//! probability (the clamped GP posterior mean) meets the threshold η_p.
//! Slices fix or free individual dimensions to reproduce the region plots:
//! free dimensions span a grid, fixed ones hold a constant, and
//! "unrestricted" ones report the best probability over a coarse subgrid —
//! the reading of a region plot where unshown variables are not restricted.

use serde::{Deserialize, Serialize};

use crate::domain::{DomainBounds, FeatureParameterPoint, TrialRecord, DIMS};
use crate::domain::{normalize_unchecked, Dimension};
use crate::error::{Error, Result};
use crate::gp::FittedModel;

/// Threshold used throughout the experiments.
pub const DEFAULT_ETA_P: f64 = 0.8;

/// Number of subgrid points an unrestricted dimension is scanned over.
pub const UNRESTRICTED_SUBGRID: usize = 9;

/// Anything that can score a unit-cube point with a success estimate.
///
/// [`FittedModel`] is the production implementation; tests substitute
/// analytic stubs with known region geometry.
pub trait SuccessPredictor {
    fn domain_bounds(&self) -> &DomainBounds;

    /// Raw posterior mean at a unit-cube point (unclamped).
    fn success_mean_unit(&self, u: &[f64; DIMS]) -> f64;

    /// Evaluates the mean over a Cartesian product of per-axis unit
    /// coordinates, visiting cells in row-major (last axis fastest) order.
    fn grid_mean_scan(&self, axes: &[Vec<f64>; DIMS], visit: &mut dyn FnMut(&[usize; DIMS], f64)) {
        let sizes: [usize; DIMS] = std::array::from_fn(|d| axes[d].len());
        if sizes.contains(&0) {
            return;
        }
        let mut idx = [0usize; DIMS];
        loop {
            let u: [f64; DIMS] = std::array::from_fn(|d| axes[d][idx[d]]);
            visit(&idx, self.success_mean_unit(&u));
            let mut d = DIMS;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < sizes[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
}

impl SuccessPredictor for FittedModel {
    fn domain_bounds(&self) -> &DomainBounds {
        self.bounds()
    }

    fn success_mean_unit(&self, u: &[f64; DIMS]) -> f64 {
        self.mean_unit(u)
    }

    fn grid_mean_scan(&self, axes: &[Vec<f64>; DIMS], visit: &mut dyn FnMut(&[usize; DIMS], f64)) {
        FittedModel::grid_mean_scan(self, axes, visit)
    }
}

/// A membership query: a model plus the success threshold η_p.
#[derive(Clone, Copy)]
pub struct AttainmentQuery<'a, M: SuccessPredictor> {
    model: &'a M,
    eta_p: f64,
}

impl<'a, M: SuccessPredictor> AttainmentQuery<'a, M> {
    pub fn new(model: &'a M, eta_p: f64) -> Result<Self> {
        if !eta_p.is_finite() || eta_p <= 0.0 || eta_p >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "eta_p must lie in (0, 1), got {eta_p}"
            )));
        }
        Ok(AttainmentQuery { model, eta_p })
    }

    pub fn with_default_threshold(model: &'a M) -> Self {
        AttainmentQuery {
            model,
            eta_p: DEFAULT_ETA_P,
        }
    }

    pub fn eta_p(&self) -> f64 {
        self.eta_p
    }

    pub fn model(&self) -> &'a M {
        self.model
    }

    /// Predicted success probability: the posterior mean clamped to [0, 1].
    pub fn success_probability(&self, x: &FeatureParameterPoint) -> Result<f64> {
        self.model.domain_bounds().check(x)?;
        let u = normalize_unchecked(&x.to_array(), self.model.domain_bounds());
        Ok(self.probability_unit(&u))
    }

    /// Membership test, boundary inclusive: probability ≥ η_p.
    pub fn is_attainable(&self, x: &FeatureParameterPoint) -> Result<bool> {
        Ok(self.success_probability(x)? >= self.eta_p)
    }

    pub(crate) fn probability_unit(&self, u: &[f64; DIMS]) -> f64 {
        self.model.success_mean_unit(u).clamp(0.0, 1.0)
    }

    pub(crate) fn attainable_unit(&self, u: &[f64; DIMS]) -> bool {
        self.probability_unit(u) >= self.eta_p
    }
}

/// How a non-free dimension is treated in a slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FixedValue {
    /// Evaluate at this raw-domain value.
    Constant(f64),
    /// Report the maximum probability over a coarse subgrid: some setting of
    /// this dimension works.
    Unrestricted,
}

/// A 2-D slice of the 5-D space: two free dimensions on a grid, the other
/// three each constant or unrestricted.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSpec {
    free: [Dimension; 2],
    fixed: [FixedValue; DIMS],
    resolution: usize,
}

pub const DEFAULT_RESOLUTION: usize = 100;

impl SliceSpec {
    /// New slice with the given free dimensions; all other dimensions start
    /// unrestricted.
    pub fn new(free_i: Dimension, free_j: Dimension, resolution: usize) -> Result<SliceSpec> {
        if free_i == free_j {
            return Err(Error::InvalidConfig(format!(
                "free dimensions must be distinct, got {free_i} twice"
            )));
        }
        if resolution < 2 {
            return Err(Error::InvalidConfig(format!(
                "resolution must be at least 2, got {resolution}"
            )));
        }
        Ok(SliceSpec {
            free: [free_i, free_j],
            fixed: [FixedValue::Unrestricted; DIMS],
            resolution,
        })
    }

    /// Pins a non-free dimension to a constant raw value.
    pub fn fix(mut self, dim: Dimension, value: f64) -> Result<SliceSpec> {
        if self.free.contains(&dim) {
            return Err(Error::InvalidConfig(format!(
                "cannot fix free dimension {dim}"
            )));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite {
                field: dim.name(),
                value,
            });
        }
        self.fixed[dim.index()] = FixedValue::Constant(value);
        Ok(self)
    }

    pub fn free_dims(&self) -> [Dimension; 2] {
        self.free
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn fixed_value(&self, dim: Dimension) -> Option<FixedValue> {
        if self.free.contains(&dim) {
            None
        } else {
            Some(self.fixed[dim.index()])
        }
    }
}

/// One evaluated slice cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceCell {
    pub probability: f64,
    pub attainable: bool,
}

/// A fully evaluated slice: `resolution × resolution` cells, row-major with
/// the first free dimension as the row axis, both axes ascending.
#[derive(Debug, Clone)]
pub struct SliceGrid {
    pub spec: SliceSpec,
    pub eta_p: f64,
    /// Raw-domain coordinates along the two free axes.
    pub coords: [Vec<f64>; 2],
    cells: Vec<SliceCell>,
}

impl SliceGrid {
    pub fn cell(&self, i: usize, j: usize) -> &SliceCell {
        &self.cells[i * self.spec.resolution + j]
    }

    pub fn cells(&self) -> &[SliceCell] {
        &self.cells
    }

    pub fn attainable_count(&self) -> usize {
        self.cells.iter().filter(|c| c.attainable).count()
    }
}

fn unit_linspace(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Evaluates a slice. Constant dimensions are checked against the model's
/// bounds; unrestricted dimensions are aggregated by maximum over a
/// [`UNRESTRICTED_SUBGRID`]-point subgrid.
pub fn slice_grid<M: SuccessPredictor>(
    q: &AttainmentQuery<'_, M>,
    spec: &SliceSpec,
) -> Result<SliceGrid> {
    let bounds = q.model().domain_bounds();
    let res = spec.resolution;

    let mut axes: [Vec<f64>; DIMS] = Default::default();
    for dim in Dimension::ALL {
        let d = dim.index();
        axes[d] = if spec.free.contains(&dim) {
            unit_linspace(res)
        } else {
            match spec.fixed[d] {
                FixedValue::Constant(v) => {
                    let (lo, hi) = bounds.interval(dim);
                    if v < lo || v > hi {
                        return Err(Error::OutOfBounds {
                            dim,
                            value: v,
                            lo,
                            hi,
                        });
                    }
                    vec![(v - lo) / (hi - lo)]
                }
                FixedValue::Unrestricted => unit_linspace(UNRESTRICTED_SUBGRID),
            }
        };
    }

    let (di, dj) = (spec.free[0].index(), spec.free[1].index());
    let mut best = vec![f64::NEG_INFINITY; res * res];
    q.model().grid_mean_scan(&axes, &mut |idx, mean| {
        let cell = &mut best[idx[di] * res + idx[dj]];
        if mean > *cell {
            *cell = mean;
        }
    });

    let cells: Vec<SliceCell> = best
        .into_iter()
        .map(|m| {
            let probability = m.clamp(0.0, 1.0);
            SliceCell {
                probability,
                attainable: probability >= q.eta_p(),
            }
        })
        .collect();

    let coords = [
        raw_coords(&axes[di], bounds, spec.free[0]),
        raw_coords(&axes[dj], bounds, spec.free[1]),
    ];

    Ok(SliceGrid {
        spec: spec.clone(),
        eta_p: q.eta_p(),
        coords,
        cells,
    })
}

fn raw_coords(unit: &[f64], bounds: &DomainBounds, dim: Dimension) -> Vec<f64> {
    let (lo, hi) = bounds.interval(dim);
    unit.iter().map(|u| lo + u * (hi - lo)).collect()
}

/// Canonical plot artifact: CSV with header
/// `dim_i,dim_j,probability,attainable`, one row per cell in row-major order.
pub fn write_grid_csv(grid: &SliceGrid, w: &mut impl std::io::Write) -> Result<()> {
    writeln!(w, "dim_i,dim_j,probability,attainable")?;
    let res = grid.spec.resolution();
    for i in 0..res {
        for j in 0..res {
            let c = grid.cell(i, j);
            writeln!(
                w,
                "{},{},{},{}",
                grid.coords[0][i],
                grid.coords[1][j],
                c.probability,
                c.attainable as u8
            )?;
        }
    }
    Ok(())
}

/// Optional SVG rendering: filled cells for the attainable region, overlaid
/// sample points colored red for failures and grey for successes.
///
/// Sample points are projected onto the two free axes; a trial is shown only
/// when it matches every constant-fixed dimension within 2% of that
/// dimension's range.
pub fn write_grid_svg(
    grid: &SliceGrid,
    samples: &[TrialRecord],
    bounds: &DomainBounds,
    w: &mut impl std::io::Write,
) -> Result<()> {
    const PLOT: f64 = 500.0;
    const MARGIN: f64 = 50.0;
    let size = PLOT + 2.0 * MARGIN;
    let res = grid.spec.resolution();
    let cell_px = PLOT / res as f64;

    // Row axis (free dim 0) is drawn along x, matching the CSV layout.
    let to_px = |i: usize, j: usize| -> (f64, f64) {
        let x = MARGIN + i as f64 * cell_px;
        let y = MARGIN + PLOT - (j as f64 + 1.0) * cell_px;
        (x, y)
    };

    writeln!(
        w,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">"
    )?;
    writeln!(
        w,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{PLOT}\" height=\"{PLOT}\" fill=\"white\" stroke=\"black\"/>"
    )?;
    for i in 0..res {
        for j in 0..res {
            if grid.cell(i, j).attainable {
                let (x, y) = to_px(i, j);
                writeln!(
                    w,
                    "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cell_px:.2}\" height=\"{cell_px:.2}\" fill=\"lightblue\"/>"
                )?;
            }
        }
    }

    let [dim_i, dim_j] = grid.spec.free_dims();
    let (lo_i, hi_i) = bounds.interval(dim_i);
    let (lo_j, hi_j) = bounds.interval(dim_j);
    for r in samples {
        if !matches_fixed(&grid.spec, &r.x, bounds) {
            continue;
        }
        let a = r.x.to_array();
        let fx = (a[dim_i.index()] - lo_i) / (hi_i - lo_i);
        let fy = (a[dim_j.index()] - lo_j) / (hi_j - lo_j);
        let cx = MARGIN + fx * PLOT;
        let cy = MARGIN + PLOT - fy * PLOT;
        let color = if r.succeeded() { "#888888" } else { "#cc3333" };
        writeln!(
            w,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3\" fill=\"{color}\"/>"
        )?;
    }

    writeln!(
        w,
        "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\">{name}</text>",
        x = MARGIN + PLOT / 2.0,
        y = size - 12.0,
        name = dim_i.name()
    )?;
    writeln!(
        w,
        "<text x=\"14\" y=\"{y}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {y})\">{name}</text>",
        y = MARGIN + PLOT / 2.0,
        name = dim_j.name()
    )?;
    writeln!(w, "</svg>")?;
    Ok(())
}

fn matches_fixed(spec: &SliceSpec, x: &FeatureParameterPoint, bounds: &DomainBounds) -> bool {
    let a = x.to_array();
    for dim in Dimension::ALL {
        if let Some(FixedValue::Constant(v)) = spec.fixed_value(dim) {
            let (lo, hi) = bounds.interval(dim);
            if (a[dim.index()] - v).abs() > 0.02 * (hi - lo) {
                return false;
            }
        }
    }
    true
}
