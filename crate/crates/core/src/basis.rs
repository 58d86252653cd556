//! Gaussian kernel basis on a set of spatial knots.
//!
//! Weights `w_l(s) = K(s | v_l, τ) / Σ_j K(s | v_j, τ)` are computed in log
//! space so that locations far from every knot still normalize; only a
//! location further than [`DEGENERATE_BANDWIDTHS`] bandwidths from the
//! nearest knot is rejected.

use alloc::vec::Vec;
use core::f64::consts::PI;


use crate::error::{Error, Result};
use crate::special::log_sum_exp;

/// Locations whose nearest knot is further than this many bandwidths away
/// are rejected by [`weights`].
pub const DEGENERATE_BANDWIDTHS: f64 = 38.0;

/// A point in the plane.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        self.dist2(other).sqrt()
    }
}

/// Set of knots `v_1..v_L`, either a regular m×m grid or arbitrary points.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotGrid {
    knots: Vec<Point>,
    layout: Layout,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Layout {
    Regular { m: usize, lower: f64, upper: f64 },
    Irregular,
}

/// The m×m grid S(m, l, u) covering [l, u]², endpoints included.
pub fn make_grid(m: usize, lower: f64, upper: f64) -> Result<KnotGrid> {
    KnotGrid::regular(m, lower, upper)
}

impl KnotGrid {
    pub fn regular(m: usize, lower: f64, upper: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Parameter { name: "m", value: 0.0 });
        }
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::Parameter { name: "bounds", value: upper - lower });
        }
        let axis: Vec<f64> = if m == 1 {
            alloc::vec![0.5 * (lower + upper)]
        } else {
            let step = (upper - lower) / (m - 1) as f64;
            (0..m).map(|k| if k == m - 1 { upper } else { lower + k as f64 * step }).collect()
        };
        let mut knots = Vec::with_capacity(m * m);
        for &y in &axis {
            for &x in &axis {
                knots.push(Point::new(x, y));
            }
        }
        Ok(KnotGrid { knots, layout: Layout::Regular { m, lower, upper } })
    }

    /// Knots at arbitrary distinct points (e.g. at the data sites).
    pub fn from_points(knots: Vec<Point>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Input("knot set is empty".into()));
        }
        for (i, a) in knots.iter().enumerate() {
            if !a.x.is_finite() || !a.y.is_finite() {
                return Err(Error::Input(alloc::format!("knot {i} is not finite")));
            }
            if knots[..i].iter().any(|b| b == a) {
                return Err(Error::Input(alloc::format!("knot {i} duplicates an earlier knot")));
            }
        }
        Ok(KnotGrid { knots, layout: Layout::Irregular })
    }

    /// Rectangular lattice with the given spacing, anchored so that the
    /// origin is a knot, covering `[x0, x1] × [y0, y1]`.
    pub fn lattice(spacing: f64, x_range: (f64, f64), y_range: (f64, f64)) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::Parameter { name: "spacing", value: spacing });
        }
        let ks = |(lo, hi): (f64, f64)| {
            let a = (lo / spacing).ceil() as i64;
            let b = (hi / spacing).floor() as i64;
            a..=b
        };
        let mut knots = Vec::new();
        for j in ks(y_range) {
            for i in ks(x_range.clone()) {
                knots.push(Point::new(i as f64 * spacing, j as f64 * spacing));
            }
        }
        if knots.is_empty() {
            return Err(Error::Input("lattice has no knots".into()));
        }
        Ok(KnotGrid { knots, layout: Layout::Irregular })
    }

    pub fn knots(&self) -> &[Point] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Per-axis count for regular grids.
    pub fn m(&self) -> Option<usize> {
        match self.layout {
            Layout::Regular { m, .. } => Some(m),
            Layout::Irregular => None,
        }
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self.layout {
            Layout::Regular { lower, upper, .. } => Some((lower, upper)),
            Layout::Irregular => None,
        }
    }

    /// Distance between adjacent knots: exact for regular grids, the median
    /// nearest-neighbour distance otherwise. `None` for a single knot.
    pub fn spacing(&self) -> Option<f64> {
        match self.layout {
            Layout::Regular { m, lower, upper } if m >= 2 => Some((upper - lower) / (m - 1) as f64),
            Layout::Regular { .. } => None,
            Layout::Irregular => {
                if self.knots.len() < 2 {
                    return None;
                }
                let mut nn: Vec<f64> = self
                    .knots
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        self.knots
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != i)
                            .map(|(_, b)| a.dist(b))
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect();
                nn.sort_by(|a, b| a.total_cmp(b));
                let k = nn.len();
                Some(if k % 2 == 1 { nn[k / 2] } else { 0.5 * (nn[k / 2 - 1] + nn[k / 2]) })
            }
        }
    }
}

/// Knot grid plus bandwidth τ.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelBasis {
    grid: KnotGrid,
    tau: f64,
}

impl KernelBasis {
    pub fn new(grid: KnotGrid, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(KernelBasis { grid, tau })
    }

    pub fn grid(&self) -> &KnotGrid {
        &self.grid
    }

    pub fn knots(&self) -> &[Point] {
        self.grid.knots()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        KernelBasis::new(self.grid.clone(), tau)
    }

    /// log w_l(s) for every knot, written into `out`.
    pub fn log_weights_into(&self, s: Point, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        let inv = 1.0 / (2.0 * self.tau * self.tau);
        let mut nearest = f64::INFINITY;
        for v in self.knots() {
            let d2 = s.dist2(v);
            nearest = nearest.min(d2);
            out.push(-d2 * inv);
        }
        let ratio = nearest.sqrt() / self.tau;
        if !(ratio <= DEGENERATE_BANDWIDTHS) {
            return Err(Error::DegenerateLocation { x: s.x, y: s.y, ratio });
        }
        let norm = log_sum_exp(out.iter().copied());
        for lw in out.iter_mut() {
            *lw -= norm;
        }
        Ok(())
    }

    pub fn log_weights(&self, s: Point) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        self.log_weights_into(s, &mut out)?;
        Ok(out)
    }

    /// Row-major `sites.len() × L` matrix of log weights.
    pub fn log_weight_matrix(&self, sites: &[Point]) -> Result<Vec<f64>> {
        let mut all = Vec::with_capacity(sites.len() * self.len());
        let mut row = Vec::with_capacity(self.len());
        for &s in sites {
            self.log_weights_into(s, &mut row)?;
            all.extend_from_slice(&row);
        }
        Ok(all)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter { name: "tau", value: tau })
    }
}

/// `exp(-‖s - v‖² / (2τ²)) / (2πτ²)`.
pub fn gaussian_kernel(s: Point, v: Point, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok((-s.dist2(&v) / (2.0 * tau * tau)).exp() / (2.0 * PI * tau * tau))
}

/// Normalized kernel weights at `s`; they sum to one.
pub fn weights(s: Point, basis: &KernelBasis) -> Result<Vec<f64>> {
    let mut w = basis.log_weights(s)?;
    for x in w.iter_mut() {
        *x = x.exp();
    }
    Ok(w)
}

/// Outcome of comparing knot spacing with the bandwidth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpacingAdvice {
    Ok,
    /// Spacing exceeds τ; carries spacing / τ.
    Warn { ratio: f64 },
}

/// Knot spacing should not exceed the kernel bandwidth.
pub fn check_spacing(basis: &KernelBasis) -> SpacingAdvice {
    match basis.grid().spacing() {
        Some(d) if d > basis.tau() => SpacingAdvice::Warn { ratio: d / basis.tau() },
        _ => SpacingAdvice::Ok,
    }
}
