//! Uniform trait-space grids, trapezoid quadrature and sampled fields.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest node count accepted by [`TraitGrid::new`].
pub const MIN_NODES: usize = 16;

/// Uniform 1-D phenotype grid with trapezoid weights.
#[derive(Debug, Clone, Serialize)]
pub struct TraitGrid {
    x_min: f64,
    x_max: f64,
    n: usize,
    h: f64,
    nodes: Vec<f64>,
    quad_weights: Vec<f64>,
}

impl PartialEq for TraitGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.x_min == other.x_min && self.x_max == other.x_max
    }
}

impl TraitGrid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidGrid("bounds must be finite".into()));
        }
        if x_min >= x_max {
            return Err(Error::InvalidGrid(format!(
                "x_min = {x_min} must be below x_max = {x_max}"
            )));
        }
        if n < MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "n = {n} is below the minimum of {MIN_NODES} nodes"
            )));
        }
        let h = (x_max - x_min) / (n - 1) as f64;
        // Nodes are computed from both ends so that the last node is exactly x_max.
        let nodes: Vec<f64> = (0..n)
            .map(|i| {
                if i == n - 1 {
                    x_max
                } else {
                    x_min + i as f64 * h
                }
            })
            .collect();
        let mut quad_weights = vec![h; n];
        quad_weights[0] = 0.5 * h;
        quad_weights[n - 1] = 0.5 * h;
        Ok(Self {
            x_min,
            x_max,
            n,
            h,
            nodes,
            quad_weights,
        })
    }

    /// Grid with spacing `h` whose nodes contain `anchor` and cover `[lo, hi]`.
    ///
    /// Two grids built with the same anchor and spacing share every node in
    /// their common window, which makes windows of different widths directly
    /// comparable.
    pub fn anchored(anchor: f64, h: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing {h} must be positive")));
        }
        let left = ((anchor - lo) / h - 1e-9).ceil().max(0.0) as usize;
        let right = ((hi - anchor) / h - 1e-9).ceil().max(0.0) as usize;
        let x_min = anchor - left as f64 * h;
        let x_max = anchor + right as f64 * h;
        Self::new(x_min, x_max, left + right + 1)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.quad_weights
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Index of the node nearest to `x` (clamped to the grid).
    pub fn nearest(&self, x: f64) -> usize {
        let t = ((x - self.x_min) / self.h).round();
        t.clamp(0.0, (self.n - 1) as f64) as usize
    }
}

/// Inclusive range of node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRange {
    pub first: usize,
    pub last: usize,
}

impl NodeRange {
    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.first..=self.last).contains(&i)
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }

    pub fn union(&self, other: &NodeRange) -> NodeRange {
        NodeRange {
            first: self.first.min(other.first),
            last: self.last.max(other.last),
        }
    }

    /// Bounding range of the nodes where `pred` holds, or `None` if it never does.
    pub fn bounding<F: Fn(usize) -> bool>(n: usize, pred: F) -> Option<NodeRange> {
        let first = (0..n).find(|&i| pred(i))?;
        let last = (0..n).rev().find(|&i| pred(i))?;
        Some(NodeRange { first, last })
    }
}

/// A function sampled at the nodes of a [`TraitGrid`].
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<TraitGrid>,
    values: Vec<f64>,
    is_density: bool,
}

impl Field {
    pub fn new(grid: Arc<TraitGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            grid,
            values,
            is_density: false,
        })
    }

    /// Field flagged as a density: every value must be nonnegative.
    pub fn density(grid: Arc<TraitGrid>, values: Vec<f64>) -> Result<Self> {
        let mut f = Self::new(grid, values)?;
        f.check_nonnegative()?;
        f.is_density = true;
        Ok(f)
    }

    pub fn zeros(grid: Arc<TraitGrid>) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![0.0; n],
            is_density: true,
        }
    }

    pub fn constant(grid: Arc<TraitGrid>, c: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![c; n],
            is_density: c >= 0.0,
        }
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Arc<TraitGrid>, f: F) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        Self {
            grid,
            values,
            is_density: false,
        }
    }

    /// Builds a field from values already known to be finite and of the right length.
    pub(crate) fn from_raw(grid: Arc<TraitGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid,
            values,
            is_density: false,
        }
    }

    /// Flags a field whose values are known to be nonnegative as a density.
    pub(crate) fn into_density(mut self) -> Self {
        debug_assert!(self.values.iter().all(|&v| v >= 0.0));
        self.is_density = true;
        self
    }

    pub fn grid(&self) -> &Arc<TraitGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_density(&self) -> bool {
        self.is_density
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_nonnegative(&self) -> Result<()> {
        match self.values.iter().position(|&v| v < 0.0) {
            Some(index) => Err(Error::NegativeDensity {
                index,
                value: self.values[index],
            }),
            None => Ok(()),
        }
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn check_on(&self, grid: &TraitGrid) -> Result<()> {
        if *self.grid == *grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Σ wᵢ |fᵢ|
    pub fn l1_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| w * v.abs())
            .sum()
    }

    /// Σ wᵢ fᵢ
    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| w * v)
            .sum()
    }

    /// Σ wᵢ fᵢ gᵢ
    pub fn integral_against(&self, g: &[f64]) -> f64 {
        debug_assert_eq!(g.len(), self.values.len());
        self.values
            .iter()
            .zip(g)
            .zip(self.grid.weights())
            .map(|((f, g), w)| w * f * g)
            .sum()
    }

    /// Σ wᵢ xᵢ fᵢ
    pub fn first_moment(&self) -> f64 {
        self.integral_against(self.grid.nodes())
    }

    /// L¹ norm over the nodes of `range`.
    pub fn l1_norm_on(&self, range: NodeRange) -> f64 {
        range
            .iter()
            .map(|i| self.grid.weights()[i] * self.values[i].abs())
            .sum()
    }

    /// Pointwise product with a {0, 1} indicator.
    pub fn restrict(&self, indicator: &Field) -> Result<Field> {
        self.check_same_grid(indicator)?;
        if let Some(i) = indicator
            .values
            .iter()
            .position(|&v| v != 0.0 && v != 1.0)
        {
            return Err(Error::InvalidParams(format!(
                "indicator value {} at node {i} is not 0 or 1",
                indicator.values[i]
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&indicator.values)
            .map(|(f, c)| f * c)
            .collect();
        Ok(Field {
            grid: self.grid.clone(),
            values,
            is_density: self.is_density,
        })
    }

    /// Indicator field of a node range.
    pub fn indicator(grid: Arc<TraitGrid>, range: NodeRange) -> Field {
        let values = (0..grid.len())
            .map(|i| if range.contains(i) { 1.0 } else { 0.0 })
            .collect();
        Field {
            grid,
            values,
            is_density: true,
        }
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        Field::from_raw(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with<F: Fn(f64, f64) -> f64>(&self, other: &Field, f: F) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field::from_raw(
            self.grid.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// L¹ distance Σ wᵢ |fᵢ − gᵢ|.
    pub fn l1_distance(&self, other: &Field) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .zip(self.grid.weights())
            .map(|((a, b), w)| w * (a - b).abs())
            .sum())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest value; the smallest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn argmax_x(&self) -> f64 {
        self.grid.nodes()[self.argmax()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(a: f64, b: f64, n: usize) -> Arc<TraitGrid> {
        Arc::new(TraitGrid::new(a, b, n).unwrap())
    }

    #[test]
    fn trapezoid_weights() {
        let g = TraitGrid::new(0.0, 1.0, 16).unwrap();
        assert_relative_eq!(g.spacing(), 1.0 / 15.0, max_relative = 1e-15);
        assert_relative_eq!(g.weights()[0], 0.5 / 15.0);
        assert_relative_eq!(g.weights()[1], 1.0 / 15.0);
        assert_relative_eq!(g.weights()[15], 0.5 / 15.0);
    }

    #[test]
    fn rejects_small_or_bad_grids() {
        assert!(TraitGrid::new(0.0, 1.0, 11).is_err());
        assert!(TraitGrid::new(0.0, 1.0, 5).is_err());
        assert!(TraitGrid::new(1.0, 0.0, 32).is_err());
        assert!(TraitGrid::new(0.0, f64::NAN, 32).is_err());
        assert!(TraitGrid::new(f64::NEG_INFINITY, 0.0, 32).is_err());
    }

    #[test]
    fn weight_sum_and_uniform_nodes() {
        let g = TraitGrid::new(0.0, 1.2, 8193).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert_relative_eq!(s, 1.2, max_relative = 1e-12);
        for w in g.nodes().windows(2) {
            assert_relative_eq!(w[1] - w[0], g.spacing(), max_relative = 1e-9);
        }
        let g = TraitGrid::new(-1.0, 1.0, 17).unwrap();
        assert_eq!(g.nodes()[0], -1.0);
        assert_eq!(g.nodes()[8], 0.0);
        assert_eq!(g.nodes()[16], 1.0);
    }

    #[test]
    fn anchored_grids_share_nodes() {
        let a = TraitGrid::anchored(0.2, 1e-3, 0.0, 1.1).unwrap();
        let b = TraitGrid::anchored(0.2, 1e-3, -0.2, 1.3).unwrap();
        let ia = a.nearest(0.2);
        let ib = b.nearest(0.2);
        assert!((a.nodes()[ia] - 0.2).abs() < 1e-15);
        assert!((b.nodes()[ib] - 0.2).abs() < 1e-15);
        assert!((a.nodes()[ia + 400] - b.nodes()[ib + 400]).abs() < 1e-12);
        assert!(a.x_min() <= 0.0 && a.x_max() >= 1.1);
    }

    #[test]
    fn l1_norm_basics() {
        let g = grid(0.0, 1.0, 101);
        assert_eq!(Field::zeros(g.clone()).l1_norm(), 0.0);
        assert_relative_eq!(Field::constant(g.clone(), 1.0).l1_norm(), 1.0, max_relative = 1e-12);
        // Trapezoid is exact for piecewise-linear functions with kinks at nodes.
        let hat = Field::from_fn(g, |x| (0.5 - (x - 0.5).abs()).max(0.0));
        assert_relative_eq!(hat.l1_norm(), 0.25, max_relative = 1e-13);
    }

    #[test]
    fn l1_norm_of_quadratic_bump() {
        // ∫ 200 (x-0.2)(0.6-x) dx over [0.2, 0.6] = 200 * 0.4^3 / 6
        let exact = 200.0 * 0.4f64.powi(3) / 6.0;
        let bump = |x: f64| (200.0 * (x - 0.2) * (0.6 - x)).max(0.0);
        let f = Field::from_fn(grid(0.0, 1.0, 4097), bump);
        assert!((f.l1_norm() - exact).abs() < 1e-6);

        // Second-order convergence under refinement.
        let e1 = (Field::from_fn(grid(0.0, 1.0, 257), bump).l1_norm() - exact).abs();
        let e2 = (Field::from_fn(grid(0.0, 1.0, 513), bump).l1_norm() - exact).abs();
        let order = (e1 / e2).log2();
        assert!(order > 1.8, "observed order {order}");
    }

    #[test]
    fn restrict_to_indicator() {
        let g = grid(0.0, 1.0, 101);
        let one = Field::constant(g.clone(), 1.0);
        let range = NodeRange::bounding(g.len(), |i| {
            let x = g.nodes()[i];
            (0.2 - 1e-12..=0.6 + 1e-12).contains(&x)
        })
        .unwrap();
        let chi = Field::indicator(g.clone(), range);
        let r = one.restrict(&chi).unwrap();
        for (x, v) in g.nodes().iter().zip(r.values()) {
            let inside = (0.2 - 1e-12..=0.6 + 1e-12).contains(x);
            assert_eq!(*v, if inside { 1.0 } else { 0.0 });
        }
        let zero = Field::zeros(g.clone());
        assert_eq!(one.restrict(&zero).unwrap().l1_norm(), 0.0);

        let bad = Field::constant(g, 0.5);
        assert!(one.restrict(&bad).is_err());
        let other = Field::constant(grid(0.0, 2.0, 101), 1.0);
        assert!(matches!(one.restrict(&other), Err(Error::GridMismatch)));
    }

    #[test]
    fn density_rejects_negative() {
        let g = grid(0.0, 1.0, 16);
        let mut v = vec![1.0; 16];
        v[3] = -1e-3;
        assert!(matches!(
            Field::density(g.clone(), v),
            Err(Error::NegativeDensity { index: 3, .. })
        ));
        let mut v = vec![1.0; 16];
        v[0] = f64::NAN;
        assert!(matches!(Field::new(g, v), Err(Error::NonFinite(0))));
    }
}
