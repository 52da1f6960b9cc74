//! A model discretized at one mutation scale: grid, sampled parameters,
//! fitness, kernel and convolution engine bundled together.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conv::{ConvMode, ConvolutionEngine};
use crate::error::{Error, Result};
use crate::grid::{NodeRange, TraitGrid};
use crate::model::{build_fitness, HostDerived, ModelParams, ModelSpec, MutationKernel};

/// How the computational window and node count are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridOptions {
    /// Fixed node count; otherwise the spacing is derived from ε.
    pub nodes: Option<usize>,
    /// Target ε/h when `nodes` is unset.
    pub points_per_eps: f64,
    /// Upper bound on h when `nodes` is unset.
    pub max_spacing: f64,
    /// Padding around the support hull; defaults to max(0.2, 10ε).
    pub padding: Option<f64>,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            nodes: None,
            points_per_eps: 8.0,
            max_spacing: 2e-3,
            padding: None,
        }
    }
}

impl GridOptions {
    pub fn with_nodes(n: usize) -> Self {
        Self {
            nodes: Some(n),
            ..Self::default()
        }
    }

    pub fn padding_for(&self, eps: f64) -> f64 {
        self.padding.unwrap_or_else(|| default_padding(eps))
    }
}

pub fn default_padding(eps: f64) -> f64 {
    (10.0 * eps).max(0.2)
}

/// Computational window for `spec` at mutation scale `eps`.
pub fn build_grid(spec: &ModelSpec, eps: f64, opts: &GridOptions) -> Result<TraitGrid> {
    let (lo, hi, anchor) = match (spec.window, spec.support_hull()) {
        (Some([a, b]), _) => (a, b, a),
        (None, Some((a, b))) => {
            let pad = opts.padding_for(eps);
            (a - pad, b + pad, a)
        }
        (None, None) => {
            return Err(Error::InvalidParams(
                "infection efficiencies without a known support need an explicit window".into(),
            ))
        }
    };
    match opts.nodes {
        Some(n) => TraitGrid::new(lo, hi, n),
        None => {
            let h = (eps / opts.points_per_eps).min(opts.max_spacing);
            TraitGrid::anchored(anchor, h, lo, hi)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ModelSpec,
    pub epsilon: f64,
    pub grid: Arc<TraitGrid>,
    pub params: ModelParams,
    pub derived: [HostDerived; 2],
    pub kernel: Arc<MutationKernel>,
    pub engine: Arc<ConvolutionEngine>,
}

impl Problem {
    pub fn new(spec: &ModelSpec, eps: f64, opts: &GridOptions, mode: ConvMode) -> Result<Self> {
        let grid = Arc::new(build_grid(spec, eps, opts)?);
        Self::on_grid(spec, eps, grid, mode)
    }

    pub fn on_grid(
        spec: &ModelSpec,
        eps: f64,
        grid: Arc<TraitGrid>,
        mode: ConvMode,
    ) -> Result<Self> {
        let params = spec.sample(&grid)?;
        Self::from_params(spec.clone(), params, eps, mode)
    }

    pub fn from_params(
        spec: ModelSpec,
        params: ModelParams,
        eps: f64,
        mode: ConvMode,
    ) -> Result<Self> {
        let grid = params.grid().clone();
        let derived = [build_fitness(&params, 0)?, build_fitness(&params, 1)?];
        let kernel = Arc::new(MutationKernel::new(spec.kernel, eps, &grid)?);
        let engine = Arc::new(ConvolutionEngine::new(grid.clone(), kernel.clone(), mode));
        Ok(Self {
            spec,
            epsilon: eps,
            grid,
            params,
            derived,
            kernel,
            engine,
        })
    }

    /// Same discretization with a different convolution backend.
    pub fn with_mode(&self, mode: ConvMode) -> Self {
        let engine = Arc::new(ConvolutionEngine::new(
            self.grid.clone(),
            self.kernel.clone(),
            mode,
        ));
        Self {
            engine,
            ..self.clone()
        }
    }

    pub fn host(&self, k: usize) -> &HostDerived {
        &self.derived[k]
    }

    pub fn theta(&self) -> f64 {
        self.params.theta
    }

    /// Bounding node range of Ω₁ ∪ Ω₂.
    pub fn omega_hull(&self) -> NodeRange {
        self.derived[0]
            .omega_support
            .union(&self.derived[1].omega_support)
    }

    /// Bounding node range of Σ₁ ∪ Σ₂.
    pub fn sigma_hull(&self) -> NodeRange {
        self.derived[0]
            .sigma_support
            .union(&self.derived[1].sigma_support)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    #[test]
    fn default_window_covers_padded_supports() {
        let spec = Preset::Fig1.spec();
        let g = build_grid(&spec, 1e-3, &GridOptions::default()).unwrap();
        assert!(g.x_min() <= 0.0 + 1e-12 && g.x_min() > -1e-3);
        assert!(g.x_max() >= 1.1 - 1e-12);
        assert!(1e-3 / g.spacing() >= 6.0);

        let g = build_grid(&spec, 0.05, &GridOptions::default()).unwrap();
        assert!(g.x_min() <= 0.2 - 0.5 + 1e-12);
        assert!((g.spacing() - 2e-3).abs() < 1e-15);

        let g = build_grid(&spec, 1e-3, &GridOptions::with_nodes(8192)).unwrap();
        assert_eq!(g.len(), 8192);
    }

    #[test]
    fn doubling_padding_keeps_nodes() {
        let spec = Preset::Fig1.spec();
        let a = build_grid(&spec, 0.01, &GridOptions::default()).unwrap();
        let opts = GridOptions {
            padding: Some(0.4),
            ..GridOptions::default()
        };
        let b = build_grid(&spec, 0.01, &opts).unwrap();
        let ia = a.nearest(0.4);
        let ib = b.nearest(0.4);
        assert!((a.nodes()[ia] - b.nodes()[ib]).abs() < 1e-12);
        assert!((a.nodes()[ia] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn explicit_window_required_without_supports() {
        let mut spec = Preset::Fig1.spec();
        spec.hosts[0].beta = crate::model::Profile::Expr {
            expr: "max(0.0, 1.0 - x * x)".into(),
            support: None,
        };
        assert!(build_grid(&spec, 0.01, &GridOptions::default()).is_err());
        spec.window = Some([-1.5, 1.5]);
        let g = build_grid(&spec, 0.01, &GridOptions::default()).unwrap();
        assert!(g.x_min() <= -1.5 + 1e-12);
    }
}
