//! Fixtures shared by the benchmarks.

use mutsel_core::{ConvMode, Field, GridOptions, Preset, Problem};

/// The first scenario on `nodes` uniform nodes.
pub fn fig1(eps: f64, nodes: usize, mode: ConvMode) -> Problem {
    Problem::new(&Preset::Fig1.spec(), eps, &GridOptions::with_nodes(nodes), mode)
        .expect("valid benchmark problem")
}

/// Smooth positive density on the problem grid.
pub fn smooth_density(p: &Problem) -> Field {
    Field::from_fn(p.grid.clone(), |x| 1.0 + 0.5 * (7.0 * x).sin())
}
