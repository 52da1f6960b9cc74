//! Spectrum of the linearized fixed-point map `h ↦ D_A T h`.
//!
//! Columns of the derivative vanish outside the bounding range of the
//! infection-efficiency supports, so its nonzero spectrum is that of the square
//! block on that range. The block is assembled column by column from the
//! analytic derivative and handed to a dense complex eigensolver; for fine
//! grids only the top modulus is estimated by power iteration.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{solve_uncoupled, UncoupledSolution};
use crate::error::{Error, Result};
use crate::grid::{Field, NodeRange};
use crate::operators::{apply_t, derivative_values, OpKind};
use crate::problem::Problem;
use crate::spectral::{symmetric_spectrum, PowerOptions};

/// Moduli at or above `1 − STABILITY_MARGIN` count as unstable.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Largest block handled by the dense eigensolver in automatic mode.
pub const DENSE_STABILITY_LIMIT: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    /// Full spectrum of the assembled block.
    Dense,
    /// Dominant modulus only.
    PowerEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityOptions {
    /// Largest `‖T(A) − A‖₁` accepted as a fixed point.
    pub fixed_point_tol: f64,
    /// Block size above which the dominant modulus is estimated instead.
    pub dense_limit: usize,
    /// Iteration budget and tolerance for the dominant-modulus estimate.
    pub power: PowerOptions,
    /// Also compute the superposed single-host formula spectra.
    pub predict: bool,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            fixed_point_tol: 1e-6,
            dense_limit: DENSE_STABILITY_LIMIT,
            power: PowerOptions {
                tol: 1e-10,
                max_iter: 20_000,
                check_every: 1,
            },
            predict: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    /// Sorted by decreasing modulus.
    pub eigenvalues: Vec<Complex64>,
    pub spectral_radius: f64,
    pub stable: bool,
    pub dimension: usize,
    pub method: EigenMethod,
    /// Superposed single-host formula spectra, when requested.
    pub uncoupled_prediction: Option<Vec<f64>>,
}

fn is_stable(radius: f64) -> bool {
    radius < 1.0 - STABILITY_MARGIN
}

fn sort_by_modulus(values: &mut [Complex64]) {
    values.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.re.total_cmp(&a.re)));
}

/// Dense block of `h ↦ D_A T h` (or of a single host's map) on `range`.
fn derivative_block(problem: &Problem, a: &Field, range: NodeRange, hosts: [bool; 2]) -> DMatrix<f64> {
    let n = problem.grid.len();
    let m = range.len();
    let columns: Vec<Vec<f64>> = range
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = derivative_values(problem, a, &e, hosts);
            col[range.first..=range.last].to_vec()
        })
        .collect();
    DMatrix::from_fn(m, m, |i, j| columns[j][i])
}

fn dense_eigenvalues(block: DMatrix<f64>) -> Vec<Complex64> {
    let mut ev: Vec<Complex64> = block.complex_eigenvalues().iter().copied().collect();
    sort_by_modulus(&mut ev);
    ev
}

/// Dominant modulus of `h ↦ D_A T h` by power iteration on the full grid.
fn dominant_modulus(problem: &Problem, a: &Field, hosts: [bool; 2], opts: &PowerOptions) -> Result<f64> {
    let w = problem.grid.weights();
    let norm = |v: &[f64]| -> f64 { v.iter().zip(w).map(|(x, w)| w * x.abs()).sum() };
    let mut v: Vec<f64> = problem
        .derived
        .iter()
        .fold(vec![0.0; problem.grid.len()], |mut acc, d| {
            for (s, p) in acc.iter_mut().zip(d.psi.values()) {
                *s += p;
            }
            acc
        });
    // A sign-changing component keeps the start off any invariant cone.
    for (i, x) in v.iter_mut().enumerate() {
        *x *= 1.0 + 0.5 * (0.37 * i as f64).sin();
    }
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut estimate = 0.0;
    for it in 1..=opts.max_iter {
        let y = derivative_values(problem, a, &v, hosts);
        // Two steps per estimate so that a dominant ±ρ pair does not oscillate.
        let z = derivative_values(problem, a, &y, hosts);
        let nz = norm(&z);
        if nz == 0.0 {
            return Ok(0.0);
        }
        let next = nz.sqrt();
        v = z.iter().map(|x| x / nz).collect();
        let change = (next - estimate).abs();
        if change < opts.tol * next {
            return Ok(next);
        }
        if it == opts.max_iter {
            return Err(Error::NotConverged {
                what: "dominant modulus estimate",
                iterations: it,
                residual: change / next,
            });
        }
        estimate = next;
    }
    Ok(estimate)
}

/// Spectrum of the derivative of `T` at a fixed point `a`.
pub fn stability_spectrum(problem: &Problem, a: &Field, opts: &StabilityOptions) -> Result<StabilityReport> {
    let residual = apply_t(problem, a)?.l1_distance(a)?;
    if !(residual < opts.fixed_point_tol) {
        return Err(Error::NotAFixedPoint(residual));
    }
    let range = problem.sigma_hull();
    let hosts = [true, true];
    let (eigenvalues, method) = if range.len() <= opts.dense_limit {
        let ev = dense_eigenvalues(derivative_block(problem, a, range, hosts));
        (ev, EigenMethod::Dense)
    } else {
        let rho = dominant_modulus(problem, a, hosts, &opts.power)?;
        (vec![Complex64::new(rho, 0.0)], EigenMethod::PowerEstimate)
    };
    let spectral_radius = eigenvalues.first().map_or(0.0, |z| z.norm());
    let uncoupled_prediction = if opts.predict {
        let count = eigenvalues.len().clamp(1, 10);
        let mut all = Vec::new();
        for k in 0..2 {
            let u = solve_uncoupled(problem, k, &PowerOptions::default())?;
            all.extend(formula_spectrum(problem, &u, count)?);
        }
        all.sort_by(|a, b| b.total_cmp(a));
        all.truncate(count);
        Some(all)
    } else {
        None
    };
    Ok(StabilityReport {
        stable: is_stable(spectral_radius),
        spectral_radius,
        dimension: range.len(),
        method,
        eigenvalues,
        uncoupled_prediction,
    })
}

/// Leading spectrum of `D T_k` at `A_k*` from the eigenvalues of `L_k`:
/// `{λⁿ/λ¹ : n ≥ 2} ∪ {1/λ¹}` above threshold, `σ(L_k)` otherwise.
pub fn formula_spectrum(problem: &Problem, u: &UncoupledSolution, count: usize) -> Result<Vec<f64>> {
    let kind = OpKind::host(u.host);
    let dim = problem.grid.len();
    if u.is_trivial() {
        return symmetric_spectrum(problem, kind, count.min(dim));
    }
    let top = symmetric_spectrum(problem, kind, (count + 1).min(dim))?;
    let lambda = u.spectral.lambda1;
    let mut values: Vec<f64> = top[1..].iter().map(|l| l / lambda).collect();
    values.push(1.0 / lambda);
    values.sort_by(|a, b| b.total_cmp(a));
    values.truncate(count);
    Ok(values)
}

/// Formula and matrix spectra of a single host's derivative at its
/// uncoupled fixed point.
#[derive(Debug, Clone, Serialize)]
pub struct UncoupledDerivativeSpectrum {
    pub host: usize,
    pub lambda1: f64,
    /// Leading formula values, decreasing.
    pub formula: Vec<f64>,
    /// Leading matrix eigenvalues by decreasing modulus.
    pub matrix: Vec<Complex64>,
    /// Largest |Im| among the matrix eigenvalues.
    pub max_imag: f64,
    /// Hausdorff distance between `formula` and the real parts of `matrix`.
    pub hausdorff: f64,
    /// `‖D T_k φ¹ − φ¹/λ¹‖₁` with `‖φ¹‖₁ = 1`; zero below threshold.
    pub eigenvector_residual: f64,
}

pub fn uncoupled_derivative_spectrum(
    problem: &Problem,
    k: usize,
    count: usize,
    opts: &PowerOptions,
) -> Result<UncoupledDerivativeSpectrum> {
    let u = solve_uncoupled(problem, k, opts)?;
    let formula = formula_spectrum(problem, &u, count)?;
    let mut hosts = [false, false];
    hosts[k] = true;
    let block = derivative_block(problem, &u.a_star, problem.derived[k].sigma_support, hosts);
    let all = dense_eigenvalues(block);
    let max_imag = all.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    let matrix: Vec<Complex64> = all.into_iter().take(count).collect();
    let real: Vec<f64> = matrix.iter().map(|z| z.re).collect();
    let hausdorff = hausdorff(&formula, &real);
    let eigenvector_residual = if u.is_trivial() {
        0.0
    } else {
        let phi = &u.spectral.phi1;
        let d = derivative_values(problem, &u.a_star, phi.values(), hosts);
        let lam = u.spectral.lambda1;
        let diff: Vec<f64> = d
            .iter()
            .zip(phi.values())
            .map(|(a, b)| a - b / lam)
            .collect();
        Field::new(problem.grid.clone(), diff)?.l1_norm()
    };
    Ok(UncoupledDerivativeSpectrum {
        host: k,
        lambda1: u.spectral.lambda1,
        formula,
        matrix,
        max_imag,
        hausdorff,
        eigenvector_residual,
    })
}

/// Hausdorff distance between two finite sets of reals.
pub fn hausdorff(a: &[f64], b: &[f64]) -> f64 {
    let directed = |x: &[f64], y: &[f64]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).abs()).fold(f64::INFINITY, f64::min))
            .fold(0.0f64, f64::max)
    };
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { f64::INFINITY };
    }
    directed(a, b).max(directed(b, a))
}
