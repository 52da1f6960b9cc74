//! Principal eigenpairs, leading spectra and spectral gaps of the weighted
//! convolution operators.
//!
//! All computations run in the folded frame `B = D K D` on the bounding range
//! of the operator's support, with `D = diag(√(w_i W_i))` and `K` the kernel
//! Toeplitz block. `B` is symmetric and shares its nonzero spectrum with `L`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::conv::{ConvMode, Toeplitz};
use crate::error::{Error, Result};
use crate::grid::{Field, NodeRange};
use crate::model::ModelSpec;
use crate::operators::{LinearOp, OpKind};
use crate::problem::{GridOptions, Problem};

/// Largest folded dimension handled by a dense symmetric eigensolver.
pub const DENSE_LIMIT: usize = 2048;

/// Relative gaps below this are treated as numerically degenerate.
pub const DEGENERATE_GAP: f64 = 1e-10;

/// Local log-log slope of the gap above which algebraic decay is not credible.
pub const SLOPE_CAP: f64 = 4.0;

/// Mutation scales of the default sweep.
pub const DEFAULT_EPSILONS: [f64; 7] = [0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerOptions {
    /// Target relative L¹ eigen-residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Residual is evaluated every this many iterations.
    pub check_every: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200_000,
            check_every: 10,
        }
    }
}

/// Principal eigenpair of an L-kind operator.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub kind: OpKind,
    pub epsilon: f64,
    pub lambda1: f64,
    /// Nonnegative, unit L¹ mass.
    pub phi1: Field,
    pub lambda2: Option<f64>,
    pub gap: Option<f64>,
    /// `‖L φ − λ φ‖₁ / λ`
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// ε → 0 limit of the spectral radius.
    pub r0_limit: f64,
}

impl SpectralResult {
    /// Adds the second eigenvalue from a leading-spectrum computation.
    pub fn with_second(mut self, problem: &Problem) -> Result<Self> {
        let top = symmetric_spectrum(problem, self.kind, 2)?;
        self.lambda2 = Some(top[1]);
        self.gap = Some(self.lambda1 - top[1]);
        Ok(self)
    }
}

/// Thresholds in the vanishing-mutation limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct R0Limits {
    /// `(Λ/θ) ‖ξ₁Ψ₁ + ξ₂Ψ₂‖∞`
    pub r0: f64,
    /// `(ξ_k Λ/θ) ‖Ψ_k‖∞`
    pub r0_host: [f64; 2],
}

pub fn r0_limits(problem: &Problem) -> R0Limits {
    let combined = LinearOp::new(problem, OpKind::L);
    let r0 = combined.weight().iter().fold(0.0f64, |m, &v| m.max(v));
    R0Limits {
        r0,
        r0_host: [problem.derived[0].r0k, problem.derived[1].r0k],
    }
}

fn l_kind(kind: OpKind) -> OpKind {
    match kind {
        OpKind::S1 => OpKind::L1,
        OpKind::S2 => OpKind::L2,
        other => other,
    }
}

fn r0_limit_of(problem: &Problem, kind: OpKind) -> f64 {
    let lim = r0_limits(problem);
    match l_kind(kind).host_index() {
        Some(k) => lim.r0_host[k],
        None => lim.r0,
    }
}

/// Folded operator `v ↦ D K (D v)` on a node range.
struct Folded {
    range: NodeRange,
    d: Vec<f64>,
    block: Toeplitz,
}

impl Folded {
    fn new(problem: &Problem, kind: OpKind) -> (Self, LinearOp) {
        let op = LinearOp::new(problem, l_kind(kind));
        let range = op.support();
        let w = problem.grid.weights();
        let d = range
            .iter()
            .map(|i| (w[i] * op.weight()[i]).sqrt())
            .collect();
        let block = problem.engine.restricted(range);
        (Self { range, d, block }, op)
    }

    fn dim(&self) -> usize {
        self.d.len()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let u: Vec<f64> = v.iter().zip(&self.d).map(|(a, b)| a * b).collect();
        self.block.apply_into(&u, out);
        for (o, d) in out.iter_mut().zip(&self.d) {
            *o *= d;
        }
    }

    fn dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            self.d[i] * self.block.tap(i as isize - j as isize) * self.d[j]
        })
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Eigenfunction on the full grid from a folded eigenvector:
/// `φ = λ⁻¹ m_ε ⋆ (W φ)` where `w W φ = D v` on the support range.
fn unfold(problem: &Problem, folded: &Folded, v: &[f64], lambda: f64) -> Field {
    let mut u = vec![0.0; problem.grid.len()];
    for (idx, i) in folded.range.iter().enumerate() {
        u[i] = (folded.d[idx] * v[idx]).abs();
    }
    let mut phi = problem.engine.convolve_weighted(&u);
    for p in &mut phi {
        *p = (*p / lambda).max(0.0);
    }
    let f = Field::from_raw(problem.grid.clone(), phi);
    let mass = f.l1_norm();
    f.scale(1.0 / mass).into_density()
}

fn l1_residual(op: &LinearOp, phi: &Field, lambda: f64) -> f64 {
    let lphi = op.apply_values(phi.values());
    let diff: Vec<f64> = lphi
        .iter()
        .zip(phi.values())
        .map(|(a, b)| (a - lambda * b).abs())
        .collect();
    phi.grid()
        .weights()
        .iter()
        .zip(&diff)
        .map(|(w, d)| w * d)
        .sum::<f64>()
        / lambda
}

/// Power iteration for the principal eigenpair of `L₁`, `L₂` or `L`.
///
/// Fails with [`Error::NotConverged`] when the residual target is not met.
pub fn power_iteration(problem: &Problem, kind: OpKind, opts: &PowerOptions) -> Result<SpectralResult> {
    let res = power_iterate(problem, kind, opts)?;
    if !res.converged {
        return Err(Error::NotConverged {
            what: "power iteration",
            iterations: res.iterations,
            residual: res.residual,
        });
    }
    Ok(res)
}

/// Power iteration that reports non-convergence in the result instead of failing.
pub fn power_iterate(problem: &Problem, kind: OpKind, opts: &PowerOptions) -> Result<SpectralResult> {
    if kind.is_symmetric() {
        return Err(Error::InvalidParams(
            "power iteration acts on L1, L2 or L; use symmetric_spectrum for S-kinds".into(),
        ));
    }
    let (folded, op) = Folded::new(problem, kind);
    let n = folded.dim();
    // Start from the indicator of the support: v = D·1.
    let mut v = folded.d.clone();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut y = vec![0.0; n];
    let check_every = opts.check_every.max(1);

    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut phi = None;
    while iterations < opts.max_iter {
        iterations += 1;
        folded.apply(&v, &mut y);
        lambda = v.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        let check = iterations % check_every == 0 || iterations == opts.max_iter;
        if check {
            let r2 = y
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - lambda * b).powi(2))
                .sum::<f64>()
                .sqrt()
                / lambda;
            if r2 < opts.tol || iterations == opts.max_iter {
                let candidate = unfold(problem, &folded, &v, lambda);
                residual = l1_residual(&op, &candidate, lambda);
                phi = Some(candidate);
                if residual < opts.tol {
                    converged = true;
                    break;
                }
            }
        }
        let ny = norm2(&y);
        for (a, b) in v.iter_mut().zip(&y) {
            *a = b / ny;
        }
    }
    let phi1 = match phi {
        Some(p) => p,
        None => {
            let p = unfold(problem, &folded, &v, lambda);
            residual = l1_residual(&op, &p, lambda);
            p
        }
    };
    Ok(SpectralResult {
        kind,
        epsilon: problem.epsilon,
        lambda1: lambda,
        phi1,
        lambda2: None,
        gap: None,
        residual,
        iterations,
        converged,
        r0_limit: r0_limit_of(problem, kind),
    })
}

/// The `count` largest eigenvalues, in decreasing order.
///
/// Any kind is accepted; L- and S-kinds share their spectrum. The operator has
/// one eigenvalue per grid node, all but the support block being zero.
pub fn symmetric_spectrum(problem: &Problem, kind: OpKind, count: usize) -> Result<Vec<f64>> {
    let total = problem.grid.len();
    if count > total {
        return Err(Error::TooManyEigenvalues {
            requested: count,
            dim: total,
        });
    }
    let (folded, _) = Folded::new(problem, kind);
    let dim = folded.dim();
    let mut values = if dim <= DENSE_LIMIT {
        let mut ev: Vec<f64> = folded.dense().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev.truncate(count);
        ev
    } else {
        subspace_iteration(&folded, count.min(dim), &SubspaceOptions::default())?
    };
    values.resize(count, 0.0);
    Ok(values)
}

#[derive(Debug, Clone, Copy)]
struct SubspaceOptions {
    extra: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        Self {
            extra: 8,
            tol: 1e-13,
            max_iter: 50_000,
            seed: 7,
        }
    }
}

/// Orthogonal iteration with Rayleigh–Ritz extraction.
fn subspace_iteration(folded: &Folded, count: usize, opts: &SubspaceOptions) -> Result<Vec<f64>> {
    let n = folded.dim();
    let p = (count + opts.extra).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    q = q.qr().q();
    let mut z = DMatrix::zeros(n, p);
    let mut prev = vec![f64::INFINITY; count];
    let mut col = vec![0.0; n];
    for it in 1..=opts.max_iter {
        for j in 0..p {
            folded.apply(q.column(j).as_slice(), &mut col);
            z.column_mut(j).copy_from_slice(&col);
        }
        let h = q.transpose() * &z;
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let ritz: Vec<f64> = order.iter().take(count).map(|&i| eig.eigenvalues[i]).collect();
        let scale = ritz[0].abs().max(f64::MIN_POSITIVE);
        let change = ritz
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
            / scale;
        if change < opts.tol {
            return Ok(ritz);
        }
        if it == opts.max_iter {
            return Err(Error::NotConverged {
                what: "subspace iteration",
                iterations: it,
                residual: change,
            });
        }
        prev = ritz;
        let u = DMatrix::from_fn(p, p, |i, j| eig.eigenvectors[(i, order[j])]);
        q = (&z * u).qr().q();
    }
    unreachable!("loop returns on its last iteration")
}

/// One row of a spectral-gap table.
#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub epsilon: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gap: f64,
    pub residual: f64,
    pub iterations: usize,
    pub nodes: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapTable {
    pub kind: OpKind,
    pub rows: Vec<GapRow>,
    /// Least-squares slope of `ln gap` against `ln ε`.
    pub exponent: Option<f64>,
    /// Set when the gap is numerically degenerate or decays faster than any
    /// moderate power of ε.
    pub at_risk: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    pub grid: GridOptions,
    pub mode: ConvMode,
    pub power: PowerOptions,
}

/// Principal and second eigenvalues over a list of mutation scales.
pub fn spectral_gap(
    spec: &ModelSpec,
    kind: OpKind,
    eps_list: &[f64],
    opts: &SweepOptions,
) -> Result<GapTable> {
    if eps_list.is_empty() {
        return Err(Error::EmptySweep);
    }
    let mut rows = eps_list
        .par_iter()
        .map(|&eps| gap_row(spec, kind, eps, opts))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    let (exponent, at_risk) = assess_gaps(&rows);
    Ok(GapTable {
        kind: l_kind(kind),
        rows,
        exponent,
        at_risk,
    })
}

fn gap_row(spec: &ModelSpec, kind: OpKind, eps: f64, opts: &SweepOptions) -> Result<GapRow> {
    let problem = Problem::new(spec, eps, &opts.grid, opts.mode)?;
    let top = symmetric_spectrum(&problem, kind, 2)?;
    // A degenerate pair makes power iteration stall; its cost is capped here.
    let power = PowerOptions {
        max_iter: opts.power.max_iter.min(20_000),
        ..opts.power
    };
    let pi = power_iterate(&problem, l_kind(kind), &power)?;
    Ok(GapRow {
        epsilon: eps,
        lambda1: top[0],
        lambda2: top[1],
        gap: top[0] - top[1],
        residual: pi.residual,
        iterations: pi.iterations,
        nodes: problem.grid.len(),
        converged: pi.converged,
    })
}

/// Fitted decay exponent and risk flag for rows sorted by decreasing ε.
pub fn assess_gaps(rows: &[GapRow]) -> (Option<f64>, bool) {
    let degenerate = rows.iter().any(|r| !(r.gap / r.lambda1 >= DEGENERATE_GAP));
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.gap > 0.0 && r.epsilon > 0.0)
        .map(|r| (r.epsilon.ln(), r.gap.ln()))
        .collect();
    if pts.len() < 2 {
        return (None, degenerate);
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let exponent = if sxx > 0.0 { Some(sxy / sxx) } else { None };
    let (a, b) = (pts[pts.len() - 2], pts[pts.len() - 1]);
    let local = (b.1 - a.1) / (b.0 - a.0);
    let steep = !(local <= SLOPE_CAP);
    (exponent, degenerate || steep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Preset, Profile};
    use crate::operators::apply_lk;
    use approx::assert_relative_eq;

    fn problem(spec: &ModelSpec, eps: f64, n: Option<usize>) -> Problem {
        let opts = GridOptions {
            nodes: n,
            ..GridOptions::default()
        };
        Problem::new(spec, eps, &opts, ConvMode::FastTransform).unwrap()
    }

    /// Dense eigenvalues of the unsymmetrized matrix `K diag(w W)` on the full grid.
    fn dense_oracle(p: &Problem, k: usize) -> Vec<f64> {
        let n = p.grid.len();
        let c = p.params.influx_ratio(k);
        let psi = p.derived[k].psi.values();
        let w = p.grid.weights();
        let h = p.grid.spacing();
        let eps = p.epsilon;
        let raw: Vec<f64> = (0..n).map(|j| 0.5 / eps * (-(j as f64) * h / eps).exp()).collect();
        let mass = h * (2.0 * raw.iter().sum::<f64>() - raw[0] - raw[n - 1]);
        let m = DMatrix::from_fn(n, n, |i, j| {
            let kij = raw[i.abs_diff(j)] / mass;
            kij * w[j] * c * psi[j]
        });
        let mut ev: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    /// Root of `ω tan(ω/2) = 1/ε` in `(0, π)`.
    fn laplace_frequency(eps: f64) -> f64 {
        let (mut lo, mut hi) = (1e-12, std::f64::consts::PI - 1e-12);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * (0.5 * mid).tan() < 1.0 / eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn constant_fitness_on_an_interval_matches_closed_form() {
        // On [0, 1] the Laplace kernel has eigenfunctions cos(ω(x − ½)) with
        // eigenvalues 1/(1 + ε²ω²), ω fixed by the boundary relation above.
        let mut spec = Preset::Fig1.spec();
        spec.hosts[0].beta = Profile::Constant(1.0);
        spec.window = Some([0.0, 1.0]);
        let eps = 0.01;
        let p = problem(&spec, eps, Some(4001));
        let res = power_iteration(&p, OpKind::L1, &PowerOptions::default()).unwrap();
        let c = p.params.influx_ratio(0) * p.derived[0].psi_max;
        let omega = laplace_frequency(eps);
        let expected = c / (1.0 + eps * eps * omega * omega);
        assert_relative_eq!(res.lambda1, expected, max_relative = 1e-5);
        let shape = Field::from_fn(p.grid.clone(), |x| (omega * (x - 0.5)).cos());
        let shape = shape.scale(1.0 / shape.l1_norm());
        assert!(res.phi1.l1_distance(&shape).unwrap() < 1e-3);
    }

    #[test]
    fn power_iteration_matches_dense_oracle() {
        let p = problem(&Preset::Fig1.spec(), 0.05, Some(256));
        for k in 0..2 {
            let res = power_iteration(&p, OpKind::host(k), &PowerOptions::default()).unwrap();
            let ev = dense_oracle(&p, k);
            assert!((res.lambda1 - ev[0]).abs() < 1e-8, "{} vs {}", res.lambda1, ev[0]);
            let top = symmetric_spectrum(&p, OpKind::symmetric(k), 3).unwrap();
            for (a, b) in top.iter().zip(&ev) {
                assert!((a - b).abs() < 1e-8 * ev[0], "{a} vs {b}");
            }
        }
    }

    #[test]
    fn eigenfunction_is_nonnegative_and_satisfies_residual() {
        let p = problem(&Preset::Fig1.spec(), 0.01, None);
        let res = power_iteration(&p, OpKind::L1, &PowerOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.phi1.values().iter().all(|&v| v >= 0.0));
        assert_relative_eq!(res.phi1.l1_norm(), 1.0, epsilon = 1e-12);
        let l = apply_lk(&p, 0, &res.phi1).unwrap();
        let rq = l.integral_against(res.phi1.values()) / res.phi1.integral_against(res.phi1.values());
        assert_relative_eq!(rq, res.lambda1, max_relative = 1e-8);
        assert!(res.residual < 1e-10);
        assert!(res.lambda1 < res.r0_limit);
    }

    #[test]
    fn principal_eigenvalue_scales_with_fitness() {
        let spec = Preset::Fig1.spec();
        let p = problem(&spec, 0.02, None);
        let scaled = problem(&spec.scale_beta(3.0), 0.02, None);
        let a = power_iteration(&p, OpKind::L2, &PowerOptions::default()).unwrap();
        let b = power_iteration(&scaled, OpKind::L2, &PowerOptions::default()).unwrap();
        assert_relative_eq!(b.lambda1, 3.0 * a.lambda1, max_relative = 1e-9);
    }

    #[test]
    fn combined_operator_dominates_hosts() {
        let p = problem(&Preset::Fig1.spec(), 0.02, None);
        let opts = PowerOptions::default();
        let l = power_iteration(&p, OpKind::L, &opts).unwrap();
        let l1 = power_iteration(&p, OpKind::L1, &opts).unwrap();
        let l2 = power_iteration(&p, OpKind::L2, &opts).unwrap();
        assert!(l.lambda1 >= l1.lambda1.max(l2.lambda1) - 1e-9);
        let lim = r0_limits(&p);
        assert_relative_eq!(lim.r0, 4.0, max_relative = 1e-6);
        assert_relative_eq!(lim.r0_host[0], 4.0, max_relative = 1e-6);
        assert_relative_eq!(lim.r0_host[1], 2.0, max_relative = 1e-6);
    }

    #[test]
    fn subspace_iteration_agrees_with_dense() {
        let p = problem(&Preset::Fig1.spec(), 0.01, None);
        let (folded, _) = Folded::new(&p, OpKind::L1);
        let mut dense: Vec<f64> = folded.dense().symmetric_eigenvalues().iter().copied().collect();
        dense.sort_by(|a, b| b.total_cmp(a));
        let it = subspace_iteration(&folded, 4, &SubspaceOptions::default()).unwrap();
        for (a, b) in it.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-10 * dense[0], "{a} vs {b}");
        }
    }

    #[test]
    fn too_many_eigenvalues_rejected() {
        let p = problem(&Preset::Fig1.spec(), 0.1, Some(256));
        assert!(matches!(
            symmetric_spectrum(&p, OpKind::S1, 257),
            Err(Error::TooManyEigenvalues { .. })
        ));
        let all = symmetric_spectrum(&p, OpKind::S1, 256).unwrap();
        assert_eq!(all.len(), 256);
        assert!(all.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn symmetric_kind_rejected_by_power_iteration() {
        let p = problem(&Preset::Fig1.spec(), 0.1, Some(256));
        assert!(power_iteration(&p, OpKind::S1, &PowerOptions::default()).is_err());
    }

    #[test]
    fn gap_shrinks_algebraically_for_a_single_peak() {
        let table = spectral_gap(
            &Preset::Fig1.spec(),
            OpKind::L1,
            &[0.05, 0.02, 0.01],
            &SweepOptions::default(),
        )
        .unwrap();
        assert!(!table.at_risk);
        let n = table.exponent.unwrap();
        assert!(n > 0.5 && n < 1.5, "exponent {n}");
        assert!(table.rows.windows(2).all(|w| w[1].gap < w[0].gap));
    }

    #[test]
    fn double_peak_is_flagged() {
        let mut spec = Preset::Fig1.spec();
        spec.hosts[0].beta = Profile::Expr {
            expr: "max(0, 800 * (x - 0.2) * (0.3 - x)) + max(0, 800 * (x - 0.5) * (0.6 - x))".into(),
            support: Some([0.2, 0.6]),
        };
        let table = spectral_gap(&spec, OpKind::L1, &[0.05, 0.02, 0.01], &SweepOptions::default()).unwrap();
        assert!(table.at_risk, "{table:?}");
    }

    #[test]
    fn empty_sweep_rejected() {
        assert!(matches!(
            spectral_gap(&Preset::Fig1.spec(), OpKind::L1, &[], &SweepOptions::default()),
            Err(Error::EmptySweep)
        ));
    }
}
