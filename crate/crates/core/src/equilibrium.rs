//! Stationary states: single-host solutions, the coupled fixed point of `T`,
//! reconstruction of the full state and the small-mutation diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::conv::ConvMode;
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::model::ModelSpec;
use crate::operators::{apply_t_values, apply_tk, OpKind};
use crate::problem::{GridOptions, Problem};
use crate::spectral::{power_iteration, PowerOptions, SpectralResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPointOptions {
    /// Target L¹ residual `‖T(A) − A‖₁` and bound on the estimated error.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial damping factor in `A ← (1 − ω) A + ω T(A)`.
    pub omega: f64,
    /// Floor for ω when the residual keeps growing.
    pub min_omega: f64,
    /// Upper clamp for the estimated contraction ratio.
    pub contraction_cap: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
            omega: 1.0,
            min_omega: 1.0 / 16.0,
            contraction_cap: 0.999,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Endemic,
    DiseaseFree,
}

/// Full stationary state rebuilt from the free-parasite density `A`.
#[derive(Debug, Clone)]
pub struct EquilibriumState {
    pub a: Field,
    pub s: [f64; 2],
    pub i: [Field; 2],
    /// `μ_k = θ + ∫ β_k A`
    pub mu: [f64; 2],
    /// `‖δ A − m_ε ⋆ (r₁ I₁ + r₂ I₂)‖₁`
    pub residual: f64,
    pub classification: Classification,
}

/// Scalar summary of an [`EquilibriumState`].
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumSummary {
    pub epsilon: f64,
    pub s1: f64,
    pub s2: f64,
    pub int_i1: f64,
    pub int_i2: f64,
    pub int_a: f64,
    pub first_moment: f64,
    pub argmax_a: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub residual: f64,
    pub classification: Classification,
}

impl EquilibriumState {
    pub fn summary(&self, epsilon: f64) -> EquilibriumSummary {
        EquilibriumSummary {
            epsilon,
            s1: self.s[0],
            s2: self.s[1],
            int_i1: self.i[0].integral(),
            int_i2: self.i[1].integral(),
            int_a: self.a.integral(),
            first_moment: self.a.first_moment(),
            argmax_a: self.a.argmax_x(),
            mu1: self.mu[0],
            mu2: self.mu[1],
            residual: self.residual,
            classification: self.classification,
        }
    }
}

/// Rebuilds `S_k`, `I_k` and `μ_k` from `A`.
pub fn reconstruct(problem: &Problem, a: &Field) -> Result<EquilibriumState> {
    a.check_on(&problem.grid)?;
    a.check_nonnegative()?;
    let p = &problem.params;
    let mu: [f64; 2] =
        std::array::from_fn(|k| p.theta + a.integral_against(p.hosts[k].beta.values()));
    let s: [f64; 2] = std::array::from_fn(|k| p.hosts[k].xi * p.lambda / mu[k]);
    let i: [Field; 2] = std::array::from_fn(|k| {
        let h = &p.hosts[k];
        let values = (0..a.len())
            .map(|j| h.beta.values()[j] * s[k] * a.values()[j] / (p.theta + h.d.values()[j]))
            .collect();
        Field::from_raw(problem.grid.clone(), values).into_density()
    });
    let source: Vec<f64> = (0..a.len())
        .map(|j| p.hosts[0].r.values()[j] * i[0].values()[j] + p.hosts[1].r.values()[j] * i[1].values()[j])
        .collect();
    let released = problem.engine.convolve_values(&source);
    let diff: Vec<f64> = a
        .values()
        .iter()
        .zip(&released)
        .map(|(a, m)| (p.delta * a - m).abs())
        .collect();
    let residual = Field::from_raw(problem.grid.clone(), diff).integral();
    let classification = if a.l1_norm() > 0.0 {
        Classification::Endemic
    } else {
        Classification::DiseaseFree
    };
    Ok(EquilibriumState {
        a: a.clone(),
        s,
        i,
        mu,
        residual,
        classification,
    })
}

/// Positive fixed point of the single-host map `T_k`, or zero below threshold.
#[derive(Debug, Clone)]
pub struct UncoupledSolution {
    pub host: usize,
    /// `θ (λ¹ − 1) / ∫ β_k φ¹`, zero when `λ¹ ≤ 1`.
    pub nu: f64,
    pub a_star: Field,
    pub spectral: SpectralResult,
    /// `‖T_k(A*) − A*‖₁`
    pub residual: f64,
}

impl UncoupledSolution {
    pub fn is_trivial(&self) -> bool {
        self.nu == 0.0
    }
}

pub fn solve_uncoupled(problem: &Problem, k: usize, opts: &PowerOptions) -> Result<UncoupledSolution> {
    let spectral = power_iteration(problem, OpKind::host(k), opts)?;
    let lambda = spectral.lambda1;
    let (nu, a_star) = if lambda > 1.0 {
        let beta_phi = spectral
            .phi1
            .integral_against(problem.params.hosts[k].beta.values());
        let nu = problem.theta() * (lambda - 1.0) / beta_phi;
        (nu, spectral.phi1.scale(nu).into_density())
    } else {
        (0.0, Field::zeros(problem.grid.clone()))
    };
    let residual = apply_tk(problem, k, &a_star)?.l1_distance(&a_star)?;
    Ok(UncoupledSolution {
        host: k,
        nu,
        a_star,
        spectral,
        residual,
    })
}

/// Outcome of the damped fixed-point iteration for `T`.
#[derive(Debug, Clone)]
pub struct CoupledSolve {
    pub state: EquilibriumState,
    pub converged: bool,
    pub iterations: usize,
    /// Final `‖T(A) − A‖₁`.
    pub residual: f64,
    /// `‖T(A) − A‖₁` at every iteration.
    pub history: Vec<f64>,
    pub omega: f64,
}

/// Normalized `Ψ₁ + Ψ₂`, the default starting point.
pub fn default_start(problem: &Problem) -> Field {
    let f = problem.derived[0].psi.add(&problem.derived[1].psi).expect("same grid");
    let mass = f.l1_norm();
    f.scale(1.0 / mass).into_density()
}

/// Fixed point of `T`; fails with [`Error::NotConverged`] when the budget runs out.
pub fn solve_coupled(problem: &Problem, start: Option<&Field>, opts: &FixedPointOptions) -> Result<CoupledSolve> {
    let solve = iterate_coupled(problem, start, opts)?;
    if !solve.converged {
        return Err(Error::NotConverged {
            what: "fixed-point iteration",
            iterations: solve.iterations,
            residual: solve.residual,
        });
    }
    Ok(solve)
}

/// Damped iteration `A ← (1 − ω) A + ω T(A)` that reports non-convergence in
/// its result.
///
/// ω is halved whenever the residual grows and restored after a run of
/// decreases. The iteration stops once the residual is below `tol` and so is
/// the a-posteriori bound `r q / (1 − q)`, with `q` the largest recent
/// residual ratio. A limit with mass below `10 tol` is classified disease-free
/// and set to zero.
pub fn iterate_coupled(problem: &Problem, start: Option<&Field>, opts: &FixedPointOptions) -> Result<CoupledSolve> {
    let start = match start {
        Some(s) => {
            s.check_on(&problem.grid)?;
            s.check_nonnegative()?;
            s.clone()
        }
        None => default_start(problem),
    };
    let w = problem.grid.weights().to_vec();
    let mut a = start.into_values();
    let mut omega = opts.omega;
    let mut prev = f64::INFINITY;
    let mut ratios: Vec<f64> = Vec::new();
    let mut streak = 0;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let t = apply_t_values(problem, &a);
        residual = t
            .iter()
            .zip(&a)
            .zip(&w)
            .map(|((t, a), w)| w * (t - a).abs())
            .sum();
        history.push(residual);
        if prev.is_finite() && prev > 0.0 {
            ratios.push(residual / prev);
            if ratios.len() > 5 {
                ratios.remove(0);
            }
        }
        let q = ratios
            .iter()
            .fold(0.0f64, |m, &r| m.max(r))
            .clamp(0.0, opts.contraction_cap);
        if residual < opts.tol && residual * q / (1.0 - q) < opts.tol {
            converged = true;
            break;
        }
        if residual > prev {
            omega = (0.5 * omega).max(opts.min_omega);
            streak = 0;
        } else {
            streak += 1;
            if streak >= 20 && omega < opts.omega {
                omega = (2.0 * omega).min(opts.omega);
                streak = 0;
            }
        }
        for (a, t) in a.iter_mut().zip(&t) {
            *a = ((1.0 - omega) * *a + omega * t).max(0.0);
        }
        prev = residual;
    }
    let mut field = Field::from_raw(problem.grid.clone(), a).into_density();
    if field.l1_norm() <= 10.0 * opts.tol {
        field = Field::zeros(problem.grid.clone());
    }
    let state = reconstruct(problem, &field)?;
    Ok(CoupledSolve {
        state,
        converged,
        iterations,
        residual,
        history,
        omega,
    })
}

/// Solutions from several seeded random positive starts.
#[derive(Debug, Clone)]
pub struct MultiStart {
    pub solves: Vec<CoupledSolve>,
    /// Largest L¹ distance between any two limits.
    pub max_pairwise_distance: f64,
}

/// Random positive start: uniform node values scaled to a mass in `[0.1, 10]`.
pub fn random_start(problem: &Problem, rng: &mut impl Rng) -> Field {
    let values: Vec<f64> = (0..problem.grid.len())
        .map(|_| rng.random_range(0.01..1.0))
        .collect();
    let f = Field::from_raw(problem.grid.clone(), values);
    let mass = rng.random_range(0.1..10.0);
    f.scale(mass / f.l1_norm()).into_density()
}

pub fn multistart(problem: &Problem, starts: usize, seed: u64, opts: &FixedPointOptions) -> Result<MultiStart> {
    let solves = (0..starts)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(j as u64));
            let start = random_start(problem, &mut rng);
            solve_coupled(problem, Some(&start), opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut max_pairwise_distance = 0.0f64;
    for i in 0..solves.len() {
        for j in i + 1..solves.len() {
            let d = solves[i].state.a.l1_distance(&solves[j].state.a)?;
            max_pairwise_distance = max_pairwise_distance.max(d);
        }
    }
    Ok(MultiStart {
        solves,
        max_pairwise_distance,
    })
}

/// Distance between the coupled solution and the sum of single-host solutions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SuperpositionError {
    /// `‖A − A₁* − A₂*‖₁`
    pub total: f64,
    /// `total / ‖A‖₁`
    pub relative: f64,
    /// `‖A − A_k*‖` restricted to `Σ_k`.
    pub on_sigma: [f64; 2],
    /// `‖A − A₁* − A₂*‖` outside `Σ₁ ∪ Σ₂`.
    pub off_sigma: f64,
}

pub fn superposition_error(
    problem: &Problem,
    a: &Field,
    uncoupled: [&UncoupledSolution; 2],
) -> Result<SuperpositionError> {
    a.check_on(&problem.grid)?;
    let sum = uncoupled[0].a_star.add(&uncoupled[1].a_star)?;
    let diff = a.sub(&sum)?;
    let total = diff.l1_norm();
    let on_sigma: [f64; 2] = std::array::from_fn(|k| {
        let d = a.sub(&uncoupled[k].a_star).expect("same grid");
        d.l1_norm_on(problem.derived[k].sigma_support)
    });
    let (s1, s2) = (problem.derived[0].sigma_support, problem.derived[1].sigma_support);
    let outside: Vec<f64> = (0..a.len())
        .map(|i| {
            if s1.contains(i) || s2.contains(i) {
                0.0
            } else {
                diff.values()[i]
            }
        })
        .collect();
    let off_sigma = Field::from_raw(problem.grid.clone(), outside).l1_norm();
    let mass = a.l1_norm();
    Ok(SuperpositionError {
        total,
        relative: if mass > 0.0 { total / mass } else { total },
        on_sigma,
        off_sigma,
    })
}

/// Scalar observables that concentrate as ε → 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcentrationValues {
    pub s: [f64; 2],
    pub int_i: [f64; 2],
    pub int_a: f64,
    pub first_moment: f64,
}

impl ConcentrationValues {
    fn of(state: &EquilibriumState) -> Self {
        Self {
            s: state.s,
            int_i: [state.i[0].integral(), state.i[1].integral()],
            int_a: state.a.integral(),
            first_moment: state.a.first_moment(),
        }
    }

    fn as_array(&self) -> [f64; 6] {
        [
            self.s[0],
            self.s[1],
            self.int_i[0],
            self.int_i[1],
            self.int_a,
            self.first_moment,
        ]
    }

    fn from_array(v: [f64; 6]) -> Self {
        Self {
            s: [v[0], v[1]],
            int_i: [v[2], v[3]],
            int_a: v[4],
            first_moment: v[5],
        }
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Componentwise absolute differences in the order
    /// `S₁, S₂, ∫I₁, ∫I₂, ∫A, ∫xA`.
    pub fn abs_diffs(&self, other: &Self) -> [f64; 6] {
        let (a, b) = (self.as_array(), other.as_array());
        std::array::from_fn(|i| (a[i] - b[i]).abs())
    }
}

/// Vanishing-mutation limits of the observables.
///
/// A host above threshold concentrates at the maximizer `x_k` of its fitness:
/// `S_k → 1/Ψ_k(x_k)`, `∫I_k → (R₀ₖ − 1)/(Ψ_k(x_k)(1 + d_k(x_k)/θ))` and it
/// contributes `θ (R₀ₖ − 1)/β_k(x_k)` to `∫A`. A host at or below threshold
/// keeps `S_k → ξ_k Λ/θ` and carries no infection.
pub fn concentration_limits(problem: &Problem) -> ConcentrationValues {
    let p = &problem.params;
    let mut out = ConcentrationValues {
        s: [0.0; 2],
        int_i: [0.0; 2],
        int_a: 0.0,
        first_moment: 0.0,
    };
    for k in 0..2 {
        let d = &problem.derived[k];
        let j = problem.grid.nearest(d.x_star);
        if d.r0k > 1.0 {
            let beta = p.hosts[k].beta.values()[j];
            let dk = p.hosts[k].d.values()[j];
            out.s[k] = 1.0 / d.psi_max;
            out.int_i[k] = (d.r0k - 1.0) / (d.psi_max * (1.0 + dk / p.theta));
            let mass = p.theta * (d.r0k - 1.0) / beta;
            out.int_a += mass;
            out.first_moment += mass * d.x_star;
        } else {
            out.s[k] = p.influx_ratio(k);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationRow {
    pub epsilon: f64,
    pub nodes: usize,
    pub s1: f64,
    pub s2: f64,
    pub int_i1: f64,
    pub int_i2: f64,
    pub int_a: f64,
    pub first_moment: f64,
    pub argmax_a: f64,
    pub residual: f64,
    pub iterations: usize,
    pub classification: Classification,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    /// Sorted by decreasing ε.
    pub rows: Vec<ConcentrationRow>,
    pub limits: ConcentrationValues,
    /// Linear-in-ε Richardson extrapolation from the two smallest ε.
    pub extrapolated: Option<ConcentrationValues>,
    /// `max |extrapolated − limits|`, falling back to the smallest-ε row.
    pub max_error: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConcentrationOptions {
    pub grid: GridOptions,
    pub mode: ConvMode,
    pub fixed_point: FixedPointOptions,
}

pub fn concentration_report(
    spec: &ModelSpec,
    eps_list: &[f64],
    opts: &ConcentrationOptions,
) -> Result<ConcentrationReport> {
    if eps_list.is_empty() {
        return Err(Error::EmptySweep);
    }
    let mut results = eps_list
        .par_iter()
        .map(|&eps| {
            let problem = Problem::new(spec, eps, &opts.grid, opts.mode)?;
            let solve = solve_coupled(&problem, None, &opts.fixed_point)?;
            Ok((eps, problem, solve))
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| b.0.total_cmp(&a.0));
    let rows: Vec<ConcentrationRow> = results
        .iter()
        .map(|(eps, problem, solve)| {
            let s = solve.state.summary(*eps);
            ConcentrationRow {
                epsilon: *eps,
                nodes: problem.grid.len(),
                s1: s.s1,
                s2: s.s2,
                int_i1: s.int_i1,
                int_i2: s.int_i2,
                int_a: s.int_a,
                first_moment: s.first_moment,
                argmax_a: s.argmax_a,
                residual: solve.residual,
                iterations: solve.iterations,
                classification: s.classification,
            }
        })
        .collect();
    let finest = results.last().expect("non-empty");
    let limits = concentration_limits(&finest.1);
    let extrapolated = (results.len() >= 2).then(|| {
        let (e1, _, s1) = &results[results.len() - 2];
        let (e2, _, s2) = &results[results.len() - 1];
        let v1 = ConcentrationValues::of(&s1.state).as_array();
        let v2 = ConcentrationValues::of(&s2.state).as_array();
        ConcentrationValues::from_array(std::array::from_fn(|i| {
            v2[i] + (v2[i] - v1[i]) * e2 / (e1 - e2)
        }))
    });
    let best = extrapolated.unwrap_or_else(|| ConcentrationValues::of(&finest.2.state));
    Ok(ConcentrationReport {
        rows,
        limits,
        extrapolated,
        max_error: best.max_abs_diff(&limits),
    })
}

/// Comparison of `μ_k/θ` with the principal eigenvalue of `L_k`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MuPinning {
    pub host: usize,
    pub mu_over_theta: f64,
    pub lambda1: f64,
    /// `μ_k/θ − λ¹(L_k)`
    pub gap: f64,
    /// A positive fixed point forces `μ_k/θ ≥ λ¹(L_k)`.
    pub inequality_holds: bool,
}

/// Slack allowed in the inequality for round-off.
pub const PINNING_SLACK: f64 = 1e-8;

pub fn mu_pinning_check(
    problem: &Problem,
    state: &EquilibriumState,
    spectral: [&SpectralResult; 2],
) -> Result<[MuPinning; 2]> {
    for (k, s) in spectral.iter().enumerate() {
        if s.kind != OpKind::host(k) {
            return Err(Error::InvalidParams(format!(
                "eigenpair {} belongs to {:?}, expected {:?}",
                k + 1,
                s.kind,
                OpKind::host(k)
            )));
        }
    }
    Ok(std::array::from_fn(|k| {
        let mu_over_theta = state.mu[k] / problem.theta();
        let lambda1 = spectral[k].lambda1;
        let gap = mu_over_theta - lambda1;
        MuPinning {
            host: k,
            mu_over_theta,
            lambda1,
            gap,
            inequality_holds: gap >= -PINNING_SLACK * lambda1,
        }
    }))
}

/// Lower bound `∫ β_k A ≥ (θ/2)(λ¹(L_k) − 1)` for hosts above threshold.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LowerBound {
    pub host: usize,
    pub infection_pressure: f64,
    pub bound: f64,
    pub applicable: bool,
    pub holds: bool,
}

pub fn lower_bound_check(
    problem: &Problem,
    state: &EquilibriumState,
    spectral: [&SpectralResult; 2],
) -> [LowerBound; 2] {
    std::array::from_fn(|k| {
        let pressure = state.mu[k] - problem.theta();
        let lambda = spectral[k].lambda1;
        let applicable = lambda > 1.0;
        let bound = 0.5 * problem.theta() * (lambda - 1.0);
        LowerBound {
            host: k,
            infection_pressure: pressure,
            bound,
            applicable,
            holds: !applicable || pressure >= bound,
        }
    })
}
