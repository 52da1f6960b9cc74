//! Model parameters, derived fitness, mutation kernel and built-in presets.
//!
//! Parameters are described twice: [`ModelSpec`] is the grid-free description
//! (closed-form profiles, what a config file contains) and [`ModelParams`] is
//! that description sampled on a [`TraitGrid`].

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::grid::{Field, NodeRange, TraitGrid};

/// Minimum ε/h accepted when sampling a kernel.
pub const MIN_NODES_PER_EPSILON: f64 = 5.0;

/// Closed-form or sampled description of a trait-dependent rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    /// `amplitude * ((x - left) * (right - x))^+`
    Bump { bump: Bump },
    /// Expression in the variable `x`; `support` bounds where it is positive.
    Expr {
        expr: String,
        #[serde(default)]
        support: Option<[f64; 2]>,
    },
    /// Values at the nodes of an explicitly configured grid.
    Samples { samples: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub left: f64,
    pub right: f64,
}

impl Bump {
    pub fn eval(&self, x: f64) -> f64 {
        (self.amplitude * (x - self.left) * (self.right - x)).max(0.0)
    }

    pub fn peak(&self) -> f64 {
        0.25 * self.amplitude * (self.right - self.left).powi(2)
    }
}

impl Profile {
    pub fn bump(amplitude: f64, left: f64, right: f64) -> Self {
        Profile::Bump {
            bump: Bump {
                amplitude,
                left,
                right,
            },
        }
    }

    /// Interval outside of which the profile vanishes, when known.
    pub fn support(&self) -> Option<(f64, f64)> {
        match self {
            Profile::Constant(c) if *c == 0.0 => None,
            Profile::Constant(_) => None,
            Profile::Bump { bump } => Some((bump.left, bump.right)),
            Profile::Expr { support, .. } => support.map(|[a, b]| (a, b)),
            Profile::Samples { .. } => None,
        }
    }

    pub fn scaled(&self, s: f64) -> Profile {
        match self {
            Profile::Constant(c) => Profile::Constant(c * s),
            Profile::Bump { bump } => Profile::Bump {
                bump: Bump {
                    amplitude: bump.amplitude * s,
                    ..*bump
                },
            },
            Profile::Expr { expr, support } => Profile::Expr {
                expr: format!("{s:?} * ({expr})"),
                support: *support,
            },
            Profile::Samples { samples } => Profile::Samples {
                samples: samples.iter().map(|v| v * s).collect(),
            },
        }
    }

    pub fn sample(&self, grid: &Arc<TraitGrid>) -> Result<Field> {
        match self {
            Profile::Constant(c) => Ok(Field::constant(grid.clone(), *c)),
            Profile::Bump { bump } => {
                let b = *bump;
                Ok(Field::from_fn(grid.clone(), move |x| b.eval(x)))
            }
            Profile::Expr { expr, .. } => {
                let values = eval_expression(expr, grid.nodes())?;
                Field::new(grid.clone(), values)
            }
            Profile::Samples { samples } => Field::new(grid.clone(), samples.clone()),
        }
    }
}

fn eval_expression(expr: &str, xs: &[f64]) -> Result<Vec<f64>> {
    let parsed = Expression::parse(expr)?;
    Ok(xs.iter().map(|&x| parsed.eval(x)).collect())
}

/// Base mutation density `m` before ε-scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BaseKernel {
    /// m(x) = ½ e^{−|x|}
    #[default]
    Laplace,
    /// Standard normal density.
    Gaussian,
}

impl BaseKernel {
    pub fn density(&self, x: f64) -> f64 {
        match self {
            BaseKernel::Laplace => 0.5 * (-x.abs()).exp(),
            BaseKernel::Gaussian => (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        }
    }
}

impl fmt::Display for BaseKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseKernel::Laplace => write!(f, "laplace"),
            BaseKernel::Gaussian => write!(f, "gaussian"),
        }
    }
}

/// ε-scaled kernel sampled on the difference grid `{k h : |k| ≤ n − 1}`.
#[derive(Debug, Clone)]
pub struct MutationKernel {
    base: BaseKernel,
    epsilon: f64,
    h: f64,
    half_len: usize,
    samples: Vec<f64>,
    raw_mass: f64,
}

impl MutationKernel {
    /// Samples `m_ε(x) = ε⁻¹ m(x/ε)` and renormalizes it to unit discrete mass.
    pub fn new(base: BaseKernel, epsilon: f64, grid: &TraitGrid) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParams(format!(
                "epsilon = {epsilon} must be positive"
            )));
        }
        let h = grid.spacing();
        let ratio = epsilon / h;
        if ratio < MIN_NODES_PER_EPSILON {
            return Err(Error::UnderResolvedKernel {
                ratio,
                required: MIN_NODES_PER_EPSILON,
            });
        }
        let half_len = grid.len();
        let one_side: Vec<f64> = (0..half_len)
            .map(|k| base.density(k as f64 * h / epsilon) / epsilon)
            .collect();
        let mut samples = Vec::with_capacity(2 * half_len - 1);
        samples.extend(one_side.iter().rev());
        samples.extend(&one_side[1..]);
        let raw_mass = trapezoid_mass(&samples, h);
        for s in &mut samples {
            *s /= raw_mass;
        }
        Ok(Self {
            base,
            epsilon,
            h,
            half_len,
            samples,
            raw_mass,
        })
    }

    pub fn base(&self) -> BaseKernel {
        self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Kernel values at offsets `k h`, `k = −(n−1) ..= n−1`.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Kernel value at offset `k h`.
    pub fn at_offset(&self, k: isize) -> f64 {
        self.samples[(k + self.half_len as isize - 1) as usize]
    }

    pub fn half_len(&self) -> usize {
        self.half_len
    }

    /// Discrete mass of the truncated kernel before renormalization.
    pub fn raw_mass(&self) -> f64 {
        self.raw_mass
    }

    /// Discrete mass after renormalization.
    pub fn mass(&self) -> f64 {
        trapezoid_mass(&self.samples, self.h)
    }
}

fn trapezoid_mass(samples: &[f64], h: f64) -> f64 {
    let n = samples.len();
    let inner: f64 = samples.iter().sum();
    h * (inner - 0.5 * (samples[0] + samples[n - 1]))
}

/// Host-specific rates.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HostSpec {
    pub xi: f64,
    pub beta: Profile,
    #[serde(default = "zero_profile")]
    pub d: Profile,
    #[serde(default = "one_profile")]
    pub r: Profile,
}

fn zero_profile() -> Profile {
    Profile::Constant(0.0)
}

fn one_profile() -> Profile {
    Profile::Constant(1.0)
}

/// Grid-free model description; this is what configuration files hold.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelSpec {
    pub lambda: f64,
    pub theta: f64,
    pub delta: f64,
    pub hosts: [HostSpec; 2],
    #[serde(default)]
    pub kernel: BaseKernel,
    /// Default mutation scale.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Explicit computational window, overriding the support-based default.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
}

fn default_epsilon() -> f64 {
    1e-3
}

/// Built-in scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fig1,
    Fig2,
    Fig3,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fig1" => Ok(Preset::Fig1),
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            _ => Err(Error::UnknownPreset(s.to_string())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Preset::Fig1 => "fig1",
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
        };
        f.write_str(s)
    }
}

impl Preset {
    pub fn spec(&self) -> ModelSpec {
        let (b1, b2) = match self {
            Preset::Fig1 => (Profile::bump(200.0, 0.2, 0.6), Profile::bump(400.0, 0.7, 0.9)),
            Preset::Fig2 => (Profile::bump(200.0, 0.2, 0.6), Profile::bump(150.0, 0.7, 0.9)),
            Preset::Fig3 => (Profile::bump(200.0, 0.3, 0.7), Profile::bump(400.0, 0.6, 0.8)),
        };
        let host = |beta| HostSpec {
            xi: 0.5,
            beta,
            d: Profile::Constant(0.0),
            r: Profile::Constant(1.0),
        };
        ModelSpec {
            lambda: 1.0,
            theta: 1.0,
            delta: 1.0,
            hosts: [host(b1), host(b2)],
            kernel: BaseKernel::Laplace,
            epsilon: 1e-3,
            window: None,
        }
    }
}

pub fn preset(name: &str) -> Result<ModelSpec> {
    Ok(name.parse::<Preset>()?.spec())
}

impl ModelSpec {
    /// Multiplies both infection efficiencies by `s`.
    pub fn scale_beta(&self, s: f64) -> ModelSpec {
        let mut out = self.clone();
        for h in &mut out.hosts {
            h.beta = h.beta.scaled(s);
        }
        out
    }

    /// Convex hull of the infection-efficiency supports, when both are known.
    pub fn support_hull(&self) -> Option<(f64, f64)> {
        let (a1, b1) = self.hosts[0].beta.support()?;
        let (a2, b2) = self.hosts[1].beta.support()?;
        Some((a1.min(a2), b1.max(b2)))
    }

    pub fn sample(&self, grid: &Arc<TraitGrid>) -> Result<ModelParams> {
        let host = |h: &HostSpec| -> Result<HostParams> {
            Ok(HostParams {
                xi: h.xi,
                beta: h.beta.sample(grid)?,
                d: h.d.sample(grid)?,
                r: h.r.sample(grid)?,
            })
        };
        ModelParams::new(
            self.lambda,
            self.theta,
            self.delta,
            [host(&self.hosts[0])?, host(&self.hosts[1])?],
        )
    }
}

#[derive(Debug, Clone)]
pub struct HostParams {
    pub xi: f64,
    pub beta: Field,
    pub d: Field,
    pub r: Field,
}

/// Model parameters sampled on a grid.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub lambda: f64,
    pub theta: f64,
    pub delta: f64,
    pub hosts: [HostParams; 2],
}

impl ModelParams {
    pub fn new(lambda: f64, theta: f64, delta: f64, hosts: [HostParams; 2]) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("theta", theta), ("delta", delta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} = {v} must be positive")));
            }
        }
        for (k, h) in hosts.iter().enumerate() {
            if !(h.xi > 0.0 && h.xi < 1.0) {
                return Err(Error::InvalidParams(format!(
                    "xi_{} = {} must lie in (0, 1)",
                    k + 1,
                    h.xi
                )));
            }
            h.beta.check_same_grid(&hosts[0].beta)?;
            h.d.check_same_grid(&hosts[0].beta)?;
            h.r.check_same_grid(&hosts[0].beta)?;
        }
        Ok(Self {
            lambda,
            theta,
            delta,
            hosts,
        })
    }

    pub fn grid(&self) -> &Arc<TraitGrid> {
        self.hosts[0].beta.grid()
    }

    pub fn host(&self, k: usize) -> &HostParams {
        &self.hosts[k]
    }

    /// `ξ_k Λ / θ`
    pub fn influx_ratio(&self, k: usize) -> f64 {
        self.hosts[k].xi * self.lambda / self.theta
    }

    /// Bound on the L¹ norm of the fixed-point map: (Λ/δθ) Σ ξ_k ‖r_k‖_∞.
    pub fn mass_bound(&self) -> f64 {
        let s: f64 = self
            .hosts
            .iter()
            .map(|h| h.xi * h.r.values().iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .sum();
        self.lambda / (self.delta * self.theta) * s
    }

    /// Bound for a single host term.
    pub fn host_mass_bound(&self, k: usize) -> f64 {
        let h = &self.hosts[k];
        let rmax = h.r.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.lambda * h.xi * rmax / (self.delta * self.theta)
    }
}

/// Quantities derived from one host's rates.
#[derive(Debug, Clone)]
pub struct HostDerived {
    pub psi: Field,
    pub sigma_support: NodeRange,
    pub omega_support: NodeRange,
    pub x_star: f64,
    pub psi_max: f64,
    pub r0k: f64,
    pub warnings: Vec<String>,
}

/// Fitness Ψ_k = β_k r_k / (δ(θ + d_k)) and its summary statistics.
pub fn build_fitness(mp: &ModelParams, k: usize) -> Result<HostDerived> {
    let h = &mp.hosts[k];
    let grid = mp.grid().clone();
    let values: Vec<f64> = (0..grid.len())
        .map(|i| {
            h.beta.values()[i] * h.r.values()[i] / (mp.delta * (mp.theta + h.d.values()[i]))
        })
        .collect();
    let psi = Field::new(grid.clone(), values)?;
    let n = grid.len();
    let omega_support =
        NodeRange::bounding(n, |i| psi.values()[i] > 0.0).ok_or(Error::ZeroFitness(k + 1))?;
    let beta_pos = NodeRange::bounding(n, |i| h.beta.values()[i] > 0.0)
        .expect("positive fitness implies positive beta");
    let sigma_support = NodeRange {
        first: beta_pos.first.saturating_sub(1),
        last: (beta_pos.last + 1).min(n - 1),
    };

    let psi_max = psi.max();
    let mut warnings = Vec::new();
    let tied: Vec<usize> = (0..n)
        .filter(|&i| psi_max - psi.values()[i] <= 1e-12)
        .collect();
    if tied.windows(2).any(|w| w[1] != w[0] + 1) {
        warnings.push(format!(
            "fitness of host {} attains its maximum at several separated nodes",
            k + 1
        ));
    }
    let x_star = grid.nodes()[tied[0]];
    let r0k = mp.influx_ratio(k) * psi_max;
    Ok(HostDerived {
        psi,
        sigma_support,
        omega_support,
        x_star,
        psi_max,
        r0k,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    /// Distance between the two infection-efficiency supports (0 when they overlap).
    pub support_distance: f64,
    pub supports_separated: bool,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const OVERLAP_WARNING: &str = "overlapping supports: separation hypothesis violated";

/// Checks the standing hypotheses on the sampled parameters and kernel.
pub fn validate_assumptions(mp: &ModelParams, kernel: &MutationKernel) -> AssumptionReport {
    let mut checks = Vec::new();
    let mut warnings = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        })
    };

    let xi_sum = mp.hosts[0].xi + mp.hosts[1].xi;
    push(
        "xi_sum",
        (xi_sum - 1.0).abs() <= 1e-12,
        format!("xi_1 + xi_2 = {xi_sum}"),
    );
    let scalars_ok = [mp.lambda, mp.theta, mp.delta]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite());
    push(
        "positive_scalars",
        scalars_ok,
        format!("lambda = {}, theta = {}, delta = {}", mp.lambda, mp.theta, mp.delta),
    );
    for (k, h) in mp.hosts.iter().enumerate() {
        let ok = [&h.beta, &h.d, &h.r]
            .iter()
            .all(|f| f.values().iter().all(|v| *v >= 0.0));
        push(
            &format!("nonnegative_rates_{}", k + 1),
            ok,
            "beta, d, r nonnegative at every node".into(),
        );
    }

    let mut derived = Vec::new();
    for k in 0..2 {
        match build_fitness(mp, k) {
            Ok(d) => {
                push(&format!("fitness_nontrivial_{}", k + 1), true, format!("max = {}", d.psi_max));
                let v = d.psi.values();
                let edge = v[0].max(v[v.len() - 1]);
                push(
                    &format!("fitness_vanishes_at_edges_{}", k + 1),
                    edge <= 1e-12 * d.psi_max,
                    format!("edge value {edge:e}"),
                );
                warnings.extend(d.warnings.iter().cloned());
                derived.push(d);
            }
            Err(e) => push(&format!("fitness_nontrivial_{}", k + 1), false, e.to_string()),
        }
    }

    let samples = kernel.samples();
    let mid = kernel.half_len() - 1;
    let symmetric = (0..mid).all(|k| samples[mid - k] == samples[mid + k]);
    push("kernel_symmetric", symmetric, "m(-x) = m(x) on the difference grid".into());
    push(
        "kernel_positive",
        samples.iter().all(|v| *v > 0.0 || *v == 0.0 && kernel.base() == BaseKernel::Gaussian),
        "m > 0 on the sampled range".into(),
    );
    push(
        "kernel_unit_mass",
        (kernel.mass() - 1.0).abs() <= 1e-6,
        format!("discrete mass {} (raw {})", kernel.mass(), kernel.raw_mass()),
    );
    let tail = samples[0] / samples[mid];
    push(
        "kernel_tail_decay",
        tail <= 1e-12,
        format!("m(edge)/m(0) = {tail:e}"),
    );

    let grid = mp.grid();
    let (support_distance, supports_separated) = if derived.len() == 2 {
        let (s1, s2) = (derived[0].sigma_support, derived[1].sigma_support);
        let x = grid.nodes();
        let dist = if s1.last < s2.first {
            x[s2.first] - x[s1.last]
        } else if s2.last < s1.first {
            x[s1.first] - x[s2.last]
        } else {
            0.0
        };
        (dist, dist > 0.0)
    } else {
        (0.0, false)
    };
    if !supports_separated {
        warnings.push(OVERLAP_WARNING.to_string());
    }

    AssumptionReport {
        checks,
        warnings,
        support_distance,
        supports_separated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fig_params(p: Preset, grid: &Arc<TraitGrid>) -> ModelParams {
        p.spec().sample(grid).unwrap()
    }

    fn grid() -> Arc<TraitGrid> {
        // h = 1e-3, nodes hit 0.2, 0.4, 0.6, 0.7, 0.8, 0.9 exactly up to rounding
        Arc::new(TraitGrid::new(0.0, 1.1, 1101).unwrap())
    }

    #[test]
    fn fig1_fitness() {
        let g = grid();
        let mp = fig_params(Preset::Fig1, &g);
        let h1 = build_fitness(&mp, 0).unwrap();
        assert!((h1.x_star - 0.4).abs() < 1e-9);
        assert_relative_eq!(h1.psi_max, 8.0, max_relative = 1e-9);
        assert_relative_eq!(h1.r0k, 4.0, max_relative = 1e-9);
        // Ψ₁ = β₁ exactly when d = 0, r = 1, δ = θ = 1.
        assert_eq!(h1.psi.values(), mp.hosts[0].beta.values());

        let h2 = build_fitness(&mp, 1).unwrap();
        assert!((h2.x_star - 0.8).abs() < 1e-9);
        assert_relative_eq!(h2.psi_max, 4.0, max_relative = 1e-9);
        assert_relative_eq!(h2.r0k, 2.0, max_relative = 1e-9);
        assert!(h2.warnings.is_empty());
    }

    #[test]
    fn fig2_host2_is_subcritical() {
        let mp = fig_params(Preset::Fig2, &grid());
        let h2 = build_fitness(&mp, 1).unwrap();
        assert_relative_eq!(h2.psi_max, 1.5, max_relative = 1e-9);
        assert_relative_eq!(h2.r0k, 0.75, max_relative = 1e-9);
    }

    #[test]
    fn fitness_formula_pointwise() {
        let g = grid();
        let spec = ModelSpec {
            lambda: 2.0,
            theta: 0.5,
            delta: 3.0,
            hosts: [
                HostSpec {
                    xi: 0.3,
                    beta: Profile::bump(100.0, 0.1, 0.5),
                    d: Profile::Expr {
                        expr: "0.2 + x".into(),
                        support: None,
                    },
                    r: Profile::Constant(2.0),
                },
                HostSpec {
                    xi: 0.7,
                    beta: Profile::bump(100.0, 0.6, 1.0),
                    d: Profile::Constant(0.1),
                    r: Profile::Constant(1.5),
                },
            ],
            kernel: BaseKernel::Laplace,
            epsilon: 0.01,
            window: None,
        };
        let mp = spec.sample(&g).unwrap();
        let d = build_fitness(&mp, 0).unwrap();
        for (i, &x) in g.nodes().iter().enumerate() {
            let beta = (100.0 * (x - 0.1) * (0.5 - x)).max(0.0);
            let expected = beta * 2.0 / (3.0 * (0.5 + 0.2 + x));
            assert_relative_eq!(d.psi.values()[i], expected, max_relative = 1e-14, epsilon = 1e-300);
        }
        assert!(d.omega_support.first >= d.sigma_support.first);
        assert!(d.omega_support.last <= d.sigma_support.last);
        assert_relative_eq!(d.r0k, 0.3 * 2.0 / 0.5 * d.psi_max);
    }

    #[test]
    fn zero_fitness_rejected() {
        let g = grid();
        let mut spec = Preset::Fig1.spec();
        spec.hosts[1].beta = Profile::Constant(0.0);
        let mp = spec.sample(&g).unwrap();
        assert!(matches!(build_fitness(&mp, 1), Err(Error::ZeroFitness(2))));
    }

    #[test]
    fn multiple_maxima_warn() {
        let g = grid();
        let mut spec = Preset::Fig1.spec();
        spec.hosts[0].beta = Profile::Expr {
            expr: "max(0.0, 200.0 * (x - 0.2) * (0.4 - x)) + max(0.0, 200.0 * (x - 0.6) * (0.8 - x))"
                .into(),
            support: Some([0.2, 0.8]),
        };
        let mp = spec.sample(&g).unwrap();
        let d = build_fitness(&mp, 0).unwrap();
        assert_eq!(d.warnings.len(), 1);
        assert!((d.x_star - 0.3).abs() < 1e-9);
    }

    #[test]
    fn kernel_scaling() {
        let g = TraitGrid::new(0.0, 1.2, 8193).unwrap();
        let k = MutationKernel::new(BaseKernel::Laplace, 0.1, &TraitGrid::new(0.0, 1.2, 1025).unwrap())
            .unwrap();
        // m_ε(0) = 1/(2ε) = 5 before renormalization
        assert_relative_eq!(k.at_offset(0) * k.raw_mass(), 5.0, max_relative = 1e-12);
        assert_relative_eq!(k.mass(), 1.0, max_relative = 1e-12);

        let k = MutationKernel::new(BaseKernel::Laplace, 1e-3, &g).unwrap();
        assert_relative_eq!(k.mass(), 1.0, max_relative = 1e-12);
        let n = k.half_len() as isize;
        for j in 0..n {
            assert_eq!(k.at_offset(j), k.at_offset(-j));
        }

        let coarse = TraitGrid::new(0.0, 1.2, 1024).unwrap();
        assert!(matches!(
            MutationKernel::new(BaseKernel::Laplace, 1e-3, &coarse),
            Err(Error::UnderResolvedKernel { .. })
        ));
        assert!(MutationKernel::new(BaseKernel::Laplace, 0.0, &g).is_err());
    }

    #[test]
    fn gaussian_kernel_unit_mass() {
        let g = TraitGrid::new(-1.0, 1.0, 2001).unwrap();
        let k = MutationKernel::new(BaseKernel::Gaussian, 0.02, &g).unwrap();
        assert_relative_eq!(k.mass(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(k.raw_mass(), 1.0, max_relative = 1e-6);
    }

    #[test]
    fn assumption_reports() {
        let g = grid();
        let kernel = MutationKernel::new(BaseKernel::Laplace, 0.01, &g).unwrap();

        let rep = validate_assumptions(&fig_params(Preset::Fig1, &g), &kernel);
        assert!(rep.all_passed(), "{:#?}", rep.checks);
        assert!(rep.supports_separated);
        assert!((rep.support_distance - 0.1).abs() <= 2.0 * g.spacing());
        assert!(rep.warnings.is_empty());

        let rep = validate_assumptions(&fig_params(Preset::Fig3, &g), &kernel);
        assert!(!rep.supports_separated);
        assert!(rep.warnings.iter().any(|w| w == OVERLAP_WARNING));

        let mut mp = fig_params(Preset::Fig1, &g);
        mp.hosts[0].xi = 0.6;
        mp.hosts[1].xi = 0.6;
        let rep = validate_assumptions(&mp, &kernel);
        assert!(!rep.check("xi_sum").unwrap().passed);
    }

    #[test]
    fn presets() {
        let s1 = preset("fig1").unwrap();
        assert_eq!(s1.hosts[0].beta, Profile::bump(200.0, 0.2, 0.6));
        assert_eq!(s1.hosts[1].beta, Profile::bump(400.0, 0.7, 0.9));
        assert_eq!(s1.epsilon, 1e-3);
        assert_eq!((s1.lambda, s1.theta, s1.delta), (1.0, 1.0, 1.0));
        assert_eq!(s1.hosts[0].xi + s1.hosts[1].xi, 1.0);
        let s2 = preset("fig2").unwrap();
        assert_eq!(s2.hosts[0], s1.hosts[0]);
        assert_eq!(s2.hosts[1].beta, Profile::bump(150.0, 0.7, 0.9));
        let s3 = preset("FIG3").unwrap();
        assert_eq!(s3.hosts[0].beta, Profile::bump(200.0, 0.3, 0.7));
        assert_eq!(s3.hosts[1].beta, Profile::bump(400.0, 0.6, 0.8));
        assert!(matches!(preset("fig4"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn scaled_profiles() {
        let s = Preset::Fig1.spec().scale_beta(0.1);
        assert_eq!(s.hosts[0].beta, Profile::bump(20.0, 0.2, 0.6));
        let e = Profile::Expr {
            expr: "x * x".into(),
            support: None,
        }
        .scaled(3.0);
        let g = Arc::new(TraitGrid::new(0.0, 1.0, 16).unwrap());
        let f = e.sample(&g).unwrap();
        assert_relative_eq!(f.values()[15], 3.0);
    }

    #[test]
    fn config_roundtrip_toml() {
        let spec = Preset::Fig2.spec();
        let text = toml::to_string(&spec).unwrap();
        let back: ModelSpec = toml::from_str(&text).unwrap();
        assert_eq!(spec, back);
        let minimal = r#"
            lambda = 1.0
            theta = 1.0
            delta = 1.0
            [[hosts]]
            xi = 0.5
            beta = { bump = { amplitude = 200.0, left = 0.2, right = 0.6 } }
            [[hosts]]
            xi = 0.5
            beta = { expr = "max(0.0, 400.0 * (x - 0.7) * (0.9 - x))", support = [0.7, 0.9] }
        "#;
        let spec: ModelSpec = toml::from_str(minimal).unwrap();
        assert_eq!(spec.hosts[0].d, Profile::Constant(0.0));
        assert_eq!(spec.hosts[1].r, Profile::Constant(1.0));
        assert_eq!(spec.kernel, BaseKernel::Laplace);
        assert_eq!(spec.support_hull(), Some((0.2, 0.9)));
    }
}
