//! Time integration of the full host–parasite system
//!
//! `dS_k/dt = ξ_k Λ − θ S_k − S_k ∫ β_k A`,
//! `∂I_k/∂t = β_k S_k A − (θ + d_k) I_k`,
//! `∂A/∂t  = −δ A + m_ε ⋆ (r₁ I₁ + r₂ I₂)`
//!
//! with fixed-step explicit Euler or classical Runge–Kutta.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{default_start, EquilibriumState};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::problem::Problem;

/// Undershoots down to this value are clipped to zero; below it they are errors.
pub const NEGATIVE_SLACK: f64 = 1e-12;

/// Any norm above this aborts the run.
pub const BLOW_UP_NORM: f64 = 1e12;

/// Amplitude of the parasite perturbation in [`canonical_start`].
pub const CANONICAL_AMPLITUDE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    #[default]
    Rk4,
}

impl Method {
    /// Largest `dt · rate` accepted before the run starts.
    pub fn step_bound(&self) -> f64 {
        match self {
            Method::Euler => 1.0,
            // Real-axis stability interval of classical RK4.
            Method::Rk4 => 2.78,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            other => Err(Error::InvalidParams(format!(
                "unknown integrator '{other}' (expected euler or rk4)"
            ))),
        }
    }
}

/// State of the system at time `t`.
#[derive(Debug, Clone)]
pub struct SystemState {
    pub t: f64,
    pub s: [f64; 2],
    pub i: [Field; 2],
    pub a: Field,
}

impl SystemState {
    fn pack(&self) -> Vec<f64> {
        let n = self.a.len();
        let mut y = Vec::with_capacity(2 + 3 * n);
        y.extend_from_slice(&self.s);
        y.extend_from_slice(self.i[0].values());
        y.extend_from_slice(self.i[1].values());
        y.extend_from_slice(self.a.values());
        y
    }

    fn unpack(problem: &Problem, t: f64, y: &[f64]) -> Self {
        let n = problem.grid.len();
        let field = |r: std::ops::Range<usize>| Field::from_raw(problem.grid.clone(), y[r].to_vec());
        Self {
            t,
            s: [y[0], y[1]],
            i: [field(2..2 + n), field(2 + n..2 + 2 * n)],
            a: field(2 + 2 * n..2 + 3 * n),
        }
    }

    fn check(&self, problem: &Problem) -> Result<()> {
        for f in [&self.i[0], &self.i[1], &self.a] {
            f.check_on(&problem.grid)?;
        }
        Ok(())
    }
}

/// Disease-free state `S_k = ξ_k Λ/θ`, `I = A = 0`.
pub fn disease_free_state(problem: &Problem) -> SystemState {
    let p = &problem.params;
    let zero = Field::zeros(problem.grid.clone());
    SystemState {
        t: 0.0,
        s: [p.influx_ratio(0), p.influx_ratio(1)],
        i: [zero.clone(), zero.clone()],
        a: zero,
    }
}

/// Disease-free hosts with `A = amplitude · (Ψ₁ + Ψ₂)/‖Ψ₁ + Ψ₂‖₁` and no infected hosts.
pub fn canonical_start(problem: &Problem, amplitude: f64) -> SystemState {
    let mut state = disease_free_state(problem);
    state.a = default_start(problem).scale(amplitude);
    state
}

/// The stationary state as an initial condition.
pub fn state_from_equilibrium(eq: &EquilibriumState) -> SystemState {
    SystemState {
        t: 0.0,
        s: eq.s,
        i: eq.i.clone(),
        a: eq.a.clone(),
    }
}

fn derivative(problem: &Problem, y: &[f64], out: &mut [f64]) {
    let p = &problem.params;
    let n = problem.grid.len();
    let w = problem.grid.weights();
    let a = &y[2 + 2 * n..];
    let mut source = vec![0.0; n];
    for k in 0..2 {
        let h = &p.hosts[k];
        let (beta, d, r) = (h.beta.values(), h.d.values(), h.r.values());
        let s = y[k];
        let i = &y[2 + k * n..2 + (k + 1) * n];
        let pressure: f64 = (0..n).map(|j| w[j] * beta[j] * a[j]).sum();
        out[k] = h.xi * p.lambda - p.theta * s - s * pressure;
        let di = &mut out[2 + k * n..2 + (k + 1) * n];
        for j in 0..n {
            di[j] = beta[j] * s * a[j] - (p.theta + d[j]) * i[j];
            source[j] += r[j] * i[j];
        }
    }
    let released = problem.engine.convolve_values(&source);
    let da = &mut out[2 + 2 * n..];
    for j in 0..n {
        da[j] = -p.delta * a[j] + released[j];
    }
}

/// Time derivative of `state`; the returned state holds derivatives and the same `t`.
pub fn rhs(problem: &Problem, state: &SystemState) -> Result<SystemState> {
    state.check(problem)?;
    let y = state.pack();
    let mut dy = vec![0.0; y.len()];
    derivative(problem, &y, &mut dy);
    Ok(SystemState::unpack(problem, state.t, &dy))
}

/// L¹ size of a state: `|S₁| + |S₂| + ‖I₁‖₁ + ‖I₂‖₁ + ‖A‖₁`.
pub fn state_norm(state: &SystemState) -> f64 {
    state.s[0].abs()
        + state.s[1].abs()
        + state.i[0].l1_norm()
        + state.i[1].l1_norm()
        + state.a.l1_norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrateOptions {
    pub t_end: f64,
    pub dt: f64,
    pub method: Method,
    /// Time between recorded samples.
    pub sample_every: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            t_end: 200.0,
            dt: 0.01,
            method: Method::Rk4,
            sample_every: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub s1: f64,
    pub s2: f64,
    pub i1_mass: f64,
    pub i2_mass: f64,
    pub a_mass: f64,
    pub argmax_a: f64,
    /// `‖A(t) − A_ref‖₁` when a reference density was given.
    pub distance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub terminal: SystemState,
    pub steps: usize,
    /// Number of values in `[−NEGATIVE_SLACK, 0)` clipped to zero.
    pub clip_events: usize,
}

impl Trajectory {
    /// L¹ masses of `A` at the recorded samples.
    pub fn a_masses(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.a_mass).collect()
    }
}

/// Stiffness scale `θ + δ + max d + max β · max(‖A₀‖₁, mass bound)`.
pub fn rate_bound(problem: &Problem, init: &SystemState) -> f64 {
    let p = &problem.params;
    let sup = |f: &Field| f.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_d = sup(&p.hosts[0].d).max(sup(&p.hosts[1].d));
    let max_beta = sup(&p.hosts[0].beta).max(sup(&p.hosts[1].beta));
    let mass = init.a.l1_norm().max(p.mass_bound());
    p.theta + p.delta + max_d + max_beta * mass
}

fn sample(state: &SystemState, reference: Option<&Field>) -> TrajectorySample {
    TrajectorySample {
        t: state.t,
        s1: state.s[0],
        s2: state.s[1],
        i1_mass: state.i[0].l1_norm(),
        i2_mass: state.i[1].l1_norm(),
        a_mass: state.a.l1_norm(),
        argmax_a: state.a.argmax_x(),
        distance: reference.map(|r| state.a.l1_distance(r).expect("same grid")),
    }
}

const COMPONENTS: [&str; 5] = ["S1", "S2", "I1", "I2", "A"];

fn component(n: usize, idx: usize) -> &'static str {
    match idx {
        0 => COMPONENTS[0],
        1 => COMPONENTS[1],
        j => COMPONENTS[2 + (j - 2) / n],
    }
}

/// Integrates from `init` to `opts.t_end` with a fixed step.
pub fn integrate(
    problem: &Problem,
    init: &SystemState,
    opts: &IntegrateOptions,
    reference: Option<&Field>,
) -> Result<Trajectory> {
    init.check(problem)?;
    if let Some(r) = reference {
        r.check_on(&problem.grid)?;
    }
    if !(opts.dt > 0.0) || !(opts.t_end >= init.t) {
        return Err(Error::InvalidParams(format!(
            "need dt > 0 and t_end >= t0 (dt = {}, t_end = {}, t0 = {})",
            opts.dt, opts.t_end, init.t
        )));
    }
    let bound = opts.method.step_bound() / rate_bound(problem, init);
    if opts.dt >= bound {
        return Err(Error::UnstableStep { dt: opts.dt, bound });
    }
    let n = problem.grid.len();
    let steps = ((opts.t_end - init.t) / opts.dt).round() as usize;
    let stride = ((opts.sample_every / opts.dt).round() as usize).max(1);
    let dt = opts.dt;
    let mut y = init.pack();
    let len = y.len();
    let mut k1 = vec![0.0; len];
    let mut k2 = vec![0.0; len];
    let mut k3 = vec![0.0; len];
    let mut k4 = vec![0.0; len];
    let mut tmp = vec![0.0; len];
    let mut samples = vec![sample(init, reference)];
    let mut clip_events = 0;
    for step in 1..=steps {
        let t = init.t + step as f64 * dt;
        match opts.method {
            Method::Euler => {
                derivative(problem, &y, &mut k1);
                for (v, d) in y.iter_mut().zip(&k1) {
                    *v += dt * d;
                }
            }
            Method::Rk4 => {
                derivative(problem, &y, &mut k1);
                for j in 0..len {
                    tmp[j] = y[j] + 0.5 * dt * k1[j];
                }
                derivative(problem, &tmp, &mut k2);
                for j in 0..len {
                    tmp[j] = y[j] + 0.5 * dt * k2[j];
                }
                derivative(problem, &tmp, &mut k3);
                for j in 0..len {
                    tmp[j] = y[j] + dt * k3[j];
                }
                derivative(problem, &tmp, &mut k4);
                for j in 0..len {
                    y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                }
            }
        }
        let mut total = 0.0;
        for (j, v) in y.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::BlowUp { t, norm: f64::INFINITY });
            }
            if *v < 0.0 {
                if *v < -NEGATIVE_SLACK {
                    return Err(Error::Undershoot {
                        component: component(n, j),
                        t,
                        value: *v,
                    });
                }
                *v = 0.0;
                clip_events += 1;
            }
            total += v.abs();
        }
        if total > BLOW_UP_NORM {
            return Err(Error::BlowUp { t, norm: total });
        }
        if step % stride == 0 || step == steps {
            let state = SystemState::unpack(problem, t, &y);
            samples.push(sample(&state, reference));
        }
    }
    let terminal_t = init.t + steps as f64 * dt;
    let terminal = SystemState::unpack(problem, terminal_t, &y);
    let terminal = SystemState {
        i: [
            terminal.i[0].clone().into_density(),
            terminal.i[1].clone().into_density(),
        ],
        a: terminal.a.clone().into_density(),
        ..terminal
    };
    Ok(Trajectory {
        samples,
        terminal,
        steps,
        clip_events,
    })
}
