//! Linear operators L_k, L, their symmetrizations S_k, the fixed-point maps
//! T_k, T and the Fréchet derivative of T.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conv::ConvolutionEngine;
use crate::error::Result;
use crate::grid::{Field, NodeRange};
use crate::problem::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    L1,
    L2,
    L,
    S1,
    S2,
}

impl OpKind {
    pub fn host(k: usize) -> OpKind {
        if k == 0 {
            OpKind::L1
        } else {
            OpKind::L2
        }
    }

    pub fn symmetric(k: usize) -> OpKind {
        if k == 0 {
            OpKind::S1
        } else {
            OpKind::S2
        }
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, OpKind::S1 | OpKind::S2)
    }

    /// Host index for single-host kinds.
    pub fn host_index(&self) -> Option<usize> {
        match self {
            OpKind::L1 | OpKind::S1 => Some(0),
            OpKind::L2 | OpKind::S2 => Some(1),
            OpKind::L => None,
        }
    }
}

/// A weighted convolution operator bound to a problem's engine.
///
/// L-kinds act as `f ↦ m_ε ⋆ (W f)` with `W = (Λ ξ_k / θ) Ψ_k` (or the sum
/// over hosts for `L`). S-kinds act as `g ↦ √W · m_ε ⋆ (√W g)`, which is
/// symmetric for the quadrature inner product and shares its nonzero spectrum
/// with the matching L-kind.
#[derive(Debug, Clone)]
pub struct LinearOp {
    kind: OpKind,
    weight: Vec<f64>,
    support: NodeRange,
    engine: Arc<ConvolutionEngine>,
}

impl LinearOp {
    pub fn new(problem: &Problem, kind: OpKind) -> Self {
        let p = &problem.params;
        let weight: Vec<f64> = match kind.host_index() {
            Some(k) => {
                let c = p.influx_ratio(k);
                let w = problem.derived[k].psi.values().iter().map(|v| c * v);
                if kind.is_symmetric() {
                    w.map(f64::sqrt).collect()
                } else {
                    w.collect()
                }
            }
            None => {
                let (c1, c2) = (p.influx_ratio(0), p.influx_ratio(1));
                problem.derived[0]
                    .psi
                    .values()
                    .iter()
                    .zip(problem.derived[1].psi.values())
                    .map(|(a, b)| c1 * a + c2 * b)
                    .collect()
            }
        };
        let support = match kind.host_index() {
            Some(k) => problem.derived[k].omega_support,
            None => problem.omega_hull(),
        };
        Self {
            kind,
            weight,
            support,
            engine: problem.engine.clone(),
        }
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    /// Pointwise weight (√W for symmetric kinds).
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// Bounding range of the nodes where the weight is positive.
    pub fn support(&self) -> NodeRange {
        self.support
    }

    pub fn engine(&self) -> &Arc<ConvolutionEngine> {
        &self.engine
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        f.check_on(self.engine.grid())?;
        Ok(Field::from_raw(
            self.engine.grid().clone(),
            self.apply_values(f.values()),
        ))
    }

    pub fn apply_values(&self, f: &[f64]) -> Vec<f64> {
        let w = self.engine.grid().weights();
        let u: Vec<f64> = f
            .iter()
            .zip(&self.weight)
            .zip(w)
            .map(|((f, a), q)| q * a * f)
            .collect();
        let mut g = self.engine.convolve_weighted(&u);
        if self.kind.is_symmetric() {
            for (gi, a) in g.iter_mut().zip(&self.weight) {
                *gi *= a;
            }
        }
        g
    }
}

pub fn convolve(engine: &ConvolutionEngine, f: &Field) -> Result<Field> {
    engine.convolve(f)
}

pub fn apply_lk(problem: &Problem, k: usize, f: &Field) -> Result<Field> {
    LinearOp::new(problem, OpKind::host(k)).apply(f)
}

pub fn apply_l(problem: &Problem, f: &Field) -> Result<Field> {
    LinearOp::new(problem, OpKind::L).apply(f)
}

/// `1 + θ⁻¹ ∫ β_k f`
pub fn denominator(problem: &Problem, k: usize, f: &Field) -> f64 {
    1.0 + f.integral_against(problem.params.hosts[k].beta.values()) / problem.theta()
}

fn check_input(problem: &Problem, f: &Field) -> Result<()> {
    f.check_on(&problem.grid)?;
    f.check_nonnegative()
}

/// Single-host map `T_k(f) = L_k f / (1 + θ⁻¹ ∫ β_k f)`.
pub fn apply_tk(problem: &Problem, k: usize, f: &Field) -> Result<Field> {
    check_input(problem, f)?;
    let den = denominator(problem, k, f);
    let c = problem.params.influx_ratio(k) / den;
    let weights = problem.grid.weights();
    let u: Vec<f64> = f
        .values()
        .iter()
        .zip(problem.derived[k].psi.values())
        .zip(weights)
        .map(|((f, psi), w)| w * c * psi * f)
        .collect();
    Ok(Field::from_raw(
        problem.grid.clone(),
        problem.engine.convolve_weighted(&u),
    ))
}

/// Coupled map `T(f) = T_1(f) + T_2(f)`, evaluated with one convolution.
pub fn apply_t(problem: &Problem, f: &Field) -> Result<Field> {
    check_input(problem, f)?;
    Ok(Field::from_raw(
        problem.grid.clone(),
        apply_t_values(problem, f.values()),
    ))
}

pub(crate) fn apply_t_values(problem: &Problem, f: &[f64]) -> Vec<f64> {
    let field = Field::from_raw(problem.grid.clone(), f.to_vec());
    let c: [f64; 2] = std::array::from_fn(|k| {
        problem.params.influx_ratio(k) / denominator(problem, k, &field)
    });
    let (psi1, psi2) = (
        problem.derived[0].psi.values(),
        problem.derived[1].psi.values(),
    );
    let u: Vec<f64> = (0..f.len())
        .map(|i| problem.grid.weights()[i] * (c[0] * psi1[i] + c[1] * psi2[i]) * f[i])
        .collect();
    problem.engine.convolve_weighted(&u)
}

/// Derivative of `T` at `a` applied to `h`:
/// `Σ_k L_k h / D_k − L_k a · (θ⁻¹ ∫ β_k h) / D_k²` with `D_k = 1 + θ⁻¹ ∫ β_k a`.
pub fn frechet_derivative(problem: &Problem, a: &Field, h: &Field) -> Result<Field> {
    check_input(problem, a)?;
    h.check_on(&problem.grid)?;
    Ok(Field::from_raw(
        problem.grid.clone(),
        derivative_values(problem, a, h.values(), [true, true]),
    ))
}

/// Derivative of the single-host map `T_k` at `a`.
pub fn frechet_derivative_host(
    problem: &Problem,
    k: usize,
    a: &Field,
    h: &Field,
) -> Result<Field> {
    check_input(problem, a)?;
    h.check_on(&problem.grid)?;
    let mut hosts = [false, false];
    hosts[k] = true;
    Ok(Field::from_raw(
        problem.grid.clone(),
        derivative_values(problem, a, h.values(), hosts),
    ))
}

pub(crate) fn derivative_values(problem: &Problem, a: &Field, h: &[f64], hosts: [bool; 2]) -> Vec<f64> {
    let theta = problem.theta();
    let w = problem.grid.weights();
    let mut u = vec![0.0; h.len()];
    for k in (0..2).filter(|&k| hosts[k]) {
        let beta = problem.params.hosts[k].beta.values();
        let psi = problem.derived[k].psi.values();
        let c = problem.params.influx_ratio(k);
        let den = denominator(problem, k, a);
        let beta_h: f64 = h.iter().zip(beta).zip(w).map(|((h, b), w)| w * b * h).sum::<f64>() / theta;
        let lin = c / den;
        let rank_one = c * beta_h / (den * den);
        for i in 0..h.len() {
            u[i] += w[i] * psi[i] * (lin * h[i] - rank_one * a.values()[i]);
        }
    }
    problem.engine.convolve_weighted(&u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::conv::ConvMode;
    use crate::model::{Preset, Profile};
    use crate::problem::GridOptions;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fig1(eps: f64) -> Problem {
        Problem::new(&Preset::Fig1.spec(), eps, &GridOptions::default(), ConvMode::FastTransform).unwrap()
    }

    fn random_density(p: &Problem, rng: &mut ChaCha8Rng) -> Field {
        let scale = rng.random_range(0.1..10.0);
        let v = (0..p.grid.len()).map(|_| scale * rng.random::<f64>()).collect();
        Field::density(p.grid.clone(), v).unwrap()
    }

    #[test]
    fn zero_maps_to_zero() {
        let p = fig1(0.02);
        let z = Field::zeros(p.grid.clone());
        assert_eq!(apply_lk(&p, 0, &z).unwrap().l1_norm(), 0.0);
        assert_eq!(apply_l(&p, &z).unwrap().l1_norm(), 0.0);
        assert_eq!(apply_tk(&p, 1, &z).unwrap().l1_norm(), 0.0);
        assert_eq!(apply_t(&p, &z).unwrap().l1_norm(), 0.0);
    }

    #[test]
    fn constant_fitness_eigenfunction() {
        let mut spec = Preset::Fig1.spec();
        spec.hosts[0].beta = Profile::Constant(3.0);
        spec.window = Some([0.0, 2.0]);
        let p = Problem::new(&spec, 0.01, &GridOptions::default(), ConvMode::FastTransform).unwrap();
        let one = Field::constant(p.grid.clone(), 1.0);
        let g = apply_lk(&p, 0, &one).unwrap();
        for (x, v) in p.grid.nodes().iter().zip(g.values()) {
            if *x > 0.3 && *x < 1.7 {
                assert_relative_eq!(*v, 0.5 * 3.0, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn lk_mass_of_constant_input() {
        // (Λξ₁/θ) ∫Ψ₁ = 0.5 · 200 · 0.4³ / 6
        let p = fig1(0.01);
        let one = Field::constant(p.grid.clone(), 1.0);
        let g = apply_lk(&p, 0, &one).unwrap();
        let exact = 0.5 * 200.0 * 0.4f64.powi(3) / 6.0;
        assert_relative_eq!(g.l1_norm(), exact, max_relative = 1e-5);
    }

    #[test]
    fn l_is_sum_of_parts() {
        let p = fig1(0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_density(&p, &mut rng);
        let a = apply_l(&p, &f).unwrap();
        let b = apply_lk(&p, 0, &f).unwrap().add(&apply_lk(&p, 1, &f).unwrap()).unwrap();
        assert!(a.l1_distance(&b).unwrap() <= 1e-12 * a.l1_norm());
    }

    #[test]
    fn separated_hosts_do_not_leak() {
        let p = fig1(1e-3).with_mode(ConvMode::DirectQuadrature);
        let one = Field::constant(p.grid.clone(), 1.0);
        let g = apply_lk(&p, 0, &one).unwrap();
        assert!(g.l1_norm_on(p.derived[1].sigma_support) < 1e-12);
    }

    #[test]
    fn tk_reduces_to_lk_without_infection() {
        let p = fig1(0.02);
        // supported away from β₁ so that ∫β₁ f = 0
        let f = Field::from_fn(p.grid.clone(), |x| if x > 0.65 { 1.0 } else { 0.0 });
        let t = apply_tk(&p, 0, &f).unwrap();
        let l = apply_lk(&p, 0, &f).unwrap();
        assert_eq!(t.values(), l.values());
    }

    #[test]
    fn t_bounded_by_l_and_mass_bound() {
        let p = fig1(0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let f = random_density(&p, &mut rng);
            let t = apply_t(&p, &f).unwrap();
            let l = apply_l(&p, &f).unwrap();
            for (a, b) in t.values().iter().zip(l.values()) {
                assert!(*a <= *b * (1.0 + 1e-12) + 1e-300);
            }
            assert!(t.l1_norm() <= p.params.mass_bound() + 1e-12);
            assert!(apply_tk(&p, 0, &f).unwrap().l1_norm() <= p.params.host_mass_bound(0) + 1e-12);
        }
        assert_relative_eq!(p.params.mass_bound(), 1.0);
        assert_relative_eq!(p.params.host_mass_bound(0), 0.5);
    }

    #[test]
    fn negative_input_rejected() {
        let p = fig1(0.02);
        let f = Field::constant(p.grid.clone(), -1.0);
        assert!(matches!(apply_t(&p, &f), Err(Error::NegativeDensity { .. })));
        assert!(matches!(apply_tk(&p, 0, &f), Err(Error::NegativeDensity { .. })));
    }

    #[test]
    fn derivative_at_zero_is_l() {
        let p = fig1(0.02);
        let z = Field::zeros(p.grid.clone());
        let h = Field::from_fn(p.grid.clone(), |x| (7.0 * x).sin());
        let d = frechet_derivative(&p, &z, &h).unwrap();
        let l = apply_l(&p, &h).unwrap();
        assert!(d.l1_distance(&l).unwrap() <= 1e-13 * l.l1_norm());
    }

    #[test]
    fn derivative_matches_central_differences() {
        let p = fig1(0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let a = random_density(&p, &mut rng).scale(0.1);
            let freq: f64 = rng.random_range(1.0..20.0);
            let h = Field::from_fn(p.grid.clone(), |x| (x * freq).cos().abs());
            let step = 1e-7;
            let plus = apply_t(&p, &a.zip_with(&h, |a, h| a + step * h).unwrap()).unwrap();
            let minus = apply_t(&p, &a.zip_with(&h, |a, h| a - step * h).unwrap()).unwrap();
            let fd = plus.sub(&minus).unwrap().scale(0.5 / step);
            let d = frechet_derivative(&p, &a, &h).unwrap();
            let rel = d.l1_distance(&fd).unwrap() / d.l1_norm();
            assert!(rel < 1e-6, "relative error {rel}");
        }
    }

    #[test]
    fn derivative_is_linear() {
        let p = fig1(0.02);
        let a = Field::from_fn(p.grid.clone(), |x| (x - 0.5).powi(2));
        let h1 = Field::from_fn(p.grid.clone(), |x| (9.0 * x).sin());
        let h2 = Field::from_fn(p.grid.clone(), |x| (3.0 * x).cos());
        let alpha = -2.5;
        let lhs = frechet_derivative(&p, &a, &h1.scale(alpha).add(&h2).unwrap()).unwrap();
        let rhs = frechet_derivative(&p, &a, &h1)
            .unwrap()
            .scale(alpha)
            .add(&frechet_derivative(&p, &a, &h2).unwrap())
            .unwrap();
        assert!(lhs.l1_distance(&rhs).unwrap() <= 1e-12 * lhs.l1_norm().max(1.0));
    }

    #[test]
    fn symmetrized_operator() {
        let p = fig1(0.02).with_mode(ConvMode::DirectQuadrature);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for k in 0..2 {
            let s = LinearOp::new(&p, OpKind::symmetric(k));
            let l = LinearOp::new(&p, OpKind::host(k));
            let f: Vec<f64> = (0..p.grid.len()).map(|_| rng.random::<f64>() - 0.5).collect();
            let g: Vec<f64> = (0..p.grid.len()).map(|_| rng.random::<f64>() - 0.5).collect();
            let f = Field::new(p.grid.clone(), f).unwrap();
            let g = Field::new(p.grid.clone(), g).unwrap();
            let sf = s.apply(&f).unwrap();
            let sg = s.apply(&g).unwrap();
            let lhs = sf.integral_against(g.values());
            let rhs = f.integral_against(sg.values());
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));

            // S(√W f) = √W L f
            let root = s.weight().to_vec();
            let rf = f.zip_with(&Field::new(p.grid.clone(), root.clone()).unwrap(), |a, b| a * b).unwrap();
            let left = s.apply(&rf).unwrap();
            let right = l.apply(&f).unwrap();
            for i in s.support().iter() {
                let r = root[i] * right.values()[i];
                assert!((left.values()[i] - r).abs() <= 1e-10 * r.abs().max(1.0));
            }
        }
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use crate::conv::ConvMode;
    use crate::model::Preset;
    use crate::problem::GridOptions;
    use proptest::prelude::*;

    fn fig1() -> Problem {
        Problem::new(&Preset::Fig1.spec(), 0.05, &GridOptions::with_nodes(257), ConvMode::FastTransform).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn t_is_positive_and_bounded(values in prop::collection::vec(0.0f64..50.0, 257)) {
            let p = fig1();
            let f = Field::density(p.grid.clone(), values).unwrap();
            let t = apply_t(&p, &f).unwrap();
            prop_assert!(t.values().iter().all(|&v| v >= 0.0));
            prop_assert!(t.l1_norm() <= p.params.mass_bound() * (1.0 + 1e-12));
        }

        #[test]
        fn l_is_monotone(values in prop::collection::vec(0.0f64..5.0, 257), bump in prop::collection::vec(0.0f64..1.0, 257)) {
            let p = fig1();
            let f = Field::density(p.grid.clone(), values.clone()).unwrap();
            let g = Field::density(p.grid.clone(), values.iter().zip(&bump).map(|(a, b)| a + b).collect()).unwrap();
            let lf = apply_l(&p, &f).unwrap();
            let lg = apply_l(&p, &g).unwrap();
            prop_assert!(lf.values().iter().zip(lg.values()).all(|(a, b)| *a <= *b + 1e-12 * b.abs()));
        }
    }
}
