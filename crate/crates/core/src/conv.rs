//! Toeplitz convolution with the sampled mutation kernel.
//!
//! `g_i = Σ_j K[(i − j) h] u_j` is evaluated either by direct summation or by
//! a zero-padded circular FFT convolution. Quadrature weights are applied by
//! [`ConvolutionEngine`]; [`Toeplitz`] works on raw (already weighted) input.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{Field, NodeRange, TraitGrid};
use crate::model::MutationKernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConvMode {
    /// O(n²) quadrature sum; the reference backend.
    DirectQuadrature,
    /// O(n log n) zero-padded FFT.
    #[default]
    FastTransform,
}

impl std::str::FromStr for ConvMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "direct" | "direct_quadrature" => Ok(ConvMode::DirectQuadrature),
            "fast" | "fft" | "fast_transform" => Ok(ConvMode::FastTransform),
            _ => Err(format!("unknown convolution mode '{s}'")),
        }
    }
}

struct FftPlan {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<Complex<f64>>,
}

/// Convolution by a symmetric Toeplitz matrix of order `len`.
pub struct Toeplitz {
    len: usize,
    /// Kernel at offsets −(len−1) ..= len−1.
    taps: Vec<f64>,
    mode: ConvMode,
    plan: Option<FftPlan>,
}

impl std::fmt::Debug for Toeplitz {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Toeplitz")
            .field("len", &self.len)
            .field("mode", &self.mode)
            .finish()
    }
}

impl Toeplitz {
    /// Order-`len` block of the kernel; `len` may not exceed the kernel's grid size.
    pub fn new(kernel: &MutationKernel, len: usize, mode: ConvMode) -> Self {
        assert!(len >= 1 && len <= kernel.half_len());
        let mid = kernel.half_len() - 1;
        let taps = kernel.samples()[mid + 1 - len..mid + len].to_vec();
        let plan = match mode {
            ConvMode::DirectQuadrature => None,
            ConvMode::FastTransform => Some(Self::plan(&taps, len)),
        };
        Self {
            len,
            taps,
            mode,
            plan,
        }
    }

    fn plan(taps: &[f64], len: usize) -> FftPlan {
        let size = (2 * len - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let mut kernel_hat = vec![Complex::new(0.0, 0.0); size];
        for (dst, &t) in kernel_hat.iter_mut().zip(taps) {
            dst.re = t;
        }
        forward.process(&mut kernel_hat);
        let scale = 1.0 / size as f64;
        for c in &mut kernel_hat {
            *c *= scale;
        }
        FftPlan {
            size,
            forward,
            inverse,
            kernel_hat,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn mode(&self) -> ConvMode {
        self.mode
    }

    #[inline]
    pub fn tap(&self, offset: isize) -> f64 {
        self.taps[(offset + self.len as isize - 1) as usize]
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        self.apply_into(input, &mut out);
        out
    }

    pub fn apply_into(&self, input: &[f64], out: &mut [f64]) {
        assert_eq!(input.len(), self.len);
        assert_eq!(out.len(), self.len);
        match &self.plan {
            None => self.apply_direct(input, out),
            Some(plan) => {
                self.apply_fft(plan, input, out);
                // The exact result of a nonnegative input is nonnegative; round-off
                // from the transform is clipped so that positivity is preserved.
                if input.iter().all(|&v| v >= 0.0) {
                    for v in out.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
    }

    fn apply_direct(&self, input: &[f64], out: &mut [f64]) {
        let m = self.len;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, &u) in input.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            // column j of the Toeplitz matrix is taps[m-1-j ..= 2m-2-j]
            let col = &self.taps[m - 1 - j..2 * m - 1 - j];
            for (o, &k) in out.iter_mut().zip(col) {
                *o += k * u;
            }
        }
    }

    fn apply_fft(&self, plan: &FftPlan, input: &[f64], out: &mut [f64]) {
        let mut buf = vec![Complex::new(0.0, 0.0); plan.size];
        for (b, &u) in buf.iter_mut().zip(input) {
            b.re = u;
        }
        plan.forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&plan.kernel_hat) {
            *b *= *k;
        }
        plan.inverse.process(&mut buf);
        let m = self.len;
        for (o, b) in out.iter_mut().zip(&buf[m - 1..2 * m - 1]) {
            *o = b.re;
        }
    }

    /// Dense matrix `K[(i − j) h]`, row-major.
    pub fn dense(&self) -> Vec<f64> {
        let m = self.len;
        let mut a = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                a[i * m + j] = self.tap(i as isize - j as isize);
            }
        }
        a
    }
}

/// Quadrature convolution `g(x_i) = Σ_j w_j m_ε(x_i − x_j) f(x_j)` on a grid.
#[derive(Debug)]
pub struct ConvolutionEngine {
    grid: Arc<TraitGrid>,
    kernel: Arc<MutationKernel>,
    full: Toeplitz,
}

impl ConvolutionEngine {
    pub fn new(grid: Arc<TraitGrid>, kernel: Arc<MutationKernel>, mode: ConvMode) -> Self {
        let full = Toeplitz::new(&kernel, grid.len(), mode);
        Self { grid, kernel, full }
    }

    pub fn grid(&self) -> &Arc<TraitGrid> {
        &self.grid
    }

    pub fn kernel(&self) -> &Arc<MutationKernel> {
        &self.kernel
    }

    pub fn mode(&self) -> ConvMode {
        self.full.mode()
    }

    pub fn convolve(&self, f: &Field) -> Result<Field> {
        f.check_on(&self.grid)?;
        Ok(Field::from_raw(self.grid.clone(), self.convolve_values(f.values())))
    }

    /// Convolution of raw node values (weights applied here).
    pub fn convolve_values(&self, values: &[f64]) -> Vec<f64> {
        let u: Vec<f64> = values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| v * w)
            .collect();
        self.full.apply(&u)
    }

    /// Convolution of already-weighted values `w_j f_j` over the full grid.
    pub fn convolve_weighted(&self, weighted: &[f64]) -> Vec<f64> {
        self.full.apply(weighted)
    }

    /// Toeplitz block acting on the nodes of `range` only.
    pub fn restricted(&self, range: NodeRange) -> Toeplitz {
        Toeplitz::new(&self.kernel, range.len(), self.mode())
    }

    pub fn toeplitz(&self) -> &Toeplitz {
        &self.full
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use crate::model::BaseKernel;
    use proptest::prelude::*;

    fn engine(n: usize, eps: f64, mode: ConvMode) -> ConvolutionEngine {
        let grid = Arc::new(TraitGrid::new(0.0, 1.0, n).unwrap());
        let kernel = Arc::new(MutationKernel::new(BaseKernel::Laplace, eps, &grid).unwrap());
        ConvolutionEngine::new(grid, kernel, mode)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn backends_agree(values in prop::collection::vec(-10.0f64..10.0, 301), eps in 0.02f64..0.2) {
            let fast = engine(301, eps, ConvMode::FastTransform);
            let direct = engine(301, eps, ConvMode::DirectQuadrature);
            let a = fast.convolve_values(&values);
            let b = direct.convolve_values(&values);
            let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-10 * scale);
            }
        }

        #[test]
        fn kernel_has_unit_mass(eps in 0.01f64..0.3) {
            let e = engine(1001, eps, ConvMode::FastTransform);
            prop_assert!((e.kernel().mass() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn convolution_is_linear(u in prop::collection::vec(-1.0f64..1.0, 129), v in prop::collection::vec(-1.0f64..1.0, 129), c in -3.0f64..3.0) {
            let e = engine(129, 0.1, ConvMode::FastTransform);
            let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + c * b).collect();
            let lhs = e.convolve_values(&combo);
            let (cu, cv) = (e.convolve_values(&u), e.convolve_values(&v));
            for i in 0..129 {
                prop_assert!((lhs[i] - cu[i] - c * cv[i]).abs() < 1e-12);
            }
        }
    }
}
