//! Controlled diffusions on a box and their Markov-chain discretizations.
//!
//! Drift and diffusion come from a small closed catalog so Lipschitz
//! constants can be checked analytically. `discretize_kernel` turns a
//! problem into a [`TabularMdp`] whose per-step moments match the Euler
//! increment; the submodules simulate paths, couple them to the chain, and
//! measure forward hitting times.

mod coupling;
mod hitting;
mod kernel;

pub use coupling::{coupling_experiment, euler_maruyama_path, fit_tail_constant, CouplingReport};
pub use hitting::{
    continuous_reference, forward_hitting_time, mesh_for_tolerance, operator_consistency_error, HitOutcome,
    MeshChoice, Reference, TestFunction,
};
pub use kernel::{
    discretize_kernel, feasibility_bound, kernel_moments, reference_moments, trinomial, Increment, Moments,
};

use crate::error::{invalid, Result};
use crate::metric::{FiniteMetricSpace, MetricKind};

#[derive(Debug, Clone, PartialEq)]
pub enum DriftForm {
    /// b(s,a) = u_a
    Constant,
    /// b(s,a) = u_a + κ(θ − s), componentwise (Ornstein–Uhlenbeck family).
    Affine { kappa: f64, theta: Vec<f64> },
    /// b(s,a) = u_a + β sin(ω s), componentwise.
    Sinusoid { beta: f64, omega: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionForm {
    /// σ(s,a) = σ·I
    Constant { sigma: f64 },
    /// σ(s,a) = (σ₀ + σ₁ sin(ω s₀))·I with |σ₁| < σ₀.
    Smooth { sigma0: f64, sigma1: f64, omega: f64 },
}

/// Running reward rate, state-only.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardForm {
    Zero,
    /// height·max(0, 1 − ‖s − center‖/width)
    Tent { center: Vec<f64>, width: f64, height: f64 },
    /// height·exp(−‖s − center‖²/(2 width²))
    Gaussian { center: Vec<f64>, width: f64, height: f64 },
}

impl RewardForm {
    pub fn eval(&self, s: &[f64]) -> f64 {
        match self {
            RewardForm::Zero => 0.0,
            RewardForm::Tent { center, width, height } => {
                let d = MetricKind::Euclidean.eval(s, center);
                height * (1.0 - d / width).max(0.0)
            }
            RewardForm::Gaussian { center, width, height } => {
                let d2: f64 = s.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum();
                height * (-d2 / (2.0 * width * width)).exp()
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            RewardForm::Zero => 0.0,
            RewardForm::Tent { width, height, .. } => height / width,
            // max of |x| e^{−x²/2w²}/w² is e^{−1/2}/w
            RewardForm::Gaussian { width, height, .. } => height * (-0.5f64).exp() / width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlledDiffusionSpec {
    pub dim: usize,
    pub drift: DriftForm,
    pub diffusion: DiffusionForm,
    /// Control vectors u_a, one per action.
    pub actions: Vec<Vec<f64>>,
    pub reward: RewardForm,
    /// Continuous-time discount rate; one step of length δ discounts by 1 − rate·δ.
    pub discount_rate: f64,
    /// Declared Lipschitz constant of b and σ in the state.
    pub lipschitz: f64,
}

impl ControlledDiffusionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if self.actions.is_empty() || self.actions.iter().any(|u| u.len() != self.dim) {
            return Err(invalid("every action needs a control vector of the state dimension"));
        }
        if !(self.discount_rate > 0.0) {
            return Err(invalid("discount rate must be positive"));
        }
        if let DriftForm::Affine { theta, .. } = &self.drift {
            if theta.len() != self.dim {
                return Err(invalid("affine drift target has the wrong dimension"));
            }
        }
        if let DiffusionForm::Smooth { sigma0, sigma1, .. } = self.diffusion {
            if !(sigma1.abs() < sigma0) {
                return Err(invalid("smooth diffusion needs |sigma1| < sigma0"));
            }
        }
        if self.lipschitz + 1e-12 < self.analytic_lipschitz() {
            return Err(invalid(format!(
                "declared Lipschitz constant {} is below the analytic value {}",
                self.lipschitz,
                self.analytic_lipschitz()
            )));
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn drift(&self, s: &[f64], a: usize) -> Vec<f64> {
        let u = &self.actions[a];
        match &self.drift {
            DriftForm::Constant => u.clone(),
            DriftForm::Affine { kappa, theta } => {
                (0..self.dim).map(|i| u[i] + kappa * (theta[i] - s[i])).collect()
            }
            DriftForm::Sinusoid { beta, omega } => {
                (0..self.dim).map(|i| u[i] + beta * (omega * s[i]).sin()).collect()
            }
        }
    }

    /// ∂b_i/∂s_i and ∂²b_i/∂s_i² (all catalog drifts are separable).
    pub fn drift_derivatives(&self, s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match &self.drift {
            DriftForm::Constant => (vec![0.0; self.dim], vec![0.0; self.dim]),
            DriftForm::Affine { kappa, .. } => (vec![-kappa; self.dim], vec![0.0; self.dim]),
            DriftForm::Sinusoid { beta, omega } => (
                s.iter().map(|x| beta * omega * (omega * x).cos()).collect(),
                s.iter().map(|x| -beta * omega * omega * (omega * x).sin()).collect(),
            ),
        }
    }

    pub fn sigma(&self, s: &[f64], _a: usize) -> f64 {
        match self.diffusion {
            DiffusionForm::Constant { sigma } => sigma,
            DiffusionForm::Smooth { sigma0, sigma1, omega } => sigma0 + sigma1 * (omega * s[0]).sin(),
        }
    }

    pub fn sigma_max(&self) -> f64 {
        match self.diffusion {
            DiffusionForm::Constant { sigma } => sigma.abs(),
            DiffusionForm::Smooth { sigma0, sigma1, .. } => sigma0 + sigma1.abs(),
        }
    }

    pub fn analytic_lipschitz(&self) -> f64 {
        let lb = match &self.drift {
            DriftForm::Constant => 0.0,
            DriftForm::Affine { kappa, .. } => kappa.abs(),
            DriftForm::Sinusoid { beta, omega } => (beta * omega).abs(),
        };
        let ls = match self.diffusion {
            DiffusionForm::Constant { .. } => 0.0,
            DiffusionForm::Smooth { sigma1, omega, .. } => (sigma1 * omega).abs(),
        };
        lb.max(ls)
    }

    pub fn reward(&self, s: &[f64], _a: usize) -> f64 {
        self.reward.eval(s)
    }
}

/// Uniform lattice of spacing h over a box, indexed lexicographically with
/// the last coordinate fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub h: f64,
    /// Number of cells per dimension (points = cells + 1).
    pub cells: Vec<usize>,
}

impl Grid {
    /// The box [lo, hi] is snapped to a whole number of cells.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, h: f64) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(invalid("box bounds must have equal, positive dimension"));
        }
        if !(h > 0.0) {
            return Err(invalid(format!("grid spacing must be positive, got {h}")));
        }
        let mut cells = Vec::with_capacity(lo.len());
        for (l, u) in lo.iter().zip(&hi) {
            if !(u > l) {
                return Err(invalid("box must have positive extent in every dimension"));
            }
            cells.push(((u - l) / h).round().max(1.0) as usize);
        }
        Ok(Self { lo, h, cells })
    }

    pub fn interval(lo: f64, hi: f64, h: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi], h)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().map(|c| c + 1).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hi(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.cells).map(|(l, &c)| l + c as f64 * self.h).collect()
    }

    pub fn coords(&self, index: usize) -> Vec<usize> {
        let mut k = vec![0; self.dim()];
        let mut rem = index;
        for i in (0..self.dim()).rev() {
            let n = self.cells[i] + 1;
            k[i] = rem % n;
            rem /= n;
        }
        k
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.cells).fold(0, |acc, (&k, &c)| acc * (c + 1) + k)
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        self.coords(index)
            .iter()
            .zip(&self.lo)
            .map(|(&k, l)| l + k as f64 * self.h)
            .collect()
    }

    /// Nearest lattice coordinate along one dimension; exact half-way ties go
    /// to the lower index, and points outside the box clamp to its faces.
    pub fn nearest_coord(&self, dim: usize, x: f64) -> usize {
        let f = (x - self.lo[dim]) / self.h;
        let k = (f - 0.5).ceil();
        k.clamp(0.0, self.cells[dim] as f64) as usize
    }

    pub fn nearest(&self, x: &[f64]) -> usize {
        let k: Vec<usize> = (0..self.dim()).map(|i| self.nearest_coord(i, x[i])).collect();
        self.index(&k)
    }

    /// True when the point is at least `margin` cells away from every face.
    pub fn is_interior(&self, index: usize, margin: usize) -> bool {
        self.coords(index)
            .iter()
            .zip(&self.cells)
            .all(|(&k, &c)| k >= margin && k + margin <= c)
    }

    pub fn metric_space(&self) -> FiniteMetricSpace {
        FiniteMetricSpace::new((0..self.len()).map(|i| self.point(i)).collect(), MetricKind::Euclidean)
            .expect("grid points share a dimension")
    }

    /// Same box, spacing divided by `factor`.
    pub fn refine(&self, factor: usize) -> Self {
        Self {
            lo: self.lo.clone(),
            h: self.h / factor as f64,
            cells: self.cells.iter().map(|c| c * factor).collect(),
        }
    }
}
