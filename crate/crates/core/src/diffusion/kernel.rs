use std::collections::BTreeMap;

use super::{ControlledDiffusionSpec, DiffusionForm, DriftForm, Grid};
use crate::error::{invalid, Error, Result};
use crate::mdp::{normalize_row, Row, TabularMdp};

/// One-dimensional lattice jump distribution, in units of the spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub offsets: Vec<i64>,
    pub probs: Vec<f64>,
}

impl Increment {
    fn point(j: i64) -> Self {
        Self { offsets: vec![j], probs: vec![1.0] }
    }
}

fn nearest_int_low(x: f64) -> i64 {
    (x - 0.5).ceil() as i64
}

/// Lattice jump with mean `mean` and variance `var` on spacing `h`.
///
/// A trinomial around the lattice point nearest the mean matches both
/// moments whenever var ≥ |e|(h − |e|), e being the distance from the mean to
/// that point. Below that (drift-dominated cells) no lattice law can match
/// both, and the two-point law on the bracketing points keeps the mean
/// exact. Zero variance puts all mass on the nearest point.
pub fn trinomial(mean: f64, var: f64, h: f64) -> Result<Increment> {
    if !(var >= 0.0) || !(h > 0.0) {
        return Err(invalid("trinomial needs var >= 0 and h > 0"));
    }
    if var == 0.0 {
        return Ok(Increment::point(nearest_int_low(mean / h)));
    }
    let j = nearest_int_low(mean / h);
    let e = mean / h - j as f64;
    let q = var / (h * h) + e * e;
    if q > 1.0 {
        return Err(Error::Infeasible(format!(
            "jump variance {var} too large for spacing {h}; shrink the time step"
        )));
    }
    let up = 0.5 * (q + e);
    let down = 0.5 * (q - e);
    if up >= 0.0 && down >= 0.0 {
        let mut inc = Increment { offsets: vec![], probs: vec![] };
        for (o, p) in [(j - 1, down), (j, 1.0 - q), (j + 1, up)] {
            if p > 0.0 {
                inc.offsets.push(o);
                inc.probs.push(p);
            }
        }
        return Ok(inc);
    }
    let k = (mean / h).floor();
    let theta = mean / h - k;
    let k = k as i64;
    Ok(Increment { offsets: vec![k, k + 1], probs: vec![1.0 - theta, theta] })
}

/// h² / (max σ² + h·max|b|) over grid points and actions.
pub fn feasibility_bound(spec: &ControlledDiffusionSpec, grid: &Grid) -> f64 {
    let mut s2 = 0.0_f64;
    let mut bmax = 0.0_f64;
    for i in 0..grid.len() {
        let x = grid.point(i);
        for a in 0..spec.n_actions() {
            let sg = spec.sigma(&x, a);
            s2 = s2.max(sg * sg);
            bmax = spec.drift(&x, a).iter().fold(bmax, |m, b| m.max(b.abs()));
        }
    }
    let h = grid.h;
    h * h / (s2 + h * bmax)
}

/// Moment-matched Markov chain on the grid with time step δ: per-dimension
/// lattice jumps, mass leaving the box clamped onto the boundary, reward
/// r·δ and per-step discount 1 − rate·δ.
pub fn discretize_kernel(spec: &ControlledDiffusionSpec, grid: &Grid, delta: f64) -> Result<TabularMdp> {
    spec.validate()?;
    if grid.dim() != spec.dim {
        return Err(invalid("grid and problem dimensions differ"));
    }
    if !(delta > 0.0) {
        return Err(invalid(format!("time step must be positive, got {delta}")));
    }
    let bound = feasibility_bound(spec, grid);
    if delta > bound {
        return Err(Error::Infeasible(format!(
            "time step {delta} exceeds the feasibility bound h^2/(max sigma^2 + h max|b|) = {bound}"
        )));
    }
    if spec.discount_rate * delta >= 1.0 {
        return Err(Error::Infeasible(format!("discount rate times time step is {}", spec.discount_rate * delta)));
    }
    let n = grid.len();
    let mut rows = Vec::with_capacity(n);
    let mut reward = Vec::with_capacity(n);
    for s in 0..n {
        let x = grid.point(s);
        let k = grid.coords(s);
        let mut acts = Vec::with_capacity(spec.n_actions());
        let mut rs = Vec::with_capacity(spec.n_actions());
        for a in 0..spec.n_actions() {
            let b = spec.drift(&x, a);
            let sg = spec.sigma(&x, a);
            let incs = b
                .iter()
                .map(|bi| trinomial(bi * delta, sg * sg * delta, grid.h))
                .collect::<Result<Vec<_>>>()?;
            acts.push(product_row(grid, &k, &incs));
            rs.push(spec.reward(&x, a) * delta);
        }
        rows.push(acts);
        reward.push(rs);
    }
    TabularMdp::new(rows, reward, 1.0 - spec.discount_rate * delta)?.with_state_points(grid.metric_space())
}

fn product_row(grid: &Grid, base: &[usize], incs: &[Increment]) -> Row {
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pick = vec![0usize; incs.len()];
    let mut coords = vec![0usize; incs.len()];
    loop {
        let mut p = 1.0;
        for (i, inc) in incs.iter().enumerate() {
            let c = base[i] as i64 + inc.offsets[pick[i]];
            coords[i] = c.clamp(0, grid.cells[i] as i64) as usize;
            p *= inc.probs[pick[i]];
        }
        *acc.entry(grid.index(&coords)).or_insert(0.0) += p;
        let mut i = 0;
        loop {
            if i == incs.len() {
                return normalize_row(acc.into_iter().collect());
            }
            pick[i] += 1;
            if pick[i] < incs[i].offsets.len() {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl Moments {
    /// Largest absolute entry difference of the means and of the covariances.
    pub fn remainder(&self, other: &Moments) -> (f64, f64) {
        let m = self.mean.iter().zip(&other.mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let c = self
            .cov
            .iter()
            .flatten()
            .zip(other.cov.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        (m, c)
    }
}

/// Mean and covariance of the chain increment s' − s from grid point `s`.
pub fn kernel_moments(mdp: &TabularMdp, grid: &Grid, s: usize, a: usize) -> Moments {
    let d = grid.dim();
    let x = grid.point(s);
    let mut mean = vec![0.0; d];
    let row = mdp.row(s, a);
    let incs: Vec<(Vec<f64>, f64)> = row
        .iter()
        .map(|&(t, p)| (grid.point(t).iter().zip(&x).map(|(y, x)| y - x).collect(), p))
        .collect();
    for (dx, p) in &incs {
        for i in 0..d {
            mean[i] += p * dx[i];
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for (dx, p) in &incs {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += p * (dx[i] - mean[i]) * (dx[j] - mean[j]);
            }
        }
    }
    Moments { mean, cov }
}

/// Mean and covariance of X_δ − x for the SDE itself: closed form for
/// constant and affine drift, second-order Itô–Taylor expansion for the
/// sinusoidal drift. Constant diffusion only.
pub fn reference_moments(spec: &ControlledDiffusionSpec, x: &[f64], a: usize, delta: f64) -> Result<Moments> {
    let DiffusionForm::Constant { sigma } = spec.diffusion else {
        return Err(invalid("reference moments need a constant diffusion"));
    };
    let d = spec.dim;
    let u = &spec.actions[a];
    let s2 = sigma * sigma;
    let (mean, var): (Vec<f64>, Vec<f64>) = match &spec.drift {
        DriftForm::Constant => (u.iter().map(|ui| ui * delta).collect(), vec![s2 * delta; d]),
        DriftForm::Affine { kappa, theta } => {
            let k = *kappa;
            if k == 0.0 {
                (u.iter().map(|ui| ui * delta).collect(), vec![s2 * delta; d])
            } else {
                let decay = -(-k * delta).exp_m1();
                let var = s2 * -(-2.0 * k * delta).exp_m1() / (2.0 * k);
                ((0..d).map(|i| (theta[i] + u[i] / k - x[i]) * decay).collect(), vec![var; d])
            }
        }
        DriftForm::Sinusoid { .. } => {
            let b = spec.drift(x, a);
            let (db, d2b) = spec.drift_derivatives(x);
            let mean = (0..d)
                .map(|i| b[i] * delta + 0.5 * (b[i] * db[i] + 0.5 * s2 * d2b[i]) * delta * delta)
                .collect();
            let var = (0..d).map(|i| s2 * delta + s2 * db[i] * delta * delta).collect();
            (mean, var)
        }
    };
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..d {
        cov[i][i] = var[i];
    }
    Ok(Moments { mean, cov })
}
