//! Experiment drivers shared by the CLI and the acceptance suite.

use rand::Rng;

use crate::bsde::{backward_mesh_for_tolerance, backward_until_hit, terminal_error, BsdeConfig, RunningReward};
use crate::diffusion::{
    continuous_reference, discretize_kernel, forward_hitting_time, kernel_moments, mesh_for_tolerance,
    reference_moments, ControlledDiffusionSpec, Grid,
};
use crate::error::{invalid, Result};
use crate::fixtures;
use crate::mdp::{
    bellman_optimality_op, greedy_policy, policy_iteration, random_mdp, static_regret, sup_norm_diff, Policy,
    TabularMdp,
};
use crate::metric::{build_cover_tree, gamma2_upper, FiniteMetricSpace};
use crate::rng::stream;
use crate::stats::{fit_line, log_log_slope, LineFit};

#[derive(Debug, Clone)]
pub struct RegretCurve {
    pub horizons: Vec<usize>,
    pub totals: Vec<f64>,
    /// Fit of the totals against the transformed horizon (ln T or √T).
    pub fit: Option<LineFit>,
}

/// Per-sweep static regret J(π*) − J(π_k) of the greedy policies of value
/// iteration started at `v0`, for k = 0..sweeps.
pub fn greedy_regret_per_sweep(mdp: &TabularMdp, mu0: &[f64], v0: &[f64], sweeps: usize) -> Result<Vec<f64>> {
    let mut v = v0.to_vec();
    let mut policies = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        policies.push(Policy::Deterministic(greedy_policy(mdp, &v)?));
        v = bellman_optimality_op(mdp, &v)?;
    }
    Ok(static_regret(mdp, &policies, mu0)?.per_step)
}

/// Cumulative regret R_T for every T in `horizons`, fitted against ln T.
pub fn gapped_regret_curve(mdp: &TabularMdp, mu0: &[f64], horizons: &[usize]) -> Result<RegretCurve> {
    let t_max = *horizons.iter().max().ok_or_else(|| invalid("no horizons"))?;
    let per = greedy_regret_per_sweep(mdp, mu0, &vec![0.0; mdp.n_states()], t_max)?;
    let mut prefix = Vec::with_capacity(t_max + 1);
    prefix.push(0.0);
    for r in &per {
        prefix.push(prefix.last().expect("nonempty") + r);
    }
    let totals: Vec<f64> = horizons.iter().map(|&t| prefix[t]).collect();
    let xs: Vec<f64> = horizons.iter().map(|&t| (t as f64).ln()).collect();
    let fit = fit_line(&xs, &totals);
    Ok(RegretCurve { horizons: horizons.to_vec(), totals, fit })
}

/// Horizon-tuned run: for each T, iterate until ‖V_k − V*‖ ≤ c/√T, then
/// keep that greedy policy for the remaining steps. Totals are fitted
/// against √T.
pub fn tuned_regret_curve(mdp: &TabularMdp, mu0: &[f64], v0: &[f64], c: f64, horizons: &[usize]) -> Result<RegretCurve> {
    let t_max = *horizons.iter().max().ok_or_else(|| invalid("no horizons"))?;
    let v_star = policy_iteration(mdp)?.values;
    // errors[k] and the greedy policy's regret at sweep k, until the
    // tightest target is met.
    let tightest = c / (t_max as f64).sqrt();
    let mut v = v0.to_vec();
    let mut errors = Vec::new();
    let mut policies = Vec::new();
    loop {
        let err = sup_norm_diff(&v, &v_star);
        errors.push(err);
        policies.push(Policy::Deterministic(greedy_policy(mdp, &v)?));
        if err <= tightest || errors.len() > 100 * t_max {
            break;
        }
        v = bellman_optimality_op(mdp, &v)?;
    }
    if *errors.last().expect("nonempty") > tightest {
        return Err(invalid("value iteration did not reach the tightest target"));
    }
    let per = static_regret(mdp, &policies, mu0)?.per_step;
    let mut totals = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let eps = c / (t as f64).sqrt();
        let tau = errors.iter().position(|&e| e <= eps).expect("tightest target reached");
        let total: f64 = (0..t).map(|k| per[k.min(tau)]).sum();
        totals.push(total);
    }
    let xs: Vec<f64> = horizons.iter().map(|&t| (t as f64).sqrt()).collect();
    let fit = fit_line(&xs, &totals);
    Ok(RegretCurve { horizons: horizons.to_vec(), totals, fit })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OperatorViolations {
    pub mdps: usize,
    pub contraction: usize,
    pub monotonicity: usize,
}

/// Checks ‖T[U] − T[V]‖ ≤ γ‖U − V‖ and U ≤ V ⇒ T[U] ≤ T[V] on random MDPs
/// with up to 12 states and 4 actions, five value pairs each.
pub fn operator_suite(count: usize, seed: u64, tol: f64) -> Result<OperatorViolations> {
    let mut out = OperatorViolations { mdps: count, ..Default::default() };
    for i in 0..count {
        let mut rng = stream(seed, "operator-suite", i as u64);
        let n = rng.gen_range(1..=12);
        let m = rng.gen_range(1..=4);
        let gamma = rng.gen_range(0.0..0.99);
        let mdp = random_mdp(&mut rng, n, m, gamma);
        for _ in 0..5 {
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let tu = bellman_optimality_op(&mdp, &u)?;
            let tv = bellman_optimality_op(&mdp, &v)?;
            if sup_norm_diff(&tu, &tv) > gamma * sup_norm_diff(&u, &v) + tol {
                out.contraction += 1;
            }
            let w: Vec<f64> = u.iter().map(|x| x + rng.gen_range(0.0..5.0)).collect();
            let tw = bellman_optimality_op(&mdp, &w)?;
            if tu.iter().zip(&tw).any(|(a, b)| *a > b + tol) {
                out.monotonicity += 1;
            }
        }
    }
    Ok(out)
}

/// Largest per-sweep ratio ‖V_{k+1} − V*‖/‖V_k − V*‖ of value iteration
/// from `v0`. The policy-iteration fixed point is polished with Bellman
/// sweeps until it stops moving, and sweeps whose error is within
/// `rel_floor`·(1 + ‖V*‖) of it are not counted, since there the oracle's
/// rounding dominates the ratio.
pub fn value_iteration_rate(mdp: &TabularMdp, v0: &[f64], sweeps: usize, rel_floor: f64) -> Result<f64> {
    let mut v_star = policy_iteration(mdp)?.values;
    for _ in 0..10_000 {
        let next = bellman_optimality_op(mdp, &v_star)?;
        let moved = sup_norm_diff(&next, &v_star);
        v_star = next;
        if moved == 0.0 {
            break;
        }
    }
    let scale = 1.0 + v_star.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let floor = rel_floor * scale;
    let mut v = v0.to_vec();
    let mut err = sup_norm_diff(&v, &v_star);
    let mut worst = 0.0_f64;
    for _ in 0..sweeps {
        if err <= floor {
            break;
        }
        v = bellman_optimality_op(mdp, &v)?;
        let next = sup_norm_diff(&v, &v_star);
        worst = worst.max(next / err);
        err = next;
    }
    Ok(worst)
}

/// Tabular fixtures for the rate check, with their discount.
pub fn rate_fixtures(seed: u64) -> Result<Vec<(String, TabularMdp)>> {
    let mut out = vec![
        ("loop".to_string(), fixtures::loop_mdp(0.9, 1.0, 0.05)?),
        ("ladder".to_string(), fixtures::ladder_mdp(40, 0.95, 1.0, 0.1)?),
        ("fan".to_string(), fixtures::decision_fan(16, 0.9)?.0),
        ("bars-ladder".to_string(), fixtures::bars_ladder(1)?.mdp),
    ];
    let spec = fixtures::forward_problem(1.0);
    let grid = Grid::interval(0.0, 1.0, 0.05)?;
    out.push(("forward-chain".to_string(), discretize_kernel(&spec, &grid, 0.005)?));
    for i in 0..20 {
        let mut rng = stream(seed, "rate-fixture", i);
        let n = rng.gen_range(2..=12);
        let m = rng.gen_range(1..=4);
        let gamma = rng.gen_range(0.1..0.99);
        out.push((format!("random-{i}"), random_mdp(&mut rng, n, m, gamma)));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub deltas: Vec<f64>,
    pub mean_remainders: Vec<f64>,
    pub cov_remainders: Vec<f64>,
    pub mean_slope: f64,
    pub cov_slope: f64,
}

/// Worst moment remainders of the chain against the SDE over interior grid
/// points and all actions, per δ, with log-log slopes against δ.
pub fn consistency_slopes(spec: &ControlledDiffusionSpec, grid: &Grid, deltas: &[f64]) -> Result<ConsistencyReport> {
    let mut mean_remainders = Vec::with_capacity(deltas.len());
    let mut cov_remainders = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mdp = discretize_kernel(spec, grid, delta)?;
        let (mut m, mut c) = (0.0_f64, 0.0_f64);
        for s in (0..grid.len()).filter(|&s| grid.is_interior(s, 2)) {
            let x = grid.point(s);
            for a in 0..spec.n_actions() {
                let (dm, dc) = kernel_moments(&mdp, grid, s, a).remainder(&reference_moments(spec, &x, a, delta)?);
                m = m.max(dm);
                c = c.max(dc);
            }
        }
        mean_remainders.push(m);
        cov_remainders.push(c);
    }
    let slope = |ys: &[f64]| log_log_slope(deltas, ys).map_or(f64::NAN, |f| f.slope);
    Ok(ConsistencyReport {
        deltas: deltas.to_vec(),
        mean_slope: slope(&mean_remainders),
        cov_slope: slope(&cov_remainders),
        mean_remainders,
        cov_remainders,
    })
}

pub fn gamma2_of(points: &FiniteMetricSpace) -> Result<f64> {
    Ok(gamma2_upper(&build_cover_tree(points)?))
}

#[derive(Debug, Clone)]
pub struct ForwardReport {
    pub domain: f64,
    pub gamma2: f64,
    pub epsilons: Vec<f64>,
    pub deltas: Vec<f64>,
    pub taus: Vec<Option<usize>>,
    /// Slope of ln τ⁺ against ln(1/ε); NaN if any tolerance was missed.
    pub slope: f64,
}

/// Forward hitting times on [0, D] with spacing `h`: for each ε the mesh is
/// δ = ε²/(4L²γ₂(S)²), value iteration starts at zero and the reference is
/// the exact fixed point on the 4× refined grid at δ_min/16.
pub fn forward_scaling(domain: f64, h: f64, epsilons: &[f64]) -> Result<ForwardReport> {
    let spec = fixtures::forward_problem(domain);
    let grid = Grid::interval(0.0, domain, h)?;
    let gamma2 = gamma2_of(&grid.metric_space())?;
    let deltas = epsilons
        .iter()
        .map(|&e| mesh_for_tolerance(e, spec.lipschitz, gamma2, 1.0).map(|m| m.delta))
        .collect::<Result<Vec<_>>>()?;
    let dmin = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let reference = continuous_reference(&spec, &grid.refine(4), dmin / 16.0)?;
    let mut taus = Vec::with_capacity(epsilons.len());
    for (&e, &d) in epsilons.iter().zip(&deltas) {
        taus.push(forward_hitting_time(&spec, &grid, d, &reference, e, None, 50_000_000)?.tau);
    }
    let slope = if taus.iter().all(Option::is_some) {
        let inv: Vec<f64> = epsilons.iter().map(|e| 1.0 / e).collect();
        let t: Vec<f64> = taus.iter().map(|t| t.expect("checked") as f64).collect();
        log_log_slope(&inv, &t).map_or(f64::NAN, |f| f.slope)
    } else {
        f64::NAN
    };
    Ok(ForwardReport { domain, gamma2, epsilons: epsilons.to_vec(), deltas, taus, slope })
}

/// Reward scale of the backward terminal condition in the ratio runs.
pub const RATIO_TERMINAL_SCALE: f64 = 0.125;
pub const RATIO_SAMPLES: usize = 256;

#[derive(Debug, Clone)]
pub struct RatioRow {
    pub width: f64,
    pub support_size: usize,
    pub gamma2_space: f64,
    pub gamma2_support: f64,
    pub forward_delta: f64,
    pub backward_delta: f64,
    pub tau_forward: Option<usize>,
    pub tau_backward: Option<usize>,
    pub terminal_error: f64,
}

impl RatioRow {
    pub fn gamma2_ratio_sq(&self) -> f64 {
        (self.gamma2_support / self.gamma2_space).powi(2)
    }

    pub fn tau_ratio(&self) -> Option<f64> {
        Some(self.tau_backward? as f64 / self.tau_forward? as f64)
    }
}

/// Forward and backward hitting times for the tent of half-width `width`
/// on [0, 2]. The forward chain uses spacing 0.05 and the forward mesh
/// rule with γ₂(S); the backward solver uses δ⁻ = ε²/(16L²γ₂(supp)²) on
/// spacing σ√δ⁻/4 with terminal condition a scaled copy of the reward.
/// Both are measured against the exact fixed point on the 4× refined
/// forward grid at δ⁺/8.
pub fn ratio_run(width: f64, epsilon: f64, seed: u64) -> Result<RatioRow> {
    let spec = fixtures::ratio_problem(width);
    let coarse = Grid::interval(0.0, 2.0, 0.05)?;
    let xs: Vec<f64> = (0..coarse.len()).map(|i| coarse.point(i)[0]).collect();
    let support: Vec<f64> = xs.iter().copied().filter(|&x| spec.reward.eval(&[x]) > 0.0).collect();
    if support.is_empty() {
        return Err(invalid("reward support misses the grid"));
    }
    let gamma2_space = gamma2_of(&FiniteMetricSpace::line(&xs))?;
    let gamma2_support = gamma2_of(&FiniteMetricSpace::line(&support))?;
    let forward_delta = mesh_for_tolerance(epsilon, spec.lipschitz, gamma2_space, 1.0)?.delta;
    let backward_delta = backward_mesh_for_tolerance(epsilon, spec.lipschitz, gamma2_support)?;
    let fine = coarse.refine(4);
    let reference = continuous_reference(&spec, &fine, forward_delta / 8.0)?;
    let tau_forward = forward_hitting_time(&spec, &coarse, forward_delta, &reference, epsilon, None, 50_000_000)?.tau;

    let setup = backward_setup(&spec, epsilon, gamma2_support)?;
    let cfg = BsdeConfig::new(RATIO_SAMPLES, seed);
    let (hit, _) = backward_until_hit(
        &spec,
        &setup.grid,
        backward_delta,
        &setup.terminal,
        &cfg,
        RunningReward::Spec,
        &reference,
        epsilon,
        1_000_000,
    )?;
    Ok(RatioRow {
        width,
        support_size: support.len(),
        gamma2_space,
        gamma2_support,
        forward_delta,
        backward_delta,
        tau_forward,
        tau_backward: hit.tau,
        terminal_error: setup.terminal_error,
    })
}

#[derive(Debug, Clone)]
pub struct BackwardSetup {
    pub delta: f64,
    pub grid: Grid,
    pub terminal: Vec<f64>,
    /// Terminal condition on the grid against the 4× refined grid.
    pub terminal_error: f64,
}

/// Backward mesh δ⁻ = ε²/(16L²γ₂²), spacing σ√δ⁻/4 on [0, 2] and the scaled
/// reward as terminal condition.
pub fn backward_setup(spec: &ControlledDiffusionSpec, epsilon: f64, gamma2_support: f64) -> Result<BackwardSetup> {
    let delta = backward_mesh_for_tolerance(epsilon, spec.lipschitz, gamma2_support)?;
    let grid = Grid::interval(0.0, 2.0, spec.sigma_max() * delta.sqrt() / 4.0)?;
    let sample = |g: &Grid| -> Vec<f64> {
        (0..g.len()).map(|i| RATIO_TERMINAL_SCALE * spec.reward.eval(&g.point(i))).collect()
    };
    let terminal = sample(&grid);
    let fine = grid.refine(4);
    let terminal_error = terminal_error(&grid, &terminal, &fine, &sample(&fine));
    Ok(BackwardSetup { delta, grid, terminal, terminal_error })
}

/// Where policy iteration on the loop fixture switches between circling and
/// exiting, probed at bound·(1 ∓ margin).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopBoundary {
    pub bound: f64,
    pub exits_below: bool,
    pub loops_above: bool,
}

pub fn loop_boundary(discount: f64, target_reward: f64, margin: f64) -> Result<LoopBoundary> {
    let v_target = target_reward / (1.0 - discount);
    let epsilon = (1.0 - discount) * v_target;
    let bound = crate::mdp::loop_exploit_max_reward(discount, v_target, epsilon)?;
    let policy_at = |r: f64| -> Result<Vec<usize>> {
        Ok(policy_iteration(&fixtures::loop_mdp(discount, target_reward, r)?)?.policy)
    };
    let below = policy_at(bound * (1.0 - margin))?;
    let above = policy_at(bound * (1.0 + margin))?;
    let on_loop = [fixtures::LOOP_A, fixtures::LOOP_B];
    Ok(LoopBoundary {
        bound,
        exits_below: on_loop.iter().all(|&s| below[s] == fixtures::LOOP_EXIT),
        loops_above: on_loop.iter().all(|&s| above[s] == fixtures::LOOP_STAY),
    })
}

/// Spacings giving unit-ball grids of roughly 2000 points in d = 1, 2, 4, 8.
/// The tree-induced estimate only resolves about log₂log₂N admissible
/// levels, so a common spacing would truncate low dimensions far earlier
/// than high ones.
pub const BALL_GRIDS: [(usize, f64); 4] = [(1, 0.001), (2, 0.04), (4, 0.25), (8, 0.5)];

#[derive(Debug, Clone)]
pub struct DimensionScaling {
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    pub estimates: Vec<f64>,
    pub slope: f64,
}

pub fn dimension_scaling(grids: &[(usize, f64)]) -> Result<DimensionScaling> {
    let mut sizes = Vec::new();
    let mut estimates = Vec::new();
    for &(d, h) in grids {
        let space = crate::metric::unit_ball_grid(d, h);
        sizes.push(space.len());
        estimates.push(gamma2_of(&space)?);
    }
    let dims: Vec<usize> = grids.iter().map(|g| g.0).collect();
    let ds: Vec<f64> = dims.iter().map(|&d| d as f64).collect();
    let slope = log_log_slope(&ds, &estimates).map_or(f64::NAN, |f| f.slope);
    Ok(DimensionScaling { dims, sizes, estimates, slope })
}

/// Coupling run on the OU fixture: start at 0 with u = 0, grid [−4, 4]
/// with spacing 2σ√δ.
pub fn ou_coupling(delta: f64, steps: usize, trials: usize, seed: u64) -> Result<crate::diffusion::CouplingReport> {
    let spec = fixtures::coupling_ou();
    let grid = Grid::interval(-4.0, 4.0, 2.0 * spec.sigma_max() * delta.sqrt())?;
    crate::diffusion::coupling_experiment(&spec, &grid, &[0.0], 1, delta, steps, trials, seed)
}

#[derive(Debug, Clone)]
pub struct Gamma2Suite {
    pub spaces: usize,
    pub net_violations: usize,
    pub net_size_violations: usize,
    pub tree_violations: usize,
    pub tiny_spaces: usize,
    pub brute_above_upper: usize,
    pub dudley_two_point: f64,
    pub scaling: DimensionScaling,
}

fn random_space<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Result<FiniteMetricSpace> {
    FiniteMetricSpace::euclidean((0..n).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect())
}

/// Exhaustive invariant scans over random spaces: greedy nets cover and
/// pack, their size is at most the exact half-radius covering number,
/// cover trees satisfy nesting/covering/separation, and the brute-force γ₂
/// never exceeds the tree estimate.
pub fn gamma2_suite(seed: u64) -> Result<Gamma2Suite> {
    use crate::metric::{build_cover_tree, covering_number_exact, cover_tree_violations, dudley_bound, gamma2_bruteforce, greedy_eps_net};
    let mut out = Gamma2Suite {
        spaces: 0,
        net_violations: 0,
        net_size_violations: 0,
        tree_violations: 0,
        tiny_spaces: 0,
        brute_above_upper: 0,
        dudley_two_point: dudley_bound(&FiniteMetricSpace::line(&[0.0, 1.0]), 64)?.value,
        scaling: dimension_scaling(&BALL_GRIDS)?,
    };
    for i in 0..60u64 {
        let mut rng = stream(seed, "gamma2-suite", i);
        let n = rng.gen_range(1..=20);
        let dim = rng.gen_range(1..=3);
        let space = random_space(&mut rng, n, dim)?;
        out.spaces += 1;
        for eps in [0.05, 0.2, 0.5] {
            let net = greedy_eps_net(&space, eps)?;
            let c = &net.center_indices;
            let covers = (0..n).all(|x| c.iter().any(|&y| space.distance(x, y) <= eps));
            let packs = c.iter().enumerate().all(|(k, &a)| c[k + 1..].iter().all(|&b| space.distance(a, b) > eps));
            if !(covers && packs) {
                out.net_violations += 1;
            }
            if net.len() > covering_number_exact(&space, eps / 2.0)? {
                out.net_size_violations += 1;
            }
        }
        out.tree_violations += cover_tree_violations(&space, &build_cover_tree(&space)?).len();
    }
    for i in 0..200u64 {
        let mut rng = stream(seed, "gamma2-tiny", i);
        let n = rng.gen_range(1..=6);
        let space = random_space(&mut rng, n, 2)?;
        out.tiny_spaces += 1;
        if gamma2_bruteforce(&space)? > gamma2_of(&space)? + 1e-12 {
            out.brute_above_upper += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BackwardScaling {
    pub width: f64,
    pub epsilons: Vec<f64>,
    pub deltas: Vec<f64>,
    pub taus: Vec<Option<usize>>,
    /// Slope of ln τ⁻ against ln(1/ε); NaN if any tolerance was missed.
    pub slope: f64,
}

/// Backward hitting times on the ratio problem of half-width `width` with
/// the mesh tied linearly to the tolerance, δ = ε/(2c), and spacing
/// σ√δ/4. The reference is the exact fixed point on [0, 2] at spacing
/// 0.0125 and half its feasible time step. The terminal condition is the
/// scaled reward plus a constant `offset`; a constant has no gradient, so
/// it decays deterministically and sets the initial error without adding
/// Monte Carlo noise.
pub fn backward_scaling(width: f64, epsilons: &[f64], c: f64, offset: f64, seed: u64) -> Result<BackwardScaling> {
    if !(c > 0.0) {
        return Err(invalid("mesh constant must be positive"));
    }
    let spec = fixtures::ratio_problem(width);
    let fine = Grid::interval(0.0, 2.0, 0.0125)?;
    let reference = continuous_reference(&spec, &fine, 0.5 * crate::diffusion::feasibility_bound(&spec, &fine))?;
    let mut deltas = Vec::with_capacity(epsilons.len());
    let mut taus = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let delta = eps / (2.0 * c);
        let grid = Grid::interval(0.0, 2.0, spec.sigma_max() * delta.sqrt() / 4.0)?;
        let g: Vec<f64> =
            (0..grid.len()).map(|i| offset + RATIO_TERMINAL_SCALE * spec.reward.eval(&grid.point(i))).collect();
        let cfg = BsdeConfig::new(RATIO_SAMPLES, seed);
        let (hit, _) =
            backward_until_hit(&spec, &grid, delta, &g, &cfg, RunningReward::Spec, &reference, eps, 1_000_000)?;
        deltas.push(delta);
        taus.push(hit.tau);
    }
    let slope = if taus.iter().all(Option::is_some) {
        let inv: Vec<f64> = epsilons.iter().map(|e| 1.0 / e).collect();
        let t: Vec<f64> = taus.iter().map(|t| t.expect("checked") as f64).collect();
        log_log_slope(&inv, &t).map_or(f64::NAN, |f| f.slope)
    } else {
        f64::NAN
    };
    Ok(BackwardScaling { width, epsilons: epsilons.to_vec(), deltas, taus, slope })
}
