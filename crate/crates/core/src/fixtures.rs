//! Named fixtures shared by the experiments, the CLI and the tests.

use crate::bars::{BarsConfig, CategoricalPrior};
use crate::diffusion::{ControlledDiffusionSpec, DiffusionForm, DriftForm, Grid, RewardForm};
use crate::error::Result;
use crate::mdp::{Row, TabularMdp};
use crate::metric::FiniteMetricSpace;

pub const AWAY: usize = 0;
pub const STAY: usize = 1;
pub const TOWARD: usize = 2;

/// Deterministic chain 0..n with the goal at n−1. Actions move one state
/// away from the goal, stay, or move toward it (clamped at the ends).
/// Staying at the goal pays `goal_reward`; stepping away from any other
/// state pays `away_reward`. States sit at i/(n−1) on the line; actions at
/// −1, 0, 1.
pub fn ladder_mdp(n: usize, discount: f64, goal_reward: f64, away_reward: f64) -> Result<TabularMdp> {
    let goal = n - 1;
    let rows: Vec<Vec<Row>> = (0..n)
        .map(|s| vec![vec![(s.saturating_sub(1), 1.0)], vec![(s, 1.0)], vec![((s + 1).min(goal), 1.0)]])
        .collect();
    let reward: Vec<Vec<f64>> =
        (0..n).map(|s| if s == goal { vec![0.0, goal_reward, 0.0] } else { vec![away_reward, 0.0, 0.0] }).collect();
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    TabularMdp::new(rows, reward, discount)?
        .with_state_points(FiniteMetricSpace::line(&xs))?
        .with_action_points(vec![vec![-1.0], vec![0.0], vec![1.0]])
}

/// Initial law ∝ 1/(d+1)² in the distance d to the goal.
pub fn ladder_initial_distribution(n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|s| 1.0 / (((n - 1 - s) + 1) as f64).powi(2)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// BARS on a 300-state ladder: correct terminal states are the 16 states
/// just below the goal (geometric prior), a*(s) = toward, r̃ = 1 there,
/// and J_t is averaged over a uniform start.
pub fn bars_ladder(rounds: usize) -> Result<BarsConfig> {
    let n = 300;
    let mdp = ladder_mdp(n, 0.95, 1.0, 0.0)?;
    let goal = n - 1;
    let states: Vec<usize> = (1..=16).map(|k| goal - k).collect();
    let weights: Vec<f64> = (0..16).map(|k| 0.7f64.powi(k)).collect();
    let mut base_reward = vec![0.0; n];
    let mut optimal_action = vec![None; n];
    for &s in &states {
        base_reward[s] = 1.0;
        optimal_action[s] = Some(TOWARD);
    }
    Ok(BarsConfig {
        mdp,
        base_reward,
        optimal_action,
        prior: CategoricalPrior::new(states, weights)?,
        initial_distribution: vec![1.0 / n as f64; n],
        gap: 0.5,
        confidence: 0.1,
        lipschitz: 1.0,
        alpha: 0.002,
        subgaussian: 1e-4,
        mesh: 1.0 / (n - 1) as f64,
        rounds,
        j_star_prior: 1.0,
        max_backward_steps: 10_000,
    })
}

/// Gapped static-regret fixture: a 2000-state ladder with γ = 0.9999,
/// goal reward 1 and a 0.01 reward for stepping away. Every state has a
/// unique reward-maximizing action with margin 0.01, yet the goal is worth
/// reaching from everywhere, so value iteration from zero only corrects
/// the policy one state per sweep.
pub fn gapped_ladder() -> Result<(TabularMdp, Vec<f64>)> {
    let n = 2000;
    Ok((ladder_mdp(n, 0.9999, 1.0, 0.01)?, ladder_initial_distribution(n)))
}

/// Ungapped static-regret fixture. Decision state i ∈ 1..=m chooses between
/// a bad absorbing state worth `base` and a good one worth base + i/m, so
/// the value gaps are dense in (0, 1] and no reward gap separates the
/// actions. μ₀ puts mass ∝ 1/i on decision i. Returns the MDP, μ₀ and an
/// initial value V₀ that overrates every bad state by 1.
pub fn decision_fan(m: usize, discount: f64) -> Result<(TabularMdp, Vec<f64>, Vec<f64>)> {
    let base = 1.0;
    // states: decisions 0..m, bad m..2m, good 2m..3m
    let n = 3 * m;
    let mut rows: Vec<Vec<Row>> = Vec::with_capacity(n);
    let mut reward = Vec::with_capacity(n);
    let mut v_star = vec![0.0; n];
    for i in 0..m {
        rows.push(vec![vec![(m + i, 1.0)], vec![(2 * m + i, 1.0)]]);
        reward.push(vec![0.0, 0.0]);
    }
    for i in 0..m {
        rows.push(vec![vec![(m + i, 1.0)]; 2]);
        reward.push(vec![(1.0 - discount) * base; 2]);
        v_star[m + i] = base;
    }
    for i in 0..m {
        let worth = base + (i + 1) as f64 / m as f64;
        rows.push(vec![vec![(2 * m + i, 1.0)]; 2]);
        reward.push(vec![(1.0 - discount) * worth; 2]);
        v_star[2 * m + i] = worth;
    }
    for i in 0..m {
        v_star[i] = discount * v_star[2 * m + i];
    }
    let mut v0 = v_star.clone();
    for x in &mut v0[m..2 * m] {
        *x += 1.0;
    }
    let mut mu0 = vec![0.0; n];
    let z: f64 = (1..=m).map(|i| 1.0 / i as f64).sum();
    for i in 0..m {
        mu0[i] = 1.0 / ((i + 1) as f64 * z);
    }
    let mdp = TabularMdp::new(rows, reward, discount)?.with_action_points(vec![vec![0.0], vec![1.0]])?;
    Ok((mdp, mu0, v0))
}

pub const LOOP_START: usize = 0;
pub const LOOP_A: usize = 1;
pub const LOOP_B: usize = 2;
pub const LOOP_TARGET: usize = 3;
/// Action index of "keep circling" in the loop states; 1 exits to the target.
pub const LOOP_STAY: usize = 0;
pub const LOOP_EXIT: usize = 1;

/// Four states: start → A; A and B form a rewarded cycle (reward `r` for
/// circling) and either can exit straight to the absorbing target, which
/// pays `target_reward` per step. Exiting costs one discount step, so the
/// goal-seeking value at A is V*(target) − ε with ε = (1−γ)V*(target).
pub fn loop_mdp(discount: f64, target_reward: f64, r: f64) -> Result<TabularMdp> {
    let rows: Vec<Vec<Row>> = vec![
        vec![vec![(LOOP_A, 1.0)], vec![(LOOP_A, 1.0)]],
        vec![vec![(LOOP_B, 1.0)], vec![(LOOP_TARGET, 1.0)]],
        vec![vec![(LOOP_A, 1.0)], vec![(LOOP_TARGET, 1.0)]],
        vec![vec![(LOOP_TARGET, 1.0)], vec![(LOOP_TARGET, 1.0)]],
    ];
    let reward = vec![vec![0.0, 0.0], vec![r, 0.0], vec![r, 0.0], vec![target_reward, target_reward]];
    TabularMdp::new(rows, reward, discount)
}


fn three_controls() -> Vec<Vec<f64>> {
    vec![vec![-0.5], vec![0.0], vec![0.5]]
}

/// Consistency fixtures: (name, problem, grid).
pub fn consistency_fixtures() -> Result<Vec<(&'static str, ControlledDiffusionSpec, Grid)>> {
    let line = Grid::interval(-2.1, 2.1, 0.35)?;
    let ou = ControlledDiffusionSpec {
        dim: 1,
        drift: DriftForm::Affine { kappa: 1.0, theta: vec![0.0] },
        diffusion: DiffusionForm::Constant { sigma: 1.0 },
        actions: three_controls(),
        reward: RewardForm::Zero,
        discount_rate: 1.0,
        lipschitz: 1.0,
    };
    let sin = ControlledDiffusionSpec {
        drift: DriftForm::Sinusoid { beta: 0.5, omega: 2.0 },
        ..ou.clone()
    };
    let aff2 = ControlledDiffusionSpec {
        dim: 2,
        drift: DriftForm::Affine { kappa: 0.5, theta: vec![0.2, -0.1] },
        actions: vec![vec![0.3, 0.0], vec![0.0, -0.3]],
        ..ou.clone()
    };
    let square = Grid::new(vec![-1.4, -1.4], vec![1.4, 1.4], 0.35)?;
    Ok(vec![("ou1", ou, line.clone()), ("sin1", sin, line), ("aff2", aff2, square)])
}

/// Ornstein–Uhlenbeck process for the coupling experiment (the middle
/// action is u = 0).
pub fn coupling_ou() -> ControlledDiffusionSpec {
    ControlledDiffusionSpec {
        dim: 1,
        drift: DriftForm::Affine { kappa: 0.5, theta: vec![0.0] },
        diffusion: DiffusionForm::Constant { sigma: 1.0 },
        actions: three_controls(),
        reward: RewardForm::Zero,
        discount_rate: 1.0,
        lipschitz: 0.5,
    }
}

/// Controlled Brownian motion on [0, D] with drift in {−1, 0, 1}, σ = 0.5
/// and a unit tent reward at 0.75·D.
pub fn forward_problem(domain: f64) -> ControlledDiffusionSpec {
    ControlledDiffusionSpec {
        dim: 1,
        drift: DriftForm::Constant,
        diffusion: DiffusionForm::Constant { sigma: 0.5 },
        actions: vec![vec![-1.0], vec![0.0], vec![1.0]],
        reward: RewardForm::Tent { center: vec![0.75 * domain], width: 1.0, height: 1.0 },
        discount_rate: 0.5,
        lipschitz: 1.0,
    }
}

/// Same dynamics on [0, 2] with a height-4 tent of half-width `width` at 1
/// and discount rate 4; shrinking the width shrinks the reward support.
pub fn ratio_problem(width: f64) -> ControlledDiffusionSpec {
    ControlledDiffusionSpec {
        dim: 1,
        drift: DriftForm::Constant,
        diffusion: DiffusionForm::Constant { sigma: 0.5 },
        actions: vec![vec![-1.0], vec![0.0], vec![1.0]],
        reward: RewardForm::Tent { center: vec![1.0], width, height: 4.0 },
        discount_rate: 4.0,
        lipschitz: 1.0,
    }
}

pub const RATIO_WIDTHS: [f64; 3] = [0.5, 0.25, 0.125];
