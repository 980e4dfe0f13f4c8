//! Finite metric spaces and their complexity.
//!
//! Greedy ε-nets, exact covering numbers (small spaces only), cover trees,
//! and γ₂ estimates: a cover-tree upper bound, an exhaustive minimizer for
//! tiny spaces, and Dudley's entropy integral.

use crate::error::{invalid, Error, Result};

/// Largest space accepted by [`covering_number_exact`].
pub const EXACT_COVER_LIMIT: usize = 20;
/// Largest space accepted by [`gamma2_bruteforce`].
pub const BRUTE_GAMMA2_LIMIT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Euclidean,
    Chebyshev,
}

impl MetricKind {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            MetricKind::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            MetricKind::Chebyshev => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FiniteMetricSpace {
    points: Vec<Vec<f64>>,
    kind: MetricKind,
}

impl FiniteMetricSpace {
    pub fn new(points: Vec<Vec<f64>>, kind: MetricKind) -> Result<Self> {
        if let Some(first) = points.first() {
            let dim = first.len();
            for (index, p) in points.iter().enumerate() {
                if p.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: p.len(), index });
                }
                if p.iter().any(|x| !x.is_finite()) {
                    return Err(invalid(format!("point {index} has a non-finite coordinate")));
                }
            }
        }
        Ok(Self { points, kind })
    }

    pub fn euclidean(points: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(points, MetricKind::Euclidean)
    }

    /// Points on the real line.
    pub fn line(xs: &[f64]) -> Self {
        Self { points: xs.iter().map(|&x| vec![x]).collect(), kind: MetricKind::Euclidean }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        self.kind.eval(&self.points[i], &self.points[j])
    }

    /// Restriction to `indices`, keeping the parent metric.
    pub fn subspace(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            kind: self.kind,
        }
    }

    pub fn diameter(&self) -> f64 {
        let n = self.len();
        let mut d = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                d = d.max(self.distance(i, j));
            }
        }
        d
    }

    /// Smallest strictly positive pairwise distance, if any.
    pub fn min_positive_distance(&self) -> Option<f64> {
        let n = self.len();
        let mut best: Option<f64> = None;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = self.distance(i, j);
                if d > 0.0 && best.map_or(true, |b| d < b) {
                    best = Some(d);
                }
            }
        }
        best
    }

    /// Number of pairwise distinct points.
    pub fn distinct_count(&self) -> usize {
        (0..self.len())
            .filter(|&i| (0..i).all(|j| self.distance(i, j) > 0.0))
            .count()
    }
}

/// Row-major symmetric n×n matrix of pairwise distances.
pub fn distance_matrix(space: &FiniteMetricSpace) -> Result<Vec<Vec<f64>>> {
    if space.is_empty() {
        return Err(invalid("distance matrix of an empty space"));
    }
    let n = space.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = space.distance(i, j);
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsNet {
    pub epsilon: f64,
    pub center_indices: Vec<usize>,
}

impl EpsNet {
    pub fn len(&self) -> usize {
        self.center_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center_indices.is_empty()
    }
}

/// Greedy ε-net seeded at point 0, scanning points in index order.
pub fn greedy_eps_net(space: &FiniteMetricSpace, epsilon: f64) -> Result<EpsNet> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if space.is_empty() {
        return Err(invalid("epsilon-net of an empty space"));
    }
    let mut centers = vec![0usize];
    for s in 1..space.len() {
        let covered = centers.iter().any(|&c| space.distance(s, c) <= epsilon);
        if !covered {
            centers.push(s);
        }
    }
    Ok(EpsNet { epsilon, center_indices: centers })
}

/// Minimum number of closed ε-balls centred at points of the space that
/// cover it. Exact branch-and-bound set cover; oracle use only.
pub fn covering_number_exact(space: &FiniteMetricSpace, epsilon: f64) -> Result<usize> {
    let n = space.len();
    if n > EXACT_COVER_LIMIT {
        return Err(Error::OracleTooLarge { n, limit: EXACT_COVER_LIMIT });
    }
    if !(epsilon >= 0.0) {
        return Err(invalid(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    if n == 0 {
        return Ok(0);
    }
    let balls: Vec<u32> = (0..n)
        .map(|c| {
            (0..n)
                .filter(|&x| space.distance(c, x) <= epsilon)
                .fold(0u32, |m, x| m | (1 << x))
        })
        .collect();
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };

    fn search(covered: u32, full: u32, used: usize, best: &mut usize, balls: &[u32]) {
        if covered == full {
            *best = (*best).min(used);
            return;
        }
        if used + 1 >= *best {
            return;
        }
        let u = (!covered & full).trailing_zeros() as usize;
        for &b in balls {
            if b & (1 << u) != 0 {
                search(covered | b, full, used + 1, best, balls);
            }
        }
    }

    let mut best = greedy_eps_net(space, epsilon.max(f64::MIN_POSITIVE))?.len();
    search(0, full, 0, &mut best, &balls);
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverLevel {
    pub scale: i32,
    pub nodes: Vec<usize>,
    /// sup over points of the distance to the nearest node at this level.
    pub sup_distance: f64,
}

/// Nested 2^i-nets from `top_scale` down to `bottom_scale`.
#[derive(Debug, Clone)]
pub struct CoverTree {
    pub top_scale: i32,
    pub bottom_scale: i32,
    /// Ordered from the top scale downwards.
    pub levels: Vec<CoverLevel>,
    /// Parent of each node at the level it first appears (None for the root
    /// and for duplicate points that never become nodes).
    pub parent: Vec<Option<usize>>,
    /// Nodes in order of first appearance, coarsest level first.
    pub insertion_order: Vec<usize>,
    space: FiniteMetricSpace,
}

impl CoverTree {
    pub fn space(&self) -> &FiniteMetricSpace {
        &self.space
    }

    pub fn level(&self, scale: i32) -> Option<&CoverLevel> {
        if scale > self.top_scale || scale < self.bottom_scale {
            return None;
        }
        self.levels.get((self.top_scale - scale) as usize)
    }
}

fn pow2(i: i32) -> f64 {
    2f64.powi(i)
}

pub fn build_cover_tree(space: &FiniteMetricSpace) -> Result<CoverTree> {
    let n = space.len();
    if n == 0 {
        return Err(invalid("cover tree of an empty space"));
    }
    let diam = space.diameter();
    let (top, bottom) = match space.min_positive_distance() {
        None => (0, 0),
        Some(minpos) => {
            let mut top = diam.log2().ceil() as i32;
            while pow2(top) < diam {
                top += 1;
            }
            while top > i32::MIN + 1 && pow2(top - 1) >= diam {
                top -= 1;
            }
            let mut bottom = minpos.log2().floor() as i32;
            // distinct points must be strictly more than 2^bottom apart
            while pow2(bottom) >= minpos {
                bottom -= 1;
            }
            (top, bottom.min(top))
        }
    };

    let mut parent = vec![None; n];
    let mut in_tree = vec![false; n];
    let mut nodes = vec![0usize];
    in_tree[0] = true;
    let mut mind: Vec<f64> = (0..n).map(|x| space.distance(x, 0)).collect();
    let mut levels = Vec::with_capacity((top - bottom + 1) as usize);
    levels.push(CoverLevel {
        scale: top,
        nodes: nodes.clone(),
        sup_distance: mind.iter().copied().fold(0.0, f64::max),
    });

    for scale in (bottom..top).rev() {
        let r = pow2(scale);
        let coarser = nodes.clone();
        for p in 0..n {
            if in_tree[p] || mind[p] <= r {
                continue;
            }
            let mut best = (f64::INFINITY, usize::MAX);
            for &c in &coarser {
                let d = space.distance(p, c);
                if d < best.0 {
                    best = (d, c);
                }
            }
            parent[p] = Some(best.1);
            in_tree[p] = true;
            nodes.push(p);
            for (x, m) in mind.iter_mut().enumerate() {
                let d = space.distance(x, p);
                if d < *m {
                    *m = d;
                }
            }
        }
        let mut sorted = nodes.clone();
        sorted.sort_unstable();
        levels.push(CoverLevel {
            scale,
            nodes: sorted,
            sup_distance: mind.iter().copied().fold(0.0, f64::max),
        });
    }

    Ok(CoverTree {
        top_scale: top,
        bottom_scale: bottom,
        levels,
        parent,
        insertion_order: nodes,
        space: space.clone(),
    })
}

/// Violations of the nesting, covering and separation invariants, checked
/// exhaustively. Empty when the tree is valid.
pub fn cover_tree_violations(space: &FiniteMetricSpace, tree: &CoverTree) -> Vec<String> {
    let mut out = Vec::new();
    for w in tree.levels.windows(2) {
        let (coarse, fine) = (&w[0], &w[1]);
        if let Some(x) = coarse.nodes.iter().find(|x| !fine.nodes.contains(x)) {
            out.push(format!("nesting: node {x} at scale {} missing at {}", coarse.scale, fine.scale));
        }
    }
    for lvl in &tree.levels {
        let r = pow2(lvl.scale);
        for x in 0..space.len() {
            let d = lvl.nodes.iter().map(|&c| space.distance(x, c)).fold(f64::INFINITY, f64::min);
            if d > r {
                out.push(format!("covering: point {x} is {d} from level {}", lvl.scale));
            }
        }
        for (a, &u) in lvl.nodes.iter().enumerate() {
            for &v in &lvl.nodes[a + 1..] {
                if space.distance(u, v) <= r {
                    out.push(format!("separation: nodes {u},{v} at level {}", lvl.scale));
                }
            }
        }
    }
    out
}

/// Σ_i 2^{i/2} sup_x d(x, N_i) summed directly over the represented scales.
pub fn gamma2_level_sum(tree: &CoverTree) -> f64 {
    tree.levels
        .iter()
        .map(|l| 2f64.powf(l.scale as f64 / 2.0) * l.sup_distance)
        .sum()
}

fn admissible_cap(n: u32) -> usize {
    if n >= 6 {
        usize::MAX
    } else {
        1usize << (1u32 << n)
    }
}

/// γ₂ upper bound from the admissible sequence the tree induces: T_0 is the
/// root and T_n is the first min(2^{2^n}, n) nodes in insertion order, i.e.
/// the finest level that fits plus as many nodes of the next level as the
/// cardinality budget allows.
pub fn gamma2_upper(tree: &CoverTree) -> f64 {
    let space = &tree.space;
    let order = &tree.insertion_order;
    let mut mind: Vec<f64> = (0..space.len()).map(|x| space.distance(x, order[0])).collect();
    let mut total = mind.iter().copied().fold(0.0, f64::max);
    let mut used = 1;
    let mut n = 1u32;
    while used < order.len() {
        let cap = admissible_cap(n).min(order.len());
        for &c in &order[used..cap] {
            for (x, m) in mind.iter_mut().enumerate() {
                let d = space.distance(x, c);
                if d < *m {
                    *m = d;
                }
            }
        }
        used = cap;
        let sup = mind.iter().copied().fold(0.0, f64::max);
        total += 2f64.powf(n as f64 / 2.0) * sup;
        n += 1;
    }
    total
}

/// Exact infimum of sup_t Σ_n 2^{n/2} d(t, T_n) for spaces of at most six
/// points. Levels n ≥ 2 can hold the whole space, so only (T_0, T_1) matter.
pub fn gamma2_bruteforce(space: &FiniteMetricSpace) -> Result<f64> {
    let n = space.len();
    if n > BRUTE_GAMMA2_LIMIT {
        return Err(Error::OracleTooLarge { n, limit: BRUTE_GAMMA2_LIMIT });
    }
    if n == 0 {
        return Err(invalid("gamma2 of an empty space"));
    }
    let dm = distance_matrix(space)?;
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut best = f64::INFINITY;
    for t0 in 0..n {
        for mask in 1u32..(1 << n) {
            if mask.count_ones() > 4 {
                continue;
            }
            let worst = (0..n)
                .map(|t| {
                    let d1 = (0..n)
                        .filter(|&c| mask & (1 << c) != 0)
                        .map(|c| dm[t][c])
                        .fold(f64::INFINITY, f64::min);
                    dm[t][t0] + sqrt2 * d1
                })
                .fold(0.0, f64::max);
            best = best.min(worst);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DudleyBound {
    pub value: f64,
    /// True when greedy-net sizes stood in for exact covering numbers.
    pub surrogate: bool,
}

/// ∫₀^diam sqrt(ln N(ε)) dε by the midpoint rule on a geometric grid.
pub fn dudley_bound(space: &FiniteMetricSpace, quadrature_steps: usize) -> Result<DudleyBound> {
    if quadrature_steps < 2 {
        return Err(invalid(format!("quadrature_steps must be at least 2, got {quadrature_steps}")));
    }
    if space.is_empty() {
        return Err(invalid("Dudley bound of an empty space"));
    }
    let surrogate = space.len() > EXACT_COVER_LIMIT;
    let Some(minpos) = space.min_positive_distance() else {
        return Ok(DudleyBound { value: 0.0, surrogate });
    };
    let diam = space.diameter();
    let cover = |eps: f64| -> Result<usize> {
        if surrogate {
            Ok(greedy_eps_net(space, eps)?.len())
        } else {
            covering_number_exact(space, eps)
        }
    };
    // below the smallest distance every distinct point needs its own ball
    let lo = 0.5 * minpos;
    let mut value = lo * (space.distinct_count() as f64).ln().sqrt();
    let ratio = (diam / lo).powf(1.0 / quadrature_steps as f64);
    let mut a = lo;
    for k in 0..quadrature_steps {
        let b = if k + 1 == quadrature_steps { diam } else { a * ratio };
        let mid = 0.5 * (a + b);
        value += (b - a) * (cover(mid)? as f64).ln().sqrt();
        a = b;
    }
    Ok(DudleyBound { value, surrogate })
}

/// Grid of spacing `h` restricted to the closed unit ball of R^d, ordered by
/// norm (stable), so point 0 is the origin.
pub fn unit_ball_grid(dim: usize, h: f64) -> FiniteMetricSpace {
    let m = (1.0 / h).floor() as i64;
    let side: Vec<f64> = (-m..=m).map(|k| k as f64 * h).collect();
    let mut points = Vec::new();
    let mut idx = vec![0usize; dim];
    loop {
        let p: Vec<f64> = idx.iter().map(|&k| side[k]).collect();
        if p.iter().map(|x| x * x).sum::<f64>() <= 1.0 + 1e-12 {
            points.push(p);
        }
        let mut k = 0;
        loop {
            if k == dim {
                // centre first, so the root of any cover tree is the origin
                points.sort_by(|a: &Vec<f64>, b: &Vec<f64>| {
                    let na: f64 = a.iter().map(|x| x * x).sum();
                    let nb: f64 = b.iter().map(|x| x * x).sum();
                    na.total_cmp(&nb)
                });
                return FiniteMetricSpace { points, kind: MetricKind::Euclidean };
            }
            idx[k] += 1;
            if idx[k] < side.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collinear(n: usize, spacing: f64) -> FiniteMetricSpace {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * spacing).collect();
        FiniteMetricSpace::line(&xs)
    }

    #[test]
    fn three_four_five() {
        let s = FiniteMetricSpace::euclidean(vec![vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let m = distance_matrix(&s).unwrap();
        assert_eq!(m[0][1], 5.0);
        assert_eq!(m[1][0], 5.0);
        assert_eq!(m[0][0], 0.0);
    }

    #[test]
    fn identical_points_give_zero_matrix() {
        let s = FiniteMetricSpace::euclidean(vec![vec![1.5, -2.0]; 2]).unwrap();
        assert!(distance_matrix(&s).unwrap().iter().flatten().all(|&d| d == 0.0));
    }

    #[test]
    fn ragged_points_rejected() {
        let e = FiniteMetricSpace::euclidean(vec![vec![0.0, 0.0], vec![1.0]]).unwrap_err();
        assert!(matches!(e, Error::DimensionMismatch { index: 1, .. }));
    }

    #[test]
    fn chebyshev_is_max_norm() {
        let s = FiniteMetricSpace::new(vec![vec![0.0, 0.0], vec![3.0, -4.0]], MetricKind::Chebyshev)
            .unwrap();
        assert_eq!(s.distance(0, 1), 4.0);
    }

    #[test]
    fn large_epsilon_gives_single_center() {
        let s = collinear(7, 0.3);
        let net = greedy_eps_net(&s, s.diameter()).unwrap();
        assert_eq!(net.center_indices, vec![0]);
    }

    #[test]
    fn nonpositive_epsilon_rejected() {
        assert!(greedy_eps_net(&collinear(3, 1.0), 0.0).is_err());
        assert!(greedy_eps_net(&collinear(3, 1.0), -1.0).is_err());
    }

    #[test]
    fn greedy_net_on_decile_grid() {
        let s = collinear(11, 0.1);
        let net = greedy_eps_net(&s, 0.15).unwrap();
        for x in 0..s.len() {
            assert!(net.center_indices.iter().any(|&c| s.distance(x, c) <= 0.15));
        }
        for (i, &a) in net.center_indices.iter().enumerate() {
            for &b in &net.center_indices[i + 1..] {
                assert!(s.distance(a, b) > 0.15);
            }
        }
    }

    #[test]
    fn greedy_net_vs_exact_cover_on_five_points() {
        let s = collinear(5, 1.0);
        let exact = covering_number_exact(&s, 1.0).unwrap();
        assert_eq!(exact, 2);
        assert!(greedy_eps_net(&s, 1.0).unwrap().len() <= 2 * exact);
    }

    #[test]
    fn exact_cover_two_points() {
        let s = collinear(2, 1.0);
        assert_eq!(covering_number_exact(&s, 1.0).unwrap(), 1);
        assert_eq!(covering_number_exact(&s, 0.4).unwrap(), 2);
    }

    #[test]
    fn exact_cover_rejects_large_spaces() {
        let e = covering_number_exact(&collinear(21, 1.0), 1.0).unwrap_err();
        assert!(matches!(e, Error::OracleTooLarge { n: 21, limit: 20 }));
    }

    #[test]
    fn single_point_tree() {
        let s = collinear(1, 1.0);
        let t = build_cover_tree(&s).unwrap();
        assert!(t.levels.iter().all(|l| l.nodes == vec![0]));
        assert_eq!(gamma2_upper(&t), 0.0);
        assert_eq!(gamma2_level_sum(&t), 0.0);
    }

    #[test]
    fn two_point_tree_levels() {
        let s = collinear(2, 1.0);
        let t = build_cover_tree(&s).unwrap();
        for l in &t.levels {
            if pow2(l.scale) < 1.0 {
                assert_eq!(l.nodes, vec![0, 1]);
            } else {
                assert_eq!(l.nodes, vec![0]);
            }
        }
        assert!(t.levels.iter().any(|l| l.nodes.len() == 2));
        assert!(cover_tree_violations(&s, &t).is_empty());
    }

    #[test]
    fn two_point_gamma2_values() {
        let s = collinear(2, 1.0);
        assert_eq!(gamma2_bruteforce(&s).unwrap(), 1.0);
        let t = build_cover_tree(&s).unwrap();
        assert_eq!(gamma2_upper(&t), 1.0);
        let scaled = collinear(2, 3.0);
        let u = gamma2_upper(&build_cover_tree(&scaled).unwrap());
        assert!((3.0..=3.0 * 4.0).contains(&u));
    }

    #[test]
    fn unit_square_brute_below_upper() {
        let s = FiniteMetricSpace::euclidean(vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let brute = gamma2_bruteforce(&s).unwrap();
        assert!((brute - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!(brute <= gamma2_upper(&build_cover_tree(&s).unwrap()));
    }

    #[test]
    fn brute_rejects_seven_points() {
        assert!(matches!(
            gamma2_bruteforce(&collinear(7, 1.0)),
            Err(Error::OracleTooLarge { n: 7, limit: 6 })
        ));
    }

    #[test]
    fn dudley_two_points() {
        let d = dudley_bound(&collinear(2, 1.0), 32).unwrap();
        assert!((d.value - 2f64.ln().sqrt()).abs() < 1e-3);
        assert!(!d.surrogate);
    }

    #[test]
    fn dudley_single_point_and_bad_steps() {
        assert_eq!(dudley_bound(&collinear(1, 1.0), 8).unwrap().value, 0.0);
        assert!(dudley_bound(&collinear(2, 1.0), 1).is_err());
    }

    #[test]
    fn unit_ball_grid_counts() {
        assert_eq!(unit_ball_grid(1, 0.5).len(), 5);
        // lattice points of norm² ≤ 4 in Z²: 1 + 4 + 4 + 4 = 13
        assert_eq!(unit_ball_grid(2, 0.5).len(), 13);
    }
}
