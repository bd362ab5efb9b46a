//! Small dense local optimizers used by the estimator.

use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions<T> {
    pub max_iterations: usize,
    /// Stop once the infinity norm of the gradient falls below this.
    pub gradient_tolerance: T,
    /// Stop once a step moves every coordinate by less than this.
    pub step_tolerance: T,
    /// Central-difference step for numerical gradients.
    pub fd_step: T,
    /// Longest trial step per coordinate; keeps the search inside the
    /// current basin of oscillatory objectives.
    pub max_step: T,
}

impl<T: Scalar> Default for BfgsOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: lit(1e-10),
            step_tolerance: lit(1e-12),
            fd_step: lit(1e-6),
            max_step: lit(f64::MAX),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted iteration, starting at the initial point.
    pub trajectory: Vec<T>,
}

/// Central-difference gradient.
pub fn numeric_gradient<T: Scalar>(f: &mut impl FnMut(&[T]) -> T, x: &[T], h: T) -> Vec<T> {
    let mut probe = x.to_vec();
    let two = T::one() + T::one();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let fp = f(&probe);
            probe[i] = orig - h;
            let fm = f(&probe);
            probe[i] = orig;
            (fp - fm) / (two * h)
        })
        .collect()
}

/// Quasi-Newton BFGS with numerical gradients and a backtracking Armijo line search.
///
/// The returned point never has a larger objective than `x0`.
pub fn bfgs<T: Scalar>(mut f: impl FnMut(&[T]) -> T, x0: &[T], opts: &BfgsOptions<T>) -> Minimum<T> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut trajectory = vec![fx];
    if n == 0 || !fx.is_finite() {
        return Minimum {
            x,
            value: fx,
            iterations: 0,
            converged: n == 0,
            trajectory,
        };
    }
    let mut g = numeric_gradient(&mut f, &x, opts.fd_step);
    let mut hinv = identity::<T>(n);
    let c1 = lit::<T>(1e-4);
    let half = lit::<T>(0.5);
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..opts.max_iterations {
        iterations = it + 1;
        if inf_norm(&g) <= opts.gradient_tolerance {
            converged = true;
            break;
        }
        let mut dir = mat_vec(&hinv, &g);
        dir.iter_mut().for_each(|d| *d = -*d);
        if !(dot(&g, &dir) < T::zero()) {
            // Lost descent: restart from steepest descent.
            hinv = identity(n);
            dir = g.iter().map(|&v| -v).collect();
        }
        let longest = inf_norm(&dir);
        if longest > opts.max_step {
            let shrink = opts.max_step / longest;
            dir.iter_mut().for_each(|d| *d *= shrink);
        }
        let slope = dot(&g, &dir);
        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<T> = x.iter().zip(&dir).map(|(&xi, &di)| xi + step * di).collect();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + c1 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= half;
        }
        let Some((x_new, f_new)) = accepted else {
            // No decrease along the quasi-Newton or gradient direction: at
            // the resolution of the numerical gradient this is a minimum.
            converged = inf_norm(&g) <= opts.gradient_tolerance.max(lit(1e-6)) || hinv == identity(n);
            if !converged {
                hinv = identity(n);
                continue;
            }
            break;
        };
        let s: Vec<T> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let g_new = numeric_gradient(&mut f, &x_new, opts.fd_step);
        let yv: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let small_step = s.iter().all(|v| v.abs() < opts.step_tolerance);
        x = x_new;
        fx = f_new;
        g = g_new;
        trajectory.push(fx);
        if small_step {
            converged = true;
            break;
        }
        let sy = dot(&s, &yv);
        if sy > T::zero() {
            bfgs_update(&mut hinv, &s, &yv, sy);
        }
    }
    Minimum {
        x,
        value: fx,
        iterations,
        converged,
        trajectory,
    }
}

fn bfgs_update<T: Scalar>(hinv: &mut [Vec<T>], s: &[T], y: &[T], sy: T) {
    let n = s.len();
    let rho = T::one() / sy;
    let hy = mat_vec(hinv, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            hinv[i][j] += (T::one() + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

fn identity<T: Scalar>(n: usize) -> Vec<Vec<T>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { T::one() } else { T::zero() }).collect())
        .collect()
}

fn mat_vec<T: Scalar>(m: &[Vec<T>], v: &[T]) -> Vec<T> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// Minimum-sum assignment between `rows` and `cols` by exhaustive search.
///
/// Returns, for each row, the matched column (or `None` when there are more
/// rows than columns). Intended for the handful of targets per scenario.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    let mut best: Option<(f64, Vec<Option<usize>>)> = None;
    let mut current = vec![None; rows];
    let mut used = vec![false; cols];
    search(cost, 0, 0.0, &mut current, &mut used, &mut best);
    best.map(|(_, a)| a).unwrap_or_else(|| vec![None; rows])
}

fn search(
    cost: &[Vec<f64>],
    row: usize,
    acc: f64,
    current: &mut Vec<Option<usize>>,
    used: &mut Vec<bool>,
    best: &mut Option<(f64, Vec<Option<usize>>)>,
) {
    let rows = cost.len();
    let cols = used.len();
    if row == rows {
        let matched = current.iter().filter(|c| c.is_some()).count();
        let better = match best {
            None => true,
            Some((b, a)) => {
                let best_matched = a.iter().filter(|c| c.is_some()).count();
                matched > best_matched || (matched == best_matched && acc < *b)
            }
        };
        if better {
            *best = Some((acc, current.clone()));
        }
        return;
    }
    let free = used.iter().filter(|u| !**u).count();
    for c in 0..cols {
        if !used[c] {
            used[c] = true;
            current[row] = Some(c);
            search(cost, row + 1, acc + cost[row][c], current, used, best);
            current[row] = None;
            used[c] = false;
        }
    }
    // Leave this row unmatched only when columns run out for later rows.
    if free < rows - row {
        search(cost, row + 1, acc, current, used, best);
    }
}
