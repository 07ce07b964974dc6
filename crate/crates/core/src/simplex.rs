//! Optimization over the probability simplex, used for super-learner weights.

use crate::scalar::Scalar;

/// Euclidean projection onto `{w : w ≥ 0, Σw = 1}` (sort-based).
pub fn project_to_simplex<T: Scalar>(v: &[T]) -> Vec<T> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (j, &uj) in u.iter().enumerate() {
        cumsum = cumsum + uj;
        let t = (cumsum - T::one()) / T::from_usize_lossy(j + 1);
        if uj - t > T::zero() {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(T::zero())).collect()
}

/// Result of a simplex-constrained minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution<T> {
    pub weights: Vec<T>,
    pub objective: T,
    pub iterations: usize,
}

/// Minimizes `wᵀQw − 2bᵀw` over the simplex by projected gradient with step
/// `1/L`, started from the best vertex. Each step is a descent step, so the
/// returned objective never exceeds the best vertex's.
pub fn minimize_quadratic<T: Scalar>(
    q: &[T],
    b: &[T],
    tol: T,
    max_iter: usize,
) -> SimplexSolution<T> {
    let j = b.len();
    assert_eq!(q.len(), j * j, "Q must be J×J");
    let objective = |w: &[T]| {
        let mut f = T::zero();
        for a in 0..j {
            let qa: T = (0..j).map(|c| q[a * j + c] * w[c]).sum();
            f = f + w[a] * qa - T::lit(2.0) * b[a] * w[a];
        }
        f
    };
    let vertex = |a: usize| {
        let mut w = vec![T::zero(); j];
        w[a] = T::one();
        w
    };
    let (best, mut f) = (0..j)
        .map(|a| (a, q[a * j + a] - T::lit(2.0) * b[a]))
        .fold((0, T::infinity()), |acc, (a, fa)| if fa < acc.1 { (a, fa) } else { acc });
    let mut w = vertex(best);
    if j == 1 {
        return SimplexSolution {
            weights: w,
            objective: f,
            iterations: 0,
        };
    }

    let lip = T::lit(2.0) * largest_eigenvalue(q, j);
    if !(lip > T::zero()) {
        return SimplexSolution {
            weights: w,
            objective: f,
            iterations: 0,
        };
    }
    let step = T::one() / lip;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let grad: Vec<T> = (0..j)
            .map(|a| {
                let qa: T = (0..j).map(|c| q[a * j + c] * w[c]).sum();
                T::lit(2.0) * (qa - b[a])
            })
            .collect();
        let trial: Vec<T> = w.iter().zip(&grad).map(|(&wi, &g)| wi - step * g).collect();
        let next = project_to_simplex(&trial);
        let f_next = objective(&next);
        let moved = next
            .iter()
            .zip(&w)
            .map(|(&a, &c)| (a - c).abs())
            .fold(T::zero(), T::max);
        if f_next <= f {
            w = next;
            f = f_next;
        } else {
            break;
        }
        if moved < tol {
            break;
        }
    }
    SimplexSolution {
        weights: w,
        objective: f,
        iterations,
    }
}

/// Power iteration for the top eigenvalue of a symmetric PSD matrix; returns
/// an upper bound (the Frobenius norm) if iteration has not settled.
fn largest_eigenvalue<T: Scalar>(q: &[T], j: usize) -> T {
    let frob = q.iter().map(|&v| v * v).sum::<T>().sqrt();
    let mut x = vec![T::one(); j];
    let mut lambda = T::zero();
    for _ in 0..200 {
        let y: Vec<T> = (0..j)
            .map(|a| (0..j).map(|c| q[a * j + c] * x[c]).sum())
            .collect();
        let norm = y.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            return T::zero();
        }
        let next = norm / x.iter().map(|&v| v * v).sum::<T>().sqrt();
        x = y.into_iter().map(|v| v / norm).collect();
        if (next - lambda).abs() <= T::lit(1e-12) * next {
            // inflate slightly: the Rayleigh estimate approaches from below
            return (next * T::lit(1.0 + 1e-9)).min(frob);
        }
        lambda = next;
    }
    frob
}

/// Minimizes a smooth convex objective over the simplex by projected gradient
/// with backtracking (monotone), started at `start`.
pub fn minimize_smooth<F, G>(
    f: F,
    grad: G,
    start: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> SimplexSolution<f64>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut w = start;
    let mut fw = f(&w);
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let g = grad(&w);
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect();
            let next = project_to_simplex(&trial);
            let f_next = f(&next);
            let diff: Vec<f64> = next.iter().zip(&w).map(|(a, b)| a - b).collect();
            let decrease: f64 = g.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>()
                + diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * step);
            if f_next <= fw + decrease + 1e-15 && f_next <= fw {
                let moved = diff.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
                w = next;
                fw = f_next;
                accepted = moved >= tol;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    SimplexSolution {
        weights: w,
        objective: fw,
        iterations,
    }
}
