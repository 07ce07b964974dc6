//! Exact enumeration of the identifying functionals on fully discrete laws.
//!
//! A [`DiscreteDgp`] is a finite joint law of `(X, R, M₁, …, M_K, Y)` given
//! by conditional probability tables. Every counterfactual mean, every
//! nuisance function and the expectation of every one-step summand can be
//! computed exactly by summation, which makes it the ground truth for the
//! estimators.

use std::path::Path;

use num_integer::Integer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AnalysisFrame, OutcomeScale};
use crate::error::{Error, Result};
use crate::estimand::{ArmVector, EstimandId};
use crate::estimators;
use crate::linalg::Matrix;
use crate::nuisance::{mix_seed, LevelFit, NuisanceSet};
use crate::scalar::Scalar;

/// Largest `|X| · 2 · |M̄_K| · |Y|` accepted.
pub const MAX_STATES: usize = 10_000_000;
const ROW_TOL: f64 = 1e-12;
const MC_CHUNK: usize = 1 << 16;

/// Conditional law of one mediator block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediatorTable {
    /// Support points; each is one value per block column.
    pub values: Vec<Vec<f64>>,
    /// `probs[x][r][h][m]`. `h` indexes the history `m̄_{k−1}` in mixed
    /// radix, latest mediator least significant.
    pub probs: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Conditional law of the outcome given `(m̄_K, r, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTable {
    pub values: Vec<f64>,
    /// `probs[x][r][h][y]` with `h` indexing the full history `m̄_K`.
    pub probs: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Raw tables as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpTables {
    #[serde(default)]
    pub name: String,
    pub x_values: Vec<Vec<f64>>,
    pub p_x: Vec<f64>,
    /// `P(R = 1 | x)`.
    pub p_r1: Vec<f64>,
    pub mediators: Vec<MediatorTable>,
    pub outcome: OutcomeTable,
}

/// A validated discrete law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DgpTables", into = "DgpTables")]
pub struct DiscreteDgp {
    tables: DgpTables,
    supports: Vec<usize>,
    /// `hist[k]` = number of histories `m̄_k`.
    hist: Vec<usize>,
}

impl TryFrom<DgpTables> for DiscreteDgp {
    type Error = Error;

    fn try_from(tables: DgpTables) -> Result<Self> {
        DiscreteDgp::new(tables)
    }
}

impl From<DiscreteDgp> for DgpTables {
    fn from(d: DiscreteDgp) -> Self {
        d.tables
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidDgp(msg.into())
}

fn check_row(row: &[f64], len: usize, what: &str) -> Result<()> {
    if row.len() != len {
        return Err(invalid(format!("{what}: expected {len} entries, found {}", row.len())));
    }
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(invalid(format!("{what}: probabilities must be finite and ≥ 0")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_TOL {
        return Err(invalid(format!("{what}: row sums to {s}, not 1")));
    }
    Ok(())
}

fn check_points(points: &[Vec<f64>], what: &str) -> Result<()> {
    let Some(first) = points.first() else {
        return Err(invalid(format!("{what}: empty support")));
    };
    if first.is_empty() || points.iter().any(|p| p.len() != first.len()) {
        return Err(invalid(format!("{what}: support points need a common, nonzero width")));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{what}: non-finite support value")));
    }
    for (i, a) in points.iter().enumerate() {
        if points[..i].contains(a) {
            return Err(invalid(format!("{what}: duplicate support point {a:?}")));
        }
    }
    Ok(())
}

fn check_shape<V>(probs: &[Vec<Vec<V>>], n_x: usize, n_h: usize, what: &str) -> Result<()> {
    if probs.len() != n_x || probs.iter().any(|t| t.len() != 2 || t.iter().any(|r| r.len() != n_h)) {
        return Err(invalid(format!(
            "{what}: table must be indexed [x: {n_x}][r: 2][history: {n_h}]"
        )));
    }
    Ok(())
}

impl DiscreteDgp {
    pub fn new(tables: DgpTables) -> Result<Self> {
        let n_x = tables.x_values.len();
        check_points(&tables.x_values, "covariates")?;
        check_row(&tables.p_x, n_x, "P(X)")?;
        if tables.p_r1.len() != n_x {
            return Err(invalid("P(R=1|X) needs one entry per covariate point"));
        }
        if tables.p_r1.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Positivity("P(R=1|X) must lie strictly inside (0, 1)".into()));
        }
        if tables.mediators.is_empty() {
            return Err(invalid("at least one mediator block"));
        }
        let mut supports = Vec::new();
        let mut hist = vec![1usize];
        for (j, med) in tables.mediators.iter().enumerate() {
            let what = format!("mediator {}", j + 1);
            check_points(&med.values, &what)?;
            let h = hist[j];
            check_shape(&med.probs, n_x, h, &what)?;
            for row in med.probs.iter().flatten().flatten() {
                check_row(row, med.values.len(), &what)?;
            }
            supports.push(med.values.len());
            hist.push(h.checked_mul(med.values.len()).ok_or_else(|| invalid("history overflow"))?);
        }
        let n_y = tables.outcome.values.len();
        if n_y == 0 || tables.outcome.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("outcome support must be non-empty and finite"));
        }
        let states = n_x
            .checked_mul(2 * hist[supports.len()])
            .and_then(|s| s.checked_mul(n_y))
            .unwrap_or(usize::MAX);
        if states > MAX_STATES {
            return Err(invalid(format!("{states} states exceed the limit of {MAX_STATES}")));
        }
        check_shape(&tables.outcome.probs, n_x, hist[supports.len()], "outcome")?;
        for row in tables.outcome.probs.iter().flatten().flatten() {
            check_row(row, n_y, "outcome")?;
        }
        let dgp = DiscreteDgp {
            tables,
            supports,
            hist,
        };
        dgp.check_positivity()?;
        Ok(dgp)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.tables)?)
    }

    pub fn tables(&self) -> &DgpTables {
        &self.tables
    }

    pub fn name(&self) -> &str {
        &self.tables.name
    }

    /// Number of mediator blocks.
    pub fn k(&self) -> usize {
        self.supports.len()
    }

    pub fn n_x(&self) -> usize {
        self.tables.x_values.len()
    }

    pub fn supports(&self) -> &[usize] {
        &self.supports
    }

    fn pm(&self, j: usize, x: usize, r: u8, h: usize) -> &[f64] {
        &self.tables.mediators[j].probs[x][usize::from(r)][h]
    }

    fn py(&self, x: usize, r: u8, h: usize) -> &[f64] {
        &self.tables.outcome.probs[x][usize::from(r)][h]
    }

    fn mean_y<T: Scalar>(&self, x: usize, r: u8, h: usize) -> T {
        self.py(x, r, h)
            .iter()
            .zip(&self.tables.outcome.values)
            .map(|(&p, &y)| T::lit(p) * T::lit(y))
            .sum()
    }

    /// `P(m̄_k | R = arms, x)` for every `k`; `out[k][h]`.
    fn masses<T: Scalar>(&self, x: usize, arms: &[u8]) -> Vec<Vec<T>> {
        let mut out = vec![vec![T::one()]];
        for j in 0..self.k() {
            let s = self.supports[j];
            let prev = &out[j];
            let mut next = vec![T::zero(); self.hist[j + 1]];
            for (h, &w) in prev.iter().enumerate() {
                for (m, &p) in self.pm(j, x, arms[j], h).iter().enumerate() {
                    next[h * s + m] = w * T::lit(p);
                }
            }
            out.push(next);
        }
        out
    }

    fn check_positivity(&self) -> Result<()> {
        let k = self.k();
        for x in 0..self.n_x() {
            let m0 = self.masses::<f64>(x, &vec![0; k]);
            let m1 = self.masses::<f64>(x, &vec![1; k]);
            for j in 1..=k {
                for h in 0..self.hist[j] {
                    if (m0[j][h] > 0.0) != (m1[j][h] > 0.0) {
                        return Err(Error::Positivity(format!(
                            "mediator history {:?} at covariate point {x} is reachable in only one group",
                            self.digits(h, j)
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Splits a history index of `m̄_k` into mediator indices.
    pub fn digits(&self, mut h: usize, k: usize) -> Vec<usize> {
        let mut d = vec![0; k];
        for j in (0..k).rev() {
            d[j] = h % self.supports[j];
            h /= self.supports[j];
        }
        d
    }

    /// Index of the prefix `m̄_b` of a full history.
    fn prefix(&self, h_full: usize, b: usize) -> usize {
        h_full / (self.hist[self.k()] / self.hist[b])
    }

    fn arms_for(&self, estimand: EstimandId) -> Result<ArmVector> {
        estimand.arms(self.k())
    }

    /// `γ` by nested summation, outermost over `x` (depth first).
    pub fn enumerate_gamma<T: Scalar>(&self, estimand: EstimandId) -> Result<T> {
        let arms = self.arms_for(estimand)?;
        Ok(self.enumerate_arms(&arms))
    }

    pub fn enumerate_arms<T: Scalar>(&self, arms: &ArmVector) -> T {
        (0..self.n_x())
            .map(|x| T::lit(self.tables.p_x[x]) * self.forward(x, arms, 0, 0))
            .sum()
    }

    fn forward<T: Scalar>(&self, x: usize, arms: &ArmVector, j: usize, h: usize) -> T {
        if j == self.k() {
            return self.mean_y(x, arms.r0, h);
        }
        let s = self.supports[j];
        self.pm(j, x, arms.mediators[j], h)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(m, &p)| T::lit(p) * self.forward(x, arms, j + 1, h * s + m))
            .sum()
    }

    /// `γ` by backward iterated conditional expectation, every sum taken in
    /// reverse order.
    pub fn enumerate_gamma_backward<T: Scalar>(&self, estimand: EstimandId) -> Result<T> {
        let arms = self.arms_for(estimand)?;
        let k = self.k();
        let mut total = T::zero();
        for x in (0..self.n_x()).rev() {
            let mut theta: Vec<T> = (0..self.hist[k]).map(|h| self.mean_y(x, arms.r0, h)).collect();
            for j in (0..k).rev() {
                let s = self.supports[j];
                theta = (0..self.hist[j])
                    .map(|h| {
                        let p = self.pm(j, x, arms.mediators[j], h);
                        (0..s).rev().map(|m| T::lit(p[m]) * theta[h * s + m]).sum()
                    })
                    .collect();
            }
            total = total + T::lit(self.tables.p_x[x]) * theta[0];
        }
        Ok(total)
    }

    /// `g[k][x][h] = P(R = 1 | m̄_k, x)` with `g[0][x][0] = π(x)`. Histories
    /// unreachable in both groups get `π(x)`.
    fn g_tables<T: Scalar>(&self) -> Vec<Vec<Vec<T>>> {
        let k = self.k();
        let mut g = vec![Vec::with_capacity(self.n_x()); k + 1];
        for x in 0..self.n_x() {
            let p1 = T::lit(self.tables.p_r1[x]);
            let p0 = T::one() - p1;
            let m0 = self.masses::<T>(x, &vec![0; k]);
            let m1 = self.masses::<T>(x, &vec![1; k]);
            for (j, gj) in g.iter_mut().enumerate() {
                gj.push(
                    (0..self.hist[j])
                        .map(|h| {
                            let a = p1 * m1[j][h];
                            let d = a + p0 * m0[j][h];
                            if d > T::zero() { a / d } else { p1 }
                        })
                        .collect(),
                );
            }
        }
        g
    }

    /// Conditional expectation of `theta` (indexed by `m̄_c`) given `m̄_b`
    /// within `R = arm`.
    fn push_down<T: Scalar>(&self, x: usize, mut theta: Vec<T>, c: usize, b: usize, arm: u8) -> Vec<T> {
        for j in (b..c).rev() {
            let s = self.supports[j];
            theta = (0..self.hist[j])
                .map(|h| {
                    let p = self.pm(j, x, arm, h);
                    (0..s).map(|m| T::lit(p[m]) * theta[h * s + m]).sum()
                })
                .collect();
        }
        theta
    }

    /// Exact nested regressions for the plan of `arms`: `out[level][x][h_b]`.
    fn level_tables<T: Scalar>(&self, arms: &ArmVector) -> Vec<Vec<Vec<T>>> {
        let k = self.k();
        let plan = arms.levels();
        let mut out: Vec<Vec<Vec<T>>> = vec![Vec::with_capacity(self.n_x()); plan.len()];
        for x in 0..self.n_x() {
            let mut c = k;
            let mut child: Vec<T> = (0..self.hist[k]).map(|h| self.mean_y(x, plan[0].arm, h)).collect();
            for (li, level) in plan.iter().enumerate() {
                let theta = self.push_down(x, child, c, level.b, level.arm);
                out[li].push(theta.clone());
                child = theta;
                c = level.b;
            }
        }
        out
    }

    /// Every observable configuration with positive probability.
    pub fn support<T: Scalar>(&self) -> Support<T> {
        let k = self.k();
        let n_y = self.tables.outcome.values.len();
        let mut s = Support::default();
        for x in 0..self.n_x() {
            for r in 0..2u8 {
                let pr = if r == 1 { self.tables.p_r1[x] } else { 1.0 - self.tables.p_r1[x] };
                let base = T::lit(self.tables.p_x[x]) * T::lit(pr);
                let mass = self.masses::<T>(x, &vec![r; k]);
                for (h, &m) in mass[k].iter().enumerate() {
                    if m == T::zero() {
                        continue;
                    }
                    let py = self.py(x, r, h);
                    for yi in 0..n_y {
                        if py[yi] == 0.0 {
                            continue;
                        }
                        s.prob.push(base * m * T::lit(py[yi]));
                        s.x.push(x);
                        s.r.push(r);
                        s.history.push(h);
                        s.y_index.push(yi);
                        s.y.push(T::lit(self.tables.outcome.values[yi]));
                    }
                }
            }
        }
        s
    }

    /// Population nuisances for `estimand`, evaluated at the support rows.
    pub fn exact_nuisances<T: Scalar>(
        &self,
        estimand: EstimandId,
        support: &Support<T>,
    ) -> Result<NuisanceSet<T>> {
        self.nuisances_at(estimand, &support.x, &support.history)
    }

    /// Population nuisances at the rows of a frame drawn from this law.
    pub fn exact_nuisances_on(&self, estimand: EstimandId, frame: &AnalysisFrame) -> Result<NuisanceSet> {
        let (xs, hs) = self.locate(frame)?;
        self.nuisances_at(estimand, &xs, &hs)
    }

    /// Covariate point and full history index of every frame row.
    pub fn locate(&self, frame: &AnalysisFrame) -> Result<(Vec<usize>, Vec<usize>)> {
        let k = self.k();
        if frame.k() != k {
            return Err(Error::Dimension(format!("frame has {} blocks, DGP has {k}", frame.k())));
        }
        let find = |points: &[Vec<f64>], row: &[f64], what: &str, i: usize| {
            points
                .iter()
                .position(|p| p.as_slice() == row)
                .ok_or_else(|| invalid(format!("row {i}: {what} value {row:?} is outside the support")))
        };
        let mut xs = Vec::with_capacity(frame.n());
        let mut hs = Vec::with_capacity(frame.n());
        for i in 0..frame.n() {
            xs.push(find(&self.tables.x_values, frame.x().row(i), "covariate", i)?);
            let mut h = 0;
            for j in 0..k {
                let m = find(&self.tables.mediators[j].values, frame.block(j + 1).row(i), "mediator", i)?;
                h = h * self.supports[j] + m;
            }
            hs.push(h);
        }
        Ok((xs, hs))
    }

    fn nuisances_at<T: Scalar>(&self, estimand: EstimandId, xs: &[usize], hs: &[usize]) -> Result<NuisanceSet<T>> {
        let arms = self.arms_for(estimand)?;
        let g = self.g_tables::<T>();
        let levels = self.level_tables::<T>(&arms);
        let n = xs.len();
        let pi: Vec<T> = xs.iter().map(|&x| g[0][x][0]).collect();
        let g_rows = (1..=self.k())
            .map(|j| (j, (0..n).map(|i| g[j][xs[i]][self.prefix(hs[i], j)]).collect()))
            .collect();
        let level_rows = arms
            .levels()
            .into_iter()
            .zip(&levels)
            .map(|(level, table)| LevelFit {
                level,
                values: (0..n).map(|i| table[xs[i]][self.prefix(hs[i], level.b)]).collect(),
            })
            .collect();
        Ok(NuisanceSet {
            estimand,
            arms,
            pi,
            g: g_rows,
            levels: level_rows,
            delta: 0.0,
            folds: None,
            truncated: Default::default(),
        })
    }

    /// `E[φ(O; Q)]` under the observed law with the population nuisances,
    /// for the closed-form summands and for the general engine.
    pub fn one_step_expectation<T: Scalar>(&self, estimand: EstimandId) -> Result<OneStep<T>> {
        let support = self.support::<T>();
        let q = self.exact_nuisances(estimand, &support)?;
        let expect = |v: &[T]| v.iter().zip(&support.prob).map(|(&a, &p)| a * p).sum::<T>();
        let closed = estimators::summands(&support.r, &support.y, &q)?;
        let general = estimators::general_summands(&support.r, &support.y, &q)?;
        Ok(OneStep {
            closed_form: expect(&closed),
            general: expect(&general),
            plug_in: expect(q.centering()),
        })
    }

    /// Largest relative gap, over reachable `(x, m̄_k)`, between the mediator
    /// density ratio `p(m_k | m̄_{k−1}, 1, x) / p(m_k | m̄_{k−1}, 0, x)` and
    /// `odds(g_k) / odds(g_{k−1})`.
    pub fn density_ratio_gap<T: Scalar>(&self) -> T {
        let k = self.k();
        let g = self.g_tables::<T>();
        let m0 = |x| self.masses::<T>(x, &vec![0; k]);
        let odds = |v: T| v / (T::one() - v);
        let mut worst = T::zero();
        for x in 0..self.n_x() {
            let reach = m0(x);
            for j in 1..=k {
                let s = self.supports[j - 1];
                for h in 0..self.hist[j] {
                    if reach[j][h] == T::zero() {
                        continue;
                    }
                    let (hp, m) = (h / s, h % s);
                    let direct = T::lit(self.pm(j - 1, x, 1, hp)[m]) / T::lit(self.pm(j - 1, x, 0, hp)[m]);
                    let bayes = odds(g[j][x][h]) / odds(g[j - 1][x][hp]);
                    worst = worst.max((direct - bayes).abs() / direct.abs().max(T::one()));
                }
            }
        }
        worst
    }

    fn draw(rng: &mut impl Rng, probs: &[f64]) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = i;
                if u < acc {
                    return i;
                }
            }
        }
        last
    }

    fn draw_x(&self, rng: &mut impl Rng) -> usize {
        Self::draw(rng, &self.tables.p_x)
    }

    /// Draws the nested counterfactual `Y(r₀; a₁, …, a_K)` `n` times through
    /// the structural cascade and returns its mean and standard error.
    pub fn cascade_mc(&self, estimand: EstimandId, n: usize, seed: u64) -> Result<McEstimate> {
        let arms = self.arms_for(estimand)?;
        let chunks: Vec<(f64, f64)> = (0..n.div_ceil(MC_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, c as u64));
                let len = MC_CHUNK.min(n - c * MC_CHUNK);
                let (mut s, mut ss) = (0.0, 0.0);
                for _ in 0..len {
                    let x = self.draw_x(&mut rng);
                    let mut h = 0;
                    for j in 0..self.k() {
                        let m = Self::draw(&mut rng, self.pm(j, x, arms.mediators[j], h));
                        h = h * self.supports[j] + m;
                    }
                    let y = self.tables.outcome.values[Self::draw(&mut rng, self.py(x, arms.r0, h))];
                    s += y;
                    ss += y * y;
                }
                (s, ss)
            })
            .collect();
        let (s, ss) = chunks.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        McEstimate::from_moments(s, ss, n)
    }

    /// Draws `n` observations from the joint law.
    pub fn sample(&self, n: usize, seed: u64) -> Result<AnalysisFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.k();
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.draw_x(&mut rng);
            let r = u8::from(rng.random::<f64>() < self.tables.p_r1[x]);
            let mut h = 0;
            for j in 0..k {
                h = h * self.supports[j] + Self::draw(&mut rng, self.pm(j, x, r, h));
            }
            let yi = Self::draw(&mut rng, self.py(x, r, h));
            rows.push((x, r, h, yi));
        }
        self.frame_from(&rows)
    }

    fn frame_from(&self, rows: &[(usize, u8, usize, usize)]) -> Result<AnalysisFrame> {
        let k = self.k();
        let x = Matrix::from_rows(
            &rows.iter().map(|&(x, ..)| self.tables.x_values[x].clone()).collect::<Vec<_>>(),
        )?;
        let digits: Vec<Vec<usize>> = rows.iter().map(|&(_, _, h, _)| self.digits(h, k)).collect();
        let blocks = (0..k)
            .map(|j| {
                Matrix::from_rows(
                    &digits
                        .iter()
                        .map(|d| self.tables.mediators[j].values[d[j]].clone())
                        .collect::<Vec<_>>(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let r = rows.iter().map(|&(_, r, ..)| r).collect();
        let y = rows.iter().map(|&(.., yi)| self.tables.outcome.values[yi]).collect();
        AnalysisFrame::new(x, r, blocks, y, OutcomeScale::Raw)
    }

    /// A frame whose empirical law equals the DGP exactly: every support
    /// point is repeated in proportion to its probability. Requires every
    /// table entry to be a fraction with denominator ≤ 10⁶.
    pub fn exact_frame(&self, max_rows: usize) -> Result<ExactFrame> {
        let support = self.support::<f64>();
        let k = self.k();
        let frac = |v: f64, what: &str| {
            fraction(v).ok_or_else(|| invalid(format!("{what} entry {v} is not a simple fraction")))
        };
        let mut probs = Vec::with_capacity(support.len());
        for i in 0..support.len() {
            let (x, r, h) = (support.x[i], support.r[i], support.history[i]);
            let pr = if r == 1 { self.tables.p_r1[x] } else { 1.0 - self.tables.p_r1[x] };
            let mut p = mul(frac(self.tables.p_x[x], "P(X)")?, frac(pr, "P(R|X)")?);
            let d = self.digits(h, k);
            let mut hist = 0;
            for j in 0..k {
                p = mul(p, frac(self.pm(j, x, r, hist)[d[j]], "mediator")?);
                hist = hist * self.supports[j] + d[j];
            }
            p = mul(p, frac(self.py(x, r, h)[support.y_index[i]], "outcome")?);
            probs.push(p);
        }
        let mut total: u128 = 1;
        for &(_, den) in &probs {
            total = total.lcm(&den);
            if total > max_rows as u128 {
                return Err(invalid(format!(
                    "an exact frame needs at least {total} rows, over the limit of {max_rows}"
                )));
            }
        }
        let counts: Vec<u128> = probs.iter().map(|&(num, den)| num * (total / den)).collect();
        if counts.iter().sum::<u128>() != total {
            return Err(invalid("table rows do not sum to one as fractions"));
        }
        let mut rows = Vec::with_capacity(total as usize);
        let mut support_row = Vec::with_capacity(total as usize);
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                rows.push((support.x[i], support.r[i], support.history[i], support.y_index[i]));
                support_row.push(i);
            }
        }
        Ok(ExactFrame {
            frame: self.frame_from(&rows)?,
            support_row,
        })
    }

    /// The same law with the group labels exchanged.
    pub fn swap_groups(&self) -> Result<Self> {
        let mut t = self.tables.clone();
        for p in &mut t.p_r1 {
            *p = 1.0 - *p;
        }
        for med in &mut t.mediators {
            for tx in &mut med.probs {
                tx.swap(0, 1);
            }
        }
        for tx in &mut t.outcome.probs {
            tx.swap(0, 1);
        }
        t.name = format!("{}_swapped", t.name);
        DiscreteDgp::new(t)
    }

    /// Compares the enumeration, the one-step expectation at the true
    /// nuisances and the cascade Monte Carlo for every estimand.
    pub fn check(&self, mc_draws: usize, seed: u64) -> Result<OracleReport> {
        let k = self.k();
        let mut ids = EstimandId::natural(k);
        ids.extend((1..=k).map(EstimandId::Sequential));
        let rows = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let enumerated = self.enumerate_gamma::<f64>(id)?;
                let one = self.one_step_expectation::<f64>(id)?;
                let mc = if mc_draws > 0 {
                    Some(self.cascade_mc(id, mc_draws, mix_seed(seed, i as u64))?)
                } else {
                    None
                };
                Ok(OracleRow {
                    estimand: id,
                    enumerated,
                    backward: self.enumerate_gamma_backward(id)?,
                    one_step: one.closed_form,
                    general: one.general,
                    plug_in: one.plug_in,
                    mc,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OracleReport {
            name: self.name().to_string(),
            k,
            density_ratio_gap: self.density_ratio_gap(),
            rows,
        })
    }
}

/// Positive-probability observable configurations, one per row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Support<T> {
    pub prob: Vec<T>,
    pub x: Vec<usize>,
    pub r: Vec<u8>,
    /// Full mediator history index.
    pub history: Vec<usize>,
    pub y_index: Vec<usize>,
    pub y: Vec<T>,
}

impl<T> Support<T> {
    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }
}

/// Expectations of one-step quantities at the true nuisances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneStep<T> {
    pub closed_form: T,
    pub general: T,
    pub plug_in: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub draws: usize,
}

impl McEstimate {
    pub fn from_moments(sum: f64, sum_sq: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("Monte Carlo needs at least one draw".into()));
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 { ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
        Ok(McEstimate {
            mean,
            se: (var / nf).sqrt(),
            draws: n,
        })
    }
}

/// A frame reproducing the DGP exactly, with the support row behind each
/// frame row.
#[derive(Debug, Clone)]
pub struct ExactFrame {
    pub frame: AnalysisFrame,
    pub support_row: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub estimand: EstimandId,
    pub enumerated: f64,
    pub backward: f64,
    pub one_step: f64,
    pub general: f64,
    pub plug_in: f64,
    pub mc: Option<McEstimate>,
}

impl OracleRow {
    /// Largest gap between the enumeration and the exact alternatives.
    pub fn exact_gap(&self) -> f64 {
        [self.backward, self.one_step, self.general, self.plug_in]
            .iter()
            .map(|v| (v - self.enumerated).abs())
            .fold(0.0, f64::max)
    }

    pub fn mc_z(&self) -> Option<f64> {
        self.mc.map(|m| {
            let d = (m.mean - self.enumerated).abs();
            if m.se > 0.0 { d / m.se } else if d == 0.0 { 0.0 } else { f64::INFINITY }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub k: usize,
    pub density_ratio_gap: f64,
    pub rows: Vec<OracleRow>,
}

impl OracleReport {
    pub fn max_exact_gap(&self) -> f64 {
        self.rows
            .iter()
            .map(OracleRow::exact_gap)
            .fold(self.density_ratio_gap, f64::max)
    }

    pub fn max_mc_z(&self) -> Option<f64> {
        self.rows.iter().filter_map(OracleRow::mc_z).reduce(f64::max)
    }

    pub fn passes(&self, exact_tol: f64, max_z: f64) -> bool {
        self.max_exact_gap() < exact_tol && self.max_mc_z().is_none_or(|z| z <= max_z)
    }
}

/// `v` as a reduced fraction with denominator ≤ 10⁶, if one matches to 1e−13.
fn fraction(v: f64) -> Option<(u128, u128)> {
    if !(0.0..=1.0).contains(&v) {
        return None;
    }
    let (mut h0, mut h1, mut k0, mut k1) = (0u128, 1u128, 1u128, 0u128);
    let mut rest = v;
    for _ in 0..64 {
        let a = rest.floor();
        let ai = a as u128;
        let (h2, k2) = (ai * h1 + h0, ai * k1 + k0);
        if k2 > 1_000_000 {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if (h1 as f64 / k1 as f64 - v).abs() < 1e-13 {
            return Some((h1, k1));
        }
        let frac = rest - a;
        if frac < 1e-15 {
            break;
        }
        rest = 1.0 / frac;
    }
    None
}

fn mul(a: (u128, u128), b: (u128, u128)) -> (u128, u128) {
    let g1 = a.0.gcd(&b.1);
    let g2 = b.0.gcd(&a.1);
    ((a.0 / g1) * (b.0 / g2), (a.1 / g2) * (b.1 / g1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DgpTables {
        DgpTables {
            name: "tiny".into(),
            x_values: vec![vec![0.0], vec![1.0]],
            p_x: vec![0.5, 0.5],
            p_r1: vec![0.4, 0.6],
            mediators: vec![MediatorTable {
                values: vec![vec![0.0], vec![1.0]],
                probs: vec![
                    vec![vec![vec![0.7, 0.3]], vec![vec![0.4, 0.6]]],
                    vec![vec![vec![0.5, 0.5]], vec![vec![0.2, 0.8]]],
                ],
            }],
            outcome: OutcomeTable {
                values: vec![0.0, 1.0],
                probs: vec![
                    vec![vec![vec![0.8, 0.2], vec![0.6, 0.4]], vec![vec![0.7, 0.3], vec![0.5, 0.5]]],
                    vec![vec![vec![0.9, 0.1], vec![0.3, 0.7]], vec![vec![0.6, 0.4], vec![0.2, 0.8]]],
                ],
            },
        }
    }

    #[test]
    fn hand_computed_gammas() {
        let d = DiscreteDgp::new(tiny()).unwrap();
        // x=0: P(M=1|r)= .3/.6 ; E[Y|m,r]: r0 (.2,.4), r1 (.3,.5)
        // x=1: P(M=1|r)= .5/.8 ; E[Y|m,r]: r0 (.1,.7), r1 (.4,.8)
        let dis = 0.5 * (0.7 * 0.2 + 0.3 * 0.4) + 0.5 * (0.5 * 0.1 + 0.5 * 0.7);
        let direct = 0.5 * (0.7 * 0.3 + 0.3 * 0.5) + 0.5 * (0.5 * 0.4 + 0.5 * 0.8);
        let med = 0.5 * (0.4 * 0.2 + 0.6 * 0.4) + 0.5 * (0.2 * 0.1 + 0.8 * 0.7);
        let g = |id| d.enumerate_gamma::<f64>(id).unwrap();
        assert!((g(EstimandId::Dis) - dis).abs() < 1e-15);
        assert!((g(EstimandId::Direct) - direct).abs() < 1e-15);
        assert!((g(EstimandId::Mediator(1)) - med).abs() < 1e-15);
        assert_eq!(g(EstimandId::Sequential(1)), g(EstimandId::Direct));
    }

    #[test]
    fn validation_errors() {
        let mut t = tiny();
        t.mediators[0].probs[0][1][0] = vec![0.5, 0.4];
        assert!(matches!(DiscreteDgp::new(t), Err(Error::InvalidDgp(_))));
        let mut t = tiny();
        t.mediators[0].probs[1][0][0] = vec![1.0, 0.0];
        assert!(matches!(DiscreteDgp::new(t), Err(Error::Positivity(_))));
        let mut t = tiny();
        t.p_r1[0] = 1.0;
        assert!(matches!(DiscreteDgp::new(t), Err(Error::Positivity(_))));
        let mut t = tiny();
        t.outcome.probs[0].pop();
        assert!(DiscreteDgp::new(t).is_err());
    }

    #[test]
    fn fractions() {
        assert_eq!(fraction(0.38), Some((19, 50)));
        assert_eq!(fraction(0.0), Some((0, 1)));
        assert_eq!(fraction(1.0), Some((1, 1)));
        assert_eq!(fraction(1.0 / 3.0), Some((1, 3)));
        assert_eq!(fraction(std::f64::consts::PI / 4.0), None);
        assert_eq!(mul((2, 3), (3, 4)), (1, 2));
    }

    #[test]
    fn json_round_trip() {
        let d = DiscreteDgp::new(tiny()).unwrap();
        let back = DiscreteDgp::from_json(&d.to_json().unwrap()).unwrap();
        assert_eq!(back, d);
    }
}
