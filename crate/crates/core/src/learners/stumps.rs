use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::expit;

use super::{response_for, training_loss, FittedModel, Predict, Task, TrainingMeta};

#[derive(Debug, Clone, Copy)]
struct Stump {
    feature: usize,
    threshold: f64,
    left: f64,
    right: f64,
}

#[derive(Debug, Clone)]
struct Stumps {
    base: f64,
    stumps: Vec<Stump>,
    logistic: bool,
    p: usize,
}

impl Stumps {
    fn score(&self, row: &[f64]) -> f64 {
        self.base
            + self
                .stumps
                .iter()
                .map(|s| {
                    if row[s.feature] <= s.threshold {
                        s.left
                    } else {
                        s.right
                    }
                })
                .sum::<f64>()
    }
}

impl Predict for Stumps {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.p {
            return Err(Error::Dimension(format!(
                "model has {} features, input has {}",
                self.p,
                x.ncols()
            )));
        }
        Ok((0..x.nrows())
            .map(|i| {
                let s = self.score(x.row(i));
                if self.logistic {
                    expit(s)
                } else {
                    s
                }
            })
            .collect())
    }
}

/// Gradient boosting with depth-one trees: squared loss for regression,
/// Newton steps on the log loss for classification.
pub fn fit_boosted_stumps(
    x: &Matrix,
    y: &[f64],
    task: Task,
    rounds: usize,
    shrinkage: f64,
) -> Result<FittedModel> {
    let (n, p) = (x.nrows(), x.ncols());
    let logistic = task == Task::Classification;
    let ybar = y.iter().sum::<f64>() / n as f64;
    let base = if logistic {
        let q = ybar.clamp(1e-6, 1.0 - 1e-6);
        (q / (1.0 - q)).ln()
    } else {
        ybar
    };
    let order: Vec<Vec<usize>> = (0..p)
        .map(|j| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)));
            idx
        })
        .collect();

    let mut score = vec![base; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![1.0; n];
    let mut stumps = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        for i in 0..n {
            if logistic {
                let q = expit(score[i]);
                grad[i] = y[i] - q;
                hess[i] = (q * (1.0 - q)).max(1e-6);
            } else {
                grad[i] = y[i] - score[i];
            }
        }
        let (g_tot, h_tot) = (grad.iter().sum::<f64>(), hess.iter().sum::<f64>());
        let mut best: Option<(f64, Stump)> = None;
        for (j, idx) in order.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for w in 0..n - 1 {
                let i = idx[w];
                gl += grad[i];
                hl += hess[i];
                let (a, b) = (x.get(i, j), x.get(idx[w + 1], j));
                if a == b {
                    continue;
                }
                let (gr, hr) = (g_tot - gl, h_tot - hl);
                let gain = gl * gl / hl + gr * gr / hr;
                if best.as_ref().map_or(true, |(g, _)| gain > *g) {
                    best = Some((
                        gain,
                        Stump {
                            feature: j,
                            threshold: 0.5 * (a + b),
                            left: shrinkage * gl / hl,
                            right: shrinkage * gr / hr,
                        },
                    ));
                }
            }
        }
        let Some((_, stump)) = best else { break };
        for i in 0..n {
            score[i] += if x.get(i, stump.feature) <= stump.threshold {
                stump.left
            } else {
                stump.right
            };
        }
        stumps.push(stump);
    }
    let model = Stumps {
        base,
        stumps,
        logistic,
        p,
    };
    let fitted = model.predict(x)?;
    let meta = TrainingMeta {
        loss: training_loss(y, &fitted, task),
        iterations: model.stumps.len(),
        ..TrainingMeta::default()
    };
    Ok(FittedModel::new(model, response_for(task), meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_function_is_learned() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| if i < 20 { 1.0 } else { 5.0 }).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = fit_boosted_stumps(&x, &y, Task::Regression, 50, 0.5).unwrap();
        let p = m.predict(&x).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-6 && (p[39] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn classification_stays_in_unit_interval() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..30).map(|i| f64::from(i % 4 == 0 || i > 20)).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = fit_boosted_stumps(&x, &y, Task::Classification, 100, 0.3).unwrap();
        let probe = Matrix::from_rows(&[vec![-100.0], vec![15.5], vec![1e9]]).unwrap();
        assert!(m.predict(&probe).unwrap().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
