use crate::error::{Error, Result};
use crate::linalg::{weighted_ridge, Matrix};
use crate::scalar::expit;

use super::{check_inputs, training_loss, FittedModel, Predict, ResponseType, Task, TrainingMeta};

const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
const SEPARATION_LAMBDA: f64 = 1e-4;

#[derive(Debug, Clone)]
struct LinearPredictor {
    coef: Vec<f64>,
    logistic: bool,
}

impl LinearPredictor {
    fn eta(&self, row: &[f64]) -> f64 {
        self.coef[0] + self.coef[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }
}

impl Predict for LinearPredictor {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() + 1 != self.coef.len() {
            return Err(Error::Dimension(format!(
                "model has {} features, input has {}",
                self.coef.len() - 1,
                x.ncols()
            )));
        }
        Ok((0..x.nrows())
            .map(|i| {
                let eta = self.eta(x.row(i));
                if self.logistic {
                    expit(eta)
                } else {
                    eta
                }
            })
            .collect())
    }
}

/// Least squares with an unpenalized intercept and ridge penalty `λ` on the
/// slopes. With `λ = 0` and a singular design, `pinv_fallback` selects the
/// minimum-norm solution instead of failing.
pub fn fit_linear(x: &Matrix, y: &[f64], lambda: f64, pinv_fallback: bool) -> Result<FittedModel> {
    check_inputs(x, y, Task::Regression)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidLearner("negative ridge penalty".into()));
    }
    let (coef, used_pinv) = weighted_ridge(x, y, None, lambda, pinv_fallback)?;
    let model = LinearPredictor {
        coef,
        logistic: false,
    };
    let fitted = model.predict(x)?;
    let meta = TrainingMeta {
        loss: training_loss(y, &fitted, Task::Regression),
        iterations: 1,
        regularized: used_pinv,
        notes: if used_pinv {
            vec!["singular design; minimum-norm solution".into()]
        } else {
            Vec::new()
        },
    };
    Ok(FittedModel::new(model, ResponseType::Continuous, meta))
}

/// Maximum-likelihood logistic regression by IRLS. Falls back to a small
/// ridge penalty when the data are (quasi-)separated.
pub fn fit_logistic(x: &Matrix, y: &[f64]) -> Result<FittedModel> {
    check_binary(x, y)?;
    match irls(x, y, 0.0) {
        Ok(fit) if !fit.separated => Ok(fit.into_model(x, y, false)),
        _ => {
            let fit = irls(x, y, SEPARATION_LAMBDA)?;
            Ok(fit.into_model(x, y, true))
        }
    }
}

/// Logistic regression with an L2 penalty `λ‖β₋₀‖²` on the slopes.
pub fn fit_logistic_penalized(x: &Matrix, y: &[f64], lambda: f64) -> Result<FittedModel> {
    check_binary(x, y)?;
    if lambda == 0.0 {
        return fit_logistic(x, y);
    }
    let fit = irls(x, y, lambda)?;
    Ok(fit.into_model(x, y, false))
}

fn check_binary(x: &Matrix, y: &[f64]) -> Result<()> {
    check_inputs(x, y, Task::Classification)?;
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::LearnerFailed(
            "logistic regression needs both classes".into(),
        ));
    }
    Ok(())
}

struct IrlsFit {
    coef: Vec<f64>,
    iterations: usize,
    separated: bool,
}

impl IrlsFit {
    fn into_model(self, x: &Matrix, y: &[f64], fallback: bool) -> FittedModel {
        let model = LinearPredictor {
            coef: self.coef,
            logistic: true,
        };
        let fitted = model.predict(x).unwrap_or_default();
        let meta = TrainingMeta {
            loss: training_loss(y, &fitted, Task::Classification),
            iterations: self.iterations,
            regularized: fallback,
            notes: if fallback {
                vec![format!("separation detected; ridge λ = {SEPARATION_LAMBDA}")]
            } else {
                Vec::new()
            },
        };
        FittedModel::new(model, ResponseType::Probability, meta)
    }
}

fn irls(x: &Matrix, y: &[f64], lambda: f64) -> Result<IrlsFit> {
    let n = y.len();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut coef = vec![0.0; x.ncols() + 1];
    coef[0] = (ybar / (1.0 - ybar)).ln();
    let objective = |coef: &[f64]| -> f64 {
        let model = LinearPredictor {
            coef: coef.to_vec(),
            logistic: false,
        };
        let dev: f64 = (0..n)
            .map(|i| {
                let eta = model.eta(x.row(i));
                // log(1 + e^eta) − y·eta, computed stably
                let softplus = if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                };
                2.0 * (softplus - y[i] * eta)
            })
            .sum();
        dev + lambda * coef[1..].iter().map(|b| b * b).sum::<f64>()
    };
    let mut dev = objective(&coef);
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        let model = LinearPredictor {
            coef: coef.clone(),
            logistic: false,
        };
        for i in 0..n {
            let eta = model.eta(x.row(i));
            let p = expit(eta);
            let wi = (p * (1.0 - p)).max(1e-10);
            w[i] = wi;
            z[i] = eta + (y[i] - p) / wi;
        }
        // The penalized deviance is 2·(negative log-likelihood) + λ‖β‖²,
        // so the weighted least-squares penalty is λ/2.
        let (next, _) = weighted_ridge(x, &z, Some(&w), lambda / 2.0, true)?;
        let mut step = 1.0;
        let mut candidate = next.clone();
        let mut next_dev = objective(&candidate);
        while !(next_dev <= dev + 1e-12 * dev.abs()) && step > 1e-6 {
            step *= 0.5;
            candidate = coef
                .iter()
                .zip(&next)
                .map(|(a, b)| a + step * (b - a))
                .collect();
            next_dev = objective(&candidate);
        }
        if !next_dev.is_finite() {
            return Err(Error::LearnerFailed("IRLS diverged".into()));
        }
        let change = (dev - next_dev).abs() / (next_dev.abs() + 0.1);
        coef = candidate;
        dev = next_dev;
        if change < IRLS_TOL {
            converged = true;
            break;
        }
    }
    let model = LinearPredictor {
        coef: coef.clone(),
        logistic: false,
    };
    let max_eta = (0..n)
        .map(|i| model.eta(x.row(i)).abs())
        .fold(0.0, f64::max);
    let separated = !converged || max_eta > 30.0;
    Ok(IrlsFit {
        coef,
        iterations,
        separated,
    })
}
