use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{FittedModel, Learner, Predict, ResponseType, Task, TrainingMeta};

/// `E[y | x] = P(y ≠ 0 | x) · E[y | y ≠ 0, x]`.
#[derive(Debug, Clone)]
pub struct TwoPartModel {
    zero: FittedModel,
    positive: FittedModel,
}

impl TwoPartModel {
    /// `(p̂, m̂)` for each row.
    pub fn predict_parts(&self, x: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.zero.predict(x)?, self.positive.predict(x)?))
    }
}

impl Predict for TwoPartModel {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let (p, m) = self.predict_parts(x)?;
        Ok(p.iter().zip(&m).map(|(a, b)| a * b).collect())
    }
}

/// Fits the zero part on `I(nonzero)` and the positive part on the nonzero
/// rows. `nonzero` defaults to `y ≠ 0`.
pub fn fit_two_part(
    x: &Matrix,
    y: &[f64],
    nonzero: Option<&[bool]>,
    zero_learner: &Learner,
    positive_learner: &Learner,
    seed: u64,
) -> Result<(FittedModel, TwoPartModel)> {
    if x.nrows() != y.len() || nonzero.is_some_and(|m| m.len() != y.len()) {
        return Err(Error::Dimension("two-part inputs differ in length".into()));
    }
    let flags: Vec<bool> = match nonzero {
        Some(m) => m.to_vec(),
        None => y.iter().map(|&v| v != 0.0).collect(),
    };
    let pos: Vec<usize> = (0..y.len()).filter(|&i| flags[i]).collect();
    let mut notes = Vec::new();
    let parts = if pos.is_empty() {
        log::warn!("two-part model: no nonzero outcomes; predicting 0");
        notes.push("no nonzero outcomes".into());
        TwoPartModel {
            zero: FittedModel::constant(0.0, ResponseType::Probability),
            positive: FittedModel::constant(0.0, ResponseType::Continuous),
        }
    } else {
        let zero = if pos.len() == y.len() {
            FittedModel::constant(1.0, ResponseType::Probability)
        } else {
            let ind: Vec<f64> = flags.iter().map(|&f| f64::from(u8::from(f))).collect();
            zero_learner.fit(x, &ind, Task::Classification, seed)?
        };
        let ypos: Vec<f64> = pos.iter().map(|&i| y[i]).collect();
        let positive = positive_learner.fit(
            &x.select_rows(&pos),
            &ypos,
            Task::Regression,
            seed.wrapping_add(1),
        )?;
        TwoPartModel { zero, positive }
    };
    let meta = TrainingMeta {
        notes,
        ..TrainingMeta::default()
    };
    let model = FittedModel::new(parts.clone(), ResponseType::Continuous, meta);
    Ok((model, parts))
}
