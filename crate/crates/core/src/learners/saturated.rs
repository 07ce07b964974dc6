use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{response_for, training_loss, FittedModel, Predict, Task, TrainingMeta};

/// Frequency-table regression: the prediction for a feature row is the mean
/// response among training rows with identical features. Unseen rows are an
/// error (no smoothing).
#[derive(Debug, Clone)]
struct Saturated {
    p: usize,
    cells: HashMap<Vec<u64>, f64>,
}

fn key(row: &[f64]) -> Vec<u64> {
    // normalize −0.0 so it shares a cell with 0.0
    row.iter().map(|v| (v + 0.0).to_bits()).collect()
}

impl Predict for Saturated {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.p {
            return Err(Error::Dimension(format!(
                "model has {} features, input has {}",
                self.p,
                x.ncols()
            )));
        }
        (0..x.nrows())
            .map(|i| {
                self.cells.get(&key(x.row(i))).copied().ok_or_else(|| {
                    Error::LearnerFailed(format!(
                        "saturated learner has an empty cell at {:?}",
                        x.row(i)
                    ))
                })
            })
            .collect()
    }
}

pub fn fit_saturated(x: &Matrix, y: &[f64], task: Task) -> Result<FittedModel> {
    let mut sums: HashMap<Vec<u64>, (f64, usize)> = HashMap::new();
    for i in 0..x.nrows() {
        let e = sums.entry(key(x.row(i))).or_insert((0.0, 0));
        e.0 += y[i];
        e.1 += 1;
    }
    let model = Saturated {
        p: x.ncols(),
        cells: sums
            .into_iter()
            .map(|(k, (s, c))| (k, s / c as f64))
            .collect(),
    };
    let fitted = model.predict(x)?;
    let meta = TrainingMeta {
        loss: training_loss(y, &fitted, task),
        ..TrainingMeta::default()
    };
    Ok(FittedModel::new(model, response_for(task), meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_means_and_empty_cells() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let m = fit_saturated(&x, &[1.0, 0.0, 1.0], Task::Classification).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![0.5, 0.5, 1.0]);
        let unseen = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert!(m.predict(&unseen).is_err());
    }
}
