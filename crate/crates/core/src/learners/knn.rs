use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{response_for, training_loss, FittedModel, Predict, Task, TrainingMeta};

/// k-nearest-neighbour averaging on standardized features.
#[derive(Debug, Clone)]
struct Knn {
    k: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
    train: Matrix,
    y: Vec<f64>,
}

impl Knn {
    fn standardize(&self, x: &Matrix) -> Matrix {
        x.map_rows(x.ncols(), |src, dst| {
            for j in 0..src.len() {
                dst[j] = (src[j] - self.center[j]) / self.scale[j];
            }
        })
    }
}

impl Predict for Knn {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.train.ncols() {
            return Err(Error::Dimension(format!(
                "model has {} features, input has {}",
                self.train.ncols(),
                x.ncols()
            )));
        }
        let z = self.standardize(x);
        let n = self.train.nrows();
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
        Ok((0..z.nrows())
            .map(|i| {
                let q = z.row(i);
                dist.clear();
                dist.extend((0..n).map(|t| {
                    let d: f64 = self
                        .train
                        .row(t)
                        .iter()
                        .zip(q)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, t)
                }));
                // ties broken by training row order for determinism
                let k = self.k.min(n);
                dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                dist[..k].iter().map(|&(_, t)| self.y[t]).sum::<f64>() / k as f64
            })
            .collect())
    }
}

pub fn fit_knn(x: &Matrix, y: &[f64], task: Task, k: usize) -> Result<FittedModel> {
    if k == 0 {
        return Err(Error::InvalidLearner("knn needs k ≥ 1".into()));
    }
    let (n, p) = (x.nrows(), x.ncols());
    let mut center = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for j in 0..p {
        let col = x.column(j);
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        center[j] = m;
        if var > 0.0 {
            scale[j] = var.sqrt();
        }
    }
    let mut model = Knn {
        k,
        center,
        scale,
        train: Matrix::empty(0),
        y: y.to_vec(),
    };
    model.train = model.standardize(x);
    let fitted = model.predict(x)?;
    let meta = TrainingMeta {
        loss: training_loss(y, &fitted, task),
        ..TrainingMeta::default()
    };
    Ok(FittedModel::new(model, response_for(task), meta))
}
