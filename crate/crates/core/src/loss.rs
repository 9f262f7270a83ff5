//! Buoy loss, surrogate-field regularizer and accuracy metrics.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

/// Observed SWH at one buoy cell and step of an estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuoyObservation {
    pub row: usize,
    pub col: usize,
    pub step: usize,
    pub value: f64,
}

/// Mean squared error between the estimate (`K x J x T`) and the listed buoy
/// observations. Missing observations are simply not listed.
pub fn loss_buoy<T: Real>(g: &mut Graph<T>, y_hat: Var, observations: &[BuoyObservation]) -> Result<Var> {
    let shape = g.shape(y_hat).to_vec();
    if shape.len() != 3 {
        return Err(shape_err("loss_buoy", format!("estimate must be K x J x T, got {:?}", shape)));
    }
    if observations.is_empty() {
        return Err(Error::Undefined("every buoy observation in the window is missing".into()));
    }
    let (cols, steps) = (shape[1], shape[2]);
    let mut idx = Vec::with_capacity(observations.len());
    for o in observations {
        if o.row >= shape[0] || o.col >= cols || o.step >= steps {
            return Err(Error::Range(format!("observation at ({}, {}, {}) outside {:?}", o.row, o.col, o.step, shape)));
        }
        idx.push((o.row * cols + o.col) * steps + o.step);
    }
    let picked = g.gather(y_hat, &idx)?;
    let target: Vec<f64> = observations.iter().map(|o| o.value).collect();
    let target = g.constant(Tensor::from_f64(&[target.len()], &target)?);
    let diff = g.sub(picked, target)?;
    let sq = g.square(diff);
    g.mean_all(sq)
}

/// Mean squared distance between the estimate and the surrogate field over all
/// `K x J x T` cells.
pub fn loss_phys<T: Real>(g: &mut Graph<T>, y_hat: Var, surrogate: Var) -> Result<Var> {
    if g.shape(y_hat) != g.shape(surrogate) {
        return Err(shape_err("loss_phys", format!("estimate {:?} vs surrogate {:?}", g.shape(y_hat), g.shape(surrogate))));
    }
    let diff = g.sub(y_hat, surrogate)?;
    let sq = g.square(diff);
    g.mean_all(sq)
}

/// `L1 + alpha * L2`. With `alpha == 0` the regularizer is left out of the
/// graph entirely.
pub fn total_loss<T: Real>(g: &mut Graph<T>, l1: Var, l2: Var, alpha: f64) -> Result<Var> {
    if alpha == 0.0 {
        return Ok(l1);
    }
    let weighted = g.scale(l2, T::of(alpha));
    g.add(l1, weighted)
}

pub fn total_loss_value(l1: f64, l2: f64, alpha: f64) -> f64 {
    l1 + alpha * l2
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub count: usize,
}

impl Metrics {
    /// Metrics of a list of signed errors.
    pub fn from_errors(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Undefined("no observations to score".into()));
        }
        let n = errors.len() as f64;
        let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
        let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
        Ok(Self { mae, mse, rmse: libm::sqrt(mse), count: errors.len() })
    }
}

/// Scores an estimate at the given buoy observations.
pub fn evaluate(estimate: &[f32], rows: usize, cols: usize, steps: usize, observations: &[BuoyObservation]) -> Result<Metrics> {
    if estimate.len() != rows * cols * steps {
        return Err(shape_err("evaluate", format!("{} values for {}x{}x{}", estimate.len(), rows, cols, steps)));
    }
    let mut errors = Vec::with_capacity(observations.len());
    for o in observations {
        if o.row >= rows || o.col >= cols || o.step >= steps {
            return Err(Error::Range(format!("observation at ({}, {}, {}) outside {}x{}x{}", o.row, o.col, o.step, rows, cols, steps)));
        }
        errors.push(estimate[(o.row * cols + o.col) * steps + o.step] as f64 - o.value);
    }
    Metrics::from_errors(&errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn obs(row: usize, col: usize, step: usize, value: f64) -> BuoyObservation {
        BuoyObservation { row, col, step, value }
    }

    fn field(g: &mut Graph<f64>, shape: &[usize], data: &[f64]) -> Var {
        g.leaf(Tensor::from_f64(shape, data).unwrap().with_requires_grad(true))
    }

    #[test]
    fn buoy_loss_examples() {
        let mut g = Graph::new();
        let y = field(&mut g, &[1, 2, 1], &[0.5, 1.0]);
        let l = loss_buoy(&mut g, y, &[obs(0, 0, 0, 1.0)]).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.25);
        let l = loss_buoy(&mut g, y, &[obs(0, 0, 0, 0.5), obs(0, 1, 0, 1.0)]).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.0);
        let l = loss_buoy(&mut g, y, &[obs(0, 0, 0, 0.4), obs(0, 1, 0, 1.3)]).unwrap();
        assert!((g.value(l).item().unwrap() - 0.05).abs() < 1e-12);
        assert!(matches!(loss_buoy(&mut g, y, &[]), Err(Error::Undefined(_))));
    }

    #[test]
    fn phys_loss_examples() {
        let mut g = Graph::new();
        let y = field(&mut g, &[2, 2, 1], &[1.0, 1.0, 1.0, 1.0]);
        let s = field(&mut g, &[2, 2, 1], &[1.0, 1.0, 1.2, 0.8]);
        let l = loss_phys(&mut g, y, s).unwrap();
        assert!((g.value(l).item().unwrap() - 0.02).abs() < 1e-12);
        let shifted = field(&mut g, &[2, 2, 1], &[1.1; 4]);
        let l = loss_phys(&mut g, y, shifted).unwrap();
        assert!((g.value(l).item().unwrap() - 0.01).abs() < 1e-12);
        let l = loss_phys(&mut g, y, y).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.0);
        let bad = field(&mut g, &[4, 1, 1], &[0.0; 4]);
        assert!(loss_phys(&mut g, y, bad).is_err());
    }

    #[test]
    fn total_loss_examples() {
        assert!((total_loss_value(0.1, 0.2, 0.3) - 0.16).abs() < 1e-15);
        assert_eq!(total_loss_value(0.1, 0.2, 0.0), 0.1);
        assert_eq!(total_loss_value(0.0, 0.0, 0.3), 0.0);
        let mut g = Graph::<f64>::new();
        let l1 = g.constant(Tensor::scalar(0.1));
        let l2 = g.constant(Tensor::scalar(0.2));
        let l = total_loss(&mut g, l1, l2, 0.0).unwrap();
        assert_eq!(l, l1);
    }

    #[test]
    fn alpha_derivative_is_phys_loss() {
        let (l1, l2) = (0.37, 0.81);
        let h = 1e-6;
        let d = (total_loss_value(l1, l2, 0.3 + h) - total_loss_value(l1, l2, 0.3 - h)) / (2.0 * h);
        assert!((d - l2).abs() < 1e-9);
    }

    #[test]
    fn metric_examples() {
        let m = Metrics::from_errors(&[0.1, -0.3]).unwrap();
        assert!((m.mae - 0.2).abs() < 1e-12);
        assert!((m.mse - 0.05).abs() < 1e-12);
        assert!((m.rmse - 0.223_606_797_749_979).abs() < 1e-12);
        assert_eq!(Metrics::from_errors(&[0.0, 0.0]).unwrap().rmse, 0.0);
        assert!(matches!(Metrics::from_errors(&[]), Err(Error::Undefined(_))));
    }

    #[test]
    fn evaluate_reads_buoy_cells() {
        let est = vec![0.0f32, 1.0, 2.0, 3.0];
        let m = evaluate(&est, 1, 2, 2, &[obs(0, 1, 0, 2.0), obs(0, 0, 1, 1.0)]).unwrap();
        assert_eq!(m.mse, 0.0);
        assert!(evaluate(&est, 1, 2, 2, &[obs(1, 0, 0, 0.0)]).is_err());
    }
}
