use crate::error::{Error, Result};
use crate::numerics::dot;

/// `max(v · f, 0)`
pub fn regression_head(f: &[f64], v: &[f64]) -> Result<f64> {
    if f.len() != v.len() {
        return Err(Error::invalid(format!(
            "head vector has length {}, representation has {}",
            v.len(),
            f.len()
        )));
    }
    Ok(dot(v, f).max(0.0))
}

/// Mean squared error over a batch.
pub fn mse_loss(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::invalid("target and prediction lengths differ"));
    }
    if y.is_empty() {
        return Err(Error::invalid("mean squared error of an empty batch"));
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// `a * loss_height + (1 - a) * loss_age`
pub fn multitask_loss(loss_height: f64, loss_age: f64, a: f64) -> Result<f64> {
    let w = TaskWeights::new(a)?;
    Ok(w.combine(loss_height, loss_age))
}

/// Per-target loss weights `(a, 1 - a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskWeights {
    pub height: f64,
    pub age: f64,
}

impl TaskWeights {
    pub fn new(a: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::invalid(format!("task weight {a} outside [0, 1]")));
        }
        Ok(TaskWeights {
            height: a,
            age: 1.0 - a,
        })
    }

    pub const HEIGHT_ONLY: TaskWeights = TaskWeights {
        height: 1.0,
        age: 0.0,
    };
    pub const AGE_ONLY: TaskWeights = TaskWeights {
        height: 0.0,
        age: 1.0,
    };

    pub fn combine(&self, loss_height: f64, loss_age: f64) -> f64 {
        self.height * loss_height + self.age * loss_age
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_examples() {
        assert_eq!(regression_head(&[1.0, 0.0], &[0.0, 5.0]).unwrap(), 0.0);
        assert_eq!(regression_head(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(regression_head(&[1.0, 1.0], &[-1.0, -2.0]).unwrap(), 0.0);
        assert!(regression_head(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5);
        assert!(mse_loss(&[], &[]).is_err());
        let base = mse_loss(&[1.0, -2.0, 0.5], &[0.0, 0.0, 0.0]).unwrap();
        let scaled = mse_loss(&[3.0, -6.0, 1.5], &[0.0, 0.0, 0.0]).unwrap();
        assert!((scaled - 9.0 * base).abs() < 1e-12);
    }

    #[test]
    fn multitask_examples() {
        assert_eq!(multitask_loss(2.0, 4.0, 1.0).unwrap(), 2.0);
        assert_eq!(multitask_loss(2.0, 4.0, 0.0).unwrap(), 4.0);
        assert_eq!(multitask_loss(2.0, 4.0, 0.5).unwrap(), 3.0);
        assert!(multitask_loss(2.0, 4.0, 1.5).is_err());
        assert!(multitask_loss(2.0, 4.0, -0.1).is_err());
    }
}
