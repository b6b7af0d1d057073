use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Mean squared error between an `N×1` prediction column and labels.
pub fn task_loss(tape: &mut Tape, preds: Var, labels: &[f64]) -> Result<Var> {
    let shape = tape.value(preds).shape().to_vec();
    if shape != [labels.len(), 1] {
        return Err(Error::shape("task_loss", &shape, &[labels.len(), 1]));
    }
    let y = tape.constant(Tensor::new([labels.len(), 1], labels.to_vec())?)?;
    let d = tape.sub(preds, y)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq)
}

pub fn total_loss(tape: &mut Tape, task: Var, rec: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("loss weight must be non-negative, got {lambda}")));
    }
    let r = tape.scale(rec, lambda)?;
    tape.add(task, r)
}
