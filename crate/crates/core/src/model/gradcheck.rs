//! Central-difference gradient check of the batch loss.

use crate::dataset::Batch;
use crate::error::Result;

use super::{Model, NormMode, Session};

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` over the whole
    /// tensor; zero when both vanish.
    pub rel_error: f64,
}

/// Mean token loss of `batch` with dropout off and frozen batch norm.
pub fn frozen_loss(model: &Model, batch: &Batch) -> Result<f64> {
    let mut session = Session::new(model, None, NormMode::Frozen);
    let fwd = session.forward(batch)?;
    let loss = session.batch_loss(batch, &fwd)?;
    Ok(session.tape.scalar(loss))
}

/// Compares backpropagated gradients with central differences of step `h`
/// for every element of every parameter tensor.
pub fn gradient_check(model: &Model, batch: &Batch, h: f64) -> Result<Vec<GroupCheck>> {
    let analytic = {
        let mut session = Session::new(model, None, NormMode::Frozen);
        let fwd = session.forward(batch)?;
        let loss = session.batch_loss(batch, &fwd)?;
        session.tape.backward(loss)
    };
    let mut probe = model.clone();
    let ids: Vec<_> = model.params().ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let a = analytic.get(id);
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for (idx, &ga) in a.indexed_iter() {
            let orig = probe.params().get(id)[idx];
            probe.params_mut().get_mut(id)[idx] = orig + h;
            let up = frozen_loss(&probe, batch)?;
            probe.params_mut().get_mut(id)[idx] = orig - h;
            let down = frozen_loss(&probe, batch)?;
            probe.params_mut().get_mut(id)[idx] = orig;
            let gn = (up - down) / (2.0 * h);
            diff2 += (ga - gn).powi(2);
            a2 += ga * ga;
            n2 += gn * gn;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        out.push(GroupCheck {
            name: model.params().name(id).to_string(),
            analytic_norm: a2.sqrt(),
            numeric_norm: n2.sqrt(),
            rel_error: if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale },
        });
    }
    Ok(out)
}
