use crate::error::{FedError, Result};
use crate::model::ParamSet;

pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// One client's contribution to an aggregation.
#[derive(Debug, Clone, Copy)]
pub struct Contribution<'a> {
    pub client: usize,
    pub weight: f64,
    pub params: &'a ParamSet,
}

/// `sum_k p_k theta_k`, summed in ascending client order.
pub fn server_aggregate_fedavg(contribs: &[Contribution<'_>]) -> Result<ParamSet> {
    let mut sorted: Vec<Contribution<'_>> = contribs.to_vec();
    sorted.sort_by_key(|c| c.client);
    let first = sorted.first().ok_or_else(|| FedError::Empty("aggregation without contributions".into()))?;
    let total: f64 = sorted.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(FedError::config("weights", format!("aggregation weights sum to {total}, not 1")));
    }
    if let Some(c) = sorted.iter().find(|c| !(c.weight >= 0.0)) {
        return Err(FedError::config("weights", format!("client {} has weight {}", c.client, c.weight)));
    }
    let mut acc = first.params.zeros_like();
    for c in &sorted {
        acc.check_compatible(c.params)?;
        acc.add_scaled(c.weight, c.params)?;
    }
    Ok(acc)
}

/// Server-side Adam moments over the trainable entries.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamMoments {
    pub fn zeros_like(theta: &ParamSet) -> Self {
        AdamMoments {
            m: theta.zeros_like(),
            v: theta.zeros_like(),
        }
    }
}

/// `m <- b1 m + (1-b1) d`, `v <- b2 v + (1-b2) d^2`,
/// `theta <- theta + eta m / (sqrt(v) + tau)` on the keys of `delta`,
/// without bias correction.
pub fn fedadam_update(
    theta: &mut ParamSet,
    moments: &mut AdamMoments,
    delta: &ParamSet,
    eta: f64,
    beta1: f64,
    beta2: f64,
    tau: f64,
) -> Result<()> {
    for (name, _, d) in delta.iter() {
        let m = moments.m.get_mut(name).ok_or_else(|| FedError::KeyMismatch(name.into()))?;
        for (mv, dv) in m.data_mut().iter_mut().zip(d.data()) {
            *mv = beta1 * *mv + (1.0 - beta1) * dv;
        }
        let v = moments.v.get_mut(name).ok_or_else(|| FedError::KeyMismatch(name.into()))?;
        for (vv, dv) in v.data_mut().iter_mut().zip(d.data()) {
            *vv = beta2 * *vv + (1.0 - beta2) * dv * dv;
        }
        let m = moments.m.get(name).expect("just updated");
        let v = moments.v.get(name).expect("just updated");
        let t = theta.get_mut(name).ok_or_else(|| FedError::KeyMismatch(name.into()))?;
        for ((tv, mv), vv) in t.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            *tv += eta * mv / (vv.sqrt() + tau);
        }
    }
    Ok(())
}
