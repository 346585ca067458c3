use crate::error::Result;
use crate::model::ParamSet;

/// Central-difference gradient of `f` at `theta` for every trainable entry
/// (everything except running normalisation statistics).
pub fn finite_diff_grad<F>(f: F, theta: &ParamSet, h: f64) -> Result<ParamSet>
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = theta.clone();
    let mut grad = theta.trainable().zeros_like();
    for name in grad.names().map(str::to_owned).collect::<Vec<_>>() {
        let len = theta.get(&name).expect("name from theta").numel();
        for i in 0..len {
            let orig = probe.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let plus = f(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let minus = f(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;
            grad.get_mut(&name).unwrap().data_mut()[i] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Partition;
    use crate::numerics::Tensor;

    fn theta() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("a", Partition::Body, Tensor::from_vec(vec![0.5, -1.5, 2.0]));
        p.insert("b", Partition::Head, Tensor::from_vec(vec![3.0]));
        p.insert("s", Partition::NormStats, Tensor::from_vec(vec![9.0]));
        p
    }

    #[test]
    fn quadratic() {
        let th = theta();
        let g = finite_diff_grad(|p| Ok(p.norm_sq()), &th, 1e-5).unwrap();
        assert!(g.get("s").is_none());
        for name in ["a", "b"] {
            for (gv, tv) in g.get(name).unwrap().data().iter().zip(th.get(name).unwrap().data()) {
                assert!((gv - 2.0 * tv).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_function() {
        let g = finite_diff_grad(|_| Ok(1.25), &theta(), 1e-5).unwrap();
        assert_eq!(g.norm_sq(), 0.0);
    }

    #[test]
    fn logistic_single_sample() {
        // loss = softplus(z) - y z with z = w.x + b ; grad_w = (sigmoid(z)-y) x
        let x = [0.3, -1.2, 0.7];
        let y = 1.0;
        let mut p = ParamSet::new();
        p.insert("w", Partition::Head, Tensor::from_vec(vec![0.4, 0.1, -0.8]));
        let loss = |p: &ParamSet| {
            let z: f64 = p.get("w").unwrap().data().iter().zip(&x).map(|(a, b)| a * b).sum();
            Ok((1.0 + z.exp()).ln() - y * z)
        };
        let g = finite_diff_grad(loss, &p, 1e-5).unwrap();
        let z: f64 = p.get("w").unwrap().data().iter().zip(&x).map(|(a, b)| a * b).sum();
        let s = 1.0 / (1.0 + (-z).exp());
        for (gv, xv) in g.get("w").unwrap().data().iter().zip(&x) {
            let exact = (s - y) * xv;
            assert!((gv - exact).abs() <= 1e-6 * exact.abs());
        }
    }
}
