use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatAxis {
    /// One group over every element.
    Global,
    /// One group per index of the leading axis (channel-first layout).
    PerChannel,
}

/// Population mean and standard deviation of a slice.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.max(0.0).sqrt(),
    }
}

/// Mean and population std (divide by N) of `x`, globally or per channel.
pub fn tensor_stats(x: &Tensor, axis: StatAxis) -> Vec<MeanStd> {
    match axis {
        StatAxis::Global => vec![mean_std(x.data())],
        StatAxis::PerChannel => {
            let channels = x.shape()[0];
            let inner = x.numel() / channels;
            x.data().chunks(inner).map(mean_std).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_cases() {
        let s = tensor_stats(&Tensor::from_vec(vec![0.0, 2.0]), StatAxis::Global);
        assert_eq!(s, vec![MeanStd { mean: 1.0, std: 1.0 }]);
        let c = tensor_stats(&Tensor::filled(&[3, 2], 4.0), StatAxis::PerChannel);
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|m| m.mean == 4.0 && m.std == 0.0));
    }
}
