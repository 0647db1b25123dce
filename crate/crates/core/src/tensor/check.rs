use super::{Parameter, Tensor};

/// Central-difference gradient of `f` with respect to every coordinate of
/// `param`: `(f(θ+ε) − f(θ−ε)) / 2ε`.
///
/// `f` receives the perturbed parameter tensor. At kinks (`|x|` at 0, ties
/// in a min) the estimate is a symmetric average and should not be trusted.
pub fn finite_difference_gradient<F>(mut f: F, param: &Parameter, epsilon: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut probe = Tensor::new(param.tensor.shape(), param.tensor.data().to_vec())
        .expect("parameter shape");
    let mut out = Tensor::zeros(param.tensor.shape());
    for i in 0..probe.numel() {
        let base = probe.data()[i];
        probe.data_mut()[i] = base + epsilon;
        let plus = f(&probe);
        probe.data_mut()[i] = base - epsilon;
        let minus = f(&probe);
        probe.data_mut()[i] = base;
        out.data_mut()[i] = (plus - minus) / (2.0 * epsilon);
    }
    out
}

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps near-zero pairs from
/// reporting huge ratios out of rounding noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
