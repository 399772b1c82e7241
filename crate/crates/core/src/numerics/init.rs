use rand::Rng;

use super::tensor::Tensor;

/// Glorot/Xavier uniform initialization for a `[fan_out, fan_in]` weight
/// matrix: entries uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    assert_eq!(shape.len(), 2, "glorot_init expects a 2-D shape, got {shape:?}");
    let (fan_out, fan_in) = (shape[0], shape[1]);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_out * fan_in)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(shape.to_vec(), data)
}
