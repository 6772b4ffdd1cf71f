use super::Scalar;

/// One Nesterov momentum step, in place:
/// `v <- momentum * v + g`, then `theta <- theta - lr * (g + momentum * v)`.
pub fn sgd_nesterov_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: T,
    momentum: T,
) {
    assert_eq!(params.len(), grads.len(), "params and grads differ in length");
    assert_eq!(params.len(), velocity.len(), "params and velocity differ in length");
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p = *p - lr * (g + momentum * *v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![0.3f64, -1.2];
        let mut v = vec![0.0; 2];
        sgd_nesterov_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9);
        assert_eq!(p, vec![0.3, -1.2]);
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn single_step_value() {
        let mut p = vec![1.0f64];
        let mut v = vec![0.0];
        sgd_nesterov_step(&mut p, &[0.5], &mut v, 0.1, 0.9);
        assert_eq!(v[0], 0.5);
        assert!((p[0] - 0.905).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut rng = crate::rng::rng_from(1);
        let p0: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut p = p0.clone();
        let mut v = vec![0.0; 50];
        sgd_nesterov_step(&mut p, &g, &mut v, 0.01, 0.0);
        for i in 0..50 {
            assert_eq!(p[i], p0[i] - 0.01 * g[i]);
        }
    }
}
