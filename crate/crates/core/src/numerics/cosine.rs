use std::sync::Once;

use super::matrix::{dot, norm};

static ZERO_VECTOR_WARNING: Once = Once::new();

fn warn_zero_vector() {
    ZERO_VECTOR_WARNING.call_once(|| {
        log::warn!("cosine distance on a zero vector; treating the pair as orthogonal (distance 1)");
    });
}

/// `1 − a·b / (|a||b|)`, in `[0, 2]`. A zero vector on either side gives 1.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - cosine_similarity(a, b)
}

/// Cosine similarity, clamped to `[-1, 1]`; 0 when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        warn_zero_vector();
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine similarity together with its gradients with respect to `a` and `b`.
///
/// `d cos / d a = b / (|a||b|) − cos · a / |a|²`, symmetric for `b`. The
/// unclamped value is returned so the gradient stays consistent with it.
pub fn cosine_similarity_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        warn_zero_vector();
        return (0.0, vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let inv = 1.0 / (na * nb);
    let cos = dot(a, b) * inv;
    let ca = cos / (na * na);
    let cb = cos / (nb * nb);
    let ga = a.iter().zip(b).map(|(&x, &y)| y * inv - ca * x).collect();
    let gb = a.iter().zip(b).map(|(&x, &y)| x * inv - cb * y).collect();
    (cos, ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_values() {
        assert_eq!(cosine_distance(&[0.3, -2.0], &[0.3, -2.0]), 0.0);
        assert_eq!(cosine_distance(&[1.0, 2.0, -3.0], &[-1.0, -2.0, 3.0]), 2.0);
        let d = cosine_distance(&[1.0, 0.0], &[1.0, 1.0]);
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_is_orthogonal() {
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 1.0]), 1.0);
        let (c, ga, gb) = cosine_similarity_grad(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(c, 0.0);
        assert!(ga.iter().chain(&gb).all(|&g| g == 0.0));
    }

    #[test]
    fn grad_matches_finite_differences() {
        let a = [0.3, -1.2, 0.7];
        let b = [1.1, 0.4, -0.5];
        let (_, ga, gb) = cosine_similarity_grad(&a, &b);
        let h = 1e-6;
        for i in 0..3 {
            let mut ap = a;
            let mut am = a;
            ap[i] += h;
            am[i] -= h;
            let fd = (cosine_similarity(&ap, &b) - cosine_similarity(&am, &b)) / (2.0 * h);
            assert!((fd - ga[i]).abs() < 1e-9);
            let mut bp = b;
            let mut bm = b;
            bp[i] += h;
            bm[i] -= h;
            let fd = (cosine_similarity(&a, &bp) - cosine_similarity(&a, &bm)) / (2.0 * h);
            assert!((fd - gb[i]).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn scale_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 4),
            b in prop::collection::vec(-5.0f64..5.0, 4),
            beta in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let scaled: Vec<f64> = a.iter().map(|x| x * beta).collect();
            let d1 = cosine_distance(&a, &b);
            let d2 = cosine_distance(&scaled, &b);
            prop_assert!((d1 - d2).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&d1));
        }
    }
}
