//! Sinusoidal temporal embedding, learned type embedding and their concatenation.

use super::params::Matrix;
use super::ModelError;

/// Angular frequency shared by entries `2m` (sine) and `2m + 1` (cosine).
pub fn frequency(pair: usize, dim: usize) -> f64 {
    1.0 / 10000f64.powf((2 * pair) as f64 / dim as f64)
}

/// Fills `out` with the temporal embedding of `t`.
///
/// Entry `j` (zero-based) is `sin(t / 10000^(j/M))` for even `j` and
/// `cos(t / 10000^((j-1)/M))` for odd `j`.
pub fn temporal_embedding_into(t: f64, out: &mut [f64]) {
    let dim = out.len();
    for pair in 0..dim / 2 {
        let (s, c) = (t * frequency(pair, dim)).sin_cos();
        out[2 * pair] = s;
        out[2 * pair + 1] = c;
    }
}

pub fn temporal_embedding(t: f64, dim: usize) -> Result<Vec<f64>, ModelError> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(ModelError::OddDimension(dim));
    }
    let mut out = vec![0.0; dim];
    temporal_embedding_into(t, &mut out);
    Ok(out)
}

/// Column `k` of the type-embedding matrix.
pub fn type_embedding(k: usize, type_embedding: &Matrix) -> Result<Vec<f64>, ModelError> {
    if k >= type_embedding.cols() {
        return Err(ModelError::TypeOutOfRange {
            k,
            num_types: type_embedding.cols(),
        });
    }
    Ok(type_embedding.column(k))
}

/// `[temporal_embedding(t); type_embedding(k)]`, length `2M`.
pub fn event_embedding(t: f64, k: usize, type_embedding_matrix: &Matrix) -> Result<Vec<f64>, ModelError> {
    let mut x = temporal_embedding(t, type_embedding_matrix.rows())?;
    x.extend(type_embedding(k, type_embedding_matrix)?);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::dot;
    use proptest::prelude::*;

    #[test]
    fn zero_time() {
        let z = temporal_embedding(0.0, 8).unwrap();
        for (j, v) in z.iter().enumerate() {
            assert_eq!(*v, if j % 2 == 1 { 1.0 } else { 0.0 });
        }
        for m in [2, 4, 16, 64] {
            let z = temporal_embedding(0.0, m).unwrap();
            assert_eq!(dot(&z, &z), m as f64 / 2.0);
        }
        assert_eq!(temporal_embedding(1.0, 3), Err(ModelError::OddDimension(3)));
    }

    #[test]
    fn entries_follow_scalar_formula() {
        let m = 4;
        let z = temporal_embedding(1.0, m).unwrap();
        for (j, v) in z.iter().enumerate() {
            let j1 = j as f64;
            let expected = if j % 2 == 1 {
                (1.0 / 10000f64.powf((j1 - 1.0) / m as f64)).cos()
            } else {
                (1.0 / 10000f64.powf(j1 / m as f64)).sin()
            };
            assert!((v - expected).abs() < 1e-15, "entry {j}");
        }
        assert!((z[0] - 1f64.sin()).abs() < 1e-15);
        assert!((z[1] - 1f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn type_embedding_examples() {
        let eye = Matrix::identity(3);
        for k in 0..3 {
            let e = type_embedding(k, &eye).unwrap();
            for (j, v) in e.iter().enumerate() {
                assert_eq!(*v, if j == k { 1.0 } else { 0.0 });
            }
        }
        let u = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64 - 1.5);
        for k in 0..2 {
            let onehot: Vec<f64> = (0..2).map(|c| if c == k { 1.0 } else { 0.0 }).collect();
            let mut prod = vec![0.0; 3];
            u.mul_vec_into(&onehot, &mut prod);
            assert_eq!(type_embedding(k, &u).unwrap(), prod);
        }
        assert_eq!(type_embedding(1, &Matrix::zeros(4, 2)).unwrap(), vec![0.0; 4]);
        assert!(type_embedding(2, &u).is_err());
    }

    #[test]
    fn concatenated_embedding() {
        let x = event_embedding(0.0, 0, &Matrix::zeros(6, 2)).unwrap();
        assert_eq!(x.len(), 12);
        assert_eq!(dot(&x, &x), 3.0);
    }

    fn cosine_sum(dt: f64, m: usize) -> f64 {
        (0..m / 2).map(|p| (dt * frequency(p, m)).cos()).sum()
    }

    proptest! {
        #[test]
        fn score_splits_into_time_and_type_parts(
            ti in -50.0f64..50.0, tj in -50.0f64..50.0,
            ki in 0usize..3, kj in 0usize..3,
            seed in proptest::collection::vec(-2.0f64..2.0, 24),
        ) {
            let u = Matrix::from_vec(8, 3, seed).unwrap();
            let xi = event_embedding(ti, ki, &u).unwrap();
            let xj = event_embedding(tj, kj, &u).unwrap();
            let zi = temporal_embedding(ti, 8).unwrap();
            let zj = temporal_embedding(tj, 8).unwrap();
            let ei = type_embedding(ki, &u).unwrap();
            let ej = type_embedding(kj, &u).unwrap();
            let split = dot(&zi, &zj) + dot(&ei, &ej);
            prop_assert!((dot(&xi, &xj) - split).abs() <= 1e-12 * split.abs().max(1.0));
        }

        #[test]
        fn time_similarity_is_a_cosine_sum(ti in 0.0f64..100.0, tj in 0.0f64..100.0, half in 1usize..33) {
            let m = 2 * half;
            let zi = temporal_embedding(ti, m).unwrap();
            let zj = temporal_embedding(tj, m).unwrap();
            prop_assert!((dot(&zi, &zj) - cosine_sum(ti - tj, m)).abs() < 1e-9);
        }

        #[test]
        fn time_similarity_is_shift_invariant(ti in 0.0f64..100.0, tj in 0.0f64..100.0, c in -100.0f64..100.0) {
            let m = 16;
            let a = dot(&temporal_embedding(ti + c, m).unwrap(), &temporal_embedding(tj + c, m).unwrap());
            let b = dot(&temporal_embedding(ti, m).unwrap(), &temporal_embedding(tj, m).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
}
