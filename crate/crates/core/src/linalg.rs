//! Small dense vector helpers. Vectors are plain `[f64]` slices.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(a: &mut [f64], s: f64) {
    a.iter_mut().for_each(|x| *x *= s);
}

/// Orthonormalizes `vectors` in order with modified Gram-Schmidt (one
/// re-orthogonalization sweep). Vectors whose residual norm falls to
/// `drop_tol` or below are treated as dependent and skipped.
pub fn gram_schmidt<'a, I>(vectors: I, drop_tol: f64) -> Vec<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut r = v.to_vec();
        for _sweep in 0..2 {
            for b in &basis {
                let c = dot(&r, b);
                axpy(-c, b, &mut r);
            }
        }
        let n = norm(&r);
        if n > drop_tol {
            scale(&mut r, 1.0 / n);
            basis.push(r);
        }
    }
    basis
}

/// Orthogonal projection of `v` onto the span of an orthonormal `basis`.
pub fn project(v: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut p = vec![0.0; v.len()];
    for b in basis {
        axpy(dot(v, b), b, &mut p);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_schmidt_drops_dependent_vectors() {
        let vs = [vec![1.0, 1.0, 0.0], vec![2.0, 2.0, 0.0], vec![0.0, 1.0, 0.0]];
        let basis = gram_schmidt(vs.iter().map(|v| v.as_slice()), 1e-10);
        assert_eq!(basis.len(), 2);
        assert!((dot(&basis[0], &basis[1])).abs() < 1e-15);
        for b in &basis {
            assert!((norm(b) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_onto_plane() {
        let basis = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        assert_eq!(project(&[3.0, -2.0, 5.0], &basis), vec![3.0, -2.0, 0.0]);
    }
}
