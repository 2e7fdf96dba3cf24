//! Continuous 6D rotation parameterization.
//!
//! Six numbers are read as the first two columns of a rotation matrix;
//! Gram-Schmidt plus a cross product rebuilds the full orthonormal frame.

use crate::error::{Error, Result};
use crate::real::Real;

fn norm3<T: Real>(v: [T; 3]) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot3<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Map 6 values to a rotation matrix (column-major columns c0, c1, c2).
///
/// `r = [a | b]` becomes `c0 = a/|a|`, `c1` the normalized component of `b`
/// orthogonal to `c0`, and `c2 = c0 x c1`. Degenerate inputs (near-zero `a`,
/// or `b` nearly parallel to `a`) are rejected rather than patched.
pub fn rot6d_to_matrix<T: Real>(r: &[T]) -> Result<[[T; 3]; 3]> {
    if r.len() != 6 {
        return Err(Error::dim("6d rotation", 6, r.len()));
    }
    let a = [r[0], r[1], r[2]];
    let b = [r[3], r[4], r[5]];
    let eps = T::c(1e-8);
    let na = norm3(a);
    if na < eps {
        return Err(Error::degenerate("6d rotation", "first column has near-zero norm"));
    }
    let c0 = [a[0] / na, a[1] / na, a[2] / na];
    let proj = dot3(c0, b);
    let u = [b[0] - proj * c0[0], b[1] - proj * c0[1], b[2] - proj * c0[2]];
    let nu = norm3(u);
    if nu < eps {
        return Err(Error::degenerate("6d rotation", "second column is parallel to the first"));
    }
    let c1 = [u[0] / nu, u[1] / nu, u[2] / nu];
    let c2 = cross3(c0, c1);
    Ok([
        [c0[0], c1[0], c2[0]],
        [c0[1], c1[1], c2[1]],
        [c0[2], c1[2], c2[2]],
    ])
}

/// Inverse of [`rot6d_to_matrix`]: take the first two columns.
pub fn matrix_to_rot6d<T: Real>(m: &[[T; 3]; 3]) -> [T; 6] {
    [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]
}
