//! Tensor-product Lagrange bases (Q1, Q2) on `[-1, 1]^d` and Gauss-Legendre
//! quadrature.
//!
//! Local node numbering is lexicographic: Q2 node `(i, j, k)` with
//! `i, j, k in {0, 1, 2}` has index `i + 3 j + 9 k`; Q1 node `(a, b, c)` has
//! index `a + 2 b + 4 c` and coincides with Q2 node `(2a, 2b, 2c)`.

use crate::scalar::Real;

/// Nodes per element for the Q2 space in dimension `dim`.
#[inline]
pub const fn q2_nodes(dim: usize) -> usize {
    if dim == 2 {
        9
    } else {
        27
    }
}

#[inline]
pub const fn q1_nodes(dim: usize) -> usize {
    if dim == 2 {
        4
    } else {
        8
    }
}

/// Local Q2 index of the Q1 corner `m`.
#[inline]
pub fn q1_corner_in_q2(m: usize) -> usize {
    let (a, b, c) = (m & 1, (m >> 1) & 1, (m >> 2) & 1);
    2 * a + 6 * b + 18 * c
}

#[inline]
fn lagrange2<T: Real>(x: T) -> ([T; 3], [T; 3]) {
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    (
        [half * x * (x - T::one()), T::one() - x * x, half * x * (x + T::one())],
        [x - half, -two * x, x + half],
    )
}

#[inline]
fn lagrange1<T: Real>(x: T) -> ([T; 2], [T; 2]) {
    let half = T::lit(0.5);
    ([half * (T::one() - x), half * (T::one() + x)], [-half, half])
}

/// Values and reference gradients of the Q2 basis at `xi`. For `dim = 2`
/// only the first two coordinates are used and the gradient's third
/// component is zero.
pub fn q2_shape<T: Real>(dim: usize, xi: [T; 3], values: &mut [T], grads: &mut [[T; 3]]) {
    let (lx, dx) = lagrange2(xi[0]);
    let (ly, dy) = lagrange2(xi[1]);
    if dim == 2 {
        for j in 0..3 {
            for i in 0..3 {
                let l = i + 3 * j;
                values[l] = lx[i] * ly[j];
                grads[l] = [dx[i] * ly[j], lx[i] * dy[j], T::zero()];
            }
        }
    } else {
        let (lz, dz) = lagrange2(xi[2]);
        for k in 0..3 {
            for j in 0..3 {
                for i in 0..3 {
                    let l = i + 3 * j + 9 * k;
                    values[l] = lx[i] * ly[j] * lz[k];
                    grads[l] = [dx[i] * ly[j] * lz[k], lx[i] * dy[j] * lz[k], lx[i] * ly[j] * dz[k]];
                }
            }
        }
    }
}

pub fn q1_shape<T: Real>(dim: usize, xi: [T; 3], values: &mut [T], grads: &mut [[T; 3]]) {
    let (lx, dx) = lagrange1(xi[0]);
    let (ly, dy) = lagrange1(xi[1]);
    if dim == 2 {
        for b in 0..2 {
            for a in 0..2 {
                let m = a + 2 * b;
                values[m] = lx[a] * ly[b];
                grads[m] = [dx[a] * ly[b], lx[a] * dy[b], T::zero()];
            }
        }
    } else {
        let (lz, dz) = lagrange1(xi[2]);
        for c in 0..2 {
            for b in 0..2 {
                for a in 0..2 {
                    let m = a + 2 * b + 4 * c;
                    values[m] = lx[a] * ly[b] * lz[c];
                    grads[m] = [dx[a] * ly[b] * lz[c], lx[a] * dy[b] * lz[c], lx[a] * ly[b] * dz[c]];
                }
            }
        }
    }
}

/// Three-point Gauss-Legendre rule on `[-1, 1]` (exact to degree 5).
pub fn gauss3<T: Real>() -> [(T, T); 3] {
    let x = T::lit(0.6).sqrt();
    [
        (-x, T::lit(5.0 / 9.0)),
        (T::zero(), T::lit(8.0 / 9.0)),
        (x, T::lit(5.0 / 9.0)),
    ]
}

/// A quadrature point on the reference cell.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint<T> {
    pub xi: [T; 3],
    pub weight: T,
}

/// Tensor Gauss rule with `3^dim` points.
pub fn cell_rule<T: Real>(dim: usize) -> Vec<QuadPoint<T>> {
    let g = gauss3::<T>();
    let mut pts = Vec::with_capacity(if dim == 2 { 9 } else { 27 });
    if dim == 2 {
        for &(y, wy) in &g {
            for &(x, wx) in &g {
                pts.push(QuadPoint {
                    xi: [x, y, T::zero()],
                    weight: wx * wy,
                });
            }
        }
    } else {
        for &(z, wz) in &g {
            for &(y, wy) in &g {
                for &(x, wx) in &g {
                    pts.push(QuadPoint {
                        xi: [x, y, z],
                        weight: wx * wy * wz,
                    });
                }
            }
        }
    }
    pts
}
