//! Finite-difference stencils, their exact adjoints, and Gaussian smoothing.
//!
//! Two discretizations are used throughout: forward differences with a
//! Neumann boundary (last slice along the axis is zero) for the regularizer
//! gradients and the time derivative, and central differences with replicate
//! ghost cells (half-weight one-sided stencils at the edges) for the spatial
//! gradients inside the flow operator. Adjoints are implemented in scatter
//! form so they are the exact transposes of the forward stencils.

use ndarray::Array3;
use num_complex::Complex64;

/// Scalar element a stencil can act on: `f64` or `Complex64`.
pub trait Element:
    Copy
    + Default
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<f64, Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
{
}

impl Element for f64 {}
impl Element for Complex64 {}

/// The five difference stencils used by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StencilKind {
    ForwardTime,
    ForwardX,
    ForwardY,
    CentralX,
    CentralY,
}

fn slice<T: Element>(u: &Array3<T>) -> &[T] {
    u.as_slice().expect("grid arrays are standard layout")
}

fn from_vec<T: Element>(dims: (usize, usize, usize), v: Vec<T>) -> Array3<T> {
    Array3::from_shape_vec(dims, v).unwrap()
}

/// Forward difference in time: `out[t] = u[t+1] - u[t]`, last frame zero.
pub fn d_forward_time<T: Element>(u: &Array3<T>) -> Array3<T> {
    let dims = u.dim();
    let (nt, nx, ny) = dims;
    let s = slice(u);
    let mut out = vec![T::default(); s.len()];
    let plane = nx * ny;
    for t in 0..nt.saturating_sub(1) {
        let a = t * plane;
        let b = a + plane;
        for i in 0..plane {
            out[a + i] = s[b + i] - s[a + i];
        }
    }
    from_vec(dims, out)
}

/// Adjoint (exact transpose) of [`d_forward_time`].
pub fn d_forward_time_adjoint<T: Element>(w: &Array3<T>) -> Array3<T> {
    let dims = w.dim();
    let (nt, nx, ny) = dims;
    let s = slice(w);
    let mut out = vec![T::default(); s.len()];
    let plane = nx * ny;
    for t in 0..nt.saturating_sub(1) {
        let a = t * plane;
        let b = a + plane;
        for i in 0..plane {
            out[b + i] += s[a + i];
            out[a + i] -= s[a + i];
        }
    }
    from_vec(dims, out)
}

/// Forward difference along x: `out[x] = u[x+1] - u[x]`, last row zero.
pub fn d_forward_x<T: Element>(u: &Array3<T>) -> Array3<T> {
    let dims = u.dim();
    let (nt, nx, ny) = dims;
    let s = slice(u);
    let mut out = vec![T::default(); s.len()];
    for t in 0..nt {
        let base = t * nx * ny;
        for x in 0..nx - 1 {
            let a = base + x * ny;
            for y in 0..ny {
                out[a + y] = s[a + ny + y] - s[a + y];
            }
        }
    }
    from_vec(dims, out)
}

/// Adjoint (exact transpose) of [`d_forward_x`].
pub fn d_forward_x_adjoint<T: Element>(w: &Array3<T>) -> Array3<T> {
    let dims = w.dim();
    let (nt, nx, ny) = dims;
    let s = slice(w);
    let mut out = vec![T::default(); s.len()];
    for t in 0..nt {
        let base = t * nx * ny;
        for x in 0..nx - 1 {
            let a = base + x * ny;
            for y in 0..ny {
                out[a + ny + y] += s[a + y];
                out[a + y] -= s[a + y];
            }
        }
    }
    from_vec(dims, out)
}

/// Forward difference along y: `out[y] = u[y+1] - u[y]`, last column zero.
pub fn d_forward_y<T: Element>(u: &Array3<T>) -> Array3<T> {
    let dims = u.dim();
    let (nt, nx, ny) = dims;
    let s = slice(u);
    let mut out = vec![T::default(); s.len()];
    for r in 0..nt * nx {
        let a = r * ny;
        for y in 0..ny - 1 {
            out[a + y] = s[a + y + 1] - s[a + y];
        }
    }
    from_vec(dims, out)
}

/// Adjoint (exact transpose) of [`d_forward_y`].
pub fn d_forward_y_adjoint<T: Element>(w: &Array3<T>) -> Array3<T> {
    let dims = w.dim();
    let (nt, nx, ny) = dims;
    let s = slice(w);
    let mut out = vec![T::default(); s.len()];
    for r in 0..nt * nx {
        let a = r * ny;
        for y in 0..ny - 1 {
            out[a + y + 1] += s[a + y];
            out[a + y] -= s[a + y];
        }
    }
    from_vec(dims, out)
}

/// Central difference along x with replicate ghost cells:
/// `out[x] = (u[min(x+1, nx-1)] - u[max(x-1, 0)]) / 2`.
pub fn d_central_x<T: Element>(u: &Array3<T>) -> Array3<T> {
    let dims = u.dim();
    let (nt, nx, ny) = dims;
    let s = slice(u);
    let mut out = vec![T::default(); s.len()];
    for t in 0..nt {
        let base = t * nx * ny;
        for x in 0..nx {
            let hi = base + (x + 1).min(nx - 1) * ny;
            let lo = base + x.saturating_sub(1) * ny;
            let a = base + x * ny;
            for y in 0..ny {
                out[a + y] = (s[hi + y] - s[lo + y]) * 0.5;
            }
        }
    }
    from_vec(dims, out)
}

/// Adjoint (exact transpose) of [`d_central_x`].
pub fn d_central_x_adjoint<T: Element>(w: &Array3<T>) -> Array3<T> {
    let dims = w.dim();
    let (nt, nx, ny) = dims;
    let s = slice(w);
    let mut out = vec![T::default(); s.len()];
    for t in 0..nt {
        let base = t * nx * ny;
        for x in 0..nx {
            let hi = base + (x + 1).min(nx - 1) * ny;
            let lo = base + x.saturating_sub(1) * ny;
            let a = base + x * ny;
            for y in 0..ny {
                out[hi + y] += s[a + y] * 0.5;
                out[lo + y] -= s[a + y] * 0.5;
            }
        }
    }
    from_vec(dims, out)
}

/// Central difference along y with replicate ghost cells.
pub fn d_central_y<T: Element>(u: &Array3<T>) -> Array3<T> {
    let dims = u.dim();
    let (nt, nx, ny) = dims;
    let s = slice(u);
    let mut out = vec![T::default(); s.len()];
    for r in 0..nt * nx {
        let a = r * ny;
        for y in 0..ny {
            let hi = a + (y + 1).min(ny - 1);
            let lo = a + y.saturating_sub(1);
            out[a + y] = (s[hi] - s[lo]) * 0.5;
        }
    }
    from_vec(dims, out)
}

/// Adjoint (exact transpose) of [`d_central_y`].
pub fn d_central_y_adjoint<T: Element>(w: &Array3<T>) -> Array3<T> {
    let dims = w.dim();
    let (nt, nx, ny) = dims;
    let s = slice(w);
    let mut out = vec![T::default(); s.len()];
    for r in 0..nt * nx {
        let a = r * ny;
        for y in 0..ny {
            let hi = a + (y + 1).min(ny - 1);
            let lo = a + y.saturating_sub(1);
            out[hi] += s[a + y] * 0.5;
            out[lo] -= s[a + y] * 0.5;
        }
    }
    from_vec(dims, out)
}

/// Applies the stencil selected by `kind`.
pub fn apply<T: Element>(kind: StencilKind, u: &Array3<T>) -> Array3<T> {
    match kind {
        StencilKind::ForwardTime => d_forward_time(u),
        StencilKind::ForwardX => d_forward_x(u),
        StencilKind::ForwardY => d_forward_y(u),
        StencilKind::CentralX => d_central_x(u),
        StencilKind::CentralY => d_central_y(u),
    }
}

/// Applies the exact adjoint of the stencil selected by `kind`.
pub fn apply_adjoint<T: Element>(kind: StencilKind, w: &Array3<T>) -> Array3<T> {
    match kind {
        StencilKind::ForwardTime => d_forward_time_adjoint(w),
        StencilKind::ForwardX => d_forward_x_adjoint(w),
        StencilKind::ForwardY => d_forward_y_adjoint(w),
        StencilKind::CentralX => d_central_x_adjoint(w),
        StencilKind::CentralY => d_central_y_adjoint(w),
    }
}

/// Normalized discrete Gaussian, radius `ceil(4 sigma)`; `[1.0]` for
/// `sigma <= 0` (identity kernel).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut w: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SmoothAxis {
    Time,
    X,
    Y,
}

fn smooth_along<T: Element>(u: &Array3<T>, kernel: &[f64], axis: SmoothAxis) -> Array3<T> {
    if kernel.len() == 1 {
        return u.clone();
    }
    let dims = u.dim();
    let (nt, nx, ny) = dims;
    let s = slice(u);
    let mut out = vec![T::default(); s.len()];
    let radius = (kernel.len() / 2) as i64;
    let (n, lanes, stride): (usize, Vec<usize>, usize) = match axis {
        // Lane starts and the stride stepping along the smoothing axis.
        SmoothAxis::Time => {
            (nt, (0..nx * ny).collect(), nx * ny)
        }
        SmoothAxis::X => {
            let mut starts = Vec::with_capacity(nt * ny);
            for t in 0..nt {
                for y in 0..ny {
                    starts.push(t * nx * ny + y);
                }
            }
            (nx, starts, ny)
        }
        SmoothAxis::Y => {
            let starts = (0..nt * nx).map(|r| r * ny).collect();
            (ny, starts, 1)
        }
    };
    for start in lanes {
        for i in 0..n {
            let mut acc = T::default();
            for (j, &wk) in kernel.iter().enumerate() {
                // Replicate boundary: clamp the tap index into the lane.
                let tap = (i as i64 + j as i64 - radius).clamp(0, n as i64 - 1) as usize;
                acc += s[start + tap * stride] * wk;
            }
            out[start + i * stride] = acc;
        }
    }
    from_vec(dims, out)
}

/// Separable Gaussian smoothing with replicate boundary handling.
///
/// Smooths the two spatial axes; with `spatial_only = false` the time axis is
/// smoothed as well (same sigma). `sigma = 0` is the identity.
pub fn gaussian_smooth<T: Element>(u: &Array3<T>, sigma: f64, spatial_only: bool) -> Array3<T> {
    let kernel = gaussian_kernel(sigma);
    let mut out = smooth_along(u, &kernel, SmoothAxis::X);
    out = smooth_along(&out, &kernel, SmoothAxis::Y);
    if !spatial_only {
        out = smooth_along(&out, &kernel, SmoothAxis::Time);
    }
    out
}

/// Anisotropic smoothing with separate spatial and temporal widths.
pub fn gaussian_smooth_anisotropic<T: Element>(
    u: &Array3<T>,
    sigma_space: f64,
    sigma_time: f64,
) -> Array3<T> {
    let ks = gaussian_kernel(sigma_space);
    let kt = gaussian_kernel(sigma_time);
    let mut out = smooth_along(u, &ks, SmoothAxis::X);
    out = smooth_along(&out, &ks, SmoothAxis::Y);
    out = smooth_along(&out, &kt, SmoothAxis::Time);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    const KINDS: [StencilKind; 5] = [
        StencilKind::ForwardTime,
        StencilKind::ForwardX,
        StencilKind::ForwardY,
        StencilKind::CentralX,
        StencilKind::CentralY,
    ];

    fn random_field(seed: u64, dims: (usize, usize, usize)) -> Array3<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(dims, |_| rng.random_range(-2.0..2.0))
    }

    fn dot(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
    }

    fn norm(a: &Array3<f64>) -> f64 {
        dot(a, a).sqrt()
    }

    /// Independent per-element oracle for each stencil.
    fn oracle(kind: StencilKind, u: &Array3<f64>) -> Array3<f64> {
        let (nt, nx, ny) = u.dim();
        Array3::from_shape_fn((nt, nx, ny), |(t, x, y)| match kind {
            StencilKind::ForwardTime => {
                if t + 1 < nt {
                    u[(t + 1, x, y)] - u[(t, x, y)]
                } else {
                    0.0
                }
            }
            StencilKind::ForwardX => {
                if x + 1 < nx {
                    u[(t, x + 1, y)] - u[(t, x, y)]
                } else {
                    0.0
                }
            }
            StencilKind::ForwardY => {
                if y + 1 < ny {
                    u[(t, x, y + 1)] - u[(t, x, y)]
                } else {
                    0.0
                }
            }
            StencilKind::CentralX => {
                0.5 * (u[(t, (x + 1).min(nx - 1), y)] - u[(t, x.saturating_sub(1), y)])
            }
            StencilKind::CentralY => {
                0.5 * (u[(t, x, (y + 1).min(ny - 1))] - u[(t, x, y.saturating_sub(1))])
            }
        })
    }

    #[test]
    fn constants_are_annihilated() {
        let u = Array3::from_elem((3, 5, 4), 2.75);
        for kind in KINDS {
            let d = apply(kind, &u);
            assert!(d.iter().all(|&v| v == 0.0), "{:?} must kill constants", kind);
        }
    }

    #[test]
    fn time_ramp_gives_ones_except_last_frame() {
        let u = Array3::from_shape_fn((4, 3, 3), |(t, _, _)| t as f64);
        let d = d_forward_time(&u);
        for ((t, _, _), &v) in d.indexed_iter() {
            let want = if t < 3 { 1.0 } else { 0.0 };
            assert_eq!(v, want);
        }
    }

    #[test]
    fn x_ramp_central_has_half_weight_edges() {
        let u = Array3::from_shape_fn((1, 6, 2), |(_, x, _)| x as f64);
        let d = d_central_x(&u);
        for ((_, x, _), &v) in d.indexed_iter() {
            let want = if x == 0 || x == 5 { 0.5 } else { 1.0 };
            assert_eq!(v, want);
        }
    }

    #[test]
    fn forward_x_indicator_pattern() {
        let mut u = Array3::zeros((1, 5, 3));
        u[(0, 2, 1)] = 1.0;
        let d = d_forward_x(&u);
        assert_eq!(d[(0, 1, 1)], 1.0);
        assert_eq!(d[(0, 2, 1)], -1.0);
        assert_eq!(d.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn forward_y_last_column_is_zero() {
        let u = random_field(3, (2, 4, 5));
        let d = d_forward_y(&u);
        for t in 0..2 {
            for x in 0..4 {
                assert_eq!(d[(t, x, 4)], 0.0);
            }
        }
    }

    #[test]
    fn stencils_match_elementwise_oracle() {
        for (i, dims) in [(3, 5, 4), (1, 2, 2), (2, 7, 3)].iter().enumerate() {
            let u = random_field(10 + i as u64, *dims);
            for kind in KINDS {
                let got = apply(kind, &u);
                let want = oracle(kind, &u);
                assert_eq!(got, want, "{:?} on dims {:?}", kind, dims);
            }
        }
    }

    #[test]
    fn adjoints_pass_dot_product_test() {
        for kind in KINDS {
            for inst in 0..20 {
                let dims = match inst % 3 {
                    0 => (3, 6, 5),
                    1 => (1, 4, 7),
                    _ => (4, 8, 8),
                };
                let u = random_field(100 + inst, dims);
                let w = random_field(200 + inst, dims);
                let lhs = dot(&apply(kind, &u), &w);
                let rhs = dot(&u, &apply_adjoint(kind, &w));
                let tol = 1e-12 * (norm(&u) * norm(&w) + 1.0);
                assert!(
                    (lhs - rhs).abs() <= tol,
                    "{:?}: <Du,w>={} vs <u,Dtw>={}",
                    kind,
                    lhs,
                    rhs
                );
            }
        }
    }

    #[test]
    fn forward_time_dense_matrix_is_exact_transpose() {
        let dims = (2, 2, 2);
        let n = 8;
        let mut fwd = vec![[0.0f64; 8]; 8];
        let mut adj = vec![[0.0f64; 8]; 8];
        for j in 0..n {
            let mut e = Array3::zeros(dims);
            e.as_slice_mut().unwrap()[j] = 1.0;
            let col_f = d_forward_time(&e);
            let col_a = d_forward_time_adjoint(&e);
            for i in 0..n {
                fwd[i][j] = col_f.as_slice().unwrap()[i];
                adj[i][j] = col_a.as_slice().unwrap()[i];
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert_eq!(fwd[i][j], adj[j][i], "transpose mismatch at ({}, {})", i, j);
            }
        }
    }

    #[test]
    fn complex_stencils_act_componentwise() {
        let re = random_field(31, (2, 5, 4));
        let im = random_field(32, (2, 5, 4));
        let z = ndarray::Zip::from(&re).and(&im).map_collect(|&r, &i| Complex64::new(r, i));
        for kind in KINDS {
            let dz = apply(kind, &z);
            let dre = apply(kind, &re);
            let dim_ = apply(kind, &im);
            for ((idx, &v), (&r, &i)) in dz.indexed_iter().zip(dre.iter().zip(dim_.iter())) {
                assert_eq!(v, Complex64::new(r, i), "{:?} at {:?}", kind, idx);
            }
        }
    }

    /// Power iteration on `D^T D` — test-side operator-norm oracle.
    fn operator_norm(kind: StencilKind, dims: (usize, usize, usize)) -> f64 {
        let mut v = random_field(77, dims);
        let mut lambda = 0.0;
        for _ in 0..300 {
            let w = apply_adjoint(kind, &apply(kind, &v));
            lambda = norm(&w) / norm(&v).max(1e-300);
            let n = norm(&w);
            if n == 0.0 {
                return 0.0;
            }
            v = w.mapv(|x| x / n);
        }
        lambda.sqrt()
    }

    #[test]
    fn stencil_operator_norms_respect_analytic_bounds() {
        for kind in [StencilKind::ForwardTime, StencilKind::ForwardX, StencilKind::ForwardY] {
            let nrm = operator_norm(kind, (4, 6, 5));
            assert!(nrm <= 2.0 + 1e-6, "{:?} norm {} exceeds 2", kind, nrm);
        }
        for kind in [StencilKind::CentralX, StencilKind::CentralY] {
            let nrm = operator_norm(kind, (2, 9, 8));
            assert!(nrm <= 1.0 + 1e-6, "{:?} norm {} exceeds 1", kind, nrm);
        }
    }

    #[test]
    fn gaussian_sigma_zero_is_identity() {
        let u = random_field(5, (2, 6, 6));
        let s = gaussian_smooth(&u, 0.0, true);
        assert_eq!(u, s);
    }

    #[test]
    fn gaussian_preserves_constants() {
        let u = Array3::from_elem((2, 8, 9), 1.5);
        let s = gaussian_smooth(&u, 1.3, false);
        for &v in s.iter() {
            assert!((v - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_delta_center_weight_matches_kernel() {
        let sigma = 1.0;
        let n = 21;
        let mut u = Array3::zeros((1, n, n));
        u[(0, 10, 10)] = 1.0;
        let s = gaussian_smooth(&u, sigma, true);
        // Separable response at the center is the squared center weight.
        let kernel = gaussian_kernel(sigma);
        let w0 = kernel[kernel.len() / 2];
        assert!((s[(0, 10, 10)] - w0 * w0).abs() < 1e-14);
    }

    #[test]
    fn gaussian_axes_commute() {
        let u = random_field(9, (1, 12, 11));
        let kernel = gaussian_kernel(0.8);
        let xy = smooth_along(&smooth_along(&u, &kernel, SmoothAxis::X), &kernel, SmoothAxis::Y);
        let yx = smooth_along(&smooth_along(&u, &kernel, SmoothAxis::Y), &kernel, SmoothAxis::X);
        let err = xy
            .iter()
            .zip(yx.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-12, "axis order changed the result by {}", err);
    }

    #[test]
    fn gaussian_is_linear() {
        let u = random_field(41, (2, 7, 6));
        let w = random_field(42, (2, 7, 6));
        let lhs = gaussian_smooth(&(2.0 * &u + 3.0 * &w), 1.1, true);
        let rhs = 2.0 * gaussian_smooth(&u, 1.1, true) + 3.0 * gaussian_smooth(&w, 1.1, true);
        let err = lhs
            .iter()
            .zip(rhs.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn complex_smoothing_smooths_parts_independently() {
        let re = random_field(51, (2, 6, 5));
        let im = random_field(52, (2, 6, 5));
        let z = ndarray::Zip::from(&re).and(&im).map_collect(|&r, &i| Complex64::new(r, i));
        let sz = gaussian_smooth(&z, 0.9, true);
        let sre = gaussian_smooth(&re, 0.9, true);
        let sim = gaussian_smooth(&im, 0.9, true);
        for (&v, (&r, &i)) in sz.iter().zip(sre.iter().zip(sim.iter())) {
            assert!((v.re - r).abs() < 1e-14 && (v.im - i).abs() < 1e-14);
        }
    }
}
