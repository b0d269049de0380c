//! Optical-flow coupling between a complex image sequence and a complex
//! velocity field.
//!
//! Writing `rho = rho1 + i rho2` and `v = v1 + i v2` (each velocity part a
//! 2-D spatial vector per frame), the default coupling is the residual of
//! `d_t rho + <v, grad rho>` under the inner product `<a, b> = sum a_k
//! conj(b_k)`, split into real and imaginary rows:
//!
//! ```text
//! r1 = d_t rho1 + <v1, grad rho1> + <v2, grad rho2>
//! r2 = d_t rho2 + <v2, grad rho1> - <v1, grad rho2>
//! ```
//!
//! The cross terms let mass move between the real and imaginary channels,
//! which matters when motion modulates the image phase. Two ablation modes
//! drop that interchange: `Decoupled` advects each channel with its own
//! velocity part, `SharedReal` advects both channels with `v1` and ignores
//! `v2`.
//!
//! The residual is bilinear: linear in `rho` for fixed `v` and linear in
//! `v` for fixed `rho`. Both partial maps are exposed together with their
//! exact adjoints, which is what gradient-based solvers need.

use ndarray::Array3;

use crate::diffops::{
    d_central_x, d_central_x_adjoint, d_central_y, d_central_y_adjoint, d_forward_time,
    d_forward_time_adjoint,
};
use crate::error::{Error, Result};
use crate::grid::{ImageSequence, VelocityField};

/// How the real and imaginary image channels couple to the velocity parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    /// Complex transport with real/imaginary interchange (default).
    #[default]
    Complex,
    /// Each channel advected by its own velocity part.
    Decoupled,
    /// Both channels advected by the real velocity part; `v2` is unused.
    SharedReal,
}

/// Real and imaginary rows of the flow residual.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowResidual {
    pub r1: Array3<f64>,
    pub r2: Array3<f64>,
}

impl FlowResidual {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.r1.dim()
    }

    /// `||r1||^2 + ||r2||^2`.
    pub fn energy(&self) -> f64 {
        let a: f64 = self.r1.iter().map(|x| x * x).sum();
        let b: f64 = self.r2.iter().map(|x| x * x).sum();
        a + b
    }
}

fn check_dims(rho: (usize, usize, usize), v: (usize, usize, usize)) -> Result<()> {
    if rho != v {
        return Err(Error::DimMismatch(format!(
            "image dims {:?} do not match velocity dims {:?}",
            rho, v
        )));
    }
    Ok(())
}

struct Parts {
    gx1: Array3<f64>,
    gy1: Array3<f64>,
    gx2: Array3<f64>,
    gy2: Array3<f64>,
}

fn gradient_parts(rho: &ImageSequence) -> Parts {
    let rho1 = rho.re();
    let rho2 = rho.im();
    Parts {
        gx1: d_central_x(&rho1),
        gy1: d_central_y(&rho1),
        gx2: d_central_x(&rho2),
        gy2: d_central_y(&rho2),
    }
}

struct VParts {
    v1x: Array3<f64>,
    v1y: Array3<f64>,
    v2x: Array3<f64>,
    v2y: Array3<f64>,
}

fn velocity_parts(v: &VelocityField) -> VParts {
    VParts {
        v1x: v.vx().re(),
        v1y: v.vy().re(),
        v2x: v.vx().im(),
        v2y: v.vy().im(),
    }
}

/// Advection rows `(<., grad rho> terms only)` for velocity parts `vp`
/// against image gradients `gp`, added onto `(r1, r2)`.
fn add_advection(r1: &mut Array3<f64>, r2: &mut Array3<f64>, vp: &VParts, gp: &Parts, mode: FlowMode) {
    let n = r1.len();
    let r1 = r1.as_slice_mut().unwrap();
    let r2 = r2.as_slice_mut().unwrap();
    let (gx1, gy1) = (gp.gx1.as_slice().unwrap(), gp.gy1.as_slice().unwrap());
    let (gx2, gy2) = (gp.gx2.as_slice().unwrap(), gp.gy2.as_slice().unwrap());
    let (v1x, v1y) = (vp.v1x.as_slice().unwrap(), vp.v1y.as_slice().unwrap());
    let (v2x, v2y) = (vp.v2x.as_slice().unwrap(), vp.v2y.as_slice().unwrap());
    match mode {
        FlowMode::Complex => {
            for i in 0..n {
                r1[i] += v1x[i] * gx1[i] + v1y[i] * gy1[i] + v2x[i] * gx2[i] + v2y[i] * gy2[i];
                r2[i] += v2x[i] * gx1[i] + v2y[i] * gy1[i] - v1x[i] * gx2[i] - v1y[i] * gy2[i];
            }
        }
        FlowMode::Decoupled => {
            for i in 0..n {
                r1[i] += v1x[i] * gx1[i] + v1y[i] * gy1[i];
                r2[i] += v2x[i] * gx2[i] + v2y[i] * gy2[i];
            }
        }
        FlowMode::SharedReal => {
            for i in 0..n {
                r1[i] += v1x[i] * gx1[i] + v1y[i] * gy1[i];
                r2[i] += v1x[i] * gx2[i] + v1y[i] * gy2[i];
            }
        }
    }
}

/// Evaluates the flow residual `M(rho, v)`.
pub fn flow_residual(rho: &ImageSequence, v: &VelocityField, mode: FlowMode) -> Result<FlowResidual> {
    check_dims(rho.dims(), v.dims())?;
    let gp = gradient_parts(rho);
    let vp = velocity_parts(v);
    let mut r1 = d_forward_time(&rho.re());
    let mut r2 = d_forward_time(&rho.im());
    add_advection(&mut r1, &mut r2, &vp, &gp, mode);
    Ok(FlowResidual { r1, r2 })
}

/// Applies the linearization of `M` in `v` at the point `rho` to a
/// direction `dv`; this is `M(rho, dv)` without the time-derivative rows.
pub fn v_jacobian_apply(rho: &ImageSequence, dv: &VelocityField, mode: FlowMode) -> Result<FlowResidual> {
    check_dims(rho.dims(), dv.dims())?;
    let gp = gradient_parts(rho);
    let vp = velocity_parts(dv);
    let (nt, nx, ny) = rho.dims();
    let mut r1 = Array3::zeros((nt, nx, ny));
    let mut r2 = Array3::zeros((nt, nx, ny));
    add_advection(&mut r1, &mut r2, &vp, &gp, mode);
    Ok(FlowResidual { r1, r2 })
}

/// Adjoint of the linear map `rho -> M(rho, v)` for fixed `v`, applied to a
/// residual-space vector `w`. The real/imaginary parts of the returned image
/// are the gradients with respect to `rho1` and `rho2`.
pub fn rho_jacobian_adjoint(v: &VelocityField, w: &FlowResidual, mode: FlowMode) -> Result<ImageSequence> {
    check_dims(w.dims(), v.dims())?;
    let vp = velocity_parts(v);
    let n = w.r1.len();
    let (w1, w2) = (w.r1.as_slice().unwrap(), w.r2.as_slice().unwrap());
    let (v1x, v1y) = (vp.v1x.as_slice().unwrap(), vp.v1y.as_slice().unwrap());
    let (v2x, v2y) = (vp.v2x.as_slice().unwrap(), vp.v2y.as_slice().unwrap());
    let dim = w.r1.dim();

    // Accumulate the scatter images whose central-difference adjoints feed
    // each channel: g1 += Dx^T(ax1) + Dy^T(ay1), g2 += Dx^T(ax2) + Dy^T(ay2).
    let mut ax1 = vec![0.0; n];
    let mut ay1 = vec![0.0; n];
    let mut ax2 = vec![0.0; n];
    let mut ay2 = vec![0.0; n];
    match mode {
        FlowMode::Complex => {
            for i in 0..n {
                ax1[i] = v1x[i] * w1[i] + v2x[i] * w2[i];
                ay1[i] = v1y[i] * w1[i] + v2y[i] * w2[i];
                ax2[i] = v2x[i] * w1[i] - v1x[i] * w2[i];
                ay2[i] = v2y[i] * w1[i] - v1y[i] * w2[i];
            }
        }
        FlowMode::Decoupled => {
            for i in 0..n {
                ax1[i] = v1x[i] * w1[i];
                ay1[i] = v1y[i] * w1[i];
                ax2[i] = v2x[i] * w2[i];
                ay2[i] = v2y[i] * w2[i];
            }
        }
        FlowMode::SharedReal => {
            for i in 0..n {
                ax1[i] = v1x[i] * w1[i];
                ay1[i] = v1y[i] * w1[i];
                ax2[i] = v1x[i] * w2[i];
                ay2[i] = v1y[i] * w2[i];
            }
        }
    }
    let wrap = |v: Vec<f64>| Array3::from_shape_vec(dim, v).unwrap();
    let mut g1 = d_forward_time_adjoint(&w.r1);
    g1 += &d_central_x_adjoint(&wrap(ax1));
    g1 += &d_central_y_adjoint(&wrap(ay1));
    let mut g2 = d_forward_time_adjoint(&w.r2);
    g2 += &d_central_x_adjoint(&wrap(ax2));
    g2 += &d_central_y_adjoint(&wrap(ay2));

    let out = Array3::from_shape_fn(dim, |idx| num_complex::Complex64::new(g1[idx], g2[idx]));
    Ok(ImageSequence::from_array_unchecked(out))
}

/// Adjoint of the linear map `v -> M(rho, v)` for fixed `rho`, applied to a
/// residual-space vector `w`. The real/imaginary parts of the returned field
/// are the gradients with respect to `v1` and `v2`.
pub fn v_jacobian_adjoint(rho: &ImageSequence, w: &FlowResidual, mode: FlowMode) -> Result<VelocityField> {
    check_dims(rho.dims(), w.dims())?;
    let gp = gradient_parts(rho);
    let n = w.r1.len();
    let (w1, w2) = (w.r1.as_slice().unwrap(), w.r2.as_slice().unwrap());
    let (gx1, gy1) = (gp.gx1.as_slice().unwrap(), gp.gy1.as_slice().unwrap());
    let (gx2, gy2) = (gp.gx2.as_slice().unwrap(), gp.gy2.as_slice().unwrap());
    let dim = w.r1.dim();
    let mut gvx = vec![num_complex::Complex64::ZERO; n];
    let mut gvy = vec![num_complex::Complex64::ZERO; n];
    match mode {
        FlowMode::Complex => {
            for i in 0..n {
                gvx[i] = num_complex::Complex64::new(
                    w1[i] * gx1[i] - w2[i] * gx2[i],
                    w1[i] * gx2[i] + w2[i] * gx1[i],
                );
                gvy[i] = num_complex::Complex64::new(
                    w1[i] * gy1[i] - w2[i] * gy2[i],
                    w1[i] * gy2[i] + w2[i] * gy1[i],
                );
            }
        }
        FlowMode::Decoupled => {
            for i in 0..n {
                gvx[i] = num_complex::Complex64::new(w1[i] * gx1[i], w2[i] * gx2[i]);
                gvy[i] = num_complex::Complex64::new(w1[i] * gy1[i], w2[i] * gy2[i]);
            }
        }
        FlowMode::SharedReal => {
            for i in 0..n {
                gvx[i] = num_complex::Complex64::new(w1[i] * gx1[i] + w2[i] * gx2[i], 0.0);
                gvy[i] = num_complex::Complex64::new(w1[i] * gy1[i] + w2[i] * gy2[i], 0.0);
            }
        }
    }
    let vx = ImageSequence::from_array_unchecked(Array3::from_shape_vec(dim, gvx).unwrap());
    let vy = ImageSequence::from_array_unchecked(Array3::from_shape_vec(dim, gvy).unwrap());
    VelocityField::new(vx, vy)
}
