//! The joint reconstruction objective, its partial gradients, and step-size
//! (Lipschitz) estimation.
//!
//! For an image sequence `rho`, velocity field `v`, and measured k-space
//! `y`, the objective is
//!
//! ```text
//! F(rho, v) = sum_t ||A_t rho_t - y_t||^2
//!           + alpha1 [ H_eps1(grad rho1) + H_eps1(grad rho2) ]
//!           + alpha2 [ H_eps2(grad v1x) + H_eps2(grad v1y)
//!                    + H_eps2(grad v2x) + H_eps2(grad v2y) ]
//!           + alpha3   H_eps3(M(rho, v))
//! ```
//!
//! where `grad` is the forward-difference spatial gradient (a 2-vector per
//! site), `M` is the flow residual (its two rows pair into a 2-vector per
//! site), and `H_eps` is a Huber loss summed over sites. Every term is
//! smooth for `eps > 0`; the Huber gradient is `1/eps`-Lipschitz, which
//! gives computable step bounds for gradient methods: the curvature of each
//! term is at most `(alpha/eps) * lambda_max(B^T B)` for its inner linear
//! map `B`.
//!
//! `F` is convex in `rho` for fixed `v` and convex in `v` for fixed `rho`
//! (each is a composition of a linear map with convex losses); the joint
//! problem is nonconvex through the `v . grad rho` products in `M`.

use ndarray::Array3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};

use crate::diffops::{
    d_forward_x, d_forward_x_adjoint, d_forward_y, d_forward_y_adjoint,
};
use crate::error::{Error, Result};
use crate::grid::{ImageSequence, KSpaceData, VelocityField};
use crate::motion::{
    flow_residual, rho_jacobian_adjoint, v_jacobian_adjoint, v_jacobian_apply, FlowMode,
    FlowResidual,
};
use crate::mri::MriSystem;

/// Regularization weights and Huber smoothing widths.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModelParams {
    /// Weight of the spatial image regularizer.
    pub alpha1: f64,
    /// Weight of the spatial velocity regularizer.
    pub alpha2: f64,
    /// Weight of the flow-residual coupling term.
    pub alpha3: f64,
    /// Huber width for the image regularizer.
    pub eps1: f64,
    /// Huber width for the velocity regularizer.
    pub eps2: f64,
    /// Huber width for the flow term.
    pub eps3: f64,
    /// Channel coupling used inside the flow term.
    pub flow_mode: FlowMode,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            alpha1: 1e-2,
            alpha2: 3e-3,
            alpha3: 1e0,
            eps1: 3e-2,
            eps2: 3e-2,
            eps3: 1e-2,
            flow_mode: FlowMode::Complex,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
        ] {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::Invariant(format!(
                    "{} must be finite and nonnegative, got {}",
                    name, a
                )));
            }
        }
        for (name, e) in [("eps1", self.eps1), ("eps2", self.eps2), ("eps3", self.eps3)] {
            if !e.is_finite() || e <= 0.0 {
                return Err(Error::Invariant(format!(
                    "{} must be finite and positive, got {}",
                    name, e
                )));
            }
        }
        Ok(())
    }
}

/// Huber loss over sites carrying 2-vectors `(a[i], b[i])`: per site,
/// `||x||^2 / (2 eps)` inside the ball `||x|| <= eps`, `||x|| - eps/2`
/// outside. Returns the total and the per-channel gradients (`x/eps`
/// inside, `x/||x||` outside; the two branches agree on the boundary).
pub fn huber_value_grad(
    a: &Array3<f64>,
    b: &Array3<f64>,
    eps: f64,
) -> Result<(f64, Array3<f64>, Array3<f64>)> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::Invariant(format!(
            "Huber width must be positive, got {}",
            eps
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch(format!(
            "Huber channels differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let dim = a.dim();
    let (asl, bsl) = (a.as_slice().unwrap(), b.as_slice().unwrap());
    let n = asl.len();
    let mut value = 0.0;
    let mut ga = vec![0.0; n];
    let mut gb = vec![0.0; n];
    for i in 0..n {
        let n2 = asl[i] * asl[i] + bsl[i] * bsl[i];
        let norm = n2.sqrt();
        if norm <= eps {
            value += n2 / (2.0 * eps);
            ga[i] = asl[i] / eps;
            gb[i] = bsl[i] / eps;
        } else {
            value += norm - eps / 2.0;
            ga[i] = asl[i] / norm;
            gb[i] = bsl[i] / norm;
        }
    }
    Ok((
        value,
        Array3::from_shape_vec(dim, ga).unwrap(),
        Array3::from_shape_vec(dim, gb).unwrap(),
    ))
}

/// The four real velocity component planes, in a fixed order.
fn velocity_components(v: &VelocityField) -> [Array3<f64>; 4] {
    [v.vx().re(), v.vy().re(), v.vx().im(), v.vy().im()]
}

fn check_rho_v(rho: &ImageSequence, v: &VelocityField) -> Result<()> {
    if rho.dims() != v.dims() {
        return Err(Error::DimMismatch(format!(
            "image dims {:?} do not match velocity dims {:?}",
            rho.dims(),
            v.dims()
        )));
    }
    Ok(())
}

/// Huber energy of the forward-difference spatial gradient of one real
/// channel, plus optionally its gradient contribution `D^T h'(D u)`.
fn smoothness_term(u: &Array3<f64>, eps: f64, want_grad: bool) -> Result<(f64, Option<Array3<f64>>)> {
    let gx = d_forward_x(u);
    let gy = d_forward_y(u);
    let (value, hx, hy) = huber_value_grad(&gx, &gy, eps)?;
    if !want_grad {
        return Ok((value, None));
    }
    let mut g = d_forward_x_adjoint(&hx);
    g += &d_forward_y_adjoint(&hy);
    Ok((value, Some(g)))
}

/// Evaluates `F(rho, v)` against the measurements `y`.
pub fn objective_value(
    rho: &ImageSequence,
    v: &VelocityField,
    y: &KSpaceData,
    system: &MriSystem,
    params: &ModelParams,
) -> Result<f64> {
    params.validate()?;
    check_rho_v(rho, v)?;
    let mut total = system.data_term(rho, y)?;
    if params.alpha1 > 0.0 {
        for channel in [rho.re(), rho.im()] {
            total += params.alpha1 * smoothness_term(&channel, params.eps1, false)?.0;
        }
    }
    if params.alpha2 > 0.0 {
        for comp in velocity_components(v) {
            total += params.alpha2 * smoothness_term(&comp, params.eps2, false)?.0;
        }
    }
    if params.alpha3 > 0.0 {
        let res = flow_residual(rho, v, params.flow_mode)?;
        total += params.alpha3 * huber_value_grad(&res.r1, &res.r2, params.eps3)?.0;
    }
    Ok(total)
}

/// Gradient of `F` with respect to `rho` at fixed `v`, as a complex image
/// whose real/imaginary parts are the gradients for the two channels.
pub fn grad_rho(
    rho: &ImageSequence,
    v: &VelocityField,
    y: &KSpaceData,
    system: &MriSystem,
    params: &ModelParams,
) -> Result<ImageSequence> {
    params.validate()?;
    check_rho_v(rho, v)?;
    let (_, mut g) = system.data_term_and_grad(rho, y)?;
    if params.alpha1 > 0.0 {
        let (_, gre) = smoothness_term(&rho.re(), params.eps1, true)?;
        let (_, gim) = smoothness_term(&rho.im(), params.eps1, true)?;
        let (gre, gim) = (gre.unwrap(), gim.unwrap());
        let gs = g.data_mut().as_slice_mut().unwrap();
        let (re, im) = (gre.as_slice().unwrap(), gim.as_slice().unwrap());
        for i in 0..gs.len() {
            gs[i] += Complex64::new(params.alpha1 * re[i], params.alpha1 * im[i]);
        }
    }
    if params.alpha3 > 0.0 {
        let res = flow_residual(rho, v, params.flow_mode)?;
        let (_, w1, w2) = huber_value_grad(&res.r1, &res.r2, params.eps3)?;
        let adj = rho_jacobian_adjoint(v, &FlowResidual { r1: w1, r2: w2 }, params.flow_mode)?;
        let gs = g.data_mut().as_slice_mut().unwrap();
        let aj = adj.data().as_slice().unwrap();
        for i in 0..gs.len() {
            gs[i] += params.alpha3 * aj[i];
        }
    }
    Ok(g)
}

/// Gradient of `F` with respect to `v` at fixed `rho`, as a complex field
/// whose real/imaginary parts are the gradients for the two velocity parts.
pub fn grad_v(rho: &ImageSequence, v: &VelocityField, params: &ModelParams) -> Result<VelocityField> {
    params.validate()?;
    check_rho_v(rho, v)?;
    let (nt, nx, ny) = v.dims();
    let mut comp_grads: [Array3<f64>; 4] = [
        Array3::zeros((nt, nx, ny)),
        Array3::zeros((nt, nx, ny)),
        Array3::zeros((nt, nx, ny)),
        Array3::zeros((nt, nx, ny)),
    ];
    if params.alpha2 > 0.0 {
        for (slot, comp) in comp_grads.iter_mut().zip(velocity_components(v)) {
            let (_, g) = smoothness_term(&comp, params.eps2, true)?;
            let g = g.unwrap();
            slot.zip_mut_with(&g, |s, &x| *s += params.alpha2 * x);
        }
    }
    let mut gvx = Array3::from_shape_fn((nt, nx, ny), |idx| {
        Complex64::new(comp_grads[0][idx], comp_grads[2][idx])
    });
    let mut gvy = Array3::from_shape_fn((nt, nx, ny), |idx| {
        Complex64::new(comp_grads[1][idx], comp_grads[3][idx])
    });
    if params.alpha3 > 0.0 {
        let res = flow_residual(rho, v, params.flow_mode)?;
        let (_, w1, w2) = huber_value_grad(&res.r1, &res.r2, params.eps3)?;
        let adj = v_jacobian_adjoint(rho, &FlowResidual { r1: w1, r2: w2 }, params.flow_mode)?;
        gvx.zip_mut_with(adj.vx().data(), |s, &x| *s += params.alpha3 * x);
        gvy.zip_mut_with(adj.vy().data(), |s, &x| *s += params.alpha3 * x);
    }
    VelocityField::new(
        ImageSequence::from_array_unchecked(gvx),
        ImageSequence::from_array_unchecked(gvy),
    )
}

// ---------------------------------------------------------------------------
// Largest-eigenvalue estimation for the step-size bounds.
// ---------------------------------------------------------------------------

/// Iterations of the power method used per eigenvalue estimate.
const POWER_ITERS: usize = 50;
/// Headroom multiplier applied to every power-method estimate.
const SAFETY: f64 = 1.1;
/// Floor for assembled step bounds (degenerate problems would otherwise
/// yield a zero or denormal curvature).
const LIPSCHITZ_FLOOR: f64 = 1e-8;

fn power_lambda<X>(
    mut x: X,
    apply: impl Fn(&X) -> X,
    norm: impl Fn(&X) -> f64,
    scale: impl Fn(&mut X, f64),
    iters: usize,
) -> f64 {
    let n0 = norm(&x);
    if n0 == 0.0 {
        return 0.0;
    }
    scale(&mut x, 1.0 / n0);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y = apply(&x);
        lambda = norm(&y);
        if lambda <= 0.0 || !lambda.is_finite() {
            return 0.0;
        }
        x = y;
        scale(&mut x, 1.0 / lambda);
    }
    lambda
}

fn random_real(seed: u64, nt: usize, nx: usize, ny: usize) -> Array3<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn((nt, nx, ny), |_| rng.random_range(-1.0..1.0))
}

fn random_image(seed: u64, nt: usize, nx: usize, ny: usize) -> ImageSequence {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    ImageSequence::from_array_unchecked(Array3::from_shape_fn((nt, nx, ny), |_| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }))
}

fn image_norm(x: &ImageSequence) -> f64 {
    x.data().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn image_scale(x: &mut ImageSequence, s: f64) {
    for z in x.data_mut().iter_mut() {
        *z *= s;
    }
}

fn field_norm(x: &VelocityField) -> f64 {
    (x.vx().data().iter().map(|z| z.norm_sqr()).sum::<f64>()
        + x.vy().data().iter().map(|z| z.norm_sqr()).sum::<f64>())
    .sqrt()
}

fn field_scale(x: &mut VelocityField, s: f64) {
    for z in x.vx_mut().data_mut().iter_mut() {
        *z *= s;
    }
    for z in x.vy_mut().data_mut().iter_mut() {
        *z *= s;
    }
}

/// `lambda_max(A^* A)` of the measurement operator (power method).
pub fn lambda_mri(system: &MriSystem) -> f64 {
    let x0 = random_image(0x5eed_0001, system.nt(), system.nx(), system.ny());
    power_lambda(
        x0,
        |x| {
            let fwd = system.forward(x).expect("dims fixed by construction");
            system.adjoint(&fwd).expect("dims fixed by construction")
        },
        image_norm,
        image_scale,
        POWER_ITERS,
    )
}

/// `lambda_max(D^T D)` of the forward-difference spatial gradient on one
/// real channel (power method; the analytic supremum is 8).
pub fn lambda_grad_stencil(nt: usize, nx: usize, ny: usize) -> f64 {
    let x0 = random_real(0x5eed_0002, nt, nx, ny);
    power_lambda(
        x0,
        |x| {
            let mut g = d_forward_x_adjoint(&d_forward_x(x));
            g += &d_forward_y_adjoint(&d_forward_y(x));
            g
        },
        |x| x.iter().map(|a| a * a).sum::<f64>().sqrt(),
        |x, s| x.mapv_inplace(|a| a * s),
        POWER_ITERS,
    )
}

/// `lambda_max(J^T J)` for the linearization of the flow residual in `rho`
/// at fixed `v`.
pub fn lambda_rho_jacobian(v: &VelocityField, mode: FlowMode) -> f64 {
    let (nt, nx, ny) = v.dims();
    let x0 = random_image(0x5eed_0003, nt, nx, ny);
    power_lambda(
        x0,
        |x| {
            let r = flow_residual(x, v, mode).expect("dims fixed by construction");
            rho_jacobian_adjoint(v, &r, mode).expect("dims fixed by construction")
        },
        image_norm,
        image_scale,
        POWER_ITERS,
    )
}

/// `lambda_max(J^T J)` for the linearization of the flow residual in `v`
/// at fixed `rho`.
pub fn lambda_v_jacobian(rho: &ImageSequence, mode: FlowMode) -> f64 {
    let (nt, nx, ny) = rho.dims();
    let seq = random_image(0x5eed_0004, nt, nx, ny);
    let seq2 = random_image(0x5eed_0005, nt, nx, ny);
    let x0 = VelocityField::new(seq, seq2).expect("matching dims");
    power_lambda(
        x0,
        |x| {
            let r = v_jacobian_apply(rho, x, mode).expect("dims fixed by construction");
            v_jacobian_adjoint(rho, &r, mode).expect("dims fixed by construction")
        },
        field_norm,
        field_scale,
        POWER_ITERS,
    )
}

/// Step bound for the `rho` subproblem from precomputed eigenvalue
/// estimates: `2 lambda_a + (alpha1/eps1) lambda_d + (alpha3/eps3)
/// lambda_j`, each with safety headroom, floored away from zero.
pub fn assemble_lipschitz_rho(lambda_a: f64, lambda_d: f64, lambda_j: f64, params: &ModelParams) -> f64 {
    let l = 2.0 * SAFETY * lambda_a
        + (params.alpha1 / params.eps1) * SAFETY * lambda_d
        + (params.alpha3 / params.eps3) * SAFETY * lambda_j;
    l.max(LIPSCHITZ_FLOOR)
}

/// Step bound for the `v` subproblem from precomputed eigenvalue estimates.
pub fn assemble_lipschitz_v(lambda_d: f64, lambda_j: f64, params: &ModelParams) -> f64 {
    let l = (params.alpha2 / params.eps2) * SAFETY * lambda_d
        + (params.alpha3 / params.eps3) * SAFETY * lambda_j;
    l.max(LIPSCHITZ_FLOOR)
}

/// Gradient Lipschitz bound for `rho -> F(rho, v)`.
pub fn lipschitz_rho(system: &MriSystem, v: &VelocityField, params: &ModelParams) -> Result<f64> {
    params.validate()?;
    let lambda_a = lambda_mri(system);
    let (nt, nx, ny) = v.dims();
    let lambda_d = if params.alpha1 > 0.0 {
        lambda_grad_stencil(nt, nx, ny)
    } else {
        0.0
    };
    let lambda_j = if params.alpha3 > 0.0 {
        lambda_rho_jacobian(v, params.flow_mode)
    } else {
        0.0
    };
    Ok(assemble_lipschitz_rho(lambda_a, lambda_d, lambda_j, params))
}

/// Gradient Lipschitz bound for `v -> F(rho, v)`.
pub fn lipschitz_v(rho: &ImageSequence, params: &ModelParams) -> Result<f64> {
    params.validate()?;
    let (nt, nx, ny) = rho.dims();
    let lambda_d = if params.alpha2 > 0.0 {
        lambda_grad_stencil(nt, nx, ny)
    } else {
        0.0
    };
    let lambda_j = if params.alpha3 > 0.0 {
        lambda_v_jacobian(rho, params.flow_mode)
    } else {
        0.0
    };
    Ok(assemble_lipschitz_v(lambda_d, lambda_j, params))
}
