//! Synthetic data generation: dynamic complex phantoms, smooth velocity
//! fields, velocity-driven advection, synthetic coil maps, noisy k-space
//! synthesis, and the dynamic-region mask used for evaluation.
//!
//! The phantom pipeline is built so that the generated sequence satisfies the
//! *same discrete* transport equation the reconstruction penalizes: frames
//! are produced by explicit-Euler substeps of the complex advection operator,
//! using the identical central-difference stencils. With one substep per
//! frame the discrete flow residual of the output is zero by construction;
//! more substeps converge to the continuous-time solution at first order.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffops::gaussian_smooth_anisotropic;
use crate::error::{Error, Result};
use crate::grid::{CoilMaps, ImageSequence, KSpaceData, SamplingMask, VelocityField};
use crate::motion::{self, FlowMode};
use crate::mri::MriSystem;
use crate::objective::ModelParams;
use crate::solver::{reconstruct, ModelKind, Reconstruction, SolverParams};

/// Spatial smoothing width (pixels) applied to parametric velocity fields.
pub const VELOCITY_SIGMA_SPACE: f64 = 2.0;
/// Temporal smoothing width (frames) applied to parametric velocity fields.
pub const VELOCITY_SIGMA_TIME: f64 = 1.0;
/// Hard cap on the per-frame displacement magnitude (pixels) for stability.
pub const MAX_DISPLACEMENT: f64 = 0.5;
/// Default multiplier on the transport weight when computing a dynamic
/// ground truth from fully sampled data.
pub const DEFAULT_ALPHA3_BOOST: f64 = 10.0;

/// Peak of the radial envelope `(r/R) * exp(-r^2 / (2 R^2))`, reached at
/// `r = R`; used to bound the contraction field's amplitude analytically.
pub(crate) const CONTRACTION_ENVELOPE_SUP: f64 = 0.606_530_659_712_633_4;
/// Relative strength of the imaginary (swirl) velocity component.
pub(crate) const CONTRACTION_SWIRL: f64 = 0.3;

/// Description of the synthetic phantom's first frame.
///
/// The magnitude is a sum of smooth elliptical bumps (a broad body, a few
/// off-center features, and a central chamber that the cardiac motion
/// pattern contracts); the phase is a low-order polynomial that varies
/// spatially but, being advected with the image, changes little in time.
#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub nt: usize,
    pub nx: usize,
    pub ny: usize,
    pub rng_seed: u64,
}

impl PhantomSpec {
    pub fn new(nt: usize, nx: usize, ny: usize, rng_seed: u64) -> Result<Self> {
        let spec = PhantomSpec { nt, nx, ny, rng_seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nt == 0 {
            return Err(Error::Invariant("phantom needs at least one frame".into()));
        }
        if self.nx < 16 || self.ny < 16 {
            return Err(Error::Invariant(format!(
                "phantom frames must be at least 16x16, got {}x{}",
                self.nx, self.ny
            )));
        }
        Ok(())
    }
}

/// Additive complex Gaussian noise, scaled relative to the peak magnitude of
/// the fully sampled k-space of the ground truth.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub eta: f64,
    pub rng_seed: u64,
}

impl NoiseSpec {
    pub fn new(eta: f64, rng_seed: u64) -> Result<Self> {
        if !eta.is_finite() || eta < 0.0 {
            return Err(Error::Invariant(format!(
                "noise level must be finite and nonnegative, got {eta}"
            )));
        }
        Ok(NoiseSpec { eta, rng_seed })
    }
}

/// Prescribed motion used to drive the phantom.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionPattern {
    /// No motion; every frame equals the first.
    Zero,
    /// Constant real velocity everywhere: `vx = c_x`, `vy = c_y`.
    Translation { vx: f64, vy: f64 },
    /// Periodic radial contraction toward the image center with a small
    /// imaginary swirl; `amplitude` is the peak driving strength in pixels.
    Contraction { amplitude: f64 },
}

fn smooth_bump(dx: f64, dy: f64, sx: f64, sy: f64) -> f64 {
    (-0.5 * (dx * dx / (sx * sx) + dy * dy / (sy * sy))).exp()
}

/// Generates the phantom's first frame: a sum of smooth elliptical bumps
/// times a low-order spatial phase. Deterministic per seed; the magnitude is
/// normalized so its maximum is exactly 1, and the phase spans more than
/// pi/2 radians across the field of view.
pub fn make_phantom_frame0(spec: &PhantomSpec) -> Result<ImageSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (nx, ny) = (spec.nx, spec.ny);
    let (fx, fy) = (nx as f64, ny as f64);
    let jitter = |rng: &mut ChaCha8Rng, w: f64| rng.random_range(-w..w);

    // Bump parameters: (cx, cy, sx, sy, weight). A broad "body", a central
    // "chamber", and three smaller features at jittered positions.
    let mut bumps: Vec<(f64, f64, f64, f64, f64)> = Vec::new();
    bumps.push((
        0.5 * fx + jitter(&mut rng, 0.02 * fx),
        0.5 * fy + jitter(&mut rng, 0.02 * fy),
        0.33 * fx,
        0.36 * fy,
        1.0,
    ));
    bumps.push((
        0.48 * fx + jitter(&mut rng, 0.04 * fx),
        0.52 * fy + jitter(&mut rng, 0.04 * fy),
        0.065 * fx,
        0.07 * fy,
        0.9,
    ));
    for k in 0..3 {
        let ang = std::f64::consts::TAU * (k as f64 + jitter(&mut rng, 0.2)) / 3.0;
        bumps.push((
            (0.5 + 0.22 * ang.cos()) * fx,
            (0.5 + 0.22 * ang.sin()) * fy,
            rng.random_range(0.035..0.06) * fx,
            rng.random_range(0.035..0.06) * fy,
            rng.random_range(0.3..0.7),
        ));
    }

    // Low-order phase: the linear-in-x coefficient alone guarantees a span
    // greater than pi/2 across the support, and the total stays inside
    // (-pi, pi) so the principal-value argument never wraps.
    let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
    let p0 = jitter(&mut rng, 0.3);
    let p_x = sign * rng.random_range(1.8..2.4);
    let p_y = jitter(&mut rng, 0.7);
    let p_xy = jitter(&mut rng, 0.6);
    let p_xx = jitter(&mut rng, 0.5);
    let p_yy = jitter(&mut rng, 0.5);

    let mut data = Array3::zeros((1, nx, ny));
    let mut max_mag = 0.0f64;
    for i in 0..nx {
        for j in 0..ny {
            let mut m = 0.0;
            for &(cx, cy, sx, sy, w) in &bumps {
                m += w * smooth_bump(i as f64 - cx, j as f64 - cy, sx, sy);
            }
            max_mag = max_mag.max(m);
            let xs = (i as f64 - 0.5 * fx) / fx;
            let ys = (j as f64 - 0.5 * fy) / fy;
            let phase = p0
                + p_x * xs
                + p_y * ys
                + p_xy * xs * ys
                + p_xx * xs * xs
                + p_yy * ys * ys;
            data[[0, i, j]] = Complex64::from_polar(m, phase);
        }
    }
    data.mapv_inplace(|z| z / max_mag);
    ImageSequence::new(data)
}

/// Builds a smooth complex velocity field for the given motion pattern.
///
/// The contraction pattern is smoothed with a Gaussian of width
/// [`VELOCITY_SIGMA_SPACE`] in space and [`VELOCITY_SIGMA_TIME`] in time;
/// since smoothing is an average it can only shrink the amplitude, so the
/// per-frame displacement bound is enforced analytically on the raw field.
/// Translation and zero patterns are exact by construction.
pub fn make_velocity_field(
    dims: (usize, usize, usize),
    pattern: &MotionPattern,
    rng_seed: u64,
) -> Result<VelocityField> {
    let (nt, nx, ny) = dims;
    if nt == 0 || nx == 0 || ny == 0 {
        return Err(Error::Invariant(format!("velocity dims must be positive, got {dims:?}")));
    }
    match pattern {
        MotionPattern::Zero => VelocityField::zeros(nt, nx, ny),
        MotionPattern::Translation { vx, vy } => {
            let disp = vx.hypot(*vy);
            if !disp.is_finite() || disp > MAX_DISPLACEMENT {
                return Err(Error::Invariant(format!(
                    "translation displacement {disp:.3} px/frame exceeds the \
                     stability cap {MAX_DISPLACEMENT}"
                )));
            }
            let fx = ImageSequence::new(Array3::from_elem(dims, Complex64::new(*vx, 0.0)))?;
            let fy = ImageSequence::new(Array3::from_elem(dims, Complex64::new(*vy, 0.0)))?;
            VelocityField::new(fx, fy)
        }
        MotionPattern::Contraction { amplitude } => {
            // Complex norm of the raw field is amplitude * envelope * sqrt(1
            // + swirl^2); keep that under the displacement cap.
            let sup = amplitude * CONTRACTION_ENVELOPE_SUP
                * (1.0 + CONTRACTION_SWIRL * CONTRACTION_SWIRL).sqrt();
            if !(*amplitude >= 0.0) || !sup.is_finite() || sup > MAX_DISPLACEMENT {
                return Err(Error::Invariant(format!(
                    "contraction amplitude {amplitude} drives displacements up to \
                     {sup:.3} px/frame, beyond the stability cap {MAX_DISPLACEMENT}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let cx = 0.5 * nx as f64 + rng.random_range(-0.05..0.05) * nx as f64;
            let cy = 0.5 * ny as f64 + rng.random_range(-0.05..0.05) * ny as f64;
            let radius = 0.33 * nx.min(ny) as f64 * rng.random_range(0.9..1.1);
            let mut vx = Array3::zeros(dims);
            let mut vy = Array3::zeros(dims);
            for t in 0..nt {
                // One full contract/expand cycle across the sequence, zero at
                // the temporal endpoints.
                let a = if nt > 1 {
                    amplitude * (std::f64::consts::TAU * t as f64 / (nt - 1) as f64).sin()
                } else {
                    0.0
                };
                for i in 0..nx {
                    for j in 0..ny {
                        let dx = (i as f64 - cx) / radius;
                        let dy = (j as f64 - cy) / radius;
                        let env = (-0.5 * (dx * dx + dy * dy)).exp();
                        // Radial contraction (real) plus a tangential swirl
                        // (imaginary), both vanishing smoothly at the center.
                        vx[[t, i, j]] =
                            -a * env * Complex64::new(dx, CONTRACTION_SWIRL * -dy);
                        vy[[t, i, j]] =
                            -a * env * Complex64::new(dy, CONTRACTION_SWIRL * dx);
                    }
                }
            }
            let vx = gaussian_smooth_anisotropic(&vx, VELOCITY_SIGMA_SPACE, VELOCITY_SIGMA_TIME);
            let vy = gaussian_smooth_anisotropic(&vy, VELOCITY_SIGMA_SPACE, VELOCITY_SIGMA_TIME);
            VelocityField::new(ImageSequence::new(vx)?, ImageSequence::new(vy)?)
        }
    }
}

/// Integrates the complex transport equation forward in time.
///
/// Each frame-to-frame transition applies `substeps` explicit-Euler steps of
/// size `1/substeps`, with the velocity frozen at the departing frame:
/// `rho <- rho - dtau * C(rho, v_t)` where `C` is the advection part of the
/// flow residual (central differences, replicate boundary). With
/// `substeps = 1` the output satisfies the discrete flow equation exactly.
pub fn advect(
    frame0: &ImageSequence,
    v: &VelocityField,
    substeps: usize,
) -> Result<ImageSequence> {
    if substeps == 0 {
        return Err(Error::Invariant("advection needs at least one substep".into()));
    }
    let (f_nt, nx, ny) = frame0.dims();
    if f_nt != 1 {
        return Err(Error::Invariant(format!(
            "advection starts from a single frame, got {f_nt} frames"
        )));
    }
    let (nt, vnx, vny) = v.dims();
    if (vnx, vny) != (nx, ny) {
        return Err(Error::Invariant(format!(
            "velocity frames are {vnx}x{vny} but the image is {nx}x{ny}"
        )));
    }
    let sup0 = frame0.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let cap = 10.0 * sup0;
    let dtau = 1.0 / substeps as f64;

    let mut out = Array3::zeros((nt, nx, ny));
    let mut cur = frame0.data().clone();
    out.index_axis_mut(ndarray::Axis(0), 0).assign(&cur.index_axis(ndarray::Axis(0), 0));
    for t in 0..nt.saturating_sub(1) {
        let vt = velocity_frame(v, t)?;
        for _ in 0..substeps {
            let rho = ImageSequence::from_array_unchecked(cur.clone());
            let c = motion::v_jacobian_apply(&rho, &vt, FlowMode::Complex)?;
            let mut sup = 0.0f64;
            ndarray::Zip::from(&mut cur)
                .and(&c.r1)
                .and(&c.r2)
                .for_each(|z, &a, &b| {
                    *z -= dtau * Complex64::new(a, b);
                    sup = sup.max(z.norm());
                });
            if !sup.is_finite() || sup > cap {
                return Err(Error::AdvectionUnstable(format!(
                    "magnitude grew to {sup:.3e} (cap {cap:.3e}) during frame {t}; \
                     increase substeps or reduce the velocity"
                )));
            }
        }
        out.index_axis_mut(ndarray::Axis(0), t + 1)
            .assign(&cur.index_axis(ndarray::Axis(0), 0));
    }
    ImageSequence::new(out)
}

fn velocity_frame(v: &VelocityField, t: usize) -> Result<VelocityField> {
    let (_, nx, ny) = v.dims();
    let fx = v
        .vx()
        .data()
        .index_axis(ndarray::Axis(0), t)
        .to_owned()
        .into_shape_with_order((1, nx, ny))
        .expect("frame reshape");
    let fy = v
        .vy()
        .data()
        .index_axis(ndarray::Axis(0), t)
        .to_owned()
        .into_shape_with_order((1, nx, ny))
        .expect("frame reshape");
    VelocityField::new(
        ImageSequence::from_array_unchecked(fx),
        ImageSequence::from_array_unchecked(fy),
    )
}

/// Huber energy of the flow residual restricted to the time-interior frames
/// `0..nt-1` (the forward time difference leaves the final frame's rows with
/// no data content, so they are excluded from fit comparisons).
pub fn flow_fit_energy(
    rho: &ImageSequence,
    v: &VelocityField,
    eps: f64,
    mode: FlowMode,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Invariant(format!("Huber width must be positive, got {eps}")));
    }
    let r = motion::flow_residual(rho, v, mode)?;
    let (nt, nx, ny) = r.dims();
    let mut e = 0.0;
    for t in 0..nt.saturating_sub(1) {
        for i in 0..nx {
            for j in 0..ny {
                let n = r.r1[[t, i, j]].hypot(r.r2[[t, i, j]]);
                e += if n <= eps { n * n / (2.0 * eps) } else { n - 0.5 * eps };
            }
        }
    }
    Ok(e)
}

/// Synthetic receive-coil sensitivities: Gaussian magnitude profiles centered
/// at points spaced around the border of the field of view, each with a
/// smooth linear phase. `n_coils = 1` returns the identity (all-ones) map.
/// The root-sum-of-squares is verified to be at least 0.1 everywhere.
pub fn make_coil_maps(n_coils: usize, nx: usize, ny: usize, rng_seed: u64) -> Result<CoilMaps> {
    if n_coils == 0 || nx == 0 || ny == 0 {
        return Err(Error::Invariant(format!(
            "coil map dims must be positive, got {n_coils} coils of {nx}x{ny}"
        )));
    }
    if n_coils == 1 {
        return CoilMaps::new(Array3::from_elem((1, nx, ny), Complex64::new(1.0, 0.0)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (fx, fy) = (nx as f64, ny as f64);
    let mut maps = Array3::zeros((n_coils, nx, ny));
    for c in 0..n_coils {
        let ang = std::f64::consts::TAU * (c as f64 / n_coils as f64)
            + rng.random_range(-0.1..0.1);
        // Center on the border of a circle circumscribing the FOV.
        let cx = 0.5 * fx * (1.0 + ang.cos());
        let cy = 0.5 * fy * (1.0 + ang.sin());
        let width = rng.random_range(0.5..0.65) * fx.max(fy);
        let gain = rng.random_range(0.8..1.2);
        let phase0 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let slope_x = rng.random_range(-1.5..1.5) / fx;
        let slope_y = rng.random_range(-1.5..1.5) / fy;
        for i in 0..nx {
            for j in 0..ny {
                let m = gain
                    * smooth_bump(i as f64 - cx, j as f64 - cy, width, width);
                let phase = phase0 + slope_x * i as f64 + slope_y * j as f64;
                maps[[c, i, j]] = Complex64::from_polar(m, phase);
            }
        }
    }
    let coils = CoilMaps::new(maps)?;
    let rss_min = coils.rss().iter().cloned().fold(f64::INFINITY, f64::min);
    if rss_min < 0.1 {
        return Err(Error::Invariant(format!(
            "coil sensitivity root-sum-of-squares dips to {rss_min:.3}, below 0.1"
        )));
    }
    Ok(coils)
}

/// Applies the forward model and adds complex Gaussian noise on the sampled
/// entries: `y = A rho + eta * peak * (g1 + i g2)/sqrt(2)` where `peak` is
/// the largest magnitude of the *fully sampled* k-space of `rho_gt`, so the
/// noise level is comparable across sampling patterns. Deterministic per
/// seed; unsampled entries stay zero.
pub fn synthesize_measurements(
    rho_gt: &ImageSequence,
    system: &MriSystem,
    noise: &NoiseSpec,
) -> Result<KSpaceData> {
    NoiseSpec::new(noise.eta, noise.rng_seed)?;
    let clean = system.forward(rho_gt)?;
    if noise.eta == 0.0 {
        return Ok(clean);
    }
    let peak = if system.mask().is_full() {
        clean.samples().iter().map(|z| z.norm()).fold(0.0, f64::max)
    } else {
        let full = MriSystem::new(
            system.coils().clone(),
            SamplingMask::full(system.nt(), system.nx()),
        )?;
        full.forward(rho_gt)?
            .samples()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    };
    let sd = noise.eta * peak / std::f64::consts::SQRT_2;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    let mut samples = clean.samples().clone();
    let mask = clean.mask().clone();
    let (_, nc, _, ny) = samples.dim();
    for t in 0..mask.nt() {
        for c in 0..nc {
            for &kx in mask.frame_rows(t) {
                for ky in 0..ny {
                    let g1: f64 = rng.sample(StandardNormal);
                    let g2: f64 = rng.sample(StandardNormal);
                    samples[[t, c, kx, ky]] += Complex64::new(sd * g1, sd * g2);
                }
            }
        }
    }
    KSpaceData::new(samples, mask)
}

/// Binary spatial mask of the dynamic image content: pixels whose temporal
/// standard deviation of the magnitude exceeds `tau` times the largest such
/// deviation, then dilated by `dilate_px` (Chebyshev radius). Defaults used
/// by the pipeline are `tau = 0.2`, `dilate_px = 3`.
pub fn dynamic_mask(
    rho_gt: &ImageSequence,
    tau: f64,
    dilate_px: usize,
) -> Result<Array2<bool>> {
    let (nt, nx, ny) = rho_gt.dims();
    if nt < 2 {
        return Err(Error::Invariant(format!(
            "dynamic mask needs at least 2 frames, got {nt}"
        )));
    }
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Invariant(format!(
            "dynamic-mask threshold must lie in [0, 1), got {tau}"
        )));
    }
    let mag = rho_gt.magnitude();
    let mut std_map = Array2::zeros((nx, ny));
    let inv_nt = 1.0 / nt as f64;
    let mut max_std = 0.0f64;
    for i in 0..nx {
        for j in 0..ny {
            let mut mean = 0.0;
            for t in 0..nt {
                mean += mag[[t, i, j]];
            }
            mean *= inv_nt;
            let mut var = 0.0;
            for t in 0..nt {
                let d = mag[[t, i, j]] - mean;
                var += d * d;
            }
            let s = (var * inv_nt).sqrt();
            std_map[[i, j]] = s;
            max_std = max_std.max(s);
        }
    }
    if max_std == 0.0 {
        return Err(Error::NoDynamicContent);
    }
    let thresh = tau * max_std;
    let base = std_map.mapv(|s| s > thresh);
    let mut mask = Array2::from_elem((nx, ny), false);
    let r = dilate_px as isize;
    for i in 0..nx as isize {
        for j in 0..ny as isize {
            'probe: for a in (i - r).max(0)..=(i + r).min(nx as isize - 1) {
                for b in (j - r).max(0)..=(j + r).min(ny as isize - 1) {
                    if base[[a as usize, b as usize]] {
                        mask[[i as usize, j as usize]] = true;
                        break 'probe;
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// Computes a dynamic ground truth from *fully sampled* data by running the
/// joint reconstruction with the transport weight multiplied by
/// `alpha3_boost` (use [`DEFAULT_ALPHA3_BOOST`]; a boost of 1 is exactly the
/// standard joint reconstruction). Returns the image sequence and the
/// estimated velocities.
pub fn dynamic_ground_truth(
    y_full: &KSpaceData,
    system: &MriSystem,
    mp: &ModelParams,
    sp: &SolverParams,
    alpha3_boost: f64,
) -> Result<(ImageSequence, VelocityField)> {
    if !y_full.mask().is_full() {
        return Err(Error::Invariant(
            "dynamic ground truth requires fully sampled data".into(),
        ));
    }
    if !(alpha3_boost > 0.0) || !alpha3_boost.is_finite() {
        return Err(Error::Invariant(format!(
            "transport-weight boost must be positive and finite, got {alpha3_boost}"
        )));
    }
    let mut boosted = mp.clone();
    boosted.alpha3 *= alpha3_boost;
    let Reconstruction { rho, v, .. } =
        reconstruct(y_full, system, &ModelKind::Of, &boosted, sp)?;
    Ok((rho, v))
}
