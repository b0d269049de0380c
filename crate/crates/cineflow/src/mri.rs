//! Per-frame multi-coil MRI measurement operator and sampling masks.
//!
//! The forward model for frame `t` and coil `i` is
//! `(A_t rho_t)_i = S_t F (C_i . rho_t)`: pointwise coil weighting, a
//! centered unitary 2-D DFT, and row selection by the sampling mask. The
//! adjoint zero-fills, inverts the DFT, multiplies by conjugate coil maps,
//! and sums over coils. Both directions share the convention that the
//! zero-frequency row/column sits at `(Nx/2, Ny/2)` (floor division).

use std::sync::Arc;

use ndarray::Array4;
use num_complex::Complex64;
use rand::SeedableRng;
use rustfft::Fft;

use crate::error::{Error, Result};
use crate::grid::{CoilMaps, ImageSequence, KSpaceData, SamplingMask};

/// FFT normalization; only the unitary convention is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FftNorm {
    #[default]
    Unitary,
}

/// Undersampling scheme for [`make_mask`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accel {
    /// Every row of every frame.
    Full,
    /// 4x acceleration: `round(0.25 Nx)` rows per frame.
    FourX,
}

/// Measurement operator: coil maps + mask + cached FFT plans.
pub struct MriSystem {
    coils: CoilMaps,
    mask: SamplingMask,
    norm: FftNorm,
    sampled: Vec<Vec<bool>>,
    plan_fx: Arc<dyn Fft<f64>>,
    plan_ix: Arc<dyn Fft<f64>>,
    plan_fy: Arc<dyn Fft<f64>>,
    plan_iy: Arc<dyn Fft<f64>>,
}

impl MriSystem {
    pub fn new(coils: CoilMaps, mask: SamplingMask) -> Result<Self> {
        let (_, nx, ny) = coils.dims();
        if mask.nx_full() != nx {
            return Err(Error::DimMismatch(format!(
                "mask covers {} rows but coil maps have {}",
                mask.nx_full(),
                nx
            )));
        }
        let mut planner = rustfft::FftPlanner::new();
        let sampled = mask.to_bool_table();
        Ok(MriSystem {
            coils,
            mask,
            norm: FftNorm::Unitary,
            sampled,
            plan_fx: planner.plan_fft_forward(nx),
            plan_ix: planner.plan_fft_inverse(nx),
            plan_fy: planner.plan_fft_forward(ny),
            plan_iy: planner.plan_fft_inverse(ny),
        })
    }

    pub fn coils(&self) -> &CoilMaps {
        &self.coils
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn norm(&self) -> FftNorm {
        self.norm
    }

    pub fn nt(&self) -> usize {
        self.mask.nt()
    }

    pub fn nc(&self) -> usize {
        self.coils.dims().0
    }

    pub fn nx(&self) -> usize {
        self.coils.dims().1
    }

    pub fn ny(&self) -> usize {
        self.coils.dims().2
    }

    fn check_image_dims(&self, rho: &ImageSequence) -> Result<()> {
        let (nt, nx, ny) = rho.dims();
        if nt != self.nt() || nx != self.nx() || ny != self.ny() {
            return Err(Error::DimMismatch(format!(
                "image {}x{}x{} does not match system {}x{}x{}",
                nt,
                nx,
                ny,
                self.nt(),
                self.nx(),
                self.ny()
            )));
        }
        Ok(())
    }

    fn check_kspace_dims(&self, y: &KSpaceData) -> Result<()> {
        let (nt, nc, nx, ny) = y.dims();
        if nt != self.nt() || nc != self.nc() || nx != self.nx() || ny != self.ny() {
            return Err(Error::DimMismatch(format!(
                "k-space {}x{}x{}x{} does not match system {}x{}x{}x{}",
                nt,
                nc,
                nx,
                ny,
                self.nt(),
                self.nc(),
                self.nx(),
                self.ny()
            )));
        }
        if y.mask() != &self.mask {
            return Err(Error::Invariant(
                "k-space mask differs from the system mask".into(),
            ));
        }
        Ok(())
    }

    /// Centered unitary 2-D FFT of one `nx*ny` row-major plane, in place.
    fn fft2_centered(&self, buf: &mut [Complex64], inverse: bool) {
        let (nx, ny) = (self.nx(), self.ny());
        debug_assert_eq!(buf.len(), nx * ny);
        let mut tmp = vec![Complex64::ZERO; nx * ny];
        // ifftshift: move the centered origin to index 0.
        shift2(buf, &mut tmp, nx, ny, nx / 2, ny / 2);
        let (plan_x, plan_y) = if inverse {
            (&self.plan_ix, &self.plan_iy)
        } else {
            (&self.plan_fx, &self.plan_fy)
        };
        let mut scratch = vec![Complex64::ZERO; plan_y.get_inplace_scratch_len()];
        for row in tmp.chunks_mut(ny) {
            plan_y.process_with_scratch(row, &mut scratch);
        }
        let mut scratch = vec![Complex64::ZERO; plan_x.get_inplace_scratch_len()];
        let mut col = vec![Complex64::ZERO; nx];
        for j in 0..ny {
            for i in 0..nx {
                col[i] = tmp[i * ny + j];
            }
            plan_x.process_with_scratch(&mut col, &mut scratch);
            for i in 0..nx {
                tmp[i * ny + j] = col[i];
            }
        }
        // fftshift back so the zero frequency lands at (nx/2, ny/2), and
        // scale for the unitary convention (rustfft is unnormalized).
        shift2(&tmp, buf, nx, ny, nx - nx / 2, ny - ny / 2);
        let scale = 1.0 / ((nx * ny) as f64).sqrt();
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }

    /// Applies the measurement operator to an image sequence.
    pub fn forward(&self, rho: &ImageSequence) -> Result<KSpaceData> {
        self.check_image_dims(rho)?;
        let (nt, nc, nx, ny) = (self.nt(), self.nc(), self.nx(), self.ny());
        let rho_s = rho.data().as_slice().unwrap();
        let coil_s = self.coils.maps().as_slice().unwrap();
        let mut samples = Array4::zeros((nt, nc, nx, ny));
        let out = samples.as_slice_mut().unwrap();
        let plane = nx * ny;
        let mut buf = vec![Complex64::ZERO; plane];
        for t in 0..nt {
            for c in 0..nc {
                for i in 0..plane {
                    buf[i] = rho_s[t * plane + i] * coil_s[c * plane + i];
                }
                self.fft2_centered(&mut buf, false);
                let dst = &mut out[(t * nc + c) * plane..(t * nc + c + 1) * plane];
                for x in 0..nx {
                    if self.sampled[t][x] {
                        dst[x * ny..(x + 1) * ny].copy_from_slice(&buf[x * ny..(x + 1) * ny]);
                    }
                }
            }
        }
        Ok(KSpaceData::from_parts_unchecked(samples, self.mask.clone()))
    }

    /// Applies the adjoint operator: zero-fill, inverse DFT, conjugate coil
    /// weighting, and a coil sum.
    pub fn adjoint(&self, y: &KSpaceData) -> Result<ImageSequence> {
        self.check_kspace_dims(y)?;
        let (nt, nc, nx, ny) = (self.nt(), self.nc(), self.nx(), self.ny());
        let y_s = y.samples().as_slice().unwrap();
        let coil_s = self.coils.maps().as_slice().unwrap();
        let plane = nx * ny;
        let mut out = vec![Complex64::ZERO; nt * plane];
        let mut buf = vec![Complex64::ZERO; plane];
        for t in 0..nt {
            for c in 0..nc {
                buf.copy_from_slice(&y_s[(t * nc + c) * plane..(t * nc + c + 1) * plane]);
                self.fft2_centered(&mut buf, true);
                for i in 0..plane {
                    out[t * plane + i] += buf[i] * coil_s[c * plane + i].conj();
                }
            }
        }
        Ok(ImageSequence::from_array_unchecked(
            ndarray::Array3::from_shape_vec((nt, nx, ny), out).unwrap(),
        ))
    }

    /// Residual energy `sum_t ||A_t rho_t - y_t||^2`.
    pub fn data_term(&self, rho: &ImageSequence, y: &KSpaceData) -> Result<f64> {
        let fwd = self.forward(rho)?;
        self.check_kspace_dims(y)?;
        Ok(fwd
            .samples()
            .iter()
            .zip(y.samples().iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum())
    }

    /// Residual energy `sum_t ||A_t rho_t - y_t||^2` and its gradient
    /// `2 A^*(A rho - y)` with respect to `rho`.
    pub fn data_term_and_grad(&self, rho: &ImageSequence, y: &KSpaceData) -> Result<(f64, ImageSequence)> {
        let mut r = self.forward(rho)?;
        self.check_kspace_dims(y)?;
        let rs = r.samples_mut().as_slice_mut().unwrap();
        let ys = y.samples().as_slice().unwrap();
        let mut value = 0.0;
        for (ri, yi) in rs.iter_mut().zip(ys.iter()) {
            *ri -= yi;
            value += ri.norm_sqr();
        }
        let mut grad = self.adjoint(&r)?;
        for z in grad.data_mut().iter_mut() {
            *z *= 2.0;
        }
        Ok((value, grad))
    }
}

/// 2-D circular shift used for fftshift/ifftshift: `dst[i, j] =
/// src[(i + ax) % nx, (j + ay) % ny]`.
fn shift2(src: &[Complex64], dst: &mut [Complex64], nx: usize, ny: usize, ax: usize, ay: usize) {
    for i in 0..nx {
        let si = (i + ax) % nx;
        for j in 0..ny {
            dst[i * ny + j] = src[si * ny + (j + ay) % ny];
        }
    }
}

fn round_half_away(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Row counts for the 4x pattern: total rows, central-block rows, and outer
/// rows per side. The central count is the integer nearest to
/// `central_frac * nx_full` whose parity lets the remaining rows split
/// equally above and below the block (ties prefer the larger block).
pub(crate) fn four_x_row_counts(nx_full: usize, central_frac: f64) -> Result<(usize, usize, usize)> {
    let n_total = round_half_away(0.25 * nx_full as f64);
    let target = central_frac * nx_full as f64;
    let mut n_central = round_half_away(target);
    if n_central > n_total {
        return Err(Error::Invariant(format!(
            "central block of {} rows exceeds the budget of {} rows",
            n_central, n_total
        )));
    }
    if (n_total - n_central) % 2 == 1 {
        let lo = n_central.checked_sub(1);
        let hi = if n_central + 1 <= n_total { Some(n_central + 1) } else { None };
        n_central = match (lo, hi) {
            (Some(l), Some(h)) => {
                if (target - l as f64).abs() < (h as f64 - target).abs() {
                    l
                } else {
                    h
                }
            }
            (Some(l), None) => l,
            (None, Some(h)) => h,
            (None, None) => unreachable!("odd remainder implies n_total >= 1"),
        };
    }
    Ok((n_total, n_central, (n_total - n_central) / 2))
}

/// Start of the centered block of `n_central` rows; an odd block puts the
/// extra row below the center index `nx_full / 2`.
pub(crate) fn central_block_start(nx_full: usize, n_central: usize) -> Result<usize> {
    let c = nx_full / 2;
    let below = n_central.div_ceil(2);
    if below > c || c + n_central - below > nx_full {
        return Err(Error::Invariant(format!(
            "central block of {} rows does not fit in {} rows",
            n_central, nx_full
        )));
    }
    Ok(c - below)
}

/// Samples `k` rows from `pool` uniformly without replacement, rejecting
/// samples that intersect `prev` (up to 10,000 attempts).
pub(crate) fn sample_disjoint_rows(
    rng: &mut rand_chacha::ChaCha8Rng,
    pool: &[usize],
    k: usize,
    prev: Option<&[usize]>,
    context: &str,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    if pool.len() < k {
        return Err(Error::Infeasible(format!(
            "{}: pool of {} rows cannot supply {} rows",
            context,
            pool.len(),
            k
        )));
    }
    if let Some(p) = prev {
        let free = pool.iter().filter(|r| !p.contains(r)).count();
        if free < k {
            return Err(Error::Infeasible(format!(
                "{}: only {} rows stay free of the previous frame, {} needed",
                context, free, k
            )));
        }
    }
    for _ in 0..10_000 {
        let mut pick: Vec<usize> = rand::seq::index::sample(rng, pool.len(), k)
            .iter()
            .map(|i| pool[i])
            .collect();
        pick.sort_unstable();
        let clash = prev.map(|p| pick.iter().any(|r| p.contains(r))).unwrap_or(false);
        if !clash {
            return Ok(pick);
        }
    }
    Err(Error::Infeasible(format!(
        "{}: no draw disjoint from the previous frame in 10000 attempts",
        context
    )))
}

/// Generates a sampling mask. The 4x pattern keeps an identical central
/// low-frequency block in every frame and draws the remaining rows at random,
/// split equally above and below the block, with consecutive frames using
/// disjoint outer rows.
pub fn make_mask(
    nt: usize,
    nx_full: usize,
    accel: Accel,
    central_frac: f64,
    seed: u64,
) -> Result<SamplingMask> {
    if nt < 1 {
        return Err(Error::Invariant("mask needs at least one frame".into()));
    }
    if nx_full < 8 {
        return Err(Error::Invariant(format!(
            "undersampling needs at least 8 rows, got {}",
            nx_full
        )));
    }
    if !(0.0..=1.0).contains(&central_frac) || !central_frac.is_finite() {
        return Err(Error::Invariant(format!(
            "central fraction must lie in [0, 1], got {}",
            central_frac
        )));
    }
    match accel {
        Accel::Full => Ok(SamplingMask::full(nt, nx_full)),
        Accel::FourX => {
            let (_, n_central, k_side) = four_x_row_counts(nx_full, central_frac)?;
            let block_lo = central_block_start(nx_full, n_central)?;
            let block_hi = block_lo + n_central; // exclusive
            let central: Vec<usize> = (block_lo..block_hi).collect();
            let below_pool: Vec<usize> = (0..block_lo).collect();
            let above_pool: Vec<usize> = (block_hi..nx_full).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut rows = Vec::with_capacity(nt);
            let mut prev_below: Option<Vec<usize>> = None;
            let mut prev_above: Option<Vec<usize>> = None;
            for t in 0..nt {
                let below = sample_disjoint_rows(
                    &mut rng,
                    &below_pool,
                    k_side,
                    prev_below.as_deref(),
                    &format!("frame {} below block", t),
                )?;
                let above = sample_disjoint_rows(
                    &mut rng,
                    &above_pool,
                    k_side,
                    prev_above.as_deref(),
                    &format!("frame {} above block", t),
                )?;
                let mut frame: Vec<usize> =
                    below.iter().chain(central.iter()).chain(above.iter()).copied().collect();
                frame.sort_unstable();
                rows.push(frame);
                prev_below = Some(below);
                prev_above = Some(above);
            }
            SamplingMask::new(nx_full, rows)
        }
    }
}
