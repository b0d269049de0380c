//! Image-quality metrics on magnitude images, restricted to a spatial mask.
//!
//! Both metrics compare `|rec|` against `|gt|` frame by frame. The dynamic
//! range is taken from the ground-truth magnitude over the *entire* sequence
//! so that per-frame scores share one scale. PSNR averages squared error over
//! the masked pixels only. SSIM is computed with a uniform 7x7 window on the
//! full frame, the map is cropped by the window radius, and the mean is taken
//! over masked pixels inside the cropped region (masking after windowing, so
//! structure at the mask boundary still contributes context).

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::grid::ImageSequence;

/// Side length of the uniform SSIM window.
const SSIM_WIN: usize = 7;
/// Crop radius: pixels closer than this to the border have partial windows.
const SSIM_PAD: usize = 3;
/// Luminance stabilizer coefficient: C1 = (K1 * data_range)^2.
const SSIM_K1: f64 = 0.01;
/// Contrast stabilizer coefficient: C2 = (K2 * data_range)^2.
const SSIM_K2: f64 = 0.03;

/// Per-frame scores plus aggregate statistics over a sequence.
#[derive(Debug, Clone)]
pub struct MetricReport {
    /// `(psnr_db, ssim)` per frame; PSNR is `inf` when the masked MSE is zero.
    pub per_frame: Vec<(f64, f64)>,
    /// Mean PSNR over frames with finite PSNR (`inf` if none are finite).
    pub mean_psnr: f64,
    /// Population standard deviation over the same frames.
    pub std_psnr: f64,
    pub mean_ssim: f64,
    pub std_ssim: f64,
    /// Number of frames excluded from the PSNR aggregate because their
    /// masked MSE was exactly zero.
    pub psnr_inf_frames: usize,
}

fn check_pair(gt: &ImageSequence, rec: &ImageSequence, mask: &Array2<bool>) -> Result<()> {
    if gt.dims() != rec.dims() {
        return Err(Error::Invariant(format!(
            "metric inputs disagree on dimensions: {:?} vs {:?}",
            gt.dims(),
            rec.dims()
        )));
    }
    let (_, nx, ny) = gt.dims();
    if mask.dim() != (nx, ny) {
        return Err(Error::Invariant(format!(
            "metric mask is {:?}, expected ({nx}, {ny})",
            mask.dim()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Invariant("metric mask is empty".into()));
    }
    Ok(())
}

/// Dynamic range of the ground-truth magnitude over the whole sequence.
fn data_range(gt_mag: &Array3<f64>) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in gt_mag {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Invariant(
            "ground truth has zero intensity range; PSNR/SSIM undefined".into(),
        ));
    }
    Ok(range)
}

/// Masked per-frame PSNR in dB between the magnitudes of `gt` and `rec`.
///
/// `10 * log10(range^2 / mse)` with the MSE averaged over masked pixels and
/// the range taken over the full ground-truth sequence. A frame whose masked
/// MSE is exactly zero reports `f64::INFINITY`.
pub fn psnr_masked(
    gt: &ImageSequence,
    rec: &ImageSequence,
    mask: &Array2<bool>,
) -> Result<Vec<f64>> {
    check_pair(gt, rec, mask)?;
    let gt_mag = gt.magnitude();
    let rec_mag = rec.magnitude();
    let range = data_range(&gt_mag)?;
    let (nt, nx, ny) = gt.dims();
    let n_masked = mask.iter().filter(|&&m| m).count() as f64;
    let mut out = Vec::with_capacity(nt);
    for t in 0..nt {
        let mut sq = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                if mask[[i, j]] {
                    let d = gt_mag[[t, i, j]] - rec_mag[[t, i, j]];
                    sq += d * d;
                }
            }
        }
        let mse = sq / n_masked;
        out.push(if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (range * range / mse).log10()
        });
    }
    Ok(out)
}

/// Windowed first and second moments over all full (interior) 7x7 windows.
///
/// Returns `(mean_x, mean_y, e_xx, e_yy, e_xy)` on the cropped grid of shape
/// `(nx - 2*SSIM_PAD, ny - 2*SSIM_PAD)`; entry `(i, j)` describes the window
/// centred on full-grid pixel `(i + SSIM_PAD, j + SSIM_PAD)`.
#[allow(clippy::type_complexity)]
fn window_moments(
    x: &ndarray::ArrayView2<'_, f64>,
    y: &ndarray::ArrayView2<'_, f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let (nx, ny) = x.dim();
    let (cx, cy) = (nx - 2 * SSIM_PAD, ny - 2 * SSIM_PAD);
    let inv_n = 1.0 / (SSIM_WIN * SSIM_WIN) as f64;
    let mut ux = Array2::zeros((cx, cy));
    let mut uy = Array2::zeros((cx, cy));
    let mut exx = Array2::zeros((cx, cy));
    let mut eyy = Array2::zeros((cx, cy));
    let mut exy = Array2::zeros((cx, cy));
    for i in 0..cx {
        for j in 0..cy {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in 0..SSIM_WIN {
                for b in 0..SSIM_WIN {
                    let xv = x[[i + a, j + b]];
                    let yv = y[[i + a, j + b]];
                    sx += xv;
                    sy += yv;
                    sxx += xv * xv;
                    syy += yv * yv;
                    sxy += xv * yv;
                }
            }
            ux[[i, j]] = sx * inv_n;
            uy[[i, j]] = sy * inv_n;
            exx[[i, j]] = sxx * inv_n;
            eyy[[i, j]] = syy * inv_n;
            exy[[i, j]] = sxy * inv_n;
        }
    }
    (ux, uy, exx, eyy, exy)
}

/// Masked per-frame SSIM between the magnitudes of `gt` and `rec`.
///
/// Uniform 7x7 window, stabilizers `C_i = (K_i * range)^2` with
/// `K1 = 0.01`, `K2 = 0.03`, unbiased covariance normalisation `N/(N-1)`,
/// and the SSIM map cropped by the window radius before the masked mean.
/// Frames must be at least `7 + 2*3` pixels... in practice at least 13x13 so
/// the cropped region is non-empty; the mask must intersect it.
pub fn ssim_masked(
    gt: &ImageSequence,
    rec: &ImageSequence,
    mask: &Array2<bool>,
) -> Result<Vec<f64>> {
    check_pair(gt, rec, mask)?;
    let (nt, nx, ny) = gt.dims();
    if nx < SSIM_WIN + 2 * SSIM_PAD || ny < SSIM_WIN + 2 * SSIM_PAD {
        return Err(Error::Invariant(format!(
            "frames of {nx}x{ny} are too small for a {SSIM_WIN}x{SSIM_WIN} SSIM window \
             with crop radius {SSIM_PAD}"
        )));
    }
    let gt_mag = gt.magnitude();
    let rec_mag = rec.magnitude();
    let range = data_range(&gt_mag)?;
    let c1 = (SSIM_K1 * range) * (SSIM_K1 * range);
    let c2 = (SSIM_K2 * range) * (SSIM_K2 * range);
    let n_win = (SSIM_WIN * SSIM_WIN) as f64;
    let cov_norm = n_win / (n_win - 1.0);

    let mut out = Vec::with_capacity(nt);
    for t in 0..nt {
        let x = gt_mag.index_axis(ndarray::Axis(0), t);
        let y = rec_mag.index_axis(ndarray::Axis(0), t);
        let (ux, uy, exx, eyy, exy) = window_moments(&x, &y);
        let (cx, cy) = ux.dim();
        // The window at cropped index (i, j) is centred on pixel
        // (i + SSIM_PAD, j + SSIM_PAD); another SSIM_PAD of centres near the
        // border would index partial windows, which window_moments already
        // excluded, so the cropped grid aligns with the masked mean below.
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..cx {
            for j in 0..cy {
                if !mask[[i + SSIM_PAD, j + SSIM_PAD]] {
                    continue;
                }
                let vx = cov_norm * (exx[[i, j]] - ux[[i, j]] * ux[[i, j]]);
                let vy = cov_norm * (eyy[[i, j]] - uy[[i, j]] * uy[[i, j]]);
                let vxy = cov_norm * (exy[[i, j]] - ux[[i, j]] * uy[[i, j]]);
                let a1 = 2.0 * ux[[i, j]] * uy[[i, j]] + c1;
                let a2 = 2.0 * vxy + c2;
                let b1 = ux[[i, j]] * ux[[i, j]] + uy[[i, j]] * uy[[i, j]] + c1;
                let b2 = vx + vy + c2;
                sum += (a1 * a2) / (b1 * b2);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Invariant(
                "mask does not intersect the SSIM-valid (cropped) region".into(),
            ));
        }
        out.push(sum / count as f64);
    }
    Ok(out)
}

/// Combine per-frame scores into mean +/- population standard deviation.
///
/// Frames with infinite PSNR (zero masked error) are excluded from the PSNR
/// aggregate and counted in `psnr_inf_frames`; if every frame is infinite the
/// mean is reported as `inf` with zero deviation.
pub fn aggregate(psnr: &[f64], ssim: &[f64]) -> Result<MetricReport> {
    if psnr.len() != ssim.len() || psnr.is_empty() {
        return Err(Error::Invariant(format!(
            "aggregate needs equal, non-empty score lists; got {} and {}",
            psnr.len(),
            ssim.len()
        )));
    }
    let finite: Vec<f64> = psnr.iter().copied().filter(|p| p.is_finite()).collect();
    let psnr_inf_frames = psnr.len() - finite.len();
    let (mean_psnr, std_psnr) = if finite.is_empty() {
        (f64::INFINITY, 0.0)
    } else {
        mean_std(&finite)
    };
    let (mean_ssim, std_ssim) = mean_std(ssim);
    Ok(MetricReport {
        per_frame: psnr.iter().copied().zip(ssim.iter().copied()).collect(),
        mean_psnr,
        std_psnr,
        mean_ssim,
        std_ssim,
        psnr_inf_frames,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Evaluate both metrics and aggregate them in one call.
pub fn evaluate_pair(
    gt: &ImageSequence,
    rec: &ImageSequence,
    mask: &Array2<bool>,
) -> Result<MetricReport> {
    let psnr = psnr_masked(gt, rec, mask)?;
    let ssim = ssim_masked(gt, rec, mask)?;
    aggregate(&psnr, &ssim)
}

/// Render a report as CSV: one row per frame plus a `summary` row holding the
/// aggregate mean values (standard deviations in the summary comment column).
pub fn metrics_csv(report: &MetricReport) -> String {
    let mut s = String::from("frame,psnr_db,ssim\n");
    for (t, (p, q)) in report.per_frame.iter().enumerate() {
        s.push_str(&format!("{t},{p:e},{q:e}\n"));
    }
    s.push_str(&format!(
        "summary,{:e},{:e}\n",
        report.mean_psnr, report.mean_ssim
    ));
    s
}
