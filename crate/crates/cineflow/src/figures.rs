//! PNG figure rendering from stored pipeline artifacts.
//!
//! Figures are diagnostics, not data: grayscale magnitude frames on a shared
//! intensity scale, signed difference maps restricted to the dynamic-region
//! mask, velocity-magnitude heatmaps, and a time-space profile along one
//! image row. Everything is rendered from the artifact files alone and is
//! deterministic, so reruns produce byte-identical images.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Rgb, RgbImage};
use ndarray::{Array2, Array3};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::grid::{atomic_write, ImageSequence, VelocityField};
use crate::pipeline::{Artifacts, ModelSelect};

/// Renders every figure the stored artifacts support and returns the list
/// of written files. Ground truth and the dynamic mask must exist; models
/// and velocity fields are included when their artifacts are present.
pub fn render(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let arts = Artifacts::for_config(cfg);
    let fig_dir = arts.dir().join("figures");
    std::fs::create_dir_all(&fig_dir).map_err(|e| Error::io(&fig_dir, e))?;

    let gt_path = arts.ground_truth();
    if !gt_path.is_file() {
        return Err(Error::MissingArtifact {
            path: gt_path,
            what: "ground-truth sequence (run `simulate` first)".to_string(),
        });
    }
    let gt = ImageSequence::load(&gt_path)?;
    let dyn_mask = load_mask(&arts)?;
    let gt_mag = gt.magnitude();
    let peak = max_abs(&gt_mag).max(f64::MIN_POSITIVE);
    let frames = &cfg.output.figure_frames;

    let mut written = Vec::new();
    for &t in frames {
        let path = fig_dir.join(format!("gt_t{t}.png"));
        save_gray(&frame(&gt_mag, t), peak, &path)?;
        written.push(path);
    }
    let profile = fig_dir.join("profile_gt.png");
    save_gray(&time_profile(&gt_mag, cfg.output.profile_row), peak, &profile)?;
    written.push(profile);

    for model in ModelSelect::ALL {
        let rec_path = arts.recon(model);
        if !rec_path.is_file() {
            continue;
        }
        let rec = ImageSequence::load(&rec_path)?;
        if rec.dims() != gt.dims() {
            return Err(Error::DimMismatch(format!(
                "reconstruction {} is {:?} but ground truth is {:?}",
                rec_path.display(),
                rec.dims(),
                gt.dims()
            )));
        }
        let rec_mag = rec.magnitude();
        // One symmetric color scale per model across its requested frames,
        // so the difference maps within a model are comparable.
        let mut diff_scale = f64::MIN_POSITIVE;
        for &t in frames {
            let d = masked_diff(&rec_mag, &gt_mag, &dyn_mask, t);
            diff_scale = diff_scale.max(max_abs(&d));
        }
        for &t in frames {
            let path = fig_dir.join(format!("recon_{}_t{t}.png", model.tag()));
            save_gray(&frame(&rec_mag, t), peak, &path)?;
            written.push(path);

            let path = fig_dir.join(format!("diff_{}_t{t}.png", model.tag()));
            save_signed(&masked_diff(&rec_mag, &gt_mag, &dyn_mask, t), diff_scale, &path)?;
            written.push(path);
        }
        let path = fig_dir.join(format!("profile_{}.png", model.tag()));
        save_gray(&time_profile(&rec_mag, cfg.output.profile_row), peak, &path)?;
        written.push(path);
    }

    let velocity_sources = [
        ("gt", arts.ground_truth_velocity()),
        ("of", arts.recon_velocity()),
    ];
    let fields: Vec<(&str, VelocityField)> = velocity_sources
        .iter()
        .filter(|(_, p)| p.is_file())
        .map(|(tag, p)| VelocityField::load(p).map(|v| (*tag, v)))
        .collect::<Result<_>>()?;
    let vmax = fields
        .iter()
        .map(|(_, v)| max_abs(&speed(v)))
        .fold(f64::MIN_POSITIVE, f64::max);
    for (tag, v) in &fields {
        let sp = speed(v);
        for &t in frames {
            let path = fig_dir.join(format!("velocity_{tag}_t{t}.png"));
            save_heat(&frame(&sp, t), vmax, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn load_mask(arts: &Artifacts) -> Result<Array2<bool>> {
    let path = arts.dynamic_mask();
    if !path.is_file() {
        return Err(Error::MissingArtifact {
            path,
            what: "dynamic-region mask (run `simulate` first)".to_string(),
        });
    }
    let seq = ImageSequence::load(&path)?;
    let (_, nx, ny) = seq.dims();
    let mut mask = Array2::from_elem((nx, ny), false);
    for i in 0..nx {
        for j in 0..ny {
            mask[[i, j]] = seq.data()[[0, i, j]].re > 0.5;
        }
    }
    Ok(mask)
}

fn frame(mag: &Array3<f64>, t: usize) -> Array2<f64> {
    mag.index_axis(ndarray::Axis(0), t).to_owned()
}

/// Per-pixel velocity magnitude `sqrt(|vx|^2 + |vy|^2)` over all frames.
fn speed(v: &VelocityField) -> Array3<f64> {
    let vx = v.vx().data();
    let vy = v.vy().data();
    let mut out = Array3::zeros(vx.dim());
    ndarray::Zip::from(&mut out)
        .and(vx)
        .and(vy)
        .for_each(|o, a, b| *o = (a.norm_sqr() + b.norm_sqr()).sqrt());
    out
}

fn masked_diff(
    rec: &Array3<f64>,
    gt: &Array3<f64>,
    mask: &Array2<bool>,
    t: usize,
) -> Array2<f64> {
    let (_, nx, ny) = gt.dim();
    let mut out = Array2::zeros((nx, ny));
    for i in 0..nx {
        for j in 0..ny {
            if mask[[i, j]] {
                out[[i, j]] = rec[[t, i, j]] - gt[[t, i, j]];
            }
        }
    }
    out
}

/// Magnitude along one fixed image row over time: height = frames (upscaled
/// for visibility), width = the row's pixels.
fn time_profile(mag: &Array3<f64>, row: usize) -> Array2<f64> {
    let (nt, _, ny) = mag.dim();
    let k = (64usize).div_ceil(nt).max(1);
    let mut out = Array2::zeros((nt * k, ny));
    for t in 0..nt {
        for j in 0..ny {
            for r in 0..k {
                out[[t * k + r, j]] = mag[[t, row, j]];
            }
        }
    }
    out
}

fn max_abs(a: &impl AbsMax) -> f64 {
    a.abs_max()
}

trait AbsMax {
    fn abs_max(&self) -> f64;
}

impl AbsMax for Array2<f64> {
    fn abs_max(&self) -> f64 {
        self.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl AbsMax for Array3<f64> {
    fn abs_max(&self) -> f64 {
        self.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn to_byte(u: f64) -> u8 {
    (u.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png<I>(img: I, path: &Path) -> Result<()>
where
    I: image::GenericImageView,
    image::DynamicImage: From<I>,
{
    let mut bytes = Cursor::new(Vec::new());
    image::DynamicImage::from(img)
        .write_to(&mut bytes, ImageFormat::Png)
        .map_err(|e| Error::Invariant(format!("png encoding failed for {}: {e}", path.display())))?;
    atomic_write(path, bytes.get_ref())
}

/// Grayscale rendering on the fixed scale `[0, peak]`.
fn save_gray(field: &Array2<f64>, peak: f64, path: &Path) -> Result<()> {
    let (nx, ny) = field.dim();
    let mut img = GrayImage::new(ny as u32, nx as u32);
    for i in 0..nx {
        for j in 0..ny {
            img.put_pixel(j as u32, i as u32, image::Luma([to_byte(field[[i, j]] / peak)]));
        }
    }
    write_png(img, path)
}

/// Signed rendering on the symmetric scale `[-scale, scale]`: white at zero,
/// red for positive values, blue for negative.
fn save_signed(field: &Array2<f64>, scale: f64, path: &Path) -> Result<()> {
    let (nx, ny) = field.dim();
    let mut img = RgbImage::new(ny as u32, nx as u32);
    for i in 0..nx {
        for j in 0..ny {
            let u = (field[[i, j]] / scale).clamp(-1.0, 1.0);
            let fade = to_byte(1.0 - u.abs());
            let px = if u >= 0.0 {
                Rgb([255, fade, fade])
            } else {
                Rgb([fade, fade, 255])
            };
            img.put_pixel(j as u32, i as u32, px);
        }
    }
    write_png(img, path)
}

/// Heatmap rendering on `[0, peak]` with a dark-blue / cyan / yellow / red
/// ramp.
fn save_heat(field: &Array2<f64>, peak: f64, path: &Path) -> Result<()> {
    let stops: [(f64, [f64; 3]); 4] = [
        (0.0, [0.05, 0.03, 0.35]),
        (1.0 / 3.0, [0.0, 0.75, 0.85]),
        (2.0 / 3.0, [0.95, 0.9, 0.2]),
        (1.0, [0.85, 0.1, 0.1]),
    ];
    let (nx, ny) = field.dim();
    let mut img = RgbImage::new(ny as u32, nx as u32);
    for i in 0..nx {
        for j in 0..ny {
            let u = (field[[i, j]] / peak).clamp(0.0, 1.0);
            let seg = stops.windows(2).find(|w| u <= w[1].0).expect("u in [0,1]");
            let (u0, c0) = seg[0];
            let (u1, c1) = seg[1];
            let w = if u1 > u0 { (u - u0) / (u1 - u0) } else { 0.0 };
            let mix = |a: f64, b: f64| to_byte(a + w * (b - a));
            img.put_pixel(
                j as u32,
                i as u32,
                Rgb([mix(c0[0], c1[0]), mix(c0[1], c1[1]), mix(c0[2], c1[2])]),
            );
        }
    }
    write_png(img, path)
}
