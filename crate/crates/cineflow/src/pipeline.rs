//! End-to-end experiment pipeline over an artifact directory.
//!
//! Each stage reads its inputs from disk and writes its outputs back, so
//! stages can be run independently (and out of process): `simulate` produces
//! the phantom and measurements, `reconstruct` runs one model against them,
//! `evaluate` scores reconstructions over the dynamic mask, and `sweep`
//! random-searches a model's parameters. All artifacts are deterministic
//! functions of the configuration, so reruns are bit-identical.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::grid::{atomic_write, CoilMaps, ImageSequence, KSpaceData, SamplingMask, VelocityField};
use crate::metrics::{evaluate_pair, metrics_csv, MetricReport};
use crate::mri::{make_mask, MriSystem};
use crate::objective::ModelParams;
use crate::simdata::{
    advect, dynamic_mask, make_coil_maps, make_phantom_frame0, make_velocity_field,
    synthesize_measurements, NoiseSpec, PhantomSpec,
};
use crate::solver::{reconstruct, trace_to_csv, ModelKind, Reconstruction, SolverParams};

/// The four reconstruction models the pipeline compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum ModelSelect {
    /// Frame-wise reconstruction with no temporal coupling.
    Fw,
    /// Temporal-difference coupling (flow term with zero velocity).
    Dt,
    /// Joint reconstruction of images and velocities.
    Of,
    /// Flow term evaluated at the ground-truth velocity field.
    CheatOf,
}

impl ModelSelect {
    pub const ALL: [ModelSelect; 4] =
        [ModelSelect::Fw, ModelSelect::Dt, ModelSelect::Of, ModelSelect::CheatOf];

    /// Stable lowercase tag used in artifact file names and CSV rows.
    pub fn tag(self) -> &'static str {
        match self {
            ModelSelect::Fw => "fw",
            ModelSelect::Dt => "dt",
            ModelSelect::Of => "of",
            ModelSelect::CheatOf => "cheat_of",
        }
    }

    /// Human-facing label.
    pub fn label(self) -> &'static str {
        match self {
            ModelSelect::Fw => "FW",
            ModelSelect::Dt => "DT",
            ModelSelect::Of => "OF",
            ModelSelect::CheatOf => "Cheat-OF",
        }
    }

    fn index(self) -> u64 {
        match self {
            ModelSelect::Fw => 0,
            ModelSelect::Dt => 1,
            ModelSelect::Of => 2,
            ModelSelect::CheatOf => 3,
        }
    }
}

impl std::fmt::Display for ModelSelect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Well-known artifact paths inside an output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Artifacts { dir: dir.into() }
    }

    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        Artifacts::new(&cfg.output.dir)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.dir.join("gt.cxseq")
    }

    pub fn ground_truth_velocity(&self) -> PathBuf {
        self.dir.join("gt_velocity.cxvel")
    }

    pub fn coils(&self) -> PathBuf {
        self.dir.join("coils.cxcoil")
    }

    pub fn sampling_mask(&self) -> PathBuf {
        self.dir.join("mask.cxmask")
    }

    pub fn kspace(&self) -> PathBuf {
        self.dir.join("kspace.cxksp")
    }

    pub fn kspace_full(&self) -> PathBuf {
        self.dir.join("kspace_full.cxksp")
    }

    /// Dynamic-region mask stored as a single-frame 0/1 sequence.
    pub fn dynamic_mask(&self) -> PathBuf {
        self.dir.join("dynamic_mask.cxseq")
    }

    pub fn provenance(&self) -> PathBuf {
        self.dir.join("provenance.toml")
    }

    pub fn recon(&self, model: ModelSelect) -> PathBuf {
        self.dir.join(format!("recon_{}.cxseq", model.tag()))
    }

    /// Estimated velocity field (written by the joint model only).
    pub fn recon_velocity(&self) -> PathBuf {
        self.dir.join("recon_of_velocity.cxvel")
    }

    pub fn trace(&self, model: ModelSelect) -> PathBuf {
        self.dir.join(format!("trace_{}.csv", model.tag()))
    }

    pub fn metrics(&self, model: ModelSelect) -> PathBuf {
        self.dir.join(format!("metrics_{}.csv", model.tag()))
    }

    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.csv")
    }

    pub fn sweep_leaderboard(&self, model: ModelSelect) -> PathBuf {
        self.dir.join(format!("sweep_{}.csv", model.tag()))
    }
}

fn require(path: PathBuf, what: &str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { path, what: what.to_string() })
    }
}

fn save_bool_mask(mask: &Array2<bool>, path: &Path) -> Result<()> {
    let (nx, ny) = mask.dim();
    let mut data = Array3::zeros((1, nx, ny));
    for i in 0..nx {
        for j in 0..ny {
            if mask[[i, j]] {
                data[[0, i, j]] = Complex64::new(1.0, 0.0);
            }
        }
    }
    ImageSequence::new(data)?.save(path)
}

fn load_bool_mask(path: &Path) -> Result<Array2<bool>> {
    let seq = ImageSequence::load(path)?;
    let (nt, nx, ny) = seq.dims();
    if nt != 1 {
        return Err(Error::Invariant(format!(
            "{}: a region mask must have exactly one frame, got {nt}",
            path.display()
        )));
    }
    let mut mask = Array2::from_elem((nx, ny), false);
    for i in 0..nx {
        for j in 0..ny {
            mask[[i, j]] = seq.data()[[0, i, j]].re > 0.5;
        }
    }
    Ok(mask)
}

/// Generates every simulation artifact for the configured experiment:
/// ground-truth image sequence and velocity field, coil maps, sampling
/// mask, noisy undersampled and fully sampled k-space, the dynamic-region
/// mask, and a provenance echo of the effective configuration.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let arts = Artifacts::for_config(cfg);
    std::fs::create_dir_all(arts.dir()).map_err(|e| Error::io(arts.dir(), e))?;

    let p = &cfg.phantom;
    let spec = PhantomSpec::new(p.nt, p.nx, p.ny, p.seed)?;
    let frame0 = make_phantom_frame0(&spec)?;
    let v_gt = make_velocity_field((p.nt, p.nx, p.ny), &p.motion, p.motion_seed)?;
    let rho_gt = advect(&frame0, &v_gt, p.substeps)?;
    let coils = make_coil_maps(p.n_coils, p.nx, p.ny, p.coil_seed)?;
    let mask = make_mask(p.nt, p.nx, cfg.sampling.accel, cfg.sampling.central_frac, cfg.sampling.seed)?;

    let noise = NoiseSpec::new(cfg.noise.eta, cfg.noise.seed)?;
    let system = MriSystem::new(coils.clone(), mask.clone())?;
    let y = synthesize_measurements(&rho_gt, &system, &noise)?;
    let full_system = MriSystem::new(coils.clone(), SamplingMask::full(p.nt, p.nx))?;
    let y_full = synthesize_measurements(&rho_gt, &full_system, &noise)?;

    let dyn_mask = dynamic_mask(&rho_gt, cfg.dynamic_mask.tau, cfg.dynamic_mask.dilate_px)?;

    rho_gt.save(&arts.ground_truth())?;
    v_gt.save(&arts.ground_truth_velocity())?;
    coils.save(&arts.coils())?;
    mask.save(&arts.sampling_mask())?;
    y.save(&arts.kspace())?;
    y_full.save(&arts.kspace_full())?;
    save_bool_mask(&dyn_mask, &arts.dynamic_mask())?;
    cfg.save(&arts.provenance())?;
    Ok(arts)
}

/// Measurement-side inputs shared by every reconstruction of one experiment.
pub struct ReconInputs {
    pub y: KSpaceData,
    pub system: MriSystem,
}

/// Loads the k-space data and coil maps written by [`simulate`].
pub fn load_recon_inputs(arts: &Artifacts) -> Result<ReconInputs> {
    let y_path = require(arts.kspace(), "undersampled k-space (run `simulate` first)")?;
    let c_path = require(arts.coils(), "coil sensitivity maps (run `simulate` first)")?;
    let y = KSpaceData::load(&y_path)?;
    let coils = CoilMaps::load(&c_path)?;
    let system = MriSystem::new(coils, y.mask().clone())?;
    Ok(ReconInputs { y, system })
}

/// Resolves a model selector to a concrete [`ModelKind`], loading the
/// ground-truth velocity field when the selector demands it.
pub fn model_kind(arts: &Artifacts, model: ModelSelect) -> Result<ModelKind> {
    Ok(match model {
        ModelSelect::Fw => ModelKind::Fw,
        ModelSelect::Dt => ModelKind::Dt,
        ModelSelect::Of => ModelKind::Of,
        ModelSelect::CheatOf => {
            let path = require(
                arts.ground_truth_velocity(),
                "ground-truth velocity field needed by the cheat model (run `simulate` first)",
            )?;
            ModelKind::CheatOf(VelocityField::load(&path)?)
        }
    })
}

/// Runs one model against the stored measurements and writes its artifacts:
/// the reconstructed sequence, the solver trace, and (for the joint model)
/// the estimated velocity field.
pub fn reconstruct_model(cfg: &ExperimentConfig, model: ModelSelect) -> Result<Reconstruction> {
    cfg.validate()?;
    let arts = Artifacts::for_config(cfg);
    let inputs = load_recon_inputs(&arts)?;
    let kind = model_kind(&arts, model)?;
    let mp = model_params(cfg, model);
    let rec = reconstruct(&inputs.y, &inputs.system, &kind, &mp, &cfg.solver)?;

    rec.rho.save(&arts.recon(model))?;
    atomic_write(&arts.trace(model), trace_to_csv(&rec.trace).as_bytes())?;
    if model == ModelSelect::Of {
        rec.v.save(&arts.recon_velocity())?;
    }
    Ok(rec)
}

/// The configured regularization parameters for one model.
pub fn model_params(cfg: &ExperimentConfig, model: ModelSelect) -> ModelParams {
    match model {
        ModelSelect::Fw => cfg.models.fw,
        ModelSelect::Dt => cfg.models.dt,
        ModelSelect::Of => cfg.models.of,
        ModelSelect::CheatOf => cfg.models.cheat_of,
    }
}

/// Scores stored against the ground truth for one model.
#[derive(Debug, Clone)]
pub struct ModelScore {
    pub model: ModelSelect,
    pub report: MetricReport,
}

/// Evaluates every stored reconstruction against the ground truth over the
/// dynamic-region mask. Models without a stored reconstruction are skipped
/// with a warning on stderr; it is an error if none are found. Writes one
/// per-frame metrics CSV per model plus a mean/std summary table.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<Vec<ModelScore>> {
    cfg.validate()?;
    let arts = Artifacts::for_config(cfg);
    let gt_path = require(arts.ground_truth(), "ground-truth sequence (run `simulate` first)")?;
    let dm_path = require(arts.dynamic_mask(), "dynamic-region mask (run `simulate` first)")?;
    let gt = ImageSequence::load(&gt_path)?;
    let dyn_mask = load_bool_mask(&dm_path)?;

    let mut scores = Vec::new();
    for model in ModelSelect::ALL {
        let path = arts.recon(model);
        if !path.is_file() {
            eprintln!(
                "warning: no reconstruction for {} at {}; skipping",
                model.label(),
                path.display()
            );
            continue;
        }
        let rec = ImageSequence::load(&path)?;
        let report = evaluate_pair(&gt, &rec, &dyn_mask)?;
        atomic_write(&arts.metrics(model), metrics_csv(&report).as_bytes())?;
        scores.push(ModelScore { model, report });
    }
    if scores.is_empty() {
        return Err(Error::MissingArtifact {
            path: arts.recon(ModelSelect::Fw),
            what: "no reconstructions to evaluate (run `reconstruct` first)".to_string(),
        });
    }
    atomic_write(&arts.summary(), summary_csv(&scores).as_bytes())?;
    Ok(scores)
}

/// Mean/std summary over models: one PSNR row and one SSIM row per model.
pub fn summary_csv(scores: &[ModelScore]) -> String {
    let mut out = String::from("model,metric,mean,std\n");
    for s in scores {
        out.push_str(&format!(
            "{},psnr_db,{:e},{:e}\n",
            s.model.tag(),
            s.report.mean_psnr,
            s.report.std_psnr
        ));
    }
    for s in scores {
        out.push_str(&format!(
            "{},ssim,{:e},{:e}\n",
            s.model.tag(),
            s.report.mean_ssim,
            s.report.std_ssim
        ));
    }
    out
}

/// One evaluated sweep point: the sampled parameters and its scores.
#[derive(Debug, Clone)]
pub struct SweepRow {
    /// Evaluation order (0 is always the configured defaults).
    pub point: usize,
    pub params: ModelParams,
    pub sigma: f64,
    pub mean_psnr: f64,
    pub std_psnr: f64,
    pub mean_ssim: f64,
    pub std_ssim: f64,
}

/// Leaderboard of one model's random search, best mean PSNR first.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub model: ModelSelect,
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    pub fn best(&self) -> &SweepRow {
        &self.rows[0]
    }
}

fn sample_log_uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0].ln()..range[1].ln()).exp()
    } else {
        range[0]
    }
}

fn sample_linear(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Random-searches one model's regularization weights, Huber widths, and
/// outer smoothing over the configured ranges. Weights and widths are drawn
/// log-uniformly, sigma linearly; the configured per-model defaults are
/// always evaluated as point 0, so the search can only improve on them.
/// Results are written as a leaderboard CSV sorted by mean PSNR (descending)
/// and returned in the same order. Deterministic for a fixed config.
pub fn sweep(cfg: &ExperimentConfig, model: ModelSelect) -> Result<SweepOutcome> {
    cfg.validate()?;
    let arts = Artifacts::for_config(cfg);
    let inputs = load_recon_inputs(&arts)?;
    let kind = model_kind(&arts, model)?;
    let gt_path = require(arts.ground_truth(), "ground-truth sequence (run `simulate` first)")?;
    let dm_path = require(arts.dynamic_mask(), "dynamic-region mask (run `simulate` first)")?;
    let gt = ImageSequence::load(&gt_path)?;
    let dyn_mask = load_bool_mask(&dm_path)?;

    // Decorrelate the four models' draws while keeping each deterministic.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sweep.seed.wrapping_add(model.index()));
    let base = model_params(cfg, model);
    let sw = &cfg.sweep;

    let mut points = vec![(base, cfg.solver.sigma)];
    for _ in 1..sw.budget {
        let params = ModelParams {
            alpha1: sample_log_uniform(&mut rng, sw.alpha1),
            alpha2: sample_log_uniform(&mut rng, sw.alpha2),
            alpha3: sample_log_uniform(&mut rng, sw.alpha3),
            eps1: sample_log_uniform(&mut rng, sw.eps1),
            eps2: sample_log_uniform(&mut rng, sw.eps2),
            eps3: sample_log_uniform(&mut rng, sw.eps3),
            flow_mode: base.flow_mode,
        };
        let sigma = sample_linear(&mut rng, sw.sigma);
        points.push((params, sigma));
    }

    let mut rows = Vec::with_capacity(points.len());
    for (point, (params, sigma)) in points.into_iter().enumerate() {
        let sp = SolverParams { sigma, ..cfg.solver };
        let rec = reconstruct(&inputs.y, &inputs.system, &kind, &params, &sp)?;
        let report = evaluate_pair(&gt, &rec.rho, &dyn_mask)?;
        rows.push(SweepRow {
            point,
            params,
            sigma,
            mean_psnr: report.mean_psnr,
            std_psnr: report.std_psnr,
            mean_ssim: report.mean_ssim,
            std_ssim: report.std_ssim,
        });
    }
    // Best first; ties broken by evaluation order for a stable leaderboard.
    rows.sort_by(|a, b| {
        b.mean_psnr.total_cmp(&a.mean_psnr).then(a.point.cmp(&b.point))
    });
    let outcome = SweepOutcome { model, rows };
    atomic_write(&arts.sweep_leaderboard(model), sweep_csv(&outcome).as_bytes())?;
    Ok(outcome)
}

/// Leaderboard CSV: one row per evaluated point, best mean PSNR first.
pub fn sweep_csv(outcome: &SweepOutcome) -> String {
    let mut out = String::from(
        "rank,point,alpha1,alpha2,alpha3,eps1,eps2,eps3,sigma,psnr_mean,psnr_std,ssim_mean,ssim_std\n",
    );
    for (rank, r) in outcome.rows.iter().enumerate() {
        let p = &r.params;
        out.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            rank,
            r.point,
            p.alpha1,
            p.alpha2,
            p.alpha3,
            p.eps1,
            p.eps2,
            p.eps3,
            r.sigma,
            r.mean_psnr,
            r.std_psnr,
            r.mean_ssim,
            r.std_ssim
        ));
    }
    out
}
