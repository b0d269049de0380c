//! Acceptance suite: ten numbered criteria covering operator correctness,
//! solver behavior, data generation, metrics, and the end-to-end model
//! comparison. Each criterion is one test whose pass/fail line appears in
//! the harness output; on success it also prints a one-line summary with
//! the measured numbers (visible with `--nocapture`).
//!
//! The tests share one process-wide lock so that timing-pinned criteria
//! are never distorted by parallel test threads, and criteria 4-6 share a
//! single parameter sweep.

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use ndarray::{Array2, Array3, Array4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cineflow::config::ExperimentConfig;
use cineflow::diffops::{self, StencilKind};
use cineflow::grid::{ImageSequence, KSpaceData, SamplingMask, VelocityField};
use cineflow::metrics;
use cineflow::motion::{flow_residual, rho_jacobian_adjoint, v_jacobian_adjoint, v_jacobian_apply, FlowResidual};
use cineflow::mri::{make_mask, Accel, MriSystem};
use cineflow::objective::{grad_rho, grad_v, objective_value, ModelParams};
use cineflow::pipeline::{self, ModelSelect};
use cineflow::simdata::{
    advect, flow_fit_energy, make_coil_maps, make_phantom_frame0, make_velocity_field,
    synthesize_measurements, MotionPattern, NoiseSpec, PhantomSpec,
};
use cineflow::solver::{reconstruct, trace_to_csv, ModelKind, SolverParams};
use cineflow::FlowMode;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_seq(r: &mut ChaCha8Rng, nt: usize, nx: usize, ny: usize) -> ImageSequence {
    ImageSequence::new(Array3::from_shape_fn((nt, nx, ny), |_| {
        Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
    }))
    .unwrap()
}

fn random_velocity(r: &mut ChaCha8Rng, nt: usize, nx: usize, ny: usize) -> VelocityField {
    let comp = |r: &mut ChaCha8Rng| {
        ImageSequence::new(Array3::from_shape_fn((nt, nx, ny), |_| {
            Complex64::new(r.random_range(-0.4..0.4), r.random_range(-0.4..0.4))
        }))
        .unwrap()
    };
    let vx = comp(r);
    let vy = comp(r);
    VelocityField::new(vx, vy).unwrap()
}

/// Random k-space data supported on the mask's sampled rows only.
fn random_kspace(r: &mut ChaCha8Rng, mask: &SamplingMask, nc: usize, ny: usize) -> KSpaceData {
    let (nt, nx) = (mask.nt(), mask.nx_full());
    let mut samples = Array4::zeros((nt, nc, nx, ny));
    for t in 0..nt {
        for &row in mask.frame_rows(t) {
            for c in 0..nc {
                for j in 0..ny {
                    samples[[t, c, row, j]] =
                        Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                }
            }
        }
    }
    KSpaceData::new(samples, mask.clone()).unwrap()
}

fn dot_c3(a: &Array3<Complex64>, b: &Array3<Complex64>) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn dot_c4(a: &Array4<Complex64>, b: &Array4<Complex64>) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn dot_r3(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn seq_rel_err(a: &ImageSequence, b: &ImageSequence) -> f64 {
    let num: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.data().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

// ---------------------------------------------------------------------------
// Criterion 1: adjoint identities for every linear operator.
// ---------------------------------------------------------------------------

// [TRIVIAL] For each operator pair (A, A*): |<Ax, y> - <x, A*y>| must vanish
// to 1e-10 relative accuracy over at least 20 random instances per operator,
// on grids up to 4x8x8 with 2 coils, in under 10 seconds.
#[test]
fn criterion_01_operator_adjoint_identities() {
    let _g = serial();
    let started = Instant::now();
    let (nt, nx, ny, nc) = (4, 8, 8, 2);
    let tol = 1e-10;

    // Measurement operator, alternating full and undersampled masks.
    for seed in 0..20u64 {
        let mut r = rng(1_000 + seed);
        let mask = if seed % 2 == 0 {
            SamplingMask::full(nt, nx)
        } else {
            make_mask(nt, nx, Accel::FourX, 0.15, seed).unwrap()
        };
        let coils = make_coil_maps(nc, nx, ny, 2_000 + seed).unwrap();
        let system = MriSystem::new(coils, mask.clone()).unwrap();
        let rho = random_seq(&mut r, nt, nx, ny);
        let y = random_kspace(&mut r, &mask, nc, ny);
        let ax = system.forward(&rho).unwrap();
        let aty = system.adjoint(&y).unwrap();
        let lhs = dot_c4(ax.samples(), y.samples());
        let rhs = dot_c3(rho.data(), aty.data());
        let scale = lhs.norm().max(rhs.norm()).max(1.0);
        assert!(
            (lhs - rhs).norm() <= tol * scale,
            "measurement adjoint mismatch at seed {seed}: {lhs} vs {rhs}"
        );
    }

    // Difference stencils (real field; the complex case is the same code
    // applied to each part).
    let kinds = [
        StencilKind::ForwardTime,
        StencilKind::ForwardX,
        StencilKind::ForwardY,
        StencilKind::CentralX,
        StencilKind::CentralY,
    ];
    for kind in kinds {
        for seed in 0..20u64 {
            let mut r = rng(3_000 + seed);
            let u = Array3::from_shape_fn((nt, nx, ny), |_| r.random_range(-1.0f64..1.0));
            let w = Array3::from_shape_fn((nt, nx, ny), |_| r.random_range(-1.0f64..1.0));
            let lhs = dot_r3(&diffops::apply(kind, &u), &w);
            let rhs = dot_r3(&u, &diffops::apply_adjoint(kind, &w));
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            assert!(
                (lhs - rhs).abs() <= tol * scale,
                "{kind:?} adjoint mismatch at seed {seed}: {lhs} vs {rhs}"
            );
        }
    }

    // Flow-operator Jacobians in rho and in v. Both use the real pairing
    // over (r1, r2); the image/velocity side pairs real and imaginary
    // channels separately, i.e. the real part of the complex inner product.
    for seed in 0..20u64 {
        let mut r = rng(4_000 + seed);
        let v = random_velocity(&mut r, nt, nx, ny);
        let drho = random_seq(&mut r, nt, nx, ny);
        let w = FlowResidual {
            r1: Array3::from_shape_fn((nt, nx, ny), |_| r.random_range(-1.0f64..1.0)),
            r2: Array3::from_shape_fn((nt, nx, ny), |_| r.random_range(-1.0f64..1.0)),
        };
        // rho-Jacobian: the flow residual is linear in rho at fixed v.
        let jr = flow_residual(&drho, &v, FlowMode::Complex).unwrap();
        let lhs = dot_r3(&jr.r1, &w.r1) + dot_r3(&jr.r2, &w.r2);
        let adj = rho_jacobian_adjoint(&v, &w, FlowMode::Complex).unwrap();
        let rhs = dot_c3(adj.data(), drho.data()).re;
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        assert!(
            (lhs - rhs).abs() <= tol * scale,
            "rho-Jacobian adjoint mismatch at seed {seed}: {lhs} vs {rhs}"
        );

        // v-Jacobian at a random base image.
        let rho = random_seq(&mut r, nt, nx, ny);
        let dv = random_velocity(&mut r, nt, nx, ny);
        let jv = v_jacobian_apply(&rho, &dv, FlowMode::Complex).unwrap();
        let lhs = dot_r3(&jv.r1, &w.r1) + dot_r3(&jv.r2, &w.r2);
        let adj = v_jacobian_adjoint(&rho, &w, FlowMode::Complex).unwrap();
        let rhs = dot_c3(adj.vx().data(), dv.vx().data()).re
            + dot_c3(adj.vy().data(), dv.vy().data()).re;
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        assert!(
            (lhs - rhs).abs() <= tol * scale,
            "v-Jacobian adjoint mismatch at seed {seed}: {lhs} vs {rhs}"
        );
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 1 took {elapsed:.1}s, budget is 10s");
    println!(
        "criterion 01 PASS - adjoint identities to 1e-10 for measurement, 5 stencils, \
         and both flow Jacobians (20 instances each, {elapsed:.2}s)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: analytic gradients match central finite differences.
// ---------------------------------------------------------------------------

/// Smallest distance of any Huber site norm to its transition point; finite
/// difference probes need clearance from the curvature jump.
fn kink_clearance(
    rho: &ImageSequence,
    v: &VelocityField,
    p: &ModelParams,
) -> f64 {
    let mut min = f64::INFINITY;
    for ch in [rho.re(), rho.im()] {
        let gx = diffops::d_forward_x(&ch);
        let gy = diffops::d_forward_y(&ch);
        for (a, b) in gx.iter().zip(gy.iter()) {
            min = min.min((a.hypot(*b) - p.eps1).abs());
        }
    }
    for comp in [v.vx().re(), v.vy().re(), v.vx().im(), v.vy().im()] {
        let gx = diffops::d_forward_x(&comp);
        let gy = diffops::d_forward_y(&comp);
        for (a, b) in gx.iter().zip(gy.iter()) {
            min = min.min((a.hypot(*b) - p.eps2).abs());
        }
    }
    let res = flow_residual(rho, v, p.flow_mode).unwrap();
    for (a, b) in res.r1.iter().zip(res.r2.iter()) {
        min = min.min((a.hypot(*b) - p.eps3).abs());
    }
    min
}

fn bump_seq(base: &ImageSequence, idx: (usize, usize, usize), bump: Complex64) -> ImageSequence {
    let mut arr = base.data().clone();
    arr[idx] += bump;
    ImageSequence::new(arr).unwrap()
}

// [DERIVED] Both analytic gradients (in rho and in v) must match central
// finite differences of the full objective to 1e-5 relative accuracy on at
// least 20 coordinates each, probing only configurations with clearance from
// the Huber transition, in under 30 seconds.
#[test]
fn criterion_02_gradients_match_finite_differences() {
    let _g = serial();
    let started = Instant::now();
    let (nt, nx, ny, nc) = (2, 8, 6, 2);
    let params = ModelParams {
        alpha1: 0.3,
        alpha2: 0.2,
        alpha3: 0.5,
        eps1: 0.25,
        eps2: 0.3,
        eps3: 0.2,
        flow_mode: FlowMode::Complex,
    };

    // Resample until every Huber site is comfortably away from its kink.
    let (system, rho, v, y) = (0..)
        .map(|attempt| {
            let mut r = rng(5_000 + attempt);
            let mask = make_mask(nt, nx, Accel::FourX, 0.15, attempt).unwrap();
            let coils = make_coil_maps(nc, nx, ny, 6_000 + attempt).unwrap();
            let system = MriSystem::new(coils, mask.clone()).unwrap();
            let rho = random_seq(&mut r, nt, nx, ny);
            let v = random_velocity(&mut r, nt, nx, ny);
            let y = random_kspace(&mut r, &mask, nc, ny);
            (system, rho, v, y)
        })
        .take(50)
        .find(|(_, rho, v, _)| kink_clearance(rho, v, &params) > 1e-4)
        .expect("a kink-free draw exists");

    let h = 1e-6;
    let tol = 1e-5;

    let g_rho = grad_rho(&rho, &v, &y, &system, &params).unwrap();
    let mut r = rng(7_000);
    for k in 0..20 {
        let idx = (r.random_range(0..nt), r.random_range(0..nx), r.random_range(0..ny));
        let real_part = r.random_range(0..2) == 0;
        let bump = if real_part { Complex64::new(h, 0.0) } else { Complex64::new(0.0, h) };
        let fp = objective_value(&bump_seq(&rho, idx, bump), &v, &y, &system, &params).unwrap();
        let fm = objective_value(&bump_seq(&rho, idx, -bump), &v, &y, &system, &params).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        let an = if real_part { g_rho.data()[idx].re } else { g_rho.data()[idx].im };
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-10);
        assert!(rel < tol, "rho coordinate {k} at {idx:?}: fd {fd} vs analytic {an} (rel {rel:e})");
    }

    let g_v = grad_v(&rho, &v, &params).unwrap();
    for k in 0..20 {
        let idx = (r.random_range(0..nt), r.random_range(0..nx), r.random_range(0..ny));
        let on_x = r.random_range(0..2) == 0;
        let real_part = r.random_range(0..2) == 0;
        let bump = if real_part { Complex64::new(h, 0.0) } else { Complex64::new(0.0, h) };
        let perturb = |sign: f64| {
            let (vx, vy) = if on_x {
                (bump_seq(v.vx(), idx, sign * bump), v.vy().clone())
            } else {
                (v.vx().clone(), bump_seq(v.vy(), idx, sign * bump))
            };
            VelocityField::new(vx, vy).unwrap()
        };
        let fp = objective_value(&rho, &perturb(1.0), &y, &system, &params).unwrap();
        let fm = objective_value(&rho, &perturb(-1.0), &y, &system, &params).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        let comp = if on_x { g_v.vx() } else { g_v.vy() };
        let an = if real_part { comp.data()[idx].re } else { comp.data()[idx].im };
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-10);
        assert!(rel < tol, "v coordinate {k} at {idx:?}: fd {fd} vs analytic {an} (rel {rel:e})");
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 2 took {elapsed:.1}s, budget is 30s");
    println!(
        "criterion 02 PASS - rho and v gradients match central differences to 1e-5 \
         on 20 coordinates each ({elapsed:.2}s)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: dense operator matrices and their adjoints.
// ---------------------------------------------------------------------------

// [DERIVED] On a 2x4x4 grid with one uniform coil and full sampling,
// materialize the measurement operator (complex-linear, 32x32) and the flow
// operator at a fixed velocity (real-linear, 64x64 over stacked channels) by
// probing unit basis vectors. Operator outputs must match dense
// matrix-vector products on random inputs, and the adjoint routines must
// match the conjugate transpose / transpose entrywise, all to 1e-10.
#[test]
fn criterion_03_dense_matrices_match_adjoints() {
    let _g = serial();
    let (nt, nx, ny) = (2usize, 4usize, 4usize);
    let n = nt * nx * ny;
    let tol = 1e-10;

    let mask = SamplingMask::full(nt, nx);
    let coils = make_coil_maps(1, nx, ny, 0).unwrap();
    let system = MriSystem::new(coils, mask.clone()).unwrap();

    // Forward matrix: column k = A e_k (single coil, full mask: m = n).
    let mut a = vec![vec![Complex64::ZERO; n]; n];
    for k in 0..n {
        let mut e = Array3::zeros((nt, nx, ny));
        e.as_slice_mut().unwrap()[k] = Complex64::new(1.0, 0.0);
        let out = system.forward(&ImageSequence::new(e).unwrap()).unwrap();
        for (row, z) in out.samples().iter().enumerate() {
            a[row][k] = *z;
        }
    }
    // Adjoint matrix: column m = A* e_m.
    let mut a_adj = vec![vec![Complex64::ZERO; n]; n];
    for m in 0..n {
        let mut e = Array4::zeros((nt, 1, nx, ny));
        e.as_slice_mut().unwrap()[m] = Complex64::new(1.0, 0.0);
        let out = system.adjoint(&KSpaceData::new(e, mask.clone()).unwrap()).unwrap();
        for (row, z) in out.data().iter().enumerate() {
            a_adj[row][m] = *z;
        }
    }
    for i in 0..n {
        for j in 0..n {
            let diff = (a_adj[i][j] - a[j][i].conj()).norm();
            assert!(diff <= tol, "A* [{i}][{j}] differs from conj(A[{j}][{i}]) by {diff:e}");
        }
    }
    // The operator applied to random vectors must equal the dense
    // matrix-vector product (this is what certifies linearity).
    let mut r = rng(8_100);
    for _ in 0..5 {
        let x = random_seq(&mut r, nt, nx, ny);
        let out = system.forward(&x).unwrap();
        let xs: Vec<Complex64> = x.data().iter().copied().collect();
        for (row, z) in out.samples().iter().enumerate() {
            let dense: Complex64 = (0..n).map(|k| a[row][k] * xs[k]).sum();
            assert!(
                (z - dense).norm() <= tol * dense.norm().max(1.0),
                "forward row {row}: operator {z} vs dense {dense}"
            );
        }
        let y = random_kspace(&mut r, &mask, 1, ny);
        let out = system.adjoint(&y).unwrap();
        let ys: Vec<Complex64> = y.samples().iter().copied().collect();
        for (row, z) in out.data().iter().enumerate() {
            let dense: Complex64 = (0..n).map(|m| a_adj[row][m] * ys[m]).sum();
            assert!(
                (z - dense).norm() <= tol * dense.norm().max(1.0),
                "adjoint row {row}: operator {z} vs dense {dense}"
            );
        }
    }

    // Flow operator at a fixed random velocity: real-linear on the stacked
    // channels (rho1; rho2), outputs the stacked residuals (r1; r2).
    let mut r = rng(8_000);
    let v = random_velocity(&mut r, nt, nx, ny);
    let dim = 2 * n;
    let mut m_mat = vec![vec![0.0f64; dim]; dim];
    for ch in 0..2 {
        for k in 0..n {
            let mut e = Array3::zeros((nt, nx, ny));
            e.as_slice_mut().unwrap()[k] =
                if ch == 0 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 1.0) };
            let res = flow_residual(&ImageSequence::new(e).unwrap(), &v, FlowMode::Complex).unwrap();
            let col = ch * n + k;
            for (row, x) in res.r1.iter().chain(res.r2.iter()).enumerate() {
                m_mat[row][col] = *x;
            }
        }
    }
    let mut m_adj = vec![vec![0.0f64; dim]; dim];
    for cw in 0..2 {
        for k in 0..n {
            let mut r1 = Array3::zeros((nt, nx, ny));
            let mut r2 = Array3::zeros((nt, nx, ny));
            if cw == 0 {
                r1.as_slice_mut().unwrap()[k] = 1.0;
            } else {
                r2.as_slice_mut().unwrap()[k] = 1.0;
            }
            let g = rho_jacobian_adjoint(&v, &FlowResidual { r1, r2 }, FlowMode::Complex).unwrap();
            let col = cw * n + k;
            for (row, x) in g.re().iter().chain(g.im().iter()).enumerate() {
                m_adj[row][col] = *x;
            }
        }
    }
    for i in 0..dim {
        for j in 0..dim {
            let diff = (m_adj[i][j] - m_mat[j][i]).abs();
            assert!(diff <= tol, "M* [{i}][{j}] differs from M[{j}][{i}] by {diff:e}");
        }
    }
    // Flow operator on random images must equal the dense product over the
    // stacked channels.
    for _ in 0..5 {
        let x = random_seq(&mut r, nt, nx, ny);
        let res = flow_residual(&x, &v, FlowMode::Complex).unwrap();
        let stacked: Vec<f64> = x
            .re()
            .iter()
            .copied()
            .chain(x.im().iter().copied())
            .collect();
        for (row, got) in res.r1.iter().chain(res.r2.iter()).enumerate() {
            let dense: f64 = (0..dim).map(|k| m_mat[row][k] * stacked[k]).sum();
            assert!(
                (got - dense).abs() <= tol * dense.abs().max(1.0),
                "flow row {row}: operator {got} vs dense {dense}"
            );
        }
    }

    // Sanity on the probing itself: the flow operator must be genuinely
    // nonzero, otherwise the transpose identity is vacuous.
    let frob: f64 = m_mat.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    assert!(frob > 1.0, "flow operator matrix is unexpectedly small: {frob}");

    println!(
        "criterion 03 PASS - operators match dense 32x32 measurement and 64x64 flow \
         matrix products on random vectors, and adjoints match the (conjugate) \
         transposes entrywise, all to 1e-10"
    );
}

// ---------------------------------------------------------------------------
// Criteria 4-6: model comparison through the shared parameter sweep.
// ---------------------------------------------------------------------------

struct SweepSummary {
    /// Best mean PSNR per model, indexed like `ModelSelect::ALL`.
    best: [f64; 4],
    budget: usize,
    elapsed: f64,
}

static SWEEP: OnceLock<SweepSummary> = OnceLock::new();

/// Runs the default experiment end to end once: simulate, then a full
/// random search per model, keeping each model's best mean PSNR over the
/// dynamic-region mask.
fn shared_sweep() -> &'static SweepSummary {
    SWEEP.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.output.dir = dir.path().to_path_buf();
        let started = Instant::now();
        pipeline::simulate(&cfg).unwrap();
        let mut best = [0.0; 4];
        for (slot, model) in best.iter_mut().zip(ModelSelect::ALL) {
            let outcome = pipeline::sweep(&cfg, model).unwrap();
            *slot = outcome.best().mean_psnr;
        }
        SweepSummary { best, budget: cfg.sweep.budget, elapsed: started.elapsed().as_secs_f64() }
    })
}

// [DERIVED] On the default experiment (48x48, 8 frames, contraction phantom,
// 8 coils, 4x undersampling), with at least 20 swept parameter points per
// model, the best-per-model masked PSNRs must order as OF > DT > FW with
// OF - DT >= 1 dB and OF - FW >= 3 dB, and the whole comparison must finish
// within 30 minutes.
#[test]
fn criterion_04_joint_model_beats_reduced_models() {
    let _g = serial();
    let s = shared_sweep();
    let [fw, dt, of, _] = s.best;
    assert!(s.budget >= 20, "sweep budget {} is below 20 points per model", s.budget);
    assert!(
        s.elapsed <= 1_800.0,
        "model comparison took {:.0}s, budget is 1800s",
        s.elapsed
    );
    assert!(of > dt && dt > fw, "expected OF > DT > FW, got OF {of:.2}, DT {dt:.2}, FW {fw:.2}");
    assert!(of - dt >= 1.0, "OF - DT = {:.2} dB, need >= 1", of - dt);
    assert!(of - fw >= 3.0, "OF - FW = {:.2} dB, need >= 3", of - fw);
    println!(
        "criterion 04 PASS - OF {of:.2} dB > DT {dt:.2} dB > FW {fw:.2} dB \
         (OF-DT {:.2}, OF-FW {:.2}; {} points/model, {:.0}s)",
        of - dt,
        of - fw,
        s.budget,
        s.elapsed
    );
}

// [DERIVED] Fixing the velocities at their ground-truth values (the cheat
// model) must score within [-0.3, +1.5] dB of the joint model: slightly
// better because it is given the answer, but not wildly so.
#[test]
fn criterion_05_ground_truth_velocities_give_modest_edge() {
    let _g = serial();
    let s = shared_sweep();
    let [_, _, of, cheat] = s.best;
    let gap = cheat - of;
    assert!(
        (-0.3..=1.5).contains(&gap),
        "Cheat-OF - OF = {gap:.2} dB, expected within [-0.3, 1.5]"
    );
    println!(
        "criterion 05 PASS - Cheat-OF {cheat:.2} dB vs OF {of:.2} dB (gap {gap:+.2} dB in [-0.3, 1.5])"
    );
}

// [DERIVED] The temporal-difference model must beat the frame-wise baseline
// by at least 2 dB: temporal structure is load-bearing even without motion.
#[test]
fn criterion_06_temporal_coupling_beats_framewise() {
    let _g = serial();
    let s = shared_sweep();
    let [fw, dt, _, _] = s.best;
    assert!(dt - fw >= 2.0, "DT - FW = {:.2} dB, need >= 2", dt - fw);
    println!("criterion 06 PASS - DT {dt:.2} dB vs FW {fw:.2} dB (gap {:.2} dB >= 2)", dt - fw);
}

// ---------------------------------------------------------------------------
// Criterion 7: advection consistency and substep convergence.
// ---------------------------------------------------------------------------

fn gaussian_blob(nt: usize, nx: usize, ny: usize, sigma: f64) -> ImageSequence {
    let (cx, cy) = (nx as f64 / 2.0, ny as f64 / 2.0);
    ImageSequence::new(Array3::from_shape_fn((nt, nx, ny), |(_, i, j)| {
        let d2 = (i as f64 - cx).powi(2) + (j as f64 - cy).powi(2);
        let mag = (-d2 / (2.0 * sigma * sigma)).exp();
        let phase = 0.4 * (i as f64 + j as f64) / nx as f64;
        Complex64::from_polar(mag, phase)
    }))
    .unwrap()
}

// [DERIVED] A sequence advected with 32 substeps per frame must fit its
// generating velocity at least 10x better (in flow-residual energy over the
// interior frames) than the zero field, and the advection must converge at
// first order: against a 256-substep reference, the sup-norm error must
// shrink by a factor of at least 0.6 under each substep doubling.
#[test]
fn criterion_07_advection_prefers_generator_and_converges() {
    let _g = serial();

    let frame0 = gaussian_blob(1, 32, 32, 5.0);
    let dims = (6, 32, 32);
    let v_gen = make_velocity_field(dims, &MotionPattern::Translation { vx: 0.3, vy: 0.1 }, 0).unwrap();
    let v_zero = VelocityField::zeros(dims.0, dims.1, dims.2).unwrap();
    let rho = advect(&frame0, &v_gen, 32).unwrap();
    let eps = 1e-2;
    let e_gen = flow_fit_energy(&rho, &v_gen, eps, FlowMode::Complex).unwrap();
    let e_zero = flow_fit_energy(&rho, &v_zero, eps, FlowMode::Complex).unwrap();
    assert!(
        10.0 * e_gen <= e_zero,
        "generating velocity fits only {:.1}x better (need >= 10x)",
        e_zero / e_gen
    );

    let frame0 = gaussian_blob(1, 24, 24, 4.0);
    let dims = (5, 24, 24);
    let v = make_velocity_field(dims, &MotionPattern::Contraction { amplitude: 0.5 }, 9).unwrap();
    let reference = advect(&frame0, &v, 256).unwrap();
    let sup_err = |s: usize| -> f64 {
        let rho_s = advect(&frame0, &v, s).unwrap();
        rho_s
            .data()
            .iter()
            .zip(reference.data().iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    };
    let errs: Vec<f64> = [1usize, 2, 4, 8].iter().map(|&s| sup_err(s)).collect();
    let mut ratios = Vec::new();
    for w in errs.windows(2) {
        let ratio = w[1] / w[0];
        ratios.push(ratio);
        assert!(
            ratio <= 0.6,
            "substep doubling shrank the error only by {ratio:.3} (need <= 0.6): {errs:?}"
        );
    }

    println!(
        "criterion 07 PASS - generator fits {:.0}x better than zero velocity at 32 substeps; \
         doubling ratios {:?} all <= 0.6",
        e_zero / e_gen,
        ratios.iter().map(|r| (r * 1e3).round() / 1e3).collect::<Vec<_>>()
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: the undersampling mask contract, exhaustively.
// ---------------------------------------------------------------------------

// [TRIVIAL] For every grid size in {32, 48, 64, 128}, frame count in
// {4, 8, 16}, and ten seeds: exactly round(N/4) rows per frame; an
// always-sampled central block of the documented width (0.15 N, adjusted to
// keep the outer row count even); equally many outer rows on each side; and
// outer rows that are disjoint between consecutive frames.
#[test]
fn criterion_08_sampling_mask_contract() {
    let _g = serial();
    let central_frac = 0.15;
    let expected_central = [(32usize, 4usize), (48, 8), (64, 10), (128, 20)];

    for &(nx, central) in &expected_central {
        let rows_per_frame = nx / 4;
        let lo = (nx - central) / 2;
        let hi = lo + central;
        for nt in [4usize, 8, 16] {
            for seed in 0..10u64 {
                let mask = make_mask(nt, nx, Accel::FourX, central_frac, seed).unwrap();
                let mut prev_outer: Option<Vec<usize>> = None;
                for t in 0..nt {
                    let rows = mask.frame_rows(t);
                    assert_eq!(
                        rows.len(),
                        rows_per_frame,
                        "nx {nx} nt {nt} seed {seed} frame {t}: {} rows",
                        rows.len()
                    );
                    assert!(
                        rows.windows(2).all(|w| w[0] < w[1]),
                        "rows not strictly ascending"
                    );
                    for r in lo..hi {
                        assert!(
                            rows.contains(&r),
                            "nx {nx} nt {nt} seed {seed} frame {t}: central row {r} missing"
                        );
                    }
                    let outer: Vec<usize> =
                        rows.iter().copied().filter(|&r| r < lo || r >= hi).collect();
                    let below = outer.iter().filter(|&&r| r < lo).count();
                    let above = outer.len() - below;
                    assert_eq!(
                        below, above,
                        "nx {nx} nt {nt} seed {seed} frame {t}: unbalanced outer rows"
                    );
                    if let Some(prev) = &prev_outer {
                        for r in &outer {
                            assert!(
                                !prev.contains(r),
                                "nx {nx} nt {nt} seed {seed} frame {t}: outer row {r} repeats \
                                 the previous frame"
                            );
                        }
                    }
                    prev_outer = Some(outer);
                }
            }
        }
    }
    println!(
        "criterion 08 PASS - 4x mask contract (row count, central block, balanced sides, \
         consecutive-frame disjointness) holds for all 12 geometries x 10 seeds"
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: image-quality metrics against independent oracles.
// ---------------------------------------------------------------------------

fn naive_data_range(gt: &ImageSequence) -> f64 {
    let mag = gt.magnitude();
    let max = mag.iter().cloned().fold(f64::MIN, f64::max);
    let min = mag.iter().cloned().fold(f64::MAX, f64::min);
    max - min
}

fn naive_psnr(gt: &ImageSequence, rec: &ImageSequence, mask: &Array2<bool>) -> Vec<f64> {
    let range = naive_data_range(gt);
    let (nt, nx, ny) = gt.dims();
    let (g, r) = (gt.magnitude(), rec.magnitude());
    (0..nt)
        .map(|t| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in 0..nx {
                for j in 0..ny {
                    if mask[[i, j]] {
                        sum += (g[[t, i, j]] - r[[t, i, j]]).powi(2);
                        count += 1;
                    }
                }
            }
            let mse = sum / count as f64;
            if mse == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (range * range / mse).log10()
            }
        })
        .collect()
}

/// Direct double-loop SSIM: uniform 7x7 windows fully inside the frame,
/// unbiased covariance normalization (49/48), averaged over masked window
/// centers.
fn naive_ssim(gt: &ImageSequence, rec: &ImageSequence, mask: &Array2<bool>) -> Vec<f64> {
    let range = naive_data_range(gt);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let (nt, nx, ny) = gt.dims();
    let (g, r) = (gt.magnitude(), rec.magnitude());
    let pad = 3usize;
    (0..nt)
        .map(|t| {
            let mut total = 0.0;
            let mut count = 0usize;
            for ci in pad..nx - pad {
                for cj in pad..ny - pad {
                    if !mask[[ci, cj]] {
                        continue;
                    }
                    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in ci - pad..=ci + pad {
                        for j in cj - pad..=cj + pad {
                            let (x, y) = (g[[t, i, j]], r[[t, i, j]]);
                            sx += x;
                            sy += y;
                            sxx += x * x;
                            syy += y * y;
                            sxy += x * y;
                        }
                    }
                    let n = 49.0;
                    let (mx, my) = (sx / n, sy / n);
                    let norm = n / (n - 1.0);
                    let vx = (sxx / n - mx * mx) * norm;
                    let vy = (syy / n - my * my) * norm;
                    let cxy = (sxy / n - mx * my) * norm;
                    total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
            total / count as f64
        })
        .collect()
}

// [DERIVED] Library PSNR and SSIM must match the independent double-loop
// oracles to 1e-8 on 50 random masked pairs; self-comparison must give SSIM
// exactly 1 and infinite PSNR; and a constructed uniform-error case (range
// exactly 1, error exactly 0.1) must score exactly 20 dB.
#[test]
fn criterion_09_metrics_match_oracles() {
    let _g = serial();
    let (nt, nx, ny) = (2usize, 16usize, 16usize);
    for seed in 0..50u64 {
        let mut r = rng(9_000 + seed);
        let gt = random_seq(&mut r, nt, nx, ny);
        let rec = random_seq(&mut r, nt, nx, ny);
        let mask = Array2::from_shape_fn((nx, ny), |_| r.random_range(0.0..1.0) < 0.7);
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let lib_psnr = metrics::psnr_masked(&gt, &rec, &mask).unwrap();
        let naive = naive_psnr(&gt, &rec, &mask);
        for (t, (a, b)) in lib_psnr.iter().zip(&naive).enumerate() {
            assert!((a - b).abs() <= 1e-8, "psnr seed {seed} frame {t}: {a} vs oracle {b}");
        }
        // The oracle averages over masked window centers; skip degenerate
        // masks with no center inside the valid region.
        let has_center = (3..nx - 3).any(|i| (3..ny - 3).any(|j| mask[[i, j]]));
        if has_center {
            let lib_ssim = metrics::ssim_masked(&gt, &rec, &mask).unwrap();
            let naive = naive_ssim(&gt, &rec, &mask);
            for (t, (a, b)) in lib_ssim.iter().zip(&naive).enumerate() {
                assert!((a - b).abs() <= 1e-8, "ssim seed {seed} frame {t}: {a} vs oracle {b}");
            }
        }
    }

    // Self-comparison: infinite PSNR, SSIM exactly 1.
    let mut r = rng(9_900);
    let gt = random_seq(&mut r, nt, nx, ny);
    let mask = Array2::from_elem((nx, ny), true);
    for p in metrics::psnr_masked(&gt, &gt, &mask).unwrap() {
        assert!(p.is_infinite());
    }
    for s in metrics::ssim_masked(&gt, &gt, &mask).unwrap() {
        assert_eq!(s, 1.0, "self-SSIM must be exactly 1");
    }

    // Constructed case: range exactly 1, uniform error 0.1 => exactly 20 dB.
    let mut arr = Array3::zeros((1, nx, ny));
    for i in 0..nx {
        for j in 0..ny {
            arr[[0, i, j]] = Complex64::new(1.0 + ((i * ny + j) % 7) as f64 / 14.0, 0.0);
        }
    }
    arr[[0, 0, 0]] = Complex64::new(1.0, 0.0);
    arr[[0, 0, 1]] = Complex64::new(2.0, 0.0);
    let gt = ImageSequence::new(arr.clone()).unwrap();
    arr.mapv_inplace(|z| z + Complex64::new(0.1, 0.0));
    let rec = ImageSequence::new(arr).unwrap();
    let p = metrics::psnr_masked(&gt, &rec, &mask).unwrap();
    assert!((p[0] - 20.0).abs() <= 1e-9, "uniform 0.1 error on unit range: {} dB", p[0]);

    println!(
        "criterion 09 PASS - PSNR/SSIM match independent oracles to 1e-8 on 50 pairs; \
         self-SSIM is exactly 1; the 20 dB construction is exact to 1e-9"
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: solver contract on an exactly solvable problem.
// ---------------------------------------------------------------------------

// [DERIVED] With no regularization, full sampling, one uniform coil, and no
// noise, the data term is an exact quadratic whose minimizer is the ground
// truth: the solver must recover it to 1e-8 relative error, stopping on the
// relative-change test well before its iteration budget, and a stationary
// initialization (zero data) must stop at the first iteration. [TRIVIAL]
// Every convex sub-solve of a joint run must exit at or below its entry
// objective (+1e-9), and rerunning must reproduce the trace CSV and the
// image bits exactly.
#[test]
fn criterion_10_solver_exactness_descent_determinism() {
    let _g = serial();

    // Exact quadratic recovery.
    let spec = PhantomSpec::new(3, 16, 16, 5).unwrap();
    let frame0 = make_phantom_frame0(&spec).unwrap();
    let v_gt = make_velocity_field((3, 16, 16), &MotionPattern::Translation { vx: 0.2, vy: -0.1 }, 1)
        .unwrap();
    let rho_gt = advect(&frame0, &v_gt, 4).unwrap();
    let system =
        MriSystem::new(make_coil_maps(1, 16, 16, 2).unwrap(), SamplingMask::full(3, 16)).unwrap();
    let y = system.forward(&rho_gt).unwrap();
    let mp = ModelParams { alpha1: 0.0, alpha2: 0.0, alpha3: 0.0, ..ModelParams::default() };
    let sp = SolverParams { sigma: 0.0, n_outer: 1, n_rho: 6_000, n_v: 1, delta: 1e-12 };
    let rec = reconstruct(&y, &system, &ModelKind::Fw, &mp, &sp).unwrap();
    let rel = seq_rel_err(&rec.rho, &rho_gt);
    assert!(rel <= 1e-8, "quadratic recovery error {rel:e} (need <= 1e-8)");
    let inner = rec.trace[0].inner_iters;
    assert!(
        inner < sp.n_rho,
        "solver exhausted its budget ({inner} iterations) instead of stopping early"
    );

    // Stationary initialization: with zero measurements the zero init is
    // already the minimizer, so the first sub-solve must stop immediately.
    let zero_y = KSpaceData::new(
        Array4::zeros((3, 1, 16, 16)),
        SamplingMask::full(3, 16),
    )
    .unwrap();
    let rec0 = reconstruct(&zero_y, &system, &ModelKind::Fw, &ModelParams::default(), &sp).unwrap();
    assert_eq!(
        rec0.trace[0].inner_iters, 1,
        "stationary initialization should stop at the first iteration"
    );
    assert!(
        rec0.rho.data().iter().all(|z| z.norm() == 0.0),
        "stationary solve moved away from the zero minimizer"
    );

    // Descent within every sub-solve of a joint solve: each convex
    // sub-solve must exit at or below the objective it entered with. (The
    // smoothing step between sub-solves may raise the objective, so the
    // comparison is entry-to-exit per sub-solve, not row-to-row.)
    let mask = make_mask(3, 16, Accel::FourX, 0.15, 3).unwrap();
    let system = MriSystem::new(make_coil_maps(2, 16, 16, 4).unwrap(), mask).unwrap();
    let y = synthesize_measurements(&rho_gt, &system, &NoiseSpec::new(0.01, 6).unwrap()).unwrap();
    let mp = ModelParams::default();
    let sp = SolverParams { sigma: 0.5, n_outer: 5, n_rho: 40, n_v: 60, delta: 1e-10 };
    let rec1 = reconstruct(&y, &system, &ModelKind::Of, &mp, &sp).unwrap();
    assert!(rec1.trace.len() >= 2, "joint solve produced no alternation trace");
    for row in &rec1.trace {
        assert!(
            row.f_value <= row.f_start + 1e-9,
            "{} sub-solve at outer iteration {} increased the objective: {} -> {}",
            row.subproblem,
            row.outer_iter,
            row.f_start,
            row.f_value
        );
    }

    // Bitwise deterministic rerun, including the trace CSV.
    let rec2 = reconstruct(&y, &system, &ModelKind::Of, &mp, &sp).unwrap();
    assert_eq!(rec1.rho.data(), rec2.rho.data(), "reconstruction differs across reruns");
    let csv1 = trace_to_csv(&rec1.trace);
    let csv2 = trace_to_csv(&rec2.trace);
    assert_eq!(csv1.as_bytes(), csv2.as_bytes(), "trace CSV differs across reruns");

    println!(
        "criterion 10 PASS - quadratic recovery to {rel:.1e} with early stop \
         ({inner} of 6000 iterations), immediate stop at a stationary init, \
         per-sub-solve descent over {} sub-solves, bit-identical rerun trace",
        rec1.trace.len()
    );
}
