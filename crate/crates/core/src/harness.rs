//! Subcommand runners behind the `diffeo` binary.
//!
//! Each runner reads its inputs, does the work, and writes a fixed set of
//! artifacts into the output directory (created if missing). All writes are
//! atomic and all text output uses stable shortest-roundtrip float
//! formatting, so a rerun with the same config and seed reproduces every
//! file byte for byte.
//!
//! Grids carried by input files are authoritative; the `[grid]` section only
//! shapes commands that generate their own domain (`selfcheck`,
//! `landmarks`).

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::bvp::{self, BvpProblem, GeodesicResult, SolveOptions};
use crate::config::{Command, KernelChoice, RunConfig};
use crate::error::{Error, Result};
use crate::flow::{self, Diffeo, FlowOptions, InvertMethod, TimeVelocity};
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::interp::{self, SampleMode};
use crate::io::{self, fmt_f64};
use crate::matching::{
    gram_eig_range, hamiltonian, kernel_velocity, landmark_match, landmark_shoot, karcher_mean,
    register_images, Kernel, LandmarkState, RegistrationProblem,
};
use crate::rng::{self, Stream};
use crate::spectral::{self, MetricSpec, SpectralOp};
use crate::testgen;

/// Executes one subcommand. Artifacts land in `cfg.out`; the caller maps the
/// error (if any) to an exit code.
pub fn run(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    match cfg.command {
        Command::Flow => run_flow(cfg),
        Command::Distance => run_distance(cfg),
        Command::Register => run_register(cfg),
        Command::Karcher => run_karcher(cfg),
        Command::Landmarks => run_landmarks(cfg),
        Command::Selfcheck => run_selfcheck(cfg),
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| Error::InvalidInput(what.into()))
}

fn write_summary(out: &Path, header: &str, row: &[String]) -> Result<()> {
    let mut s = String::with_capacity(128);
    s.push_str(header);
    s.push('\n');
    s.push_str(&row.join(","));
    s.push('\n');
    io::atomic_write(&out.join("summary.csv"), s.as_bytes())
}

fn write_trace(out: &Path, g: &GeodesicResult) -> Result<()> {
    let mut s = String::from("stage,iter,objective\n");
    for row in &g.trace {
        let _ = writeln!(s, "{},{},{}", row.stage, row.iter, fmt_f64(row.objective));
    }
    io::atomic_write(&out.join("trace.csv"), s.as_bytes())
}

fn sup_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
}

fn sup_abs_vec(u: &VectorField) -> f64 {
    (0..u.grid().dim()).map(|a| sup_abs(u.component(a))).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- flow

fn run_flow(cfg: &RunConfig) -> Result<()> {
    let path = require(&cfg.inputs.velocity, "flow needs io.velocity (a .tvel file)")?;
    let u = io::read_time_velocity(path)?;
    let phi = flow::integrate_flow(&u, cfg.flow_time, &cfg.flow)?;
    io::write_diffeo(&cfg.out.join("diffeo.sgf"), &phi)?;
    let sup = sup_abs_vec(phi.displacement());
    write_summary(
        &cfg.out,
        "command,t,min_det,sup_displacement",
        &[
            "flow".into(),
            fmt_f64(cfg.flow_time),
            fmt_f64(phi.min_det()),
            fmt_f64(sup),
        ],
    )
}

// ------------------------------------------------------------ distance

fn run_distance(cfg: &RunConfig) -> Result<()> {
    let target_path = require(&cfg.inputs.target, "distance needs io.target (a diffeo .sgf)")?;
    let target = io::read_diffeo(target_path)?;
    let start = match &cfg.inputs.start {
        Some(p) => io::read_diffeo(p)?,
        None => Diffeo::identity(target.grid()),
    };
    let metric = cfg.metric_on(target.grid())?;
    let report = bvp::distance_estimate(&start, &target, &metric, &cfg.solve, cfg.seed)?;
    let g = &report.geodesic;
    io::write_time_velocity(&cfg.out.join("velocity.tvel"), &g.velocity)?;
    write_trace(&cfg.out, g)?;
    write_summary(
        &cfg.out,
        "command,distance,energy,length,residual,iterations,converged",
        &[
            "distance".into(),
            fmt_f64(report.distance),
            fmt_f64(g.energy),
            fmt_f64(g.length),
            fmt_f64(g.endpoint_residual),
            g.iterations.to_string(),
            g.converged.to_string(),
        ],
    )?;
    if !g.converged {
        return Err(Error::NoConvergence(format!(
            "endpoint residual {} above tolerance {}",
            fmt_f64(g.endpoint_residual),
            fmt_f64(cfg.solve.residual_tol)
        )));
    }
    Ok(())
}

// ------------------------------------------------------------ register

fn run_register(cfg: &RunConfig) -> Result<()> {
    let source_path = require(&cfg.inputs.source, "register needs io.source (a scalar .sgf)")?;
    let target_path = require(&cfg.inputs.target, "register needs io.target (a scalar .sgf)")?;
    let source = io::read_scalar_field(source_path)?;
    let target = io::read_scalar_field(target_path)?;
    let metric = cfg.metric_on(source.grid())?;
    let mut problem = RegistrationProblem::new(source, target, metric)?;
    problem.options = cfg.solve.clone();
    problem.similarity_weight = cfg.similarity_weight;
    problem.mismatch_tol = cfg.mismatch_tol;
    let res = register_images(&problem, cfg.seed)?;
    io::write_scalar_field(&cfg.out.join("warped.sgf"), &res.warped)?;
    io::write_time_velocity(&cfg.out.join("velocity.tvel"), &res.geodesic.velocity)?;
    write_trace(&cfg.out, &res.geodesic)?;
    write_summary(
        &cfg.out,
        "command,initial_mismatch,final_mismatch,similarity_weight,min_det,energy,objective,iterations,converged",
        &[
            "register".into(),
            fmt_f64(res.initial_mismatch),
            fmt_f64(res.final_mismatch),
            fmt_f64(res.similarity_weight),
            fmt_f64(res.min_det),
            fmt_f64(res.geodesic.energy),
            fmt_f64(res.objective),
            res.geodesic.iterations.to_string(),
            res.geodesic.converged.to_string(),
        ],
    )?;
    if !res.geodesic.converged {
        return Err(Error::NoConvergence(format!(
            "final mismatch {} above {} of initial {}",
            fmt_f64(res.final_mismatch),
            fmt_f64(cfg.mismatch_tol),
            fmt_f64(res.initial_mismatch)
        )));
    }
    Ok(())
}

// ------------------------------------------------------------- karcher

fn run_karcher(cfg: &RunConfig) -> Result<()> {
    if cfg.inputs.images.is_empty() {
        return Err(Error::InvalidInput(
            "karcher needs io.images (comma-separated scalar .sgf list)".into(),
        ));
    }
    let mut images = Vec::with_capacity(cfg.inputs.images.len());
    for p in &cfg.inputs.images {
        images.push(io::read_scalar_field(p)?);
    }
    let reference = match &cfg.inputs.reference {
        Some(p) => io::read_scalar_field(p)?,
        None => images[0].clone(),
    };
    let metric = cfg.metric_on(images[0].grid())?;
    let report = karcher_mean(&images, &reference, &metric, &cfg.karcher_config(), cfg.seed)?;

    io::write_scalar_field(&cfg.out.join("mean.sgf"), &report.mean)?;

    let mut s = String::from("image,distance\n");
    for (i, d) in report.distances.iter().enumerate() {
        let _ = writeln!(s, "{},{}", i, fmt_f64(*d));
    }
    io::atomic_write(&cfg.out.join("distances.csv"), s.as_bytes())?;

    let mut s = String::from("sweep,total_sq\n");
    for (i, t) in report.sweep_history.iter().enumerate() {
        let _ = writeln!(s, "{},{}", i, fmt_f64(*t));
    }
    io::atomic_write(&cfg.out.join("sweeps.csv"), s.as_bytes())?;

    write_summary(
        &cfg.out,
        "command,images,total_sq,sweeps,converged",
        &[
            "karcher".into(),
            images.len().to_string(),
            fmt_f64(report.total_sq),
            report.sweeps.to_string(),
            report.all_registrations_converged.to_string(),
        ],
    )?;
    if !report.all_registrations_converged {
        return Err(Error::NoConvergence(
            "one or more registrations to the mean did not converge".into(),
        ));
    }
    Ok(())
}

// ----------------------------------------------------------- landmarks

fn run_landmarks(cfg: &RunConfig) -> Result<()> {
    let sp = require(&cfg.inputs.source_landmarks, "landmarks needs io.source_landmarks (csv)")?;
    let tp = require(&cfg.inputs.target_landmarks, "landmarks needs io.target_landmarks (csv)")?;
    let source = io::parse_landmarks(&fs::read(sp)?)?;
    let target = io::parse_landmarks(&fs::read(tp)?)?;
    if source.dim != target.dim {
        return Err(Error::InvalidInput(format!(
            "landmark dimensions differ: source {}, target {}",
            source.dim, target.dim
        )));
    }
    if source.positions.len() != target.positions.len() {
        return Err(Error::InvalidInput(format!(
            "landmark counts differ: source {}, target {}",
            source.positions.len(),
            target.positions.len()
        )));
    }
    let grid = &cfg.grid;
    if grid.dim() != source.dim {
        return Err(Error::InvalidInput(format!(
            "landmark dimension {} does not match the {}d grid",
            source.dim,
            grid.dim()
        )));
    }
    let kernel = match cfg.landmarks.kernel {
        KernelChoice::Gaussian => Kernel::gaussian(grid, cfg.landmarks.sigma)?,
        KernelChoice::Sobolev => Kernel::sobolev(&cfg.metric()?),
    };
    let res = landmark_match(
        &kernel,
        grid.lengths(),
        &source.positions,
        &target.positions,
        &cfg.landmarks.matching,
    )?;

    io::write_landmarks(
        &cfg.out.join("momenta.csv"),
        source.dim,
        res.initial.positions(),
        Some(res.initial.momenta()),
    )?;

    let steps = res.trajectory.len() - 1;
    let mut s = String::from(if source.dim == 1 { "t,id,x1\n" } else { "t,id,x1,x2\n" });
    for (j, state) in res.trajectory.iter().enumerate() {
        let t = j as f64 / steps.max(1) as f64;
        for (i, q) in state.positions().iter().enumerate() {
            let _ = write!(s, "{},{},{}", fmt_f64(t), i, fmt_f64(q[0]));
            if source.dim == 2 {
                let _ = write!(s, ",{}", fmt_f64(q[1]));
            }
            s.push('\n');
        }
    }
    io::atomic_write(&cfg.out.join("trajectory.csv"), s.as_bytes())?;

    write_summary(
        &cfg.out,
        "command,distance,endpoint_err,hamiltonian_drift,iterations,converged",
        &[
            "landmarks".into(),
            fmt_f64(res.distance),
            fmt_f64(res.endpoint_err),
            fmt_f64(res.hamiltonian_drift),
            res.iterations.to_string(),
            res.converged.to_string(),
        ],
    )?;
    if !res.converged {
        return Err(Error::NoConvergence(format!(
            "endpoint error {} above tolerance {}",
            fmt_f64(res.endpoint_err),
            fmt_f64(cfg.landmarks.matching.residual_tol)
        )));
    }
    Ok(())
}

// ----------------------------------------------------------- selfcheck

struct Check {
    name: &'static str,
    measured: f64,
    bound: f64,
    pass: bool,
}

impl Check {
    /// Invariant of the form `measured <= bound`.
    fn le(name: &'static str, measured: f64, bound: f64) -> Check {
        Check { name, measured, bound, pass: measured <= bound }
    }

    /// Invariant of the form `measured >= bound` (convergence orders).
    fn ge(name: &'static str, measured: f64, bound: f64) -> Check {
        Check { name, measured, bound, pass: measured >= bound }
    }
}

fn guard(name: &'static str, body: impl FnOnce() -> Result<Vec<Check>>) -> Vec<Check> {
    body().unwrap_or_else(|_| vec![Check { name, measured: f64::NAN, bound: 0.0, pass: false }])
}

/// Runs the invariant battery and writes `selfcheck.csv` + `summary.csv`.
/// Needs no input files; the battery builds its own fixtures from
/// `cfg.seed`. Any failed row turns into a nonzero exit.
fn run_selfcheck(cfg: &RunConfig) -> Result<()> {
    let checks = selfcheck_battery(cfg.seed)?;

    let mut s = String::from("name,measured,bound,pass\n");
    for c in &checks {
        let _ = writeln!(s, "{},{},{},{}", c.name, fmt_f64(c.measured), fmt_f64(c.bound), c.pass);
    }
    io::atomic_write(&cfg.out.join("selfcheck.csv"), s.as_bytes())?;

    let failures = checks.iter().filter(|c| !c.pass).count();
    write_summary(
        &cfg.out,
        "command,checks,failures",
        &["selfcheck".into(), checks.len().to_string(), failures.to_string()],
    )?;
    if failures > 0 {
        let names: Vec<&str> =
            checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        return Err(Error::NoConvergence(format!(
            "{failures} selfcheck invariant(s) failed: {}",
            names.join(" ")
        )));
    }
    Ok(())
}

fn selfcheck_battery(seed: u64) -> Result<Vec<Check>> {
    let mut r = rng::stream(seed, Stream::Selfcheck);
    let g1 = GridSpec::line(64, TAU)?;
    let g2 = GridSpec::square(16, TAU)?;
    let m1 = MetricSpec::new(&g1, 2.0)?;
    let m2 = MetricSpec::new(&g2, 2.5)?;
    let mut checks = Vec::new();

    // discrete Parseval: grid L2 norm equals multiplier-0 spectral norm
    for (name, grid) in [("parseval_1d", &g1), ("parseval_2d", &g2)] {
        let f = testgen::random_scalar(grid, 8.0, &mut r);
        let a = f.l2_norm().powi(2);
        let b = spectral::norm_at(&f, 0.0).powi(2);
        checks.push(Check::le(name, (a - b).abs() / a.max(1e-300), 1e-10));
    }

    // closed-form norm: |sin|_{H^2}^2 = 4 pi on [0, 2 pi)
    {
        let f = ScalarField::from_fn(&g1, |p| p[0].sin());
        let n2 = spectral::norm_at(&f, 2.0).powi(2);
        checks.push(Check::le("sine_h2_norm", (n2 - 4.0 * TAU / 2.0).abs() / (4.0 * TAU / 2.0), 1e-10));
    }

    // the smoothing operator inverts the inertia operator
    {
        let u = testgen::random_vector(&g2, 5.0, &mut r);
        let lu = spectral::apply_operator(&u, &m2, SpectralOp::Inertia)?;
        let mut klu = spectral::apply_operator(&lu, &m2, SpectralOp::Smoothing)?;
        let amp = sup_abs_vec(&u);
        klu.add_scaled(&u, -1.0)?;
        checks.push(Check::le("smoothing_inverts_inertia", sup_abs_vec(&klu) / amp.max(1e-300), 1e-10));
    }

    // interpolation with constant 1: |f|_s <= |f|_{s0}^{1-t} |f|_{s1}^t
    {
        let mut worst = 0.0f64;
        for _ in 0..30 {
            let f = testgen::random_scalar(&g1, 20.0, &mut r);
            let s0: f64 = r.gen_range(0.0..3.0);
            let s1: f64 = s0 + r.gen_range(0.1..3.0);
            let t: f64 = r.gen_range(0.05..0.95);
            let s = (1.0 - t) * s0 + t * s1;
            let ratio = spectral::norm_at(&f, s)
                / (spectral::norm_at(&f, s0).powf(1.0 - t) * spectral::norm_at(&f, s1).powf(t));
            worst = worst.max(ratio);
        }
        checks.push(Check::le("interpolation_ratio", worst, 1.0 + 1e-12));
    }

    // frequency cutoff: energy bound, tail decay, exact recovery
    {
        let s = 2.0;
        let mut worst = 0.0f64;
        let mut worst_rise = f64::NEG_INFINITY;
        let mut final_tail = 0.0f64;
        for _ in 0..5 {
            let f = testgen::random_vector(&g1, 24.0, &mut r);
            let ns = spectral::norm_at_vec(&f, s).powi(2);
            let mut prev = f64::INFINITY;
            for k in [2.0, 4.0, 8.0, 16.0, 32.0] {
                let mut low = spectral::cutoff_filter(&f, k);
                let ratio = spectral::norm_at_vec(&low, s + 1.0).powi(2) / ((1.0 + k * k) * ns);
                worst = worst.max(ratio);
                low.add_scaled(&f, -1.0)?;
                let tn = spectral::norm_at_vec(&low, s);
                if prev.is_finite() {
                    worst_rise = worst_rise.max(tn - prev);
                }
                prev = tn;
            }
            // cut beyond the grid's max frequency keeps everything (up to
            // the transform roundtrip's roundoff)
            let mut all = spectral::cutoff_filter(&f, 80.0);
            all.add_scaled(&f, -1.0)?;
            final_tail = final_tail.max(spectral::norm_at_vec(&all, s) / ns.sqrt());
        }
        checks.push(Check::le("cutoff_energy_ratio", worst, 1.0 + 1e-12));
        checks.push(Check::le("cutoff_tail_monotone", worst_rise, 1e-12));
        checks.push(Check::le("cutoff_tail_vanishes", final_tail, 1e-12));
    }

    // spline and trig sampling agree on a smooth band-limited field
    {
        let f = testgen::random_scalar(&g1, 3.0, &mut r);
        let sp = interp::ScalarSampler::new(&f, SampleMode::Spline);
        let tr = interp::ScalarSampler::new(&f, SampleMode::Trig);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let p = [r.gen_range(0.0..TAU), 0.0];
            worst = worst.max((sp.eval(p) - tr.eval(p)).abs());
        }
        checks.push(Check::le("spline_trig_sup", worst, 1e-3));
    }

    // point-scatter is the exact transpose of spline sampling
    {
        let f = testgen::random_scalar(&g2, 6.0, &mut r);
        let coeffs = interp::spline_coefficients(&g2, f.values());
        let sampler = interp::ScalarSampler::new(&f, SampleMode::Spline);
        let mut acc = vec![0.0; g2.points()];
        let mut lhs = 0.0;
        for _ in 0..40 {
            let p = [r.gen_range(0.0..TAU), r.gen_range(0.0..TAU)];
            let w: f64 = r.gen_range(-1.0..1.0);
            lhs += w * sampler.eval(p);
            interp::scatter_spline(&g2, &mut acc, p, w);
        }
        let rhs: f64 = acc.iter().zip(&coeffs).map(|(a, c)| a * c).sum();
        checks.push(Check::le(
            "scatter_adjoint",
            (lhs - rhs).abs() / lhs.abs().max(1e-300),
            1e-12,
        ));
    }

    // rk4 order on the closed-form flow of 0.5 sin(x)
    {
        let field = VectorField::from_fn(&g1, |p| [0.5 * p[0].sin(), 0.0]);
        let tv = TimeVelocity::constant(field, m1.clone(), 1)?;
        let exact = |x0: f64| 2.0 * f64::atan2((x0 / 2.0).sin() * 0.5f64.exp(), (x0 / 2.0).cos());
        let mut errs = Vec::new();
        for sub in [2usize, 4, 8] {
            let opts = FlowOptions {
                substeps: sub,
                max_step_mass: 0.0,
                sampling: SampleMode::Trig,
                ..FlowOptions::default()
            };
            let phi = flow::integrate_flow(&tv, 1.0, &opts)?;
            let mut e = 0.0f64;
            for (i, pos) in phi.positions().iter().enumerate() {
                let mut d = pos[0] - exact(g1.node(i)[0]);
                d -= TAU * (d / TAU).round();
                e = e.max(d.abs());
            }
            errs.push(e);
        }
        let order = (errs[0] / errs[1]).log2().min((errs[1] / errs[2]).log2());
        checks.push(Check::ge("rk4_order_sine", order, 3.8));
    }

    // zero field flows to the identity exactly
    {
        let u = TimeVelocity::zero(m1.clone(), 2)?;
        let phi = flow::integrate_flow(&u, 1.0, &FlowOptions::default())?;
        checks.push(Check::le("zero_field_identity", sup_abs_vec(phi.displacement()), 0.0));
    }

    // invert then compose back to the identity
    checks.extend(guard("inverse_roundtrip", || {
        let mut u = testgen::random_vector(&g1, 4.0, &mut r);
        let n = m1.norm(&u)?;
        testgen::normalize_to(&mut u, n, 0.3);
        let tv = TimeVelocity::constant(u, m1.clone(), 4)?;
        let opts = FlowOptions { sampling: SampleMode::Trig, ..FlowOptions::default() };
        let phi = flow::integrate_flow(&tv, 1.0, &opts)?;
        let psi = flow::invert(&phi, InvertMethod::fixed_point())?;
        let comp = flow::compose(&psi, &phi, SampleMode::Trig)?;
        Ok(vec![Check::le("inverse_roundtrip", sup_abs_vec(comp.displacement()), 1e-6)])
    }));

    // action decomposition: few pieces, and their flows concatenate to the
    // direct flow
    checks.extend(guard("decomposition_flow_match", || {
        let mut u = testgen::random_vector(&g1, 4.0, &mut r);
        let n = m1.norm(&u)?;
        testgen::normalize_to(&mut u, n, 0.5);
        let mut tv = TimeVelocity::constant(u, m1.clone(), 4)?;
        tv.fields_mut()[1].scale(2.0);
        let total = tv.l1_norm()?;
        for f in tv.fields_mut() {
            f.scale(1.0 / total);
        }
        let pieces = flow::decompose_velocity(&tv, 0.3)?;
        let opts = FlowOptions {
            substeps: 16,
            max_step_mass: 0.05,
            sampling: SampleMode::Trig,
            ..FlowOptions::default()
        };
        let direct = flow::integrate_flow(&tv, 1.0, &opts)?;
        let mut acc = Diffeo::identity(&g1);
        for p in &pieces {
            let fp = flow::integrate_flow(p, p.span().1, &opts)?;
            acc = flow::compose(&fp, &acc, SampleMode::Trig)?;
        }
        Ok(vec![
            Check::le("decomposition_pieces", pieces.len() as f64, 4.0),
            Check::le("decomposition_flow_match", direct.h_dist(&acc, 2.0)?, 1e-6),
        ])
    }));

    // adjoint of the recorded flow against a central finite difference
    checks.extend(guard("bvp_gradient", || {
        let g = GridSpec::line(16, TAU)?;
        let m = MetricSpec::new(&g, 2.0)?;
        let opts = SolveOptions { intervals: 2, substeps: 2, ..SolveOptions::default() };
        let problem = BvpProblem::with_options(
            Diffeo::identity(&g),
            Diffeo::translation(&g, [0.4, 0.0]),
            m.clone(),
            opts,
        )?;
        let mk = |r: &mut rand_chacha::ChaCha8Rng| -> Result<TimeVelocity> {
            let fields = (0..2)
                .map(|_| {
                    let mut f = testgen::random_vector(&g, 3.0, r);
                    let n = m.norm(&f)?;
                    testgen::normalize_to(&mut f, n, 0.2);
                    Ok(f)
                })
                .collect::<Result<Vec<_>>>()?;
            TimeVelocity::new(vec![0.0, 0.5, 1.0], fields, m.clone())
        };
        let u = mk(&mut r)?;
        let dir = mk(&mut r)?;
        let rel = bvp::gradient_check(&problem, &u, &dir, 1e-6)?;
        Ok(vec![Check::le("bvp_gradient", rel, 1e-5)])
    }));

    // kernel Gram matrices are positive semidefinite
    {
        let gauss = Kernel::gaussian(&g2, 0.8)?;
        let sob = Kernel::sobolev(&m2);
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let pts: Vec<[f64; 2]> =
                (0..6).map(|_| [r.gen_range(0.0..TAU), r.gen_range(0.0..TAU)]).collect();
            for k in [&gauss, &sob] {
                let (lo, hi) = gram_eig_range(k, &pts);
                worst = worst.max(-lo / hi.max(1e-300));
            }
        }
        checks.push(Check::le("gram_psd", worst, 1e-10));
    }

    // discrete reproducing identity of the Sobolev kernel at a grid node
    checks.extend(guard("kernel_reproducing", || {
        let sob = Kernel::sobolev(&m2);
        let q = g2.node(37);
        let state = LandmarkState::new(vec![q], vec![[1.0, 0.0]])?;
        let col = kernel_velocity(&sob, &state, &g2);
        let f = testgen::random_vector(&g2, 4.0, &mut r);
        let want = f.at(37)[0];
        let got = m2.inner(&col, &f)?;
        Ok(vec![Check::le(
            "kernel_reproducing",
            (got - want).abs() / want.abs().max(1.0),
            1e-10,
        )])
    }));

    // Hamiltonian conservation along a two-landmark geodesic
    checks.extend(guard("hamiltonian_drift", || {
        let gauss = Kernel::gaussian(&g2, 0.8)?;
        let state = LandmarkState::new(
            vec![[2.0, 3.0], [4.0, 3.0]],
            vec![[0.5, 0.2], [-0.3, 0.4]],
        )?;
        let shoot = landmark_shoot(&gauss, &state, 1.0, 64)?;
        let _ = hamiltonian(&gauss, &state);
        Ok(vec![Check::le("hamiltonian_drift", shoot.hamiltonian_drift, 1e-6)])
    }));

    // matching a single translated landmark recovers the shift as distance
    checks.extend(guard("single_landmark_distance", || {
        let gauss = Kernel::gaussian(&g2, 0.8)?;
        let res = landmark_match(
            &gauss,
            g2.lengths(),
            &[[2.0, 3.0]],
            &[[2.7, 3.0]],
            &Default::default(),
        )?;
        Ok(vec![Check::le("single_landmark_distance", (res.distance - 0.7).abs(), 1e-3)])
    }));

    // binary formats round-trip byte for byte
    {
        let f = testgen::random_scalar(&g2, 6.0, &mut r);
        let bytes = io::encode_sgf(&g2, &[f.values()]);
        let (gg, planes) = io::parse_sgf(&bytes)?;
        let again = io::encode_sgf(&gg, &[&planes[0]]);
        checks.push(Check::le("sgf_roundtrip", (bytes != again) as u8 as f64, 0.0));

        let tv = TimeVelocity::constant(testgen::random_vector(&g1, 5.0, &mut r), m1.clone(), 3)?;
        let bytes = io::encode_tvel(&tv);
        let back = io::parse_tvel(&bytes)?;
        let again = io::encode_tvel(&back);
        checks.push(Check::le("tvel_roundtrip", (bytes != again) as u8 as f64, 0.0));
    }

    Ok(checks)
}
