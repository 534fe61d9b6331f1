//! Diffeomorphic image registration and Karcher means.
//!
//! Registration minimizes
//!
//! ```text
//! F(u) = 1/2 sum_j dt ||u_j||^2_{H^s}  +  w/2 ||I o Fl_1(u)^{-1} - J||^2_{L^2}
//! ```
//!
//! over piecewise-constant velocities. Internally the optimization variable
//! is the time-reversed control `v` whose forward flow is the warp map
//! `Fl_1(u)^{-1}` directly; the published velocity is `v` reversed back. The
//! gradient reuses the exact flow adjoint from the geodesic solver, extended
//! through the image interpolation at the warped positions. Steps must both
//! decrease the objective (Armijo) and keep `det D(warp) > 0`, so every
//! accepted iterate is a genuine diffeomorphism.
//!
//! The Karcher mean iterates registration of the current mean to every
//! image and transports the mean along the damped average of the initial
//! velocities, halving the step whenever the total squared distance would
//! increase, so the sweep objective is nonincreasing by construction.

use crate::bvp::{self, GeodesicResult, SolveOptions, TraceRow};
use crate::error::{Error, Result};
use crate::flow::{self, Diffeo, TimeVelocity};
use crate::grid::{same_grid, ScalarField, VectorField};
use crate::interp::ScalarSampler;
use crate::paths;
use crate::rng;
use crate::spectral::{apply_operator, MetricSpec, SpectralOp};

#[derive(Clone, Debug)]
pub struct RegistrationProblem {
    pub source: ScalarField,
    pub target: ScalarField,
    pub metric: MetricSpec,
    /// Similarity weight `w = 1/sigma_S^2`. `None` picks it so the
    /// similarity term equals 100 at the zero velocity, which lands both
    /// objective terms within an order of magnitude of each other once the
    /// solve has traded mismatch for deformation energy.
    pub similarity_weight: Option<f64>,
    /// Solver knobs. `lambda_schedule` and `residual_tol` are unused here:
    /// the similarity weight is fixed and convergence is judged on the
    /// relative mismatch instead.
    pub options: SolveOptions,
    /// Converged when final mismatch <= this fraction of the initial one.
    pub mismatch_tol: f64,
}

impl RegistrationProblem {
    pub fn new(source: ScalarField, target: ScalarField, metric: MetricSpec) -> Result<Self> {
        same_grid(metric.grid(), source.grid(), "registration source")?;
        same_grid(metric.grid(), target.grid(), "registration target")?;
        Ok(RegistrationProblem {
            source,
            target,
            metric,
            similarity_weight: None,
            options: SolveOptions::default(),
            mismatch_tol: 0.1,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    /// Geodesic data of the matched velocity; `endpoint_residual` holds the
    /// final L2 mismatch and `converged` the relative-mismatch verdict.
    pub geodesic: GeodesicResult,
    /// `source o Fl_1(u)^{-1}` on the grid.
    pub warped: ScalarField,
    pub initial_mismatch: f64,
    pub final_mismatch: f64,
    pub similarity_weight: f64,
    /// Smallest `det D(warp)` over the grid at the accepted optimum.
    pub min_det: f64,
    pub objective: f64,
}

fn l2_mismatch(a: &[f64], b: &[f64], cell: f64) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (cell * s).sqrt()
}

/// Warp evaluation: samples `image` at the final positions of the flow of
/// `v` (the backward control) and reports mismatch pieces.
struct WarpEval {
    tape: bvp::FlowTape,
    warped: Vec<f64>,
    energy: f64,
    mismatch_sq: f64,
    min_det: f64,
}

fn eval_warp(
    problem: &RegistrationProblem,
    sampler: &ScalarSampler,
    v: &[VectorField],
    record: bool,
) -> Result<WarpEval> {
    let grid = problem.metric.grid();
    let n = v.len();
    let dt = 1.0 / n as f64;
    let start = flow::grid_nodes(grid);
    let tape = bvp::record_flow(v, start, dt, problem.options.substeps, problem.options.sampling, record);

    // positivity of the warp Jacobian is part of admissibility
    let mut disp = VectorField::zeros(grid);
    for i in 0..grid.points() {
        let node = grid.node(i);
        for a in 0..grid.dim() {
            disp.component_mut(a)[i] = tape.final_pos[i][a] - node[a];
        }
    }
    let warp = Diffeo::from_displacement(disp)?;

    let mut warped = Vec::with_capacity(grid.points());
    let mut mismatch_sq = 0.0;
    for (i, pos) in tape.final_pos.iter().enumerate() {
        let w = sampler.eval(*pos);
        let r = w - problem.target.values()[i];
        mismatch_sq += r * r;
        warped.push(w);
    }
    mismatch_sq *= grid.cell_volume();

    let mut energy = 0.0;
    for field in v {
        let nrm = problem.metric.norm(field)?;
        energy += dt * nrm * nrm;
    }
    Ok(WarpEval { tape, warped, energy, mismatch_sq, min_det: warp.min_det() })
}

/// Minimizes the registration objective. The returned velocity `u` satisfies
/// `warped = source o Fl_1(u)^{-1}`.
pub fn register_images(problem: &RegistrationProblem, seed: u64) -> Result<RegistrationResult> {
    let grid = problem.metric.grid();
    let n = problem.options.intervals;
    if n == 0 || problem.options.substeps == 0 {
        return Err(Error::InvalidInput("registration needs intervals and substeps".into()));
    }
    if !(problem.mismatch_tol > 0.0) {
        return Err(Error::InvalidInput("mismatch_tol must be > 0".into()));
    }
    let cell = grid.cell_volume();
    let initial_mismatch = l2_mismatch(problem.source.values(), problem.target.values(), cell);

    // identical images: zero velocity is exactly optimal
    if initial_mismatch <= 1e-14 * problem.source.l2_norm().max(1.0) {
        let velocity = TimeVelocity::zero(problem.metric.clone(), n)?;
        return Ok(RegistrationResult {
            geodesic: GeodesicResult {
                velocity,
                energy: 0.0,
                length: 0.0,
                endpoint_residual: initial_mismatch,
                converged: true,
                iterations: 0,
                trace: Vec::new(),
            },
            warped: problem.source.clone(),
            initial_mismatch,
            final_mismatch: initial_mismatch,
            similarity_weight: problem.similarity_weight.unwrap_or(0.0),
            min_det: 1.0,
            objective: 0.0,
        });
    }

    let weight = match problem.similarity_weight {
        Some(w) if w > 0.0 && w.is_finite() => w,
        Some(_) => return Err(Error::InvalidInput("similarity weight must be > 0".into())),
        None => 200.0 / (initial_mismatch * initial_mismatch),
    };

    let sampler = ScalarSampler::new(&problem.source, problem.options.sampling);
    let dt = 1.0 / n as f64;

    // tiny random init, like the geodesic solver
    let mut rng = rng::substream(seed, rng::Stream::SolverInit, 1);
    let min_len = grid.lengths().iter().cloned().fold(f64::INFINITY, f64::min);
    let mut v: Vec<VectorField> = (0..n)
        .map(|_| {
            let mut f =
                crate::testgen::random_vector(grid, 4.0 * std::f64::consts::TAU / min_len, &mut rng);
            let nrm = problem.metric.norm(&f).unwrap_or(0.0);
            if nrm > 0.0 {
                f.scale(problem.options.init_amplitude / nrm);
            }
            f
        })
        .collect();

    let objective_of = |e: &WarpEval| 0.5 * e.energy + 0.5 * weight * e.mismatch_sq;

    let mut eval = eval_warp(problem, &sampler, &v, true)?;
    let mut fval = objective_of(&eval);
    let mut trace = vec![TraceRow { stage: 0, iter: 0, objective: fval }];
    let mut iterations = 0usize;
    let mut step = 1.0f64;

    for iter in 1..=problem.options.max_iters {
        // gradient: mismatch seed pulled back through the flow, plus energy
        let mut xbar: Vec<[f64; 2]> = Vec::with_capacity(grid.points());
        for (i, pos) in eval.tape.final_pos.iter().enumerate() {
            let (w, dw) = sampler.eval_grad(*pos);
            let c = weight * cell * (w - problem.target.values()[i]);
            xbar.push([c * dw[0], c * dw[1]]);
        }
        let mut grad = bvp::flow_pullback(
            grid,
            &v,
            &eval.tape,
            &mut xbar,
            dt,
            problem.options.substeps,
            problem.options.sampling,
        );
        for (g, field) in grad.iter_mut().zip(&v) {
            let mut e = bvp::sq_norm_gradient(&problem.metric, field)?;
            e.scale(0.5 * dt);
            g.add_scaled(&e, 1.0)?;
        }

        // preconditioned descent with Armijo + Jacobian positivity
        let mut dir = Vec::with_capacity(n);
        let mut slope = 0.0;
        for g in &grad {
            let mut pg = apply_operator(g, &problem.metric, SpectralOp::Smoothing)?;
            pg.scale(-1.0);
            for a in 0..grid.dim() {
                slope += pg.component(a).iter().zip(g.component(a)).map(|(x, y)| x * y).sum::<f64>();
            }
            dir.push(pg);
        }
        if slope >= 0.0 {
            break;
        }

        let mut t = step * 2.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = v.clone();
            for (c, d) in cand.iter_mut().zip(&dir) {
                c.add_scaled(d, t)?;
            }
            match eval_warp(problem, &sampler, &cand, true) {
                Ok(e) => {
                    let fc = objective_of(&e);
                    if fc <= fval + 1e-4 * t * slope {
                        accepted = Some((cand, e, fc, t));
                        break;
                    }
                }
                Err(Error::DegenerateFlow { .. }) => {} // warp left the group: shrink
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
        let Some((cand, e, fc, t_acc)) = accepted else { break };
        v = cand;
        eval = e;
        step = t_acc;
        iterations += 1;
        trace.push(TraceRow { stage: 0, iter, objective: fc });
        let stalled = (fval - fc).abs() <= 1e-10 * (1.0 + fval.abs());
        fval = fc;
        if stalled {
            break;
        }
    }

    let final_mismatch = eval.mismatch_sq.sqrt();
    let time_grid: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
    let v_vel = TimeVelocity::new(time_grid, v, problem.metric.clone())?;
    let velocity = v_vel.reversed();
    let report = paths::path_energy(&velocity)?;
    let warped = ScalarField::from_values(grid, eval.warped.clone())?;
    Ok(RegistrationResult {
        geodesic: GeodesicResult {
            velocity,
            energy: report.energy,
            length: report.length,
            endpoint_residual: final_mismatch,
            converged: final_mismatch <= problem.mismatch_tol * initial_mismatch,
            iterations,
            trace,
        },
        warped,
        initial_mismatch,
        final_mismatch,
        similarity_weight: weight,
        min_det: eval.min_det,
        objective: fval,
    })
}

/// Transports `image` along the constant field `v` for time `tau`:
/// `image o Fl_tau(v)^{-1}` via the reversed flow.
pub fn transport_image(
    image: &ScalarField,
    v: &VectorField,
    tau: f64,
    metric: &MetricSpec,
    options: &SolveOptions,
) -> Result<ScalarField> {
    let grid = metric.grid();
    same_grid(grid, image.grid(), "transport image")?;
    let mut back = v.clone();
    back.scale(-tau);
    let tape = bvp::record_flow(
        &[back],
        flow::grid_nodes(grid),
        1.0,
        options.substeps.max(4),
        options.sampling,
        false,
    );
    let sampler = ScalarSampler::new(image, options.sampling);
    let values = tape.final_pos.iter().map(|p| sampler.eval(*p)).collect();
    ScalarField::from_values(grid, values)
}

#[derive(Clone, Debug)]
pub struct KarcherConfig {
    pub registration: SolveOptions,
    pub mismatch_tol: f64,
    pub max_sweeps: usize,
    /// Initial step along the averaged velocity; halved on rejected sweeps.
    pub damping: f64,
    /// Stop once a sweep improves the total squared distance by less than
    /// this relative amount.
    pub rel_tol: f64,
}

impl Default for KarcherConfig {
    fn default() -> Self {
        KarcherConfig {
            registration: SolveOptions::default(),
            mismatch_tol: 0.1,
            max_sweeps: 10,
            damping: 0.5,
            rel_tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KarcherReport {
    pub mean: ScalarField,
    /// Geodesic distance estimate from the mean to each image.
    pub distances: Vec<f64>,
    pub total_sq: f64,
    /// Total squared distance after the initial registration and after each
    /// accepted sweep; nonincreasing.
    pub sweep_history: Vec<f64>,
    pub all_registrations_converged: bool,
    pub sweeps: usize,
}

fn register_to_all(
    images: &[ScalarField],
    mean: &ScalarField,
    metric: &MetricSpec,
    config: &KarcherConfig,
    seed: u64,
) -> Result<(Vec<RegistrationResult>, f64, bool)> {
    let mut regs = Vec::with_capacity(images.len());
    let mut total = 0.0;
    let mut all_ok = true;
    for (k, image) in images.iter().enumerate() {
        let problem = RegistrationProblem {
            source: mean.clone(),
            target: image.clone(),
            metric: metric.clone(),
            similarity_weight: None,
            options: config.registration.clone(),
            mismatch_tol: config.mismatch_tol,
        };
        let reg = register_images(&problem, seed.wrapping_add(k as u64))?;
        total += reg.geodesic.energy;
        all_ok &= reg.geodesic.converged;
        regs.push(reg);
    }
    Ok((regs, total, all_ok))
}

/// Fixed-point Karcher mean: repeatedly registers the current mean to every
/// image and moves it along the damped average of the initial velocities.
pub fn karcher_mean(
    images: &[ScalarField],
    reference: &ScalarField,
    metric: &MetricSpec,
    config: &KarcherConfig,
    seed: u64,
) -> Result<KarcherReport> {
    if images.is_empty() {
        return Err(Error::InvalidInput("karcher mean needs at least one image".into()));
    }
    for (k, image) in images.iter().enumerate() {
        same_grid(metric.grid(), image.grid(), "karcher image")?;
        let _ = k;
    }
    same_grid(metric.grid(), reference.grid(), "karcher reference")?;
    if images.len() == 1 {
        // the mean of one image is that image
        return Ok(KarcherReport {
            mean: images[0].clone(),
            distances: vec![0.0],
            total_sq: 0.0,
            sweep_history: vec![0.0],
            all_registrations_converged: true,
            sweeps: 0,
        });
    }

    let mut mean = reference.clone();
    let (mut regs, mut total, mut all_ok) =
        register_to_all(images, &mean, metric, config, seed)?;
    let mut history = vec![total];
    let mut damping = config.damping;
    let mut sweeps = 0usize;

    while sweeps < config.max_sweeps {
        // average initial velocity over the images
        let mut avg = VectorField::zeros(metric.grid());
        for reg in &regs {
            avg.add_scaled(&reg.geodesic.velocity.fields()[0], 1.0 / regs.len() as f64)?;
        }
        let mut moved = false;
        while damping > 1e-3 {
            let candidate = transport_image(&mean, &avg, damping, metric, &config.registration)?;
            let (cregs, ctotal, cok) =
                register_to_all(images, &candidate, metric, config, seed)?;
            if ctotal <= total {
                let rel_gain = (total - ctotal) / total.max(1e-300);
                mean = candidate;
                regs = cregs;
                total = ctotal;
                all_ok = cok;
                history.push(total);
                sweeps += 1;
                moved = true;
                if rel_gain < config.rel_tol {
                    return Ok(finish(mean, regs, total, history, all_ok, sweeps));
                }
                break;
            }
            damping *= 0.5; // overshoot: halve and retry from the same mean
        }
        if !moved {
            break;
        }
    }
    Ok(finish(mean, regs, total, history, all_ok, sweeps))
}

fn finish(
    mean: ScalarField,
    regs: Vec<RegistrationResult>,
    total: f64,
    history: Vec<f64>,
    all_ok: bool,
    sweeps: usize,
) -> KarcherReport {
    KarcherReport {
        mean,
        distances: regs.iter().map(|r| r.geodesic.energy.max(0.0).sqrt()).collect(),
        total_sq: total,
        sweep_history: history,
        all_registrations_converged: all_ok,
        sweeps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowOptions;
    use crate::grid::GridSpec;
    use std::f64::consts::TAU;

    fn metric_1d(n: usize) -> MetricSpec {
        let g = GridSpec::line(n, TAU).unwrap();
        MetricSpec::new(&g, 2.0).unwrap()
    }

    fn bump(grid: &GridSpec, center: f64, width: f64) -> ScalarField {
        ScalarField::from_fn(grid, |p| (((p[0] - center).cos() - 1.0) / (width * width)).exp())
    }

    #[test]
    fn identical_images_register_with_zero_velocity() {
        let m = metric_1d(32);
        let img = bump(m.grid(), 3.0, 0.8);
        let problem = RegistrationProblem::new(img.clone(), img.clone(), m).unwrap();
        let res = register_images(&problem, 0).unwrap();
        assert_eq!(res.objective, 0.0);
        assert!(res.geodesic.converged);
        assert_eq!(res.geodesic.energy, 0.0);
    }

    #[test]
    fn offset_bumps_register_below_ten_percent_mismatch() {
        let m = metric_1d(64);
        let src = bump(m.grid(), 3.0, 0.9);
        let dst = bump(m.grid(), 3.7, 0.9);
        let mut problem = RegistrationProblem::new(src, dst, m).unwrap();
        problem.options.intervals = 5;
        problem.options.substeps = 2;
        problem.options.max_iters = 300;
        let res = register_images(&problem, 0).unwrap();
        assert!(
            res.final_mismatch <= 0.1 * res.initial_mismatch,
            "mismatch {} of {}",
            res.final_mismatch,
            res.initial_mismatch
        );
        assert!(res.min_det > 0.0, "min det {}", res.min_det);
        // objective trace never increases
        for w in res.geodesic.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-12);
        }
    }

    #[test]
    fn warped_mass_obeys_change_of_variables() {
        let m = metric_1d(64);
        let grid = m.grid();
        let img = bump(grid, 2.0, 1.0);
        let field = VectorField::from_fn(grid, |p| [0.25 * p[0].sin(), 0.0]);
        let u = TimeVelocity::constant(field, m.clone(), 4).unwrap();
        let phi = flow::integrate_flow(&u, 1.0, &FlowOptions::default()).unwrap();

        // warp through the inverse flow
        let warped = transport_image(
            &img,
            u.fields().first().unwrap(),
            1.0,
            &m,
            &SolveOptions { substeps: 16, ..SolveOptions::default() },
        )
        .unwrap();

        // oracle: integral of I(y) det Dphi(y) dy
        let mut weighted = img.clone();
        for (v, det) in weighted.values_mut().iter_mut().zip(phi.jac_det().values()) {
            *v *= det;
        }
        let lhs = warped.integral();
        let rhs = weighted.integral();
        assert!((lhs - rhs).abs() <= 0.01 * rhs.abs(), "{lhs} vs {rhs}");
    }

    #[test]
    fn karcher_mean_of_one_image_is_that_image() {
        let m = metric_1d(32);
        let img = bump(m.grid(), 1.0, 0.7);
        let report =
            karcher_mean(&[img.clone()], &img, &m, &KarcherConfig::default(), 0).unwrap();
        assert_eq!(report.total_sq, 0.0);
        assert_eq!(report.distances, vec![0.0]);
    }

    #[test]
    fn karcher_mean_of_identical_images_stays_put() {
        let m = metric_1d(32);
        let img = bump(m.grid(), 2.5, 0.8);
        let cfg = KarcherConfig {
            registration: SolveOptions { intervals: 3, substeps: 2, max_iters: 60, ..SolveOptions::default() },
            ..KarcherConfig::default()
        };
        let report = karcher_mean(&[img.clone(), img.clone()], &img, &m, &cfg, 3).unwrap();
        let diff: f64 = report
            .mean
            .values()
            .iter()
            .zip(img.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-6, "mean moved by {diff}");
        assert!(report.total_sq < 1e-10);
        for w in report.sweep_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }
}
