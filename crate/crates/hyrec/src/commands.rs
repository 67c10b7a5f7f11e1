use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use hyrec_core::analysis::{log_grid, verify, Pipeline, VerificationReport};
use hyrec_core::driver::{
    hybr, hybr_recycle, storage_costs, stream_solve, Approach, IterationRecord, RunContext,
    SolveOutput, StreamData,
};
use hyrec_core::linalg::{norm2, singular_values, sub};
use hyrec_core::problems::{
    default_ray_count, gaussian_blur_1d, gaussian_blur_2d, parallel_tomo, shepp_logan,
    smooth_image, smooth_signal, NoisyProblem,
};
use hyrec_core::LinearOp;
use serde::Serialize;

use crate::config::{ExperimentConfig, Phantom, ProblemSpec, SolverMethod};
use crate::output::{iterations_csv, pgm, to_json, write};

/// A generated problem with its image shape for PGM export.
pub struct Built {
    pub op: Box<dyn LinearOp>,
    pub x_true: Vec<f64>,
    pub b: Vec<f64>,
    pub noise_norm: f64,
    pub width: usize,
    pub height: usize,
}

fn phantom(kind: Phantom, n: usize) -> Result<Vec<f64>> {
    Ok(match kind {
        Phantom::Smooth => smooth_image(n, n),
        Phantom::SheppLogan => shepp_logan(n)?,
    })
}

pub fn evenly_spaced_angles(n: usize) -> Vec<f64> {
    (0..n).map(|i| 180.0 * i as f64 / n as f64).collect()
}

fn noisy<O: LinearOp + 'static>(
    op: O,
    x: Vec<f64>,
    level: f64,
    seed: u64,
    w: usize,
    h: usize,
) -> Result<Built> {
    let p = NoisyProblem::new(op, x, level, seed)?;
    Ok(Built {
        op: Box::new(p.op),
        x_true: p.x_true,
        b: p.b,
        noise_norm: p.noise_norm,
        width: w,
        height: h,
    })
}

pub fn build(spec: &ProblemSpec) -> Result<Built> {
    match *spec {
        ProblemSpec::Blur1d {
            size,
            psf_sigma,
            noise_level,
            seed,
        } => noisy(
            gaussian_blur_1d(size, psf_sigma)?,
            smooth_signal(size),
            noise_level,
            seed,
            size,
            1,
        ),
        ProblemSpec::Blur2d {
            size,
            psf_sigma,
            noise_level,
            seed,
            phantom: ph,
        } => noisy(
            gaussian_blur_2d(size, size, psf_sigma)?,
            phantom(ph, size)?,
            noise_level,
            seed,
            size,
            size,
        ),
        ProblemSpec::Tomo {
            size,
            n_angles,
            rays,
            noise_level,
            seed,
            phantom: ph,
        } => {
            let op = parallel_tomo(
                size,
                &evenly_spaced_angles(n_angles),
                rays.unwrap_or(default_ray_count(size)),
            )?;
            noisy(op, phantom(ph, size)?, noise_level, seed, size, size)
        }
    }
}

/// Wall-clock milliseconds, or nothing when timing is off (keeps output
/// byte-deterministic).
struct Clock(Option<Instant>);

impl Clock {
    fn new(on: bool) -> Self {
        Clock(on.then(Instant::now))
    }

    fn ms(&self) -> f64 {
        self.0.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3)
    }
}

#[derive(Serialize)]
struct RunSummary {
    solver: String,
    iterations: usize,
    cycles: usize,
    max_basis_count: usize,
    min_relerr: f64,
    min_relerr_iter: usize,
    final_relerr: f64,
    cpu_ms: f64,
}

fn summarize(
    solver: &str,
    recs: &[IterationRecord],
    x: &[f64],
    x_true: &[f64],
    cpu_ms: f64,
) -> RunSummary {
    let (mut min, mut arg) = (f64::INFINITY, 0);
    for r in recs {
        if let Some(e) = r.rel_error {
            if e < min {
                min = e;
                arg = r.iteration;
            }
        }
    }
    RunSummary {
        solver: solver.into(),
        iterations: recs.len(),
        cycles: recs.last().map_or(0, |r| r.cycle + 1),
        max_basis_count: recs.iter().map(|r| r.basis_count).max().unwrap_or(0),
        min_relerr: min,
        min_relerr_iter: arg,
        final_relerr: norm2(&sub(x, x_true)) / norm2(x_true),
        cpu_ms,
    }
}

#[derive(Serialize)]
struct ProblemInfo<'a> {
    spec: &'a str,
    rows: usize,
    cols: usize,
    noise_level: f64,
    noise_norm: f64,
    seed: u64,
}

fn kind_name(spec: &ProblemSpec) -> &'static str {
    match spec {
        ProblemSpec::Blur1d { .. } => "blur1d",
        ProblemSpec::Blur2d { .. } => "blur2d",
        ProblemSpec::Tomo { .. } => "tomo",
    }
}

fn problem_info<'a>(cfg: &'a ExperimentConfig, p: &Built) -> ProblemInfo<'a> {
    ProblemInfo {
        spec: kind_name(&cfg.problem),
        rows: p.op.nrows(),
        cols: p.op.ncols(),
        noise_level: cfg.problem.noise_level(),
        noise_norm: p.noise_norm,
        seed: cfg.problem.seed(),
    }
}

#[derive(Serialize)]
struct Metrics<'a> {
    problem: ProblemInfo<'a>,
    runs: Vec<RunSummary>,
}

/// `deblur` and `tomo`: one or both solvers on a single generated problem.
pub fn run_single(cfg: &ExperimentConfig, out: &Path, timing: bool) -> Result<()> {
    let p = build(&cfg.problem)?;
    let solver = cfg.solver.to_config(p.noise_norm, p.op.nrows());
    let clock = Clock::new(timing);
    let tick = || clock.ms();
    let ctx = RunContext {
        x_true: Some(&p.x_true),
        noise_norm: Some(p.noise_norm),
        clock: timing.then_some(&tick as &dyn Fn() -> f64),
    };
    let op: &dyn LinearOp = p.op.as_ref();
    let run = |name: &str| -> Result<(String, SolveOutput, f64)> {
        let t0 = clock.ms();
        let o = match name {
            "hybr" => hybr(op, &p.b, &solver, &ctx),
            _ => hybr_recycle(op, &p.b, &[], &vec![0.0; op.ncols()], &solver, &ctx),
        }
        .with_context(|| format!("{name} solve failed"))?;
        Ok((name.to_string(), o, clock.ms() - t0))
    };
    let runs = match cfg.solver.method {
        SolverMethod::Hybr => vec![run("hybr")?],
        SolverMethod::Recycle => vec![run("recycle")?],
        SolverMethod::Compare => vec![run("hybr")?, run("recycle")?],
    };

    let compare = runs.len() > 1;
    let tables: Vec<(&str, &[IterationRecord])> = runs
        .iter()
        .map(|(n, o, _)| (n.as_str(), &o.records[..]))
        .collect();
    write(
        out,
        "iterations.csv",
        &iterations_csv(compare.then_some("solver"), &tables),
    )?;
    write(out, "truth.pgm", &pgm(&p.x_true, p.width, p.height))?;
    for (name, o, _) in &runs {
        let file = if compare {
            format!("reconstruction_{name}.pgm")
        } else {
            "reconstruction.pgm".into()
        };
        write(out, &file, &pgm(&o.x, p.width, p.height))?;
    }
    let metrics = Metrics {
        problem: problem_info(cfg, &p),
        runs: runs
            .iter()
            .map(|(n, o, ms)| summarize(n, &o.records, &o.x, &p.x_true, *ms))
            .collect(),
    };
    for r in &metrics.runs {
        println!(
            "{}: {} iterations, final relerr {:.4e}, min {:.4e} at {}",
            r.solver, r.iterations, r.final_relerr, r.min_relerr, r.min_relerr_iter
        );
    }
    write(out, "metrics.json", &to_json(&metrics)?)
}

#[derive(Serialize)]
struct ApproachSummary {
    approach: u8,
    label: &'static str,
    iterations: usize,
    final_relerr: f64,
    min_relerr: f64,
    stage_relerr: Vec<f64>,
    cpu_ms: f64,
}

#[derive(Serialize)]
struct StreamSummary {
    splits: usize,
    datasets: Vec<usize>,
    approaches: Vec<ApproachSummary>,
    /// Largest relative difference between any two final solutions.
    max_relative_spread: f64,
    /// Set when there is a single dataset and every approach was run.
    approaches_coincide: Option<bool>,
    /// `relerr(recycle-sequential) − relerr(all-data)` and
    /// `relerr(average) − relerr(recycle-sequential)`; set when all four ran.
    margin_sequential_over_all: Option<f64>,
    margin_average_over_sequential: Option<f64>,
}

/// Relative tolerance for declaring single-dataset approaches equal.
pub const COINCIDE_TOL: f64 = 1e-8;

/// `stream`: contiguous angle groups solved by one or all four workflows.
pub fn run_stream(
    cfg: &ExperimentConfig,
    out: &Path,
    approach: Option<u8>,
    timing: bool,
) -> Result<()> {
    let ProblemSpec::Tomo {
        size,
        n_angles,
        rays,
        noise_level,
        seed,
        phantom: ph,
    } = cfg.problem
    else {
        bail!("stream needs a tomo problem");
    };
    let r = cfg.stream.splits;
    if r > n_angles {
        bail!("stream.splits ({r}) exceeds problem.n_angles ({n_angles})");
    }
    let angles = evenly_spaced_angles(n_angles);
    let x_true = phantom(ph, size)?;
    let rays = rays.unwrap_or(default_ray_count(size));
    let mut sets = Vec::with_capacity(r);
    for i in 0..r {
        let chunk = &angles[i * n_angles / r..(i + 1) * n_angles / r];
        let op = parallel_tomo(size, chunk, rays)?;
        sets.push(NoisyProblem::new(
            op,
            x_true.clone(),
            noise_level,
            seed.wrapping_add(i as u64 + 1),
        )?);
    }
    let data: Vec<StreamData> = sets
        .iter()
        .map(|s| StreamData {
            op: &s.op,
            b: &s.b,
            noise_norm: Some(s.noise_norm),
        })
        .collect();
    let solver = cfg.solver.to_config(sets[0].noise_norm, sets[0].op.nrows());
    let approaches = match approach {
        Some(i) => vec![Approach::from_index(i)?],
        None => Approach::ALL.to_vec(),
    };

    let clock = Clock::new(timing);
    let tick = || clock.ms();
    let ctx = RunContext {
        x_true: Some(&x_true),
        noise_norm: None,
        clock: timing.then_some(&tick as &dyn Fn() -> f64),
    };
    let rel = |x: &[f64]| norm2(&sub(x, &x_true)) / norm2(&x_true);
    let mut results = Vec::new();
    for &a in &approaches {
        let t0 = clock.ms();
        let o = stream_solve(&data, &solver, a, &ctx)
            .with_context(|| format!("approach {}", a.label()))?;
        results.push((a, o, clock.ms() - t0));
    }

    let tables: Vec<(&str, &[IterationRecord])> = results
        .iter()
        .map(|(a, o, _)| (a.label(), &o.records[..]))
        .collect();
    write(
        out,
        "stream.csv",
        &iterations_csv(Some("approach"), &tables),
    )?;
    write(out, "truth.pgm", &pgm(&x_true, size, size))?;
    for (a, o, _) in &results {
        write(
            out,
            &format!("reconstruction_{}.pgm", a.label()),
            &pgm(&o.x, size, size),
        )?;
    }

    let mut spread: f64 = 0.0;
    for (i, (_, oi, _)) in results.iter().enumerate() {
        for (_, oj, _) in &results[i + 1..] {
            let scale = norm2(&oi.x).max(norm2(&oj.x)).max(f64::MIN_POSITIVE);
            spread = spread.max(norm2(&sub(&oi.x, &oj.x)) / scale);
        }
    }
    let all_four = results.len() == 4;
    let final_of = |a: Approach| {
        results
            .iter()
            .find(|(b, _, _)| *b == a)
            .map(|(_, o, _)| rel(&o.x))
    };
    let margins = all_four.then(|| {
        let seq = final_of(Approach::RecycleSequential).unwrap_or(f64::NAN);
        let all = final_of(Approach::AllData).unwrap_or(f64::NAN);
        let avg = final_of(Approach::Average).unwrap_or(f64::NAN);
        (seq - all, avg - seq)
    });
    let summary = StreamSummary {
        splits: r,
        datasets: sets.iter().map(|s| s.op.angles_deg().len()).collect(),
        approaches: results
            .iter()
            .map(|(a, o, ms)| {
                let min = o
                    .records
                    .iter()
                    .filter_map(|r| r.rel_error)
                    .fold(f64::INFINITY, f64::min);
                ApproachSummary {
                    approach: *a as u8,
                    label: a.label(),
                    iterations: o.records.len(),
                    final_relerr: rel(&o.x),
                    min_relerr: min,
                    stage_relerr: o.stages.iter().map(|s| rel(s)).collect(),
                    cpu_ms: *ms,
                }
            })
            .collect(),
        max_relative_spread: spread,
        approaches_coincide: (r == 1 && all_four).then_some(spread <= COINCIDE_TOL),
        margin_sequential_over_all: margins.map(|m| m.0),
        margin_average_over_sequential: margins.map(|m| m.1),
    };

    let mut table = String::from("approach,label,iterations,final_relerr,min_relerr,cpu_ms\n");
    for s in &summary.approaches {
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.approach,
            s.label,
            s.iterations,
            crate::output::fmt_f64(s.final_relerr),
            crate::output::fmt_f64(s.min_relerr),
            crate::output::fmt_f64(s.cpu_ms)
        ));
        println!(
            "{:<20} final relerr {:.4e}  ({} iterations)",
            s.label, s.final_relerr, s.iterations
        );
    }
    write(out, "summary.csv", &table)?;
    write(out, "summary.json", &to_json(&summary)?)
}

#[derive(Serialize)]
struct VerifyOutput<'a> {
    problem: ProblemInfo<'a>,
    fault_injected: bool,
    lambdas: Vec<f64>,
    passed: bool,
    report: VerificationReport,
}

/// `verify`: runs the analysis checks; `Ok(false)` when a hard check fails.
pub fn run_verify(cfg: &ExperimentConfig, out: &Path, fault: bool) -> Result<bool> {
    let p = build(&cfg.problem)?;
    let v = &cfg.verify;
    let mut pipe = Pipeline::tsvd(p.op.as_ref(), &p.b, v.m, v.k, v.ell, v.x1_lambda)
        .context("building pipeline")?;
    if fault {
        pipe.inject_fault();
    }
    let s1 = singular_values(&pipe.bhat).first().copied().unwrap_or(0.0);
    let lambdas = log_grid(v.lambda_min_factor * s1, s1, v.lambda_count);
    let report =
        verify(&pipe, &lambdas, cfg.problem.seed()).context("verification failed to run")?;
    for c in &report.checks {
        let status = match (c.passed, c.hard) {
            (true, _) => "pass",
            (false, true) => "FAIL",
            (false, false) => "warn",
        };
        println!(
            "{status:<4} {:<36} value {:.3e}  limit {:.3e}",
            c.name, c.value, c.limit
        );
    }
    let passed = report.passed();
    let doc = VerifyOutput {
        problem: problem_info(cfg, &p),
        fault_injected: fault,
        lambdas,
        passed,
        report,
    };
    write(out, "verify.json", &to_json(&doc)?)?;
    Ok(passed)
}

/// `cost`: storage of HyBR versus recycling for every split `k + ℓ = m`.
pub fn cost_table(m: usize, n: usize, rows: usize) -> String {
    use crate::output::fmt_f64;
    let mut s = String::from("k,l,c_hybr,c_recycle,bound,recycle_below_bound\n");
    for k in 0..=m {
        let l = m - k;
        let c = storage_costs(k, l, n, rows);
        s.push_str(&format!(
            "{k},{l},{},{},{},{}\n",
            fmt_f64(c.c_hybr),
            fmt_f64(c.c_recycle),
            fmt_f64(c.bound),
            c.c_recycle < c.bound
        ));
    }
    s
}
