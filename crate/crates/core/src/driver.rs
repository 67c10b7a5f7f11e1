//! Outer solvers: plain hybrid projection (HyBR), hybrid projection with
//! recycling and compression under a storage budget (HyBR-recycle), the
//! four multi-dataset workflows, and the storage-cost formulas.

use alloc::vec;
use alloc::vec::Vec;

use crate::compress::{compress, CompressMethod};
use crate::error::{Error, Result};
use crate::gkb::gkb_init;
use crate::linalg::{norm2, sub};
use crate::linops::{stack, LinearOp};
use crate::projreg::{LambdaSelector, RegMethod, SelectContext, Spectral};
use crate::recycle::{build_wk, recycle_init};

/// Relative change between cycle iterates below which HyBR-recycle stops.
pub const CYCLE_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_CYCLES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum InnerStop {
    /// Extend until the storage limit is reached.
    MaxFill,
    /// Also stop once the GCV value at the selected λ has changed by less
    /// than `tol` (relative) for `window` consecutive iterations.
    GcvFlat { tol: f64, window: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub storage_limit: usize,
    pub compress: CompressMethod,
    pub reg: RegMethod,
    pub reorth: bool,
    pub max_cycles: usize,
    pub inner_stop: InnerStop,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.storage_limit < 2 {
            return Err(Error::InvalidArgument("storage_limit must be at least 2"));
        }
        if self.max_cycles == 0 {
            return Err(Error::InvalidArgument("max_cycles must be at least 1"));
        }
        if let InnerStop::GcvFlat { tol, window } = self.inner_stop {
            if !(tol > 0.0) || window == 0 {
                return Err(Error::InvalidArgument(
                    "gcv-flat stop needs tol > 0 and window >= 1",
                ));
            }
        }
        self.compress.validate(self.storage_limit)?;
        self.reg.validate()
    }
}

/// Per-run information that does not belong in the configuration.
#[derive(Clone, Copy, Default)]
pub struct RunContext<'a> {
    /// Enables relative errors in the log and the optimal λ rule.
    pub x_true: Option<&'a [f64]>,
    /// Enables the discrepancy surrogate for weighted GCV with automatic ω.
    pub noise_norm: Option<f64>,
    /// Milliseconds since an arbitrary origin; without it times are logged as 0.
    pub clock: Option<&'a dyn Fn() -> f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct IterationRecord {
    pub cycle: usize,
    /// 1-based within the cycle.
    pub inner_iter: usize,
    /// 1-based across the whole run.
    pub iteration: usize,
    pub lambda: f64,
    pub projected_resnorm: f64,
    pub rel_error: Option<f64>,
    /// Length-`N` basis vectors held when the iterate was formed.
    pub basis_count: usize,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub x: Vec<f64>,
    pub records: Vec<IterationRecord>,
    /// Compressed basis after the last cycle (empty for plain HyBR).
    pub w: Vec<Vec<f64>>,
}

struct Logger<'a> {
    ctx: &'a RunContext<'a>,
    start: f64,
    records: Vec<IterationRecord>,
}

impl<'a> Logger<'a> {
    fn new(ctx: &'a RunContext<'a>) -> Self {
        Self {
            ctx,
            start: ctx.clock.map_or(0.0, |c| c()),
            records: Vec::new(),
        }
    }

    fn push(
        &mut self,
        cycle: usize,
        inner_iter: usize,
        lambda: f64,
        resnorm: f64,
        x: &[f64],
        basis_count: usize,
    ) {
        let rel_error = self.ctx.x_true.map(|xt| norm2(&sub(x, xt)) / norm2(xt));
        let wall_ms = self.ctx.clock.map_or(0.0, |c| c() - self.start);
        let iteration = self.records.len() + 1;
        self.records.push(IterationRecord {
            cycle,
            inner_iter,
            iteration,
            lambda,
            projected_resnorm: resnorm,
            rel_error,
            basis_count,
            wall_ms,
        });
    }
}

struct GcvFlat {
    last: Option<f64>,
    flat_run: usize,
}

impl GcvFlat {
    fn new() -> Self {
        Self {
            last: None,
            flat_run: 0,
        }
    }

    fn observe(&mut self, stop: &InnerStop, value: f64) -> bool {
        let InnerStop::GcvFlat { tol, window } = *stop else {
            return false;
        };
        if let Some(prev) = self.last {
            if (value - prev).abs() <= tol * prev.abs() {
                self.flat_run += 1;
            } else {
                self.flat_run = 0;
            }
        }
        self.last = Some(value);
        self.flat_run >= window
    }
}

fn is_breakdown(r: &Result<()>) -> Result<bool> {
    match r {
        Ok(()) => Ok(false),
        Err(Error::Breakdown { .. }) => Ok(true),
        Err(e) => Err(e.clone()),
    }
}

/// Everything the compression step needs from one cycle.
struct CycleEnd {
    x: Vec<f64>,
    basis: Vec<Vec<f64>>,
    bhat: crate::Matrix,
    chat: Vec<f64>,
    y: Vec<f64>,
}

fn hybr_cycle(
    a: &dyn LinearOp,
    b: &[f64],
    config: &SolverConfig,
    ctx: &RunContext,
    selector: &mut LambdaSelector,
    log: &mut Logger,
    cycle: usize,
) -> Result<CycleEnd> {
    let mut st = gkb_init(a, b)?;
    let mut flat = GcvFlat::new();
    let mut j = 1;
    loop {
        let broke = is_breakdown(&st.extend_u(a, config.reorth))?;
        let bj = st.projected(j);
        let cj = st.rhs(j);
        let sp = Spectral::new(&bj, &cj)?;
        let lift = |y: &[f64]| st.lift(y);
        let sctx = SelectContext {
            lift: Some(&lift),
            x_true: ctx.x_true,
            noise_norm: ctx.noise_norm,
        };
        let sel = selector.select_spectral(&sp, &sctx)?;
        let x = st.lift(&sel.y);
        log.push(cycle, j, sel.lambda, sel.resnorm, &x, st.v.len());
        let flat_stop = flat.observe(&config.inner_stop, sp.gcv(sel.lambda));
        if broke
            || flat_stop
            || j == config.storage_limit
            || is_breakdown(&st.extend_v(a, config.reorth))?
        {
            return Ok(CycleEnd {
                x,
                basis: st.v,
                bhat: bj,
                chat: cj,
                y: sel.y,
            });
        }
        j += 1;
    }
}

/// Standard hybrid projection: GKB up to `storage_limit` vectors with λ
/// selected on every projected problem. Returns the last iterate.
pub fn hybr(
    a: &dyn LinearOp,
    b: &[f64],
    config: &SolverConfig,
    ctx: &RunContext,
) -> Result<SolveOutput> {
    config.validate()?;
    let mut selector = LambdaSelector::new(config.reg);
    let mut log = Logger::new(ctx);
    let end = hybr_cycle(a, b, config, ctx, &mut selector, &mut log, 0)?;
    Ok(SolveOutput {
        x: end.x,
        records: log.records,
        w: Vec::new(),
    })
}

/// Hybrid projection with recycling and compression.
///
/// Each cycle deflates the current solution into `W`, runs the recycling
/// bidiagonalization until `k + ℓ = storage_limit` (or the inner stop or a
/// breakdown fires), selects λ and solves at every step, then compresses
/// `[W Ṽ]` for the next cycle. With an empty `w_init` and zero `x_init`,
/// cycle 0 is plain HyBR. Cycle 0 counts towards `max_cycles`.
pub fn hybr_recycle(
    a: &dyn LinearOp,
    b: &[f64],
    w_init: &[Vec<f64>],
    x_init: &[f64],
    config: &SolverConfig,
    ctx: &RunContext,
) -> Result<SolveOutput> {
    config.validate()?;
    if x_init.len() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: x_init.len(),
        });
    }
    let limit = config.storage_limit;
    let mut selector = LambdaSelector::new(config.reg);
    let mut log = Logger::new(ctx);
    let mut w = w_init.to_vec();
    let mut x = x_init.to_vec();
    let mut cycle = 0;

    if w.is_empty() && norm2(&x) == 0.0 {
        let end = hybr_cycle(a, b, config, ctx, &mut selector, &mut log, 0)?;
        w = compress(&config.compress, &end.basis, &end.bhat, &end.chat, &end.y)?;
        x = end.x;
        cycle = 1;
    }

    while cycle < config.max_cycles {
        let wk = if norm2(&x) > 0.0 {
            build_wk(&w, &x)?
        } else {
            w.clone()
        };
        if wk.len() >= limit {
            return Err(Error::StorageExceeded {
                limit,
                needed: wk.len() + 1,
            });
        }
        let mut st = match recycle_init(a, b, &wk, config.reorth) {
            Ok(st) => st,
            Err(Error::NoExtensionNeeded) => break,
            Err(e) => return Err(e),
        };
        let k = st.k();
        let mut flat = GcvFlat::new();
        let mut l = 1;
        let end = loop {
            let broke = is_breakdown(&st.extend_u(a, config.reorth))?;
            let p = st.assemble_projected(l)?;
            let sp = Spectral::new(&p.bhat, &p.chat)?;
            let lift = |y: &[f64]| st.lift_solution(y).expect("projected size matches basis");
            let sctx = SelectContext {
                lift: Some(&lift),
                x_true: ctx.x_true,
                noise_norm: ctx.noise_norm,
            };
            let sel = selector.select_spectral(&sp, &sctx)?;
            let xn = st.lift_solution(&sel.y)?;
            log.push(cycle, l, sel.lambda, sel.resnorm, &xn, st.basis_count());
            let flat_stop = flat.observe(&config.inner_stop, sp.gcv(sel.lambda));
            if broke || flat_stop || k + l == limit || is_breakdown(&st.extend_v(a, config.reorth))?
            {
                let mut basis = st.w;
                basis.extend(st.vt.into_iter().take(l));
                break CycleEnd {
                    x: xn,
                    basis,
                    bhat: p.bhat,
                    chat: p.chat,
                    y: sel.y,
                };
            }
            l += 1;
        };
        w = compress(&config.compress, &end.basis, &end.bhat, &end.chat, &end.y)?;
        let prev = core::mem::replace(&mut x, end.x);
        cycle += 1;
        let pn = norm2(&prev);
        if pn > 0.0 && norm2(&sub(&x, &prev)) < CYCLE_TOL * pn {
            break;
        }
    }
    Ok(SolveOutput {
        x,
        records: log.records,
        w,
    })
}

/// One dataset of a multi-dataset problem.
#[derive(Clone, Copy)]
pub struct StreamData<'a> {
    pub op: &'a dyn LinearOp,
    pub b: &'a [f64],
    pub noise_norm: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Approach {
    /// Sequential HyBR-recycle, carrying the compressed basis forward.
    RecycleSequential = 1,
    /// HyBR on the last dataset only.
    LastDataset = 2,
    /// HyBR on all datasets stacked.
    AllData = 3,
    /// Average of independent HyBR solutions.
    Average = 4,
}

impl Approach {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Approach::RecycleSequential),
            2 => Ok(Approach::LastDataset),
            3 => Ok(Approach::AllData),
            4 => Ok(Approach::Average),
            _ => Err(Error::InvalidArgument("approach must be 1, 2, 3 or 4")),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Approach::RecycleSequential => "recycle-sequential",
            Approach::LastDataset => "last-dataset",
            Approach::AllData => "all-data",
            Approach::Average => "average",
        }
    }

    pub const ALL: [Approach; 4] = [
        Approach::RecycleSequential,
        Approach::LastDataset,
        Approach::AllData,
        Approach::Average,
    ];
}

#[derive(Clone, Debug)]
pub struct StreamOutput {
    pub x: Vec<f64>,
    /// Solution after each dataset (approaches 1 and 4) or the single solve.
    pub stages: Vec<Vec<f64>>,
    /// For approaches 1 and 4 the cycle index keeps increasing across datasets.
    pub records: Vec<IterationRecord>,
}

/// Uses the dataset's noise norm in noise-aware rules.
fn reg_for(reg: RegMethod, noise_norm: Option<f64>, rows: usize) -> RegMethod {
    match (reg, noise_norm) {
        (RegMethod::Dp { tau, .. }, Some(nn)) if nn > 0.0 => RegMethod::Dp {
            noise_norm: nn,
            tau,
        },
        (RegMethod::Upre { .. }, Some(nn)) if nn > 0.0 => RegMethod::Upre {
            noise_variance: nn * nn / rows as f64,
        },
        _ => reg,
    }
}

fn append_shifted(
    all: &mut Vec<IterationRecord>,
    recs: Vec<IterationRecord>,
    cycle_offset: usize,
) -> usize {
    let mut max_cycle = cycle_offset;
    for mut r in recs {
        r.cycle += cycle_offset;
        r.iteration = all.len() + 1;
        max_cycle = max_cycle.max(r.cycle + 1);
        all.push(r);
    }
    max_cycle
}

pub fn stream_solve(
    data: &[StreamData],
    config: &SolverConfig,
    approach: Approach,
    ctx: &RunContext,
) -> Result<StreamOutput> {
    let first = data.first().ok_or(Error::InvalidArgument("no datasets"))?;
    let n = first.op.ncols();
    if let Some(bad) = data.iter().find(|d| d.op.ncols() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bad.op.ncols(),
        });
    }
    let per = |d: &StreamData| {
        let cfg = SolverConfig {
            reg: reg_for(config.reg, d.noise_norm, d.op.nrows()),
            ..config.clone()
        };
        let c = RunContext {
            noise_norm: d.noise_norm,
            ..*ctx
        };
        (cfg, c)
    };
    let mut records = Vec::new();
    match approach {
        Approach::RecycleSequential => {
            let mut stages = Vec::with_capacity(data.len());
            let (cfg0, c0) = per(first);
            let first_cfg = SolverConfig {
                max_cycles: 1,
                ..cfg0
            };
            let out = hybr_recycle(first.op, first.b, &[], &vec![0.0; n], &first_cfg, &c0)?;
            let mut offset = append_shifted(&mut records, out.records, 0);
            let (mut w, mut x) = (out.w, out.x);
            stages.push(x.clone());
            for d in &data[1..] {
                let (cfg, c) = per(d);
                let out = hybr_recycle(d.op, d.b, &w, &x, &cfg, &c)?;
                offset = append_shifted(&mut records, out.records, offset);
                w = out.w;
                x = out.x;
                stages.push(x.clone());
            }
            Ok(StreamOutput { x, stages, records })
        }
        Approach::LastDataset => {
            let d = data.last().expect("nonempty");
            let (cfg, c) = per(d);
            let out = hybr(d.op, d.b, &cfg, &c)?;
            Ok(StreamOutput {
                stages: vec![out.x.clone()],
                x: out.x,
                records: out.records,
            })
        }
        Approach::AllData => {
            let ops: Vec<&dyn LinearOp> = data.iter().map(|d| d.op).collect();
            let stacked = stack(ops)?;
            let b: Vec<f64> = data.iter().flat_map(|d| d.b.iter().copied()).collect();
            let nn = if data.iter().all(|d| d.noise_norm.is_some()) {
                Some(libm::sqrt(
                    data.iter()
                        .map(|d| {
                            let s = d.noise_norm.unwrap_or(0.0);
                            s * s
                        })
                        .sum::<f64>(),
                ))
            } else {
                None
            };
            let all = StreamData {
                op: &stacked,
                b: &b,
                noise_norm: nn,
            };
            let (cfg, c) = per(&all);
            let out = hybr(&stacked, &b, &cfg, &c)?;
            Ok(StreamOutput {
                stages: vec![out.x.clone()],
                x: out.x,
                records: out.records,
            })
        }
        Approach::Average => {
            let mut stages = Vec::with_capacity(data.len());
            let mut offset = 0;
            for d in data {
                let (cfg, c) = per(d);
                let out = hybr(d.op, d.b, &cfg, &c)?;
                offset = append_shifted(&mut records, out.records, offset);
                stages.push(out.x);
            }
            let mut x = vec![0.0; n];
            for s in &stages {
                crate::linalg::axpy(1.0 / stages.len() as f64, s, &mut x);
            }
            Ok(StreamOutput { x, stages, records })
        }
    }
}

/// `C_HyBR(j) = 2j + (N + 2) j + M`.
pub fn c_hybr(j: usize, n: usize, m_rows: usize) -> f64 {
    let j = j as f64;
    2.0 * j + (n as f64 + 2.0) * j + m_rows as f64
}

/// `C_recycle(k, ℓ) = k²/2 + (N + M + 2) k + 2ℓ + (N + 1) ℓ + k ℓ`.
pub fn c_recycle(k: usize, l: usize, n: usize, m_rows: usize) -> f64 {
    let (k, l, n, mr) = (k as f64, l as f64, n as f64, m_rows as f64);
    k * k / 2.0 + (n + mr + 2.0) * k + 2.0 * l + (n + 1.0) * l + k * l
}

/// `m²/2 + (N + M + 2) m`, the recycling cost with `k = m`.
pub fn recycle_bound(m: usize, n: usize, m_rows: usize) -> f64 {
    let (m, n, mr) = (m as f64, n as f64, m_rows as f64);
    m * m / 2.0 + (n + mr + 2.0) * m
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct StorageCosts {
    pub c_hybr: f64,
    pub c_recycle: f64,
    pub bound: f64,
}

/// Costs of `j = k + ℓ` HyBR iterations versus recycling with `k`, `ℓ`.
pub fn storage_costs(k: usize, l: usize, n: usize, m_rows: usize) -> StorageCosts {
    StorageCosts {
        c_hybr: c_hybr(k + l, n, m_rows),
        c_recycle: c_recycle(k, l, n, m_rows),
        bound: recycle_bound(k + l, n, m_rows),
    }
}
