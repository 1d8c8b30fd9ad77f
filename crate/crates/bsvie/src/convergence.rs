//! Convergence-order estimation and the grid/dimension studies.
//!
//! Orders are fitted by ordinary least squares in (log h, log metric), over
//! all provided grid sizes (no point dropping). Squared metrics (the loss,
//! Err_Y, Err_Z) are also exposed on the root-mean-square scale, whose
//! slope is half the raw slope: solution-error orders are conventionally
//! quoted on the RMS scale, loss orders on the raw scale.

use crate::error::Result;
use crate::exec::ExecMode;
use crate::grid::TimeGrid;
use crate::metrics::{compute_errors, ErrorReport, EvalSource};
use crate::problem::ProblemSpec;
use crate::rng::streams;
use crate::rollout::{rollout, FieldSource, RolloutOptions};
use crate::sde::PathBatch;
use crate::trainer::{train, TrainConfig};

/// Least-squares line fit in log-log space.
#[derive(Debug, Clone)]
pub struct ConvergenceFit {
    pub grid_sizes: Vec<usize>,
    pub values: Vec<f64>,
    /// Slope of log(value) against log(h).
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fit log(value) = slope * log(h) + intercept by ordinary least squares.
pub fn fit_order(horizon: f64, grid_sizes: &[usize], values: &[f64]) -> ConvergenceFit {
    assert!(grid_sizes.len() >= 3, "need at least 3 grid sizes for a fit");
    assert_eq!(grid_sizes.len(), values.len());
    assert!(values.iter().all(|&v| v > 0.0), "metrics must be positive to fit");
    let xs: Vec<f64> = grid_sizes
        .iter()
        .map(|&n| (horizon / n as f64).ln())
        .collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let p = slope * x + intercept;
            (y - p) * (y - p)
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    ConvergenceFit {
        grid_sizes: grid_sizes.to_vec(),
        values: values.to_vec(),
        slope,
        intercept,
        r_squared,
    }
}

/// Closed-form plug-in residual loss across grid sizes (no training).
///
/// `mixed_forward` evaluates the free term on the exact forward while the
/// rollout itself runs on the Euler states, isolating the forward
/// discretization error on top of the quadrature error. Without it the
/// construction is the pure plug-in residual on the problem's own forward.
pub fn plugin_loss_curve(
    problem: &ProblemSpec,
    grid_sizes: &[usize],
    m: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid_sizes.len());
    for &n in grid_sizes {
        let grid = TimeGrid::new(problem.horizon, n);
        let batch = PathBatch::generate(problem, grid, m, seed, streams::EVALUATION, mode)?;
        let loss = rollout(
            problem,
            grid,
            &batch,
            FieldSource::ClosedForm,
            RolloutOptions::loss_only(mode),
        )?
        .loss;
        out.push(loss);
    }
    Ok(out)
}

/// Plug-in Err_Y / Err_Z / Err_T across grid sizes (closed-form bypass):
/// the error metrics with exact-forward references and closed-form fields
/// on the Euler states. For a forward with strong order 1/2 the Err_Y and
/// Err_Z values scale like h (RMS order 1/2).
pub fn plugin_error_curve(
    problem: &ProblemSpec,
    grid_sizes: &[usize],
    m: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<ErrorReport>> {
    grid_sizes
        .iter()
        .map(|&n| {
            compute_errors(
                EvalSource::ClosedFormBypass,
                problem,
                TimeGrid::new(problem.horizon, n),
                m,
                seed,
                mode,
            )
        })
        .collect()
}

/// One row of the trained convergence study.
#[derive(Debug, Clone)]
pub struct ConvergencePoint {
    pub n_steps: usize,
    pub report: ErrorReport,
}

/// Train at each grid size and measure the error metrics at fixed M.
pub fn convergence_study(
    problem: &ProblemSpec,
    grid_sizes: &[usize],
    base: &TrainConfig,
    m_eval: usize,
    eval_seed: u64,
) -> Result<Vec<ConvergencePoint>> {
    let mut rows = Vec::with_capacity(grid_sizes.len());
    for &n in grid_sizes {
        let grid = TimeGrid::new(problem.horizon, n);
        let out = train(base, problem, grid)?;
        let report = compute_errors(
            EvalSource::Trained(&out.params),
            problem,
            grid,
            m_eval,
            eval_seed,
            base.mode,
        )?;
        rows.push(ConvergencePoint { n_steps: n, report });
    }
    Ok(rows)
}

/// One row of the dimension-scaling study.
#[derive(Debug, Clone)]
pub struct DimensionRow {
    pub dim: usize,
    pub err_y: f64,
    pub err_z: f64,
    pub err_t: f64,
    /// Wall-clock of the train call alone, seconds (informational).
    pub train_seconds: f64,
    pub seed: u64,
}

/// Train the multiplicative-noise family at several dimensions.
pub fn dimension_study(
    dims: &[usize],
    base: &TrainConfig,
    grid_n: usize,
    m_eval: usize,
    eval_seed: u64,
) -> Result<Vec<DimensionRow>> {
    let mut rows = Vec::with_capacity(dims.len());
    for &d in dims {
        let problem = crate::problem::example_1b(&crate::problem::ProblemOverrides {
            dim: Some(d),
            ..Default::default()
        });
        let grid = TimeGrid::new(problem.horizon, grid_n);
        let t0 = std::time::Instant::now();
        let out = train(base, &problem, grid)?;
        let train_seconds = t0.elapsed().as_secs_f64();
        let report = compute_errors(
            EvalSource::Trained(&out.params),
            &problem,
            grid,
            m_eval,
            eval_seed,
            base.mode,
        )?;
        rows.push(DimensionRow {
            dim: d,
            err_y: report.err_y,
            err_z: report.err_z,
            err_t: report.err_t,
            train_seconds,
            seed: base.seed,
        });
    }
    Ok(rows)
}
