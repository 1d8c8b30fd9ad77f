//! Simulation error metrics against closed-form references.
//!
//! For M evaluation paths on an N-step grid:
//!
//! ```text
//! Err_Y = (1/M) sum_m sum_{n=0}^{N-1} |Y_ref(t_n) - Y_theta(t_n)|^2 h
//! Err_Z = (1/M) sum_m sum_{k<=n<N}    |Z_ref(t_k,t_n) - Z_theta(t_k,t_n)|^2 h^2
//! Err_T = post-optimization rollout loss on the same fresh paths
//! ```
//!
//! References evaluate the closed forms on the exact forward where a sampler
//! exists (additive: the Euler states are already exact; geometric: the
//! log-space closed form on the same increments); approximations evaluate
//! the trained fields on the Euler states.

use crate::error::{Error, Result};
use crate::exec::{chunk_ranges, map_chunks, ExecMode};
use crate::fields::{ClosedFormProvider, FieldProvider, NetProvider};
use crate::grid::TimeGrid;
use crate::net::NetworkParams;
use crate::problem::ProblemSpec;
use crate::rng::streams;
use crate::rollout::{rollout, FieldSource, RolloutOptions};
use crate::sde::{exact_forward, PathBatch};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub err_y: f64,
    pub err_z: f64,
    pub err_t: f64,
    pub n_steps: usize,
    pub m_paths: usize,
    pub problem_id: String,
    pub seed: u64,
}

/// Where the approximate fields come from when computing errors.
#[derive(Clone, Copy)]
pub enum EvalSource<'a> {
    Trained(&'a NetworkParams),
    /// Closed forms on the Euler states; isolates pure discretization error.
    ClosedFormBypass,
}

/// Compute Err_Y / Err_Z / Err_T on fresh evaluation paths.
pub fn compute_errors(
    source: EvalSource,
    problem: &ProblemSpec,
    grid: TimeGrid,
    m: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<ErrorReport> {
    if !problem.closed_form_available {
        return Err(Error::NoClosedForm(problem.id.clone()));
    }
    if problem.coupled {
        return compute_errors_coupled(source, problem, grid, m, seed, mode);
    }
    let batch = PathBatch::generate(problem, grid, m, seed, streams::EVALUATION, mode)?;
    // For the additive forward the Euler states are already the exact
    // solution; use them directly so bypass references coincide bitwise.
    let x_ref = if problem.exact_forward == crate::problem::ExactForward::Abm {
        batch.x.clone().expect("decoupled batch has states")
    } else {
        exact_forward(problem, grid, &batch.dw, m)
            .unwrap_or_else(|| batch.x.clone().expect("decoupled batch has states"))
    };

    let n = grid.n_steps();
    let h = grid.h();
    let d = problem.state_dim;
    let ell = problem.noise_dim;

    let per_chunk: Vec<(f64, f64)> = map_chunks(mode, m, |range| {
        let mc = range.len();
        let mut tape = Tape::new();
        let bound;
        let net_provider;
        let cf_euler;
        let approx: &dyn FieldProvider = match source {
            EvalSource::Trained(params) => {
                bound = params.bind(&mut tape, false);
                net_provider = NetProvider { nets: &bound };
                &net_provider
            }
            EvalSource::ClosedFormBypass => {
                cf_euler = ClosedFormProvider { problem };
                &cf_euler
            }
        };
        let reference = ClosedFormProvider { problem };

        // Stacked Euler and exact states for steps 0..N-1.
        let mut xe_data = Vec::with_capacity(n * mc * d);
        let mut xr_data = Vec::with_capacity(n * mc * d);
        for k in 0..n {
            xe_data.extend_from_slice(batch.x_block(k, range.clone()).data());
            for i in range.clone() {
                let row = (k * m + i) * d;
                xr_data.extend_from_slice(&x_ref.data()[row..row + d]);
            }
        }
        let x_euler = tape.constant(Tensor::matrix(n * mc, d, xe_data));
        let x_exact = tape.constant(Tensor::matrix(n * mc, d, xr_data));
        let t_stack = {
            let mut data = Vec::with_capacity(n * mc);
            for k in 0..n {
                data.extend(std::iter::repeat_n(grid.t(k), mc));
            }
            tape.constant(Tensor::matrix(n * mc, 1, data))
        };

        // Err_Y summand over all (path, n<N).
        let y_approx = approx.y(&mut tape, t_stack, x_euler);
        let y_ref = reference.y(&mut tape, t_stack, x_exact);
        let sum_y: f64 = tape
            .value(y_ref)
            .data()
            .iter()
            .zip(tape.value(y_approx).data())
            .map(|(r, a)| (r - a) * (r - a))
            .sum();

        // Err_Z over the triangle k <= n: for each evaluation index k one
        // stacked call over n = k..N-1, mirroring the rollout batching.
        let mut sum_z = 0.0;
        for k in 0..n {
            let lo = k * mc;
            let hi = n * mc;
            let rows = hi - lo;
            let x_e_s = tape.slice_rows(x_euler, lo, hi);
            let x_r_s = tape.slice_rows(x_exact, lo, hi);
            let s_col = tape.slice_rows(t_stack, lo, hi);
            let t_col = tape.constant(Tensor::full(vec![rows, 1], grid.t(k)));
            let x_e_t = if problem.reduced_z {
                x_e_s
            } else {
                let xk = tape.slice_rows(x_euler, lo, lo + mc);
                tape.tile_rows(xk, n - k)
            };
            let x_r_t = if problem.reduced_z {
                x_r_s
            } else {
                let xk = tape.slice_rows(x_exact, lo, lo + mc);
                tape.tile_rows(xk, n - k)
            };
            let z_approx = approx.z(&mut tape, t_col, s_col, x_e_t, x_e_s);
            let z_ref = reference.z(&mut tape, t_col, s_col, x_r_t, x_r_s);
            sum_z += tape
                .value(z_ref)
                .data()
                .iter()
                .zip(tape.value(z_approx).data())
                .map(|(r, a)| (r - a) * (r - a))
                .sum::<f64>();
        }
        let _ = ell;
        (sum_y, sum_z)
    });

    let ranges = chunk_ranges(m);
    let mut sum_y = 0.0;
    let mut sum_z = 0.0;
    for ((sy, sz), _r) in per_chunk.into_iter().zip(ranges) {
        sum_y += sy;
        sum_z += sz;
    }

    let err_t = match source {
        EvalSource::Trained(params) => {
            rollout(
                problem,
                grid,
                &batch,
                FieldSource::Networks(params),
                RolloutOptions::loss_only(mode),
            )?
            .loss
        }
        EvalSource::ClosedFormBypass => {
            rollout(
                problem,
                grid,
                &batch,
                FieldSource::ClosedForm,
                RolloutOptions::loss_only(mode),
            )?
            .loss
        }
    };

    Ok(ErrorReport {
        err_y: sum_y * h / m as f64,
        err_z: sum_z * h * h / m as f64,
        err_t,
        n_steps: n,
        m_paths: m,
        problem_id: problem.id.clone(),
        seed,
    })
}

/// Coupled variant: the approximate states come from the network-coupled
/// simulation, the reference states from the semi-analytic forward (closed
/// forms substituted into the coefficients), both on common increments.
fn compute_errors_coupled(
    source: EvalSource,
    problem: &ProblemSpec,
    grid: TimeGrid,
    m: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<ErrorReport> {
    let n = grid.n_steps();
    let h = grid.h();
    let d = problem.state_dim;
    let batch = PathBatch::generate(problem, grid, m, seed, streams::EVALUATION, mode)?;

    let per_chunk: Vec<Result<(f64, f64)>> = map_chunks(mode, m, |range| {
        let mc = range.len();
        let mut tape = Tape::new();
        let bound;
        let net_provider;
        let cf;
        let approx: &dyn FieldProvider = match source {
            EvalSource::Trained(params) => {
                bound = params.bind(&mut tape, false);
                net_provider = NetProvider { nets: &bound };
                &net_provider
            }
            EvalSource::ClosedFormBypass => {
                cf = ClosedFormProvider { problem };
                &cf
            }
        };
        let reference = ClosedFormProvider { problem };
        let dw_blocks: Vec<Tensor> = (0..n).map(|k| batch.dw_block(k, range.clone())).collect();
        let sim_a =
            crate::sde::simulate_chunk(&mut tape, problem, grid, Some(approx), &dw_blocks, range.start)?;
        let sim_r =
            crate::sde::simulate_chunk(&mut tape, problem, grid, Some(&reference), &dw_blocks, range.start)?;

        let mut sum_y = 0.0;
        let mut sum_z = 0.0;
        for k in 0..n {
            let t_col = tape.constant(Tensor::full(vec![mc, 1], grid.t(k)));
            let ya = approx.y(&mut tape, t_col, sim_a.x[k]);
            let yr = reference.y(&mut tape, t_col, sim_r.x[k]);
            sum_y += tape
                .value(yr)
                .data()
                .iter()
                .zip(tape.value(ya).data())
                .map(|(r, a)| (r - a) * (r - a))
                .sum::<f64>();
            for s_idx in k..n {
                let s_col = tape.constant(Tensor::full(vec![mc, 1], grid.t(s_idx)));
                let za = approx.z(&mut tape, t_col, s_col, sim_a.x[k], sim_a.x[s_idx]);
                let zr = reference.z(&mut tape, t_col, s_col, sim_r.x[k], sim_r.x[s_idx]);
                sum_z += tape
                    .value(zr)
                    .data()
                    .iter()
                    .zip(tape.value(za).data())
                    .map(|(r, a)| (r - a) * (r - a))
                    .sum::<f64>();
            }
        }
        let _ = d;
        Ok((sum_y, sum_z))
    });

    let mut sum_y = 0.0;
    let mut sum_z = 0.0;
    for res in per_chunk {
        let (sy, sz) = res?;
        sum_y += sy;
        sum_z += sz;
    }

    let err_t = match source {
        EvalSource::Trained(params) => {
            rollout(
                problem,
                grid,
                &batch,
                FieldSource::Networks(params),
                RolloutOptions::loss_only(mode),
            )?
            .loss
        }
        EvalSource::ClosedFormBypass => {
            rollout(
                problem,
                grid,
                &batch,
                FieldSource::ClosedForm,
                RolloutOptions::loss_only(mode),
            )?
            .loss
        }
    };

    Ok(ErrorReport {
        err_y: sum_y * h / m as f64,
        err_z: sum_z * h * h / m as f64,
        err_t,
        n_steps: n,
        m_paths: m,
        problem_id: problem.id.clone(),
        seed,
    })
}
