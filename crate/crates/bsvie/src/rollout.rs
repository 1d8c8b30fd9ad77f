//! The discrete variational objective.
//!
//! For every evaluation index n the two-clock rollout accumulates
//!
//! ```text
//! S(n) = Y_n - sum_{k=n}^{N-1} f(t_n, t_k, X_k, Y_k, Z_{n,k}, Z_{k,k}) h
//!            + sum_{k=n}^{N-1} Z_{n,k}^T dW_k
//! ```
//!
//! and the loss is the h-weighted mean-squared free-term residual
//! `(1/M) sum_{m,n} |S(n) - g(t_n, X_n, X_N)|^2 h`. The h factor makes loss
//! values comparable across grid resolutions.
//!
//! Control evaluations are batched: for fixed n, all k >= n go through the
//! network in one call on a stacked block of rows. Diagonal values Z_{k,k}
//! are evaluated once per k and reused across n (they do not depend on n).
//! Cost is O(M N^2) control-field rows per loss evaluation.

use crate::error::{Error, Result};
use crate::exec::{chunk_ranges, map_chunks, ExecMode};
use crate::fields::{ClosedFormProvider, FieldProvider, NetProvider};
use crate::grid::TimeGrid;
use crate::net::NetworkParams;
use crate::problem::ProblemSpec;
use crate::sde::{simulate_chunk, PathBatch};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Where the rollout takes its (Y, Z) fields from.
#[derive(Clone, Copy)]
pub enum FieldSource<'a> {
    Networks(&'a NetworkParams),
    /// The problem's closed-form pair (residual oracle, no parameters).
    ClosedForm,
}

#[derive(Debug, Clone, Copy)]
pub struct RolloutOptions {
    /// Accumulate parameter gradients (networks source only).
    pub grads: bool,
    /// Assemble per-path value matrices in the result.
    pub values: bool,
    pub mode: ExecMode,
}

impl RolloutOptions {
    pub fn loss_only(mode: ExecMode) -> Self {
        RolloutOptions {
            grads: false,
            values: false,
            mode,
        }
    }

    pub fn training(mode: ExecMode) -> Self {
        RolloutOptions {
            grads: true,
            values: false,
            mode,
        }
    }

    pub fn reporting(mode: ExecMode) -> Self {
        RolloutOptions {
            grads: false,
            values: true,
            mode,
        }
    }
}

/// Output of one rollout over a path batch.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    /// (1/M) sum over paths and evaluation indices of residual^2 * h.
    pub loss: f64,
    /// Free-term residuals, [M x N] path-major (when `values` requested).
    pub residuals: Option<Tensor>,
    /// Value-field outputs at every grid time, [M x (N+1)] path-major.
    pub y_values: Option<Tensor>,
    /// Diagonal control values, step-major [N*M x ell].
    pub z_diag: Option<Tensor>,
    /// d loss / d theta in canonical parameter order (when `grads`).
    pub gradients: Option<Vec<Tensor>>,
}

struct ChunkOut {
    sum_sq: f64,
    residuals: Option<Vec<f64>>, // [m x N] path-major
    y_values: Option<Vec<f64>>,  // [m x (N+1)] path-major
    z_diag: Option<Vec<f64>>,    // [N x m x ell] step-major
    grads: Option<Vec<Tensor>>,
}

/// Evaluate the rollout loss (and optionally gradients / value matrices)
/// over a path batch. Work is chunked over paths; chunk results are reduced
/// in fixed order, so the outcome is independent of the thread count.
pub fn rollout(
    problem: &ProblemSpec,
    grid: TimeGrid,
    batch: &PathBatch,
    source: FieldSource,
    options: RolloutOptions,
) -> Result<RolloutResult> {
    let n = grid.n_steps();
    let m_total = batch.m_paths;
    assert_eq!(batch.grid, grid, "batch was generated on a different grid");
    assert!(m_total > 0, "empty path batch");
    if options.grads && matches!(source, FieldSource::ClosedForm) {
        return Err(Error::Contract(
            "closed-form rollout has no parameters to differentiate".into(),
        ));
    }

    let chunk_results: Vec<Result<ChunkOut>> = map_chunks(options.mode, m_total, |range| {
        rollout_chunk(problem, grid, batch, source, options, range)
    });

    let h = grid.h();
    let mut sum_sq = 0.0;
    let ranges = chunk_ranges(m_total);
    let mut residuals = options.values.then(|| vec![0.0; m_total * n]);
    let mut y_values = options.values.then(|| vec![0.0; m_total * (n + 1)]);
    let want_z = options.values && (problem.coupled || problem.driver_uses_z_diag());
    let mut z_diag = want_z.then(|| vec![0.0; n * m_total * problem.noise_dim]);
    let mut grads: Option<Vec<Tensor>> = None;

    for (res, range) in chunk_results.into_iter().zip(ranges) {
        let out = res?;
        sum_sq += out.sum_sq;
        if let (Some(dst), Some(src)) = (residuals.as_mut(), out.residuals.as_ref()) {
            dst[range.start * n..range.end * n].copy_from_slice(src);
        }
        if let (Some(dst), Some(src)) = (y_values.as_mut(), out.y_values.as_ref()) {
            dst[range.start * (n + 1)..range.end * (n + 1)].copy_from_slice(src);
        }
        if let (Some(dst), Some(src)) = (z_diag.as_mut(), out.z_diag.as_ref()) {
            let ell = problem.noise_dim;
            let mc = range.len();
            for step in 0..n {
                let d0 = (step * m_total + range.start) * ell;
                let s0 = step * mc * ell;
                dst[d0..d0 + mc * ell].copy_from_slice(&src[s0..s0 + mc * ell]);
            }
        }
        if let Some(chunk_grads) = out.grads {
            match grads.as_mut() {
                None => grads = Some(chunk_grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(chunk_grads) {
                        for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                            *av += gv;
                        }
                    }
                }
            }
        }
    }

    // Loss and gradients carry the h Riemann weight and the 1/M path mean.
    let scale = h / m_total as f64;
    if let Some(gs) = grads.as_mut() {
        for g in gs.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }

    Ok(RolloutResult {
        loss: sum_sq * scale,
        residuals: residuals.map(|d| Tensor::matrix(m_total, n, d)),
        y_values: y_values.map(|d| Tensor::matrix(m_total, n + 1, d)),
        z_diag: z_diag.map(|d| Tensor::matrix(n * m_total, problem.noise_dim, d)),
        gradients: grads,
    })
}

fn rollout_chunk(
    problem: &ProblemSpec,
    grid: TimeGrid,
    batch: &PathBatch,
    source: FieldSource,
    options: RolloutOptions,
    range: std::ops::Range<usize>,
) -> Result<ChunkOut> {
    let n = grid.n_steps();
    let h = grid.h();
    let m = range.len();
    let ell = problem.noise_dim;
    let mut tape = Tape::new();

    let bound = match source {
        FieldSource::Networks(params) => Some(params.bind(&mut tape, options.grads)),
        FieldSource::ClosedForm => None,
    };
    let net_provider;
    let cf_provider;
    let provider: &dyn FieldProvider = match bound.as_ref() {
        Some(nets) => {
            net_provider = NetProvider { nets };
            &net_provider
        }
        None => {
            cf_provider = ClosedFormProvider { problem };
            &cf_provider
        }
    };

    // Stacked per-step time columns: block k holds t_k.
    let s_col_full = {
        let mut data = Vec::with_capacity(n * m);
        for k in 0..n {
            data.extend(std::iter::repeat_n(grid.t(k), m));
        }
        tape.constant(Tensor::matrix(n * m, 1, data))
    };
    let dw_stack = {
        let mut data = Vec::with_capacity(n * m * ell);
        for k in 0..n {
            data.extend_from_slice(batch.dw_block(k, range.clone()).data());
        }
        tape.constant(Tensor::matrix(n * m, ell, data))
    };

    // Forward states, value field, and diagonal control as stacked blocks.
    let needs_z_diag = problem.coupled || problem.driver_uses_z_diag();
    let (x_stack, y_stack, z_diag_stack) = if problem.coupled {
        let dw_blocks: Vec<Tensor> = (0..n).map(|k| batch.dw_block(k, range.clone())).collect();
        let sim = simulate_chunk(&mut tape, problem, grid, Some(provider), &dw_blocks, range.start)?;
        let x_stack = tape.concat_rows(&sim.x);
        // Terminal value-field output, for reporting completeness.
        let t_term = tape.constant(Tensor::full(vec![m, 1], grid.t(n)));
        let y_term = provider.y(&mut tape, t_term, sim.x[n]);
        let mut y_blocks = sim.y.clone();
        y_blocks.push(y_term);
        let y_stack = tape.concat_rows(&y_blocks);
        let z_diag_stack = tape.concat_rows(&sim.z_diag);
        (x_stack, y_stack, z_diag_stack)
    } else {
        let mut x_data = Vec::with_capacity((n + 1) * m * problem.state_dim);
        for k in 0..=n {
            x_data.extend_from_slice(batch.x_block(k, range.clone()).data());
        }
        let x_stack = tape.constant(Tensor::matrix((n + 1) * m, problem.state_dim, x_data));
        let t_col_all = {
            let mut data = Vec::with_capacity((n + 1) * m);
            for k in 0..=n {
                data.extend(std::iter::repeat_n(grid.t(k), m));
            }
            tape.constant(Tensor::matrix((n + 1) * m, 1, data))
        };
        let y_stack = provider.y(&mut tape, t_col_all, x_stack);
        let z_diag_stack = if needs_z_diag {
            let x_path = tape.slice_rows(x_stack, 0, n * m);
            provider.z(&mut tape, s_col_full, s_col_full, x_path, x_path)
        } else {
            // Placeholder passed to drivers that ignore the diagonal slot.
            tape.constant(Tensor::zeros(vec![n * m, ell]))
        };
        (x_stack, y_stack, z_diag_stack)
    };

    let x_term = tape.slice_rows(x_stack, n * m, (n + 1) * m);
    let mut total: Option<Var> = None;
    let mut residuals = options.values.then(|| vec![0.0; m * n]);

    for eval_n in 0..n {
        let lo = eval_n * m;
        let hi = n * m;
        let rows = hi - lo;
        let x_s = tape.slice_rows(x_stack, lo, hi);
        let y_s = tape.slice_rows(y_stack, lo, hi);
        let z_ss = tape.slice_rows(z_diag_stack, lo, hi);
        let s_col = tape.slice_rows(s_col_full, lo, hi);
        let t_n = grid.t(eval_n);
        let t_col = tape.constant(Tensor::full(vec![rows, 1], t_n));
        let x_n = tape.slice_rows(x_stack, lo, lo + m);

        let x_t_slot = if problem.reduced_z {
            x_s
        } else {
            tape.tile_rows(x_n, n - eval_n)
        };
        let z_ts = provider.z(&mut tape, t_col, s_col, x_t_slot, x_s);

        // Martingale term: per-block sums of Z . dW.
        let dw_s = tape.slice_rows(dw_stack, lo, hi);
        let prod = tape.mul(z_ts, dw_s);
        let zdw = tape.row_sum(prod);
        let zdw_blocks = tape.reshape(zdw, vec![n - eval_n, m]);
        let ones = tape.constant(Tensor::matrix(1, n - eval_n, vec![1.0; n - eval_n]));
        let mart = tape.matmul(ones, zdw_blocks);

        // Driver term, h-weighted.
        let f_rows = problem.driver(&mut tape, t_n, s_col, x_s, y_s, z_ts, z_ss);
        let f_blocks = tape.reshape(f_rows, vec![n - eval_n, m]);
        let f_sum = tape.matmul(ones, f_blocks);
        let f_term = tape.scale(f_sum, h);

        let y_n = tape.slice_rows(y_stack, lo, lo + m);
        let y_n_row = tape.reshape(y_n, vec![1, m]);
        let after_f = tape.sub(y_n_row, f_term);
        let script_y = tape.add(after_f, mart);

        let g = problem.free_term(&mut tape, t_n, x_n, x_term);
        let g_row = tape.reshape(g, vec![1, m]);
        let res = tape.sub(script_y, g_row);

        {
            let vals = tape.value(res).data();
            if let Some(p) = vals.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteResidual {
                    path: range.start + p,
                    index: eval_n,
                });
            }
            if let Some(store) = residuals.as_mut() {
                for (i, v) in vals.iter().enumerate() {
                    store[i * n + eval_n] = *v;
                }
            }
        }

        let sq = tape.square(res);
        let s_n = tape.sum(sq);
        total = Some(match total {
            None => s_n,
            Some(acc) => tape.add(acc, s_n),
        });
    }

    let total = total.expect("grid has at least one step");
    let sum_sq = tape.value(total).item();

    let grads = if options.grads {
        let FieldSource::Networks(params) = source else {
            unreachable!()
        };
        let grad_map = tape.backward(total)?;
        let leaves = bound_leaves(bound.as_ref().expect("networks bound"));
        let mut out = Vec::with_capacity(leaves.len());
        for ((name, tensor), var) in params.named().iter().zip(leaves) {
            match grad_map.get(var) {
                Some(g) => {
                    if !g.all_finite() {
                        return Err(Error::NonFiniteGradient { name: name.clone() });
                    }
                    out.push(g.clone());
                }
                None => out.push(Tensor::zeros(tensor.shape().to_vec())),
            }
        }
        Some(out)
    } else {
        None
    };

    let y_values = options.values.then(|| {
        let y = tape.value(y_stack);
        let mut out = vec![0.0; m * (n + 1)];
        for k in 0..=n {
            for i in 0..m {
                out[i * (n + 1) + k] = y.data()[k * m + i];
            }
        }
        out
    });
    let z_diag_vals = (options.values && needs_z_diag)
        .then(|| tape.value(z_diag_stack).data().to_vec());

    Ok(ChunkOut {
        sum_sq,
        residuals,
        y_values,
        z_diag: z_diag_vals,
        grads,
    })
}

fn bound_leaves(bound: &crate::net::BoundNets) -> Vec<Var> {
    let mut vars = Vec::new();
    for mlp in [&bound.y, &bound.z] {
        vars.extend(mlp.weights.iter().copied());
        vars.extend(mlp.biases.iter().copied());
    }
    vars
}

/// Riemann-sum loss weighting on a precomputed residual matrix [M x N]:
/// (1/M) sum residual^2 * h.
pub fn loss_weighting(residuals: &Tensor, h: f64) -> f64 {
    let m = residuals.rows() as f64;
    residuals.data().iter().map(|r| r * r).sum::<f64>() * h / m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::ExecMode;
    use crate::net::{NetConfig, NetworkParams};
    use crate::problem::{example_1a, example_1b, example_2, example_3, ProblemOverrides};
    use crate::rng::streams;

    fn batch_for(p: &ProblemSpec, grid: TimeGrid, m: usize, seed: u64) -> PathBatch {
        PathBatch::generate(p, grid, m, seed, streams::TRAIN, ExecMode::Sequential).unwrap()
    }

    #[test]
    fn constant_fields_give_analytic_loss() {
        // f == 0 is not available in the catalog, so emulate the spec case
        // with a zero-parameter network on a zero-increment, zero-drift
        // setup: residual = y0_bias - g.
        // Use the additive problem with mu scaled to zero via x0 and zeroed
        // increments: g(t, x_T) = t sin(5 xbar_T) with xbar_T fixed.
        let mut p = example_1a(&ProblemOverrides::default());
        if let crate::problem::Dynamics::AdditiveSine { mu, .. } = &mut p.dynamics {
            *mu = vec![0.0; 5];
        }
        let grid = TimeGrid::new(1.0, 10);
        let m = 8;
        let mut batch = batch_for(&p, grid, m, 1);
        batch.dw = Tensor::zeros(vec![10 * m, 5]);
        batch.x = Some(crate::sde::euler_decoupled(&p, grid, &batch.dw, m, ExecMode::Sequential).unwrap());

        // All-zero networks: Y == c0 == 0, Z == 0. Driver: f = const sin term.
        // With x frozen at x0 = 1, xbar = 1.
        let params = NetworkParams::zeros(5, 5, NetConfig::default());
        let r = rollout(
            &p,
            grid,
            &batch,
            FieldSource::Networks(&params),
            RolloutOptions::reporting(ExecMode::Sequential),
        )
        .unwrap();
        // residual(n) = -sum_k f(t_n,t_k) h - t_n sin(5)
        // f(t_n, t_k) = t_n * 25/(2*25) * sin(5) * 5.1 = t_n * 2.55 sin(5)
        let h = grid.h();
        let mut expected = 0.0;
        for n in 0..10 {
            let t_n = grid.t(n);
            let f_sum: f64 = (n..10).map(|_| t_n * 2.55 * (5.0f64).sin() * h).sum();
            let res = -f_sum - t_n * (5.0f64).sin();
            expected += res * res * h;
        }
        assert!((r.loss - expected).abs() < 1e-12, "{} vs {}", r.loss, expected);
    }

    #[test]
    fn single_step_rollout_is_hand_computable() {
        // N=1: S(0) = Y_0 - f h + Z_{0,0} dW_0; with zero nets both fields
        // vanish, so residual = -f(0,0,x0)h - g(0, X_1) and for the additive
        // problem f(t=0,...) = 0 and g(0, x) = 0: loss = 0.
        let p = example_1a(&ProblemOverrides::default());
        let grid = TimeGrid::new(1.0, 1);
        let batch = batch_for(&p, grid, 4, 2);
        let params = NetworkParams::zeros(5, 5, NetConfig::default());
        let r = rollout(
            &p,
            grid,
            &batch,
            FieldSource::Networks(&params),
            RolloutOptions::loss_only(ExecMode::Sequential),
        )
        .unwrap();
        assert!(r.loss.abs() < 1e-30);
    }

    #[test]
    fn loss_weighting_riemann_convention() {
        // All residuals 1 over [0, T=1]: loss = 1 regardless of N.
        for n in [10usize, 20] {
            let m = 6;
            let res = Tensor::matrix(m, n, vec![1.0; m * n]);
            let loss = loss_weighting(&res, 1.0 / n as f64);
            assert!((loss - 1.0).abs() < 1e-12);
        }
        assert_eq!(loss_weighting(&Tensor::zeros(vec![3, 4]), 0.25), 0.0);
    }

    #[test]
    fn closed_form_loss_shrinks_with_refinement() {
        // The defining check for every shipped problem: plugging the
        // closed-form pair into the rollout drives the loss to zero as the
        // grid refines.
        for (id, p) in [
            ("1a", example_1a(&ProblemOverrides::default())),
            ("1b", example_1b(&ProblemOverrides::default())),
            ("2", example_2(&ProblemOverrides::default())),
            ("3", example_3(&ProblemOverrides::default())),
        ] {
            let coarse_grid = TimeGrid::new(1.0, 10);
            let fine_grid = TimeGrid::new(1.0, 40);
            let m = 256;
            let coarse = batch_for(&p, coarse_grid, m, 5);
            let fine = batch_for(&p, fine_grid, m, 5);
            let lc = rollout(
                &p,
                coarse_grid,
                &coarse,
                FieldSource::ClosedForm,
                RolloutOptions::loss_only(ExecMode::Sequential),
            )
            .unwrap()
            .loss;
            let lf = rollout(
                &p,
                fine_grid,
                &fine,
                FieldSource::ClosedForm,
                RolloutOptions::loss_only(ExecMode::Sequential),
            )
            .unwrap()
            .loss;
            // The bilinear problem telescopes exactly under the discrete
            // scheme, so its plug-in loss sits at rounding level for any N.
            if lf > 1e-20 {
                assert!(
                    lf * 2.0 <= lc,
                    "problem {id}: loss N=10 {lc:.4e} -> N=40 {lf:.4e} shrank by < 2x"
                );
            }
        }
    }

    #[test]
    fn loss_is_additive_over_path_sub_batches() {
        let p = example_1b(&ProblemOverrides::default());
        let grid = TimeGrid::new(1.0, 8);
        let batch = batch_for(&p, grid, 128, 3);
        let params = NetworkParams::init_dense(4, 5, 5, NetConfig::default());
        let loss_of = |idx: &[usize]| {
            let sub = batch.gather(idx);
            rollout(
                &p,
                grid,
                &sub,
                FieldSource::Networks(&params),
                RolloutOptions::loss_only(ExecMode::Sequential),
            )
            .unwrap()
            .loss
        };
        let first: Vec<usize> = (0..64).collect();
        let second: Vec<usize> = (64..128).collect();
        let all: Vec<usize> = (0..128).collect();
        let combined = loss_of(&all);
        let avg = 0.5 * (loss_of(&first) + loss_of(&second));
        assert!((combined - avg).abs() < 1e-12, "{combined} vs {avg}");
    }

    #[test]
    fn gradients_match_finite_differences_on_small_nets() {
        // Whole-loss gradient check at small scale, all four problems.
        let config = NetConfig {
            width_y: 4,
            width_z: 5,
            time_scale: 1.0,
        };
        for p in [
            example_1a(&ProblemOverrides { dim: Some(2), ..Default::default() }),
            example_1b(&ProblemOverrides { dim: Some(2), ..Default::default() }),
            example_2(&ProblemOverrides { dim: Some(2), ..Default::default() }),
            example_3(&ProblemOverrides { dim: Some(3), ..Default::default() }),
        ] {
            let grid = TimeGrid::new(1.0, 3);
            let batch = batch_for(&p, grid, 2, 11);
            let params = NetworkParams::init_dense(21, p.state_dim, p.noise_dim, config);
            let r = rollout(
                &p,
                grid,
                &batch,
                FieldSource::Networks(&params),
                RolloutOptions::training(ExecMode::Sequential),
            )
            .unwrap();
            let grads = r.gradients.unwrap();

            // Central differences over every parameter entry.
            let mut worst: f64 = 0.0;
            let step = 1e-5;
            let named: Vec<String> = params.named().iter().map(|(n, _)| n.clone()).collect();
            for (pi, name) in named.iter().enumerate() {
                let len = grads[pi].len();
                for e in 0..len {
                    let mut up = params.clone();
                    up.named_mut()[pi].1.data_mut()[e] += step;
                    let mut down = params.clone();
                    down.named_mut()[pi].1.data_mut()[e] -= step;
                    let lu = rollout(&p, grid, &batch, FieldSource::Networks(&up),
                        RolloutOptions::loss_only(ExecMode::Sequential)).unwrap().loss;
                    let ld = rollout(&p, grid, &batch, FieldSource::Networks(&down),
                        RolloutOptions::loss_only(ExecMode::Sequential)).unwrap().loss;
                    let numeric = (lu - ld) / (2.0 * step);
                    let analytic = grads[pi].data()[e];
                    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
                    let rel = (analytic - numeric).abs() / denom;
                    if rel > worst {
                        worst = rel;
                    }
                    let _ = name;
                }
            }
            assert!(worst <= 1e-5, "{}: rollout grad vs FD {worst}", p.id);
        }
    }

    #[test]
    fn parallel_rollout_is_bitwise_deterministic() {
        let p = example_1a(&ProblemOverrides::default());
        let grid = TimeGrid::new(1.0, 6);
        let batch = batch_for(&p, grid, 200, 8);
        let params = NetworkParams::init_dense(5, 5, 5, NetConfig::default());
        let run = |mode| {
            let r = rollout(
                &p,
                grid,
                &batch,
                FieldSource::Networks(&params),
                RolloutOptions {
                    grads: true,
                    values: false,
                    mode,
                },
            )
            .unwrap();
            (r.loss, r.gradients.unwrap())
        };
        let (l_seq, g_seq) = run(ExecMode::Sequential);
        let (l_par, g_par) = run(ExecMode::Parallel);
        assert_eq!(l_seq.to_bits(), l_par.to_bits());
        for (a, b) in g_seq.iter().zip(&g_par) {
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn degenerate_coupling_matches_decoupled_simulation_bitwise() {
        // Coupled problem with zero drift coupling and zero networks: the
        // on-tape coupled forward must equal the decoupled Euler states
        // bitwise (same code path, zero fields).
        let p = example_3(&ProblemOverrides {
            coupling_b: Some(0.0),
            ..Default::default()
        });
        let grid = TimeGrid::new(1.0, 5);
        let m = 16;
        let dw = crate::sde::sample_increments(13, 0, m, 5, 5, grid.h());
        let decoupled = crate::sde::euler_decoupled(&p, grid, &dw, m, ExecMode::Sequential).unwrap();

        let params = NetworkParams::zeros(5, 5, NetConfig::default());
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let provider = NetProvider { nets: &bound };
        let blocks: Vec<Tensor> = (0..5)
            .map(|k| Tensor::matrix(m, 5, dw.data()[k * m * 5..(k + 1) * m * 5].to_vec()))
            .collect();
        let sim = simulate_chunk(&mut tape, &p, grid, Some(&provider), &blocks, 0).unwrap();
        for (k, xv) in sim.x.iter().enumerate() {
            let coupled_block = tape.value(*xv);
            let dec_block = &decoupled.data()[k * m * 5..(k + 1) * m * 5];
            assert!(coupled_block
                .data()
                .iter()
                .zip(dec_block)
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    mod properties {
        use super::super::loss_weighting;
        use crate::tensor::Tensor;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn loss_is_nonnegative_and_zero_iff_residuals_vanish(
                vals in proptest::collection::vec(-1e3f64..1e3, 1..64),
                h in 1e-6f64..1.0,
            ) {
                let res = Tensor::matrix(1, vals.len(), vals.clone());
                let loss = loss_weighting(&res, h);
                prop_assert!(loss >= 0.0);
                prop_assert_eq!(loss == 0.0, vals.iter().all(|&v| v == 0.0));
            }

            #[test]
            fn loss_is_quadratically_homogeneous(
                vals in proptest::collection::vec(-1e2f64..1e2, 1..32),
                c in -8.0f64..8.0,
            ) {
                let res = Tensor::matrix(1, vals.len(), vals.clone());
                let scaled = Tensor::matrix(1, vals.len(), vals.iter().map(|v| c * v).collect());
                let a = loss_weighting(&scaled, 0.25);
                let b = c * c * loss_weighting(&res, 0.25);
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn closed_form_rollout_rejects_gradient_request() {
        let p = example_1a(&ProblemOverrides::default());
        let grid = TimeGrid::new(1.0, 2);
        let batch = batch_for(&p, grid, 4, 1);
        let err = rollout(
            &p,
            grid,
            &batch,
            FieldSource::ClosedForm,
            RolloutOptions {
                grads: true,
                values: false,
                mode: ExecMode::Sequential,
            },
        );
        assert!(err.is_err());
    }
}
