//! Monte Carlo verification of the two-index stability bound.
//!
//! Two square-integrable solutions of the generic backward recursion
//!
//! ```text
//! Yhat_{n+1}^k = Yhat_n^k - f(t_k, t_n, X_n, Yhat_n^n, Zhat_n^k) h
//!                + (Zhat_n^k)^T dW_n
//! ```
//!
//! are built forward from two network pairs on a common path batch, where
//! the diagonal entries come from the value field and Zhat from the control
//! field. With K1 the Lipschitz bound of the driver in (y, z) — both
//! solutions share the state path, so only the (y, z) sensitivity enters —
//! and h (8 K1^2 + 1) < 1, the differences must satisfy, for every k <= n:
//!
//! ```text
//!   E|dY_n^k|^2    <= C_Y (E|dY_N^k|^2 + sum_{l=n}^{N-1} E|dY_N^l|^2 h)
//!   h E|dZ_n^k|^2  <= C_Z (same right-hand side)
//! ```
//!
//! with C_Y = exp((8 K1^2 + 1) T) and C_Z = 2 C_Y. The verifier evaluates
//! both sides per index pair and flags violations that exceed three Monte
//! Carlo standard errors of the per-path difference.

use crate::error::{Error, Result};
use crate::exec::{map_chunks, ExecMode};
use crate::fields::{FieldProvider, NetProvider};
use crate::grid::TimeGrid;
use crate::net::NetworkParams;
use crate::problem::ProblemSpec;
use crate::rng::streams;
use crate::sde::PathBatch;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct StabilityRow {
    pub k: usize,
    pub n: usize,
    pub lhs_y: f64,
    pub rhs_y: f64,
    pub lhs_z: f64,
    pub rhs_z: f64,
    pub violated_y: bool,
    pub violated_z: bool,
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub k1: f64,
    pub h: f64,
    pub c_y: f64,
    pub c_z: f64,
    pub rows: Vec<StabilityRow>,
    pub violations: usize,
}

struct ChunkStats {
    /// per (k,n): sum over paths of v = |dY|^2 - C_Y * rhs_per_path
    v_y_sum: Vec<f64>,
    v_y_sumsq: Vec<f64>,
    v_z_sum: Vec<f64>,
    v_z_sumsq: Vec<f64>,
    lhs_y_sum: Vec<f64>,
    lhs_z_sum: Vec<f64>,
    rhs_sum: Vec<f64>,
}

/// Check both stability inequalities for every index pair in the triangle.
pub fn stability_check(
    problem: &ProblemSpec,
    grid: TimeGrid,
    params_a: &NetworkParams,
    params_b: &NetworkParams,
    m: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<StabilityReport> {
    let k1 = problem.driver_lipschitz_yz();
    let growth = 8.0 * k1 * k1 + 1.0;
    let h = grid.h();
    if h * growth >= 1.0 {
        let required_n = (problem.horizon * growth).ceil() as usize + 1;
        return Err(Error::StabilityPrecondition { required_n });
    }
    let c_y = (growth * problem.horizon).exp();
    let c_z = 2.0 * c_y;
    let n_steps = grid.n_steps();
    let batch = PathBatch::generate(problem, grid, m, seed, streams::STABILITY, mode)?;

    let n_pairs = n_steps * (n_steps + 1) / 2; // (k, n) with k <= n <= N-1
    let pair_index = |k: usize, n: usize| -> usize {
        // rows ordered by k, then n
        k * n_steps - k * (k.wrapping_sub(1).min(k)) / 2 + (n - k)
    };
    // Precompute offsets properly: offset(k) = sum_{j<k} (N - j).
    let offsets: Vec<usize> = (0..n_steps)
        .scan(0usize, |acc, k| {
            let cur = *acc;
            *acc += n_steps - k;
            Some(cur)
        })
        .collect();
    let pair_at = |k: usize, n: usize| offsets[k] + (n - k);
    let _ = pair_index;

    let chunk_stats: Vec<ChunkStats> = map_chunks(mode, m, |range| {
        let mc = range.len();
        // Field values for both parameter sets.
        let evaluate = |params: &NetworkParams| -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let provider = NetProvider { nets: &bound };
            // Diagonal value-field entries per step n: [mc]
            let mut y_diag = Vec::with_capacity(n_steps);
            for n in 0..n_steps {
                let x_n = tape.constant(batch.x_block(n, range.clone()));
                let t_col = tape.constant(Tensor::full(vec![mc, 1], grid.t(n)));
                let y = provider.y(&mut tape, t_col, x_n);
                y_diag.push(tape.value(y).data().to_vec());
            }
            // Control entries per (k, n): [mc x ell]
            let mut z = Vec::with_capacity(n_steps);
            for k in 0..n_steps {
                let mut rows = Vec::with_capacity(n_steps - k);
                for n in k..n_steps {
                    let x_n = tape.constant(batch.x_block(n, range.clone()));
                    let t_col = tape.constant(Tensor::full(vec![mc, 1], grid.t(k)));
                    let s_col = tape.constant(Tensor::full(vec![mc, 1], grid.t(n)));
                    let zv = provider.z(&mut tape, t_col, s_col, x_n, x_n);
                    rows.push(tape.value(zv).data().to_vec());
                }
                z.push(rows);
            }
            (y_diag, z)
        };
        let (ya_diag, za) = evaluate(params_a);
        let (yb_diag, zb) = evaluate(params_b);

        // Forward recursion per parameter set: yhat[k][n] for n = k..=N.
        let roll = |y_diag: &Vec<Vec<f64>>, z: &Vec<Vec<Vec<f64>>>| -> Vec<Vec<Vec<f64>>> {
            let ell = problem.noise_dim;
            let mut yhat = vec![Vec::new(); n_steps];
            for k in 0..n_steps {
                let mut levels = Vec::with_capacity(n_steps - k + 1);
                let mut cur = y_diag[k].clone();
                levels.push(cur.clone());
                for n in k..n_steps {
                    let z_kn = &z[k][n - k];
                    let dw = batch.dw_block(n, range.clone());
                    // one batched driver call for the whole chunk
                    let f_vals = {
                        let mut tape = Tape::new();
                        let x_blk = tape.constant(batch.x_block(n, range.clone()));
                        let y_blk = tape.constant(Tensor::matrix(mc, 1, y_diag[n].clone()));
                        let z_blk = tape.constant(Tensor::matrix(mc, ell, z_kn.clone()));
                        let s_col = tape.constant(Tensor::full(vec![mc, 1], grid.t(n)));
                        let f =
                            problem.driver(&mut tape, grid.t(k), s_col, x_blk, y_blk, z_blk, z_blk);
                        tape.value(f).data().to_vec()
                    };
                    let mut next = vec![0.0; mc];
                    for i in 0..mc {
                        let zdw: f64 = (0..ell)
                            .map(|j| z_kn[i * ell + j] * dw.data()[i * ell + j])
                            .sum();
                        next[i] = cur[i] - f_vals[i] * h + zdw;
                    }
                    levels.push(next.clone());
                    cur = next;
                }
                yhat[k] = levels;
            }
            yhat
        };
        let yhat_a = roll(&ya_diag, &za);
        let yhat_b = roll(&yb_diag, &zb);

        // Per-path terminal differences and tail sums.
        let ell = problem.noise_dim;
        let mut d_term = vec![vec![0.0; mc]; n_steps]; // |dY_N^k|^2 per path
        for k in 0..n_steps {
            for i in 0..mc {
                let d = yhat_a[k][n_steps - k][i] - yhat_b[k][n_steps - k][i];
                d_term[k][i] = d * d;
            }
        }
        let mut tail = vec![vec![0.0; mc]; n_steps + 1]; // sum_{l=n}^{N-1} |dY_N^l|^2 h
        for n in (0..n_steps).rev() {
            for i in 0..mc {
                tail[n][i] = tail[n + 1][i] + d_term[n][i] * h;
            }
        }

        let mut stats = ChunkStats {
            v_y_sum: vec![0.0; n_pairs],
            v_y_sumsq: vec![0.0; n_pairs],
            v_z_sum: vec![0.0; n_pairs],
            v_z_sumsq: vec![0.0; n_pairs],
            lhs_y_sum: vec![0.0; n_pairs],
            lhs_z_sum: vec![0.0; n_pairs],
            rhs_sum: vec![0.0; n_pairs],
        };
        for k in 0..n_steps {
            for n in k..n_steps {
                let p = pair_at(k, n);
                for i in 0..mc {
                    let dy = yhat_a[k][n - k][i] - yhat_b[k][n - k][i];
                    let lhs_y = dy * dy;
                    let mut dz2 = 0.0;
                    for j in 0..ell {
                        let dz = za[k][n - k][i * ell + j] - zb[k][n - k][i * ell + j];
                        dz2 += dz * dz;
                    }
                    let lhs_z = h * dz2;
                    let rhs_base = d_term[k][i] + tail[n][i];
                    let v_y = lhs_y - c_y * rhs_base;
                    let v_z = lhs_z - c_z * rhs_base;
                    stats.v_y_sum[p] += v_y;
                    stats.v_y_sumsq[p] += v_y * v_y;
                    stats.v_z_sum[p] += v_z;
                    stats.v_z_sumsq[p] += v_z * v_z;
                    stats.lhs_y_sum[p] += lhs_y;
                    stats.lhs_z_sum[p] += lhs_z;
                    stats.rhs_sum[p] += rhs_base;
                }
            }
        }
        stats
    });

    // Reduce chunk statistics in order.
    let mut v_y_sum = vec![0.0; n_pairs];
    let mut v_y_sumsq = vec![0.0; n_pairs];
    let mut v_z_sum = vec![0.0; n_pairs];
    let mut v_z_sumsq = vec![0.0; n_pairs];
    let mut lhs_y_sum = vec![0.0; n_pairs];
    let mut lhs_z_sum = vec![0.0; n_pairs];
    let mut rhs_sum = vec![0.0; n_pairs];
    for s in chunk_stats {
        for p in 0..n_pairs {
            v_y_sum[p] += s.v_y_sum[p];
            v_y_sumsq[p] += s.v_y_sumsq[p];
            v_z_sum[p] += s.v_z_sum[p];
            v_z_sumsq[p] += s.v_z_sumsq[p];
            lhs_y_sum[p] += s.lhs_y_sum[p];
            lhs_z_sum[p] += s.lhs_z_sum[p];
            rhs_sum[p] += s.rhs_sum[p];
        }
    }

    let mf = m as f64;
    let se_of = |sum: f64, sumsq: f64| -> f64 {
        let mean = sum / mf;
        let var = (sumsq / mf - mean * mean).max(0.0);
        (var / mf).sqrt()
    };

    let mut rows = Vec::with_capacity(n_pairs);
    let mut violations = 0;
    for k in 0..n_steps {
        for n in k..n_steps {
            let p = pair_at(k, n);
            let mean_vy = v_y_sum[p] / mf;
            let mean_vz = v_z_sum[p] / mf;
            let violated_y = mean_vy > 3.0 * se_of(v_y_sum[p], v_y_sumsq[p]);
            let violated_z = mean_vz > 3.0 * se_of(v_z_sum[p], v_z_sumsq[p]);
            if violated_y {
                violations += 1;
            }
            if violated_z {
                violations += 1;
            }
            rows.push(StabilityRow {
                k,
                n,
                lhs_y: lhs_y_sum[p] / mf,
                rhs_y: c_y * rhs_sum[p] / mf,
                lhs_z: lhs_z_sum[p] / mf,
                rhs_z: c_z * rhs_sum[p] / mf,
                violated_y,
                violated_z,
            });
        }
    }

    Ok(StabilityReport {
        k1,
        h,
        c_y,
        c_z,
        rows,
        violations,
    })
}
