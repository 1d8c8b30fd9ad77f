//! Brownian increments and forward simulation.
//!
//! Increments are generated counter-based: the draw for (path, step,
//! coordinate) depends only on (seed, stream, path, step, coordinate), so
//! batches are reproducible under any chunking or thread count.
//!
//! Storage layout is step-major: a batch of `m` paths over `n` steps keeps
//! block `k` (all paths at step k) in rows `k*m .. (k+1)*m`. Chunk gathers
//! and per-step slices are then contiguous.

use crate::error::{Error, Result};
use crate::exec::{map_chunks, ExecMode};
use crate::fields::FieldProvider;
use crate::grid::TimeGrid;
use crate::problem::{ExactForward, ProblemSpec};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Wiener increments for `m` paths, each entry N(0, h).
///
/// Shape [n*m x ell], step-major blocks.
pub fn sample_increments(
    seed: u64,
    stream: u64,
    m: usize,
    n: usize,
    ell: usize,
    h: f64,
) -> Tensor {
    assert!(m >= 1 && n >= 1 && ell >= 1 && h > 0.0);
    let sqrt_h = h.sqrt();
    let mut data = vec![0.0; n * m * ell];
    for step in 0..n {
        for path in 0..m {
            let row = step * m + path;
            for j in 0..ell {
                data[row * ell + j] =
                    sqrt_h * rng::normal_at(seed, stream, path as u64, step as u64, j as u64);
            }
        }
    }
    Tensor::matrix(n * m, ell, data)
}

/// Simulated Monte Carlo batch: increments plus (for decoupled problems)
/// the Euler forward states.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub grid: TimeGrid,
    pub m_paths: usize,
    pub noise_dim: usize,
    pub state_dim: usize,
    pub seed: u64,
    pub stream: u64,
    /// [n*m x ell], step-major
    pub dw: Tensor,
    /// [(n+1)*m x d], step-major; `None` for coupled problems whose forward
    /// states depend on the networks.
    pub x: Option<Tensor>,
}

impl PathBatch {
    /// Draw increments and, when the forward is decoupled, simulate it.
    pub fn generate(
        problem: &ProblemSpec,
        grid: TimeGrid,
        m: usize,
        seed: u64,
        stream: u64,
        mode: ExecMode,
    ) -> Result<Self> {
        let n = grid.n_steps();
        let ell = problem.noise_dim;
        let dw = sample_increments(seed, stream, m, n, ell, grid.h());
        let x = if problem.coupled {
            None
        } else {
            Some(euler_decoupled(problem, grid, &dw, m, mode)?)
        };
        Ok(PathBatch {
            grid,
            m_paths: m,
            noise_dim: ell,
            state_dim: problem.state_dim,
            seed,
            stream,
            dw,
            x,
        })
    }

    /// Copy the rows of the listed paths, preserving step-major layout.
    pub fn gather(&self, indices: &[usize]) -> PathBatch {
        let n = self.grid.n_steps();
        let mc = indices.len();
        let ell = self.noise_dim;
        let mut dw = vec![0.0; n * mc * ell];
        for step in 0..n {
            for (i, &p) in indices.iter().enumerate() {
                let src = (step * self.m_paths + p) * ell;
                let dst = (step * mc + i) * ell;
                dw[dst..dst + ell].copy_from_slice(&self.dw.data()[src..src + ell]);
            }
        }
        let x = self.x.as_ref().map(|x| {
            let d = self.state_dim;
            let mut out = vec![0.0; (n + 1) * mc * d];
            for step in 0..=n {
                for (i, &p) in indices.iter().enumerate() {
                    let src = (step * self.m_paths + p) * d;
                    let dst = (step * mc + i) * d;
                    out[dst..dst + d].copy_from_slice(&x.data()[src..src + d]);
                }
            }
            Tensor::matrix((n + 1) * mc, d, out)
        });
        PathBatch {
            grid: self.grid,
            m_paths: mc,
            noise_dim: ell,
            state_dim: self.state_dim,
            seed: self.seed,
            stream: self.stream,
            dw: Tensor::matrix(n * mc, ell, dw),
            x,
        }
    }

    /// Increment block for step k of a sub-range of paths: [count x ell].
    pub fn dw_block(&self, step: usize, range: std::ops::Range<usize>) -> Tensor {
        let ell = self.noise_dim;
        let start = (step * self.m_paths + range.start) * ell;
        let end = (step * self.m_paths + range.end) * ell;
        Tensor::matrix(range.len(), ell, self.dw.data()[start..end].to_vec())
    }

    /// State block at step k (decoupled batches only): [count x d].
    pub fn x_block(&self, step: usize, range: std::ops::Range<usize>) -> Tensor {
        let x = self.x.as_ref().expect("state not precomputed (coupled problem)");
        let d = self.state_dim;
        let start = (step * self.m_paths + range.start) * d;
        let end = (step * self.m_paths + range.end) * d;
        Tensor::matrix(range.len(), d, x.data()[start..end].to_vec())
    }
}

/// One Euler-Maruyama step: x + b(t,x,y,z) h + sigma(t,x,y) dW.
#[allow(clippy::too_many_arguments)]
pub fn euler_step(
    tape: &mut Tape,
    problem: &ProblemSpec,
    t: f64,
    h: f64,
    x: Var,
    y: Var,
    z_diag: Var,
    dw: Var,
) -> Var {
    let b = problem.drift(tape, t, x, y, z_diag);
    let bh = tape.scale(b, h);
    let drifted = tape.add(x, bh);
    let diff = problem.diffusion_apply(tape, t, x, y, dw);
    tape.add(drifted, diff)
}

/// Forward simulation of one chunk on a tape.
///
/// For decoupled problems (`provider` = None) the field inputs are zero
/// constants and the drift/diffusion ignore them; with a provider, the
/// fields are evaluated along the way and the states stay on the tape so
/// gradients flow through the simulation.
pub struct SimChunk {
    /// x blocks for steps 0..=n, each [m x d]
    pub x: Vec<Var>,
    /// y values at steps 0..n (coupled runs only)
    pub y: Vec<Var>,
    /// diagonal control values at steps 0..n (coupled runs only)
    pub z_diag: Vec<Var>,
}

pub fn simulate_chunk(
    tape: &mut Tape,
    problem: &ProblemSpec,
    grid: TimeGrid,
    provider: Option<&dyn FieldProvider>,
    dw_blocks: &[Tensor],
    chunk_start: usize,
) -> Result<SimChunk> {
    let n = grid.n_steps();
    let h = grid.h();
    assert_eq!(dw_blocks.len(), n);
    let m = dw_blocks[0].rows();
    let d = problem.state_dim;

    let x0 = tape.constant(Tensor::matrix(m, d, problem.x0.repeat(m)));
    let zero_col = tape.constant(Tensor::zeros(vec![m, 1]));
    let zero_z = tape.constant(Tensor::zeros(vec![m, problem.noise_dim]));

    let mut xs = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n);
    let mut zds = Vec::with_capacity(n);
    xs.push(x0);
    let mut x = x0;
    for (k, dw_block) in dw_blocks.iter().enumerate() {
        let t_k = grid.t(k);
        let (y_k, z_kk) = match provider {
            Some(p) => {
                let t_col = tape.constant(Tensor::full(vec![m, 1], t_k));
                let y = p.y(tape, t_col, x);
                let z = p.z(tape, t_col, t_col, x, x);
                (y, z)
            }
            None => (zero_col, zero_z),
        };
        let dw = tape.constant(dw_block.clone());
        x = euler_step(tape, problem, t_k, h, x, y_k, z_kk, dw);
        if !tape.value(x).all_finite() {
            let bad = tape
                .value(x)
                .data()
                .chunks(d)
                .position(|row| row.iter().any(|v| !v.is_finite()))
                .unwrap_or(0);
            return Err(Error::NonFiniteState {
                path: chunk_start + bad,
                step: k + 1,
            });
        }
        xs.push(x);
        ys.push(y_k);
        zds.push(z_kk);
    }
    Ok(SimChunk {
        x: xs,
        y: ys,
        z_diag: zds,
    })
}

/// Euler-Maruyama forward for a decoupled problem over all paths of `dw`.
/// Returns states in step-major layout [(n+1)*m x d].
pub fn euler_decoupled(
    problem: &ProblemSpec,
    grid: TimeGrid,
    dw: &Tensor,
    m: usize,
    mode: ExecMode,
) -> Result<Tensor> {
    let n = grid.n_steps();
    let ell = problem.noise_dim;
    let d = problem.state_dim;
    assert_eq!(dw.shape(), &[n * m, ell], "increment layout");

    let chunk_results: Vec<Result<Vec<Tensor>>> = map_chunks(mode, m, |range| {
        let mut tape = Tape::new();
        let blocks: Vec<Tensor> = (0..n)
            .map(|k| {
                let start = (k * m + range.start) * ell;
                let end = (k * m + range.end) * ell;
                Tensor::matrix(range.len(), ell, dw.data()[start..end].to_vec())
            })
            .collect();
        let sim = simulate_chunk(&mut tape, problem, grid, None, &blocks, range.start)?;
        Ok(sim.x.iter().map(|v| tape.value(*v).clone()).collect())
    });

    let mut out = vec![0.0; (n + 1) * m * d];
    let ranges = crate::exec::chunk_ranges(m);
    for (res, range) in chunk_results.into_iter().zip(ranges) {
        let blocks = res?;
        for (k, block) in blocks.iter().enumerate() {
            let dst = (k * m + range.start) * d;
            out[dst..dst + block.len()].copy_from_slice(block.data());
        }
    }
    Ok(Tensor::matrix((n + 1) * m, d, out))
}

/// Exact forward states on the same increments, where a sampler exists.
///
/// ABM: X_n = x0 + mu t_n + sigma W_n. GBM (componentwise):
/// X_n = x0 exp((mu - sigma^2/2) t_n + sigma W_n).
pub fn exact_forward(problem: &ProblemSpec, grid: TimeGrid, dw: &Tensor, m: usize) -> Option<Tensor> {
    use crate::problem::Dynamics;
    let n = grid.n_steps();
    let d = problem.state_dim;
    let (mu, sigma) = match (&problem.exact_forward, &problem.dynamics) {
        (ExactForward::Abm, Dynamics::AdditiveSine { mu, sigma, .. }) => (mu, sigma),
        (ExactForward::Gbm, Dynamics::GeometricSine { mu, sigma, .. }) => (mu, sigma),
        (ExactForward::Gbm, Dynamics::QuadraticForm { mu, sigma }) => (mu, sigma),
        _ => return None,
    };
    let gbm = problem.exact_forward == ExactForward::Gbm;
    let mut out = vec![0.0; (n + 1) * m * d];
    // cumulative Brownian value per (path, coord)
    let mut w = vec![0.0; m * d];
    for path in 0..m {
        for j in 0..d {
            out[path * d + j] = problem.x0[j];
        }
    }
    for step in 1..=n {
        let t = grid.t(step);
        for path in 0..m {
            let dw_row = (step - 1) * m + path;
            for j in 0..d {
                w[path * d + j] += dw.data()[dw_row * d + j];
                let val = if gbm {
                    problem.x0[j]
                        * ((mu[j] - 0.5 * sigma[j] * sigma[j]) * t + sigma[j] * w[path * d + j])
                            .exp()
                } else {
                    problem.x0[j] + mu[j] * t + sigma[j] * w[path * d + j]
                };
                out[(step * m + path) * d + j] = val;
            }
        }
    }
    Some(Tensor::matrix((n + 1) * m, d, out))
}

/// Dump simulated paths as CSV: path_id, step, t, x_1..x_d.
pub fn write_paths_csv<W: std::io::Write>(w: &mut W, batch: &PathBatch) -> Result<()> {
    let x = batch
        .x
        .as_ref()
        .ok_or_else(|| Error::Contract("path dump needs precomputed states".into()))?;
    let d = batch.state_dim;
    write!(w, "path_id,step,t")?;
    for j in 1..=d {
        write!(w, ",x_{j}")?;
    }
    writeln!(w)?;
    for path in 0..batch.m_paths {
        for step in 0..=batch.grid.n_steps() {
            write!(w, "{},{},{}", path, step, batch.grid.t(step))?;
            let row = &x.data()[(step * batch.m_paths + path) * d..][..d];
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
