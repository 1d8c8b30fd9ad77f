//! The two neural fields.
//!
//! Both are fully-connected feed-forward networks with three ReLU hidden
//! layers and an unactivated output layer:
//!
//! * the value field maps (t, x) in R^(d+1) to R, hidden width 50;
//! * the two-time control field maps (t, s, x_t, x_s) in R^(2d+2) to R^ell,
//!   hidden width 100.
//!
//! Weights are stored input-major (shape `in x out`), so a batch forward is
//! `X * W + b` on row-major batches. Hidden widths are configurable; the
//! defaults above are the reference architecture.

use crate::rng::{self, streams};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const HIDDEN_LAYERS: usize = 3;
pub const DEFAULT_WIDTH_Y: usize = 50;
pub const DEFAULT_WIDTH_Z: usize = 100;

/// Architecture knobs. `time_scale` divides the raw time inputs before they
/// reach the networks (all benchmark problems use T = 1, where it is moot).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub width_y: usize,
    pub width_z: usize,
    pub time_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            width_y: DEFAULT_WIDTH_Y,
            width_z: DEFAULT_WIDTH_Z,
            time_scale: 1.0,
        }
    }
}

/// Weights and biases of one MLP, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// weights[l] has shape [fan_in(l), fan_out(l)]
    pub weights: Vec<Tensor>,
    /// biases[l] has shape [1, fan_out(l)]
    pub biases: Vec<Tensor>,
}

impl MlpParams {
    fn layer_dims(input: usize, width: usize, output: usize) -> Vec<(usize, usize)> {
        vec![
            (input, width),
            (width, width),
            (width, width),
            (width, output),
        ]
    }

    fn zeros(input: usize, width: usize, output: usize) -> Self {
        let dims = Self::layer_dims(input, width, output);
        MlpParams {
            weights: dims.iter().map(|&(i, o)| Tensor::zeros(vec![i, o])).collect(),
            biases: dims.iter().map(|&(_, o)| Tensor::zeros(vec![1, o])).collect(),
        }
    }

    /// He-uniform hidden weights (bound sqrt(6 / fan_in)), zero biases, and
    /// a zero output layer so the freshly initialized field is identically
    /// zero. Starting from the zero field removes the large random-output
    /// variance from the early loss, which at small step budgets is worth
    /// several times the final validation loss.
    fn he_uniform(seed: u64, net_id: u64, input: usize, width: usize, output: usize) -> Self {
        let dims = Self::layer_dims(input, width, output);
        let last = dims.len() - 1;
        let mut weights = Vec::with_capacity(dims.len());
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            if l == last {
                weights.push(Tensor::zeros(vec![fan_in, fan_out]));
                continue;
            }
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|e| {
                    rng::uniform_at(seed, streams::INIT, net_id, l as u64, e as u64, -bound, bound)
                })
                .collect();
            weights.push(Tensor::matrix(fan_in, fan_out, data));
        }
        MlpParams {
            weights,
            biases: dims.iter().map(|&(_, o)| Tensor::zeros(vec![1, o])).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum::<usize>()
            + self.biases.iter().map(Tensor::len).sum::<usize>()
    }
}

/// All trainable parameters of the solver: the value net and the control net.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub y_net: MlpParams,
    pub z_net: MlpParams,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub config: NetConfig,
}

impl NetworkParams {
    /// Reproducible random initialization under a fixed seed (training
    /// default: He-uniform hidden layers, zero output layer).
    pub fn init(seed: u64, state_dim: usize, noise_dim: usize, config: NetConfig) -> Self {
        NetworkParams {
            y_net: MlpParams::he_uniform(seed, 0, state_dim + 1, config.width_y, 1),
            z_net: MlpParams::he_uniform(seed, 1, 2 * state_dim + 2, config.width_z, noise_dim),
            state_dim,
            noise_dim,
            config,
        }
    }

    /// He-uniform on every layer, output included, so the initial fields
    /// are non-degenerate. Used where genuinely random fields are needed
    /// (stability pairs, gradient checks).
    pub fn init_dense(seed: u64, state_dim: usize, noise_dim: usize, config: NetConfig) -> Self {
        let mut params = Self::init(seed, state_dim, noise_dim, config);
        for (net_id, mlp) in [(0u64, &mut params.y_net), (1u64, &mut params.z_net)] {
            let last = mlp.weights.len() - 1;
            let w = &mut mlp.weights[last];
            let fan_in = w.shape()[0];
            let bound = (6.0 / fan_in as f64).sqrt();
            for (e, v) in w.data_mut().iter_mut().enumerate() {
                *v = rng::uniform_at(seed, streams::INIT, net_id, last as u64, e as u64, -bound, bound);
            }
        }
        params
    }

    pub fn zeros(state_dim: usize, noise_dim: usize, config: NetConfig) -> Self {
        NetworkParams {
            y_net: MlpParams::zeros(state_dim + 1, config.width_y, 1),
            z_net: MlpParams::zeros(2 * state_dim + 2, config.width_z, noise_dim),
            state_dim,
            noise_dim,
            config,
        }
    }

    pub fn param_count(&self) -> usize {
        self.y_net.param_count() + self.z_net.param_count()
    }

    /// Stable (name, tensor) listing, the canonical parameter order for the
    /// optimizer and the checkpoint format.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, mlp) in [("y", &self.y_net), ("z", &self.z_net)] {
            for l in 0..mlp.weights.len() {
                out.push((format!("{prefix}_w{}", l + 1), &mlp.weights[l]));
            }
            for l in 0..mlp.biases.len() {
                out.push((format!("{prefix}_b{}", l + 1), &mlp.biases[l]));
            }
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (prefix, mlp) in [("y", &mut self.y_net), ("z", &mut self.z_net)] {
            for (l, w) in mlp.weights.iter_mut().enumerate() {
                out.push((format!("{prefix}_w{}", l + 1), w));
            }
            for (l, b) in mlp.biases.iter_mut().enumerate() {
                out.push((format!("{prefix}_b{}", l + 1), b));
            }
        }
        out
    }

    /// Put the parameters on a tape, as gradient leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundNets {
        let mut bind_mlp = |mlp: &MlpParams| BoundMlp {
            weights: mlp
                .weights
                .iter()
                .map(|t| {
                    if trainable {
                        tape.leaf(t.clone())
                    } else {
                        tape.constant(t.clone())
                    }
                })
                .collect(),
            biases: mlp
                .biases
                .iter()
                .map(|t| {
                    if trainable {
                        tape.leaf(t.clone())
                    } else {
                        tape.constant(t.clone())
                    }
                })
                .collect(),
        };
        let y = bind_mlp(&self.y_net);
        let z = bind_mlp(&self.z_net);
        BoundNets {
            y,
            z,
            state_dim: self.state_dim,
            noise_dim: self.noise_dim,
            inv_time_scale: 1.0 / self.config.time_scale,
        }
    }
}

/// Tape handles for one MLP's parameters.
pub struct BoundMlp {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

/// Tape handles for both networks, ready for forward evaluation.
pub struct BoundNets {
    pub y: BoundMlp,
    pub z: BoundMlp,
    state_dim: usize,
    noise_dim: usize,
    inv_time_scale: f64,
}

fn mlp_forward(tape: &mut Tape, mlp: &BoundMlp, input: Var) -> Var {
    let mut h = input;
    let last = mlp.weights.len() - 1;
    for l in 0..last {
        let lin = tape.matmul(h, mlp.weights[l]);
        let biased = tape.add_row_broadcast(lin, mlp.biases[l]);
        h = tape.relu(biased);
    }
    let out = tape.matmul(h, mlp.weights[last]);
    tape.add_row_broadcast(out, mlp.biases[last])
}

impl BoundNets {
    /// Value field on a batch: t_col is [m x 1], x is [m x d]; result [m x 1].
    pub fn y_forward(&self, tape: &mut Tape, t_col: Var, x: Var) -> Var {
        let (rows, cols) = (tape.value(x).rows(), tape.value(x).cols());
        assert_eq!(cols, self.state_dim, "y_forward state dimension");
        assert_eq!(tape.value(t_col).shape(), &[rows, 1], "y_forward time column");
        let t_scaled = tape.scale(t_col, self.inv_time_scale);
        let input = tape.concat_cols(&[t_scaled, x]);
        mlp_forward(tape, &self.y, input)
    }

    /// Control field on a batch of (t, s, x_t, x_s) rows; result [m x ell].
    ///
    /// Callers must respect the triangle t <= s; violating it is a bug.
    pub fn z_forward(&self, tape: &mut Tape, t_col: Var, s_col: Var, x_t: Var, x_s: Var) -> Var {
        let rows = tape.value(x_s).rows();
        assert_eq!(tape.value(x_t).cols(), self.state_dim, "z_forward x_t dimension");
        assert_eq!(tape.value(x_s).cols(), self.state_dim, "z_forward x_s dimension");
        assert_eq!(tape.value(x_t).rows(), rows, "z_forward row mismatch");
        assert_eq!(tape.value(t_col).shape(), &[rows, 1], "z_forward t column");
        assert_eq!(tape.value(s_col).shape(), &[rows, 1], "z_forward s column");
        {
            let (tv, sv) = (tape.value(t_col), tape.value(s_col));
            for (t, s) in tv.data().iter().zip(sv.data()) {
                assert!(t <= &(s + 1e-12), "z_forward outside the triangle: t={t} > s={s}");
            }
        }
        let t_scaled = tape.scale(t_col, self.inv_time_scale);
        let s_scaled = tape.scale(s_col, self.inv_time_scale);
        let input = tape.concat_cols(&[t_scaled, s_scaled, x_t, x_s]);
        let out = mlp_forward(tape, &self.z, input);
        debug_assert_eq!(tape.value(out).cols(), self.noise_dim);
        out
    }
}
