use bsvie::exec::ExecMode;
use bsvie::grid::TimeGrid;
use bsvie::metrics::{compute_errors, EvalSource};
use bsvie::net::{NetConfig, NetworkParams};
use bsvie::problem::{example_1a, example_1b, ProblemOverrides};
use bsvie::trainer::{train, TrainConfig};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        // Zero-output-layer init, desk budget, 1A N=20
        "zinit" => {
            let p = example_1a(&ProblemOverrides::default());
            let grid = TimeGrid::new(1.0, 20);
            let config = TrainConfig { mode: ExecMode::Parallel, ..TrainConfig::desk(7) };
            // emulate zero output layer by training from a custom start:
            // we cannot inject init into train(); instead do manual loop here
            let params = NetworkParams::init(7, 5, 5, NetConfig::default());
            let out = manual_train(&config, &p, grid, params);
            let r = compute_errors(EvalSource::Trained(&out), &p, grid, 1 << 12, 99, ExecMode::Parallel).unwrap();
            println!("zinit 1A N=20 desk: err_y {:.4e} err_z {:.4e} err_t {:.4e}", r.err_y, r.err_z, r.err_t);
        }
        // Long budget to find the Err_T plateau: 2^15 paths, 20 epochs
        "long" => {
            let p = example_1a(&ProblemOverrides::default());
            let grid = TimeGrid::new(1.0, 20);
            let config = TrainConfig {
                m_train: 1 << 15,
                m_batch: 1 << 10,
                k_epoch: 20,
                mode: ExecMode::Parallel,
                ..TrainConfig::desk(7)
            };
            let mut params = NetworkParams::init(7, 5, 5, NetConfig::default());
            zero_output(&mut params);
            let out = manual_train(&config, &p, grid, params);
            let r = compute_errors(EvalSource::Trained(&out), &p, grid, 1 << 12, 99, ExecMode::Parallel).unwrap();
            println!("long 1A N=20: err_y {:.4e} err_z {:.4e} err_t {:.4e}", r.err_y, r.err_z, r.err_t);
        }
        "zinit1b" => {
            for d in [1usize, 5] {
                let p = example_1b(&ProblemOverrides { dim: Some(d), ..Default::default() });
                let grid = TimeGrid::new(1.0, 10);
                let config = TrainConfig { mode: ExecMode::Parallel, ..TrainConfig::desk(3) };
                let mut params = NetworkParams::init(3, d, d, NetConfig::default());
                zero_output(&mut params);
                let out = manual_train(&config, &p, grid, params);
                let r = compute_errors(EvalSource::Trained(&out), &p, grid, 1 << 12, 99, ExecMode::Parallel).unwrap();
                println!("zinit 1B d={d} N=10 desk: err_y {:.4e} err_z {:.4e} err_t {:.4e}", r.err_y, r.err_z, r.err_t);
            }
        }
        // Abundant steps at tiny scale: how close to the discrete floor
        // can the optimizer get when budget is no object?
        "tiny" => {
            let p = example_1a(&ProblemOverrides::default());
            let grid = TimeGrid::new(1.0, 10);
            let config = TrainConfig {
                m_train: 1 << 12,
                m_batch: 1 << 9,
                k_epoch: 60,
                decay: (-0.05f64).exp(),
                mode: ExecMode::Parallel,
                ..TrainConfig::desk(7)
            };
            let mut params = NetworkParams::init(7, 5, 5, NetConfig::default());
            zero_output(&mut params);
            let out = manual_train(&config, &p, grid, params);
            let r = compute_errors(EvalSource::Trained(&out), &p, grid, 1 << 12, 99, ExecMode::Parallel).unwrap();
            println!("tiny 1A N=10 overfit: err_y {:.4e} err_z {:.4e} err_t {:.4e}", r.err_y, r.err_z, r.err_t);
        }
        // criterion-5 variant: value-net width 100 (the robustness remark)
        "wide" => {
            let p = example_1a(&ProblemOverrides::default());
            let grid = TimeGrid::new(1.0, 20);
            let net = NetConfig { width_y: 100, width_z: 100, time_scale: 1.0 };
            let config = TrainConfig { net, mode: ExecMode::Parallel, ..TrainConfig::desk(7) };
            let params = NetworkParams::init(7, 5, 5, net);
            let out = manual_train(&config, &p, grid, params);
            let r = compute_errors(EvalSource::Trained(&out), &p, grid, 1 << 12, 99, ExecMode::Parallel).unwrap();
            println!("wide 1A N=20 desk: err_y {:.4e} err_z {:.4e} err_t {:.4e}", r.err_y, r.err_z, r.err_t);
        }
        // criterion-8 variant: N=16 across dimensions
        "dims16" => {
            for d in [1usize, 5, 20] {
                let p = example_1b(&ProblemOverrides { dim: Some(d), ..Default::default() });
                let grid = TimeGrid::new(1.0, 16);
                let config = TrainConfig { mode: ExecMode::Parallel, ..TrainConfig::desk(3) };
                let params = NetworkParams::init(3, d, d, NetConfig::default());
                let t0 = std::time::Instant::now();
                let out = manual_train(&config, &p, grid, params);
                let wall = t0.elapsed().as_secs_f64();
                let r = compute_errors(EvalSource::Trained(&out), &p, grid, 1 << 12, 99, ExecMode::Parallel).unwrap();
                println!("dims16 1B d={d} N=16 desk: err_y {:.4e} err_z {:.4e} err_t {:.4e} wall {wall:.0}s", r.err_y, r.err_z, r.err_t);
            }
        }
        // Adam second-moment horizon experiment at the pinned desk budget
        "beta" => {
            for beta2 in [0.999f64, 0.99, 0.95] {
                let p = example_1a(&ProblemOverrides::default());
                let grid = TimeGrid::new(1.0, 20);
                let mut config = TrainConfig { mode: ExecMode::Parallel, ..TrainConfig::desk(7) };
                config.adam.beta2 = beta2;
                let params = NetworkParams::init(7, 5, 5, NetConfig::default());
                let out = manual_train(&config, &p, grid, params);
                let r = compute_errors(EvalSource::Trained(&out), &p, grid, 1 << 12, 99, ExecMode::Parallel).unwrap();
                println!("beta2={beta2} 1A N=20 desk: err_y {:.4e} err_z {:.4e} err_t {:.4e}", r.err_y, r.err_z, r.err_t);
            }
        }
        _ => eprintln!("usage: probe_floor zinit|long|zinit1b|tiny|wide|dims16|beta"),
    }
}

fn zero_output(params: &mut NetworkParams) {
    for w in [&mut params.y_net.weights[3], &mut params.z_net.weights[3]] {
        for v in w.data_mut() {
            *v = 0.0;
        }
    }
}

fn manual_train(
    config: &TrainConfig,
    problem: &bsvie::problem::ProblemSpec,
    grid: TimeGrid,
    mut params: NetworkParams,
) -> NetworkParams {
    use bsvie::adam::AdamState;
    use bsvie::rollout::{rollout, FieldSource, RolloutOptions};
    use bsvie::sde::PathBatch;
    let batch = PathBatch::generate(problem, grid, config.m_train, config.seed, 0, config.mode).unwrap();
    let mut adam = AdamState::new(&params);
    let k_batch = config.k_batch();
    for epoch in 0..config.k_epoch {
        let lr = config.lr_at_epoch(epoch);
        let perm = bsvie::rng::permutation(config.seed, epoch as u64, config.m_train);
        let mut last = 0.0;
        for b in 0..k_batch {
            let idx = &perm[b * config.m_batch..(b + 1) * config.m_batch];
            let sub = batch.gather(idx);
            let r = rollout(problem, grid, &sub, FieldSource::Networks(&params), RolloutOptions::training(config.mode)).unwrap();
            adam.step(&mut params, &r.gradients.unwrap(), lr, config.adam).unwrap();
            last = r.loss;
        }
        let val = bsvie::trainer::validate(&params, problem, grid, config.m_val, config.seed, config.mode).unwrap();
        eprintln!("epoch {epoch}: last batch loss {last:.4e} val {val:.4e} lr {lr:.2e}");
    }
    params
}
