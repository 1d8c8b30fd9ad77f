use bsvie::exec::ExecMode;
use bsvie::grid::TimeGrid;
use bsvie::metrics::{compute_errors, EvalSource};
use bsvie::problem::{example_1a, example_1b, ProblemOverrides};
use bsvie::trainer::{train, TrainConfig};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    if which == "c5" {
        // criterion 5: 1A desk, N=20
        let p = example_1a(&ProblemOverrides::default());
        let grid = TimeGrid::new(1.0, 20);
        let config = TrainConfig { mode: ExecMode::Parallel, ..TrainConfig::desk(7) };
        let t0 = std::time::Instant::now();
        let out = train(&config, &p, grid).unwrap();
        let r = compute_errors(EvalSource::Trained(&out.params), &p, grid, 1 << 12, 99, ExecMode::Parallel).unwrap();
        println!("c5 1A N=20 desk: err_y {:.4e} err_z {:.4e} err_t {:.4e} init_val {:.4e} final_val {:.4e} wall {:.0?}",
            r.err_y, r.err_z, r.err_t, out.report.initial_val_loss, out.report.final_val_loss, t0.elapsed());
    } else if which == "c8" {
        // criterion 8 probe: 1B desk at d in {1,5,20}, N=10, one seed
        for d in [1usize, 5, 20] {
            let p = example_1b(&ProblemOverrides { dim: Some(d), ..Default::default() });
            let grid = TimeGrid::new(1.0, 10);
            let config = TrainConfig { mode: ExecMode::Parallel, ..TrainConfig::desk(3) };
            let t0 = std::time::Instant::now();
            let out = train(&config, &p, grid).unwrap();
            let wall = t0.elapsed();
            let r = compute_errors(EvalSource::Trained(&out.params), &p, grid, 1 << 12, 99, ExecMode::Parallel).unwrap();
            println!("c8 1B d={d} N=10 desk: err_y {:.4e} err_z {:.4e} err_t {:.4e} train_wall {:.0?}",
                r.err_y, r.err_z, r.err_t, wall);
        }
    }
}
