use bsvie::exec::ExecMode;
use bsvie::grid::TimeGrid;
use bsvie::problem::{example_1a, ProblemOverrides};
use bsvie::trainer::{train, TrainConfig};

fn main() {
    let p = example_1a(&ProblemOverrides::default());
    let grid = TimeGrid::new(1.0, 10);
    let config = TrainConfig {
        k_epoch: 1,
        mode: ExecMode::Parallel,
        ..TrainConfig::desk(7)
    };
    let t0 = std::time::Instant::now();
    let out = train(&config, &p, grid).unwrap();
    println!(
        "N=10: 1 epoch in {:.1?}; last {:.4e} val {:.4e}",
        t0.elapsed(),
        out.report.steps.last().unwrap().train_loss,
        out.report.final_val_loss,
    );
}
