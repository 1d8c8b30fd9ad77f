use bsvie::exec::ExecMode;
use bsvie::grid::TimeGrid;
use bsvie::problem::{example_1a, ProblemOverrides};
use bsvie::trainer::{train, TrainConfig};

fn main() {
    let p = example_1a(&ProblemOverrides::default());
    let grid = TimeGrid::new(1.0, 20);
    // one-epoch desk-profile probe
    let config = TrainConfig {
        k_epoch: 1,
        mode: ExecMode::Parallel,
        ..TrainConfig::desk(7)
    };
    let t0 = std::time::Instant::now();
    let out = train(&config, &p, grid).unwrap();
    println!(
        "1 epoch ({} steps) in {:.1?}; first loss {:.4e}, last loss {:.4e}, val {:.4e} (init {:.4e})",
        out.report.steps.len(),
        t0.elapsed(),
        out.report.steps.first().unwrap().train_loss,
        out.report.steps.last().unwrap().train_loss,
        out.report.final_val_loss,
        out.report.initial_val_loss,
    );
}
