use bsvie::convergence::{fit_order, plugin_loss_curve, plugin_error_curve};
use bsvie::exec::ExecMode;
use bsvie::problem::{example_1a, example_1b, ProblemOverrides};

fn main() {
    let ns = [10usize, 20, 40, 80];
    let m = 1 << 12;
    let p1a = example_1a(&ProblemOverrides::default());
    let t0 = std::time::Instant::now();
    let losses = plugin_loss_curve(&p1a, &ns, m, 7, ExecMode::Parallel).unwrap();
    println!("1A plug-in losses {:?} ({:.1?})", losses, t0.elapsed());
    let fit = fit_order(1.0, &ns, &losses);
    println!("1A loss slope {:.4} r2 {:.5}", fit.slope, fit.r_squared);

    let p1b = example_1b(&ProblemOverrides::default());
    let t0 = std::time::Instant::now();
    let losses_b = plugin_loss_curve(&p1b, &ns, m, 7, ExecMode::Parallel).unwrap();
    println!("1B plug-in losses {:?} ({:.1?})", losses_b, t0.elapsed());
    let fit_b = fit_order(1.0, &ns, &losses_b);
    println!("1B loss slope(all-Euler) {:.4} r2 {:.5}", fit_b.slope, fit_b.r_squared);

    // With exact-GBM references: plug-in error metrics (bypass)
    let t0 = std::time::Instant::now();
    let errs = plugin_error_curve(&p1b, &ns, m, 7, ExecMode::Parallel).unwrap();
    let ey: Vec<f64> = errs.iter().map(|e| e.err_y).collect();
    let ez: Vec<f64> = errs.iter().map(|e| e.err_z).collect();
    let et: Vec<f64> = errs.iter().map(|e| e.err_t).collect();
    println!("1B bypass err_y {:?}", ey);
    println!("1B bypass err_z {:?}", ez);
    println!("1B bypass err_t {:?} ({:.1?})", et, t0.elapsed());
    println!("1B err_y raw slope {:.4} (rms {:.4})", fit_order(1.0,&ns,&ey).slope, fit_order(1.0,&ns,&ey).slope/2.0);
    println!("1B err_z raw slope {:.4} (rms {:.4})", fit_order(1.0,&ns,&ez).slope, fit_order(1.0,&ns,&ez).slope/2.0);
    println!("1B err_t raw slope {:.4} (rms {:.4})", fit_order(1.0,&ns,&et).slope, fit_order(1.0,&ns,&et).slope/2.0);
}
