//! Command implementations: each writes its outputs plus a manifest into a
//! fresh run directory and prints a short summary to stdout.

use bsvie::checkpoint::{self, CheckpointMeta};
use bsvie::config::RunConfig;
use bsvie::convergence::{dimension_study, fit_order, plugin_loss_curve};
use bsvie::error::{Error, Result};
use bsvie::exec::{chunk_ranges, map_chunks, ExecMode};
use bsvie::fields::{ClosedFormProvider, FieldProvider, NetProvider};
use bsvie::grid::TimeGrid;
use bsvie::manifest::RunManifest;
use bsvie::metrics::{compute_errors, EvalSource};
use bsvie::net::NetworkParams;
use bsvie::problem::{example_1a, ProblemSpec};
use bsvie::rng::streams;
use bsvie::sde::{exact_forward, simulate_chunk, write_paths_csv, PathBatch};
use bsvie::stability::stability_check;
use bsvie::tape::Tape;
use bsvie::tensor::Tensor;
use bsvie::trainer::{train, TrainConfig, TrainOutput};
use std::path::{Path, PathBuf};

pub fn set_thread_pool(n: usize) {
    bsvie::exec::set_threads(n);
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Fresh directory `<root>/<command>-<tag>-seed<seed>-<unixtime>[-k]`.
fn make_run_dir(root: &Path, command: &str, tag: &str, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(root)?;
    let base = format!("{command}-{tag}-seed{seed}-{}", unix_now());
    let mut dir = root.join(&base);
    let mut k = 0;
    while dir.exists() {
        k += 1;
        dir = root.join(format!("{base}-{k}"));
    }
    std::fs::create_dir(&dir)?;
    Ok(dir)
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)?;
    Ok(())
}

struct Csv {
    buf: String,
}

impl Csv {
    fn new(header: &str) -> Self {
        Csv {
            buf: format!("{header}\n"),
        }
    }

    fn row(&mut self, fields: &[String]) {
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    fn save(self, path: &Path) -> Result<()> {
        write_text(path, &self.buf)
    }
}

fn f(v: f64) -> String {
    // Shortest round-trip decimal; always '.' as the decimal separator.
    format!("{v}")
}

// ---------------------------------------------------------------- train --

pub fn cmd_train(rc: &RunConfig, out_root: &Path) -> Result<()> {
    let problem = rc.problem_spec()?;
    let grid = TimeGrid::new(problem.horizon, rc.grid_n);
    let tc = rc.train_config();
    let dir = make_run_dir(out_root, "train", &problem.id, rc.seed)?;

    let t0 = std::time::Instant::now();
    let out = train(&tc, &problem, grid)?;
    let wall = t0.elapsed().as_secs_f64();

    write_loss_trace(&dir.join("loss_trace.csv"), &tc, &out)?;
    let ckpt = dir.join("checkpoint.bsvc");
    checkpoint::save(
        &ckpt,
        &out.params,
        &CheckpointMeta {
            problem_id: problem.id.clone(),
            seed: rc.seed,
        },
    )?;
    let mut timings = Csv::new("epoch,seconds");
    for (e, s) in out.report.epoch_wall_s.iter().enumerate() {
        timings.row(&[e.to_string(), f(*s)]);
    }
    timings.save(&dir.join("timings.csv"))?;

    let summary = format!(
        "train {} grid_n={} profile={} seed={}\n\
         initial validation loss: {}\n\
         final validation loss:   {}\n\
         parameters: {}\n\
         wall clock: {:.1} s\n",
        problem.id,
        rc.grid_n,
        rc.profile,
        rc.seed,
        f(out.report.initial_val_loss),
        f(out.report.final_val_loss),
        out.params.param_count(),
        wall
    );
    write_text(&dir.join("summary.txt"), &summary)?;
    print!("{summary}");

    let mut manifest = RunManifest::new("train", rc.snapshot());
    manifest.add_output("loss_trace.csv", true);
    manifest.add_output("checkpoint.bsvc", true);
    manifest.add_output("timings.csv", false);
    manifest.add_output("summary.txt", false);
    manifest.write(&dir.join("manifest.txt"))?;
    println!("outputs: {}", dir.display());
    Ok(())
}

fn write_loss_trace(path: &Path, tc: &TrainConfig, out: &TrainOutput) -> Result<()> {
    let mut csv = Csv::new("step,epoch,lr,train_loss,val_loss");
    let k_batch = tc.k_batch();
    for rec in &out.report.steps {
        let val = if (rec.step + 1) % k_batch == 0 {
            f(out.report.epoch_val_loss[rec.epoch])
        } else {
            String::new()
        };
        csv.row(&[
            rec.step.to_string(),
            rec.epoch.to_string(),
            f(rec.lr),
            f(rec.train_loss),
            val,
        ]);
    }
    csv.save(path)
}

// ----------------------------------------------------------------- eval --

pub fn cmd_eval(
    rc: &RunConfig,
    checkpoint_path: Option<&Path>,
    dump_paths: bool,
    out_root: &Path,
) -> Result<()> {
    let problem = rc.problem_spec()?;
    let grid = TimeGrid::new(problem.horizon, rc.grid_n);
    let dir = make_run_dir(out_root, "eval", &problem.id, rc.seed)?;

    let loaded;
    let source = if rc.closed_form_bypass {
        EvalSource::ClosedFormBypass
    } else {
        let path = checkpoint_path.ok_or_else(|| {
            Error::config("checkpoint", "eval needs --checkpoint or --closed-form-bypass")
        })?;
        let (params, meta) = checkpoint::load(path)?;
        if params.state_dim != problem.state_dim || params.noise_dim != problem.noise_dim {
            return Err(Error::CheckpointMismatch {
                expected: format!("(d={}, ell={})", problem.state_dim, problem.noise_dim),
                got: format!(
                    "(d={}, ell={}) from problem `{}`",
                    params.state_dim, params.noise_dim, meta.problem_id
                ),
            });
        }
        loaded = params;
        EvalSource::Trained(&loaded)
    };

    let report = compute_errors(source, &problem, grid, rc.m_eval, rc.seed, ExecMode::default())?;
    let mut csv = Csv::new("problem,d,n,m,err_y,err_z,err_t,seed");
    csv.row(&[
        problem.id.clone(),
        problem.state_dim.to_string(),
        grid.n_steps().to_string(),
        rc.m_eval.to_string(),
        f(report.err_y),
        f(report.err_z),
        f(report.err_t),
        rc.seed.to_string(),
    ]);
    csv.save(&dir.join("errors.csv"))?;

    let mut manifest = RunManifest::new("eval", {
        let mut snap = rc.snapshot();
        if let Some(p) = checkpoint_path {
            snap.push(("checkpoint".into(), p.display().to_string()));
        }
        if dump_paths {
            snap.push(("dump_paths".into(), "true".into()));
        }
        snap
    });
    manifest.add_output("errors.csv", true);

    if dump_paths {
        let batch = PathBatch::generate(
            &problem,
            grid,
            rc.m_eval.min(64),
            rc.seed,
            streams::EVALUATION,
            ExecMode::default(),
        )?;
        let mut buf = Vec::new();
        write_paths_csv(&mut buf, &batch)?;
        std::fs::write(dir.join("paths.csv"), buf)?;
        manifest.add_output("paths.csv", true);
    }

    let summary = format!(
        "eval {} grid_n={} m={} seed={} source={}\n\
         err_y = {}\nerr_z = {}\nerr_t = {}\n",
        problem.id,
        grid.n_steps(),
        rc.m_eval,
        rc.seed,
        if rc.closed_form_bypass { "closed-form" } else { "checkpoint" },
        f(report.err_y),
        f(report.err_z),
        f(report.err_t)
    );
    write_text(&dir.join("summary.txt"), &summary)?;
    manifest.add_output("summary.txt", true);
    manifest.write(&dir.join("manifest.txt"))?;
    print!("{summary}");
    println!("outputs: {}", dir.display());
    Ok(())
}

// ------------------------------------------------------------ reproduce --

pub fn cmd_reproduce(
    rc: &RunConfig,
    target: &str,
    dims: Option<&str>,
    out_root: &Path,
) -> Result<()> {
    match target {
        "fig4" => reproduce_fig4(rc, out_root),
        "fig5" => reproduce_fig5(rc, out_root),
        "table1" => reproduce_table1(rc, dims, out_root),
        "example2" => reproduce_example(rc, "example2", out_root),
        "example3" => reproduce_example(rc, "example3", out_root),
        "stability" => reproduce_stability(rc, out_root),
        other => Err(Error::config(
            "target",
            format!("unknown target `{other}` (fig4, fig5, table1, example2, example3, stability)"),
        )),
    }
}

fn train_for(rc: &RunConfig, problem: &ProblemSpec, grid: TimeGrid) -> Result<TrainOutput> {
    let tc = rc.train_config();
    train(&tc, problem, grid)
}

/// Per-time sample mean (and percentile band) of the approximate and
/// reference value fields on fresh paths.
struct MeanCurves {
    times: Vec<f64>,
    mean_approx: Vec<f64>,
    mean_ref: Vec<f64>,
    p05_approx: Vec<f64>,
    p95_approx: Vec<f64>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn value_field_curves(
    problem: &ProblemSpec,
    grid: TimeGrid,
    params: Option<&NetworkParams>,
    m: usize,
    seed: u64,
) -> Result<MeanCurves> {
    let n = grid.n_steps();
    let batch = PathBatch::generate(problem, grid, m, seed, streams::EVALUATION, ExecMode::default())?;
    let x_ref_full = if !problem.coupled {
        Some(exact_forward(problem, grid, &batch.dw, m).unwrap_or_else(|| batch.x.clone().unwrap()))
    } else {
        None
    };

    // y_approx[path][step], y_ref[path][step]
    let chunks: Vec<Result<(Vec<f64>, Vec<f64>)>> = map_chunks(ExecMode::default(), m, |range| {
        let mc = range.len();
        let mut tape = Tape::new();
        let bound = params.map(|p| p.bind(&mut tape, false));
        let net_provider;
        let cf = ClosedFormProvider { problem };
        let approx: &dyn FieldProvider = match bound.as_ref() {
            Some(nets) => {
                net_provider = NetProvider { nets };
                &net_provider
            }
            None => &cf,
        };
        let reference = ClosedFormProvider { problem };

        let (xa, xr): (Vec<Tensor>, Vec<Tensor>) = if problem.coupled {
            let dw_blocks: Vec<Tensor> =
                (0..n).map(|k| batch.dw_block(k, range.clone())).collect();
            let sim_a = simulate_chunk(&mut tape, problem, grid, Some(approx), &dw_blocks, range.start)?;
            let sim_r =
                simulate_chunk(&mut tape, problem, grid, Some(&reference), &dw_blocks, range.start)?;
            (
                sim_a.x.iter().map(|v| tape.value(*v).clone()).collect(),
                sim_r.x.iter().map(|v| tape.value(*v).clone()).collect(),
            )
        } else {
            let xr_full = x_ref_full.as_ref().unwrap();
            let d = problem.state_dim;
            let mut xa = Vec::with_capacity(n + 1);
            let mut xr = Vec::with_capacity(n + 1);
            for k in 0..=n {
                xa.push(batch.x_block(k, range.clone()));
                let mut data = Vec::with_capacity(mc * d);
                for i in range.clone() {
                    let row = (k * m + i) * d;
                    data.extend_from_slice(&xr_full.data()[row..row + d]);
                }
                xr.push(Tensor::matrix(mc, d, data));
            }
            (xa, xr)
        };

        let mut ya = vec![0.0; mc * (n + 1)];
        let mut yr = vec![0.0; mc * (n + 1)];
        for k in 0..=n {
            let t_col = tape.constant(Tensor::full(vec![mc, 1], grid.t(k)));
            let xa_v = tape.constant(xa[k].clone());
            let xr_v = tape.constant(xr[k].clone());
            let a = approx.y(&mut tape, t_col, xa_v);
            let r = reference.y(&mut tape, t_col, xr_v);
            for i in 0..mc {
                ya[i * (n + 1) + k] = tape.value(a).data()[i];
                yr[i * (n + 1) + k] = tape.value(r).data()[i];
            }
        }
        Ok((ya, yr))
    });

    let mut y_approx = vec![0.0; m * (n + 1)];
    let mut y_ref = vec![0.0; m * (n + 1)];
    for (res, range) in chunks.into_iter().zip(chunk_ranges(m)) {
        let (ya, yr) = res?;
        y_approx[range.start * (n + 1)..range.end * (n + 1)].copy_from_slice(&ya);
        y_ref[range.start * (n + 1)..range.end * (n + 1)].copy_from_slice(&yr);
    }

    let mut curves = MeanCurves {
        times: (0..=n).map(|k| grid.t(k)).collect(),
        mean_approx: Vec::with_capacity(n + 1),
        mean_ref: Vec::with_capacity(n + 1),
        p05_approx: Vec::with_capacity(n + 1),
        p95_approx: Vec::with_capacity(n + 1),
    };
    for k in 0..=n {
        let mut col: Vec<f64> = (0..m).map(|i| y_approx[i * (n + 1) + k]).collect();
        let mean_a = col.iter().sum::<f64>() / m as f64;
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean_r = (0..m).map(|i| y_ref[i * (n + 1) + k]).sum::<f64>() / m as f64;
        curves.mean_approx.push(mean_a);
        curves.mean_ref.push(mean_r);
        curves.p05_approx.push(percentile(&col, 0.05));
        curves.p95_approx.push(percentile(&col, 0.95));
    }
    Ok(curves)
}

fn write_mean_curves(path: &Path, curves: &MeanCurves) -> Result<()> {
    let mut csv = Csv::new("t,y_mean_approx,y_mean_ref,y_p05_approx,y_p95_approx");
    for i in 0..curves.times.len() {
        csv.row(&[
            f(curves.times[i]),
            f(curves.mean_approx[i]),
            f(curves.mean_ref[i]),
            f(curves.p05_approx[i]),
            f(curves.p95_approx[i]),
        ]);
    }
    csv.save(path)
}

/// Sample mean of the first control component s -> Z_1(t_fix, s) for the
/// trained field and the closed-form reference.
fn control_mean_curve(
    problem: &ProblemSpec,
    grid: TimeGrid,
    params: Option<&NetworkParams>,
    t_index: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<(f64, f64, f64)>> {
    let n = grid.n_steps();
    let batch = PathBatch::generate(problem, grid, m, seed, streams::EVALUATION, ExecMode::default())?;
    let x_ref_full = if !problem.coupled {
        Some(exact_forward(problem, grid, &batch.dw, m).unwrap_or_else(|| batch.x.clone().unwrap()))
    } else {
        None
    };

    let sums: Vec<Result<(Vec<f64>, Vec<f64>)>> = map_chunks(ExecMode::default(), m, |range| {
        let mc = range.len();
        let mut tape = Tape::new();
        let bound = params.map(|p| p.bind(&mut tape, false));
        let net_provider;
        let cf = ClosedFormProvider { problem };
        let approx: &dyn FieldProvider = match bound.as_ref() {
            Some(nets) => {
                net_provider = NetProvider { nets };
                &net_provider
            }
            None => &cf,
        };
        let reference = ClosedFormProvider { problem };

        let (xa, xr): (Vec<Tensor>, Vec<Tensor>) = if problem.coupled {
            let dw_blocks: Vec<Tensor> =
                (0..n).map(|k| batch.dw_block(k, range.clone())).collect();
            let sim_a = simulate_chunk(&mut tape, problem, grid, Some(approx), &dw_blocks, range.start)?;
            let sim_r =
                simulate_chunk(&mut tape, problem, grid, Some(&reference), &dw_blocks, range.start)?;
            (
                sim_a.x.iter().map(|v| tape.value(*v).clone()).collect(),
                sim_r.x.iter().map(|v| tape.value(*v).clone()).collect(),
            )
        } else {
            let xr_full = x_ref_full.as_ref().unwrap();
            let d = problem.state_dim;
            let mut xa = Vec::with_capacity(n + 1);
            let mut xr = Vec::with_capacity(n + 1);
            for k in 0..=n {
                xa.push(batch.x_block(k, range.clone()));
                let mut data = Vec::with_capacity(mc * d);
                for i in range.clone() {
                    let row = (k * m + i) * d;
                    data.extend_from_slice(&xr_full.data()[row..row + d]);
                }
                xr.push(Tensor::matrix(mc, d, data));
            }
            (xa, xr)
        };

        let t_fix = grid.t(t_index);
        let mut sum_a = vec![0.0; n - t_index];
        let mut sum_r = vec![0.0; n - t_index];
        for s_idx in t_index..n {
            let t_col = tape.constant(Tensor::full(vec![mc, 1], t_fix));
            let s_col = tape.constant(Tensor::full(vec![mc, 1], grid.t(s_idx)));
            let xa_t = tape.constant(xa[t_index].clone());
            let xa_s = tape.constant(xa[s_idx].clone());
            let xr_t = tape.constant(xr[t_index].clone());
            let xr_s = tape.constant(xr[s_idx].clone());
            let za = approx.z(&mut tape, t_col, s_col, xa_t, xa_s);
            let zr = reference.z(&mut tape, t_col, s_col, xr_t, xr_s);
            let ell = problem.noise_dim;
            sum_a[s_idx - t_index] = (0..mc).map(|i| tape.value(za).data()[i * ell]).sum();
            sum_r[s_idx - t_index] = (0..mc).map(|i| tape.value(zr).data()[i * ell]).sum();
        }
        Ok((sum_a, sum_r))
    });

    let mut total_a = vec![0.0; n - t_index];
    let mut total_r = vec![0.0; n - t_index];
    for res in sums {
        let (sa, sr) = res?;
        for i in 0..sa.len() {
            total_a[i] += sa[i];
            total_r[i] += sr[i];
        }
    }
    Ok((t_index..n)
        .map(|s_idx| {
            (
                grid.t(s_idx),
                total_a[s_idx - t_index] / m as f64,
                total_r[s_idx - t_index] / m as f64,
            )
        })
        .collect())
}

fn reproduce_fig4(rc: &RunConfig, out_root: &Path) -> Result<()> {
    // Trained value/control fields of the multiplicative-noise example
    // against the closed forms: sample means and percentile bands.
    let mut rc = rc.clone();
    if rc.problem.is_none() {
        rc.apply("problem", "example1b")?;
    }
    let problem = rc.problem_spec()?;
    let grid = TimeGrid::new(problem.horizon, rc.grid_n);
    let dir = make_run_dir(out_root, "reproduce-fig4", &problem.id, rc.seed)?;

    let out = train_for(&rc, &problem, grid)?;
    let curves = value_field_curves(&problem, grid, Some(&out.params), rc.m_eval, rc.seed + 1)?;
    write_mean_curves(&dir.join("y_mean.csv"), &curves)?;

    let mut zcsv = Csv::new("t_fix,s,z1_mean_approx,z1_mean_ref");
    for t_index in [0usize, grid.n_steps() / 2] {
        for (s, a, r) in
            control_mean_curve(&problem, grid, Some(&out.params), t_index, rc.m_eval, rc.seed + 1)?
        {
            zcsv.row(&[f(grid.t(t_index)), f(s), f(a), f(r)]);
        }
    }
    zcsv.save(&dir.join("z_mean.csv"))?;

    let summary = format!(
        "fig4 {}: final val loss {}\nY mean curves in y_mean.csv, first control component in z_mean.csv\n",
        problem.id,
        f(out.report.final_val_loss)
    );
    write_text(&dir.join("summary.txt"), &summary)?;
    let mut manifest = RunManifest::new("reproduce", {
        let mut snap = rc.snapshot();
        snap.push(("target".into(), "fig4".into()));
        snap
    });
    manifest.add_output("y_mean.csv", true);
    manifest.add_output("z_mean.csv", true);
    manifest.add_output("summary.txt", true);
    manifest.write(&dir.join("manifest.txt"))?;
    print!("{summary}");
    println!("outputs: {}", dir.display());
    Ok(())
}

fn reproduce_fig5(rc: &RunConfig, out_root: &Path) -> Result<()> {
    let dir = make_run_dir(out_root, "reproduce-fig5", "orders", rc.seed)?;
    let mut csv = Csv::new("problem,series,n,h,value");
    let mut summary = String::new();

    for (id, ns) in [
        ("example1a", vec![10usize, 20, 30, 40, 50]),
        ("example1b", vec![10, 20, 30, 40]),
    ] {
        let problem = bsvie::problem::problem_by_id(id, &rc.problem_overrides()).unwrap();
        // Plug-in series (no training): pure discretization error.
        let plugin = plugin_loss_curve(&problem, &ns, rc.m_eval, rc.seed, ExecMode::default())?;
        for (i, &n) in ns.iter().enumerate() {
            csv.row(&[
                id.into(),
                "loss_plugin".into(),
                n.to_string(),
                f(problem.horizon / n as f64),
                f(plugin[i]),
            ]);
        }
        let plug_fit = fit_order(problem.horizon, &ns, &plugin);

        // Trained series.
        let tc = rc.train_config();
        let mut err_y = Vec::new();
        let mut err_z = Vec::new();
        let mut err_t = Vec::new();
        for &n in &ns {
            let grid = TimeGrid::new(problem.horizon, n);
            let out = train(&tc, &problem, grid)?;
            let rep = compute_errors(
                EvalSource::Trained(&out.params),
                &problem,
                grid,
                rc.m_eval,
                rc.seed + 1,
                ExecMode::default(),
            )?;
            for (series, v) in [("err_y", rep.err_y), ("err_z", rep.err_z), ("err_t", rep.err_t)] {
                csv.row(&[
                    id.into(),
                    series.into(),
                    n.to_string(),
                    f(problem.horizon / n as f64),
                    f(v),
                ]);
            }
            err_y.push(rep.err_y);
            err_z.push(rep.err_z);
            err_t.push(rep.err_t);
        }
        let fy = fit_order(problem.horizon, &ns, &err_y);
        let fz = fit_order(problem.horizon, &ns, &err_z);
        let ft = fit_order(problem.horizon, &ns, &err_t);
        let reported = if id == "example1a" { "1.0" } else { "0.5" };
        summary.push_str(&format!(
            "{id}: plug-in loss slope {:.3}; trained loss slope {:.3}; \
             Y rms order {:.3}, Z rms order {:.3} (reported Y/Z order: {reported}, loss order: 1)\n",
            plug_fit.slope,
            ft.slope,
            fy.slope / 2.0,
            fz.slope / 2.0
        ));
    }
    csv.save(&dir.join("convergence.csv"))?;
    write_text(&dir.join("summary.txt"), &summary)?;
    let mut manifest = RunManifest::new("reproduce", {
        let mut snap = rc.snapshot();
        snap.push(("target".into(), "fig5".into()));
        snap
    });
    manifest.add_output("convergence.csv", true);
    manifest.add_output("summary.txt", true);
    manifest.write(&dir.join("manifest.txt"))?;
    print!("{summary}");
    println!("outputs: {}", dir.display());
    Ok(())
}

fn reproduce_table1(rc: &RunConfig, dims: Option<&str>, out_root: &Path) -> Result<()> {
    let dims: Vec<usize> = match dims {
        Some(text) => text
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::config("dims", format!("bad dimension `{p}`")))
            })
            .collect::<Result<_>>()?,
        None => vec![1, 5, 20],
    };
    let dir = make_run_dir(out_root, "reproduce-table1", "dims", rc.seed)?;
    let tc = rc.train_config();
    let rows = dimension_study(&dims, &tc, rc.grid_n, rc.m_eval, rc.seed + 1)?;

    let mut csv = Csv::new("d,err_y,err_z,err_t,seed");
    let mut timings = Csv::new("d,train_seconds");
    let paper: &[(usize, f64, f64)] = &[
        (1, 7.7e-5, 8.2e-5),
        (5, 9.6e-5, 2.9e-5),
        (20, 1.8e-4, 7.9e-6),
        (100, 1.3e-3, 4.5e-6),
        (500, 8.0e-3, 2.9e-6),
    ];
    let mut summary = String::from("dimension scaling (multiplicative-noise family)\n");
    for row in &rows {
        csv.row(&[
            row.dim.to_string(),
            f(row.err_y),
            f(row.err_z),
            f(row.err_t),
            row.seed.to_string(),
        ]);
        timings.row(&[row.dim.to_string(), f(row.train_seconds)]);
        let reference = paper
            .iter()
            .find(|(d, _, _)| *d == row.dim)
            .map(|(_, y, z)| format!(" (full-scale reference: err_y {y:.1e}, err_z {z:.1e})"))
            .unwrap_or_default();
        summary.push_str(&format!(
            "d={}: err_y {:.3e} err_z {:.3e} err_t {:.3e} train {:.1}s{}\n",
            row.dim, row.err_y, row.err_z, row.err_t, row.train_seconds, reference
        ));
    }
    csv.save(&dir.join("dimension.csv"))?;
    timings.save(&dir.join("timings.csv"))?;
    write_text(&dir.join("summary.txt"), &summary)?;
    let mut manifest = RunManifest::new("reproduce", {
        let mut snap = rc.snapshot();
        snap.push(("target".into(), "table1".into()));
        snap.push((
            "dims".into(),
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
        ));
        snap
    });
    manifest.add_output("dimension.csv", true);
    manifest.add_output("timings.csv", false);
    manifest.add_output("summary.txt", false);
    manifest.write(&dir.join("manifest.txt"))?;
    print!("{summary}");
    println!("outputs: {}", dir.display());
    Ok(())
}

fn reproduce_example(rc: &RunConfig, id: &str, out_root: &Path) -> Result<()> {
    let mut rc = rc.clone();
    rc.apply("problem", id)?;
    let problem = rc.problem_spec()?;
    let grid = TimeGrid::new(problem.horizon, rc.grid_n);
    let dir = make_run_dir(out_root, &format!("reproduce-{id}"), &problem.id, rc.seed)?;

    let out = train_for(&rc, &problem, grid)?;
    let curves = value_field_curves(&problem, grid, Some(&out.params), rc.m_eval, rc.seed + 1)?;
    write_mean_curves(&dir.join("y_mean.csv"), &curves)?;
    let mut zcsv = Csv::new("t_fix,s,z1_mean_approx,z1_mean_ref");
    for t_index in [0usize, grid.n_steps() / 2] {
        for (s, a, r) in
            control_mean_curve(&problem, grid, Some(&out.params), t_index, rc.m_eval, rc.seed + 1)?
        {
            zcsv.row(&[f(grid.t(t_index)), f(s), f(a), f(r)]);
        }
    }
    zcsv.save(&dir.join("z_mean.csv"))?;

    // Mid-horizon tracking of the value-field mean vs the reference.
    let mid = grid.n_steps() / 2;
    let rel = (curves.mean_approx[mid] - curves.mean_ref[mid]).abs()
        / curves.mean_ref[mid].abs().max(1e-12);
    let summary = format!(
        "{id}: initial val loss {}, final val loss {}\n\
         mean Y at t={}: approx {} vs reference {} (relative gap {:.2}%)\n",
        f(out.report.initial_val_loss),
        f(out.report.final_val_loss),
        f(grid.t(mid)),
        f(curves.mean_approx[mid]),
        f(curves.mean_ref[mid]),
        rel * 100.0
    );
    write_text(&dir.join("summary.txt"), &summary)?;
    let mut manifest = RunManifest::new("reproduce", {
        let mut snap = rc.snapshot();
        snap.push(("target".into(), id.into()));
        snap
    });
    manifest.add_output("y_mean.csv", true);
    manifest.add_output("z_mean.csv", true);
    manifest.add_output("summary.txt", true);
    manifest.write(&dir.join("manifest.txt"))?;
    print!("{summary}");
    println!("outputs: {}", dir.display());
    Ok(())
}

fn reproduce_stability(rc: &RunConfig, out_root: &Path) -> Result<()> {
    let problem = example_1a(&rc.problem_overrides());
    let grid = TimeGrid::new(problem.horizon, 8);
    let dir = make_run_dir(out_root, "reproduce-stability", &problem.id, rc.seed)?;
    let m = 1 << 13;
    let pairs = 20;

    let mut csv = Csv::new("pair,k,n,lhs_y,rhs_y,lhs_z,rhs_z,violated_y,violated_z");
    let mut total_violations = 0;
    let mut k1 = 0.0;
    let mut c_y = 0.0;
    for pair in 0..pairs {
        let a = NetworkParams::init_dense(rc.seed * 1000 + 2 * pair, problem.state_dim, problem.noise_dim, rc.train_config().net);
        let b = NetworkParams::init_dense(rc.seed * 1000 + 2 * pair + 1, problem.state_dim, problem.noise_dim, rc.train_config().net);
        let report = stability_check(&problem, grid, &a, &b, m, rc.seed + pair, ExecMode::default())?;
        total_violations += report.violations;
        k1 = report.k1;
        c_y = report.c_y;
        for row in &report.rows {
            csv.row(&[
                pair.to_string(),
                row.k.to_string(),
                row.n.to_string(),
                f(row.lhs_y),
                f(row.rhs_y),
                f(row.lhs_z),
                f(row.rhs_z),
                row.violated_y.to_string(),
                row.violated_z.to_string(),
            ]);
        }
    }
    csv.save(&dir.join("stability.csv"))?;
    let summary = format!(
        "stability check: {pairs} random network pairs, N={}, M={m}\n\
         K1 = {k1:.4}, C_Y = {c_y:.2}, C_Z = {:.2}\n\
         violations beyond 3 standard errors: {total_violations}\n",
        grid.n_steps(),
        2.0 * c_y
    );
    write_text(&dir.join("summary.txt"), &summary)?;
    let mut manifest = RunManifest::new("reproduce", {
        let mut snap = rc.snapshot();
        snap.push(("target".into(), "stability".into()));
        snap
    });
    manifest.add_output("stability.csv", true);
    manifest.add_output("summary.txt", true);
    manifest.write(&dir.join("manifest.txt"))?;
    print!("{summary}");
    println!("outputs: {}", dir.display());
    if total_violations > 0 {
        return Err(Error::Contract(format!(
            "{total_violations} stability violations detected"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- rerun --

pub fn cmd_rerun(manifest_path: &Path, out_root: &Path) -> Result<()> {
    let manifest = RunManifest::read(manifest_path)?;
    let mut rc = RunConfig::default();
    let mut target = None;
    let mut dims = None;
    let mut checkpoint = None;
    let mut dump_paths = false;
    for (k, v) in &manifest.config {
        match k.as_str() {
            "target" => target = Some(v.clone()),
            "dims" => dims = Some(v.clone()),
            "checkpoint" => checkpoint = Some(PathBuf::from(v)),
            "dump_paths" => dump_paths = v == "true",
            _ => rc.apply(k, v)?,
        }
    }
    if rc.threads > 0 {
        set_thread_pool(rc.threads);
    }
    match manifest.command.as_str() {
        "train" => cmd_train(&rc, out_root),
        "eval" => cmd_eval(&rc, checkpoint.as_deref(), dump_paths, out_root),
        "reproduce" => {
            let target = target
                .ok_or_else(|| Error::Contract("reproduce manifest missing target".into()))?;
            cmd_reproduce(&rc, &target, dims.as_deref(), out_root)
        }
        other => Err(Error::Contract(format!("cannot rerun command `{other}`"))),
    }
}
