//! Run configuration: `key = value` text files, named profiles, and the
//! mapping onto training settings.
//!
//! Resolution order is defaults, then profile, then config file, then
//! command-line overrides — later assignments win. Lines starting with `#`
//! are comments.

use crate::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::net::NetConfig;
use crate::problem::{problem_by_id, ProblemOverrides, ProblemSpec, PROBLEM_IDS};
use crate::trainer::TrainConfig;

/// Everything a run needs, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: Option<String>,
    pub profile: String,
    pub seed: u64,
    pub grid_n: usize,
    pub m_train: usize,
    pub m_batch: usize,
    pub k_epoch: usize,
    pub lr0: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m_val: usize,
    pub m_eval: usize,
    pub width_y: usize,
    pub width_z: usize,
    pub time_scale: f64,
    pub threads: usize,
    pub closed_form_bypass: bool,
    pub problem_k: Option<f64>,
    pub coupling_b: Option<f64>,
    pub dim: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let desk = TrainConfig::desk(0);
        RunConfig {
            problem: None,
            profile: "desk".into(),
            seed: 0,
            grid_n: 20,
            m_train: desk.m_train,
            m_batch: desk.m_batch,
            k_epoch: desk.k_epoch,
            lr0: desk.lr0,
            decay: desk.decay,
            beta1: desk.adam.beta1,
            beta2: desk.adam.beta2,
            epsilon: desk.adam.epsilon,
            m_val: desk.m_val,
            m_eval: 1 << 12,
            width_y: desk.net.width_y,
            width_z: desk.net.width_z,
            time_scale: 1.0,
            threads: 0,
            closed_form_bypass: false,
            problem_k: None,
            coupling_b: None,
            dim: None,
        }
    }
}

impl RunConfig {
    /// Assign one key. Unknown keys and malformed values are errors naming
    /// the field.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
        }
        match key {
            "problem" => {
                if !PROBLEM_IDS.contains(&value) {
                    return Err(Error::config(
                        "problem",
                        format!("unknown problem `{value}`; known: {}", PROBLEM_IDS.join(", ")),
                    ));
                }
                self.problem = Some(value.to_string());
            }
            "profile" => match value {
                "desk" => {
                    let d = TrainConfig::desk(self.seed);
                    self.profile = "desk".into();
                    self.m_train = d.m_train;
                    self.m_batch = d.m_batch;
                    self.k_epoch = d.k_epoch;
                }
                "paper" => {
                    let p = TrainConfig::paper(self.seed);
                    self.profile = "paper".into();
                    self.m_train = p.m_train;
                    self.m_batch = p.m_batch;
                    self.k_epoch = p.k_epoch;
                }
                other => {
                    return Err(Error::config(
                        "profile",
                        format!("unknown profile `{other}` (desk or paper)"),
                    ))
                }
            },
            "seed" => self.seed = num(key, value)?,
            "grid_n" => self.grid_n = num(key, value)?,
            "m_train" => self.m_train = num(key, value)?,
            "m_batch" => self.m_batch = num(key, value)?,
            "k_epoch" => self.k_epoch = num(key, value)?,
            "lr0" => self.lr0 = num(key, value)?,
            "decay" => self.decay = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "m_val" => self.m_val = num(key, value)?,
            "m_eval" => self.m_eval = num(key, value)?,
            "width_y" => self.width_y = num(key, value)?,
            "width_z" => self.width_z = num(key, value)?,
            "time_scale" => self.time_scale = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "closed_form_bypass" => {
                self.closed_form_bypass = match value {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    other => {
                        return Err(Error::config(
                            "closed_form_bypass",
                            format!("expected boolean, got `{other}`"),
                        ))
                    }
                }
            }
            "problem_k" => self.problem_k = Some(num(key, value)?),
            "coupling_b" => self.coupling_b = Some(num(key, value)?),
            "dim" => self.dim = Some(num(key, value)?),
            other => {
                return Err(Error::config(other, "unknown configuration key"));
            }
        }
        Ok(())
    }

    /// Apply a `key = value` file.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(
                    "config",
                    format!("line {}: expected `key = value`, got `{raw}`", lineno + 1),
                ));
            };
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn problem_overrides(&self) -> ProblemOverrides {
        ProblemOverrides {
            k: self.problem_k,
            coupling_b: self.coupling_b,
            dim: self.dim,
        }
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let id = self
            .problem
            .as_deref()
            .ok_or_else(|| Error::config("problem", "missing problem id"))?;
        problem_by_id(id, &self.problem_overrides())
            .ok_or_else(|| Error::config("problem", format!("unknown problem `{id}`")))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            m_train: self.m_train,
            m_batch: self.m_batch,
            k_epoch: self.k_epoch,
            lr0: self.lr0,
            decay: self.decay,
            adam: AdamConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            seed: self.seed,
            m_val: self.m_val,
            net: NetConfig {
                width_y: self.width_y,
                width_z: self.width_z,
                time_scale: self.time_scale,
            },
            mode: ExecMode::default(),
        }
    }

    /// Resolved snapshot as ordered key = value pairs (manifest content).
    pub fn snapshot(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("profile".into(), self.profile.clone()),
            ("seed".into(), self.seed.to_string()),
            ("grid_n".into(), self.grid_n.to_string()),
            ("m_train".into(), self.m_train.to_string()),
            ("m_batch".into(), self.m_batch.to_string()),
            ("k_epoch".into(), self.k_epoch.to_string()),
            ("lr0".into(), self.lr0.to_string()),
            ("decay".into(), self.decay.to_string()),
            ("beta1".into(), self.beta1.to_string()),
            ("beta2".into(), self.beta2.to_string()),
            ("epsilon".into(), self.epsilon.to_string()),
            ("m_val".into(), self.m_val.to_string()),
            ("m_eval".into(), self.m_eval.to_string()),
            ("width_y".into(), self.width_y.to_string()),
            ("width_z".into(), self.width_z.to_string()),
            ("time_scale".into(), self.time_scale.to_string()),
            ("threads".into(), self.threads.to_string()),
            (
                "closed_form_bypass".into(),
                self.closed_form_bypass.to_string(),
            ),
        ];
        if let Some(p) = &self.problem {
            out.insert(0, ("problem".into(), p.clone()));
        }
        if let Some(k) = self.problem_k {
            out.push(("problem_k".into(), k.to_string()));
        }
        if let Some(b) = self.coupling_b {
            out.push(("coupling_b".into(), b.to_string()));
        }
        if let Some(d) = self.dim {
            out.push(("dim".into(), d.to_string()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_file_and_resolve() {
        let mut rc = RunConfig::default();
        rc.apply_file(
            "# comment\n\
             problem = example1b\n\
             profile = paper\n\
             seed = 9\n\
             grid_n = 40\n\
             lr0 = 0.001\n",
        )
        .unwrap();
        assert_eq!(rc.problem.as_deref(), Some("example1b"));
        assert_eq!(rc.m_train, 1 << 18);
        assert_eq!(rc.grid_n, 40);
        assert_eq!(rc.lr0, 0.001);
        let tc = rc.train_config();
        assert_eq!(tc.m_batch, 1 << 11);
        assert_eq!(tc.seed, 9);
    }

    #[test]
    fn later_keys_override_profile() {
        let mut rc = RunConfig::default();
        rc.apply_file("profile = paper\nm_train = 1024\nm_batch = 256\n")
            .unwrap();
        assert_eq!(rc.m_train, 1024);
        assert_eq!(rc.m_batch, 256);
        assert_eq!(rc.k_epoch, 10);
    }

    #[test]
    fn errors_name_the_field() {
        let mut rc = RunConfig::default();
        let err = rc.apply("grid_n", "soon").unwrap_err();
        assert!(err.to_string().contains("grid_n"));
        let err = rc.apply("wavelength", "5").unwrap_err();
        assert!(err.to_string().contains("wavelength"));
        let err = rc.apply("problem", "example9").unwrap_err();
        assert!(err.to_string().contains("example9"));
        let err = rc.apply_file("no equals sign here\n").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn snapshot_round_trips_through_apply() {
        let mut rc = RunConfig::default();
        rc.apply("problem", "example3").unwrap();
        rc.apply("coupling_b", "0.5").unwrap();
        rc.apply("seed", "123").unwrap();
        let snap = rc.snapshot();
        let mut rc2 = RunConfig::default();
        for (k, v) in &snap {
            rc2.apply(k, v).unwrap();
        }
        assert_eq!(rc, rc2);
    }

    #[test]
    fn missing_problem_id_is_a_config_error() {
        let rc = RunConfig::default();
        let err = rc.problem_spec().unwrap_err();
        assert!(err.to_string().contains("problem"));
    }
}
