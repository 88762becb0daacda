//! Run configuration: one flat key=value namespace shared by the config
//! file, CLI overrides, and every report header.
//!
//! Precedence is CLI > file > default.  `echo()` emits the fully resolved
//! configuration in a form `apply` can read back, and every command embeds
//! it in its outputs for reproducibility.

use crate::error::{Error, Result};
use crate::flow::AuxLossMode;
use crate::model::adam::AdamConfig;
use crate::model::{ModelDims, Standpoint};
use crate::sampler::{GuidanceSchedule, SamplerConfig};

/// Training objective: flow-matching or direct endpoint regression.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossMode {
    #[default]
    Fm,
    Regression,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fm" => Ok(LossMode::Fm),
            "regression" => Ok(LossMode::Regression),
            other => Err(Error::Config(format!(
                "unknown loss `{other}` (expected fm|regression)"
            ))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Fm => "fm",
            LossMode::Regression => "regression",
        })
    }
}

/// Every tunable of the pipeline, with the documented defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub steps: usize,
    pub beta: f64,
    pub g_sq: f64,
    pub annealing: f64,
    pub zeta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sigma_x: f64,
    pub sigma_r: f64,
    pub omega: [f64; 4],
    pub seed: u64,
    pub aux_loss: AuxLossMode,
    pub standpoint: Standpoint,
    pub guidance_schedule: GuidanceSchedule,
    pub eps_t: f64,
    pub hidden: usize,
    pub head_hidden: usize,
    pub loss: LossMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            steps: 2,
            beta: 0.1,
            g_sq: 1.0,
            annealing: 1.0,
            zeta: 0.0,
            gamma: 0.0,
            lambda: 1.0,
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 100,
            batch_size: 8,
            sigma_x: 1.0,
            sigma_r: 0.2,
            omega: [0.5; 4],
            seed: 0,
            aux_loss: AuxLossMode::default(),
            standpoint: Standpoint::default(),
            guidance_schedule: GuidanceSchedule::default(),
            eps_t: crate::flow::EPS_T,
            hidden: 128,
            head_hidden: 64,
            loss: LossMode::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for key `{key}`")))
}

impl RunConfig {
    /// Sets one key from its textual value; unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "steps" => self.steps = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "g_sq" => self.g_sq = parse_num(key, value)?,
            "annealing" => self.annealing = parse_num(key, value)?,
            "zeta" => self.zeta = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "sigma_x" => self.sigma_x = parse_num(key, value)?,
            "sigma_r" => self.sigma_r = parse_num(key, value)?,
            "omega" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 4 {
                    return Err(Error::Config(format!(
                        "omega needs 4 comma-separated weights, got `{value}`"
                    )));
                }
                for (slot, part) in self.omega.iter_mut().zip(parts) {
                    *slot = parse_num("omega", part)?;
                }
            }
            "seed" => self.seed = parse_num(key, value)?,
            "aux_loss" => self.aux_loss = value.parse()?,
            "standpoint" => self.standpoint = value.parse()?,
            "guidance_schedule" => self.guidance_schedule = value.parse()?,
            "eps_t" => self.eps_t = parse_num(key, value)?,
            "hidden" => self.hidden = parse_num(key, value)?,
            "head_hidden" => self.head_hidden = parse_num(key, value)?,
            "loss" => self.loss = value.parse()?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a key=value file: one pair per line, `#` comments, blank
    /// lines ignored.  Later lines override earlier ones.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key=value, got `{line}`", idx + 1))
            })?;
            self.apply(key.trim(), value)?;
        }
        Ok(())
    }

    /// Resolves default -> file -> overrides, then validates.
    pub fn resolve(file: Option<&str>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(text) = file {
            cfg.apply_file(text)?;
        }
        for (key, value) in overrides {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.hidden == 0 || self.head_hidden == 0 {
            return Err(Error::Config("model widths must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.sigma_x < 0.0 || self.sigma_r < 0.0 {
            return Err(Error::Config("noise stds must be non-negative".into()));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.omega.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("omega weights must be non-negative".into()));
        }
        self.sampler_config().validate()
    }

    /// The fully resolved configuration as `key=value` lines, one per key,
    /// in declaration order; `apply_file` reads this back verbatim.
    pub fn echo(&self) -> String {
        format!(
            "steps={}\nbeta={}\ng_sq={}\nannealing={}\nzeta={}\ngamma={}\nlambda={}\nlr={}\n\
             weight_decay={}\nepochs={}\nbatch_size={}\nsigma_x={}\nsigma_r={}\n\
             omega={},{},{},{}\nseed={}\naux_loss={}\nstandpoint={}\nguidance_schedule={}\n\
             eps_t={}\nhidden={}\nhead_hidden={}\nloss={}\n",
            self.steps,
            self.beta,
            self.g_sq,
            self.annealing,
            self.zeta,
            self.gamma,
            self.lambda,
            self.lr,
            self.weight_decay,
            self.epochs,
            self.batch_size,
            self.sigma_x,
            self.sigma_r,
            self.omega[0],
            self.omega[1],
            self.omega[2],
            self.omega[3],
            self.seed,
            self.aux_loss,
            self.standpoint,
            self.guidance_schedule,
            self.eps_t,
            self.hidden,
            self.head_hidden,
            self.loss,
        )
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            steps: self.steps,
            guidance_scale_sq: self.g_sq,
            beta: self.beta,
            annealing: self.annealing,
            zeta: self.zeta,
            gamma: self.gamma,
            seed: self.seed,
            guidance_schedule: self.guidance_schedule,
            standpoint: self.standpoint,
            eps_t: self.eps_t,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims { hidden: self.hidden, head_hidden: self.head_hidden }
    }

    /// Guidance energy parameters; beta stays at the energy default of 1
    /// because the sampler owns the beta scaling.
    pub fn energy_params(&self) -> crate::energy::EnergyParams {
        crate::energy::EnergyParams { omega: self.omega, ..Default::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documentation() {
        let c = RunConfig::default();
        assert_eq!(c.steps, 2);
        assert_eq!(c.beta, 0.1);
        assert_eq!(c.g_sq, 1.0);
        assert_eq!(c.annealing, 1.0);
        assert_eq!(c.zeta, 0.0);
        assert_eq!(c.gamma, 0.0);
        assert_eq!(c.lambda, 1.0);
        assert_eq!(c.lr, 1e-4);
        assert_eq!(c.weight_decay, 1e-4);
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.omega, [0.5; 4]);
        assert_eq!(c.aux_loss, AuxLossMode::Pairwise2d);
        assert_eq!(c.standpoint, Standpoint::Prior);
        assert_eq!(c.guidance_schedule, GuidanceSchedule::Constant);
        assert_eq!(c.loss, LossMode::Fm);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn file_parsing_with_comments_and_precedence() {
        let file = "\
# toy settings
steps = 4
beta=0.05

omega = 1,0,0.5,0.25
seed=42
";
        let overrides = vec![("beta".to_string(), "0.2".to_string())];
        let cfg = RunConfig::resolve(Some(file), &overrides).unwrap();
        assert_eq!(cfg.steps, 4);
        assert_eq!(cfg.beta, 0.2, "CLI override beats the file");
        assert_eq!(cfg.omega, [1.0, 0.0, 0.5, 0.25]);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.lambda, 1.0, "untouched keys keep defaults");
    }

    #[test]
    fn later_file_lines_override_earlier() {
        let mut cfg = RunConfig::default();
        cfg.apply_file("steps=3\nsteps=7\n").unwrap();
        assert_eq!(cfg.steps, 7);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply("stepz", "3"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply("steps", "three"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply("omega", "1,2,3"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply_file("steps\n"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply("loss", "mse"), Err(Error::Config(_))));
    }

    #[test]
    fn enum_keys_parse() {
        let mut cfg = RunConfig::default();
        cfg.apply("aux_loss", "adjacent_ca").unwrap();
        cfg.apply("standpoint", "state").unwrap();
        cfg.apply("guidance_schedule", "dt").unwrap();
        cfg.apply("loss", "regression").unwrap();
        assert_eq!(cfg.aux_loss, AuxLossMode::AdjacentCa);
        assert_eq!(cfg.standpoint, Standpoint::State);
        assert_eq!(cfg.guidance_schedule, GuidanceSchedule::Dt);
        assert_eq!(cfg.loss, LossMode::Regression);
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        for (k, v) in [
            ("steps", "9"),
            ("beta", "0.12"),
            ("omega", "0.1,0.2,0.3,0.4"),
            ("aux_loss", "adjacent_ca"),
            ("standpoint", "state"),
            ("guidance_schedule", "dt"),
            ("loss", "regression"),
            ("epochs", "3"),
            ("sigma_r", "0.35"),
            ("seed", "123456789"),
        ] {
            cfg.apply(k, v).unwrap();
        }
        let mut back = RunConfig::default();
        back.apply_file(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.echo().lines().count(), 22, "one line per key");
    }

    #[test]
    fn epochs_zero_is_legal() {
        let mut cfg = RunConfig::default();
        cfg.apply("epochs", "0").unwrap();
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn validate_rejects_out_of_range() {
        for (k, v) in [
            ("steps", "0"),
            ("batch_size", "0"),
            ("lr", "0"),
            ("lr", "-1e-4"),
            ("sigma_x", "-0.1"),
            ("omega", "0.5,-0.5,0.5,0.5"),
            ("annealing", "0"),
            ("eps_t", "1.5"),
            ("hidden", "0"),
        ] {
            let mut cfg = RunConfig::default();
            cfg.apply(k, v).unwrap();
            assert!(cfg.validate().is_err(), "{k}={v} should fail validation");
        }
    }

    #[test]
    fn derived_configs_carry_the_right_fields() {
        let mut cfg = RunConfig::default();
        cfg.apply("beta", "0.05").unwrap();
        cfg.apply("omega", "1,1,1,1").unwrap();
        cfg.apply("hidden", "16").unwrap();
        cfg.apply("lr", "0.001").unwrap();
        let s = cfg.sampler_config();
        assert_eq!(s.beta, 0.05);
        assert_eq!(s.steps, 2);
        let e = cfg.energy_params();
        assert_eq!(e.omega, [1.0; 4]);
        assert_eq!(e.beta, 1.0, "sampler owns beta; energy keeps its default");
        assert_eq!(cfg.model_dims().hidden, 16);
        assert_eq!(cfg.adam_config().lr, 0.001);
        assert_eq!(cfg.adam_config().beta1, 0.9);
    }
}
