//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; missing
//! keys take the defaults below. Unknown and repeated keys are rejected.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiments::TaskSpec;
use crate::model::ModelConfig;
use crate::trainer::{Mode, TrainerConfig};

/// Every accepted key with a one-line description, in serialization order.
pub const KEYS: &[(&str, &str)] = &[
    ("r0", "base rank; a head's rank is max(1, round(r0 * alpha)) (default 16)"),
    ("lambda", "weight of the scale regularizer in the meta-loss (default 0.01)"),
    ("beta", "weight of the temporal smoothness term inside the regularizer (default 0.1)"),
    ("eta_theta", "SGD learning rate for the factor pairs A, B (default 1e-4)"),
    ("eta_alpha", "SGD learning rate for the scales alpha; 0 freezes them (default 5e-5)"),
    ("clip_c", "scale gradients are clipped to [-clip_c, clip_c] (default 10)"),
    ("steps", "number of full-batch training steps (default 3000)"),
    ("layers", "network depth (default 3)"),
    ("heads", "heads per layer (default 4)"),
    ("d", "output dimension of each head weight (default 32)"),
    ("k", "input dimension of every layer (default 32)"),
    ("planted_ranks", "comma list of teacher delta ranks, cycled over heads (default 1,2,4,8)"),
    ("n_samples", "size of the synthetic dataset (default 512)"),
    ("noise", "std of Gaussian noise added to targets (default 0)"),
    ("seed", "seed for every random draw of the run (default 0)"),
    ("mode", "adaptive | uniform; uniform freezes every scale at 1 (default adaptive)"),
    ("resize_every", "steps between rank synchronizations (default 1)"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub r0: usize,
    pub lambda: f64,
    pub beta: f64,
    pub eta_theta: f64,
    pub eta_alpha: f64,
    pub clip_c: f64,
    pub steps: usize,
    pub layers: usize,
    pub heads: usize,
    pub d: usize,
    pub k: usize,
    pub planted_ranks: Vec<usize>,
    pub n_samples: usize,
    pub noise: f64,
    pub seed: u64,
    pub mode: Mode,
    pub resize_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainerConfig::default();
        RunConfig {
            r0: t.r0,
            lambda: t.lambda,
            beta: t.beta,
            eta_theta: t.eta_theta,
            eta_alpha: t.eta_alpha,
            clip_c: t.clip_c,
            steps: t.steps,
            layers: 3,
            heads: 4,
            d: 32,
            k: 32,
            planted_ranks: vec![1, 2, 4, 8],
            n_samples: 512,
            noise: 0.0,
            seed: t.seed,
            mode: t.mode,
            resize_every: t.resize_every,
        }
    }
}

fn config_err(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_num<T: FromStr>(line: usize, key: &str, raw: &str, what: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| config_err(line, key, format!("expected {what}, got `{raw}`")))
}

fn positive_int(line: usize, key: &str, raw: &str) -> Result<usize> {
    let v: usize = parse_num(line, key, raw, "a positive integer")?;
    if v == 0 {
        return Err(config_err(line, key, "must be a positive integer (>= 1)"));
    }
    Ok(v)
}

fn real(line: usize, key: &str, raw: &str, positive: bool) -> Result<f64> {
    let v: f64 = parse_num(line, key, raw, "a real number")?;
    if !v.is_finite() {
        return Err(config_err(line, key, "must be finite"));
    }
    if positive && v <= 0.0 {
        return Err(config_err(line, key, "must be strictly positive (> 0)"));
    }
    if !positive && v < 0.0 {
        return Err(config_err(line, key, "must be non-negative (>= 0)"));
    }
    Ok(v)
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<(&str, usize)> = Vec::new();

    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| config_err(line, content, "expected `key = value`"))?;
        let Some(&(known, _)) = KEYS.iter().find(|(k, _)| *k == key) else {
            return Err(config_err(line, key, "unknown key"));
        };
        if let Some((_, first)) = seen.iter().find(|(k, _)| *k == known) {
            return Err(config_err(line, key, format!("duplicate key, first set on line {first}")));
        }
        seen.push((known, line));
        if value.is_empty() {
            return Err(config_err(line, key, "missing value"));
        }

        match known {
            "r0" => cfg.r0 = positive_int(line, key, value)?,
            "lambda" => cfg.lambda = real(line, key, value, false)?,
            "beta" => cfg.beta = real(line, key, value, false)?,
            "eta_theta" => cfg.eta_theta = real(line, key, value, true)?,
            "eta_alpha" => cfg.eta_alpha = real(line, key, value, false)?,
            "clip_c" => cfg.clip_c = real(line, key, value, true)?,
            "steps" => cfg.steps = positive_int(line, key, value)?,
            "layers" => cfg.layers = positive_int(line, key, value)?,
            "heads" => cfg.heads = positive_int(line, key, value)?,
            "d" => cfg.d = positive_int(line, key, value)?,
            "k" => cfg.k = positive_int(line, key, value)?,
            "planted_ranks" => {
                cfg.planted_ranks = value
                    .split(',')
                    .map(|p| positive_int(line, key, p.trim()))
                    .collect::<Result<_>>()?;
            }
            "n_samples" => cfg.n_samples = positive_int(line, key, value)?,
            "noise" => cfg.noise = real(line, key, value, false)?,
            "seed" => cfg.seed = parse_num(line, key, value, "a non-negative integer")?,
            "mode" => cfg.mode = value.parse().map_err(|m: String| config_err(line, key, m))?,
            "resize_every" => cfg.resize_every = positive_int(line, key, value)?,
            _ => unreachable!("key table and match arms agree"),
        }
    }

    let max_rank = cfg.d.min(cfg.k);
    if let Some(&bad) = cfg.planted_ranks.iter().find(|&&r| r > max_rank) {
        let line = seen.iter().find(|(k, _)| *k == "planted_ranks").map_or(0, |(_, l)| *l);
        return Err(config_err(
            line,
            "planted_ranks",
            format!("rank {bad} exceeds min(d, k) = {max_rank}"),
        ));
    }
    Ok(cfg)
}

impl RunConfig {
    /// Renders every key, in table order. `parse_config` reads it back unchanged.
    pub fn to_text(&self) -> String {
        let ranks: Vec<String> = self.planted_ranks.iter().map(usize::to_string).collect();
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("r0", self.r0.to_string());
        put("lambda", format!("{:?}", self.lambda));
        put("beta", format!("{:?}", self.beta));
        put("eta_theta", format!("{:?}", self.eta_theta));
        put("eta_alpha", format!("{:?}", self.eta_alpha));
        put("clip_c", format!("{:?}", self.clip_c));
        put("steps", self.steps.to_string());
        put("layers", self.layers.to_string());
        put("heads", self.heads.to_string());
        put("d", self.d.to_string());
        put("k", self.k.to_string());
        put("planted_ranks", ranks.join(","));
        put("n_samples", self.n_samples.to_string());
        put("noise", format!("{:?}", self.noise));
        put("seed", self.seed.to_string());
        put("mode", self.mode.to_string());
        put("resize_every", self.resize_every.to_string());
        s
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            r0: self.r0,
            lambda: self.lambda,
            beta: self.beta,
            eta_theta: self.eta_theta,
            eta_alpha: self.eta_alpha,
            clip_c: self.clip_c,
            steps: self.steps,
            seed: self.seed,
            mode: self.mode,
            resize_every: self.resize_every,
            ..TrainerConfig::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            d: self.d,
            k: self.k,
            seed: self.seed,
        }
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            layers: self.layers,
            heads: self.heads,
            d: self.d,
            k: self.k,
            planted_ranks: self.planted_ranks.clone(),
            n_samples: self.n_samples,
            noise: self.noise,
            seed: self.seed,
        }
    }

    /// Help text listing every key.
    pub fn key_help() -> String {
        let mut s = String::from("Config keys (flat `key = value`, `#` starts a comment):\n");
        for (k, doc) in KEYS {
            let _ = writeln!(s, "  {k:<14} {doc}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.r0, 16);
        assert_eq!(cfg.lambda, 0.01);
        assert_eq!(cfg.beta, 0.1);
        assert_eq!(cfg.eta_theta, 1e-4);
        assert_eq!(cfg.eta_alpha, 5e-5);
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn negative_lambda_rejected() {
        let err = parse_config("lambda = -1").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lambda") && msg.contains("non-negative"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn diagnostics_name_line_and_key() {
        match parse_config("# header\nsteps = 10\nbogus = 3\n").unwrap_err() {
            Error::Config { line, key, .. } => assert_eq!((line, key.as_str()), (3, "bogus")),
            e => panic!("unexpected {e:?}"),
        }
        assert!(parse_config("steps = 10\nsteps = 11").is_err());
        assert!(parse_config("steps").is_err());
        assert!(parse_config("steps = 0").is_err());
        assert!(parse_config("mode = both").is_err());
        assert!(parse_config("eta_theta = 0").is_err());
        assert!(parse_config("planted_ranks = 1,x").is_err());
        assert!(parse_config("d = 4\nplanted_ranks = 8").is_err());
    }

    #[test]
    fn comments_and_whitespace() {
        let cfg = parse_config("  r0=8   # base\n\nplanted_ranks = 1, 3 ,2\nmode = uniform\neta_alpha = 0\n").unwrap();
        assert_eq!(cfg.r0, 8);
        assert_eq!(cfg.planted_ranks, vec![1, 3, 2]);
        assert_eq!(cfg.mode, Mode::Uniform);
        assert_eq!(cfg.eta_alpha, 0.0);
    }

    #[test]
    fn help_lists_every_key() {
        let help = RunConfig::key_help();
        for (k, _) in KEYS {
            assert!(help.contains(k));
        }
    }
}
