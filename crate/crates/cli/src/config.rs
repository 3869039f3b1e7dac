//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! [model]
//! Phi = 1
//! beta = 0
//! ```
//!
//! Section headers are accepted for readability and otherwise ignored; all
//! keys share one namespace. Every key is optional and defaults to the
//! reference experiment (see [`Config::default`]).

use std::fmt::Write as _;
use std::str::FromStr;

use mfc_core::dynamics::FeatureSet;
use mfc_core::experiments::TrainConfig;
use mfc_core::policy::{Activation, LrSchedule};
use mfc_core::riccati::{LqParams, DEFAULT_RICCATI_STEPS};
use mfc_core::CsParams;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: `{key}`: {message}")]
pub struct ConfigError {
    /// 1-based; 0 when the problem is not tied to one line.
    pub line: usize,
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(line: usize, key: &str, message: impl Into<String>) -> Self {
        Self {
            line,
            key: key.to_string(),
            message: message.into(),
        }
    }
}

/// Which feedback the convergence study evaluates at each resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Protocol {
    /// Exact LQ feedback held on each grid's cells.
    #[default]
    Exact,
    /// A network trained separately at each resolution.
    Trained,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Trained => "trained",
        }
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "trained" => Ok(Self::Trained),
            other => Err(format!("expected `exact` or `trained`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub phi: f64,
    pub beta: f64,
    pub sigma: f64,
    pub gamma1: f64,
    pub horizon: f64,
    pub dim: usize,
    pub particles: usize,
    pub steps: usize,
    pub iterations: usize,
    pub lr0: f64,
    pub decay: f64,
    pub period: usize,
    pub hidden: usize,
    pub layers: usize,
    pub activation: Activation,
    pub seed: u64,
    pub reps: usize,
    pub m_list: Vec<usize>,
    pub protocol: Protocol,
    pub riccati_steps: usize,
}

impl Default for Config {
    /// The reference `beta = 0`, `d = 1` experiment: `T = 1`, `Phi = 1`,
    /// `sigma = gamma1 = 0.1`, `N = 1000`, `M = 128`, `K = 800`, Adam with
    /// learning rate 0.001 decayed by 0.617 every 50 iterations, two hidden
    /// layers of 110 units, and the time sweep `M in {4, ..., 128}`.
    fn default() -> Self {
        Self {
            phi: 1.0,
            beta: 0.0,
            sigma: 0.1,
            gamma1: 0.1,
            horizon: 1.0,
            dim: 1,
            particles: 1000,
            steps: 128,
            iterations: 800,
            lr0: 0.001,
            decay: 0.617,
            period: 50,
            hidden: 110,
            layers: 2,
            activation: Activation::Relu,
            seed: 0,
            reps: 8,
            m_list: vec![4, 8, 16, 32, 64, 128],
            protocol: Protocol::Exact,
            riccati_steps: DEFAULT_RICCATI_STEPS,
        }
    }
}

pub const KEYS: [&str; 20] = [
    "Phi",
    "beta",
    "sigma",
    "gamma1",
    "T",
    "d",
    "N",
    "M",
    "K",
    "lr0",
    "decay",
    "period",
    "hidden",
    "layers",
    "activation",
    "seed",
    "reps",
    "M_list",
    "protocol",
    "riccati_steps",
];

fn parse_value<V: FromStr>(line: usize, key: &str, raw: &str) -> Result<V, ConfigError>
where
    V::Err: std::fmt::Display,
{
    raw.parse::<V>()
        .map_err(|e| ConfigError::new(line, key, format!("cannot parse `{raw}`: {e}")))
}

fn parse_list(line: usize, key: &str, raw: &str) -> Result<Vec<usize>, ConfigError> {
    raw.split(',')
        .map(|item| parse_value::<usize>(line, key, item.trim()))
        .collect()
}

/// Parses configuration text, filling unspecified keys with defaults.
pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let mut cfg = Config::default();
    let mut lines_of = std::collections::HashMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            if !content.ends_with(']') || content.len() < 3 {
                return Err(ConfigError::new(line, content, "malformed section header"));
            }
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::new(line, content, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(ConfigError::new(line, key, "missing value"));
        }
        if let Some(first) = lines_of.insert(key.to_string(), line) {
            return Err(ConfigError::new(
                line,
                key,
                format!("duplicate key, first set on line {first}"),
            ));
        }
        match key {
            "Phi" => cfg.phi = parse_value(line, key, value)?,
            "beta" => cfg.beta = parse_value(line, key, value)?,
            "sigma" => cfg.sigma = parse_value(line, key, value)?,
            "gamma1" => cfg.gamma1 = parse_value(line, key, value)?,
            "T" => cfg.horizon = parse_value(line, key, value)?,
            "d" => cfg.dim = parse_value(line, key, value)?,
            "N" => cfg.particles = parse_value(line, key, value)?,
            "M" => cfg.steps = parse_value(line, key, value)?,
            "K" => cfg.iterations = parse_value(line, key, value)?,
            "lr0" => cfg.lr0 = parse_value(line, key, value)?,
            "decay" => cfg.decay = parse_value(line, key, value)?,
            "period" => cfg.period = parse_value(line, key, value)?,
            "hidden" => cfg.hidden = parse_value(line, key, value)?,
            "layers" => cfg.layers = parse_value(line, key, value)?,
            "activation" => cfg.activation = parse_value(line, key, value)?,
            "seed" => cfg.seed = parse_value(line, key, value)?,
            "reps" => cfg.reps = parse_value(line, key, value)?,
            "M_list" => cfg.m_list = parse_list(line, key, value)?,
            "protocol" => cfg.protocol = parse_value(line, key, value)?,
            "riccati_steps" => cfg.riccati_steps = parse_value(line, key, value)?,
            _ => return Err(ConfigError::new(line, key, "unknown key")),
        }
    }
    cfg.validate().map_err(|(key, message)| {
        ConfigError::new(lines_of.get(key).copied().unwrap_or(0), key, message)
    })?;
    Ok(cfg)
}

impl Config {
    /// Checks value ranges; on failure returns the key and the reason.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let nonneg = [
            ("Phi", self.phi),
            ("beta", self.beta),
            ("sigma", self.sigma),
            ("gamma1", self.gamma1),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err((k, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(("T", format!("must be finite and > 0, got {}", self.horizon)));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(("lr0", format!("must be finite and > 0, got {}", self.lr0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(("decay", format!("must lie in (0, 1], got {}", self.decay)));
        }
        let positive = [
            ("d", self.dim),
            ("N", self.particles),
            ("M", self.steps),
            ("K", self.iterations),
            ("period", self.period),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("reps", self.reps),
            ("riccati_steps", self.riccati_steps),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err((k, "must be at least 1".into()));
            }
        }
        if self.m_list.is_empty() || self.m_list.contains(&0) {
            return Err(("M_list", "needs one or more positive entries".into()));
        }
        Ok(())
    }

    /// Text that [`parse_config`] maps back to `self`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let list = self
            .m_list
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "Phi = {:?}", self.phi);
        let _ = writeln!(s, "beta = {:?}", self.beta);
        let _ = writeln!(s, "sigma = {:?}", self.sigma);
        let _ = writeln!(s, "gamma1 = {:?}", self.gamma1);
        let _ = writeln!(s, "T = {:?}", self.horizon);
        let _ = writeln!(s, "d = {}", self.dim);
        let _ = writeln!(s, "[simulation]");
        let _ = writeln!(s, "N = {}", self.particles);
        let _ = writeln!(s, "M = {}", self.steps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "riccati_steps = {}", self.riccati_steps);
        let _ = writeln!(s, "[training]");
        let _ = writeln!(s, "K = {}", self.iterations);
        let _ = writeln!(s, "lr0 = {:?}", self.lr0);
        let _ = writeln!(s, "decay = {:?}", self.decay);
        let _ = writeln!(s, "period = {}", self.period);
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "layers = {}", self.layers);
        let _ = writeln!(s, "activation = {}", self.activation);
        let _ = writeln!(s, "[study]");
        let _ = writeln!(s, "reps = {}", self.reps);
        let _ = writeln!(s, "M_list = {list}");
        let _ = writeln!(s, "protocol = {}", self.protocol.as_str());
        s
    }

    pub fn cs_params(&self) -> CsParams<f64> {
        CsParams {
            phi: self.phi,
            beta: self.beta,
            sigma: self.sigma,
            gamma1: self.gamma1,
            horizon: self.horizon,
            dim: self.dim,
        }
    }

    /// LQ parameters for uniform initial velocities (variance 1/12).
    pub fn lq_params(&self) -> LqParams<f64> {
        LqParams {
            phi: self.phi,
            gamma1: self.gamma1,
            sigma: self.sigma,
            horizon: self.horizon,
            dim: self.dim,
            var_v0: 1.0 / 12.0,
        }
    }

    pub fn features(&self) -> FeatureSet {
        FeatureSet::for_beta(self.beta)
    }

    pub fn train_config(&self) -> TrainConfig<f64> {
        TrainConfig {
            cs: self.cs_params(),
            particles: self.particles,
            steps: self.steps,
            iterations: self.iterations,
            seed: self.seed,
            schedule: LrSchedule {
                lr0: self.lr0,
                decay: self.decay,
                period: self.period,
            },
            features: self.features(),
            hidden: self.hidden,
            layers: self.layers,
            activation: self.activation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), Config::default());
        assert_eq!(
            parse_config("# nothing\n\n[model]\n").unwrap(),
            Config::default()
        );
    }

    #[test]
    fn beta_one_widens_inputs() {
        let cfg = parse_config("beta = 1").unwrap();
        assert_eq!(cfg.features().input_dim(cfg.dim), 2 * cfg.dim + 1);
        let cfg = parse_config("beta = 1\nd = 3").unwrap();
        assert_eq!(cfg.features().input_dim(3), 7);
        assert_eq!(Config::default().features().input_dim(1), 2);
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = parse_config("N = 10\nM = 0\n").unwrap_err();
        assert_eq!((e.line, e.key.as_str()), (2, "M"));
        let e = parse_config("\n\nbogus = 1").unwrap_err();
        assert_eq!((e.line, e.key.as_str()), (3, "bogus"));
        let e = parse_config("sigma = abc").unwrap_err();
        assert_eq!((e.line, e.key.as_str()), (1, "sigma"));
        let e = parse_config("seed = 1\nseed = 2").unwrap_err();
        assert_eq!((e.line, e.key.as_str()), (2, "seed"));
        let e = parse_config("gamma1 = -0.1").unwrap_err();
        assert_eq!(e.key, "gamma1");
        assert!(e.to_string().contains("line 1"));
        assert!(parse_config("N 10").is_err());
        assert!(parse_config("[model").is_err());
        assert!(parse_config("M_list = 4, x").is_err());
    }

    #[test]
    fn comments_and_sections() {
        let cfg = parse_config(
            "[a]\nK = 5 # five\n  [b]  \nM_list = 2,4\nactivation = tanh\nprotocol = trained",
        )
        .unwrap();
        assert_eq!(cfg.iterations, 5);
        assert_eq!(cfg.m_list, vec![2, 4]);
        assert_eq!(cfg.activation, Activation::Tanh);
        assert_eq!(cfg.protocol, Protocol::Trained);
    }

    #[test]
    fn every_key_rendered() {
        let text = Config::default().render();
        for k in KEYS {
            assert!(
                text.lines().any(|l| l.starts_with(&format!("{k} ="))),
                "{k}"
            );
        }
    }

    fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
        lo..hi
    }

    prop_compose! {
        fn arb_config()(
            phi in finite(0.0, 10.0), beta in finite(0.0, 3.0), sigma in finite(0.0, 2.0),
            gamma1 in finite(0.0, 2.0), horizon in finite(1e-3, 10.0), dim in 1usize..5,
            particles in 1usize..5000, steps in 1usize..512, iterations in 1usize..2000,
            lr0 in finite(1e-6, 1.0), decay in finite(1e-3, 1.0), period in 1usize..200,
            hidden in 1usize..300, layers in 1usize..5, tanh in any::<bool>(), seed in any::<u64>(),
            reps in 1usize..100, m_list in prop::collection::vec(1usize..1024, 1..8),
            trained in any::<bool>(), riccati_steps in 1usize..10000,
        ) -> Config {
            Config {
                phi, beta, sigma, gamma1, horizon, dim, particles, steps, iterations, lr0, decay, period,
                hidden, layers,
                activation: if tanh { Activation::Tanh } else { Activation::Relu },
                seed, reps, m_list,
                protocol: if trained { Protocol::Trained } else { Protocol::Exact },
                riccati_steps,
            }
        }
    }

    proptest! {
        #[test]
        fn render_round_trips(cfg in arb_config()) {
            prop_assert_eq!(parse_config(&cfg.render()).unwrap(), cfg);
        }
    }
}
