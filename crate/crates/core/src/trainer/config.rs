use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Every knob of a training run. Keys in the config file match field names.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub d_e: usize,
    pub d_r: usize,
    pub layers: usize,
    pub curvature: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub tau: f64,
    pub negatives: usize,
    pub lr: f64,
    pub epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub use_inter: bool,
    pub use_intra: bool,
    pub intra_on_both_graphs: bool,
    pub csls_k: usize,
    /// Rank against every entity of graph 2 instead of the split's targets.
    pub full_candidates: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_e: 256,
            d_r: 32,
            layers: 2,
            curvature: 1.0,
            gamma: 1.0,
            lambda: 300.0,
            tau: 1.0,
            negatives: 5,
            lr: 5e-4,
            epochs: 300,
            eval_every: 10,
            seed: 0,
            use_inter: true,
            use_intra: true,
            intra_on_both_graphs: false,
            csls_k: 10,
            full_candidates: false,
        }
    }
}

fn parse_val<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::invalid(format!("bad value `{v}` for `{key}`")))
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            gamma: self.gamma,
            tau: self.tau,
            intra_on_both_graphs: self.intra_on_both_graphs,
            use_inter: self.use_inter,
            use_intra: self.use_intra,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_e", self.d_e),
            ("d_r", self.d_r),
            ("layers", self.layers),
            ("negatives", self.negatives),
            ("eval_every", self.eval_every),
            ("csls_k", self.csls_k),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("`{k}` must be positive")));
        }
        if !(self.curvature > 0.0) || !(self.lr > 0.0) {
            return Err(Error::invalid("curvature and lr must be positive"));
        }
        self.weights().validate()
    }

    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d_e" => self.d_e = parse_val(key, value)?,
            "d_r" => self.d_r = parse_val(key, value)?,
            "layers" => self.layers = parse_val(key, value)?,
            "curvature" => self.curvature = parse_val(key, value)?,
            "gamma" => self.gamma = parse_val(key, value)?,
            "lambda" => self.lambda = parse_val(key, value)?,
            "tau" => self.tau = parse_val(key, value)?,
            "negatives" => self.negatives = parse_val(key, value)?,
            "lr" => self.lr = parse_val(key, value)?,
            "epochs" => self.epochs = parse_val(key, value)?,
            "eval_every" => self.eval_every = parse_val(key, value)?,
            "seed" => self.seed = parse_val(key, value)?,
            "use_inter" => self.use_inter = parse_val(key, value)?,
            "use_intra" => self.use_intra = parse_val(key, value)?,
            "intra_on_both_graphs" => self.intra_on_both_graphs = parse_val(key, value)?,
            "csls_k" => self.csls_k = parse_val(key, value)?,
            "full_candidates" => self.full_candidates = parse_val(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_named(text, Path::new("<config>"))
    }

    fn parse_named(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".to_owned()))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_named(&text, path)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_e", self.d_e.to_string()),
            ("d_r", self.d_r.to_string()),
            ("layers", self.layers.to_string()),
            ("curvature", self.curvature.to_string()),
            ("gamma", self.gamma.to_string()),
            ("lambda", self.lambda.to_string()),
            ("tau", self.tau.to_string()),
            ("negatives", self.negatives.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("seed", self.seed.to_string()),
            ("use_inter", self.use_inter.to_string()),
            ("use_intra", self.use_intra.to_string()),
            ("intra_on_both_graphs", self.intra_on_both_graphs.to_string()),
            ("csls_k", self.csls_k.to_string()),
            ("full_candidates", self.full_candidates.to_string()),
        ]
    }

    /// Serializes to the config-file format; [`TrainConfig::parse`] inverts it.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
