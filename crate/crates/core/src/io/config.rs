//! `key = value` pipeline configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("mode must be f32 or f64, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub seed: u64,
    pub deterministic: bool,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub mode: Precision,
    /// Umbrella neighbours.
    pub k_usfe: usize,
    /// SetConv neighbours.
    pub k_sc: usize,
    /// Neighbours in the flow smoothness terms.
    pub k_smooth: usize,
    /// Voxel resolution per axis.
    pub r: usize,
    /// Attention window, voxels per axis.
    pub w: usize,
    /// Attention heads.
    pub h: usize,
    /// Output widths of the first two fusion layers; the third is `d`.
    pub width1: usize,
    pub width2: usize,
    /// Embedding width.
    pub d: usize,
    /// Surface feature width.
    pub d_s: usize,
    pub slope: f64,
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub tol_marg: f64,
    pub lambda_smooth: f64,
    pub refine_steps: usize,
    pub step_size: f64,
    pub lambda_c: f64,
    pub learning_rate: f64,
    pub fit_steps: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            deterministic: true,
            threads: 0,
            mode: Precision::F64,
            k_usfe: 9,
            k_sc: 16,
            k_smooth: 8,
            r: 16,
            w: 4,
            h: 4,
            width1: 64,
            width2: 128,
            d: 128,
            d_s: 32,
            slope: 0.1,
            epsilon: 0.03,
            sinkhorn_iters: 30,
            tol_marg: 1e-6,
            lambda_smooth: 10.0,
            refine_steps: 150,
            step_size: 0.05,
            lambda_c: 1.0,
            learning_rate: 1e-3,
            fit_steps: 200,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {v:?} for {key}"))),
    }
}

impl Config {
    /// Every recognised key, in serialization order.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "deterministic",
        "threads",
        "mode",
        "K_usfe",
        "k_sc",
        "k_smooth",
        "r",
        "W",
        "H",
        "width1",
        "width2",
        "D",
        "D_s",
        "slope",
        "epsilon",
        "sinkhorn_iters",
        "tol_marg",
        "lambda_smooth",
        "refine_steps",
        "step_size",
        "lambda_c",
        "learning_rate",
        "fit_steps",
    ];

    /// Sets one key. `λ_smooth`/`λ_c` spellings are accepted too.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "deterministic" => self.deterministic = parse_bool(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            "K_usfe" | "k_usfe" => self.k_usfe = parse(key, v)?,
            "k_sc" => self.k_sc = parse(key, v)?,
            "k_smooth" => self.k_smooth = parse(key, v)?,
            "r" => self.r = parse(key, v)?,
            "W" | "w" => self.w = parse(key, v)?,
            "H" | "h" => self.h = parse(key, v)?,
            "width1" => self.width1 = parse(key, v)?,
            "width2" => self.width2 = parse(key, v)?,
            "D" | "d" => self.d = parse(key, v)?,
            "D_s" | "d_s" => self.d_s = parse(key, v)?,
            "slope" => self.slope = parse(key, v)?,
            "epsilon" | "ε" => self.epsilon = parse(key, v)?,
            "sinkhorn_iters" => self.sinkhorn_iters = parse(key, v)?,
            "tol_marg" => self.tol_marg = parse(key, v)?,
            "lambda_smooth" | "λ_smooth" => self.lambda_smooth = parse(key, v)?,
            "refine_steps" => self.refine_steps = parse(key, v)?,
            "step_size" => self.step_size = parse(key, v)?,
            "lambda_c" | "λ_c" => self.lambda_c = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "fit_steps" => self.fit_steps = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "deterministic" => self.deterministic.to_string(),
            "threads" => self.threads.to_string(),
            "mode" => self.mode.to_string(),
            "K_usfe" => self.k_usfe.to_string(),
            "k_sc" => self.k_sc.to_string(),
            "k_smooth" => self.k_smooth.to_string(),
            "r" => self.r.to_string(),
            "W" => self.w.to_string(),
            "H" => self.h.to_string(),
            "width1" => self.width1.to_string(),
            "width2" => self.width2.to_string(),
            "D" => self.d.to_string(),
            "D_s" => self.d_s.to_string(),
            "slope" => self.slope.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "sinkhorn_iters" => self.sinkhorn_iters.to_string(),
            "tol_marg" => self.tol_marg.to_string(),
            "lambda_smooth" => self.lambda_smooth.to_string(),
            "refine_steps" => self.refine_steps.to_string(),
            "step_size" => self.step_size.to_string(),
            "lambda_c" => self.lambda_c.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "fit_steps" => self.fit_steps.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut c = Config::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Sets every key listed in `text` without validating the result, so
    /// later overrides can still repair it.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&Self::read_text(path)?)
    }

    pub fn read_text(path: &Path) -> Result<String> {
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("K_usfe", self.k_usfe),
            ("k_sc", self.k_sc),
            ("k_smooth", self.k_smooth),
            ("r", self.r),
            ("W", self.w),
            ("H", self.h),
            ("width1", self.width1),
            ("width2", self.width2),
            ("D", self.d),
            ("D_s", self.d_s),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.k_usfe < 2 {
            return Err(Error::Config("K_usfe must be at least 2".into()));
        }
        if self.w > self.r {
            return Err(Error::Config(format!("W = {} exceeds r = {}", self.w, self.r)));
        }
        for (k, v) in [("width1", self.width1), ("width2", self.width2), ("D", self.d)] {
            if v % self.h != 0 {
                return Err(Error::Config(format!("{k} = {v} not divisible by H = {}", self.h)));
            }
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::Config("slope must lie in (0,1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.tol_marg > 0.0) {
            return Err(Error::Config("tol_marg must be positive".into()));
        }
        if !(self.lambda_smooth >= 0.0) || !(self.lambda_c >= 0.0) {
            return Err(Error::Config("smoothness weights must be non-negative".into()));
        }
        if !(self.step_size > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("step sizes must be positive".into()));
        }
        Ok(())
    }

    /// Output widths of the three fusion layers.
    pub fn layer_widths(&self) -> [usize; 3] {
        [self.width1, self.width2, self.d]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = Config::default();
        c.validate().unwrap();
        assert_eq!(c.k_usfe, 9);
        assert_eq!(c.layer_widths(), [64, 128, 128]);
    }

    #[test]
    fn parse_overrides_and_comments() {
        let c = Config::parse_str("# demo\nr = 8\nW=2 # trailing\nλ_smooth = 3.5\nmode = f32\n").unwrap();
        assert_eq!(c.r, 8);
        assert_eq!(c.w, 2);
        assert_eq!(c.lambda_smooth, 3.5);
        assert_eq!(c.mode, Precision::F32);
    }

    #[test]
    fn text_round_trip() {
        let mut c = Config::default();
        c.seed = 7;
        c.epsilon = 0.125;
        c.deterministic = false;
        let back = Config::parse_str(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Config::parse_str("bogus = 1").is_err());
        assert!(Config::parse_str("r").is_err());
        assert!(Config::parse_str("r = 2\nW = 4").is_err());
        assert!(Config::parse_str("H = 3").is_err());
        assert!(Config::parse_str("epsilon = -1").is_err());
    }
}
