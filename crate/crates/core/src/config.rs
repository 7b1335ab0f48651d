//! Plain-text `key=value` engine configuration. Lines starting with `#`
//! and blank lines are ignored; unknown keys are rejected.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    // sampling
    pub t_max: usize,
    pub ddim_steps: usize,
    /// Initialization point as a fraction of `t_max`.
    pub strength: f64,
    pub t_s: f64,
    pub t_p0: f64,
    pub t_p1: f64,
    pub t_a: f64,
    pub adain_enabled: bool,
    pub sa_fusion: bool,
    pub pa_fusion: bool,
    pub control_weight: f32,
    pub seed: u64,
    // codec
    pub lambda_e: f32,
    pub artifact_threshold: f32,
    // flow
    pub flow_levels: usize,
    pub flow_iterations: usize,
    pub flow_alpha: f32,
    pub occlusion_threshold: f32,
    // propagation
    pub patch_size: usize,
    pub pm_iterations: usize,
    pub weight_color: f32,
    pub weight_positional: f32,
    pub weight_edge: f32,
    pub weight_temporal: f32,
    // pipeline
    pub key_interval: usize,
    pub color_correct: bool,
    pub prompt: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            t_max: 1000,
            ddim_steps: 20,
            strength: 0.6,
            t_s: 0.1,
            t_p0: 0.5,
            t_p1: 0.8,
            t_a: 0.8,
            adain_enabled: true,
            sa_fusion: true,
            pa_fusion: true,
            control_weight: 1.0,
            seed: 0,
            lambda_e: 1.0,
            artifact_threshold: 0.1,
            flow_levels: 3,
            flow_iterations: 60,
            flow_alpha: 0.08,
            occlusion_threshold: 1.0,
            patch_size: 5,
            pm_iterations: 6,
            weight_color: 6.0,
            weight_positional: 2.0,
            weight_edge: 0.5,
            weight_temporal: 0.5,
            key_interval: 10,
            color_correct: false,
            prompt: String::new(),
        }
    }
}

fn parse_bool(value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        other => Err(Error::Config {
            line,
            reason: format!("expected a boolean, got '{other}'"),
        }),
    }
}

macro_rules! parse_num {
    ($value:expr, $line:expr, $ty:ty) => {
        $value.parse::<$ty>().map_err(|e| Error::Config {
            line: $line,
            reason: format!("{e}"),
        })?
    };
}

impl EngineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_contents(&text)
    }

    pub fn from_str_contents(text: &str) -> Result<Self> {
        let mut cfg = EngineConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Config {
                line: line_no,
                reason: "expected key=value".into(),
            })?;
            cfg.apply(key.trim(), value.trim(), line_no)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "t_max" => self.t_max = parse_num!(value, line, usize),
            "ddim_steps" => self.ddim_steps = parse_num!(value, line, usize),
            "strength" => self.strength = parse_num!(value, line, f64),
            "t_s" => self.t_s = parse_num!(value, line, f64),
            "t_p0" => self.t_p0 = parse_num!(value, line, f64),
            "t_p1" => self.t_p1 = parse_num!(value, line, f64),
            "t_a" => self.t_a = parse_num!(value, line, f64),
            "adain_enabled" => self.adain_enabled = parse_bool(value, line)?,
            "sa_fusion" => self.sa_fusion = parse_bool(value, line)?,
            "pa_fusion" => self.pa_fusion = parse_bool(value, line)?,
            "control_weight" => self.control_weight = parse_num!(value, line, f32),
            "seed" => self.seed = parse_num!(value, line, u64),
            "lambda_e" => self.lambda_e = parse_num!(value, line, f32),
            "artifact_threshold" => self.artifact_threshold = parse_num!(value, line, f32),
            "flow_levels" => self.flow_levels = parse_num!(value, line, usize),
            "flow_iterations" => self.flow_iterations = parse_num!(value, line, usize),
            "flow_alpha" => self.flow_alpha = parse_num!(value, line, f32),
            "occlusion_threshold" => self.occlusion_threshold = parse_num!(value, line, f32),
            "patch_size" => self.patch_size = parse_num!(value, line, usize),
            "pm_iterations" => self.pm_iterations = parse_num!(value, line, usize),
            "weight_color" => self.weight_color = parse_num!(value, line, f32),
            "weight_positional" => self.weight_positional = parse_num!(value, line, f32),
            "weight_edge" => self.weight_edge = parse_num!(value, line, f32),
            "weight_temporal" => self.weight_temporal = parse_num!(value, line, f32),
            "key_interval" => self.key_interval = parse_num!(value, line, usize),
            "color_correct" => self.color_correct = parse_bool(value, line)?,
            "prompt" => self.prompt = value.to_string(),
            other => {
                return Err(Error::Config {
                    line,
                    reason: format!("unknown key '{other}'"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.key_interval == 0 {
            return Err(Error::InvalidParameter("key_interval must be >= 1".into()));
        }
        if self.ddim_steps == 0 {
            return Err(Error::InvalidParameter("ddim_steps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::InvalidParameter("strength must be in [0, 1]".into()));
        }
        if self.patch_size % 2 == 0 {
            return Err(Error::InvalidParameter("patch_size must be odd".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let text = "\n# comment\nt_max = 500\nstrength=0.8\nadain_enabled = off\nprompt = oil painting, thick strokes\n";
        let cfg = EngineConfig::from_str_contents(text).unwrap();
        assert_eq!(cfg.t_max, 500);
        assert_eq!(cfg.strength, 0.8);
        assert!(!cfg.adain_enabled);
        assert_eq!(cfg.prompt, "oil painting, thick strokes");
        assert_eq!(cfg.key_interval, 10);
    }

    #[test]
    fn unknown_keys_and_bad_lines_are_rejected() {
        assert!(matches!(
            EngineConfig::from_str_contents("no_such_key=1"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            EngineConfig::from_str_contents("just a line"),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            EngineConfig::from_str_contents("t_max=abc"),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn validation_catches_bad_combinations() {
        assert!(EngineConfig::from_str_contents("key_interval=0").is_err());
        assert!(EngineConfig::from_str_contents("strength=1.5").is_err());
        assert!(EngineConfig::from_str_contents("patch_size=4").is_err());
    }
}
