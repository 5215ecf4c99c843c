//! Shared run settings: command-line flags layered over an optional JSON
//! config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use centripetal::matcher::{MatchConfig, Strategy};
use centripetal::pipeline::DetectConfig;
use clap::Args;
use serde::Deserialize;

use crate::error::{Classify, CmdResult};

/// Settings shared by every command. Each can come from a flag or from the
/// `--config` file; flags win.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output stride of the heatmaps.
    #[arg(long, global = true)]
    pub stride: Option<u32>,
    /// Corners kept per kind before matching.
    #[arg(long, global = true)]
    pub topk: Option<usize>,
    /// Matching strategy.
    #[arg(long, global = true)]
    pub strategy: Option<Strategy>,
    /// Central-region scale for boxes above the area threshold.
    #[arg(long, global = true)]
    pub mu_large: Option<f64>,
    /// Central-region scale for the remaining boxes.
    #[arg(long, global = true)]
    pub mu_small: Option<f64>,
    #[arg(long, global = true)]
    pub area_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub soft_nms_sigma: Option<f64>,
    /// Benchmark master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores. Never changes output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for SVG plots (bench only).
    #[arg(long, global = true)]
    pub plot: Option<PathBuf>,
    /// Leave latency out of benchmark reports.
    #[arg(long, global = true)]
    pub no_timing: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> CmdResult<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display())).config()?;
        serde_json::from_str(&text).with_context(|| format!("malformed config {}", path.display())).config()
    }

    /// `self` with unset values filled from `file`.
    pub fn over(self, file: RunConfig) -> Self {
        Self {
            stride: self.stride.or(file.stride),
            topk: self.topk.or(file.topk),
            strategy: self.strategy.or(file.strategy),
            mu_large: self.mu_large.or(file.mu_large),
            mu_small: self.mu_small.or(file.mu_small),
            area_threshold: self.area_threshold.or(file.area_threshold),
            soft_nms_sigma: self.soft_nms_sigma.or(file.soft_nms_sigma),
            seed: self.seed.or(file.seed),
            threads: self.threads.or(file.threads),
            plot: self.plot.or(file.plot),
            no_timing: self.no_timing || file.no_timing,
        }
    }

    pub fn validate(&self) -> CmdResult<()> {
        let check = || -> anyhow::Result<()> {
            if self.stride == Some(0) {
                bail!("--stride must be at least 1");
            }
            if self.threads == Some(0) {
                bail!("--threads must be at least 1");
            }
            Ok(())
        };
        check().config()
    }

    /// Applies the matching overrides to `base`.
    pub fn matching(&self, base: MatchConfig) -> CmdResult<MatchConfig> {
        let mut m = base;
        if let Some(v) = self.strategy {
            m.strategy = v;
        }
        if let Some(v) = self.mu_large {
            m.mu_policy.large_mu = v;
        }
        if let Some(v) = self.mu_small {
            m.mu_policy.small_mu = v;
        }
        if let Some(v) = self.area_threshold {
            m.mu_policy.area_threshold = v;
        }
        if let Some(v) = self.soft_nms_sigma {
            m.soft_nms_sigma = v;
        }
        m.validate().context("invalid matching settings").config()?;
        Ok(m)
    }

    pub fn detect(&self, base: DetectConfig) -> CmdResult<DetectConfig> {
        Ok(DetectConfig { topk: self.topk.unwrap_or(base.topk), matching: self.matching(base.matching)? })
    }
}

/// Strategies run by a benchmark: `--strategy` narrows the config's list.
pub fn bench_strategies(cfg: &RunConfig, listed: Vec<Strategy>) -> Vec<Strategy> {
    match cfg.strategy {
        Some(s) => vec![s],
        None => listed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let flags = RunConfig { topk: Some(7), ..RunConfig::default() };
        let file: RunConfig = serde_json::from_str(r#"{"topk": 50, "soft_nms_sigma": 0.3}"#).unwrap();
        let merged = flags.over(file);
        assert_eq!(merged.topk, Some(7));
        assert_eq!(merged.soft_nms_sigma, Some(0.3));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"top_k": 5}"#).is_err());
    }

    #[test]
    fn matching_overrides_apply_and_validate() {
        let cfg = RunConfig { strategy: Some(Strategy::Associative2d), mu_large: Some(0.5), ..RunConfig::default() };
        let m = cfg.matching(MatchConfig::default()).unwrap();
        assert_eq!(m.strategy, Strategy::Associative2d);
        assert_eq!(m.mu_policy.large_mu, 0.5);
        let bad = RunConfig { mu_small: Some(1.5), ..RunConfig::default() };
        assert_eq!(bad.matching(MatchConfig::default()).unwrap_err().exit_code(), 3);
    }
}
