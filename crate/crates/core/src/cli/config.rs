//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::benchmarks::{default_a_grid, DatasetKind};
use crate::error::{Error, Result};
use crate::losses::BaseLoss;
use crate::trainer::TrainConfig;

pub const OUT_DIR_ENV: &str = "IVGAN_OUT_DIR";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub emit_plots: bool,
    /// Offsets for `square-fit`.
    pub a_grid: Vec<f64>,
    /// Monte-Carlo samples per offset for `square-fit`.
    pub mc_samples: usize,
    /// Latent sample size for the moment check in `invariance`.
    pub n: usize,
    /// Per-sample size for the energy-distance group check in `invariance`.
    pub group_n: usize,
    /// Batch rows used by `gradcheck`.
    pub gradcheck_batch: usize,
    /// Checkpoint read by `eval`, or resumed from by `train`.
    pub checkpoint: Option<PathBuf>,
    /// Stop `train` early (with a checkpoint) at this iteration.
    pub stop_at: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            out_dir: PathBuf::from("ivgan_out"),
            emit_plots: false,
            a_grid: default_a_grid(),
            mc_samples: 200_000,
            n: 100_000,
            group_n: 300,
            gradcheck_batch: 4,
            checkpoint: None,
            stop_at: None,
        }
    }
}

/// Every accepted key, in serialization order.
pub const KEYS: [&str; 33] = [
    "base_loss",
    "latent_dim",
    "blocks",
    "batch_size",
    "total_iters",
    "inner_iters",
    "lr_df",
    "lr_e",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "lambda_gd",
    "mu_gd",
    "lambda_e",
    "mu_e",
    "noise_sigma0",
    "noise_decay_frac",
    "seed",
    "dataset",
    "d_sees_intervened",
    "eval_every",
    "checkpoint_every",
    "eval_samples",
    "hidden_widths",
    "out_dir",
    "emit_plots",
    "a_grid",
    "mc_samples",
    "n",
    "group_n",
    "gradcheck_batch",
    "checkpoint",
    "stop_at",
];

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse `{v}`: {e}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_num(s.trim())).collect()
}

fn parse_optional<T: std::str::FromStr>(v: &str) -> std::result::Result<Option<T>, String>
where
    T::Err: std::fmt::Display,
{
    if v.is_empty() || v == "none" {
        Ok(None)
    } else {
        parse_num(v).map(Some)
    }
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match key {
            "base_loss" => {
                t.base_loss = BaseLoss::parse(v).ok_or_else(|| format!("expected vanilla or lsgan, got `{v}`"))?
            }
            "latent_dim" => t.latent_dim = parse_num(v)?,
            "blocks" => t.blocks = parse_num(v)?,
            "batch_size" => t.batch_size = parse_num(v)?,
            "total_iters" => t.total_iters = parse_num(v)?,
            "inner_iters" => t.inner_iters = parse_num(v)?,
            "lr_df" => t.lr_df = parse_num(v)?,
            "lr_e" => t.lr_e = parse_num(v)?,
            "adam_beta1" => t.adam_beta1 = parse_num(v)?,
            "adam_beta2" => t.adam_beta2 = parse_num(v)?,
            "adam_eps" => t.adam_eps = parse_num(v)?,
            "lambda_gd" => t.coeffs.lambda_gd = parse_num(v)?,
            "mu_gd" => t.coeffs.mu_gd = parse_num(v)?,
            "lambda_e" => t.coeffs.lambda_e = parse_num(v)?,
            "mu_e" => t.coeffs.mu_e = parse_num(v)?,
            "noise_sigma0" => t.noise_sigma0 = parse_num(v)?,
            "noise_decay_frac" => t.noise_decay_frac = parse_num(v)?,
            "seed" => t.seed = parse_num(v)?,
            "dataset" => t.dataset = v.parse::<DatasetKind>()?,
            "d_sees_intervened" => t.d_sees_intervened = parse_bool(v)?,
            "eval_every" => t.eval_every = parse_num(v)?,
            "checkpoint_every" => t.checkpoint_every = parse_num(v)?,
            "eval_samples" => t.eval_samples = parse_num(v)?,
            "hidden_widths" => t.hidden_widths = parse_list(v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "emit_plots" => self.emit_plots = parse_bool(v)?,
            "a_grid" => self.a_grid = parse_list(v)?,
            "mc_samples" => self.mc_samples = parse_num(v)?,
            "n" => self.n = parse_num(v)?,
            "group_n" => self.group_n = parse_num(v)?,
            "gradcheck_batch" => self.gradcheck_batch = parse_num(v)?,
            "checkpoint" => {
                self.checkpoint = if v.is_empty() || v == "none" { None } else { Some(PathBuf::from(v)) }
            }
            "stop_at" => self.stop_at = parse_optional(v)?,
            _ => return Err(format!("unknown key; accepted keys are {}", KEYS.join(", "))),
        }
        Ok(())
    }

    fn check_extra(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.a_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(("a_grid", "every offset must lie in [0, 1]".into()));
        }
        if self.mc_samples < 1000 {
            return Err(("mc_samples", "mc_samples must be at least 1000".into()));
        }
        if self.n < 1000 {
            return Err(("n", "n must be at least 1000".into()));
        }
        if self.group_n < 2 {
            return Err(("group_n", "group_n must be at least 2".into()));
        }
        if self.gradcheck_batch == 0 {
            return Err(("gradcheck_batch", "gradcheck_batch must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical text form; `parse_config(&c.serialize(), &[])` returns `c`.
    pub fn serialize(&self) -> String {
        let t = &self.train;
        let list = |v: &[String]| v.join(",");
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("base_loss", t.base_loss.name().into());
        put("latent_dim", t.latent_dim.to_string());
        put("blocks", t.blocks.to_string());
        put("batch_size", t.batch_size.to_string());
        put("total_iters", t.total_iters.to_string());
        put("inner_iters", t.inner_iters.to_string());
        put("lr_df", format!("{:?}", t.lr_df));
        put("lr_e", format!("{:?}", t.lr_e));
        put("adam_beta1", format!("{:?}", t.adam_beta1));
        put("adam_beta2", format!("{:?}", t.adam_beta2));
        put("adam_eps", format!("{:?}", t.adam_eps));
        put("lambda_gd", format!("{:?}", t.coeffs.lambda_gd));
        put("mu_gd", format!("{:?}", t.coeffs.mu_gd));
        put("lambda_e", format!("{:?}", t.coeffs.lambda_e));
        put("mu_e", format!("{:?}", t.coeffs.mu_e));
        put("noise_sigma0", format!("{:?}", t.noise_sigma0));
        put("noise_decay_frac", format!("{:?}", t.noise_decay_frac));
        put("seed", t.seed.to_string());
        put("dataset", t.dataset.to_string());
        put("d_sees_intervened", t.d_sees_intervened.to_string());
        put("eval_every", t.eval_every.to_string());
        put("checkpoint_every", t.checkpoint_every.to_string());
        put("eval_samples", t.eval_samples.to_string());
        put(
            "hidden_widths",
            list(&t.hidden_widths.iter().map(|w| w.to_string()).collect::<Vec<_>>()),
        );
        put("out_dir", self.out_dir.display().to_string());
        put("emit_plots", self.emit_plots.to_string());
        put("a_grid", list(&self.a_grid.iter().map(|a| format!("{a:?}")).collect::<Vec<_>>()));
        put("mc_samples", self.mc_samples.to_string());
        put("n", self.n.to_string());
        put("group_n", self.group_n.to_string());
        put("gradcheck_batch", self.gradcheck_batch.to_string());
        put(
            "checkpoint",
            self.checkpoint
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string()),
        );
        put("stop_at", self.stop_at.map_or("none".into(), |s| s.to_string()));
        s
    }
}

/// Where a key got its value, for error messages.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Origin {
    Line(usize),
    Env,
    CommandLine,
}

impl Origin {
    fn line(self) -> usize {
        match self {
            Origin::Line(l) => l,
            _ => 0,
        }
    }

    fn describe(self) -> &'static str {
        match self {
            Origin::Line(_) => "",
            Origin::Env => " (from IVGAN_OUT_DIR)",
            Origin::CommandLine => " (from the command line)",
        }
    }
}

fn config_error(key: &str, origin: Origin, message: String) -> Error {
    Error::Config {
        key: key.to_string(),
        line: origin.line(),
        message: format!("{message}{}", origin.describe()),
    }
}

/// Parses config text, then applies the environment's output directory,
/// then `overrides` (which win). Invariant violations name the key that
/// set the offending value.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    parse_config_with_env(text, overrides, std::env::var(OUT_DIR_ENV).ok().as_deref())
}

pub fn parse_config_with_env(text: &str, overrides: &[(String, String)], env_out_dir: Option<&str>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut origins: BTreeMap<String, Origin> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(Error::Config {
                key: content.to_string(),
                line,
                message: "expected `key = value`".into(),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if origins.contains_key(k) {
            return Err(config_error(k, Origin::Line(line), "key given twice".into()));
        }
        cfg.set(k, v).map_err(|m| config_error(k, Origin::Line(line), m))?;
        origins.insert(k.to_string(), Origin::Line(line));
    }
    if let Some(dir) = env_out_dir.filter(|d| !d.is_empty()) {
        cfg.out_dir = PathBuf::from(dir);
        origins.insert("out_dir".into(), Origin::Env);
    }
    for (k, v) in overrides {
        let k = k.replace('-', "_");
        cfg.set(&k, v).map_err(|m| config_error(&k, Origin::CommandLine, m))?;
        origins.insert(k, Origin::CommandLine);
    }
    let origin_of = |k: &str| origins.get(k).copied().unwrap_or(Origin::Line(0));
    if let Err((key, message)) = cfg.train.check() {
        // a divisibility failure is reported against whichever of the two keys was set last
        let key = if key == "latent_dim" && !origins.contains_key("latent_dim") {
            "blocks"
        } else {
            key
        };
        let key = if key == "coeffs" {
            ["lambda_gd", "mu_gd", "lambda_e", "mu_e"]
                .into_iter()
                .find(|k| origins.contains_key(*k))
                .unwrap_or("mu_gd")
        } else {
            key
        };
        return Err(config_error(key, origin_of(key), message));
    }
    if let Err((key, message)) = cfg.check_extra() {
        return Err(config_error(key, origin_of(key), message));
    }
    Ok(cfg)
}
