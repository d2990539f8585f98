//! `ivgan train|eval|square-fit|gradcheck|invariance --config PATH [--key value]...`
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

pub mod config;
pub mod plot;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::{parse_config, RunConfig};
pub use plot::emit_plot;

use crate::benchmarks::{
    fit_line, square_fitting_table, theorem2_cdf_check, write_square_fit_csv, write_summary_line,
};
use crate::checks::{gradient_audit, GRADCHECK_TOLERANCE};
use crate::error::{Error, Result};
use crate::interventions::{group_invariance_check, invariance_statistic, InterventionGroup};
use crate::tensor::{RandomSource, Tensor};
use crate::trainer::{train_loop, LoopOptions, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Moment tolerances for the invariance check on standard normal latents.
pub const MEAN_TOL: f64 = 0.02;
pub const VAR_TOL: f64 = 0.05;
pub const COV_TOL: f64 = 0.02;

#[derive(Parser, Debug)]
#[command(name = "ivgan", version, about = "Intervention GAN experiments on synthetic 2-D data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct CommonArgs {
    /// Path to a `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write metrics.csv and checkpoints.
    Train(CommonArgs),
    /// Score a checkpoint: mode coverage and the round-trip CDF statistic.
    Eval(CommonArgs),
    /// Tabulate the square-fitting example.
    SquareFit(CommonArgs),
    /// Compare reverse-mode gradients with finite differences.
    Gradcheck(CommonArgs),
    /// Check that every intervention preserves the standard normal.
    Invariance(CommonArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcmd {
    Train,
    Eval,
    SquareFit,
    Gradcheck,
    Invariance,
}

/// Splits `--key value` / `--key=value` pairs; `--config` is pulled out.
pub fn split_overrides(args: &[String]) -> std::result::Result<(Option<PathBuf>, Vec<(String, String)>), String> {
    let mut config = None;
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(key) = a.strip_prefix("--") else {
            return Err(format!("expected `--key value`, got `{a}`"));
        };
        let (k, v) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| format!("missing value for `--{key}`"))?;
                (key.to_string(), v.clone())
            }
        };
        if k == "config" {
            config = Some(PathBuf::from(v));
        } else {
            out.push((k, v));
        }
    }
    Ok((config, out))
}

/// Reads the config file (if any) and applies overrides.
pub fn load_run_config(config: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = match config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Config {
            key: "config".into(),
            line: 0,
            message: format!("cannot read {}: {e}", p.display()),
        })?,
        None => String::new(),
    };
    parse_config(&text, overrides)
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Entry point used by the binary.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (sub, common) = match cli.command {
        Command::Train(a) => (Subcmd::Train, a),
        Command::Eval(a) => (Subcmd::Eval, a),
        Command::SquareFit(a) => (Subcmd::SquareFit, a),
        Command::Gradcheck(a) => (Subcmd::Gradcheck, a),
        Command::Invariance(a) => (Subcmd::Invariance, a),
    };
    let (cfg_from_tail, overrides) = match split_overrides(&common.overrides) {
        Ok(v) => v,
        Err(m) => {
            eprintln!("error: {m}");
            return EXIT_CONFIG;
        }
    };
    let path = common.config.or(cfg_from_tail);
    let cfg = match load_run_config(path.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(sub, &cfg, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(sub: Subcmd, cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    match sub {
        Subcmd::Train => cmd_train(cfg, out),
        Subcmd::Eval => cmd_eval(cfg, out),
        Subcmd::SquareFit => cmd_square_fit(cfg, out),
        Subcmd::Gradcheck => cmd_gradcheck(cfg, out),
        Subcmd::Invariance => cmd_invariance(cfg, out),
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    ensure_dir(&cfg.out_dir)?;
    let cfg_path = cfg.out_dir.join("config.txt");
    fs::write(&cfg_path, cfg.serialize()).map_err(|e| Error::io(&cfg_path, e))?;
    let opts = LoopOptions {
        resume_from: cfg.checkpoint.clone(),
        stop_at: cfg.stop_at,
        quiet: false,
    };
    let outcome = match train_loop(cfg.train.clone(), &cfg.out_dir, &opts) {
        Ok(o) => o,
        Err(e @ Error::Aborted { .. }) => {
            writeln!(out, "aborted: {e}").map_err(io_err)?;
            return Ok(EXIT_RUNTIME);
        }
        Err(e) => return Err(e),
    };
    let tr = &outcome.trainer;
    let mut report = String::new();
    report.push_str(&format!("iterations {}\n", tr.iter));
    if let Some(r) = outcome.rows.last() {
        report.push_str(&format!(
            "final modes_covered {} of {}\nfinal kl_modes {:.6}\nfinal recon {:.6}\nfinal classifier_ce {:.6}\n",
            r.modes_covered,
            tr.dataset.num_modes(),
            r.kl_modes,
            r.recon,
            r.classifier_ce
        ));
    }
    let rp = cfg.out_dir.join("report.txt");
    fs::write(&rp, &report).map_err(|e| Error::io(&rp, e))?;
    out.write_all(report.as_bytes()).map_err(io_err)?;
    if cfg.emit_plots {
        let csv = cfg.out_dir.join("metrics.csv");
        emit_plot(
            &csv,
            &["loss_d", "loss_g_adv", "classifier_ce", "recon"],
            &cfg.out_dir.join("losses.svg"),
        )?;
        emit_plot(&csv, &["modes_covered"], &cfg.out_dir.join("modes.svg"))?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let Some(ckpt) = &cfg.checkpoint else {
        return Err(Error::Config {
            key: "checkpoint".into(),
            line: 0,
            message: "eval needs a checkpoint path".into(),
        });
    };
    let tr = Trainer::load_checkpoint(cfg.train.clone(), ckpt)?;
    let modes = tr.evaluate(tr.iter)?;
    let mut rng = RandomSource::new(cfg.train.seed).fork(0xe7a1);
    let stat = theorem2_cdf_check(&tr.models, &tr.group, &tr.dataset, cfg.train.eval_samples.max(5000), &mut rng)?;
    writeln!(out, "checkpoint iteration {}", tr.iter).map_err(io_err)?;
    writeln!(out, "modes_covered {} of {}", modes.modes_covered, modes.counts.len()).map_err(io_err)?;
    writeln!(out, "kl_to_uniform {:.6}", modes.kl_to_uniform).map_err(io_err)?;
    writeln!(out, "unassigned_fraction {:.6}", modes.unassigned_fraction).map_err(io_err)?;
    let counts: Vec<String> = modes.counts.iter().map(|c| c.to_string()).collect();
    writeln!(out, "counts {}", counts.join(",")).map_err(io_err)?;
    writeln!(out, "roundtrip_cdf_sup {stat:.6}").map_err(io_err)?;
    Ok(EXIT_OK)
}

pub fn cmd_square_fit(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    ensure_dir(&cfg.out_dir)?;
    let mut rng = RandomSource::new(cfg.train.seed).fork(0x5afe);
    let rows = square_fitting_table(&cfg.a_grid, cfg.mc_samples, &mut rng)?;
    let csv = cfg.out_dir.join("square_fit.csv");
    write_square_fit_csv(&rows, &csv)?;
    for r in &rows {
        writeln!(
            out,
            "a {:.2}  js_two {:.9}  l_iv_exact {:.9}  l_iv_mc {:.6} ± {:.6}",
            r.a, r.js_two, r.l_iv_exact, r.l_iv_mc, r.mc_stderr
        )
        .map_err(io_err)?;
    }
    if rows.len() >= 2 {
        let a: Vec<f64> = rows.iter().map(|r| r.a).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.l_iv_exact).collect();
        let fit = fit_line(&a, &y)?;
        write_summary_line(out, &fit).map_err(io_err)?;
        let sp = cfg.out_dir.join("square_fit_summary.txt");
        let mut f = fs::File::create(&sp).map_err(|e| Error::io(&sp, e))?;
        write_summary_line(&mut f, &fit).map_err(|e| Error::io(&sp, e))?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let mut rng = RandomSource::new(cfg.train.seed).fork(0x96ad);
    let entries = gradient_audit(&cfg.train, cfg.gradcheck_batch, &mut rng)?;
    let mut ok = true;
    for e in &entries {
        ok &= e.passed();
        writeln!(
            out,
            "{:<13} {:<10} max_rel_error {:.3e}  checked {:>5}  excluded {:>3}  {}",
            e.path,
            e.group.name(),
            e.report.max_rel_error,
            e.report.checked,
            e.report.excluded.len(),
            if e.passed() { "ok" } else { "FAIL" }
        )
        .map_err(io_err)?;
    }
    writeln!(out, "tolerance {GRADCHECK_TOLERANCE:e}: {}", if ok { "pass" } else { "fail" }).map_err(io_err)?;
    Ok(if ok { EXIT_OK } else { EXIT_RUNTIME })
}

pub fn cmd_invariance(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let t = &cfg.train;
    let group = InterventionGroup::block_substitution(t.blocks, t.latent_dim)?;
    let mut rng = RandomSource::new(t.seed).fork(0x1a7);
    let mut ok = true;
    for spec in group.specs() {
        let st = invariance_statistic(spec, cfg.n, &mut rng)?;
        let pass = st.within(MEAN_TOL, VAR_TOL, COV_TOL);
        ok &= pass;
        let worst = |v: &[f64], f: fn(f64) -> f64| v.iter().map(|x| f(*x)).fold(0.0, f64::max);
        writeln!(
            out,
            "O_{}: max|mean| {:.4}  max|var-1| {:.4}  max|cov| {:.4}  {}",
            spec.block_index,
            worst(&st.means, f64::abs),
            worst(&st.variances, |v| (v - 1.0).abs()),
            worst(&st.max_abs_covariance, f64::abs),
            if pass { "pass" } else { "FAIL" }
        )
        .map_err(io_err)?;
    }
    let d = t.latent_dim;
    let samplers: [(&str, Box<dyn Fn(&mut RandomSource, usize) -> Tensor>, bool); 3] = [
        ("N(0, I)", Box::new(move |r: &mut RandomSource, n| r.gaussian(&[n, d])), true),
        ("N(0, 4I)", Box::new(move |r: &mut RandomSource, n| r.gaussian_scaled(&[n, d], 2.0)), false),
        (
            "N(2·1, I)",
            Box::new(move |r: &mut RandomSource, n| {
                r.gaussian(&[n, d]).unary(crate::tensor::UnaryOp::AddScalar(2.0)).expect("finite")
            }),
            false,
        ),
    ];
    for (name, sampler, expect_invariant) in &samplers {
        let rep = group_invariance_check(&group, sampler.as_ref(), cfg.group_n, &mut rng)?;
        for v in &rep.verdicts {
            writeln!(
                out,
                "{name:<10} O_{}: energy {:.5}  p {:.4}  {}",
                v.block_index,
                v.statistic,
                v.p_value,
                if v.invariant { "invariant" } else { "not invariant" }
            )
            .map_err(io_err)?;
        }
        let as_expected = rep.passed == *expect_invariant;
        ok &= as_expected;
        writeln!(
            out,
            "{name:<10} group check {} ({})",
            if rep.passed { "passes" } else { "fails" },
            if as_expected { "expected" } else { "UNEXPECTED" }
        )
        .map_err(io_err)?;
    }
    Ok(if ok { EXIT_OK } else { EXIT_RUNTIME })
}
