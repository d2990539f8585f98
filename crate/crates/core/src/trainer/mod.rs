//! The training loop: inner discriminator and classifier updates, then one
//! generator and one encoder update per iteration.
//!
//! Every random draw comes from a stream derived from the seed, a purpose
//! tag and the iteration number, so a run is a pure function of its config
//! and resuming from a checkpoint needs no RNG state.

mod adam;
pub mod checkpoint;
pub mod plain;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub use adam::{adam_step, AdamParams, AdamState};

use crate::benchmarks::{evaluate_modes, ModeCoverageReport, SyntheticDataset, DatasetKind};
use crate::error::{Error, Result};
use crate::interventions::{BatchIntervention, InterventionGroup};
use crate::losses::{
    classifier_ce, intervention_loss_ge, recon_loss, total_ge_loss, total_ge_loss_on, BaseLoss, LossReport,
    RegularizationCoeffs, Role,
};
use crate::networks::{Activation, ArchSpec, GanModels, ParamGroup};
use crate::tensor::{RandomSource, Tape, Tensor};

/// Stream tags. The plain reference trainer shares the first five.
pub(crate) mod stream {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const PRIOR: u64 = 3;
    pub const NOISE_D: u64 = 4;
    pub const NOISE_G: u64 = 5;
    pub const NOISE_F: u64 = 6;
    pub const INTERVENE: u64 = 7;
    pub const EVAL: u64 = 8;
}

pub(crate) fn iter_stream(seed: u64, tag: u64, iter: u64) -> RandomSource {
    RandomSource::new(seed).fork(tag).fork(iter)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_loss: BaseLoss,
    pub latent_dim: usize,
    pub blocks: usize,
    pub batch_size: usize,
    pub total_iters: u64,
    pub inner_iters: usize,
    pub lr_df: f64,
    pub lr_e: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub coeffs: RegularizationCoeffs,
    pub noise_sigma0: f64,
    pub noise_decay_frac: f64,
    pub seed: u64,
    pub dataset: DatasetKind,
    pub d_sees_intervened: bool,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub eval_samples: usize,
    pub hidden_widths: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_loss: BaseLoss::Lsgan,
            latent_dim: 8,
            blocks: 4,
            batch_size: 64,
            total_iters: 30_000,
            inner_iters: 1,
            lr_df: 1e-4,
            lr_e: 5e-3,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            coeffs: RegularizationCoeffs::default(),
            noise_sigma0: 0.1,
            noise_decay_frac: 0.2,
            seed: 0,
            dataset: DatasetKind::default_grid(),
            d_sees_intervened: false,
            eval_every: 1000,
            checkpoint_every: 5000,
            eval_samples: 10_000,
            hidden_widths: vec![64, 64],
        }
    }
}

impl TrainConfig {
    /// Returns the offending key and a message.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.blocks == 0 || self.latent_dim == 0 || self.latent_dim % self.blocks != 0 {
            return Err((
                "latent_dim",
                format!("blocks k={} must divide latent_dim d={}", self.blocks, self.latent_dim),
            ));
        }
        if self.batch_size < 2 {
            return Err(("batch_size", "batch_size must be at least 2".into()));
        }
        if self.inner_iters == 0 {
            return Err(("inner_iters", "inner_iters must be at least 1".into()));
        }
        for (k, v) in [("lr_df", self.lr_df), ("lr_e", self.lr_e), ("adam_eps", self.adam_eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err((k, format!("{k} must be positive, got {v}")));
            }
        }
        for (k, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err((k, format!("{k} must lie in [0, 1), got {v}")));
            }
        }
        if let Err(e) = self.coeffs.validate() {
            return Err(("coeffs", e.to_string()));
        }
        if !(self.noise_sigma0 >= 0.0 && self.noise_sigma0.is_finite()) {
            return Err(("noise_sigma0", "noise_sigma0 must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_decay_frac) {
            return Err(("noise_decay_frac", "noise_decay_frac must lie in [0, 1]".into()));
        }
        if self.eval_every == 0 {
            return Err(("eval_every", "eval_every must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(("checkpoint_every", "checkpoint_every must be at least 1".into()));
        }
        if self.eval_samples == 0 {
            return Err(("eval_samples", "eval_samples must be at least 1".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(("hidden_widths", "hidden_widths must be a nonempty list of positive widths".into()));
        }
        if let Err(e) = SyntheticDataset::new(self.dataset) {
            return Err(("dataset", e.to_string()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(key, message)| Error::Config {
            key: key.into(),
            line: 0,
            message,
        })
    }

    pub fn arch(&self) -> ArchSpec {
        ArchSpec {
            data_dim: 2,
            latent_dim: self.latent_dim,
            blocks: self.blocks,
            hidden_widths: self.hidden_widths.clone(),
            hidden_activation: Activation::LeakyRelu(0.2),
        }
    }

    pub fn adam_df(&self) -> AdamParams {
        AdamParams {
            lr: self.lr_df,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn adam_e(&self) -> AdamParams {
        AdamParams {
            lr: self.lr_e,
            ..self.adam_df()
        }
    }

    /// The classifier is only trained when some role uses the intervention loss.
    pub fn trains_classifier(&self) -> bool {
        self.coeffs.mu_gd != 0.0 || self.coeffs.mu_e != 0.0
    }
}

/// `sigma0 · max(0, 1 − iter / (decay_frac · total))`, zero once the decay
/// window has passed.
pub fn anneal_noise(iter: u64, total_iters: u64, sigma0: f64, decay_frac: f64) -> f64 {
    let window = decay_frac * total_iters as f64;
    if iter as f64 >= window {
        return 0.0;
    }
    sigma0 * (1.0 - iter as f64 / window).max(0.0)
}

fn noisy(x: &Tensor, rng: &mut RandomSource, sigma: f64) -> Result<Tensor> {
    let eps = rng.gaussian(x.dims());
    x.add(&eps.scale(sigma)?)
}

/// Optimizer states for the four parameter sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub d: AdamState,
    pub f: AdamState,
    pub g: AdamState,
    pub e: AdamState,
}

pub(crate) const D_GROUPS: [ParamGroup; 2] = [ParamGroup::Trunk, ParamGroup::DHead];
const F_GROUPS: [ParamGroup; 2] = [ParamGroup::Trunk, ParamGroup::FHead];
const G_GROUPS: [ParamGroup; 1] = [ParamGroup::Generator];
const E_GROUPS: [ParamGroup; 1] = [ParamGroup::Encoder];

pub(crate) fn gather(models: &GanModels, groups: &[ParamGroup]) -> Vec<Tensor> {
    groups
        .iter()
        .flat_map(|g| models.group(*g).params().iter().cloned())
        .collect()
}

fn scatter(models: &mut GanModels, groups: &[ParamGroup], mut params: Vec<Tensor>) -> Result<()> {
    for g in groups {
        let n = models.group(*g).params().len();
        let rest = params.split_off(n);
        models.group_mut(*g).set_params(params)?;
        params = rest;
    }
    Ok(())
}

impl Optimizers {
    pub fn new(models: &GanModels) -> Self {
        Optimizers {
            d: AdamState::new(&gather(models, &D_GROUPS)),
            f: AdamState::new(&gather(models, &F_GROUPS)),
            g: AdamState::new(&gather(models, &G_GROUPS)),
            e: AdamState::new(&gather(models, &E_GROUPS)),
        }
    }

    fn named(&self) -> [(&'static str, &AdamState); 4] {
        [("d", &self.d), ("f", &self.f), ("g", &self.g), ("e", &self.e)]
    }
}

fn apply_update(
    models: &mut GanModels,
    groups: &[ParamGroup],
    grads: &crate::tensor::Gradients,
    ids: &[crate::tensor::NodeId],
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<()> {
    let mut params = gather(models, groups);
    let g: Vec<Tensor> = ids
        .iter()
        .zip(&params)
        .map(|(id, p)| grads.get_or_zeros(*id, p))
        .collect();
    adam_step(&mut params, &g, state, hp)?;
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("Adam update".into()));
    }
    scatter(models, groups, params)
}

fn bound_ids(bound: &crate::networks::BoundModels<'_>, groups: &[ParamGroup]) -> Vec<crate::tensor::NodeId> {
    groups.iter().flat_map(|g| bound.ids(*g).iter().copied()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub models: GanModels,
    pub optim: Optimizers,
    pub group: InterventionGroup,
    pub dataset: SyntheticDataset,
    /// Completed iterations.
    pub iter: u64,
}

/// One inner pass's batch, kept for the generator/encoder update.
struct InnerBatch {
    x: Tensor,
    z: Tensor,
    iv: BatchIntervention,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = RandomSource::new(config.seed).fork(stream::INIT);
        let models = GanModels::init(config.arch(), &mut rng)?;
        Ok(Trainer {
            optim: Optimizers::new(&models),
            group: InterventionGroup::block_substitution(config.blocks, config.latent_dim)?,
            dataset: SyntheticDataset::new(config.dataset)?,
            models,
            config,
            iter: 0,
        })
    }

    /// Noise scale used by step `iter` (1-based) and reported for it.
    pub fn sigma_at(&self, iter: u64) -> f64 {
        anneal_noise(iter, self.config.total_iters, self.config.noise_sigma0, self.config.noise_decay_frac)
    }

    /// Runs one outer iteration. Non-finite values abort with the losses
    /// seen so far in the message.
    pub fn train_step(&mut self) -> Result<LossReport> {
        let step = self.iter + 1;
        let mut report = LossReport::default();
        match self.step_inner(step, &mut report) {
            Ok(()) if report.is_finite() => {
                self.iter = step;
                Ok(report)
            }
            Ok(()) => Err(Error::Aborted {
                iter: step,
                reason: format!("non-finite loss: {report:?}"),
            }),
            Err(e @ (Error::NonFinite(_) | Error::Domain(_))) => Err(Error::Aborted {
                iter: step,
                reason: format!("{e}; losses so far {report:?}"),
            }),
            Err(e) => Err(e),
        }
    }

    fn step_inner(&mut self, step: u64, report: &mut LossReport) -> Result<()> {
        let cfg = self.config.clone();
        let seed = cfg.seed;
        let sigma = self.sigma_at(step);
        let n = cfg.batch_size;
        let mut data_rng = iter_stream(seed, stream::DATA, step);
        let mut prior_rng = iter_stream(seed, stream::PRIOR, step);
        let mut noise_d = iter_stream(seed, stream::NOISE_D, step);
        let mut noise_g = iter_stream(seed, stream::NOISE_G, step);
        let mut noise_f = iter_stream(seed, stream::NOISE_F, step);
        let mut iv_rng = iter_stream(seed, stream::INTERVENE, step);

        let mut last = None;
        for _ in 0..cfg.inner_iters {
            let x = crate::benchmarks::sample_dataset(&self.dataset, n, &mut data_rng)?;
            let z = prior_rng.gaussian(&[n, cfg.latent_dim]);
            let iv = BatchIntervention::sample(&self.group, n, &mut iv_rng);
            let w = self.models.encode(&x)?;
            let x_int = self.models.generate(&iv.apply(&w)?)?;

            // discriminator
            let real = noisy(&x, &mut noise_d, sigma)?;
            let fake = noisy(&self.models.generate(&z)?, &mut noise_d, sigma)?;
            let fake = if cfg.d_sees_intervened {
                fake.concat_rows(&noisy(&x_int, &mut noise_d, sigma)?)?
            } else {
                fake
            };
            {
                let mut tape = Tape::new();
                let bound = self.models.bind(&mut tape, &D_GROUPS);
                let r = tape.constant(real);
                let f = tape.constant(fake);
                let dr = bound.discriminate(&mut tape, r)?;
                let df = bound.discriminate(&mut tape, f)?;
                let loss = cfg.base_loss.discriminator(&mut tape, dr, df)?;
                report.adv_d = tape.scalar(loss)?;
                let grads = tape.backward(loss)?;
                let ids = bound_ids(&bound, &D_GROUPS);
                drop(bound);
                apply_update(&mut self.models, &D_GROUPS, &grads, &ids, &mut self.optim.d, &cfg.adam_df())?;
            }

            // intervention classifier
            if cfg.trains_classifier() {
                let xin = noisy(&x_int, &mut noise_f, sigma)?;
                let mut tape = Tape::new();
                let bound = self.models.bind(&mut tape, &F_GROUPS);
                let xi = tape.constant(xin);
                let p = bound.classify(&mut tape, xi)?;
                let ce = classifier_ce(&mut tape, p, &iv.labels())?;
                let grads = tape.backward(ce)?;
                let ids = bound_ids(&bound, &F_GROUPS);
                drop(bound);
                apply_update(&mut self.models, &F_GROUPS, &grads, &ids, &mut self.optim.f, &cfg.adam_df())?;
            }
            last = Some(InnerBatch { x, z, iv });
        }
        let InnerBatch { x, z, iv } = last.expect("inner_iters >= 1");

        // generator and encoder share one graph
        let fake_noise = noise_g.gaussian(&[n, 2]).scale(sigma)?;
        let int_noise = noise_f.gaussian(&[n, 2]).scale(sigma)?;
        let recon_iv = BatchIntervention::sample(&self.group, n, &mut iv_rng);
        let z_int = recon_iv.apply(&z)?;

        let mut tape = Tape::new();
        let both = [ParamGroup::Generator, ParamGroup::Encoder];
        let bound = self.models.bind(&mut tape, &both);

        let zi = tape.constant(z);
        let g_z = bound.generate(&mut tape, zi)?;
        let fn_ = tape.constant(fake_noise);
        let g_zn = tape.add(g_z, fn_)?;
        let d_fake = bound.discriminate(&mut tape, g_zn)?;
        let adv_g = cfg.base_loss.generator(&mut tape, d_fake)?;

        let xi = tape.constant(x);
        let w = bound.encode(&mut tape, xi)?;
        let o = iv.apply_on_tape(&mut tape, w)?;
        let x_int = bound.generate(&mut tape, o)?;
        let in_ = tape.constant(int_noise);
        let x_int_n = tape.add(x_int, in_)?;
        let p = bound.classify(&mut tape, x_int_n)?;
        let iv_ge = intervention_loss_ge(&mut tape, p, &iv.labels())?;

        let x_rec = bound.generate(&mut tape, w)?;
        let zc = tape.constant(z_int);
        let g_zc = bound.generate(&mut tape, zc)?;
        let z_rec = bound.encode(&mut tape, g_zc)?;
        let recon = recon_loss(&mut tape, xi, x_rec, zc, z_rec)?;

        report.adv_g = tape.scalar(adv_g)?;
        report.iv_generator = tape.scalar(iv_ge)?;
        report.iv_classifier_ce = -report.iv_generator;
        report.recon = tape.scalar(recon)?;
        report.total_g = total_ge_loss(
            report.adv_g,
            report.recon,
            report.iv_generator,
            &cfg.coeffs,
            Role::GeneratorDiscriminator,
        );
        if !report.is_finite() {
            return Ok(());
        }

        let loss_g = total_ge_loss_on(&mut tape, Some(adv_g), recon, iv_ge, &cfg.coeffs, Role::GeneratorDiscriminator)?
            .expect("generator loss always has the adversarial term");
        let loss_e = total_ge_loss_on(&mut tape, None, recon, iv_ge, &cfg.coeffs, Role::Encoder)?;
        let g_grads = tape.backward(loss_g)?;
        let e_grads = loss_e.map(|l| tape.backward(l)).transpose()?;
        let g_ids = bound_ids(&bound, &G_GROUPS);
        let e_ids = bound_ids(&bound, &E_GROUPS);
        drop(bound);
        apply_update(&mut self.models, &G_GROUPS, &g_grads, &g_ids, &mut self.optim.g, &cfg.adam_df())?;
        if let Some(eg) = e_grads {
            apply_update(&mut self.models, &E_GROUPS, &eg, &e_ids, &mut self.optim.e, &cfg.adam_e())?;
        }
        Ok(())
    }

    pub fn evaluate(&self, iter: u64) -> Result<ModeCoverageReport> {
        let mut rng = iter_stream(self.config.seed, stream::EVAL, iter);
        evaluate_modes(&self.models, &self.dataset, self.config.eval_samples, &mut rng)
    }

    pub fn metrics_row(&self, report: &LossReport) -> Result<MetricsRow> {
        let modes = self.evaluate(self.iter)?;
        Ok(MetricsRow {
            iter: self.iter,
            loss_d: report.adv_d,
            loss_g_adv: report.adv_g,
            classifier_ce: report.iv_classifier_ce,
            iv_ge: report.iv_generator,
            recon: report.recon,
            total_g: report.total_g,
            modes_covered: modes.modes_covered,
            kl_modes: modes.kl_to_uniform,
            noise_sigma: self.sigma_at(self.iter),
        })
    }

    fn state_tensors(&self) -> checkpoint::NamedTensors {
        let mut out = Vec::new();
        for g in ParamGroup::ALL {
            for (i, p) in self.models.group(g).params().iter().enumerate() {
                out.push((format!("{}.{i}", g.name()), p.clone()));
            }
        }
        for (name, st) in self.optim.named() {
            for (i, m) in st.m.iter().enumerate() {
                out.push((format!("adam.{name}.m.{i}"), m.clone()));
            }
            for (i, v) in st.v.iter().enumerate() {
                out.push((format!("adam.{name}.v.{i}"), v.clone()));
            }
            out.push((format!("adam.{name}.t"), Tensor::scalar(st.t as f64)));
        }
        out.push(("train.iter".into(), Tensor::scalar(self.iter as f64)));
        let seed = [(self.config.seed & 0xffff_ffff) as f64, (self.config.seed >> 32) as f64];
        out.push(("meta.seed".into(), Tensor::vector(seed.to_vec()).expect("finite")));
        let arch = self.models.arch.clone();
        let mut shape = vec![arch.data_dim as f64, arch.latent_dim as f64, arch.blocks as f64];
        shape.extend(arch.hidden_widths.iter().map(|w| *w as f64));
        out.push(("meta.arch".into(), Tensor::vector(shape).expect("finite")));
        out
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::write_tensors(path, &self.state_tensors())
    }

    /// Restores a trainer for `config` from a checkpoint written by the same
    /// configuration.
    pub fn load_checkpoint(config: TrainConfig, path: &Path) -> Result<Self> {
        let mut tr = Trainer::new(config)?;
        let tensors = checkpoint::read_tensors(path)?;
        let lookup = |name: &str| -> Result<&Tensor> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Format(format!("checkpoint has no tensor `{name}`")))
        };
        let expected = tr.state_tensors();
        if tensors.len() != expected.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, this configuration needs {}",
                tensors.len(),
                expected.len()
            )));
        }
        for (name, t) in &expected {
            let got = lookup(name)?;
            if got.dims() != t.dims() {
                return Err(Error::Format(format!(
                    "tensor `{name}` has dims {:?}, expected {:?}",
                    got.dims(),
                    t.dims()
                )));
            }
        }
        if lookup("meta.arch")? != &expected.iter().find(|(n, _)| n == "meta.arch").unwrap().1 {
            return Err(Error::Format("checkpoint architecture differs from the configuration".into()));
        }
        if lookup("meta.seed")? != &expected.iter().find(|(n, _)| n == "meta.seed").unwrap().1 {
            return Err(Error::Format("checkpoint was written with a different seed".into()));
        }
        for g in ParamGroup::ALL {
            let n = tr.models.group(g).params().len();
            let params = (0..n)
                .map(|i| lookup(&format!("{}.{i}", g.name())).cloned())
                .collect::<Result<Vec<_>>>()?;
            tr.models.group_mut(g).set_params(params)?;
        }
        let states = [&mut tr.optim.d, &mut tr.optim.f, &mut tr.optim.g, &mut tr.optim.e];
        for (name, st) in ["d", "f", "g", "e"].into_iter().zip(states) {
            for i in 0..st.m.len() {
                st.m[i] = lookup(&format!("adam.{name}.m.{i}"))?.clone();
                st.v[i] = lookup(&format!("adam.{name}.v.{i}"))?.clone();
            }
            st.t = count_value(lookup(&format!("adam.{name}.t"))?)?;
        }
        tr.iter = count_value(lookup("train.iter")?)?;
        if tr.iter > tr.config.total_iters {
            return Err(Error::Format(format!(
                "checkpoint is at iteration {} beyond total_iters {}",
                tr.iter, tr.config.total_iters
            )));
        }
        Ok(tr)
    }
}

fn count_value(t: &Tensor) -> Result<u64> {
    let v = t.item().map_err(|_| Error::Format("counter is not a scalar".into()))?;
    if v < 0.0 || v.fract() != 0.0 || v > 9.007_199_254_740_992e15 {
        return Err(Error::Format(format!("invalid counter value {v}")));
    }
    Ok(v as u64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub classifier_ce: f64,
    pub iv_ge: f64,
    pub recon: f64,
    pub total_g: f64,
    pub modes_covered: usize,
    pub kl_modes: f64,
    pub noise_sigma: f64,
}

pub const METRICS_COLUMNS: [&str; 10] = [
    "iter",
    "loss_d",
    "loss_g_adv",
    "classifier_ce",
    "iv_ge",
    "recon",
    "total_g",
    "modes_covered",
    "kl_modes",
    "noise_sigma",
];

impl MetricsRow {
    /// Shortest round-trip formatting, so rows compare exactly as text.
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{},{:?},{:?}",
            self.iter,
            self.loss_d,
            self.loss_g_adv,
            self.classifier_ce,
            self.iv_ge,
            self.recon,
            self.total_g,
            self.modes_covered,
            self.kl_modes,
            self.noise_sigma
        )
    }
}

/// Appends rows to `metrics.csv`, flushing after each one.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn open(path: &Path) -> Result<Self> {
        let exists = path.exists() && fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = MetricsWriter {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        if !exists {
            w.line(&METRICS_COLUMNS.join(","))?;
        }
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.line(&row.to_csv_line())
    }
}

pub fn checkpoint_path(dir: &Path, iter: u64) -> PathBuf {
    dir.join(format!("checkpoint_{iter:08}.ivgn"))
}

#[derive(Clone, Debug, Default)]
pub struct LoopOptions {
    pub resume_from: Option<PathBuf>,
    /// Stop after this iteration (checkpointing there) instead of `total_iters`.
    pub stop_at: Option<u64>,
    pub quiet: bool,
}

#[derive(Clone, Debug)]
pub struct LoopOutcome {
    pub trainer: Trainer,
    pub rows: Vec<MetricsRow>,
    pub last_report: Option<LossReport>,
}

/// Runs (or resumes) training, writing `metrics.csv` and checkpoints into
/// `out_dir`. Rows and checkpoints written before an abort stay on disk.
pub fn train_loop(config: TrainConfig, out_dir: &Path, opts: &LoopOptions) -> Result<LoopOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut trainer = match &opts.resume_from {
        Some(p) => Trainer::load_checkpoint(config, p)?,
        None => Trainer::new(config)?,
    };
    let total = trainer.config.total_iters;
    let end = opts.stop_at.map_or(total, |s| s.min(total));
    let mut metrics = MetricsWriter::open(&out_dir.join("metrics.csv"))?;
    if opts.resume_from.is_none() {
        trainer.save_checkpoint(&checkpoint_path(out_dir, 0))?;
    }
    let mut rows = Vec::new();
    let mut last_report = None;
    while trainer.iter < end {
        let report = trainer.train_step()?;
        let it = trainer.iter;
        if it % trainer.config.eval_every == 0 || it == total {
            let row = trainer.metrics_row(&report)?;
            metrics.write(&row)?;
            if !opts.quiet {
                eprintln!(
                    "iter {it}: loss_d {:.4} adv_g {:.4} ce {:.4} recon {:.4} modes {} kl {:.3}",
                    row.loss_d, row.loss_g_adv, row.classifier_ce, row.recon, row.modes_covered, row.kl_modes
                );
            }
            rows.push(row);
        }
        if it % trainer.config.checkpoint_every == 0 || it == end {
            trainer.save_checkpoint(&checkpoint_path(out_dir, it))?;
        }
        last_report = Some(report);
    }
    Ok(LoopOutcome {
        trainer,
        rows,
        last_report,
    })
}
