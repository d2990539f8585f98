//! A bare GAN trainer (generator and discriminator only) used as the
//! reference for the zero-coefficient ablation.

use super::{adam_step, iter_stream, stream, AdamState, TrainConfig};
use crate::benchmarks::{sample_dataset, SyntheticDataset};
use crate::error::Result;
use crate::networks::{GanModels, Mlp, ParamGroup};
use crate::tensor::{NodeId, RandomSource, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct PlainGan {
    pub config: TrainConfig,
    pub generator: Mlp,
    pub trunk: Mlp,
    pub d_head: Mlp,
    pub opt_d: AdamState,
    pub opt_g: AdamState,
    pub dataset: SyntheticDataset,
    pub iter: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlainReport {
    pub loss_d: f64,
    pub loss_g: f64,
}

impl PlainGan {
    /// Starts from the same initialization the full trainer would use.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = RandomSource::new(config.seed).fork(stream::INIT);
        let models = GanModels::init(config.arch(), &mut rng)?;
        let generator = models.group(ParamGroup::Generator).clone();
        let trunk = models.group(ParamGroup::Trunk).clone();
        let d_head = models.group(ParamGroup::DHead).clone();
        let d_params: Vec<Tensor> = trunk.params().iter().chain(d_head.params()).cloned().collect();
        Ok(PlainGan {
            opt_d: AdamState::new(&d_params),
            opt_g: AdamState::new(generator.params()),
            dataset: SyntheticDataset::new(config.dataset)?,
            generator,
            trunk,
            d_head,
            config,
            iter: 0,
        })
    }

    fn sigma(&self, iter: u64) -> f64 {
        super::anneal_noise(iter, self.config.total_iters, self.config.noise_sigma0, self.config.noise_decay_frac)
    }

    fn disc(&self, tape: &mut Tape, trunk: &[NodeId], head: &[NodeId], x: NodeId) -> Result<NodeId> {
        let h = self.trunk.forward_on(tape, trunk, x)?;
        self.d_head.forward_on(tape, head, h)
    }

    pub fn step(&mut self) -> Result<PlainReport> {
        let cfg = self.config.clone();
        let it = self.iter + 1;
        let sigma = self.sigma(it);
        let n = cfg.batch_size;
        let mut data_rng = iter_stream(cfg.seed, stream::DATA, it);
        let mut prior_rng = iter_stream(cfg.seed, stream::PRIOR, it);
        let mut noise_d = iter_stream(cfg.seed, stream::NOISE_D, it);
        let mut noise_g = iter_stream(cfg.seed, stream::NOISE_G, it);

        let mut loss_d = 0.0;
        let mut z = Tensor::zeros(&[0]);
        for _ in 0..cfg.inner_iters {
            let x = sample_dataset(&self.dataset, n, &mut data_rng)?;
            z = prior_rng.gaussian(&[n, cfg.latent_dim]);
            let eps_r = noise_d.gaussian(&[n, 2]);
            let real = x.add(&eps_r.scale(sigma)?)?;
            let g = self.generator.forward(&z)?;
            let eps_f = noise_d.gaussian(&[n, 2]);
            let fake = g.add(&eps_f.scale(sigma)?)?;

            let mut tape = Tape::new();
            let t_ids = self.trunk.bind(&mut tape, true);
            let h_ids = self.d_head.bind(&mut tape, true);
            let r = tape.constant(real);
            let f = tape.constant(fake);
            let dr = self.disc(&mut tape, &t_ids, &h_ids, r)?;
            let df = self.disc(&mut tape, &t_ids, &h_ids, f)?;
            let loss = cfg.base_loss.discriminator(&mut tape, dr, df)?;
            loss_d = tape.scalar(loss)?;
            let grads = tape.backward(loss)?;

            let mut params: Vec<Tensor> = self.trunk.params().iter().chain(self.d_head.params()).cloned().collect();
            let g: Vec<Tensor> = t_ids
                .iter()
                .chain(&h_ids)
                .zip(&params)
                .map(|(id, p)| grads.get_or_zeros(*id, p))
                .collect();
            adam_step(&mut params, &g, &mut self.opt_d, &cfg.adam_df())?;
            let head = params.split_off(self.trunk.params().len());
            self.trunk.set_params(params)?;
            self.d_head.set_params(head)?;
        }

        let eps = noise_g.gaussian(&[n, 2]).scale(sigma)?;
        let mut tape = Tape::new();
        let g_ids = self.generator.bind(&mut tape, true);
        let t_ids = self.trunk.bind(&mut tape, false);
        let h_ids = self.d_head.bind(&mut tape, false);
        let zi = tape.constant(z);
        let gz = self.generator.forward_on(&mut tape, &g_ids, zi)?;
        let e = tape.constant(eps);
        let gzn = tape.add(gz, e)?;
        let df = self.disc(&mut tape, &t_ids, &h_ids, gzn)?;
        let loss_g = cfg.base_loss.generator(&mut tape, df)?;
        let report = PlainReport {
            loss_d,
            loss_g: tape.scalar(loss_g)?,
        };
        let grads = tape.backward(loss_g)?;
        let mut params = self.generator.params().to_vec();
        let g: Vec<Tensor> = g_ids.iter().zip(&params).map(|(id, p)| grads.get_or_zeros(*id, p)).collect();
        adam_step(&mut params, &g, &mut self.opt_g, &cfg.adam_df())?;
        self.generator.set_params(params)?;
        self.iter = it;
        Ok(report)
    }
}
