//! Finite-difference audit of every loss path against every parameter
//! group it reaches.

use crate::benchmarks::{sample_dataset, SyntheticDataset};
use crate::error::Result;
use crate::interventions::{BatchIntervention, InterventionGroup};
use crate::losses::{classifier_ce, intervention_loss_ge, recon_loss, BaseLoss};
use crate::networks::{BoundModels, GanModels, ParamGroup};
use crate::tensor::{grad_check_many, GradCheckReport, NodeId, RandomSource, Tape, Tensor};
use crate::trainer::TrainConfig;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradAuditEntry {
    pub path: &'static str,
    pub group: ParamGroup,
    pub report: GradCheckReport,
}

impl GradAuditEntry {
    pub fn passed(&self) -> bool {
        self.report.checked > 0 && self.report.max_rel_error < GRADCHECK_TOLERANCE
    }
}

struct Inputs {
    x: Tensor,
    z: Tensor,
    fake_noise: Tensor,
    iv: BatchIntervention,
    z_int: Tensor,
}

type LossFn = fn(&BoundModels<'_>, &mut Tape, &Inputs) -> Result<NodeId>;

fn adv_d(base: BaseLoss, b: &BoundModels<'_>, t: &mut Tape, inp: &Inputs) -> Result<NodeId> {
    let real = t.constant(inp.x.clone());
    let zc = t.constant(inp.z.clone());
    let g = b.generate(t, zc)?;
    let dr = b.discriminate(t, real)?;
    let df = b.discriminate(t, g)?;
    base.discriminator(t, dr, df)
}

fn adv_g(base: BaseLoss, b: &BoundModels<'_>, t: &mut Tape, inp: &Inputs) -> Result<NodeId> {
    let zc = t.constant(inp.z.clone());
    let g = b.generate(t, zc)?;
    let e = t.constant(inp.fake_noise.clone());
    let gn = t.add(g, e)?;
    let df = b.discriminate(t, gn)?;
    base.generator(t, df)
}

fn recon(b: &BoundModels<'_>, t: &mut Tape, inp: &Inputs) -> Result<NodeId> {
    let x = t.constant(inp.x.clone());
    let w = b.encode(t, x)?;
    let xr = b.generate(t, w)?;
    let zc = t.constant(inp.z_int.clone());
    let gz = b.generate(t, zc)?;
    let zr = b.encode(t, gz)?;
    recon_loss(t, x, xr, zc, zr)
}

fn intervened_probs(b: &BoundModels<'_>, t: &mut Tape, inp: &Inputs) -> Result<NodeId> {
    let x = t.constant(inp.x.clone());
    let w = b.encode(t, x)?;
    let o = inp.iv.apply_on_tape(t, w)?;
    let xi = b.generate(t, o)?;
    b.classify(t, xi)
}

fn classifier(b: &BoundModels<'_>, t: &mut Tape, inp: &Inputs) -> Result<NodeId> {
    let p = intervened_probs(b, t, inp)?;
    classifier_ce(t, p, &inp.iv.labels())
}

fn intervention(b: &BoundModels<'_>, t: &mut Tape, inp: &Inputs) -> Result<NodeId> {
    let p = intervened_probs(b, t, inp)?;
    intervention_loss_ge(t, p, &inp.iv.labels())
}

/// Every `(path, group)` pair the trainer differentiates.
pub fn gradient_audit(config: &TrainConfig, batch: usize, rng: &mut RandomSource) -> Result<Vec<GradAuditEntry>> {
    config.validate()?;
    let mut models = GanModels::init(config.arch(), rng)?;
    // a random classifier head so the classifier paths carry signal into the trunk
    let head: Vec<Tensor> = models
        .group(ParamGroup::FHead)
        .params()
        .iter()
        .map(|p| rng.gaussian_scaled(p.dims(), 0.3))
        .collect();
    models.group_mut(ParamGroup::FHead).set_params(head)?;

    let ds = SyntheticDataset::new(config.dataset)?;
    let group = InterventionGroup::block_substitution(config.blocks, config.latent_dim)?;
    let x = sample_dataset(&ds, batch, rng)?;
    let z = rng.gaussian(&[batch, config.latent_dim]);
    let fake_noise = rng.gaussian_scaled(&[batch, 2], 0.1);
    let iv = BatchIntervention::sample(&group, batch, rng);
    let z_int = BatchIntervention::sample(&group, batch, rng).apply(&z)?;
    let inputs = Inputs {
        x,
        z,
        fake_noise,
        iv,
        z_int,
    };

    use ParamGroup::*;
    let paths: [(&'static str, LossFn, &[ParamGroup]); 7] = [
        ("vanilla_d", |b, t, i| adv_d(BaseLoss::Vanilla, b, t, i), &[Trunk, DHead]),
        ("vanilla_g", |b, t, i| adv_g(BaseLoss::Vanilla, b, t, i), &[Generator]),
        ("lsgan_d", |b, t, i| adv_d(BaseLoss::Lsgan, b, t, i), &[Trunk, DHead]),
        ("lsgan_g", |b, t, i| adv_g(BaseLoss::Lsgan, b, t, i), &[Generator]),
        ("recon", recon, &[Encoder, Generator]),
        ("classifier", classifier, &[Trunk, FHead]),
        ("intervention", intervention, &[Encoder, Generator]),
    ];
    let mut out = Vec::new();
    for (path, loss, groups) in paths {
        for &g in groups {
            let params = models.group(g).params().to_vec();
            let report = grad_check_many(
                |tape, ids| {
                    let bound = models.bind_replacing(tape, g, ids);
                    loss(&bound, tape, &inputs)
                },
                &params,
                GRADCHECK_STEP,
            )?;
            out.push(GradAuditEntry { path, group: g, report });
        }
    }
    Ok(out)
}
