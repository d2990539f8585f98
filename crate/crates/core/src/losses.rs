//! Adversarial, intervention and reconstruction objectives, built on a tape.

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape, Tensor, UnaryOp};

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseLoss {
    Vanilla,
    Lsgan,
}

impl BaseLoss {
    pub fn name(self) -> &'static str {
        match self {
            BaseLoss::Vanilla => "vanilla",
            BaseLoss::Lsgan => "lsgan",
        }
    }

    pub fn parse(s: &str) -> Option<BaseLoss> {
        match s {
            "vanilla" => Some(BaseLoss::Vanilla),
            "lsgan" => Some(BaseLoss::Lsgan),
            _ => None,
        }
    }

    pub fn adversarial(self, tape: &mut Tape, d_real: NodeId, d_fake: NodeId) -> Result<(NodeId, NodeId)> {
        match self {
            BaseLoss::Vanilla => adv_loss_vanilla(tape, d_real, d_fake),
            BaseLoss::Lsgan => adv_loss_lsgan(tape, d_real, d_fake),
        }
    }

    /// Discriminator loss only; skips building the generator term.
    pub fn discriminator(self, tape: &mut Tape, d_real: NodeId, d_fake: NodeId) -> Result<NodeId> {
        match self {
            BaseLoss::Vanilla => {
                let r = softplus_mean(tape, d_real, -1.0)?;
                let f = softplus_mean(tape, d_fake, 1.0)?;
                tape.add(r, f)
            }
            BaseLoss::Lsgan => {
                let r = half_sq_mean(tape, d_real, 1.0)?;
                let f = half_sq_mean(tape, d_fake, 0.0)?;
                tape.add(r, f)
            }
        }
    }

    /// Generator loss only.
    pub fn generator(self, tape: &mut Tape, d_fake: NodeId) -> Result<NodeId> {
        match self {
            BaseLoss::Vanilla => softplus_mean(tape, d_fake, -1.0),
            BaseLoss::Lsgan => half_sq_mean(tape, d_fake, 1.0),
        }
    }
}

// mean(softplus(sign * s)); -log σ(s) = softplus(-s), -log(1-σ(s)) = softplus(s)
fn softplus_mean(tape: &mut Tape, s: NodeId, sign: f64) -> Result<NodeId> {
    let x = if sign < 0.0 { tape.unary(UnaryOp::Neg, s)? } else { s };
    let sp = tape.unary(UnaryOp::Softplus, x)?;
    tape.mean(sp)
}

fn half_sq_mean(tape: &mut Tape, s: NodeId, target: f64) -> Result<NodeId> {
    let r = if target == 0.0 { s } else { tape.add_scalar(s, -target)? };
    let sq = tape.unary(UnaryOp::Square, r)?;
    let m = tape.mean(sq)?;
    tape.scale(m, 0.5)
}

/// `(loss_d, loss_g)` for the logistic GAN with a non-saturating generator term.
pub fn adv_loss_vanilla(tape: &mut Tape, d_real: NodeId, d_fake: NodeId) -> Result<(NodeId, NodeId)> {
    let d = BaseLoss::Vanilla.discriminator(tape, d_real, d_fake)?;
    let g = BaseLoss::Vanilla.generator(tape, d_fake)?;
    Ok((d, g))
}

/// `(loss_d, loss_g)` for least squares with targets fake 0, real 1, generator 1.
pub fn adv_loss_lsgan(tape: &mut Tape, d_real: NodeId, d_fake: NodeId) -> Result<(NodeId, NodeId)> {
    let d = BaseLoss::Lsgan.discriminator(tape, d_real, d_fake)?;
    let g = BaseLoss::Lsgan.generator(tape, d_fake)?;
    Ok((d, g))
}

/// Batch mean of `-e_i^T log f(x)`; `labels` is one-hot `n×k`.
pub fn classifier_ce(tape: &mut Tape, f_probs: NodeId, labels: &Tensor) -> Result<NodeId> {
    let p = tape.value(f_probs);
    if p.dims() != labels.dims() || p.rank() != 2 {
        return Err(Error::shape(format!(
            "classifier output {:?} vs labels {:?}",
            p.dims(),
            labels.dims()
        )));
    }
    let n = p.rows() as f64;
    let clamped = tape.unary(UnaryOp::ClampMin(PROB_FLOOR), f_probs)?;
    let logp = tape.unary(UnaryOp::Log, clamped)?;
    let l = tape.constant(labels.clone());
    let picked = tape.mul(logp, l)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0 / n)
}

/// The quantity G and E minimize: the negated classifier cross-entropy.
pub fn intervention_loss_ge(tape: &mut Tape, f_probs: NodeId, labels: &Tensor) -> Result<NodeId> {
    let ce = classifier_ce(tape, f_probs, labels)?;
    tape.unary(UnaryOp::Neg, ce)
}

fn row_l1_mean(tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
    let (da, db) = (tape.value(a).dims(), tape.value(b).dims());
    if da != db || da.len() != 2 {
        return Err(Error::shape(format!("reconstruction shapes {da:?} vs {db:?}")));
    }
    let n = da[0] as f64;
    let diff = tape.sub(a, b)?;
    let abs = tape.unary(UnaryOp::Abs, diff)?;
    let s = tape.sum(abs)?;
    tape.scale(s, 1.0 / n)
}

/// `mean ‖x_rec − x‖₁ + mean ‖z_rec − z_int‖₁`.
pub fn recon_loss(
    tape: &mut Tape,
    x: NodeId,
    x_rec: NodeId,
    z_int: NodeId,
    z_rec: NodeId,
) -> Result<NodeId> {
    let data = row_l1_mean(tape, x_rec, x)?;
    let latent = row_l1_mean(tape, z_rec, z_int)?;
    tape.add(data, latent)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizationCoeffs {
    pub lambda_gd: f64,
    pub mu_gd: f64,
    pub lambda_e: f64,
    pub mu_e: f64,
}

impl Default for RegularizationCoeffs {
    fn default() -> Self {
        RegularizationCoeffs {
            lambda_gd: 0.25,
            mu_gd: 0.5,
            lambda_e: 1.0,
            mu_e: 1.0,
        }
    }
}

impl RegularizationCoeffs {
    pub fn zero() -> Self {
        RegularizationCoeffs {
            lambda_gd: 0.0,
            mu_gd: 0.0,
            lambda_e: 0.0,
            mu_e: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_gd", self.lambda_gd),
            ("mu_gd", self.mu_gd),
            ("lambda_e", self.lambda_e),
            ("mu_e", self.mu_e),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }

    /// `(λ, μ)` for the given role.
    pub fn for_role(&self, role: Role) -> (f64, f64) {
        match role {
            Role::GeneratorDiscriminator => (self.lambda_gd, self.mu_gd),
            Role::Encoder => (self.lambda_e, self.mu_e),
        }
    }

    pub fn is_ablation(&self) -> bool {
        *self == RegularizationCoeffs::zero()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    GeneratorDiscriminator,
    Encoder,
}

/// Scalar combination; the generator role carries the adversarial term.
pub fn total_ge_loss(adv_g: f64, recon: f64, iv_ge: f64, coeffs: &RegularizationCoeffs, role: Role) -> f64 {
    let (lambda, mu) = coeffs.for_role(role);
    let base = match role {
        Role::GeneratorDiscriminator => adv_g,
        Role::Encoder => 0.0,
    };
    base + lambda * recon + mu * iv_ge
}

/// Tape version of [`total_ge_loss`]. Terms with a zero coefficient are left
/// out of the graph so they contribute nothing, not even a `0·x` rounding path.
pub fn total_ge_loss_on(
    tape: &mut Tape,
    adv_g: Option<NodeId>,
    recon: NodeId,
    iv_ge: NodeId,
    coeffs: &RegularizationCoeffs,
    role: Role,
) -> Result<Option<NodeId>> {
    let (lambda, mu) = coeffs.for_role(role);
    let mut acc = match role {
        Role::GeneratorDiscriminator => adv_g,
        Role::Encoder => None,
    };
    for (c, term) in [(lambda, recon), (mu, iv_ge)] {
        if c == 0.0 {
            continue;
        }
        let scaled = tape.scale(term, c)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled)?,
            None => scaled,
        });
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub adv_d: f64,
    pub adv_g: f64,
    pub iv_classifier_ce: f64,
    pub iv_generator: f64,
    pub recon: f64,
    pub total_g: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.adv_d,
            self.adv_g,
            self.iv_classifier_ce,
            self.iv_generator,
            self.recon,
            self.total_g,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{multi_js_discrete, optimal_classifier_posterior, DiscreteDist, FiniteComponent, WeightVector, Component};
    use crate::tensor::{grad_check, grad_check_many, RandomSource};

    fn scores(v: &[f64]) -> Tensor {
        Tensor::matrix(v.len(), 1, v.to_vec()).unwrap()
    }

    fn eval2(base: BaseLoss, real: &[f64], fake: &[f64]) -> (f64, f64) {
        let mut t = Tape::new();
        let r = t.constant(scores(real));
        let f = t.constant(scores(fake));
        let (d, g) = base.adversarial(&mut t, r, f).unwrap();
        (t.scalar(d).unwrap(), t.scalar(g).unwrap())
    }

    #[test]
    fn vanilla_at_zero() {
        let (d, g) = eval2(BaseLoss::Vanilla, &[0.0, 0.0], &[0.0, 0.0, 0.0]);
        let l2 = std::f64::consts::LN_2;
        assert!((d - 2.0 * l2).abs() < 1e-15);
        assert!((g - l2).abs() < 1e-15);
    }

    #[test]
    fn vanilla_perfect_discriminator() {
        let (d, _) = eval2(BaseLoss::Vanilla, &[40.0, 50.0], &[-40.0]);
        assert!(d < 1e-15);
        let (d, g) = eval2(BaseLoss::Vanilla, &[800.0], &[-800.0]);
        assert_eq!(d, 0.0);
        assert!((g - 800.0).abs() < 1e-9);
    }

    #[test]
    fn vanilla_generator_gradient_at_zero() {
        let n = 5;
        let mut t = Tape::new();
        let r = t.constant(scores(&[0.0; 5]));
        let f = t.variable(scores(&[0.0; 5]));
        let (_, g) = adv_loss_vanilla(&mut t, r, f).unwrap();
        let grads = t.backward(g).unwrap();
        for v in grads.get(f).unwrap().data() {
            assert!((v + 1.0 / (2.0 * n as f64)).abs() < 1e-15);
        }
    }

    #[test]
    fn lsgan_examples() {
        assert_eq!(eval2(BaseLoss::Lsgan, &[1.0, 1.0], &[0.0]).0, 0.0);
        assert_eq!(eval2(BaseLoss::Lsgan, &[0.3], &[1.0, 1.0]).1, 0.0);
        let (d, g) = eval2(BaseLoss::Lsgan, &[0.5], &[0.5]);
        assert!((d - 0.25).abs() < 1e-15);
        assert!((g - 0.125).abs() < 1e-15);
    }

    fn ce(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
        let k = probs[0].len();
        let mut t = Tape::new();
        let p = t.constant(Tensor::from_rows(probs).unwrap());
        let l = crate::interventions::one_hot(labels, k);
        let c = classifier_ce(&mut t, p, &l).unwrap();
        let g = intervention_loss_ge(&mut t, p, &l).unwrap();
        let (c, g) = (t.scalar(c).unwrap(), t.scalar(g).unwrap());
        assert_eq!(c + g, 0.0);
        c
    }

    #[test]
    fn classifier_ce_examples() {
        assert_eq!(ce(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]], &[0, 2]), 0.0);
        let u = vec![0.25; 4];
        assert!((ce(&[u.clone(), u.clone(), u], &[3, 1, 0]) - 4f64.ln()).abs() < 1e-15);
        let v = ce(&[vec![0.7, 0.1, 0.1, 0.1]], &[0]);
        assert!((v - 0.3567).abs() < 1e-4);
        assert!((v + 0.7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn classifier_ce_clamps_zero_probability() {
        let v = ce(&[vec![0.0, 1.0]], &[0]);
        assert!((v + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn classifier_ce_rejects_mismatch() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::full(&[2, 4], 0.25));
        assert!(classifier_ce(&mut t, p, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn iv_ge_at_chance_and_perfect() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::full(&[3, 4], 0.25));
        let l = crate::interventions::one_hot(&[0, 1, 2], 4);
        let iv = intervention_loss_ge(&mut t, p, &l).unwrap();
        assert!((t.scalar(iv).unwrap() + 4f64.ln()).abs() < 1e-15);
        let perfect = t.constant(l.clone());
        let iv = intervention_loss_ge(&mut t, perfect, &l).unwrap();
        assert_eq!(t.scalar(iv).unwrap(), 0.0);
    }

    #[test]
    fn optimal_posterior_cross_entropy_is_log_k_minus_js() {
        let mut rng = RandomSource::new(31);
        for _ in 0..20 {
            let k = 4;
            let dists: Vec<DiscreteDist> = (0..k)
                .map(|_| {
                    let w: Vec<f64> = (0..16).map(|_| rng.uniform() + 0.01).collect();
                    DiscreteDist::from_weights(&w).unwrap()
                })
                .collect();
            let comps: Vec<FiniteComponent> =
                dists.iter().map(|d| FiniteComponent { dist: d.clone() }).collect();
            let refs: Vec<&dyn Component> = comps.iter().map(|c| c as &dyn Component).collect();
            // exact expectation over i ~ U(k), x ~ p_i of -log f*_i(x)
            let mut expected = 0.0;
            for (i, d) in dists.iter().enumerate() {
                for (x, px) in d.probs().iter().enumerate() {
                    let post = optimal_classifier_posterior(&refs, &[x as f64]).unwrap();
                    expected -= px * post[i].ln() / k as f64;
                }
            }
            let js = multi_js_discrete(&dists, &WeightVector::uniform(k).unwrap()).unwrap();
            assert!((expected - (4f64.ln() - js)).abs() < 1e-12);
            assert!(expected <= 4f64.ln() + 1e-12 && expected >= 0.0);
        }
    }

    #[test]
    fn recon_examples() {
        let mut rng = RandomSource::new(3);
        let x = rng.gaussian(&[6, 2]);
        let z = rng.gaussian(&[6, 8]);
        let mut t = Tape::new();
        let xi = t.constant(x.clone());
        let zi = t.constant(z.clone());
        let r = recon_loss(&mut t, xi, xi, zi, zi).unwrap();
        assert_eq!(t.scalar(r).unwrap(), 0.0);

        let shifted = t.constant(x.unary(UnaryOp::AddScalar(0.1)).unwrap());
        let r = recon_loss(&mut t, xi, shifted, zi, zi).unwrap();
        assert!((t.scalar(r).unwrap() - 0.2).abs() < 1e-12);

        let xr = rng.gaussian(&[6, 2]);
        let zr = rng.gaussian(&[6, 8]);
        let x2 = x.add(&xr.sub(&x).unwrap().scale(2.0).unwrap()).unwrap();
        let z2 = z.add(&zr.sub(&z).unwrap().scale(2.0).unwrap()).unwrap();
        let (a, b, c, d) = (t.constant(xr), t.constant(zr), t.constant(x2), t.constant(z2));
        let r1 = recon_loss(&mut t, xi, a, zi, b).unwrap();
        let r2 = recon_loss(&mut t, xi, c, zi, d).unwrap();
        assert!((2.0 * t.scalar(r1).unwrap() - t.scalar(r2).unwrap()).abs() < 1e-12);

        assert!(recon_loss(&mut t, xi, zi, zi, zi).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let c = RegularizationCoeffs::default();
        assert!((total_ge_loss(1.0, 2.0, -1.0, &c, Role::GeneratorDiscriminator) - 1.0).abs() < 1e-15);
        assert!((total_ge_loss(7.0, 2.0, -1.0, &c, Role::Encoder) - 1.0).abs() < 1e-15);
        let z = RegularizationCoeffs::zero();
        assert_eq!(total_ge_loss(1.3, 2.0, -1.0, &z, Role::GeneratorDiscriminator), 1.3);
    }

    #[test]
    fn zero_coefficients_leave_adversarial_node_untouched() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::scalar(1.0));
        let r = t.constant(Tensor::scalar(2.0));
        let i = t.constant(Tensor::scalar(-1.0));
        let out = total_ge_loss_on(&mut t, Some(a), r, i, &RegularizationCoeffs::zero(), Role::GeneratorDiscriminator)
            .unwrap();
        assert_eq!(out, Some(a));
        let enc = total_ge_loss_on(&mut t, None, r, i, &RegularizationCoeffs::zero(), Role::Encoder).unwrap();
        assert_eq!(enc, None);
        let full = total_ge_loss_on(&mut t, Some(a), r, i, &RegularizationCoeffs::default(), Role::GeneratorDiscriminator)
            .unwrap()
            .unwrap();
        assert!((t.scalar(full).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn coefficients_validate() {
        assert!(RegularizationCoeffs::default().validate().is_ok());
        let bad = RegularizationCoeffs { mu_e: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = RandomSource::new(17);
        let real = rng.gaussian(&[5, 1]);
        let fake = rng.gaussian(&[5, 1]);
        for base in [BaseLoss::Vanilla, BaseLoss::Lsgan] {
            let r = grad_check_many(
                |t, ids| {
                    let (d, g) = base.adversarial(t, ids[0], ids[1])?;
                    let g2 = t.scale(g, 0.7)?;
                    t.add(d, g2)
                },
                &[real.clone(), fake.clone()],
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-6, "{base:?} {r:?}");
        }

        let logits = rng.gaussian(&[6, 4]);
        let labels = crate::interventions::one_hot(&[0, 1, 3, 2, 2, 0], 4);
        let r = grad_check(
            |t, x| {
                let p = t.softmax_rows(x)?;
                classifier_ce(t, p, &labels)
            },
            &logits,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");

        let x = rng.gaussian(&[4, 2]);
        let xr = rng.gaussian(&[4, 2]);
        let z = rng.gaussian(&[4, 3]);
        let zr = rng.gaussian(&[4, 3]);
        let r = grad_check_many(|t, ids| recon_loss(t, ids[0], ids[1], ids[2], ids[3]), &[x, xr, z, zr], 1e-5)
            .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
