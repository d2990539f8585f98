//! MLP encoder, generator, discriminator and classifier.
//!
//! The discriminator and the intervention classifier share one trunk; each
//! adds its own single affine head on top of the trunk features.

use crate::error::{Error, Result};
use crate::tensor::{NodeId, RandomSource, Tape, Tensor, UnaryOp};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Softmax,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.unary(UnaryOp::Relu, x),
            Activation::LeakyRelu(s) => tape.unary(UnaryOp::LeakyRelu(s), x),
            Activation::Tanh => tape.unary(UnaryOp::Tanh, x),
            Activation::Sigmoid => tape.unary(UnaryOp::Sigmoid, x),
            Activation::Softmax => tape.softmax_rows(x),
        }
    }

    /// Weight variance times fan-in for a layer feeding this activation.
    fn init_gain(self) -> f64 {
        match self {
            Activation::Relu | Activation::LeakyRelu(_) => 2.0,
            _ => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::shape("an MLP needs at least input and output widths"));
        }
        if layer_widths.iter().any(|w| *w == 0) {
            return Err(Error::shape(format!("zero width in {layer_widths:?}")));
        }
        Ok(MlpSpec {
            layer_widths,
            hidden_activation: hidden,
            output_activation: output,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }
}

/// Weights `[in×out]` and biases `[out]`, interleaved as `W0, b0, W1, b1, …`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Tensor>,
}

impl Mlp {
    /// He (`2/fan_in`) for relu-family layers, `1/fan_in` otherwise; zero biases.
    pub fn init(spec: MlpSpec, rng: &mut RandomSource) -> Mlp {
        let mut params = Vec::with_capacity(2 * spec.num_layers());
        for (l, w) in spec.layer_widths.windows(2).enumerate() {
            let std = (spec.activation(l).init_gain() / w[0] as f64).sqrt();
            params.push(rng.gaussian_scaled(&[w[0], w[1]], std));
            params.push(Tensor::zeros(&[w[1]]));
        }
        Mlp { spec, params }
    }

    /// Same shapes as [`Mlp::init`] with every parameter zero.
    pub fn zeroed(spec: MlpSpec) -> Mlp {
        let params = spec
            .layer_widths
            .windows(2)
            .flat_map(|w| [Tensor::zeros(&[w[0], w[1]]), Tensor::zeros(&[w[1]])])
            .collect();
        Mlp { spec, params }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.dims() != b.dims())
        {
            return Err(Error::shape("parameter list does not match the MLP layout"));
        }
        self.params = params;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.variable(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    pub fn forward_on(&self, tape: &mut Tape, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        let width = tape.value(x).cols();
        if width != self.spec.input_width() {
            return Err(Error::shape(format!(
                "input width {width} but network expects {}",
                self.spec.input_width()
            )));
        }
        let mut h = x;
        for l in 0..self.spec.num_layers() {
            let z = tape.matmul(h, ids[2 * l])?;
            let z = tape.add_row(z, ids[2 * l + 1])?;
            h = self.spec.activation(l).apply(tape, z)?;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let ids = self.bind(&mut tape, false);
        let xi = tape.constant(x.clone());
        let out = self.forward_on(&mut tape, &ids, xi)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Encoder,
    Generator,
    Trunk,
    DHead,
    FHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Encoder,
        ParamGroup::Generator,
        ParamGroup::Trunk,
        ParamGroup::DHead,
        ParamGroup::FHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Generator => "generator",
            ParamGroup::Trunk => "trunk",
            ParamGroup::DHead => "d_head",
            ParamGroup::FHead => "f_head",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Widths and activation shared by the hidden stacks of every network.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub blocks: usize,
    pub hidden_widths: Vec<usize>,
    pub hidden_activation: Activation,
}

impl ArchSpec {
    pub fn desk_default() -> Self {
        ArchSpec {
            data_dim: 2,
            latent_dim: 8,
            blocks: 4,
            hidden_widths: vec![64, 64],
            hidden_activation: Activation::LeakyRelu(0.2),
        }
    }

    fn stack(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(&self.hidden_widths);
        w.push(output);
        w
    }

    fn trunk_width(&self) -> usize {
        self.hidden_widths.last().copied().unwrap_or(self.data_dim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanModels {
    pub arch: ArchSpec,
    groups: [Mlp; 5],
}

/// Tape handles for every parameter of a [`GanModels`].
#[derive(Clone, Debug)]
pub struct BoundModels<'m> {
    models: &'m GanModels,
    ids: [Vec<NodeId>; 5],
}

impl GanModels {
    pub fn init(arch: ArchSpec, rng: &mut RandomSource) -> Result<GanModels> {
        if arch.hidden_widths.is_empty() {
            return Err(Error::shape("at least one hidden layer is required"));
        }
        if arch.blocks == 0 || arch.latent_dim % arch.blocks != 0 {
            return Err(Error::shape(format!(
                "k={} must divide latent dim d={}",
                arch.blocks, arch.latent_dim
            )));
        }
        let act = arch.hidden_activation;
        let encoder = Mlp::init(
            MlpSpec::new(arch.stack(arch.data_dim, arch.latent_dim), act, Activation::Identity)?,
            rng,
        );
        let generator = Mlp::init(
            MlpSpec::new(arch.stack(arch.latent_dim, arch.data_dim), act, Activation::Identity)?,
            rng,
        );
        let mut trunk_widths = vec![arch.data_dim];
        trunk_widths.extend(&arch.hidden_widths);
        let trunk = Mlp::init(MlpSpec::new(trunk_widths, act, act)?, rng);
        let tw = arch.trunk_width();
        let d_head = Mlp::init(
            MlpSpec::new(vec![tw, 1], act, Activation::Identity)?,
            rng,
        );
        // zero head: the classifier starts exactly at chance
        let f_head = Mlp::zeroed(MlpSpec::new(vec![tw, arch.blocks], act, Activation::Softmax)?);
        Ok(GanModels {
            arch,
            groups: [encoder, generator, trunk, d_head, f_head],
        })
    }

    pub fn group(&self, g: ParamGroup) -> &Mlp {
        &self.groups[g.slot()]
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut Mlp {
        &mut self.groups[g.slot()]
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn data_dim(&self) -> usize {
        self.arch.data_dim
    }

    pub fn blocks(&self) -> usize {
        self.arch.blocks
    }

    /// Binds every group; only those in `trainable` get gradients.
    pub fn bind<'m>(&'m self, tape: &mut Tape, trainable: &[ParamGroup]) -> BoundModels<'m> {
        let ids = ParamGroup::ALL.map(|g| self.group(g).bind(tape, trainable.contains(&g)));
        BoundModels { models: self, ids }
    }

    /// Binds every group as constants except `group`, which uses the given
    /// tape nodes (for example leaves owned by a gradient checker).
    pub fn bind_replacing<'m>(&'m self, tape: &mut Tape, group: ParamGroup, ids: &[NodeId]) -> BoundModels<'m> {
        let mut bound = self.bind(tape, &[]);
        bound.ids[group.slot()] = ids.to_vec();
        bound
    }

    fn eager<F>(&self, x: &Tensor, f: F) -> Result<Tensor>
    where
        F: FnOnce(&BoundModels<'_>, &mut Tape, NodeId) -> Result<NodeId>,
    {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, &[]);
        let xi = tape.constant(x.clone());
        let out = f(&bound, &mut tape, xi)?;
        Ok(tape.value(out).clone())
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.eager(x, |b, t, x| b.encode(t, x))
    }

    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        self.eager(z, |b, t, z| b.generate(t, z))
    }

    pub fn discriminate(&self, x: &Tensor) -> Result<Tensor> {
        self.eager(x, |b, t, x| b.discriminate(t, x))
    }

    pub fn classify(&self, x: &Tensor) -> Result<Tensor> {
        self.eager(x, |b, t, x| b.classify(t, x))
    }
}

impl BoundModels<'_> {
    pub fn ids(&self, g: ParamGroup) -> &[NodeId] {
        &self.ids[g.slot()]
    }

    fn run(&self, g: ParamGroup, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        self.models.group(g).forward_on(tape, self.ids(g), x)
    }

    /// `w = E(x)`, unbounded latent codes.
    pub fn encode(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        self.run(ParamGroup::Encoder, tape, x)
    }

    pub fn generate(&self, tape: &mut Tape, z: NodeId) -> Result<NodeId> {
        self.run(ParamGroup::Generator, tape, z)
    }

    pub fn features(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        self.run(ParamGroup::Trunk, tape, x)
    }

    /// Raw discriminator score, `n×1`.
    pub fn discriminate(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let h = self.features(tape, x)?;
        self.run(ParamGroup::DHead, tape, h)
    }

    /// Intervention-class probabilities, `n×k`, rows summing to one.
    pub fn classify(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let h = self.features(tape, x)?;
        self.run(ParamGroup::FHead, tape, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check_many;

    fn models(seed: u64) -> GanModels {
        GanModels::init(ArchSpec::desk_default(), &mut RandomSource::new(seed)).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = models(7);
        assert_eq!(a, models(7));
        assert_ne!(a, models(8));
        for g in ParamGroup::ALL {
            for (i, p) in a.group(g).params().iter().enumerate() {
                if i % 2 == 1 {
                    assert!(p.data().iter().all(|v| *v == 0.0), "{} bias {i}", g.name());
                }
            }
        }
    }

    #[test]
    fn rejects_indivisible_latent() {
        let mut arch = ArchSpec::desk_default();
        arch.latent_dim = 9;
        assert!(GanModels::init(arch, &mut RandomSource::new(0)).is_err());
        assert!(MlpSpec::new(vec![3], Activation::Relu, Activation::Identity).is_err());
    }

    #[test]
    fn init_variance_matches_scheme() {
        let spec = MlpSpec::new(vec![16, 32, 8], Activation::LeakyRelu(0.2), Activation::Tanh).unwrap();
        let mut rng = RandomSource::new(99);
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for _ in 0..100 {
            let m = Mlp::init(spec.clone(), &mut rng);
            for v in m.params()[0].data() {
                s0 += v * v;
                n0 += 1;
            }
            for v in m.params()[2].data() {
                s1 += v * v;
                n1 += 1;
            }
        }
        let he = s0 / n0 as f64;
        let xavier = s1 / n1 as f64;
        assert!((he / (2.0 / 16.0) - 1.0).abs() < 0.2, "{he}");
        assert!((xavier / (1.0 / 32.0) - 1.0).abs() < 0.2, "{xavier}");
    }

    #[test]
    fn zero_input_encodes_to_zero() {
        let m = models(1);
        let w = m.encode(&Tensor::zeros(&[3, 2])).unwrap();
        assert_eq!(w.dims(), &[3, 8]);
        assert!(w.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fresh_classifier_is_exactly_uniform() {
        let m = models(2);
        let x = RandomSource::new(3).gaussian(&[10, 2]);
        let p = m.classify(&x).unwrap();
        assert!(p.data().iter().all(|v| *v == 0.25));
    }

    #[test]
    fn classifier_rows_sum_to_one() {
        let mut m = models(2);
        let mut rng = RandomSource::new(4);
        let head: Vec<Tensor> = m
            .group(ParamGroup::FHead)
            .params()
            .iter()
            .map(|p| rng.gaussian(p.dims()))
            .collect();
        m.group_mut(ParamGroup::FHead).set_params(head).unwrap();
        let p = m.classify(&rng.gaussian(&[20, 2])).unwrap();
        for r in 0..20 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_maps_are_batch_equivariant() {
        let m = models(5);
        let mut rng = RandomSource::new(6);
        let x = rng.gaussian(&[6, 2]);
        let z = rng.gaussian(&[6, 8]);
        let perm = [3, 0, 5, 1, 4, 2];
        let check = |out: Tensor, permuted: Tensor| {
            assert_eq!(out.select_rows(&perm).unwrap(), permuted);
        };
        let xp = x.select_rows(&perm).unwrap();
        let zp = z.select_rows(&perm).unwrap();
        check(m.encode(&x).unwrap(), m.encode(&xp).unwrap());
        check(m.generate(&z).unwrap(), m.generate(&zp).unwrap());
        check(m.discriminate(&x).unwrap(), m.discriminate(&xp).unwrap());
        check(m.classify(&x).unwrap(), m.classify(&xp).unwrap());
    }

    #[test]
    fn classifier_adds_exactly_one_head_layer() {
        let m = models(0);
        let trunk = m.group(ParamGroup::Trunk).num_params();
        let d = m.group(ParamGroup::DHead).num_params();
        let f = m.group(ParamGroup::FHead).num_params();
        assert_eq!(d, 64 + 1);
        assert_eq!(f, 64 * 4 + 4);
        assert_eq!(trunk + f - (trunk + d), 64 * 4 + 4 - 65);
    }

    #[test]
    fn shared_trunk_moves_both_heads() {
        let m = models(10);
        let x = RandomSource::new(1).gaussian(&[4, 2]);
        let mut f_head_random = m.clone();
        let head: Vec<Tensor> = {
            let mut rng = RandomSource::new(2);
            m.group(ParamGroup::FHead).params().iter().map(|p| rng.gaussian(p.dims())).collect()
        };
        f_head_random.group_mut(ParamGroup::FHead).set_params(head).unwrap();

        let mut moved = f_head_random.clone();
        let trunk: Vec<Tensor> = moved
            .group(ParamGroup::Trunk)
            .params()
            .iter()
            .map(|p| p.unary(UnaryOp::Scale(1.1)).unwrap())
            .collect();
        moved.group_mut(ParamGroup::Trunk).set_params(trunk).unwrap();
        assert_ne!(moved.discriminate(&x).unwrap(), f_head_random.discriminate(&x).unwrap());
        assert_ne!(moved.classify(&x).unwrap(), f_head_random.classify(&x).unwrap());

        // a d-head change leaves the classifier alone and vice versa
        let mut dmoved = f_head_random.clone();
        let dh: Vec<Tensor> = dmoved
            .group(ParamGroup::DHead)
            .params()
            .iter()
            .map(|p| p.unary(UnaryOp::AddScalar(0.5)).unwrap())
            .collect();
        dmoved.group_mut(ParamGroup::DHead).set_params(dh).unwrap();
        assert_eq!(dmoved.classify(&x).unwrap(), f_head_random.classify(&x).unwrap());
        assert_ne!(dmoved.discriminate(&x).unwrap(), f_head_random.discriminate(&x).unwrap());
    }

    #[test]
    fn classifier_loss_reaches_trunk() {
        let mut m = models(11);
        let mut rng = RandomSource::new(12);
        let head: Vec<Tensor> =
            m.group(ParamGroup::FHead).params().iter().map(|p| rng.gaussian(p.dims())).collect();
        m.group_mut(ParamGroup::FHead).set_params(head).unwrap();
        let x = rng.gaussian(&[8, 2]);
        let mut tape = Tape::new();
        let b = m.bind(&mut tape, &[ParamGroup::Trunk]);
        let xi = tape.constant(x);
        let p = b.classify(&mut tape, xi).unwrap();
        let l = tape.unary(UnaryOp::Log, p).unwrap();
        let loss = tape.mean(l).unwrap();
        let g = tape.backward(loss).unwrap();
        let total: f64 = b
            .ids(ParamGroup::Trunk)
            .iter()
            .map(|id| g.get(*id).unwrap().data().iter().map(|v| v.abs()).sum::<f64>())
            .sum();
        assert!(total > 0.0);
    }

    #[test]
    fn forward_gradients_match_finite_differences() {
        let arch = ArchSpec {
            hidden_widths: vec![16, 16],
            ..ArchSpec::desk_default()
        };
        let mut m = GanModels::init(arch, &mut RandomSource::new(13)).unwrap();
        let mut rng = RandomSource::new(14);
        let head: Vec<Tensor> =
            m.group(ParamGroup::FHead).params().iter().map(|p| rng.gaussian(p.dims())).collect();
        m.group_mut(ParamGroup::FHead).set_params(head).unwrap();
        let x = rng.gaussian(&[5, 2]);
        let z = rng.gaussian(&[5, 8]);

        type Fwd = fn(&BoundModels<'_>, &mut Tape, NodeId) -> Result<NodeId>;
        let cases: [(ParamGroup, Fwd, &Tensor); 4] = [
            (ParamGroup::Encoder, |b, t, x| b.encode(t, x), &x),
            (ParamGroup::Generator, |b, t, z| b.generate(t, z), &z),
            (ParamGroup::Trunk, |b, t, x| b.discriminate(t, x), &x),
            (ParamGroup::Trunk, |b, t, x| b.classify(t, x), &x),
        ];
        for (group, fwd, input) in cases {
            let params = m.group(group).params().to_vec();
            let r = grad_check_many(
                |tape, ids| {
                    // parameters come from the checked leaves, not the model
                    let bound = m.bind_replacing(tape, group, ids);
                    let xi = tape.constant(input.clone());
                    let out = fwd(&bound, tape, xi)?;
                    tape.mean(out)
                },
                &params,
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "{}: {r:?}", group.name());
            assert!(r.checked > 0);
        }
    }
}
