//! Gaussian-invariant latent interventions.
//!
//! Block substitution slices a `d`-dimensional latent into `k` contiguous
//! blocks `[i·d/k, (i+1)·d/k)` and replaces block `i` with fresh standard
//! normal noise. If `Z ~ N(0, I_d)` then the result is again `N(0, I_d)`, and
//! the family over all `i` pins the standard normal down as the only
//! distribution every member leaves unchanged.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::stats::{energy_distance_test, DEFAULT_PERMUTATIONS};
use crate::tensor::{NodeId, RandomSource, Tape, Tensor};

/// Significance level for the group invariance check.
pub const INVARIANCE_ALPHA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterventionKind {
    BlockSubstitution,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InterventionSpec {
    pub kind: InterventionKind,
    pub block_index: usize,
    pub blocks: usize,
    pub latent_dim: usize,
}

impl InterventionSpec {
    pub fn block_substitution(block_index: usize, blocks: usize, latent_dim: usize) -> Result<Self> {
        if blocks == 0 || latent_dim == 0 || latent_dim % blocks != 0 {
            return Err(Error::contract(format!(
                "block count k={blocks} must divide latent dim d={latent_dim}"
            )));
        }
        if block_index >= blocks {
            return Err(Error::contract(format!(
                "block index {block_index} out of range for k={blocks}"
            )));
        }
        Ok(InterventionSpec {
            kind: InterventionKind::BlockSubstitution,
            block_index,
            blocks,
            latent_dim,
        })
    }

    pub fn block_width(&self) -> usize {
        self.latent_dim / self.blocks
    }

    /// Coordinates replaced by this intervention.
    pub fn block_range(&self) -> Range<usize> {
        let w = self.block_width();
        self.block_index * w..(self.block_index + 1) * w
    }

    /// Applies the intervention to every row of `z`; `z` itself is untouched.
    pub fn apply(&self, z: &Tensor, rng: &mut RandomSource) -> Result<Tensor> {
        let batch = BatchIntervention::fixed(self, z.rows(), rng)?;
        batch.apply(z)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterventionGroup {
    specs: Vec<InterventionSpec>,
}

impl InterventionGroup {
    /// The complete block-substitution group `{O_0, …, O_{k-1}}`.
    pub fn block_substitution(blocks: usize, latent_dim: usize) -> Result<Self> {
        let specs = (0..blocks)
            .map(|i| InterventionSpec::block_substitution(i, blocks, latent_dim))
            .collect::<Result<Vec<_>>>()?;
        if specs.is_empty() {
            return Err(Error::contract("intervention group needs k >= 1"));
        }
        Ok(InterventionGroup { specs })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.specs[0].latent_dim
    }

    pub fn spec(&self, i: usize) -> &InterventionSpec {
        &self.specs[i]
    }

    pub fn specs(&self) -> &[InterventionSpec] {
        &self.specs
    }

    /// Draws `i ~ U({0..k-1})` and its one-hot label.
    pub fn sample_label(&self, rng: &mut RandomSource) -> (usize, Tensor) {
        let i = rng.below(self.len());
        let label = one_hot(&[i], self.len())
            .reshape(&[self.len()])
            .expect("single row");
        (i, label)
    }
}

/// One-hot rows (`n×k`) for the given class indices.
pub fn one_hot(indices: &[usize], k: usize) -> Tensor {
    let mut data = vec![0.0; indices.len() * k];
    for (row, &i) in indices.iter().enumerate() {
        data[row * k + i] = 1.0;
    }
    Tensor::from_parts_unchecked(vec![indices.len(), k], data)
}

/// A per-row draw of interventions for a batch, stored as a keep-mask and a
/// fill so it can be replayed on a tape or applied eagerly with identical
/// arithmetic: `out = z ⊙ keep + fill`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchIntervention {
    pub indices: Vec<usize>,
    pub blocks: usize,
    keep: Tensor,
    fill: Tensor,
}

impl BatchIntervention {
    /// Samples `i_j ~ U([k])` independently per row, then the substitute noise.
    pub fn sample(group: &InterventionGroup, rows: usize, rng: &mut RandomSource) -> Self {
        let indices: Vec<usize> = (0..rows).map(|_| rng.below(group.len())).collect();
        Self::build(group.spec(0), &indices, rng)
    }

    /// Every row receives the same intervention.
    pub fn fixed(spec: &InterventionSpec, rows: usize, rng: &mut RandomSource) -> Result<Self> {
        Ok(Self::build(spec, &vec![spec.block_index; rows], rng))
    }

    fn build(spec: &InterventionSpec, indices: &[usize], rng: &mut RandomSource) -> Self {
        let d = spec.latent_dim;
        let w = spec.block_width();
        let noise = rng.gaussian(&[indices.len(), w]);
        let mut keep = vec![1.0; indices.len() * d];
        let mut fill = vec![0.0; indices.len() * d];
        for (row, &i) in indices.iter().enumerate() {
            for c in 0..w {
                keep[row * d + i * w + c] = 0.0;
                fill[row * d + i * w + c] = noise.get(row, c);
            }
        }
        BatchIntervention {
            indices: indices.to_vec(),
            blocks: spec.blocks,
            keep: Tensor::from_parts_unchecked(vec![indices.len(), d], keep),
            fill: Tensor::from_parts_unchecked(vec![indices.len(), d], fill),
        }
    }

    pub fn labels(&self) -> Tensor {
        one_hot(&self.indices, self.blocks)
    }

    pub fn apply(&self, z: &Tensor) -> Result<Tensor> {
        if z.dims() != self.keep.dims() {
            return Err(Error::shape(format!(
                "intervention built for {:?}, applied to {:?}",
                self.keep.dims(),
                z.dims()
            )));
        }
        z.mul(&self.keep)?.add(&self.fill)
    }

    /// Records the intervention on a tape; gradients flow to the kept blocks.
    pub fn apply_on_tape(&self, tape: &mut Tape, z: NodeId) -> Result<NodeId> {
        if tape.value(z).dims() != self.keep.dims() {
            return Err(Error::shape(format!(
                "intervention built for {:?}, applied to {:?}",
                self.keep.dims(),
                tape.value(z).dims()
            )));
        }
        let keep = tape.constant(self.keep.clone());
        let fill = tape.constant(self.fill.clone());
        let kept = tape.mul(z, keep)?;
        tape.add(kept, fill)
    }
}

/// Per-coordinate moments of an intervened sample.
#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceStatistic {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// For each coordinate, the largest |covariance| with any other coordinate.
    pub max_abs_covariance: Vec<f64>,
}

impl InvarianceStatistic {
    pub fn within(&self, mean_tol: f64, var_tol: f64, cov_tol: f64) -> bool {
        self.means.iter().all(|m| m.abs() < mean_tol)
            && self.variances.iter().all(|v| (v - 1.0).abs() < var_tol)
            && self.max_abs_covariance.iter().all(|c| *c < cov_tol)
    }
}

pub fn sample_moments(x: &Tensor) -> InvarianceStatistic {
    let (n, d) = (x.rows(), x.cols());
    let mut means = vec![0.0; d];
    for r in 0..n {
        for (m, v) in means.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for r in 0..n {
        let row = x.row(r);
        for a in 0..d {
            let da = row[a] - means[a];
            for b in a..d {
                cov[a * d + b] += da * (row[b] - means[b]);
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= denom;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    let variances = (0..d).map(|a| cov[a * d + a]).collect();
    let max_abs_covariance = (0..d)
        .map(|a| {
            (0..d)
                .filter(|&b| b != a)
                .map(|b| cov[a * d + b].abs())
                .fold(0.0, f64::max)
        })
        .collect();
    InvarianceStatistic {
        means,
        variances,
        max_abs_covariance,
    }
}

/// Moments of `O(Z)` for `Z ~ N(0, I_d)`.
pub fn invariance_statistic(
    spec: &InterventionSpec,
    n: usize,
    rng: &mut RandomSource,
) -> Result<InvarianceStatistic> {
    invariance_statistic_with(spec, &|rng, n| rng.gaussian(&[n, spec.latent_dim]), n, rng)
}

/// Moments of `O(X)` for `X` drawn from an arbitrary latent sampler.
pub fn invariance_statistic_with(
    spec: &InterventionSpec,
    sampler: &dyn Fn(&mut RandomSource, usize) -> Tensor,
    n: usize,
    rng: &mut RandomSource,
) -> Result<InvarianceStatistic> {
    if n < 1000 {
        return Err(Error::contract(format!(
            "invariance statistic needs n >= 1000, got {n}"
        )));
    }
    let z = sampler(rng, n);
    let out = spec.apply(&z, rng)?;
    Ok(sample_moments(&out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterventionVerdict {
    pub block_index: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub invariant: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupInvarianceReport {
    pub passed: bool,
    pub verdicts: Vec<InterventionVerdict>,
}

/// Tests, for every `O_i`, whether `O_i(X)` and `X` look identically
/// distributed (energy distance, permutation p-value at 0.01).
pub fn group_invariance_check(
    group: &InterventionGroup,
    sampler: &dyn Fn(&mut RandomSource, usize) -> Tensor,
    n: usize,
    rng: &mut RandomSource,
) -> Result<GroupInvarianceReport> {
    let mut verdicts = Vec::with_capacity(group.len());
    for spec in group.specs() {
        let x = sampler(rng, n);
        if x.cols() != spec.latent_dim {
            return Err(Error::shape(format!(
                "sampler emits {} columns, group expects {}",
                x.cols(),
                spec.latent_dim
            )));
        }
        let reference = sampler(rng, n);
        let intervened = spec.apply(&x, rng)?;
        let test = energy_distance_test(&intervened, &reference, DEFAULT_PERMUTATIONS, rng)?;
        verdicts.push(InterventionVerdict {
            block_index: spec.block_index,
            statistic: test.statistic,
            p_value: test.p_value,
            invariant: test.p_value >= INVARIANCE_ALPHA,
        });
    }
    Ok(GroupInvarianceReport {
        passed: verdicts.iter().all(|v| v.invariant),
        verdicts,
    })
}
