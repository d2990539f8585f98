//! Entropy and weighted multi-distribution Jensen–Shannon divergence.
//!
//! `JS_π(p_1..p_n) = H(Σ π_i p_i) − Σ π_i H(p_i)`, in nats. Three routes are
//! provided: exact over a finite support, exact for mixtures of axis-aligned
//! uniform rectangles, and a stratified Monte-Carlo estimator that only needs
//! samplers and exact densities. The Bayes-optimal intervention classifier
//! `f*_i(x) = p_i(x) / Σ_j p_j(x)` lives here too, since it is the oracle the
//! trained classifier is compared against.

use crate::error::{Error, Result};
use crate::tensor::RandomSource;

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::contract("empty distribution"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain("probabilities must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(DiscreteDist { probs })
    }

    /// Normalises nonnegative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::domain("weights must have positive total"));
        }
        let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        // push the rounding residue onto the largest entry
        let residue = 1.0 - probs.iter().sum::<f64>();
        if let Some(m) = probs
            .iter_mut()
            .max_by(|a, b| a.total_cmp(b))
        {
            *m += residue;
        }
        DiscreteDist::new(probs)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        DiscreteDist::from_weights(&vec![1.0; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        DiscreteDist::new(weights.clone())
            .map(|_| WeightVector { weights })
            .map_err(|e| Error::domain(format!("invalid weight vector: {e}")))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::contract("uniform weights over zero components"));
        }
        Ok(WeightVector {
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Entropy of the weights themselves; an upper bound on the divergence.
    pub fn entropy(&self) -> f64 {
        entropy_of(&self.weights)
    }
}

#[inline]
fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

fn entropy_of(probs: &[f64]) -> f64 {
    -probs.iter().map(|&p| xlogx(p)).sum::<f64>()
}

/// Shannon entropy in nats, with `0·log 0 = 0`.
pub fn entropy(p: &DiscreteDist) -> f64 {
    entropy_of(&p.probs)
}

fn check_weights(n: usize, w: &WeightVector) -> Result<()> {
    if n != w.len() {
        return Err(Error::shape(format!(
            "{n} components but {} weights",
            w.len()
        )));
    }
    if n == 0 {
        return Err(Error::contract("no components"));
    }
    Ok(())
}

pub fn multi_js_discrete(ps: &[DiscreteDist], w: &WeightVector) -> Result<f64> {
    check_weights(ps.len(), w)?;
    let support = ps[0].support_size();
    if ps.iter().any(|p| p.support_size() != support) {
        return Err(Error::shape("distributions have different support sizes"));
    }
    let mut mixture = vec![0.0; support];
    for (p, &pi) in ps.iter().zip(w.weights()) {
        for (m, &v) in mixture.iter_mut().zip(p.probs()) {
            *m += pi * v;
        }
    }
    let mean_entropy: f64 = ps
        .iter()
        .zip(w.weights())
        .map(|(p, &pi)| pi * entropy(p))
        .sum();
    Ok(entropy_of(&mixture) - mean_entropy)
}

/// Uniform distribution on an axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RectUniform {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl RectUniform {
    pub fn new(lower: [f64; 2], upper: [f64; 2]) -> Result<Self> {
        if !(upper[0] > lower[0] && upper[1] > lower[1]) {
            return Err(Error::domain(format!(
                "rectangle {lower:?}..{upper:?} has no area"
            )));
        }
        Ok(RectUniform { lower, upper })
    }

    pub fn area(&self) -> f64 {
        (self.upper[0] - self.lower[0]) * (self.upper[1] - self.lower[1])
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p[0] >= self.lower[0] && p[0] <= self.upper[0] && p[1] >= self.lower[1] && p[1] <= self.upper[1]
    }

    /// Differential entropy `log(area)`.
    pub fn entropy(&self) -> f64 {
        self.area().ln()
    }
}

/// Exact JS of a weighted mixture of rectangle uniforms.
///
/// All x- and y-edges cut the plane into cells on which every component
/// density, and hence the mixture density, is constant.
pub fn multi_js_rect_uniforms(rects: &[RectUniform], w: &WeightVector) -> Result<f64> {
    check_weights(rects.len(), w)?;
    let breakpoints = |axis: usize| {
        let mut v: Vec<f64> = rects
            .iter()
            .flat_map(|r| [r.lower[axis], r.upper[axis]])
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let xs = breakpoints(0);
    let ys = breakpoints(1);
    let densities: Vec<f64> = rects.iter().map(|r| 1.0 / r.area()).collect();

    let mut mixture_entropy = 0.0;
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            let mid = [(xw[0] + xw[1]) / 2.0, (yw[0] + yw[1]) / 2.0];
            let m: f64 = rects
                .iter()
                .zip(&densities)
                .zip(w.weights())
                .filter(|((r, _), _)| r.contains(&mid))
                .map(|((_, d), pi)| pi * d)
                .sum();
            if m > 0.0 {
                mixture_entropy -= m * m.ln() * (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    let mean_entropy: f64 = rects
        .iter()
        .zip(w.weights())
        .map(|(r, pi)| pi * r.entropy())
        .sum();
    Ok(mixture_entropy - mean_entropy)
}

/// A distribution that can be both sampled and evaluated exactly.
pub trait Component {
    fn sample(&self, rng: &mut RandomSource) -> Vec<f64>;
    fn density(&self, x: &[f64]) -> f64;
}

impl Component for RectUniform {
    fn sample(&self, rng: &mut RandomSource) -> Vec<f64> {
        vec![
            rng.uniform_range(self.lower[0], self.upper[0]),
            rng.uniform_range(self.lower[1], self.upper[1]),
        ]
    }

    fn density(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            1.0 / self.area()
        } else {
            0.0
        }
    }
}

/// A finite distribution on labelled points of a shared support.
///
/// Samples are the one-element vector `[index]`; density is the mass there.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteComponent {
    pub dist: DiscreteDist,
}

impl Component for FiniteComponent {
    fn sample(&self, rng: &mut RandomSource) -> Vec<f64> {
        let u = rng.uniform();
        let mut acc = 0.0;
        let probs = self.dist.probs();
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return vec![i as f64];
            }
        }
        // u landed in the rounding gap at the top; take the last positive mass
        let last = probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        vec![last as f64]
    }

    fn density(&self, x: &[f64]) -> f64 {
        let i = x[0] as usize;
        self.dist.probs().get(i).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Stratified mean `Σ π_i mean(values_i)` with its delete-one jackknife
/// standard error.
fn stratified_jackknife(strata: &[(f64, Vec<f64>)]) -> McEstimate {
    let mut estimate = 0.0;
    let mut variance = 0.0;
    for (pi, values) in strata {
        let n = values.len();
        let total: f64 = values.iter().sum();
        let mean = total / n as f64;
        estimate += pi * mean;
        if n > 1 {
            // leave-one-out means and the jackknife spread around their mean
            let loo: Vec<f64> = values.iter().map(|v| (total - v) / (n - 1) as f64).collect();
            let loo_mean = loo.iter().sum::<f64>() / n as f64;
            let jack: f64 = loo.iter().map(|m| (m - loo_mean) * (m - loo_mean)).sum::<f64>()
                * (n - 1) as f64
                / n as f64;
            variance += pi * pi * jack;
        }
    }
    McEstimate {
        estimate,
        std_error: variance.sqrt(),
    }
}

/// Draws `n / k` samples from each positively weighted component and
/// averages `log p_i(x) − log m(x)` with the exact mixture density `m`.
pub fn multi_js_monte_carlo(
    components: &[&dyn Component],
    w: &WeightVector,
    n: usize,
    rng: &mut RandomSource,
) -> Result<McEstimate> {
    check_weights(components.len(), w)?;
    if n < 1000 {
        return Err(Error::contract(format!("Monte-Carlo JS needs n >= 1000, got {n}")));
    }
    let per = n / components.len();
    let mut strata = Vec::with_capacity(components.len());
    for (i, (comp, &pi)) in components.iter().zip(w.weights()).enumerate() {
        if pi == 0.0 {
            continue;
        }
        let mut values = Vec::with_capacity(per);
        for _ in 0..per {
            let x = comp.sample(rng);
            let own = comp.density(&x);
            if !(own > 0.0) {
                return Err(Error::domain(format!(
                    "component {i} has zero density at its own sample {x:?}"
                )));
            }
            let mix: f64 = components
                .iter()
                .zip(w.weights())
                .map(|(c, &pj)| if pj > 0.0 { pj * c.density(&x) } else { 0.0 })
                .sum();
            values.push(own.ln() - mix.ln());
        }
        strata.push((pi, values));
    }
    Ok(stratified_jackknife(&strata))
}

/// Bayes posterior over components from their density values at one point.
pub fn posterior_from_densities(densities: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = densities.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain("every density is zero at this point"));
    }
    Ok(densities.iter().map(|d| d / total).collect())
}

/// The optimal intervention classifier `f*_i(x) = p_i(x) / Σ_j p_j(x)`.
pub fn optimal_classifier_posterior(components: &[&dyn Component], x: &[f64]) -> Result<Vec<f64>> {
    let d: Vec<f64> = components.iter().map(|c| c.density(x)).collect();
    posterior_from_densities(&d)
}

/// Monte-Carlo value of the classification loss attained by `f*` under
/// uniform label weights; equals `log k − JS(p_1..p_k)` in expectation.
pub fn cross_entropy_at_optimum(
    components: &[&dyn Component],
    n: usize,
    rng: &mut RandomSource,
) -> Result<McEstimate> {
    let k = components.len();
    if k == 0 {
        return Err(Error::contract("no components"));
    }
    if n < 1000 {
        return Err(Error::contract(format!("need n >= 1000, got {n}")));
    }
    let per = n / k;
    let mut strata = Vec::with_capacity(k);
    for (i, comp) in components.iter().enumerate() {
        let mut values = Vec::with_capacity(per);
        for _ in 0..per {
            let x = comp.sample(rng);
            let dens: Vec<f64> = components.iter().map(|c| c.density(&x)).collect();
            if !(dens[i] > 0.0) {
                return Err(Error::domain(format!(
                    "component {i} has zero density at its own sample {x:?}"
                )));
            }
            let total: f64 = dens.iter().sum();
            values.push(-(dens[i] / total).ln());
        }
        strata.push((1.0 / k as f64, values));
    }
    Ok(stratified_jackknife(&strata))
}

/// The four squares of the square-fitting example at offset `a`:
/// `α` (real data), `β` (generated), and the intervened `γ1`, `γ2`.
pub fn square_fitting_rects(a: f64) -> Result<[RectUniform; 4]> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::domain(format!("offset a={a} outside [0, 1]")));
    }
    Ok([
        RectUniform::new([-0.5, -0.5], [0.5, 0.5])?,
        RectUniform::new([a - 0.5, 0.5], [a + 0.5, 1.5])?,
        RectUniform::new([-0.5, 0.5], [0.5, 1.5])?,
        RectUniform::new([a - 0.5, -0.5], [a + 0.5, 0.5])?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn dd(p: &[f64]) -> DiscreteDist {
        DiscreteDist::new(p.to_vec()).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&dd(&[1.0, 0.0])), 0.0);
        assert!((entropy(&dd(&[0.5, 0.5])) - LN_2).abs() < 1e-15);
        assert!((entropy(&dd(&[0.25; 4])) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn discrete_js_examples() {
        let p = dd(&[0.2, 0.3, 0.5]);
        let w = WeightVector::new(vec![0.1, 0.6, 0.3]).unwrap();
        let js = multi_js_discrete(&[p.clone(), p.clone(), p], &w).unwrap();
        assert!(js.abs() < 1e-15);

        let a = dd(&[1.0, 0.0]);
        let b = dd(&[0.0, 1.0]);
        let half = WeightVector::uniform(2).unwrap();
        assert!((multi_js_discrete(&[a.clone(), b.clone()], &half).unwrap() - LN_2).abs() < 1e-15);

        let c = dd(&[0.5, 0.5]);
        let third = WeightVector::uniform(3).unwrap();
        let js = multi_js_discrete(&[a, b, c], &third).unwrap();
        assert!((js - 2.0 / 3.0 * LN_2).abs() < 1e-12, "{js}");
    }

    #[test]
    fn discrete_js_rejects_mismatched_support() {
        let w = WeightVector::uniform(2).unwrap();
        let r = multi_js_discrete(&[dd(&[1.0]), dd(&[0.5, 0.5])], &w);
        assert!(matches!(r, Err(Error::Shape(_))));
        let w3 = WeightVector::uniform(3).unwrap();
        assert!(multi_js_discrete(&[dd(&[1.0]), dd(&[1.0])], &w3).is_err());
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![-0.5, 1.5]).is_err());
        assert!((WeightVector::uniform(4).unwrap().entropy() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rect_js_examples() {
        let unit = RectUniform::new([0.0, 0.0], [1.0, 1.0]).unwrap();
        let far = RectUniform::new([3.0, 0.0], [4.0, 1.0]).unwrap();
        let half = WeightVector::uniform(2).unwrap();
        assert!(multi_js_rect_uniforms(&[unit, unit], &half).unwrap().abs() < 1e-15);
        assert!((multi_js_rect_uniforms(&[unit, far], &half).unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn square_fitting_endpoints() {
        let w = WeightVector::uniform(4).unwrap();
        let at0 = multi_js_rect_uniforms(&square_fitting_rects(0.0).unwrap(), &w).unwrap();
        let at1 = multi_js_rect_uniforms(&square_fitting_rects(1.0).unwrap(), &w).unwrap();
        assert!((at0 - LN_2).abs() < 1e-12, "{at0}");
        assert!((at1 - 2.0 * LN_2).abs() < 1e-12, "{at1}");
        assert!(square_fitting_rects(1.5).is_err());
    }

    #[test]
    fn degenerate_rectangle_rejected() {
        assert!(RectUniform::new([0.0, 0.0], [0.0, 1.0]).is_err());
    }

    #[test]
    fn posterior_examples() {
        assert_eq!(posterior_from_densities(&[0.2, 0.6, 0.2]).unwrap(), vec![0.2, 0.6, 0.2]);
        assert_eq!(posterior_from_densities(&[3.0; 4]).unwrap(), vec![0.25; 4]);
        assert_eq!(posterior_from_densities(&[0.0, 2.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(matches!(posterior_from_densities(&[0.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn monte_carlo_identical_components_near_zero() {
        let unit = RectUniform::new([0.0, 0.0], [1.0, 1.0]).unwrap();
        let w = WeightVector::uniform(3).unwrap();
        let est = multi_js_monte_carlo(&[&unit, &unit, &unit], &w, 3000, &mut RandomSource::new(1))
            .unwrap();
        assert!(est.estimate.abs() <= 3.0 * est.std_error + 1e-12, "{est:?}");
    }

    #[test]
    fn monte_carlo_zero_own_density_is_domain_error() {
        struct Broken;
        impl Component for Broken {
            fn sample(&self, _: &mut RandomSource) -> Vec<f64> {
                vec![0.0, 0.0]
            }
            fn density(&self, _: &[f64]) -> f64 {
                0.0
            }
        }
        let w = WeightVector::uniform(1).unwrap();
        let r = multi_js_monte_carlo(&[&Broken], &w, 1000, &mut RandomSource::new(1));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn cross_entropy_at_optimum_examples() {
        let unit = RectUniform::new([0.0, 0.0], [1.0, 1.0]).unwrap();
        let far = RectUniform::new([3.0, 0.0], [4.0, 1.0]).unwrap();
        let mut rng = RandomSource::new(12);
        let same = cross_entropy_at_optimum(&[&unit, &unit, &unit], 3000, &mut rng).unwrap();
        assert!((same.estimate - 3f64.ln()).abs() < 1e-12);
        let disjoint = cross_entropy_at_optimum(&[&unit, &far], 2000, &mut rng).unwrap();
        assert_eq!(disjoint.estimate, 0.0);
    }

    #[test]
    fn finite_component_samples_follow_mass() {
        let comp = FiniteComponent {
            dist: dd(&[0.1, 0.0, 0.9]),
        };
        let mut rng = RandomSource::new(3);
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            counts[comp.sample(&mut rng)[0] as usize] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / 20_000.0 - 0.1).abs() < 0.01);
    }
}
