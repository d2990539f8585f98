//! Two-sample tests used to falsify distributional claims.

use crate::error::{Error, Result};
use crate::tensor::{RandomSource, Tensor};

/// Number of label permutations used for energy-distance p-values.
pub const DEFAULT_PERMUTATIONS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyTest {
    pub statistic: f64,
    pub p_value: f64,
}

fn pairwise_distances(pooled: &[&[f64]]) -> Vec<f64> {
    let n = pooled.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = pooled[i]
                .iter()
                .zip(pooled[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    dist
}

/// Energy statistic for a labelling of the pooled sample (`true` = first sample).
fn energy_from_labels(dist: &[f64], labels: &[bool], total: f64) -> f64 {
    let n = labels.len();
    let (mut sxx, mut syy) = (0.0, 0.0);
    let nx = labels.iter().filter(|l| **l).count();
    let ny = n - nx;
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let li = labels[i];
        let mut acc = 0.0;
        for (j, &d) in row.iter().enumerate() {
            if labels[j] == li {
                acc += d;
            }
        }
        if li {
            sxx += acc;
        } else {
            syy += acc;
        }
    }
    let sxy = (total - sxx - syy) / 2.0;
    let (nx, ny) = (nx as f64, ny as f64);
    2.0 * sxy / (nx * ny) - sxx / (nx * nx) - syy / (ny * ny)
}

/// Energy-distance two-sample test on the rows of `x` and `y`, with a
/// permutation p-value.
pub fn energy_distance_test(
    x: &Tensor,
    y: &Tensor,
    permutations: usize,
    rng: &mut RandomSource,
) -> Result<EnergyTest> {
    if x.cols() != y.cols() {
        return Err(Error::shape(format!(
            "energy test dimension mismatch: {} vs {}",
            x.cols(),
            y.cols()
        )));
    }
    if x.rows() < 2 || y.rows() < 2 {
        return Err(Error::contract("energy test needs at least two rows per sample"));
    }
    let pooled: Vec<&[f64]> = (0..x.rows())
        .map(|i| x.row(i))
        .chain((0..y.rows()).map(|i| y.row(i)))
        .collect();
    let dist = pairwise_distances(&pooled);
    let total: f64 = dist.iter().sum();
    let mut labels: Vec<bool> = (0..pooled.len()).map(|i| i < x.rows()).collect();
    let observed = energy_from_labels(&dist, &labels, total);

    let mut at_least = 0usize;
    for _ in 0..permutations {
        for i in (1..labels.len()).rev() {
            let j = rng.below(i + 1);
            labels.swap(i, j);
        }
        if energy_from_labels(&dist, &labels, total) >= observed {
            at_least += 1;
        }
    }
    Ok(EnergyTest {
        statistic: observed,
        p_value: (1 + at_least) as f64 / (1 + permutations) as f64,
    })
}

/// Two-sample Kolmogorov–Smirnov distance `sup_t |F_a(t) - F_b(t)|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_identical_samples_is_zero() {
        let a = [0.3, -1.0, 2.0, 2.0];
        assert_eq!(ks_distance(&a, &a), 0.0);
    }

    #[test]
    fn ks_disjoint_samples_is_one() {
        assert_eq!(ks_distance(&[0.0, 1.0], &[5.0, 6.0, 7.0]), 1.0);
    }

    #[test]
    fn ks_hand_example() {
        // F_a jumps at 1,2 ; F_b at 1.5 ; sup at t=1 -> |0.5 - 0| and t in [1.5,2): |0.5-1|
        assert!((ks_distance(&[1.0, 2.0], &[1.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn energy_test_accepts_same_distribution_and_rejects_shift() {
        let mut rng = RandomSource::new(4);
        let x = rng.gaussian(&[200, 3]);
        let y = rng.gaussian(&[200, 3]);
        let same = energy_distance_test(&x, &y, 200, &mut rng).unwrap();
        assert!(same.p_value > 0.01, "{same:?}");

        let shifted = y.unary(crate::tensor::UnaryOp::AddScalar(1.0)).unwrap();
        let diff = energy_distance_test(&x, &shifted, 200, &mut rng).unwrap();
        assert!(diff.p_value < 0.01, "{diff:?}");
        assert!(diff.statistic > same.statistic);
    }

    #[test]
    fn energy_statistic_is_zero_for_identical_samples() {
        let mut rng = RandomSource::new(8);
        let x = rng.gaussian(&[50, 2]);
        let t = energy_distance_test(&x, &x, 10, &mut rng).unwrap();
        assert!(t.statistic.abs() < 1e-12);
    }
}
