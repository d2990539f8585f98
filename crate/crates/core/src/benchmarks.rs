//! Synthetic 2-D datasets, the mode-coverage metric, and the evaluation
//! harnesses for the square-fitting example and the round-trip CDF check.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::divergence::{
    multi_js_monte_carlo, multi_js_rect_uniforms, square_fitting_rects, Component, McEstimate, WeightVector,
};
use crate::error::{Error, Result};
use crate::interventions::{BatchIntervention, InterventionGroup};
use crate::networks::GanModels;
use crate::stats::ks_distance;
use crate::tensor::{RandomSource, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DatasetKind {
    Ring { modes: usize, radius: f64, sigma: f64 },
    Grid { rows: usize, cols: usize, spacing: f64, sigma: f64 },
    SquarePair { a: f64 },
}

impl DatasetKind {
    pub fn default_grid() -> Self {
        DatasetKind::Grid {
            rows: 5,
            cols: 5,
            spacing: 2.0,
            sigma: 0.05,
        }
    }

    pub fn default_ring() -> Self {
        DatasetKind::Ring {
            modes: 8,
            radius: 2.0,
            sigma: 0.02,
        }
    }
}

/// Written as `grid(5,5,2,0.05)`, `ring(8,2,0.02)` or `square_pair(0.5)`;
/// bare `grid` and `ring` take the defaults.
impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DatasetKind::Ring { modes, radius, sigma } => write!(f, "ring({modes},{radius},{sigma})"),
            DatasetKind::Grid {
                rows,
                cols,
                spacing,
                sigma,
            } => write!(f, "grid({rows},{cols},{spacing},{sigma})"),
            DatasetKind::SquarePair { a } => write!(f, "square_pair({a})"),
        }
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        match s {
            "grid" => return Ok(DatasetKind::default_grid()),
            "ring" => return Ok(DatasetKind::default_ring()),
            _ => {}
        }
        let (name, rest) = s
            .split_once('(')
            .ok_or_else(|| format!("unknown dataset `{s}`"))?;
        let inner = rest
            .strip_suffix(')')
            .ok_or_else(|| format!("missing `)` in `{s}`"))?;
        let args: Vec<f64> = inner
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|e| format!("bad number `{a}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        let count = |v: f64| -> std::result::Result<usize, String> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(format!("expected a positive integer, got {v}"))
            }
        };
        match (name.trim(), args.as_slice()) {
            ("ring", [m, r, s]) => Ok(DatasetKind::Ring {
                modes: count(*m)?,
                radius: *r,
                sigma: *s,
            }),
            ("grid", [r, c, sp, s]) => Ok(DatasetKind::Grid {
                rows: count(*r)?,
                cols: count(*c)?,
                spacing: *sp,
                sigma: *s,
            }),
            ("square_pair", [a]) => Ok(DatasetKind::SquarePair { a: *a }),
            (n, a) => Err(format!("dataset `{n}` does not take {} arguments", a.len())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub kind: DatasetKind,
    pub mode_centers: Vec<[f64; 2]>,
    pub component_sigma: f64,
}

impl SyntheticDataset {
    pub fn new(kind: DatasetKind) -> Result<Self> {
        let (centers, sigma) = match kind {
            DatasetKind::Ring { modes, radius, sigma } => {
                if !(radius > 0.0) {
                    return Err(Error::domain("ring radius must be positive"));
                }
                let c = (0..modes)
                    .map(|m| {
                        let t = 2.0 * std::f64::consts::PI * m as f64 / modes as f64;
                        [radius * t.cos(), radius * t.sin()]
                    })
                    .collect();
                (c, sigma)
            }
            DatasetKind::Grid {
                rows,
                cols,
                spacing,
                sigma,
            } => {
                if !(spacing > 0.0) {
                    return Err(Error::domain("grid spacing must be positive"));
                }
                let (r0, c0) = ((rows - 1) as f64 / 2.0, (cols - 1) as f64 / 2.0);
                let mut c = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for col in 0..cols {
                        c.push([(col as f64 - c0) * spacing, (r as f64 - r0) * spacing]);
                    }
                }
                (c, sigma)
            }
            DatasetKind::SquarePair { a } => {
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::domain(format!("square offset a={a} outside [0, 1]")));
                }
                // one "mode": the real square, whose inscribed disk is 3σ
                (vec![[0.0, 0.0]], 0.5 / 3.0)
            }
        };
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("component sigma must be positive, got {sigma}")));
        }
        if centers.is_empty() {
            return Err(Error::domain("dataset has no modes"));
        }
        Ok(SyntheticDataset {
            kind,
            mode_centers: centers,
            component_sigma: sigma,
        })
    }

    pub fn num_modes(&self) -> usize {
        self.mode_centers.len()
    }
}

/// `n` rows drawn from the dataset: a uniform mode then isotropic Gaussian
/// noise, or uniform on the real square for the square pair.
pub fn sample_dataset(ds: &SyntheticDataset, n: usize, rng: &mut RandomSource) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::contract("sample_dataset needs n >= 1"));
    }
    let mut data = Vec::with_capacity(2 * n);
    match ds.kind {
        DatasetKind::SquarePair { .. } => {
            for _ in 0..2 * n {
                data.push(rng.uniform() - 0.5);
            }
        }
        _ => {
            let m = ds.num_modes();
            let modes: Vec<usize> = (0..n).map(|_| rng.below(m)).collect();
            let mut noise = vec![0.0; 2 * n];
            rng.fill_normal(&mut noise);
            for (j, &mode) in modes.iter().enumerate() {
                let c = ds.mode_centers[mode];
                data.push(c[0] + ds.component_sigma * noise[2 * j]);
                data.push(c[1] + ds.component_sigma * noise[2 * j + 1]);
            }
        }
    }
    Tensor::matrix(n, 2, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeCoverageReport {
    pub modes_covered: usize,
    pub counts: Vec<usize>,
    pub kl_to_uniform: f64,
    pub unassigned_fraction: f64,
}

/// Assignment threshold used by the default metric, in units of sigma.
pub const ASSIGN_RADIUS_SIGMAS: f64 = 3.0;

pub fn default_min_count(n: usize, modes: usize) -> usize {
    (n / (100 * modes.max(1))).max(20)
}

/// Nearest-center assignment within `3·sigma`; a mode is covered with at
/// least `min_count` hits. With nothing assigned the KL is reported as `log M`.
pub fn mode_coverage(
    samples: &Tensor,
    centers: &[[f64; 2]],
    sigma: f64,
    min_count: usize,
) -> Result<ModeCoverageReport> {
    if samples.rank() != 2 || samples.cols() != 2 {
        return Err(Error::shape(format!("mode coverage needs n×2 samples, got {:?}", samples.dims())));
    }
    if samples.rows() == 0 {
        return Err(Error::contract("mode coverage on an empty sample"));
    }
    if centers.is_empty() || min_count == 0 || !(sigma > 0.0) {
        return Err(Error::contract("mode coverage needs centers, sigma > 0 and min_count >= 1"));
    }
    let r2 = (ASSIGN_RADIUS_SIGMAS * sigma).powi(2);
    let mut counts = vec![0usize; centers.len()];
    let mut unassigned = 0usize;
    for i in 0..samples.rows() {
        let p = samples.row(i);
        let mut best = (f64::INFINITY, 0usize);
        for (m, c) in centers.iter().enumerate() {
            let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            if d < best.0 {
                best = (d, m);
            }
        }
        if best.0 <= r2 {
            counts[best.1] += 1;
        } else {
            unassigned += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let m = centers.len() as f64;
    let kl_to_uniform = if total == 0 {
        m.ln()
    } else {
        // summed in sorted order so the value does not depend on center order
        let mut sorted = counts.clone();
        sorted.sort_unstable();
        sorted
            .iter()
            .filter(|c| **c > 0)
            .map(|&c| {
                let q = c as f64 / total as f64;
                q * (q * m).ln()
            })
            .sum::<f64>()
            .max(0.0)
    };
    Ok(ModeCoverageReport {
        modes_covered: counts.iter().filter(|c| **c >= min_count).count(),
        counts,
        kl_to_uniform,
        unassigned_fraction: unassigned as f64 / samples.rows() as f64,
    })
}

/// Generates `n` samples from the prior through G and scores them.
pub fn evaluate_modes(
    models: &GanModels,
    ds: &SyntheticDataset,
    n: usize,
    rng: &mut RandomSource,
) -> Result<ModeCoverageReport> {
    let z = rng.gaussian(&[n, models.latent_dim()]);
    let x = models.generate(&z)?;
    mode_coverage(&x, &ds.mode_centers, ds.component_sigma, default_min_count(n, ds.num_modes()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquareFitRow {
    pub a: f64,
    pub js_two: f64,
    pub l_iv_exact: f64,
    pub l_iv_mc: f64,
    pub mc_stderr: f64,
}

pub const SQUARE_FIT_COLUMNS: [&str; 5] = ["a", "js_two", "l_iv_exact", "l_iv_mc", "mc_stderr"];

/// `0.0, 0.1, …, 1.0`
pub fn default_a_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn square_fitting_table(a_values: &[f64], n_mc: usize, rng: &mut RandomSource) -> Result<Vec<SquareFitRow>> {
    let two = WeightVector::uniform(2)?;
    let four = WeightVector::uniform(4)?;
    a_values
        .iter()
        .map(|&a| {
            let rects = square_fitting_rects(a)?;
            let js_two = multi_js_rect_uniforms(&rects[..2], &two)?;
            let l_iv_exact = multi_js_rect_uniforms(&rects, &four)?;
            let comps: Vec<&dyn Component> = rects.iter().map(|r| r as &dyn Component).collect();
            let McEstimate { estimate, std_error } = multi_js_monte_carlo(&comps, &four, n_mc, rng)?;
            Ok(SquareFitRow {
                a,
                js_two,
                l_iv_exact,
                l_iv_mc: estimate,
                mc_stderr: std_error,
            })
        })
        .collect()
}

pub fn write_square_fit_csv(rows: &[SquareFitRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SQUARE_FIT_COLUMNS)?;
    for r in rows {
        w.write_record(
            [r.a, r.js_two, r.l_iv_exact, r.l_iv_mc, r.mc_stderr]
                .iter()
                .map(|v| format!("{v:?}")),
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::shape("line fit needs two or more paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("line fit needs distinct x values"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).abs())
        .fold(0.0, f64::max);
    Ok(LineFit {
        slope,
        intercept,
        max_residual,
    })
}

pub fn write_summary_line<W: Write + ?Sized>(out: &mut W, fit: &LineFit) -> std::io::Result<()> {
    writeln!(
        out,
        "l_iv_exact fit: slope {:.12} intercept {:.12} max residual {:.3e}",
        fit.slope, fit.intercept, fit.max_residual
    )
}

/// Maximum per-coordinate KS distance between two latent populations.
pub fn marginal_ks(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::shape("marginal KS needs equal widths"));
    }
    Ok((0..a.cols())
        .map(|c| ks_distance(&a.column(c), &b.column(c)))
        .fold(0.0, f64::max))
}

/// Per intervention `i`, the population `E(G(O_i(w)))` with `w = E(x)`.
pub fn roundtrip_populations(
    models: &GanModels,
    group: &InterventionGroup,
    x: &Tensor,
    rng: &mut RandomSource,
) -> Result<Vec<Tensor>> {
    let w = models.encode(x)?;
    group
        .specs()
        .iter()
        .map(|spec| {
            let o = BatchIntervention::fixed(spec, w.rows(), rng)?.apply(&w)?;
            models.encode(&models.generate(&o)?)
        })
        .collect()
}

/// `max_{i<j}` of the marginal KS distance between round-tripped
/// intervened latents, evaluated on `n` fresh real samples.
pub fn theorem2_cdf_check(
    models: &GanModels,
    group: &InterventionGroup,
    ds: &SyntheticDataset,
    n: usize,
    rng: &mut RandomSource,
) -> Result<f64> {
    if n < 5000 {
        return Err(Error::contract(format!("CDF check needs n >= 5000, got {n}")));
    }
    let x = sample_dataset(ds, n, rng)?;
    let pops = roundtrip_populations(models, group, &x, rng)?;
    let mut worst: f64 = 0.0;
    for i in 0..pops.len() {
        for j in (i + 1)..pops.len() {
            worst = worst.max(marginal_ks(&pops[i], &pops[j])?);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::ArchSpec;
    use std::f64::consts::LN_2;

    fn grid() -> SyntheticDataset {
        SyntheticDataset::new(DatasetKind::default_grid()).unwrap()
    }

    #[test]
    fn dataset_names_round_trip() {
        for k in [
            DatasetKind::default_grid(),
            DatasetKind::default_ring(),
            DatasetKind::SquarePair { a: 0.3 },
        ] {
            assert_eq!(k.to_string().parse::<DatasetKind>().unwrap(), k);
        }
        assert_eq!("grid".parse::<DatasetKind>().unwrap(), DatasetKind::default_grid());
        assert!("blob(3)".parse::<DatasetKind>().is_err());
        assert!("grid(5,5,2)".parse::<DatasetKind>().is_err());
        assert!("ring(2.5,1,0.1)".parse::<DatasetKind>().is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SyntheticDataset::new(DatasetKind::Ring { modes: 8, radius: 2.0, sigma: 0.0 }).is_err());
        assert!(SyntheticDataset::new(DatasetKind::SquarePair { a: 1.5 }).is_err());
    }

    #[test]
    fn grid_samples_are_near_centers_and_balanced() {
        let ds = grid();
        assert_eq!(ds.num_modes(), 25);
        let n = 100_000;
        let x = sample_dataset(&ds, n, &mut RandomSource::new(1)).unwrap();
        let rep = mode_coverage(&x, &ds.mode_centers, 4.0 * ds.component_sigma / 3.0, 1).unwrap();
        assert!(rep.unassigned_fraction < 1e-3, "{rep:?}");
        let p = 1.0 / 25.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in &rep.counts {
            assert!((*c as f64 - n as f64 * p).abs() < 4.0 * sd, "{c}");
        }
    }

    #[test]
    fn ring_radii_are_contained() {
        let ds = SyntheticDataset::new(DatasetKind::default_ring()).unwrap();
        let x = sample_dataset(&ds, 20_000, &mut RandomSource::new(2)).unwrap();
        for i in 0..x.rows() {
            let r = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((1.9..=2.1).contains(&r), "{r}");
        }
    }

    #[test]
    fn square_pair_samples_in_unit_square() {
        let ds = SyntheticDataset::new(DatasetKind::SquarePair { a: 0.7 }).unwrap();
        let x = sample_dataset(&ds, 10_000, &mut RandomSource::new(3)).unwrap();
        assert!(x.data().iter().all(|v| (-0.5..=0.5).contains(v)));
    }

    #[test]
    fn coverage_of_true_grid() {
        let ds = grid();
        let x = sample_dataset(&ds, 10_000, &mut RandomSource::new(4)).unwrap();
        let rep = mode_coverage(&x, &ds.mode_centers, ds.component_sigma, 20).unwrap();
        assert_eq!(rep.modes_covered, 25);
        assert!(rep.kl_to_uniform < 0.01);
        let assigned: usize = rep.counts.iter().sum();
        let un = (rep.unassigned_fraction * 10_000.0).round() as usize;
        assert_eq!(assigned + un, 10_000);
    }

    #[test]
    fn coverage_point_mass_and_far_away() {
        let ds = grid();
        let c = ds.mode_centers[7];
        let x = Tensor::from_rows(&vec![c.to_vec(); 100]).unwrap();
        let rep = mode_coverage(&x, &ds.mode_centers, 0.05, 20).unwrap();
        assert_eq!(rep.modes_covered, 1);
        assert!((rep.kl_to_uniform - 25f64.ln()).abs() < 1e-12);

        let far = Tensor::full(&[50, 2], 100.0);
        let rep = mode_coverage(&far, &ds.mode_centers, 0.05, 20).unwrap();
        assert_eq!(rep.modes_covered, 0);
        assert_eq!(rep.unassigned_fraction, 1.0);

        assert!(mode_coverage(&Tensor::zeros(&[0, 2]), &ds.mode_centers, 0.05, 20).is_err());
    }

    #[test]
    fn coverage_kl_zero_iff_exactly_balanced() {
        let centers = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let rows: Vec<Vec<f64>> = (0..30).map(|i| centers[i % 3].to_vec()).collect();
        let rep = mode_coverage(&Tensor::from_rows(&rows).unwrap(), &centers, 0.1, 1).unwrap();
        assert_eq!(rep.kl_to_uniform, 0.0);
        let rows: Vec<Vec<f64>> = (0..31).map(|i| centers[i % 3].to_vec()).collect();
        let rep = mode_coverage(&Tensor::from_rows(&rows).unwrap(), &centers, 0.1, 1).unwrap();
        assert!(rep.kl_to_uniform > 0.0);
    }

    #[test]
    fn coverage_is_permutation_invariant() {
        let ds = grid();
        let mut rng = RandomSource::new(5);
        let x = sample_dataset(&ds, 500, &mut rng).unwrap();
        let perm: Vec<usize> = (0..500).rev().collect();
        let a = mode_coverage(&x, &ds.mode_centers, 0.05, 5).unwrap();
        let b = mode_coverage(&x.select_rows(&perm).unwrap(), &ds.mode_centers, 0.05, 5).unwrap();
        assert_eq!(a, b);
        let mut rc: Vec<[f64; 2]> = ds.mode_centers.clone();
        rc.reverse();
        let c = mode_coverage(&x, &rc, 0.05, 5).unwrap();
        assert_eq!(c.modes_covered, a.modes_covered);
        assert_eq!(c.kl_to_uniform, a.kl_to_uniform);
        let mut counts = c.counts.clone();
        counts.reverse();
        assert_eq!(counts, a.counts);
    }

    #[test]
    fn square_fit_columns() {
        let rows = square_fitting_table(&default_a_grid(), 20_000, &mut RandomSource::new(6)).unwrap();
        for r in &rows {
            assert!((r.js_two - LN_2).abs() < 1e-9);
            assert!((r.l_iv_mc - r.l_iv_exact).abs() <= 3.0 * r.mc_stderr + 1e-9, "{r:?}");
        }
        assert!((rows[0].l_iv_exact - LN_2).abs() < 1e-12);
        assert!((rows[10].l_iv_exact - 2.0 * LN_2).abs() < 1e-12);
        let a: Vec<f64> = rows.iter().map(|r| r.a).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.l_iv_exact).collect();
        let fit = fit_line(&a, &y).unwrap();
        assert!((fit.slope.abs() - LN_2).abs() < 1e-9);
        assert!(fit.max_residual < 1e-9);
        assert!(y.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn square_fit_csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sq.csv");
        let rows = square_fitting_table(&[0.0, 1.0], 1000, &mut RandomSource::new(1)).unwrap();
        write_square_fit_csv(&rows, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "a,js_two,l_iv_exact,l_iv_mc,mc_stderr");
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn fit_line_exact() {
        let f = fit_line(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-15 && (f.intercept - 1.0).abs() < 1e-15);
        assert!(fit_line(&[1.0, 1.0], &[0.0, 2.0]).is_err());
    }

    #[test]
    fn cdf_check_self_pair_is_zero_and_untrained_is_large() {
        let models = GanModels::init(ArchSpec::desk_default(), &mut RandomSource::new(7)).unwrap();
        let group = InterventionGroup::block_substitution(4, 8).unwrap();
        let ds = grid();
        let mut rng = RandomSource::new(8);
        let x = sample_dataset(&ds, 500, &mut rng).unwrap();
        let pops = roundtrip_populations(&models, &group, &x, &mut rng).unwrap();
        assert_eq!(marginal_ks(&pops[2], &pops[2]).unwrap(), 0.0);
        let s = theorem2_cdf_check(&models, &group, &ds, 5000, &mut rng).unwrap();
        assert!(s > 0.1, "{s}");
        assert!(theorem2_cdf_check(&models, &group, &ds, 100, &mut rng).is_err());
    }
}
