//! Exact mutual information for small Gaussian-mixture ensembles, by
//! quadrature, and the study correlating it with the variance-of-means
//! disagreement. This module is the independent oracle: it shares no
//! code with the training path beyond the variance reduction it is
//! checking against.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ensemble::variance_of_means;
use crate::parallel::par_map;
use crate::{Error, Result};

mod quad;
pub use quad::integrate_adaptive;

/// K mixture members with equal weights 1/K, shared fixed sigma, and
/// means of dimension 1 or 2 (quadrature stays tractable there).
#[derive(Debug, Clone)]
pub struct GaussianMixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl GaussianMixtureSpec {
    pub fn new(means: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        if sigma <= 0.0 {
            return Err(Error::invalid("sigma must be positive"));
        }
        if means.is_empty() {
            return Err(Error::invalid("mixture needs at least one member"));
        }
        let dim = means[0].len();
        if dim == 0 || dim > 2 {
            return Err(Error::invalid(format!(
                "mean dimension must be 1 or 2, got {dim}"
            )));
        }
        if means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid("member means must share one dimension"));
        }
        Ok(GaussianMixtureSpec { means, sigma })
    }

    pub fn members(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn density(&self, x: &[f64]) -> f64 {
        let k = self.members() as f64;
        let dim = self.dim();
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * self.sigma).powi(dim as i32);
        self.means
            .iter()
            .map(|mu| {
                let sq: f64 = x
                    .iter()
                    .zip(mu)
                    .map(|(xi, mi)| ((xi - mi) / self.sigma).powi(2))
                    .sum();
                norm * (-0.5 * sq).exp()
            })
            .sum::<f64>()
            / k
    }

    fn integration_box(&self) -> (Vec<f64>, Vec<f64>) {
        let dim = self.dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for m in &self.means {
            for d in 0..dim {
                lo[d] = lo[d].min(m[d]);
                hi[d] = hi[d].max(m[d]);
            }
        }
        let pad = 10.0 * self.sigma;
        for d in 0..dim {
            lo[d] -= pad;
            hi[d] += pad;
        }
        (lo, hi)
    }
}

/// Entropy of one member, identical across members because sigma is
/// fixed: (dim / 2) ln(2 pi e sigma^2).
pub fn conditional_entropy(spec: &GaussianMixtureSpec) -> f64 {
    let d = spec.dim() as f64;
    0.5 * d * (2.0 * std::f64::consts::PI * std::f64::consts::E * spec.sigma * spec.sigma).ln()
}

/// Entropy of the mixture density by adaptive quadrature of -m ln m,
/// absolute tolerance 1e-6.
pub fn marginal_entropy(spec: &GaussianMixtureSpec) -> Result<f64> {
    const TOL: f64 = 1e-6;
    let (lo, hi) = spec.integration_box();
    let integrand = |x: &[f64]| {
        let m = spec.density(x);
        if m <= 1e-300 {
            0.0
        } else {
            -m * m.ln()
        }
    };
    integrate_adaptive(&integrand, &lo, &hi, TOL)
}

/// Mutual information between the next value and the member identity:
/// marginal minus conditional entropy. Nonnegative up to quadrature
/// tolerance and at most ln K.
pub fn mutual_information(spec: &GaussianMixtureSpec) -> Result<f64> {
    Ok(marginal_entropy(spec)? - conditional_entropy(spec))
}

/// One sampled spec in the correlation study.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub spread: f64,
    pub variance_of_means: f64,
    pub mutual_information: f64,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub spearman: f64,
}

/// Draws random mixture specs (means ~ N(0, tau^2) with tau ~ U(0,
/// spread_max)) and rank-correlates their variance-of-means against
/// quadrature mutual information.
pub fn disagreement_vs_infogain_study(
    n_specs: usize,
    members: usize,
    sigma: f64,
    spread_max: f64,
    seed: u64,
) -> Result<StudyReport> {
    if n_specs < 100 {
        return Err(Error::invalid(format!(
            "study needs at least 100 specs, got {n_specs}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<(f64, GaussianMixtureSpec)> = (0..n_specs)
        .map(|_| {
            let tau: f64 = rng.gen_range(0.0..spread_max);
            let means = (0..members)
                .map(|_| vec![tau * standard_normal(&mut rng)])
                .collect();
            (
                tau,
                GaussianMixtureSpec::new(means, sigma).expect("valid spec"),
            )
        })
        .collect();

    let rows = par_map(specs, |(tau, spec)| {
        let vom = variance_of_means(&spec.means);
        let mi = mutual_information(&spec).expect("quadrature within tolerance");
        StudyRow {
            spread: tau,
            variance_of_means: vom,
            mutual_information: mi,
        }
    });

    let xs: Vec<f64> = rows.iter().map(|r| r.variance_of_means).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mutual_information).collect();
    Ok(StudyReport {
        spearman: spearman(&xs, &ys),
        rows,
    })
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("no NaN in ranks"));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx).powi(2);
        vy += (y - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec1(means: &[f64], sigma: f64) -> GaussianMixtureSpec {
        GaussianMixtureSpec::new(means.iter().map(|&m| vec![m]).collect(), sigma).unwrap()
    }

    #[test]
    fn conditional_entropy_of_standard_gaussian() {
        let s = spec1(&[0.0], 1.0);
        assert!((conditional_entropy(&s) - 1.41894).abs() < 1e-5);
    }

    #[test]
    fn conditional_entropy_scale_rule() {
        let s1 = spec1(&[0.0], 1.0);
        let s2 = spec1(&[0.0], 2.0);
        let diff = conditional_entropy(&s2) - conditional_entropy(&s1);
        assert!((diff - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sigma_must_be_positive() {
        assert!(GaussianMixtureSpec::new(vec![vec![0.0]], 0.0).is_err());
        assert!(GaussianMixtureSpec::new(vec![vec![0.0]], -1.0).is_err());
    }

    #[test]
    fn conditional_entropy_matches_quadrature_of_single_gaussian() {
        for sigma in [0.5, 1.0, 1.7] {
            let s = spec1(&[0.3], sigma);
            // A one-member mixture's marginal IS the member density.
            let h = marginal_entropy(&s).unwrap();
            assert!(
                (h - conditional_entropy(&s)).abs() < 1e-6,
                "sigma {sigma}: {h} vs {}",
                conditional_entropy(&s)
            );
        }
    }

    #[test]
    fn identical_means_carry_no_information() {
        let s = spec1(&[0.7, 0.7, 0.7], 1.0);
        let mi = mutual_information(&s).unwrap();
        assert!(mi.abs() < 1e-6, "mi {mi}");
    }

    #[test]
    fn well_separated_two_mode_case_gives_ln_two() {
        let s = spec1(&[0.0, 100.0], 1.0);
        let h = marginal_entropy(&s).unwrap();
        assert!((h - (conditional_entropy(&s) + 2f64.ln())).abs() < 1e-4);
        let mi = mutual_information(&s).unwrap();
        assert!((mi - 2f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn k_well_separated_means_give_ln_k() {
        let s = spec1(&[0.0, 100.0, 200.0, 300.0], 1.0);
        let mi = mutual_information(&s).unwrap();
        assert!((mi - 4f64.ln()).abs() < 1e-3, "mi {mi}");
    }

    #[test]
    fn entropy_is_permutation_invariant_in_means() {
        let a = spec1(&[-1.0, 0.5, 2.0], 0.8);
        let b = spec1(&[2.0, -1.0, 0.5], 0.8);
        let ha = marginal_entropy(&a).unwrap();
        let hb = marginal_entropy(&b).unwrap();
        assert!((ha - hb).abs() < 1e-9);
    }

    #[test]
    fn two_dimensional_mixture_matches_sum_of_independent_parts() {
        // Means spread only along dim 0; dim 1 contributes an independent
        // standard Gaussian, so entropies add.
        let means2 = vec![vec![-2.0, 0.0], vec![2.0, 0.0]];
        let s2 = GaussianMixtureSpec::new(means2, 1.0).unwrap();
        let h2 = marginal_entropy(&s2).unwrap();
        let s1 = spec1(&[-2.0, 2.0], 1.0);
        let h1 = marginal_entropy(&s1).unwrap();
        let gauss = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((h2 - (h1 + gauss)).abs() < 1e-5, "{h2} vs {}", h1 + gauss);
    }

    #[test]
    fn scaling_means_scales_variance_and_increases_information() {
        let base = spec1(&[-0.7, 0.2, 1.1], 1.0);
        let scaled = spec1(&[-1.4, 0.4, 2.2], 1.0);
        let v_base = variance_of_means(&base.means);
        let v_scaled = variance_of_means(&scaled.means);
        assert!((v_scaled - 4.0 * v_base).abs() < 1e-12);
        let mi_base = mutual_information(&base).unwrap();
        let mi_scaled = mutual_information(&scaled).unwrap();
        assert!(mi_scaled > mi_base + 1e-4);
    }

    #[test]
    fn zero_spread_specs_have_zero_variance_and_information() {
        let s = spec1(&[1.5, 1.5, 1.5, 1.5, 1.5], 1.0);
        assert_eq!(variance_of_means(&s.means), 0.0);
        assert!(mutual_information(&s).unwrap().abs() < 1e-6);
    }

    #[test]
    fn spearman_handles_monotone_and_ties() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]) + 1.0).abs() < 1e-12);
        let rho = spearman(&[1.0, 1.0, 2.0, 3.0], &[5.0, 5.0, 6.0, 7.0]);
        assert!(rho > 0.99);
    }
}
