//! Predictive scores, sample dissimilarities, coverage experiments and
//! highest-density regions.

mod experiments;
mod hdr;

pub use experiments::{
    elpd_comparison, epi_loo, epi_loo_comparison, median, quartiles, v0_sweep, ElpdExperimentConfig,
    ElpdMethod, ElpdRow, EpiLooConfig, KsRow, LooMethod, LooRow, V0SweepConfig,
};
pub use hdr::{hdr_region, HdrGrid, HdrOptions};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::baselines::cut_exact_gaussian;
use crate::error::{Error, Result};
use crate::model::{CutDataset, CutModel, ModuleOne, ModuleTwo, PriorWeight};
use crate::rng;
use crate::sampler::{pbmi_scenario1, pbmi_scenario2, SampleSet, SamplerConfig};
use crate::zoo::{
    biased_data_model, biased_generate, counterexample_generate, counterexample_model,
    toy_generate, toy_model, GeneratorSpec,
};

/// `log(mean(exp(values)))`, stable for large magnitudes.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (s / values.len() as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElpdResult {
    pub value: f64,
    pub pointwise: Vec<f64>,
    /// Points at which every draw gives zero density.
    pub zero_density: Vec<usize>,
}

fn finish_elpd(pointwise: Vec<f64>) -> ElpdResult {
    let zero_density: Vec<usize> = pointwise
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == f64::NEG_INFINITY)
        .map(|(i, _)| i)
        .collect();
    if !zero_density.is_empty() {
        log::warn!("zero predictive density at points {zero_density:?}");
    }
    ElpdResult {
        value: pointwise.iter().sum(),
        pointwise,
        zero_density,
    }
}

fn check_elpd_inputs(set: &SampleSet, points: usize) -> Result<()> {
    if set.retained().next().is_none() {
        return Err(Error::InvalidArgument("sample set has no retained draws".into()));
    }
    if points == 0 {
        return Err(Error::InvalidArgument("no points to score".into()));
    }
    Ok(())
}

/// `sum_i log (1/N) sum_k f1(x_i | theta1^(k))` over retained draws.
pub fn elpd_module1<M: ModuleOne>(module: &M, set: &SampleSet, new_data: &[M::Obs]) -> Result<ElpdResult> {
    check_elpd_inputs(set, new_data.len())?;
    let draws: Vec<&[f64]> = set.retained().map(|d| &d.theta1[..]).collect();
    let pointwise = new_data
        .par_iter()
        .map(|x| {
            let lls: Vec<f64> = draws.iter().map(|t| module.loglik(x, t)).collect();
            log_mean_exp(&lls)
        })
        .collect();
    Ok(finish_elpd(pointwise))
}

/// Module-2 analogue of [`elpd_module1`], averaging over joint draws.
pub fn elpd_module2<M: ModuleTwo>(module: &M, set: &SampleSet, new_data: &[M::Obs]) -> Result<ElpdResult> {
    check_elpd_inputs(set, new_data.len())?;
    let draws: Vec<_> = set.retained().collect();
    // per-draw conditioning of the new points, e.g. propensity strata
    let lls: Vec<Vec<f64>> = draws
        .par_iter()
        .map(|d| {
            let prepared = module.prepare(&d.theta1, new_data);
            prepared
                .iter()
                .map(|x| module.loglik(x, &d.theta1, &d.theta2))
                .collect()
        })
        .collect();
    let pointwise = (0..new_data.len())
        .map(|i| {
            let col: Vec<f64> = lls.iter().map(|row| row[i]).collect();
            log_mean_exp(&col)
        })
        .collect();
    Ok(finish_elpd(pointwise))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub value: f64,
    pub pointwise: Vec<Option<f64>>,
    pub failed_folds: usize,
}

/// Leave-one-out predictive score. `fold(i)` refits without point `i` and
/// returns the log predictive density of point `i`; failed folds are dropped.
pub fn elpd_loo<F>(n: usize, fold: F) -> Result<LooResult>
where
    F: Fn(usize) -> Result<f64>,
{
    if n == 0 {
        return Err(Error::InvalidArgument("no folds".into()));
    }
    let pointwise: Vec<Option<f64>> = (0..n)
        .map(|i| match fold(i) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("fold {i} dropped: {e}");
                None
            }
        })
        .collect();
    let failed_folds = pointwise.iter().filter(|v| v.is_none()).count();
    if failed_folds == n {
        return Err(Error::InvalidArgument("every fold failed".into()));
    }
    Ok(LooResult {
        value: pointwise.iter().flatten().sum(),
        pointwise,
        failed_folds,
    })
}

/// Largest absolute difference between the empirical CDFs of `a` and `b`.
pub fn ks_dissimilarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("KS needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("KS samples contain NaN".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed interval holding `level` of the values.
pub fn equal_tailed_interval(values: &[f64], level: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (quantile_sorted(&v, tail), quantile_sorted(&v, 1.0 - tail))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMethod {
    PbmiS1,
    PbmiS2,
    CutBayes,
}

impl CoverageMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CoverageMethod::PbmiS1 => "pbmi_s1",
            CoverageMethod::PbmiS2 => "pbmi_s2",
            CoverageMethod::CutBayes => "cut_bayes",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageTarget {
    Theta1,
    Theta2,
    Joint,
}

impl CoverageTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            CoverageTarget::Theta1 => "theta1",
            CoverageTarget::Theta2 => "theta2",
            CoverageTarget::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageExperimentConfig {
    pub replicates: usize,
    pub n_grid: Vec<usize>,
    pub nominal_level: f64,
    pub generator: GeneratorSpec,
    pub methods: Vec<CoverageMethod>,
    pub target: CoverageTarget,
    pub n_draws: usize,
    pub seed: u64,
}

impl CoverageExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 20 {
            return Err(Error::InvalidArgument("replicates must be >= 20".into()));
        }
        if !(self.nominal_level > 0.0 && self.nominal_level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "nominal level must lie in (0, 1), got {}",
                self.nominal_level
            )));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::InvalidArgument("n_grid needs positive sizes".into()));
        }
        if self.methods.is_empty() || self.n_draws < 2 {
            return Err(Error::InvalidArgument("need a method and N >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub n: usize,
    pub method: String,
    pub target: String,
    pub nominal_level: f64,
    pub replicates: usize,
    pub dropped: usize,
    pub covered: usize,
    pub coverage: f64,
    pub std_error: f64,
}

/// Whether `truth` lies in the credible set of `set` for `target`. Marginal
/// targets need every coordinate of the block inside its equal-tailed
/// interval; the joint target uses the normal ellipsoid.
pub fn covers(set: &SampleSet, truth: &[f64], target: CoverageTarget, level: f64) -> Result<bool> {
    let (d1, d2) = set.dims();
    if truth.len() != d1 + d2 {
        return Err(Error::DimensionMismatch {
            context: "true parameter",
            expected: d1 + d2,
            actual: truth.len(),
        });
    }
    let coords: Vec<usize> = match target {
        CoverageTarget::Theta1 => (0..d1).collect(),
        CoverageTarget::Theta2 => (d1..d1 + d2).collect(),
        CoverageTarget::Joint => {
            let mean = DVector::from_vec(set.mean());
            let cov = set.covariance();
            let inv = cov
                .try_inverse()
                .ok_or_else(|| Error::SingularInformation { which: "sample covariance", condition: f64::INFINITY })?;
            let r = DVector::from_column_slice(truth) - mean;
            let q = (r.transpose() * inv * &r)[(0, 0)];
            let chi = ChiSquared::new((d1 + d2) as f64).expect("positive degrees of freedom");
            return Ok(q <= chi.inverse_cdf(level));
        }
    };
    Ok(coords.into_iter().all(|i| {
        let (lo, hi) = equal_tailed_interval(&set.coordinate(i), level);
        lo <= truth[i] && truth[i] <= hi
    }))
}

/// Coverage over `replicates` runs of `run`, which receives the replicate
/// index and returns a sample set (or an error, dropping the replicate).
pub fn coverage_of<F>(
    replicates: usize,
    truth: &[f64],
    target: CoverageTarget,
    level: f64,
    run: F,
) -> (usize, usize, usize)
where
    F: Fn(usize) -> Result<SampleSet> + Sync,
{
    let outcomes: Vec<Option<bool>> = (0..replicates)
        .into_par_iter()
        .map(|r| run(r).and_then(|s| covers(&s, truth, target, level)).ok())
        .collect();
    let dropped = outcomes.iter().filter(|o| o.is_none()).count();
    let covered = outcomes.iter().filter(|o| **o == Some(true)).count();
    (replicates - dropped, dropped, covered)
}

fn run_method<M1, M2>(
    method: CoverageMethod,
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
    n_draws: usize,
    seed: u64,
    exact: impl Fn() -> Result<SampleSet>,
) -> Result<SampleSet>
where
    M1: ModuleOne,
    M2: ModuleTwo,
{
    let z = PriorWeight::zero();
    let cfg = SamplerConfig::default();
    match method {
        CoverageMethod::PbmiS1 => pbmi_scenario1(model, data, n_draws, &z, &z, &cfg, seed),
        CoverageMethod::PbmiS2 => pbmi_scenario2(model, data, n_draws, &z, &z, &cfg, seed),
        CoverageMethod::CutBayes => exact(),
    }
}

/// Sample set for one simulated replicate of a built-in generator.
pub fn simulate_and_sample(
    spec: &GeneratorSpec,
    method: CoverageMethod,
    n_draws: usize,
    seed: u64,
) -> Result<SampleSet> {
    match spec {
        GeneratorSpec::Toy { rho, sigma2, n, seed: s } => {
            let model = toy_model();
            let data = toy_generate(*rho, *sigma2, *n, *s)?;
            run_method(method, &model, &data, n_draws, seed, || {
                cut_exact_gaussian(&model, &data, n_draws, seed)
            })
        }
        GeneratorSpec::Biased { sigma1_sq, sigma2_sq, n1, n2, seed: s } => {
            let model = biased_data_model(None)?;
            let data = biased_generate(*sigma1_sq, *sigma2_sq, *n1, *n2, *s)?;
            run_method(method, &model, &data, n_draws, seed, || {
                cut_exact_gaussian(&model, &data, n_draws, seed)
            })
        }
        GeneratorSpec::Counterexample { sigma, n, seed: s } => {
            let model = counterexample_model();
            let data = counterexample_generate(*sigma, *n, *s)?;
            run_method(method, &model, &data, n_draws, seed, || {
                cut_exact_gaussian(&model, &data, n_draws, seed)
            })
        }
    }
}

/// Simulates `replicates` datasets per sample size, runs every method and
/// records whether the pseudo-true parameter is covered.
pub fn coverage_experiment(config: &CoverageExperimentConfig) -> Result<Vec<CoverageRow>> {
    config.validate()?;
    let (t1, t2) = config.generator.pseudo_true();
    let truth: Vec<f64> = t1.into_iter().chain(t2).collect();
    let mut rows = Vec::new();
    for (gi, &n) in config.n_grid.iter().enumerate() {
        for &method in &config.methods {
            let (ran, dropped, covered) =
                coverage_of(config.replicates, &truth, config.target, config.nominal_level, |r| {
                    // the same datasets are shared by all methods
                    let key = (gi * config.replicates + r) as u64;
                    let data_seed = rng::child_seed(config.seed, rng::domain::GENERATOR, key);
                    let draw_seed = rng::child_seed(config.seed, rng::domain::REPLICATE, key);
                    let spec = config.generator.with_n(n).with_seed(data_seed);
                    simulate_and_sample(&spec, method, config.n_draws, draw_seed)
                });
            if dropped > 0 {
                log::warn!("{dropped} replicates dropped for {} at n = {n}", method.as_str());
            }
            let coverage = if ran > 0 { covered as f64 / ran as f64 } else { f64::NAN };
            rows.push(CoverageRow {
                n,
                method: method.as_str().into(),
                target: config.target.as_str().into(),
                nominal_level: config.nominal_level,
                replicates: ran,
                dropped,
                covered,
                coverage,
                std_error: (coverage * (1.0 - coverage) / ran.max(1) as f64).sqrt(),
            });
        }
    }
    Ok(rows)
}

/// Sample correlation of two columns.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let m = DMatrix::from_fn(a.len(), 2, |i, j| if j == 0 { a[i] } else { b[i] });
    let c = crate::sampler::covariance_of(&m);
    c[(0, 1)] / (c[(0, 0)] * c[(1, 1)]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{Draw, Scenario};
    use crate::zoo::GaussianLocation;

    #[test]
    fn ks_examples() {
        assert_eq!(ks_dissimilarity(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(ks_dissimilarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(ks_dissimilarity(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 4.0, 5.0]).unwrap(), 0.25);
        assert!(ks_dissimilarity(&[], &[1.0]).is_err());
    }

    #[test]
    fn ks_matches_brute_force() {
        let a = [0.3, -1.0, 2.2, 0.3, 5.0];
        let b = [0.1, 0.3, 4.0];
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|v| **v <= x).count() as f64 / s.len() as f64;
        let brute = a
            .iter()
            .chain(&b)
            .map(|&x| (ecdf(&a, x) - ecdf(&b, x)).abs())
            .fold(0.0, f64::max);
        assert!((ks_dissimilarity(&a, &b).unwrap() - brute).abs() < 1e-15);
    }

    fn degenerate(theta1: f64, theta2: f64, n: usize) -> SampleSet {
        let draws = (0..n).map(|_| Draw::new(vec![theta1], vec![theta2], true)).collect();
        SampleSet::new(draws, Scenario::S1, 0, "test")
    }

    #[test]
    fn elpd_single_draw_single_point() {
        let m = GaussianLocation::new(1.0, 0.0, 1.0);
        let r = elpd_module1(&m, &degenerate(0.0, 0.0, 1), &[0.0]).unwrap();
        assert!((r.value + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn elpd_reports_zero_density_points() {
        let m = crate::zoo::GroupedBernoulli { groups: 1 };
        let set = degenerate(1.0, 0.0, 3);
        let t = crate::zoo::BernoulliTrial { group: 0, success: false };
        let r = elpd_module1(&m, &set, &[t]).unwrap();
        assert_eq!(r.value, f64::NEG_INFINITY);
        assert_eq!(r.zero_density, vec![0]);
    }

    #[test]
    fn loo_with_identical_points() {
        let r = elpd_loo(2, |_| Ok(-1.25)).unwrap();
        assert_eq!(r.value, -2.5);
        let r = elpd_loo(3, |i| if i == 1 { Err(Error::InfeasibleStart) } else { Ok(-1.0) }).unwrap();
        assert_eq!(r.failed_folds, 1);
        assert_eq!(r.value, -2.0);
    }

    #[test]
    fn coverage_config_validation() {
        let mut c = CoverageExperimentConfig {
            replicates: 20,
            n_grid: vec![100],
            nominal_level: 0.95,
            generator: GeneratorSpec::Toy { rho: 0.0, sigma2: 1.0, n: 100, seed: 0 },
            methods: vec![CoverageMethod::PbmiS1],
            target: CoverageTarget::Theta2,
            n_draws: 100,
            seed: 0,
        };
        assert!(c.validate().is_ok());
        c.nominal_level = 1.0;
        assert!(c.validate().is_err());
        c.nominal_level = 0.95;
        c.replicates = 19;
        assert!(c.validate().is_err());
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn log_mean_exp_is_stable() {
        assert!((log_mean_exp(&[-1000.0, -1000.0]) + 1000.0).abs() < 1e-12);
        assert_eq!(log_mean_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
