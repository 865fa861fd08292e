//! Synthetic experiments: random band-limited truths, noisy samples, the
//! end-to-end band pipeline, and Monte Carlo coverage campaigns.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;

use crate::band::{build_band, default_grid, Band, Constraint, DEFAULT_GRID};
use crate::ellipsoid::{outer_ellipsoid, to_value_ellipsoid, Ellipsoid, SdpCertificate};
use crate::error::{Error, Result};
use crate::kernel::{gram, pw_kernel, raw_gram, KernelParams, DEFAULT_JITTER};
use crate::normbound::{pointwise_intervals, tau_original, tau_refined, xi_star, NormBound, RiskBudget};
use crate::perturbation::{build_kgp_regression, EvaluationContext, GroupKind, PerturbationGroup};

pub const TRUTH_TERMS: usize = 20;
/// Points of the grid on which the sup of a synthesized truth is checked.
pub const SUP_GRID: usize = 10_000;
/// Subintervals of the composite Simpson rule for `∫₀¹ f²`.
pub const SIMPSON_INTERVALS: usize = 10_000;

/// `f*(x) = Σ w_j k(x, c_j) / normalization`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueFunction {
    pub centers: Vec<f64>,
    pub weights: Vec<f64>,
    pub eta: f64,
    /// Divisor applied to the raw kernel sum; `1` unless its sup exceeded 1.
    pub normalization: f64,
}

impl TrueFunction {
    /// Normalizes so that the sup over [`SUP_GRID`] points of `[0, 1]` is
    /// at most one.
    pub fn from_parts(centers: Vec<f64>, weights: Vec<f64>, eta: f64) -> Result<Self> {
        if centers.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: centers.len(), found: weights.len() });
        }
        let mut f = Self { centers, weights, eta, normalization: 1.0 };
        let sup = f.grid_sup();
        if sup > 1.0 {
            f.normalization = sup;
        }
        Ok(f)
    }

    fn params(&self) -> KernelParams {
        KernelParams::with_jitter(self.eta, 0.0).expect("eta validated on construction")
    }

    pub fn eval(&self, x: f64) -> f64 {
        let p = self.params();
        let raw: f64 = self.centers.iter().zip(self.weights.iter()).map(|(&c, &w)| w * pw_kernel(x, c, &p)).sum();
        raw / self.normalization
    }

    pub fn grid_sup(&self) -> f64 {
        (0..SUP_GRID).map(|j| self.eval(j as f64 / (SUP_GRID - 1) as f64).abs()).fold(0.0, f64::max)
    }

    /// `wᵀK̄w / normalization²`: the squared norm over the whole line.
    pub fn squared_norm(&self) -> f64 {
        let k = raw_gram(&self.centers, &self.params());
        let w = DVector::from_column_slice(&self.weights);
        w.dot(&(k * &w)).max(0.0) / (self.normalization * self.normalization)
    }

    /// `∫ f*(x)² dx` over `[lo, hi]` by composite Simpson.
    pub fn squared_norm_on(&self, lo: f64, hi: f64, intervals: usize) -> f64 {
        let n = intervals + intervals % 2;
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for j in 0..=n {
            let w = if j == 0 || j == n {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * self.eval(lo + j as f64 * h).powi(2);
        }
        acc * h / 3.0
    }

    /// `∫₀¹ f*(x)² dx`.
    pub fn restricted_norm(&self) -> f64 {
        self.squared_norm_on(0.0, 1.0, SIMPSON_INTERVALS)
    }
}

/// Twenty uniform centers on `[0, 1]` with uniform `[−1, 1]` weights.
pub fn synth_true_function<R: Rng + ?Sized>(rng: &mut R, eta: f64) -> Result<TrueFunction> {
    KernelParams::new(eta)?;
    let centers: Vec<f64> = (0..TRUTH_TERMS).map(|_| rng.random::<f64>()).collect();
    let weights: Vec<f64> = (0..TRUTH_TERMS).map(|_| rng.random_range(-1.0..=1.0)).collect();
    TrueFunction::from_parts(centers, weights, eta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    Gaussian {
        sigma: f64,
    },
    Laplace {
        location: f64,
        scale: f64,
    },
    /// `Exp(rate) − 1/rate`.
    CenteredExponential {
        rate: f64,
    },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseModel::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
            NoiseModel::Laplace { location, scale } => location.is_finite() && scale > 0.0 && scale.is_finite(),
            NoiseModel::CenteredExponential { rate } => rate > 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid noise model {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => {
                if sigma == 0.0 {
                    0.0
                } else {
                    Normal::new(0.0, sigma).expect("validated sigma").sample(rng)
                }
            }
            NoiseModel::Laplace { location, scale } => {
                let e = Exp::new(1.0 / scale).expect("validated scale");
                location + e.sample(rng) - e.sample(rng)
            }
            NoiseModel::CenteredExponential { rate } => {
                Exp::new(rate).expect("validated rate").sample(rng) - 1.0 / rate
            }
        }
    }

    /// Whether the noise is symmetric about zero, as sign changes require.
    pub fn is_symmetric(&self) -> bool {
        match *self {
            NoiseModel::Gaussian { .. } => true,
            NoiseModel::Laplace { location, .. } => location == 0.0,
            NoiseModel::CenteredExponential { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (x, y) in self.x.iter().zip(self.y.iter()) {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }

    /// Parses a two-column `x,y` CSV; a non-numeric first line is taken as
    /// a header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 2 {
                return Err(Error::InvalidParameter(format!("line {}: expected two columns", lineno + 1)));
            }
            match (fields[0].parse::<f64>(), fields[1].parse::<f64>()) {
                (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => {
                    x.push(a);
                    y.push(b);
                }
                _ if lineno == 0 => continue,
                _ => return Err(Error::InvalidParameter(format!("line {}: not a number pair", lineno + 1))),
            }
        }
        if x.is_empty() {
            return Err(Error::InvalidParameter("dataset is empty".into()));
        }
        Ok(Self { x, y })
    }
}

/// `n` uniform inputs on `[0, 1]` with `y = f*(x) + ε`.
pub fn sample_dataset<R: Rng + ?Sized>(f: &TrueFunction, n: usize, noise: &NoiseModel, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    noise.validate()?;
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y = x.iter().map(|&xi| f.eval(xi) + noise.sample(rng)).collect();
    Ok(Dataset { x, y })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    /// `None` means `min(n/5, 50)`.
    pub d: Option<usize>,
    pub m: usize,
    pub q: usize,
    pub alpha: f64,
    pub delta0: f64,
    pub eta: f64,
    pub lambda_reg: f64,
    pub group: GroupKind,
    pub noise: NoiseModel,
    pub grid: usize,
    pub trials: usize,
    pub seed: u64,
    pub jitter: f64,
    /// Record wall-clock seconds in campaign output (breaks byte-identical
    /// reruns).
    pub timing: bool,
    /// Which residual coordinates the group acts on.
    pub perturb: PerturbScope,
}

/// Residual coordinates transformed by the perturbation group.
///
/// `Leading` acts on the first `d` residuals only. Those are pure noise at
/// the ideal parameter, but every element then fixes a nonzero subspace of
/// the regressor column space (constants under permutations, the positively
/// signed coordinates under sign changes), so each comparison set is
/// unbounded and no finite radius exists. `All` acts on every residual, which
/// bounds the region at the cost of treating the interpolation error of the
/// ideal vector at the remaining inputs as noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbScope {
    Leading,
    All,
}

impl PerturbScope {
    pub fn name(self) -> &'static str {
        match self {
            PerturbScope::Leading => "leading",
            PerturbScope::All => "all",
        }
    }
}

impl std::str::FromStr for PerturbScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "leading" => Ok(PerturbScope::Leading),
            "all" => Ok(PerturbScope::All),
            other => Err(Error::InvalidParameter(format!("unknown perturbation scope `{other}`"))),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 300,
            d: None,
            m: 40,
            q: 2,
            alpha: 0.05,
            delta0: 0.01,
            eta: 30.0,
            lambda_reg: 0.0,
            group: GroupKind::Permutation,
            noise: NoiseModel::CenteredExponential { rate: 4.0 },
            grid: DEFAULT_GRID,
            trials: 100,
            seed: 0,
            jitter: DEFAULT_JITTER,
            timing: false,
            perturb: PerturbScope::All,
        }
    }
}

impl ExperimentConfig {
    pub fn effective_d(&self) -> usize {
        self.d.unwrap_or_else(|| (self.n / 5).clamp(1, 50))
    }

    pub fn budget(&self) -> Result<RiskBudget> {
        RiskBudget::new(self.alpha, self.q as f64 / self.m as f64, self.delta0)
    }

    pub fn kernel(&self) -> Result<KernelParams> {
        KernelParams::with_jitter(self.eta, self.jitter)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.effective_d();
        if self.n == 0 || d == 0 || d > self.n {
            return Err(Error::InvalidParameter(format!("need 1 <= d <= n, got d={d}, n={}", self.n)));
        }
        if self.m < 2 || self.q == 0 || self.q >= self.m {
            return Err(Error::InvalidParameter(format!("need 0 < q < m, got m={}, q={}", self.m, self.q)));
        }
        if self.grid < 2 {
            return Err(Error::InvalidParameter("grid must have at least 2 points".into()));
        }
        if self.lambda_reg < 0.0 || self.lambda_reg.is_nan() {
            return Err(Error::NegativeLambda(self.lambda_reg));
        }
        self.noise.validate()?;
        self.kernel()?;
        self.budget()?;
        Ok(())
    }

    /// RNG for trial `trial`: the seed picks the generator, the trial index
    /// its stream, so results do not depend on scheduling.
    pub fn trial_rng(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial);
        rng
    }
}

/// Everything produced by the band pipeline on one dataset.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub parameter_ellipsoid: Ellipsoid,
    pub value_ellipsoid: Ellipsoid,
    pub certificate: SdpCertificate,
    pub tau: NormBound,
    pub tau0: NormBound,
    pub band_original: Band,
    pub band_refined: Band,
}

impl Analysis {
    /// Largest amount by which the refined band leaves the original one,
    /// relative to `max(1, original width)` at that point.
    pub fn nesting_excess(&self) -> f64 {
        let (o, r) = (&self.band_original, &self.band_refined);
        (0..o.len())
            .filter(|&j| r.lower[j].is_finite() && o.lower[j].is_finite())
            .map(|j| {
                let scale = (o.upper[j] - o.lower[j]).max(1.0);
                (o.lower[j] - r.lower[j]).max(r.upper[j] - o.upper[j]) / scale
            })
            .fold(0.0, f64::max)
    }
}

/// Ellipsoid, both norm bounds and both bands for a dataset.
pub fn analyze<R: Rng + ?Sized>(cfg: &ExperimentConfig, data: &Dataset, rng: &mut R) -> Result<Analysis> {
    cfg.validate()?;
    let d = cfg.effective_d();
    if data.len() != cfg.n {
        return Err(Error::DimensionMismatch { expected: cfg.n, found: data.len() });
    }
    let params = cfg.kernel()?;
    let gp = gram(&data.x, &params)?.with_d(d)?;
    let kgp = build_kgp_regression(&gp, cfg.lambda_reg, &DVector::from_column_slice(&data.y))?;
    let restriction = match cfg.perturb {
        PerturbScope::Leading => d,
        PerturbScope::All => cfg.n,
    };
    let ctx =
        EvaluationContext::new(kgp.phi, kgp.v, cfg.m, cfg.q, PerturbationGroup::new(cfg.group, restriction), rng)?;
    let (parameter_ellipsoid, certificate) = outer_ellipsoid(&ctx)?;
    let k2 = gp.k2();
    let value_ellipsoid = to_value_ellipsoid(&parameter_ellipsoid, &k2)?;
    let budget = cfg.budget()?;
    let intervals = pointwise_intervals(&value_ellipsoid)?;
    let tau = tau_original(&intervals, &budget, d)?;
    let tau0 = tau_refined(xi_star(&value_ellipsoid, d)?, &budget, d)?;
    let grid = default_grid(cfg.grid, &data.x);
    let band_original = build_band(&grid, &gp, &tau, &Constraint::Box(intervals))?;
    let band_refined = build_band(&grid, &gp, &tau0, &Constraint::EllipsoidZ(value_ellipsoid.clone()))?;
    Ok(Analysis { parameter_ellipsoid, value_ellipsoid, certificate, tau, tau0, band_original, band_refined })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub tau: f64,
    pub tau0: f64,
    pub mean_width_orig: f64,
    pub mean_width_ref: f64,
    pub max_width_orig: f64,
    pub max_width_ref: f64,
    /// `f*` inside the refined band at every grid point.
    pub covered_band: bool,
    pub covered_band_orig: bool,
    /// `∫₀¹ f*² ≤ τ₀`.
    pub covered_norm: bool,
    pub covered_norm_orig: bool,
    pub restricted_norm: f64,
    pub nesting_excess: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub truth: TrueFunction,
    pub dataset: Dataset,
    pub analysis: Analysis,
    pub report: TrialReport,
}

/// Synthesizes a truth and a dataset, then runs [`analyze`] and scores the
/// result against the truth.
pub fn run_pipeline<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> Result<PipelineOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let truth = synth_true_function(rng, cfg.eta)?;
    let dataset = sample_dataset(&truth, cfg.n, &cfg.noise, rng)?;
    let analysis = analyze(cfg, &dataset, rng)?;
    let restricted_norm = truth.restricted_norm();
    let f = |x: f64| truth.eval(x);
    let report = TrialReport {
        tau: analysis.tau.tau,
        tau0: analysis.tau0.tau,
        mean_width_orig: analysis.band_original.mean_width(),
        mean_width_ref: analysis.band_refined.mean_width(),
        max_width_orig: analysis.band_original.max_width(),
        max_width_ref: analysis.band_refined.max_width(),
        covered_band: analysis.band_refined.contains_graph(f),
        covered_band_orig: analysis.band_original.contains_graph(f),
        covered_norm: restricted_norm <= analysis.tau0.tau,
        covered_norm_orig: restricted_norm <= analysis.tau.tau,
        restricted_norm,
        nesting_excess: analysis.nesting_excess(),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(PipelineOutput { truth, dataset, analysis, report })
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let den = 1.0 + z * z / n;
    let mid = (p + z * z / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / den;
    ((mid - half).max(0.0), (mid + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSummary {
    pub trials: usize,
    pub failures: usize,
    pub band_coverage: f64,
    pub band_coverage_ci: (f64, f64),
    pub band_coverage_orig: f64,
    pub norm_coverage_tau: f64,
    pub norm_coverage_tau0: f64,
    pub norm_coverage_tau0_ci: (f64, f64),
    pub mean_width_orig: f64,
    pub mean_width_ref: f64,
    pub mean_tau: f64,
    pub mean_tau0: f64,
    /// `τ₀ ≤ τ` in every successful trial.
    pub refinement_dominates: bool,
    pub max_nesting_excess: f64,
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub records: Vec<Result<TrialReport>>,
    pub summary: CampaignSummary,
    pub timing: bool,
}

/// Runs `trials` independent pipelines in parallel. Failed trials are kept
/// and count as not covered.
pub fn run_reliability_campaign(cfg: &ExperimentConfig, trials: usize) -> Result<Campaign> {
    cfg.validate()?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let records: Vec<Result<TrialReport>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| run_pipeline(cfg, &mut cfg.trial_rng(t)).map(|out| out.report))
        .collect();
    Ok(Campaign { summary: summarize(&records), records, timing: cfg.timing })
}

pub fn summarize(records: &[Result<TrialReport>]) -> CampaignSummary {
    let trials = records.len();
    let ok: Vec<&TrialReport> = records.iter().filter_map(|r| r.as_ref().ok()).collect();
    let count = |f: &dyn Fn(&TrialReport) -> bool| ok.iter().filter(|r| f(r)).count();
    let mean = |f: &dyn Fn(&TrialReport) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    let band = count(&|r| r.covered_band);
    let norm0 = count(&|r| r.covered_norm);
    CampaignSummary {
        trials,
        failures: trials - ok.len(),
        band_coverage: band as f64 / trials as f64,
        band_coverage_ci: wilson_interval(band, trials),
        band_coverage_orig: count(&|r| r.covered_band_orig) as f64 / trials as f64,
        norm_coverage_tau: count(&|r| r.covered_norm_orig) as f64 / trials as f64,
        norm_coverage_tau0: norm0 as f64 / trials as f64,
        norm_coverage_tau0_ci: wilson_interval(norm0, trials),
        mean_width_orig: mean(&|r| r.mean_width_orig),
        mean_width_ref: mean(&|r| r.mean_width_ref),
        mean_tau: mean(&|r| r.tau),
        mean_tau0: mean(&|r| r.tau0),
        refinement_dominates: ok.iter().all(|r| r.tau0 <= r.tau + 1e-8),
        max_nesting_excess: ok.iter().map(|r| r.nesting_excess).fold(0.0, f64::max),
    }
}

impl Campaign {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,tau,tau0,covered_band,covered_norm,mean_width_orig,mean_width_ref,seconds\n");
        for (t, rec) in self.records.iter().enumerate() {
            match rec {
                Ok(r) => {
                    let secs = if self.timing { format!("{:.3}", r.seconds) } else { String::new() };
                    let _ = writeln!(
                        out,
                        "{t},{},{},{},{},{},{},{secs}",
                        r.tau, r.tau0, r.covered_band, r.covered_norm, r.mean_width_orig, r.mean_width_ref
                    );
                }
                Err(_) => {
                    let _ = writeln!(out, "{t},,,false,false,,,");
                }
            }
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(out, "trials: {} ({} failed)", s.trials, s.failures);
        let _ = writeln!(
            out,
            "band coverage (refined): {:.4}  95% CI [{:.4}, {:.4}]",
            s.band_coverage, s.band_coverage_ci.0, s.band_coverage_ci.1
        );
        let _ = writeln!(out, "band coverage (original): {:.4}", s.band_coverage_orig);
        let _ = writeln!(
            out,
            "norm coverage: tau {:.4}, tau0 {:.4}  95% CI [{:.4}, {:.4}]",
            s.norm_coverage_tau, s.norm_coverage_tau0, s.norm_coverage_tau0_ci.0, s.norm_coverage_tau0_ci.1
        );
        let _ = writeln!(out, "mean tau {:.6}, mean tau0 {:.6}", s.mean_tau, s.mean_tau0);
        let _ = writeln!(out, "mean width: original {:.6}, refined {:.6}", s.mean_width_orig, s.mean_width_ref);
        let _ = writeln!(out, "tau0 <= tau in all trials: {}", s.refinement_dominates);
        let _ = writeln!(out, "max nesting excess: {:.3e}", s.max_nesting_excess);
        for (t, rec) in self.records.iter().enumerate() {
            if let Err(e) = rec {
                let _ = writeln!(out, "trial {t} failed: {e}");
            }
        }
        out
    }
}
