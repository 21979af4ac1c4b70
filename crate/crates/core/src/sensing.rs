//! Energy-detection spectrum sensing and OR-rule cooperative fusion.
//!
//! A CR user collects `samples` (time-bandwidth product) observations of a
//! subcarrier and compares the collected energy with a threshold `zeta`. Under
//! the idle hypothesis the statistic is central chi-squared with `2 * samples`
//! degrees of freedom; with a primary user present it is noncentral with
//! noncentrality `2 * gamma`, where `gamma` is exponential (Rayleigh fading)
//! with mean `mean_snr`.
//!
//! The average detection probability over Rayleigh fading uses the exponent
//! `-zeta / (2 (1 + mean_snr))`. A `(1 - mean_snr)` denominator in that
//! exponent diverges near unit SNR and does not give a probability.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensingError {
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
    #[error("no threshold achieves target {target} (must lie strictly between 0 and 1)")]
    NoSolution { target: f64 },
    #[error("fusion needs at least one sensing outcome")]
    EmptyFusion,
    #[error("probability {name}={value} outside [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },
}

/// Energy detector of one CR user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Sample count `mu * tau`.
    pub samples: u32,
    /// Energy threshold `zeta`.
    pub threshold: f64,
    /// Average sensing SNR in dB.
    pub mean_snr_db: f64,
}

impl DetectorConfig {
    pub fn new(samples: u32, threshold: f64, mean_snr_db: f64) -> Result<Self, SensingError> {
        let cfg = Self {
            samples,
            threshold,
            mean_snr_db,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SensingError> {
        if self.samples < 2 {
            return Err(SensingError::InvalidConfig(format!(
                "samples must be at least 2, got {}",
                self.samples
            )));
        }
        if !(self.threshold >= 0.0) || !self.threshold.is_finite() {
            return Err(SensingError::InvalidConfig(format!(
                "threshold must be finite and nonnegative, got {}",
                self.threshold
            )));
        }
        if !self.mean_snr_db.is_finite() {
            return Err(SensingError::InvalidConfig("mean SNR must be finite".into()));
        }
        Ok(())
    }

    pub fn mean_snr_linear(&self) -> f64 {
        db_to_linear(self.mean_snr_db)
    }

    pub fn with_threshold(self, threshold: f64) -> Self {
        Self { threshold, ..self }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Per-user false-alarm and detection probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingOutcome {
    pub pfa: f64,
    pub pd: f64,
}

impl SensingOutcome {
    pub fn of(cfg: &DetectorConfig) -> Self {
        Self {
            pfa: pfa(cfg),
            pd: pd_rayleigh(cfg),
        }
    }
}

/// Coordinator-level probabilities after OR fusion of `k_users` decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionResult {
    pub qfa: f64,
    pub qd: f64,
    pub k_users: usize,
}

/// Per-subcarrier state probabilities that drive chip zeroing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancyModel {
    pub pr_h1: f64,
    /// Probability a chip is zeroed (subcarrier estimated busy).
    pub p_zero: f64,
    /// Probability a subcarrier is occupied but estimated free.
    pub p_mis: f64,
}

impl OccupancyModel {
    /// Probability a subcarrier is free and estimated free.
    pub fn p_clean(&self) -> f64 {
        1.0 - self.p_zero - self.p_mis
    }
}

/// `ln(n!)` for small integer `n`, summed exactly term by term.
fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn ln_poisson_term(p: u64, x: f64) -> f64 {
    if x == 0.0 {
        return if p == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -x + p as f64 * x.ln() - ln_factorial(p)
}

/// `e^-x * sum_{p=0}^{k} x^p / p!` by log-sum-exp around the running maximum.
fn poisson_lower_sum(k: u64, x: f64) -> f64 {
    let ln_x = x.ln();
    let mut ln_term = -x;
    let mut max = ln_term;
    let mut acc = 1.0;
    for p in 1..=k {
        ln_term += ln_x - (p as f64).ln();
        if ln_term > max {
            acc = acc * (max - ln_term).exp() + 1.0;
            max = ln_term;
        } else {
            acc += (ln_term - max).exp();
        }
    }
    (max + acc.ln()).exp()
}

/// `ln sum_{p>k} e^-x x^p / p!`, valid when `x < k + 1` so that terms decrease.
fn ln_poisson_upper_series(k: u64, x: f64) -> f64 {
    let first = k + 1;
    let ln_first = ln_poisson_term(first, x);
    let mut ratio = 1.0;
    let mut series = 1.0;
    let mut p = first;
    loop {
        p += 1;
        ratio *= x / p as f64;
        series += ratio;
        if ratio < series * 1e-17 {
            break;
        }
    }
    ln_first + series.ln()
}

/// `P(X <= k)` for `X ~ Poisson(x)`, i.e. `e^-x * sum_{p=0}^{k} x^p / p!`.
///
/// Equals the regularized upper incomplete gamma `Gamma(k + 1, x) / Gamma(k + 1)`.
/// Whichever tail is smaller is summed directly.
pub fn poisson_cdf(k: i64, x: f64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    if x == 0.0 {
        return 1.0;
    }
    let k = k as u64;
    if x < (k + 1) as f64 {
        -ln_poisson_upper_series(k, x).exp_m1()
    } else {
        poisson_lower_sum(k, x)
    }
}

/// `ln P(X > k)` for `X ~ Poisson(x)`.
pub fn ln_poisson_sf(k: i64, x: f64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    let k = k as u64;
    if x < (k + 1) as f64 {
        ln_poisson_upper_series(k, x)
    } else {
        (-poisson_lower_sum(k, x)).ln_1p()
    }
}

/// False-alarm probability `Gamma(u, zeta/2) / Gamma(u)` with `u = samples`.
pub fn pfa(cfg: &DetectorConfig) -> f64 {
    poisson_cdf(cfg.samples as i64 - 1, cfg.threshold / 2.0)
}

/// Average detection probability over Rayleigh fading.
///
/// With `u = samples`, `g = mean SNR`, `x = zeta / 2` and
/// `y = zeta g / (2 (1 + g))` this is
/// `F(u-2; x) + ((1+g)/g)^(u-1) e^{-zeta/(2(1+g))} S(u-2; y)` where `F` and
/// `S` are the Poisson CDF and survival function. The survival form is the
/// bracketed difference of the textbook expression, rewritten so that the
/// large power never multiplies a cancelling difference.
pub fn pd_rayleigh(cfg: &DetectorConfig) -> f64 {
    let u = cfg.samples as i64;
    let g = cfg.mean_snr_linear();
    let zeta = cfg.threshold;
    let head = poisson_cdf(u - 2, zeta / 2.0);
    let y = zeta * g / (2.0 * (1.0 + g));
    let ln_tail = (u - 1) as f64 * ((1.0 + g) / g).ln() - zeta / (2.0 * (1.0 + g)) + ln_poisson_sf(u - 2, y);
    head + ln_tail.exp()
}

/// One sensing decision from sample-level statistics.
pub fn detect_sample_level<R: Rng + ?Sized>(cfg: &DetectorConfig, occupied: bool, rng: &mut R) -> bool {
    sample_energy(cfg, occupied, rng) > cfg.threshold
}

/// Detector energy: the sum of `2 * samples` squared unit normals, one of
/// them shifted by `sqrt(2 gamma)` when the subcarrier is occupied, with
/// `gamma` exponential of mean `mean_snr_linear()`.
pub fn sample_energy<R: Rng + ?Sized>(cfg: &DetectorConfig, occupied: bool, rng: &mut R) -> f64 {
    let shift = if occupied {
        let gamma: f64 = Exp1.sample(rng);
        (2.0 * gamma * cfg.mean_snr_linear()).sqrt()
    } else {
        0.0
    };
    let mut energy = 0.0;
    for i in 0..2 * cfg.samples {
        let z: f64 = StandardNormal.sample(rng);
        let z = if i == 0 { z + shift } else { z };
        energy += z * z;
    }
    energy
}

/// Which closed form the threshold is solved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdTarget {
    ForPfa,
    ForPd,
}

const THRESHOLD_TOLERANCE: f64 = 1e-9;

/// Threshold `zeta` at which `pfa` (or `pd_rayleigh`) equals `target`.
pub fn solve_threshold(
    samples: u32,
    target: f64,
    mode: ThresholdTarget,
    mean_snr_db: f64,
) -> Result<f64, SensingError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(SensingError::NoSolution { target });
    }
    let base = DetectorConfig::new(samples, 0.0, mean_snr_db)?;
    let eval = |zeta: f64| {
        let cfg = base.with_threshold(zeta);
        match mode {
            ThresholdTarget::ForPfa => pfa(&cfg),
            ThresholdTarget::ForPd => pd_rayleigh(&cfg),
        }
    };
    let mut lo = 0.0;
    let mut hi = (2.0 * samples as f64).max(1.0);
    let mut grow = 0;
    while eval(hi) > target {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 200 || !hi.is_finite() {
            return Err(SensingError::NoSolution { target });
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let achieved = eval(mid);
        if (achieved - target).abs() <= THRESHOLD_TOLERANCE {
            return Ok(mid);
        }
        if achieved > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Err(SensingError::NoSolution { target })
}

/// OR-rule fusion: `qfa = 1 - prod(1 - pfa_k)`, `qd = 1 - prod(1 - pd_k)`.
pub fn fuse_or(outcomes: &[SensingOutcome]) -> Result<FusionResult, SensingError> {
    if outcomes.is_empty() {
        return Err(SensingError::EmptyFusion);
    }
    // q <- q + p (1 - q) is 1 - prod(1 - p) accumulated without cancellation.
    let or = |acc: f64, p: f64| acc + p * (1.0 - acc);
    Ok(FusionResult {
        qfa: outcomes.iter().map(|o| o.pfa).fold(0.0, or),
        qd: outcomes.iter().map(|o| o.pd).fold(0.0, or),
        k_users: outcomes.len(),
    })
}

fn check_probability(name: &'static str, value: f64) -> Result<(), SensingError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(SensingError::InvalidProbability { name, value })
    }
}

/// Chip-zeroing and misdetection probabilities, identical for every subcarrier.
pub fn occupancy_model(pr_h1: f64, fused: &FusionResult) -> Result<OccupancyModel, SensingError> {
    check_probability("pr_h1", pr_h1)?;
    check_probability("qd", fused.qd)?;
    check_probability("qfa", fused.qfa)?;
    Ok(OccupancyModel {
        pr_h1,
        p_zero: pr_h1 * fused.qd + (1.0 - pr_h1) * fused.qfa,
        p_mis: (1.0 - fused.qd) * pr_h1,
    })
}

/// Detector design for `users` identical CRs meeting a fused detection target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingDesign {
    pub detector: DetectorConfig,
    pub per_user: SensingOutcome,
    pub fused: FusionResult,
}

/// Solves the common threshold so that OR fusion over `users` CRs reaches
/// `target_qd`, then reports the resulting per-user and fused probabilities.
pub fn design_for_fused_pd(
    samples: u32,
    mean_snr_db: f64,
    target_qd: f64,
    users: usize,
) -> Result<SensingDesign, SensingError> {
    if users == 0 {
        return Err(SensingError::EmptyFusion);
    }
    let per_user_pd = 1.0 - (1.0 - target_qd).powf(1.0 / users as f64);
    let zeta = solve_threshold(samples, per_user_pd, ThresholdTarget::ForPd, mean_snr_db)?;
    let detector = DetectorConfig::new(samples, zeta, mean_snr_db)?;
    let per_user = SensingOutcome::of(&detector);
    let fused = fuse_or(&vec![per_user; users])?;
    Ok(SensingDesign {
        detector,
        per_user,
        fused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use rand_distr::ChiSquared;

    const SNR_DB: f64 = 2.3;

    fn cfg(samples: u32, zeta: f64) -> DetectorConfig {
        DetectorConfig::new(samples, zeta, SNR_DB).unwrap()
    }

    #[test]
    fn pfa_examples() {
        assert_eq!(pfa(&cfg(5, 0.0)), 1.0);
        let oracle = (-5f64).exp() * (1.0 + 5.0 + 12.5 + 125.0 / 6.0 + 625.0 / 24.0);
        assert!((pfa(&cfg(5, 10.0)) - oracle).abs() < 1e-14);
        assert!((pfa(&cfg(5, 10.0)) - 0.440493).abs() < 1e-6);
        assert!(pfa(&cfg(5, 200.0)) < 1e-12);
    }

    #[test]
    fn pfa_large_sample_count_is_finite() {
        let p = pfa(&cfg(320, 640.0));
        assert!(p > 0.4 && p < 0.6, "{p}");
        assert!(pfa(&cfg(320, 5000.0)) < 1e-100);
    }

    #[test]
    fn pd_examples() {
        assert!((pd_rayleigh(&cfg(5, 0.0)) - 1.0).abs() < 1e-15);
        let hi = DetectorConfig::new(5, 10.0, 80.0).unwrap();
        assert!((pd_rayleigh(&hi) - 1.0).abs() < 1e-6);
        let hi = DetectorConfig::new(320, 700.0, 90.0).unwrap();
        assert!((pd_rayleigh(&hi) - 1.0).abs() < 1e-6);
    }

    /// Noncentral chi-squared drawn as `chi2(2u - 1) + (z + sqrt(2 gamma))^2`,
    /// independent of [`detect_sample_level`].
    fn pd_monte_carlo(c: &DetectorConfig, draws: u64) -> (f64, f64) {
        let mut rng = substream(99, Domain::SensingValidation, 0, 0);
        let chi = ChiSquared::new(2.0 * c.samples as f64 - 1.0).unwrap();
        let g = c.mean_snr_linear();
        let hits = (0..draws)
            .filter(|_| {
                let gamma = -g * (1.0 - rng.random::<f64>()).ln();
                let z: f64 = StandardNormal.sample(&mut rng);
                let e = chi.sample(&mut rng) + (z + (2.0 * gamma).sqrt()).powi(2);
                e > c.threshold
            })
            .count();
        let p = hits as f64 / draws as f64;
        (p, (p * (1.0 - p) / draws as f64).sqrt())
    }

    #[test]
    fn pd_matches_monte_carlo_oracle() {
        let c = cfg(5, 10.0);
        let (p, se) = pd_monte_carlo(&c, 1_000_000);
        let pd = pd_rayleigh(&c);
        assert!((pd - p).abs() < 3.0 * se, "closed {pd} mc {p} se {se}");
    }

    #[test]
    fn sample_level_rates_match_closed_forms() {
        let c = cfg(5, 10.0);
        let trials = 1_000_000;
        let mut rng = substream(1, Domain::SensingValidation, 1, 0);
        let fa = (0..trials).filter(|_| detect_sample_level(&c, false, &mut rng)).count() as f64 / trials as f64;
        let d = (0..trials).filter(|_| detect_sample_level(&c, true, &mut rng)).count() as f64 / trials as f64;
        let (p0, p1) = (pfa(&c), pd_rayleigh(&c));
        let se = |p: f64| (p * (1.0 - p) / trials as f64).sqrt();
        assert!((fa - 0.4405).abs() < 3.0 * se(p0) + 1e-4);
        assert!((fa - p0).abs() < 3.0 * se(p0), "{fa} vs {p0}");
        assert!((d - p1).abs() < 3.0 * se(p1), "{d} vs {p1}");

        let always = c.with_threshold(0.0);
        assert!((0..1000).all(|_| detect_sample_level(&always, false, &mut rng)));
    }

    #[test]
    fn threshold_solver() {
        let z = solve_threshold(5, 0.440493, ThresholdTarget::ForPfa, SNR_DB).unwrap();
        assert!((z - 10.0).abs() < 1e-5, "{z}");
        let z = solve_threshold(5, 0.44049328506521257, ThresholdTarget::ForPfa, SNR_DB).unwrap();
        assert!((z - 10.0).abs() < 1e-6, "{z}");
        assert_eq!(
            solve_threshold(5, 1.0, ThresholdTarget::ForPfa, SNR_DB),
            Err(SensingError::NoSolution { target: 1.0 })
        );
        let z = solve_threshold(5, 0.95, ThresholdTarget::ForPd, SNR_DB).unwrap();
        assert!((pd_rayleigh(&cfg(5, z)) - 0.95).abs() <= 1e-9);
    }

    #[test]
    fn threshold_round_trip_grid() {
        for samples in [2u32, 5, 40, 320] {
            for i in 1..=99 {
                let t = i as f64 / 100.0;
                for mode in [ThresholdTarget::ForPfa, ThresholdTarget::ForPd] {
                    let z = solve_threshold(samples, t, mode, SNR_DB).unwrap();
                    let c = cfg(samples, z);
                    let got = match mode {
                        ThresholdTarget::ForPfa => pfa(&c),
                        ThresholdTarget::ForPd => pd_rayleigh(&c),
                    };
                    assert!((got - t).abs() <= 1e-8, "u={samples} t={t} {mode:?} got {got}");
                }
            }
        }
    }

    #[test]
    fn monotonicity_on_grids() {
        for samples in [2u32, 5, 32, 320] {
            let zetas: Vec<f64> = (0..200).map(|i| i as f64 * samples as f64 * 0.02).collect();
            for w in zetas.windows(2) {
                let (a, b) = (cfg(samples, w[0]), cfg(samples, w[1]));
                assert!(pfa(&a) >= pfa(&b));
                assert!(pd_rayleigh(&a) >= pd_rayleigh(&b));
                if pfa(&b) > 1e-300 && pfa(&a) < 1.0 - 1e-12 {
                    assert!(pfa(&a) > pfa(&b), "pfa not strict at u={samples}, {w:?}");
                }
            }
            for &z in &zetas[1..] {
                let mut prev = 0.0;
                for db in (-10..=20).map(|d| d as f64) {
                    let c = DetectorConfig::new(samples, z, db).unwrap();
                    let pd = pd_rayleigh(&c);
                    assert!(pd >= prev - 1e-15, "pd not increasing in snr u={samples} z={z} db={db}");
                    assert!(pd + 1e-12 >= pfa(&c), "pd<pfa u={samples} z={z} db={db}");
                    assert!((0.0..=1.0 + 1e-12).contains(&pd));
                    prev = pd;
                }
            }
        }
    }

    #[test]
    fn fusion_examples() {
        let o = |pfa, pd| SensingOutcome { pfa, pd };
        let f = fuse_or(&[o(0.1, 0.5)]).unwrap();
        assert_eq!((f.qfa, f.qd), (0.1, 0.5));
        let f = fuse_or(&[o(0.1, 0.5), o(0.1, 0.5)]).unwrap();
        assert!((f.qfa - 0.19).abs() < 1e-15);
        let f = fuse_or(&[o(0.0, 0.0); 5]).unwrap();
        assert_eq!(f.qd, 0.0);
        assert_eq!(fuse_or(&[]), Err(SensingError::EmptyFusion));
    }

    #[test]
    fn fusion_is_monotone_in_users() {
        let outcomes: Vec<_> = (0..8)
            .map(|k| SensingOutcome {
                pfa: 0.01 * (k + 1) as f64,
                pd: 0.3 + 0.05 * k as f64,
            })
            .collect();
        for k in 1..outcomes.len() {
            let a = fuse_or(&outcomes[..k]).unwrap();
            let b = fuse_or(&outcomes[..k + 1]).unwrap();
            assert!(b.qfa >= a.qfa && b.qd >= a.qd);
            let max_pfa = outcomes[..k].iter().map(|o| o.pfa).fold(0.0, f64::max);
            assert!(a.qfa >= max_pfa);
        }
    }

    #[test]
    fn occupancy_examples() {
        let fused = FusionResult {
            qfa: 0.05,
            qd: 0.95,
            k_users: 1,
        };
        let m = occupancy_model(0.2, &fused).unwrap();
        assert!((m.p_zero - 0.23).abs() < 1e-15);
        assert!((m.p_mis - 0.01).abs() < 1e-15);
        let m = occupancy_model(0.0, &fused).unwrap();
        assert_eq!((m.p_zero, m.p_mis), (0.05, 0.0));
        assert!(occupancy_model(1.5, &fused).is_err());
    }

    #[test]
    fn occupancy_matches_event_enumeration() {
        // Enumerate the (occupied, decided busy) table directly.
        for &(pr, qd, qfa) in &[(0.2, 0.95, 0.05), (0.7, 0.3, 0.4), (0.0, 1.0, 0.0), (1.0, 0.5, 0.9)] {
            let fused = FusionResult { qfa, qd, k_users: 2 };
            let m = occupancy_model(pr, &fused).unwrap();
            let mut zero = 0.0;
            let mut mis = 0.0;
            let mut clean = 0.0;
            for occupied in [false, true] {
                for decided in [false, true] {
                    let p_occ = if occupied { pr } else { 1.0 - pr };
                    let p_dec = match (occupied, decided) {
                        (true, true) => qd,
                        (true, false) => 1.0 - qd,
                        (false, true) => qfa,
                        (false, false) => 1.0 - qfa,
                    };
                    let w = p_occ * p_dec;
                    match (occupied, decided) {
                        (_, true) => zero += w,
                        (true, false) => mis += w,
                        (false, false) => clean += w,
                    }
                }
            }
            assert!((m.p_zero - zero).abs() < 1e-15);
            assert!((m.p_mis - mis).abs() < 1e-15);
            assert!((m.p_clean() - clean).abs() < 1e-15);
            assert!((m.p_zero + m.p_mis + (1.0 - pr) * (1.0 - qfa) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn design_meets_fused_target() {
        for users in [1usize, 4, 8] {
            let d = design_for_fused_pd(320, SNR_DB, 0.95, users).unwrap();
            assert!((d.fused.qd - 0.95).abs() < 1e-8);
            assert!(d.fused.qfa >= d.per_user.pfa);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(DetectorConfig::new(1, 1.0, 0.0).is_err());
        assert!(DetectorConfig::new(5, -1.0, 0.0).is_err());
        assert!(DetectorConfig::new(5, f64::NAN, 0.0).is_err());
    }
}
