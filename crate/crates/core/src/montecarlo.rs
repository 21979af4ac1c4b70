//! Monte Carlo BER estimation with analytic overlays.
//!
//! A point is simulated in rounds of [`SLOTS_PER_ROUND`] slots. Slot `s` of a
//! point draws everything from its own substream, and rounds are reduced
//! with integer counters, so a point's result does not depend on how rayon
//! schedules the slots. The stopping rule is checked only between rounds.

use std::fmt::Write as _;
use std::io;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ber_analysis::{variance_terms, AnalysisError, BerPoint, PeCalculator, Placement, VarianceBreakdown};
use crate::orthocodes::{CodeBook, CodeError, CodePolicy, ModifiedSignature};
use crate::phylink::{
    complex_gaussian, draw_slot, transmit_and_receive, DetectionProbs, PhyError, SensingState, SlotRealization,
    SystemParams,
};
use crate::rng::{substream, Domain};
use crate::sensing::{db_to_linear, design_for_fused_pd, occupancy_model, SensingDesign, SensingError};

/// Slots simulated between two checks of the stopping rule.
pub const SLOTS_PER_ROUND: u64 = 256;

const Z95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Code(#[from] CodeError),
}

/// How the configured sensing SNR relates to the detector's window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SensingSnr {
    /// The configured SNR is per sample; the window SNR is `samples` times larger.
    #[default]
    PerSample,
    /// The configured SNR already refers to the whole sensing window.
    Window,
}

impl SensingSnr {
    pub fn name(self) -> &'static str {
        match self {
            SensingSnr::PerSample => "per_sample",
            SensingSnr::Window => "window",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per_sample" => Some(SensingSnr::PerSample),
            "window" => Some(SensingSnr::Window),
            _ => None,
        }
    }
}

/// Everything a BER sweep depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Link parameters; `noise_psd` and `interference_power` are overridden per point.
    pub params: SystemParams,
    pub policy: CodePolicy,
    /// Sensing samples per CR `mu * tau`.
    pub sensing_samples: u32,
    pub sensing_snr_db: f64,
    pub sensing_snr: SensingSnr,
    /// Fused detection probability the common threshold is solved for.
    pub target_pd: f64,
    /// `sigma_s^2 / sigma_n^2` in dB.
    pub inr_db: f64,
    pub snr_grid_db: Vec<f64>,
    /// Minimum simulated bits per point.
    pub trials_min: u64,
    pub target_error_events: u64,
    /// Bit budget per point; reaching it ends the point regardless of errors.
    pub max_trials: u64,
    pub master_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: SystemParams::default(),
            policy: CodePolicy::MultiLevel,
            sensing_samples: 320,
            sensing_snr_db: 2.3,
            sensing_snr: SensingSnr::PerSample,
            target_pd: 0.95,
            inr_db: 0.0,
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            trials_min: 100_000,
            target_error_events: 100,
            max_trials: 20_000_000,
            master_seed: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.snr_grid_db.is_empty() {
            return bad("snr grid is empty".into());
        }
        if let Some(s) = self.snr_grid_db.iter().find(|s| !s.is_finite()) {
            return bad(format!("non-finite grid SNR {s}"));
        }
        if self.trials_min == 0 || self.target_error_events == 0 {
            return bad("trials_min and target_error_events must be positive".into());
        }
        if self.max_trials < self.trials_min {
            return bad(format!(
                "max_trials {} is below trials_min {}",
                self.max_trials, self.trials_min
            ));
        }
        if !(self.target_pd > 0.0 && self.target_pd < 1.0) {
            return bad(format!("target_pd must lie in (0, 1), got {}", self.target_pd));
        }
        if !self.inr_db.is_finite() || !self.sensing_snr_db.is_finite() {
            return bad("inr_db and sensing_snr_db must be finite".into());
        }
        self.params.validate()?;
        Ok(())
    }

    /// Window SNR handed to the detector formulas.
    pub fn detector_snr_db(&self) -> f64 {
        match self.sensing_snr {
            SensingSnr::Window => self.sensing_snr_db,
            SensingSnr::PerSample => self.sensing_snr_db + 10.0 * (self.sensing_samples as f64).log10(),
        }
    }

    /// Parameters used at one operating point (`energy_per_bit / noise_psd` = `snr_db`).
    pub fn params_at(&self, n_users: usize, snr_db: f64) -> SystemParams {
        let noise_psd = self.params.energy_per_bit / db_to_linear(snr_db);
        SystemParams {
            n_users,
            noise_psd,
            interference_power: noise_psd * db_to_linear(self.inr_db),
            ..self.params
        }
    }

    /// Sensing design for `users` cooperating CRs.
    pub fn sensing_design(&self, users: usize) -> Result<SensingDesign, SimError> {
        Ok(design_for_fused_pd(
            self.sensing_samples,
            self.detector_snr_db(),
            self.target_pd,
            users,
        )?)
    }

    /// One `key=value` line per field, in a fixed order.
    pub fn canonical(&self) -> String {
        let p = &self.params;
        let grid: Vec<String> = self.snr_grid_db.iter().map(|s| s.to_string()).collect();
        let mut out = String::new();
        for (k, v) in [
            ("params.n_subcarriers", p.n_subcarriers.to_string()),
            ("params.n_users", p.n_users.to_string()),
            ("params.pr_h1", p.pr_h1.to_string()),
            ("params.energy_per_bit", p.energy_per_bit.to_string()),
            ("params.bit_duration", p.bit_duration.to_string()),
            ("params.slot_duration", p.slot_duration.to_string()),
            ("params.sensing_duration", p.sensing_duration.to_string()),
            ("params.inr_db", self.inr_db.to_string()),
            ("code.policy", self.policy.name().to_string()),
            ("detector.samples", self.sensing_samples.to_string()),
            ("detector.mean_snr_db", self.sensing_snr_db.to_string()),
            ("detector.snr_mode", self.sensing_snr.name().to_string()),
            ("run.target_pd", self.target_pd.to_string()),
            ("run.snr_grid_db", grid.join(";")),
            ("run.trials_min", self.trials_min.to_string()),
            ("run.target_error_events", self.target_error_events.to_string()),
            ("run.max_trials", self.max_trials.to_string()),
            ("run.master_seed", self.master_seed.to_string()),
        ] {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded.
    pub fn digest(&self) -> String {
        hex_digest(self.canonical().as_bytes())
    }
}

/// Lowercase hex SHA-256.
pub fn hex_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Estimated BER curve.
#[derive(Debug, Clone, PartialEq)]
pub struct BerCurve {
    pub points: Vec<BerPoint>,
    pub config_digest: String,
    pub elapsed: f64,
}

/// Wald 95% half-width, or the rule-of-three bound `3 / trials` with no errors.
pub fn confidence_halfwidth(errors: u64, trials: u64) -> f64 {
    if trials == 0 {
        return f64::INFINITY;
    }
    if errors == 0 {
        return 3.0 / trials as f64;
    }
    let p = errors as f64 / trials as f64;
    Z95 * (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    bits: u64,
    errors: u64,
}

impl Tally {
    fn add(self, o: Tally) -> Tally {
        Tally {
            bits: self.bits + o.bits,
            errors: self.errors + o.errors,
        }
    }
}

fn point_key(n_users: usize, snr_db: f64) -> u64 {
    snr_db.to_bits() ^ (n_users as u64).rotate_left(40)
}

fn simulate_slot(
    params: &SystemParams,
    probs: DetectionProbs,
    book: &CodeBook,
    policy: CodePolicy,
    seed: u64,
    key: u64,
    slot: u64,
) -> Result<Tally, SimError> {
    let mut rng = substream(seed, Domain::Slots, key, slot);
    let bits_per_slot = params.bits_per_slot() as u64;
    let realization = match draw_slot(params, probs, book, policy, &mut rng) {
        Ok(r) => r,
        Err(PhyError::Capacity { .. }) => {
            // Nothing is transmitted; the receiver guesses.
            let errors = (0..bits_per_slot).filter(|_| rng.random::<bool>()).count() as u64;
            return Ok(Tally {
                bits: bits_per_slot,
                errors,
            });
        }
        Err(e) => return Err(e.into()),
    };
    let mut bits = vec![0i8; params.n_users];
    let mut errors = 0;
    for _ in 0..bits_per_slot {
        for b in bits.iter_mut() {
            *b = if rng.random::<bool>() { 1 } else { -1 };
        }
        let out = transmit_and_receive(&realization, params, &bits, &mut rng)?;
        errors += (out.decided_bit != bits[0]) as u64;
    }
    Ok(Tally {
        bits: bits_per_slot,
        errors,
    })
}

/// Simulated and analytic BER at one `(K, SNR)` point.
pub fn estimate_point(cfg: &RunConfig, n_users: usize, snr_db: f64) -> Result<BerPoint, SimError> {
    let params = cfg.params_at(n_users, snr_db);
    params.validate()?;
    let design = cfg.sensing_design(n_users)?;
    let probs = DetectionProbs {
        pd: design.per_user.pd,
        pfa: design.per_user.pfa,
    };
    let book = CodeBook::new(params.n_subcarriers)?;
    let model = occupancy_model(params.pr_h1, &design.fused)?;
    let ber_analytic = PeCalculator::new((&params).into(), cfg.policy, Placement::Exact)?.average_pe(&model)?;

    let key = point_key(n_users, snr_db);
    let mut total = Tally::default();
    let mut next_slot = 0u64;
    while !(total.bits >= cfg.trials_min && total.errors >= cfg.target_error_events) && total.bits < cfg.max_trials {
        let round = (next_slot..next_slot + SLOTS_PER_ROUND)
            .into_par_iter()
            .map(|s| simulate_slot(&params, probs, &book, cfg.policy, cfg.master_seed, key, s))
            .try_reduce(Tally::default, |a, b| Ok(a.add(b)))?;
        total = total.add(round);
        next_slot += SLOTS_PER_ROUND;
    }
    let ber = total.errors as f64 / total.bits as f64;
    Ok(BerPoint {
        snr_db,
        n_users,
        ber_analytic,
        ber_simulated: Some(ber),
        ci_halfwidth: Some(confidence_halfwidth(total.errors, total.bits)),
        trials: total.bits,
        errors: total.errors,
        upper_bound: total.errors == 0,
    })
}

/// [`estimate_point`] at the configured user count.
pub fn estimate_ber(cfg: &RunConfig, snr_db: f64) -> Result<BerPoint, SimError> {
    cfg.validate()?;
    estimate_point(cfg, cfg.params.n_users, snr_db)
}

/// Analytic BER at one point, without simulation.
pub fn analytic_point(cfg: &RunConfig, n_users: usize, snr_db: f64) -> Result<BerPoint, SimError> {
    let params = cfg.params_at(n_users, snr_db);
    params.validate()?;
    let design = cfg.sensing_design(n_users)?;
    let model = occupancy_model(params.pr_h1, &design.fused)?;
    let pe = PeCalculator::new((&params).into(), cfg.policy, Placement::Exact)?.average_pe(&model)?;
    Ok(BerPoint::analytic(snr_db, n_users, pe))
}

fn run_points(cfg: &RunConfig, points: &[(usize, f64)], simulate: bool) -> Result<BerCurve, SimError> {
    cfg.validate()?;
    let start = Instant::now();
    let points = points
        .iter()
        .map(|&(k, snr)| {
            if simulate {
                estimate_point(cfg, k, snr)
            } else {
                analytic_point(cfg, k, snr)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BerCurve {
        points,
        config_digest: cfg.digest(),
        elapsed: start.elapsed().as_secs_f64(),
    })
}

/// One simulated point per grid SNR, sorted by SNR.
pub fn sweep(cfg: &RunConfig) -> Result<BerCurve, SimError> {
    run_points(cfg, &snr_points(cfg), true)
}

/// Analytic-only counterpart of [`sweep`].
pub fn analytic_sweep(cfg: &RunConfig) -> Result<BerCurve, SimError> {
    run_points(cfg, &snr_points(cfg), false)
}

/// BER against the number of users at a fixed SNR.
pub fn sweep_users(cfg: &RunConfig, users: &[usize], snr_db: f64, simulate: bool) -> Result<BerCurve, SimError> {
    if users.is_empty() {
        return Err(SimError::InvalidConfig("user grid is empty".into()));
    }
    let points: Vec<(usize, f64)> = users.iter().map(|&k| (k, snr_db)).collect();
    run_points(cfg, &points, simulate)
}

fn snr_points(cfg: &RunConfig) -> Vec<(usize, f64)> {
    let mut grid = cfg.snr_grid_db.clone();
    grid.sort_by(f64::total_cmp);
    grid.into_iter().map(|s| (cfg.params.n_users, s)).collect()
}

/// CSV layout of a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvLayout {
    /// `snr_db,ber_analytic`.
    Analytic,
    /// `snr_db,ber_analytic,ber_sim,ci_halfwidth,trials,errors`.
    Simulated,
    /// As [`CsvLayout::Simulated`], prefixed with a `k_users` column.
    UsersSimulated,
    /// `k_users,snr_db,ber_analytic`.
    UsersAnalytic,
}

impl CsvLayout {
    pub fn header(self) -> &'static str {
        match self {
            CsvLayout::Analytic => "snr_db,ber_analytic",
            CsvLayout::Simulated => "snr_db,ber_analytic,ber_sim,ci_halfwidth,trials,errors",
            CsvLayout::UsersSimulated => "k_users,snr_db,ber_analytic,ber_sim,ci_halfwidth,trials,errors",
            CsvLayout::UsersAnalytic => "k_users,snr_db,ber_analytic",
        }
    }
}

/// Writes the header and one row per point. Comment lines are the caller's.
pub fn write_curve_rows<W: io::Write>(out: &mut W, curve: &BerCurve, layout: CsvLayout) -> io::Result<()> {
    writeln!(out, "{}", layout.header())?;
    for p in &curve.points {
        let users = matches!(layout, CsvLayout::UsersSimulated | CsvLayout::UsersAnalytic);
        if users {
            write!(out, "{},", p.n_users)?;
        }
        write!(out, "{},{:.9e}", p.snr_db, p.ber_analytic)?;
        if matches!(layout, CsvLayout::Simulated | CsvLayout::UsersSimulated) {
            write!(
                out,
                ",{:.9e},{:.9e},{},{}",
                p.ber_simulated.unwrap_or(f64::NAN),
                p.ci_halfwidth.unwrap_or(f64::NAN),
                p.trials,
                p.errors
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Empirical against predicted variance of one decision-variable term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentComparison {
    pub name: &'static str,
    pub empirical: f64,
    pub predicted: f64,
    pub stderr: f64,
}

impl MomentComparison {
    pub fn z_score(&self) -> f64 {
        if self.stderr == 0.0 {
            return if self.empirical == self.predicted {
                0.0
            } else {
                f64::INFINITY
            };
        }
        (self.empirical - self.predicted) / self.stderr
    }
}

/// Fixed link state for a moment check: the first `m` subcarriers are
/// estimated busy and the next `l` are occupied but estimated free.
pub fn fixed_state(params: &SystemParams, m: usize, l: usize) -> Result<SensingState, SimError> {
    let n = params.n_subcarriers;
    if m + l > n {
        return Err(SimError::InvalidConfig(format!("m + l = {} exceeds N = {n}", m + l)));
    }
    let est_busy: Vec<bool> = (0..n).map(|j| j < m).collect();
    let occupancy: Vec<bool> = (0..n).map(|j| j < m + l).collect();
    Ok(SensingState::from_masks(occupancy, est_busy, params.n_users)?)
}

/// Simulates `trials` independent channel/noise draws for a fixed `(m, l)`
/// state and compares the variances of `R_s`, `R_MAI`, `R_GI`, `R_n` with
/// [`variance_terms`].
pub fn moment_check(
    params: &SystemParams,
    policy: CodePolicy,
    m: usize,
    l: usize,
    trials: u64,
    seed: u64,
) -> Result<[MomentComparison; 4], SimError> {
    params.validate()?;
    if trials < 2 {
        return Err(SimError::InvalidConfig("moment check needs at least 2 trials".into()));
    }
    let book = CodeBook::new(params.n_subcarriers)?;
    let state = fixed_state(params, m, l)?;
    let lambda = state.misdetected.clone();
    let signatures = book.assign(policy, &state.est_busy, params.n_users)?;
    let sigs: &[ModifiedSignature] = &signatures.signatures;
    let predicted: VarianceBreakdown = variance_terms(
        &sigs[0],
        &sigs[1..],
        &lambda,
        params.energy_per_bit,
        params.noise_psd,
        params.interference_power,
    )?;

    let sums = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<[[f64; 4]; 4], SimError> {
            let mut rng = substream(seed, Domain::MomentCheck, (m * 1000 + l) as u64, t);
            let gains = (0..params.n_users)
                .map(|_| {
                    (0..params.n_subcarriers)
                        .map(|_| complex_gaussian(&mut rng, 1.0))
                        .collect()
                })
                .collect();
            let slot = SlotRealization {
                occupancy: state.occupancy.clone(),
                decisions: state.decisions.clone(),
                est_busy: state.est_busy.clone(),
                misdetected: lambda.clone(),
                gains,
                signatures: signatures.clone(),
            };
            // The variances are conditional on user 1 sending +1.
            let bits: Vec<i8> = (0..params.n_users)
                .map(|k| if k == 0 || rng.random() { 1 } else { -1 })
                .collect();
            let out = transmit_and_receive(&slot, params, &bits, &mut rng)?;
            let x = [out.r_s, out.r_mai, out.r_gi, out.r_n];
            // Power sums 1..4 per component.
            let mut acc = [[0.0; 4]; 4];
            for (c, &v) in x.iter().enumerate() {
                let mut p = 1.0;
                for a in acc[c].iter_mut() {
                    p *= v;
                    *a = p;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>, _>>()?;
    // Sequential reduction keeps the floating-point sum order fixed.
    let mut s = [[0.0f64; 4]; 4];
    for acc in &sums {
        for c in 0..4 {
            for j in 0..4 {
                s[c][j] += acc[c][j];
            }
        }
    }
    let n = trials as f64;
    let names = ["R_s", "R_MAI", "R_GI", "R_n"];
    let pred = [predicted.var_s, predicted.var_mai, predicted.var_gi, predicted.var_n];
    Ok(std::array::from_fn(|c| {
        let mean = s[c][0] / n;
        let m2 = s[c][1] / n - mean * mean;
        let m4 = s[c][3] / n - 4.0 * mean * s[c][2] / n + 6.0 * mean * mean * s[c][1] / n - 3.0 * mean.powi(4);
        let empirical = m2 * n / (n - 1.0);
        MomentComparison {
            name: names[c],
            empirical,
            predicted: pred[c],
            stderr: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
        }
    }))
}
