//! Frequency-domain equivalent link for one slot.
//!
//! Each subcarrier sees flat Rayleigh fading, so after the DFT the receiver
//! observes, per subcarrier `n`,
//!
//! ```text
//! r_n = sum_k sqrt(P_k) beta_n^k d^k c_n^k + u_n s_n + v_n
//! ```
//!
//! where `u_n = 1` on misdetected subcarriers, `s_n` is primary-user
//! interference and `v_n` is noise. User 1 (index 0) combines with perfect
//! channel knowledge: `R = sum_n sqrt(P_1) Re{conj(beta_n^1) c_n^1 r_n}`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::orthocodes::{CodeBook, CodeError, CodePolicy, SignatureSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhyError {
    #[error("invalid system parameters: {0}")]
    InvalidParams(String),
    #[error("{users} users but only {rows} orthogonal rows for this slot")]
    Capacity { users: usize, rows: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite decision variable")]
    NonFinite,
    #[error(transparent)]
    Code(CodeError),
}

impl From<CodeError> for PhyError {
    fn from(e: CodeError) -> Self {
        match e {
            CodeError::Capacity { users, rows } => PhyError::Capacity { users, rows },
            other => PhyError::Code(other),
        }
    }
}

/// Link-level system parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    pub n_subcarriers: usize,
    pub n_users: usize,
    /// Prior probability that a subcarrier is occupied by a primary user.
    pub pr_h1: f64,
    pub energy_per_bit: f64,
    /// Noise variance per subcarrier `sigma_n^2`.
    pub noise_psd: f64,
    /// Primary-user interference variance `sigma_s^2` on misdetected subcarriers.
    pub interference_power: f64,
    /// Bit duration `T_b` in seconds.
    pub bit_duration: f64,
    /// Slot duration `T` in seconds.
    pub slot_duration: f64,
    /// Sensing phase `tau` in seconds.
    pub sensing_duration: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            n_subcarriers: 32,
            n_users: 4,
            pr_h1: 0.2,
            energy_per_bit: 1.0,
            noise_psd: 0.1,
            interference_power: 0.1,
            bit_duration: 10e-6,
            slot_duration: 1e-3,
            sensing_duration: 0.1e-3,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<(), PhyError> {
        let bad = |msg: String| Err(PhyError::InvalidParams(msg));
        if self.n_subcarriers == 0 {
            return bad("n_subcarriers must be positive".into());
        }
        if self.n_users == 0 || self.n_users > self.n_subcarriers {
            return bad(format!(
                "n_users must be in 1..={}, got {}",
                self.n_subcarriers, self.n_users
            ));
        }
        if !(0.0..=1.0).contains(&self.pr_h1) {
            return bad(format!("pr_h1 must be a probability, got {}", self.pr_h1));
        }
        if !(self.energy_per_bit > 0.0 && self.energy_per_bit.is_finite()) {
            return bad(format!("energy_per_bit must be positive, got {}", self.energy_per_bit));
        }
        for (name, v) in [
            ("noise_psd", self.noise_psd),
            ("interference_power", self.interference_power),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(self.bit_duration > 0.0) || !(self.slot_duration > 0.0) || !(self.sensing_duration >= 0.0) {
            return bad("durations must be positive".into());
        }
        if self.sensing_duration >= self.slot_duration {
            return bad(format!(
                "sensing_duration {} must be shorter than slot_duration {}",
                self.sensing_duration, self.slot_duration
            ));
        }
        if self.bits_per_slot() == 0 {
            return bad("transmission phase is shorter than one bit".into());
        }
        Ok(())
    }

    /// Two-sided null-to-null subcarrier bandwidth `2 / T_b`.
    pub fn subcarrier_bandwidth(&self) -> f64 {
        2.0 / self.bit_duration
    }

    /// Bits per user in the transmission phase: `floor((T - tau) / T_b)`.
    pub fn bits_per_slot(&self) -> usize {
        let ratio = (self.slot_duration - self.sensing_duration) / self.bit_duration;
        // Durations such as 0.9 ms / 10 us land a hair under the integer.
        (ratio * (1.0 + 1e-12)).floor() as usize
    }

    /// `energy_per_bit / noise_psd` in dB.
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.energy_per_bit / self.noise_psd).log10()
    }
}

/// Per-user local decision probabilities used by the Bernoulli shortcut.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionProbs {
    pub pd: f64,
    pub pfa: f64,
}

/// Ground truth and sensing decisions of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingState {
    pub occupancy: Vec<bool>,
    /// `decisions[k][n]`: user `k` declared subcarrier `n` busy.
    pub decisions: Vec<Vec<bool>>,
    /// OR over users of `decisions`.
    pub est_busy: Vec<bool>,
    /// Occupied subcarriers estimated free, ascending.
    pub misdetected: Vec<usize>,
}

impl SensingState {
    /// Builds the state from ground truth and the fused estimate; every user
    /// is recorded as reporting the fused estimate.
    pub fn from_masks(occupancy: Vec<bool>, est_busy: Vec<bool>, users: usize) -> Result<Self, PhyError> {
        if occupancy.len() != est_busy.len() {
            return Err(PhyError::Dimension {
                expected: occupancy.len(),
                got: est_busy.len(),
            });
        }
        let misdetected = misdetections(&occupancy, &est_busy);
        Ok(Self {
            decisions: vec![est_busy.clone(); users],
            occupancy,
            est_busy,
            misdetected,
        })
    }

    pub fn n_busy_true(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    pub fn n_est_busy(&self) -> usize {
        self.est_busy.iter().filter(|&&b| b).count()
    }

    pub fn n_misdetected(&self) -> usize {
        self.misdetected.len()
    }

    pub fn n_est_free(&self) -> usize {
        self.est_busy.len() - self.n_est_busy()
    }
}

fn misdetections(occupancy: &[bool], est_busy: &[bool]) -> Vec<usize> {
    occupancy
        .iter()
        .zip(est_busy)
        .enumerate()
        .filter(|(_, (&occ, &busy))| occ && !busy)
        .map(|(n, _)| n)
        .collect()
}

/// Draws occupancy and per-user Bernoulli sensing decisions.
pub fn draw_sensing<R: Rng + ?Sized>(params: &SystemParams, probs: DetectionProbs, rng: &mut R) -> SensingState {
    let n = params.n_subcarriers;
    let occupancy: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < params.pr_h1).collect();
    let decisions: Vec<Vec<bool>> = (0..params.n_users)
        .map(|_| {
            occupancy
                .iter()
                .map(|&occ| rng.random::<f64>() < if occ { probs.pd } else { probs.pfa })
                .collect()
        })
        .collect();
    let est_busy: Vec<bool> = (0..n).map(|i| decisions.iter().any(|d| d[i])).collect();
    let misdetected = misdetections(&occupancy, &est_busy);
    SensingState {
        occupancy,
        decisions,
        est_busy,
        misdetected,
    }
}

/// Everything random about a slot except the per-bit noise and interference.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRealization {
    pub occupancy: Vec<bool>,
    pub decisions: Vec<Vec<bool>>,
    pub est_busy: Vec<bool>,
    pub misdetected: Vec<usize>,
    /// `gains[k][n]`: unit-variance circular Gaussian channel of user `k`.
    pub gains: Vec<Vec<Complex64>>,
    pub signatures: SignatureSet,
}

impl SlotRealization {
    /// Assigns signatures for `sensing` and draws the channel gains.
    pub fn realize<R: Rng + ?Sized>(
        sensing: SensingState,
        params: &SystemParams,
        codebook: &CodeBook,
        policy: CodePolicy,
        rng: &mut R,
    ) -> Result<Self, PhyError> {
        let signatures = codebook.assign(policy, &sensing.est_busy, params.n_users)?;
        let gains = (0..params.n_users)
            .map(|_| (0..params.n_subcarriers).map(|_| complex_gaussian(rng, 1.0)).collect())
            .collect();
        Ok(Self {
            occupancy: sensing.occupancy,
            decisions: sensing.decisions,
            est_busy: sensing.est_busy,
            misdetected: sensing.misdetected,
            gains,
            signatures,
        })
    }

    pub fn n_subcarriers(&self) -> usize {
        self.est_busy.len()
    }

    pub fn n_users(&self) -> usize {
        self.signatures.signatures.len()
    }

    pub fn is_misdetected(&self, n: usize) -> bool {
        self.misdetected.binary_search(&n).is_ok()
    }
}

/// Occupancy draw, sensing, signature assignment and channel draw for one slot.
pub fn draw_slot<R: Rng + ?Sized>(
    params: &SystemParams,
    probs: DetectionProbs,
    codebook: &CodeBook,
    policy: CodePolicy,
    rng: &mut R,
) -> Result<SlotRealization, PhyError> {
    let sensing = draw_sensing(params, probs, rng);
    SlotRealization::realize(sensing, params, codebook, policy, rng)
}

/// Circularly symmetric complex Gaussian with total variance `variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Receiver output for one bit of user 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverOutput {
    pub test_statistics: Vec<Complex64>,
    pub decision_variable: f64,
    pub r_s: f64,
    pub r_mai: f64,
    pub r_gi: f64,
    pub r_n: f64,
    pub decided_bit: i8,
    /// Interference draws `s_n` (zero off the misdetection set).
    pub interference: Vec<Complex64>,
    /// Noise draws `v_n`.
    pub noise: Vec<Complex64>,
}

/// Transmits one bit per user through `slot` and runs user 1's correlation receiver.
///
/// `bits[k]` must be `+1` or `-1`. Interference is drawn for each misdetected
/// subcarrier in ascending order, then noise for every subcarrier.
pub fn transmit_and_receive<R: Rng + ?Sized>(
    slot: &SlotRealization,
    params: &SystemParams,
    bits: &[i8],
    rng: &mut R,
) -> Result<ReceiverOutput, PhyError> {
    let n = slot.n_subcarriers();
    let users = slot.n_users();
    if bits.len() != users {
        return Err(PhyError::Dimension {
            expected: users,
            got: bits.len(),
        });
    }
    if bits.iter().any(|&b| b != 1 && b != -1) {
        return Err(PhyError::InvalidParams("bits must be +1 or -1".into()));
    }
    let amp: Vec<f64> = slot
        .signatures
        .signatures
        .iter()
        .map(|s| (params.energy_per_bit / s.energy() as f64).sqrt())
        .collect();
    let mut interference = vec![Complex64::new(0.0, 0.0); n];
    for &j in &slot.misdetected {
        interference[j] = complex_gaussian(rng, params.interference_power);
    }
    let noise: Vec<Complex64> = (0..n).map(|_| complex_gaussian(rng, params.noise_psd)).collect();

    let sigs = &slot.signatures.signatures;
    let chip = |k: usize, i: usize| sigs[k].chips()[i] as f64;
    let (mut gain_energy, mut r_mai, mut r_gi, mut r_n) = (0.0, 0.0, 0.0, 0.0);
    let mut test_statistics = Vec::with_capacity(n);
    for i in 0..n {
        let b1 = slot.gains[0][i];
        let c1 = chip(0, i);
        let mut r = interference[i] + noise[i];
        for k in 0..users {
            r += slot.gains[k][i] * (amp[k] * bits[k] as f64 * chip(k, i));
        }
        test_statistics.push(r);
        let w = amp[0] * c1;

        gain_energy += b1.norm_sqr() * c1 * c1;
        for k in 1..users {
            r_mai += amp[0] * amp[k] * (b1.conj() * slot.gains[k][i]).re * bits[k] as f64 * c1 * chip(k, i);
        }
        r_gi += w * (b1.conj() * interference[i]).re;
        r_n += w * (b1.conj() * noise[i]).re;
    }
    // P_1 sum |beta|^2 c^2 with P_1 = eps_b / E_1, kept as one division so a
    // flat unit channel returns eps_b exactly.
    let r_s = bits[0] as f64 * params.energy_per_bit * gain_energy / sigs[0].energy() as f64;
    let big_r = r_s + r_mai + r_gi + r_n;
    if !big_r.is_finite() {
        return Err(PhyError::NonFinite);
    }
    Ok(ReceiverOutput {
        test_statistics,
        decision_variable: big_r,
        r_s,
        r_mai,
        r_gi,
        r_n,
        decided_bit: if big_r >= 0.0 { 1 } else { -1 },
        interference,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};

    fn params(n: usize, k: usize) -> SystemParams {
        SystemParams {
            n_subcarriers: n,
            n_users: k,
            noise_psd: 0.0,
            interference_power: 0.0,
            ..SystemParams::default()
        }
    }

    #[test]
    fn bits_per_slot_matches_durations() {
        assert_eq!(SystemParams::default().bits_per_slot(), 90);
        assert!((SystemParams::default().subcarrier_bandwidth() - 2e5).abs() < 1e-6);
    }

    #[test]
    fn validation_catches_bad_params() {
        assert!(SystemParams::default().validate().is_ok());
        let mut p = SystemParams {
            n_users: 33,
            ..SystemParams::default()
        };
        assert!(p.validate().is_err());
        p = SystemParams::default();
        p.sensing_duration = p.slot_duration;
        assert!(p.validate().is_err());
        p = SystemParams::default();
        p.energy_per_bit = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn no_primary_users_and_no_false_alarms() {
        let mut p = params(16, 2);
        p.pr_h1 = 0.0;
        let mut rng = substream(0, Domain::Slots, 0, 0);
        let s = draw_sensing(&p, DetectionProbs { pd: 0.9, pfa: 0.0 }, &mut rng);
        assert!(s.est_busy.iter().all(|b| !b));
        assert!(s.misdetected.is_empty());
        assert_eq!(s.n_est_free(), 16);
    }

    #[test]
    fn perfect_detection_never_misdetects() {
        let p = SystemParams {
            pr_h1: 0.5,
            ..params(32, 4)
        };
        for t in 0..200 {
            let mut rng = substream(1, Domain::Slots, 0, t);
            let s = draw_sensing(&p, DetectionProbs { pd: 1.0, pfa: 0.1 }, &mut rng);
            assert!(s.misdetected.is_empty());
        }
    }

    #[test]
    fn misdetection_count_has_binomial_mean() {
        // Single sensing user so the fused detection probability is 0.95.
        let p = SystemParams {
            pr_h1: 0.2,
            ..params(32, 1)
        };
        let slots = 100_000u64;
        let total: usize = (0..slots)
            .map(|t| {
                let mut rng = substream(2, Domain::Slots, 0, t);
                draw_sensing(&p, DetectionProbs { pd: 0.95, pfa: 0.0 }, &mut rng).n_misdetected()
            })
            .sum();
        let mean = total as f64 / slots as f64;
        let p_mis = 0.05 * 0.2;
        let se = (32.0 * p_mis * (1.0 - p_mis) / slots as f64).sqrt();
        assert!((mean - 0.32).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn sensing_state_invariants() {
        let p = SystemParams {
            pr_h1: 0.4,
            ..params(32, 3)
        };
        let book = CodeBook::new(32).unwrap();
        for t in 0..500 {
            let mut rng = substream(3, Domain::Slots, 0, t);
            let s = draw_sensing(&p, DetectionProbs { pd: 0.6, pfa: 0.2 }, &mut rng);
            for n in 0..32 {
                assert_eq!(s.est_busy[n], s.decisions.iter().any(|d| d[n]));
                assert_eq!(s.misdetected.contains(&n), s.occupancy[n] && !s.est_busy[n]);
            }
            let est = s.est_busy.clone();
            if let Ok(slot) = SlotRealization::realize(s, &p, &book, CodePolicy::MultiLevel, &mut rng) {
                for sig in &slot.signatures.signatures {
                    for (n, &busy) in est.iter().enumerate() {
                        if busy {
                            assert_eq!(sig.chips()[n], 0);
                        }
                        assert_eq!(sig.chips()[n] != 0, slot.signatures.active[n]);
                    }
                }
            }
        }
    }

    fn flat_slot(n: usize, users: usize, gains: Vec<Complex64>, policy: CodePolicy, busy: &[usize]) -> SlotRealization {
        let mut est_busy = vec![false; n];
        for &b in busy {
            est_busy[b] = true;
        }
        let book = CodeBook::new(n).unwrap();
        let signatures = book.assign(policy, &est_busy, users).unwrap();
        SlotRealization {
            occupancy: vec![false; n],
            decisions: vec![est_busy.clone(); users],
            est_busy,
            misdetected: vec![],
            gains: gains.into_iter().map(|g| vec![g; n]).collect(),
            signatures,
        }
    }

    #[test]
    fn noiseless_single_user_identity() {
        let p = params(32, 1);
        let slot = flat_slot(32, 1, vec![Complex64::new(1.0, 0.0)], CodePolicy::MultiLevel, &[]);
        let mut rng = substream(4, Domain::Slots, 0, 0);
        let out = transmit_and_receive(&slot, &p, &[1], &mut rng).unwrap();
        assert_eq!(out.decision_variable, p.energy_per_bit);
        assert_eq!(out.decided_bit, 1);
    }

    #[test]
    fn flat_channels_cancel_mai_for_orthogonal_families() {
        let p = params(32, 6);
        let mut rng = substream(5, Domain::Slots, 0, 0);
        let gains: Vec<_> = (0..6).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        // Three busy subcarriers leave 29 free, reduced to the order-28 family.
        let slot = flat_slot(32, 6, gains, CodePolicy::MultiLevel, &[3, 10, 20]);
        assert_eq!(slot.signatures.deactivated, 1);
        let out = transmit_and_receive(&slot, &p, &[1, -1, 1, 1, -1, -1], &mut rng).unwrap();
        assert!(out.r_mai.abs() < 1e-12, "{}", out.r_mai);
        assert!((out.r_s - out.decision_variable).abs() < 1e-12);
    }

    #[test]
    fn decision_variable_matches_scripted_recomputation() {
        let p = SystemParams {
            noise_psd: 0.3,
            interference_power: 0.7,
            pr_h1: 0.3,
            ..params(16, 3)
        };
        let book = CodeBook::new(16).unwrap();
        let mut rng = substream(6, Domain::Slots, 0, 0);
        let slot = loop {
            let s = draw_sensing(&p, DetectionProbs { pd: 0.5, pfa: 0.1 }, &mut rng);
            if let Ok(slot) = SlotRealization::realize(s, &p, &book, CodePolicy::MultiLevel, &mut rng) {
                if !slot.misdetected.is_empty() {
                    break slot;
                }
            }
        };
        let bits = [1i8, -1, 1];
        let out = transmit_and_receive(&slot, &p, &bits, &mut rng).unwrap();

        // Recompute r_n and R straight from the logged draws.
        let mut expected = 0.0;
        for n in 0..16 {
            let mut r = out.noise[n];
            if slot.misdetected.contains(&n) {
                r += out.interference[n];
            } else {
                assert_eq!(out.interference[n], Complex64::new(0.0, 0.0));
            }
            for (k, sig) in slot.signatures.signatures.iter().enumerate() {
                let pk = p.energy_per_bit / sig.energy() as f64;
                r += slot.gains[k][n] * pk.sqrt() * bits[k] as f64 * sig.chips()[n] as f64;
            }
            assert!((r - out.test_statistics[n]).norm() < 1e-12);
            let sig1 = &slot.signatures.signatures[0];
            let p1 = p.energy_per_bit / sig1.energy() as f64;
            expected += p1.sqrt() * (slot.gains[0][n].conj() * sig1.chips()[n] as f64 * r).re;
        }
        assert!((expected - out.decision_variable).abs() < 1e-12);
        let sum = out.r_s + out.r_mai + out.r_gi + out.r_n;
        assert!((sum - out.decision_variable).abs() <= 1e-10 * out.decision_variable.abs().max(1.0));
    }

    #[test]
    fn power_accounting_is_exact() {
        let book = CodeBook::new(32).unwrap();
        for busy in [vec![], vec![0, 5, 9], vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]] {
            for policy in [CodePolicy::MultiLevel, CodePolicy::Binary] {
                let mut est = vec![false; 32];
                for &b in &busy {
                    est[b] = true;
                }
                let set = book.assign(policy, &est, 2).unwrap();
                let p = set.power(0, 1.0);
                let total: f64 = p
                    .iter()
                    .zip(set.signatures[0].chips())
                    .map(|(pn, &c)| pn * (c * c) as f64)
                    .sum();
                assert!((total - 1.0).abs() < 1e-12, "{policy} {busy:?} {total}");
            }
        }
    }

    #[test]
    fn rejects_bad_bits() {
        let p = params(8, 2);
        let slot = flat_slot(8, 2, vec![Complex64::new(1.0, 0.0); 2], CodePolicy::MultiLevel, &[]);
        let mut rng = substream(7, Domain::Slots, 0, 0);
        assert!(transmit_and_receive(&slot, &p, &[1], &mut rng).is_err());
        assert!(transmit_and_receive(&slot, &p, &[1, 0], &mut rng).is_err());
    }
}
