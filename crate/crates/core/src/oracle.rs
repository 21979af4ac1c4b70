//! Brute-force reference for the occupancy-averaged error probability.
//!
//! Enumerates every (occupied, decided-busy) state of every subcarrier,
//! assigns signatures through the real [`CodeBook`], and averages the
//! conditional error probability of each configuration. Cost is `4^N`
//! assignments, so it is meant for `N <= 8`.

use crate::ber_analysis::{conditional_pe, variance_terms, AnalysisError, ERASURE_PE};
use crate::orthocodes::{CodeBook, CodeError, CodePolicy};
use crate::phylink::SystemParams;
use crate::sensing::FusionResult;

/// Largest subcarrier count [`enumerate_average_pe`] accepts.
pub const MAX_ENUMERATION_SUBCARRIERS: usize = 10;

/// Occupancy-averaged error probability by exhaustive enumeration.
pub fn enumerate_average_pe(
    params: &SystemParams,
    fused: &FusionResult,
    policy: CodePolicy,
) -> Result<f64, AnalysisError> {
    enumerate_with_book(params, fused, policy, &CodeBook::new(params.n_subcarriers)?)
}

/// As [`enumerate_average_pe`] with a caller-supplied code book.
pub fn enumerate_with_book(
    params: &SystemParams,
    fused: &FusionResult,
    policy: CodePolicy,
    book: &CodeBook,
) -> Result<f64, AnalysisError> {
    let n = params.n_subcarriers;
    if n > MAX_ENUMERATION_SUBCARRIERS {
        return Err(AnalysisError::InvalidArgument(format!(
            "enumeration over {n} subcarriers is too large"
        )));
    }
    // State per subcarrier: bit 0 occupied, bit 1 decided busy.
    let pr = params.pr_h1;
    let state_prob = [
        (1.0 - pr) * (1.0 - fused.qfa),
        pr * (1.0 - fused.qd),
        (1.0 - pr) * fused.qfa,
        pr * fused.qd,
    ];
    let mut total = 0.0;
    let configs = 1usize << (2 * n);
    for code in 0..configs {
        let states: Vec<usize> = (0..n).map(|j| (code >> (2 * j)) & 3).collect();
        let prob: f64 = states.iter().map(|&s| state_prob[s]).product();
        if prob == 0.0 {
            continue;
        }
        let est_busy: Vec<bool> = states.iter().map(|&s| s & 2 != 0).collect();
        let lambda: Vec<usize> = (0..n).filter(|&j| states[j] == 1).collect();
        let pe = match book.assign(policy, &est_busy, params.n_users) {
            Ok(set) => {
                let v = variance_terms(
                    &set.signatures[0],
                    &set.signatures[1..],
                    &lambda,
                    params.energy_per_bit,
                    params.noise_psd,
                    params.interference_power,
                )?;
                conditional_pe(&v, params.energy_per_bit)
            }
            Err(CodeError::Capacity { .. }) => ERASURE_PE,
            Err(e) => return Err(e.into()),
        };
        total += prob * pe;
    }
    Ok(total)
}
