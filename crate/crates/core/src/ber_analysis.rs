//! Closed-form bit error probability of user 1.
//!
//! Conditioned on the slot's signatures and misdetection set, the decision
//! variable is treated as Gaussian with mean `eps_b` and variance
//! `var_s + var_mai + var_gi + var_n`; averaging the resulting Q-function over
//! the trinomial law of (zeroed, misdetected, clean) subcarrier counts gives
//! the unconditional error probability.

use std::collections::{BTreeMap, HashMap};

use libm::erfc;
use rand::seq::index::sample;
use thiserror::Error;

use crate::orthocodes::{CodeBook, CodeError, CodePolicy, ModifiedSignature};
use crate::phylink::SystemParams;
use crate::rng::{substream, Domain};
use crate::sensing::OccupancyModel;

/// Error probability assigned to a slot in which user 1 cannot transmit.
pub const ERASURE_PE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("desired signature has zero energy")]
    DegenerateSlot,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Code(#[from] CodeError),
}

/// Variances of the four decision-variable terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VarianceBreakdown {
    pub var_s: f64,
    pub var_mai: f64,
    pub var_gi: f64,
    pub var_n: f64,
}

impl VarianceBreakdown {
    pub fn total(&self) -> f64 {
        self.var_s + self.var_mai + self.var_gi + self.var_n
    }
}

/// One point of a BER curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerPoint {
    pub snr_db: f64,
    pub n_users: usize,
    pub ber_analytic: f64,
    pub ber_simulated: Option<f64>,
    /// 95% half-width; rule-of-three bound when no errors were seen.
    pub ci_halfwidth: Option<f64>,
    /// Simulated bit decisions.
    pub trials: u64,
    pub errors: u64,
    /// The simulation saw no errors and `ci_halfwidth` is an upper bound.
    pub upper_bound: bool,
}

impl BerPoint {
    pub fn analytic(snr_db: f64, n_users: usize, ber_analytic: f64) -> Self {
        Self {
            snr_db,
            n_users,
            ber_analytic,
            ber_simulated: None,
            ci_halfwidth: None,
            trials: 0,
            errors: 0,
            upper_bound: false,
        }
    }
}

/// Gaussian tail `Q(x) = erfc(x / sqrt 2) / 2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Variance terms for `desired` given the interfering users' signatures and
/// the misdetected subcarrier indices.
pub fn variance_terms(
    desired: &ModifiedSignature,
    interferers: &[ModifiedSignature],
    lambda_set: &[usize],
    energy_per_bit: f64,
    noise_psd: f64,
    interference_power: f64,
) -> Result<VarianceBreakdown, AnalysisError> {
    let n = desired.len();
    if let Some(other) = interferers.iter().find(|s| s.len() != n) {
        return Err(AnalysisError::Dimension {
            expected: n,
            got: other.len(),
        });
    }
    if let Some(&bad) = lambda_set.iter().find(|&&j| j >= n) {
        return Err(AnalysisError::Dimension {
            expected: n,
            got: bad + 1,
        });
    }
    let energy = desired.energy() as f64;
    if energy == 0.0 {
        return Err(AnalysisError::DegenerateSlot);
    }
    let c1 = desired.chips();
    let fourth: f64 = c1.iter().map(|&c| ((c * c) as f64).powi(2)).sum();
    let cross: f64 = interferers
        .iter()
        .flat_map(|s| c1.iter().zip(s.chips()).map(|(&a, &b)| ((a * b) as f64).powi(2)))
        .sum();
    let hit: f64 = lambda_set.iter().map(|&j| (c1[j] * c1[j]) as f64).sum();
    let eb = energy_per_bit;
    Ok(VarianceBreakdown {
        var_s: eb * eb * fourth / (energy * energy),
        var_mai: 0.5 * eb * eb * cross / (energy * energy),
        var_gi: 0.5 * eb / energy * hit * interference_power,
        var_n: 0.5 * eb * noise_psd,
    })
}

/// `Q(eps_b / sqrt(total variance))`; zero in the noiseless limit.
pub fn conditional_pe(v: &VarianceBreakdown, energy_per_bit: f64) -> f64 {
    let total = v.total();
    if total <= 0.0 {
        return 0.0;
    }
    q_function(energy_per_bit / total.sqrt())
}

/// How the error probability is averaged over misdetection placements when
/// chip magnitudes are not all equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    /// Exact average by counting placements per chip-magnitude class.
    #[default]
    Exact,
    /// Mean over `subsets` seeded uniform placements.
    Sampled { subsets: usize, seed: u64 },
}

/// Parameters the conditional error probability depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub n_subcarriers: usize,
    pub n_users: usize,
    pub energy_per_bit: f64,
    pub noise_psd: f64,
    pub interference_power: f64,
}

impl From<&SystemParams> for LinkBudget {
    fn from(p: &SystemParams) -> Self {
        Self {
            n_subcarriers: p.n_subcarriers,
            n_users: p.n_users,
            energy_per_bit: p.energy_per_bit,
            noise_psd: p.noise_psd,
            interference_power: p.interference_power,
        }
    }
}

/// Distribution of `S = sum_{j in Lambda} c_j^2` for a uniform `l`-subset of
/// the free ranks: `counts[l]` maps `S` to the number of subsets.
#[derive(Debug, Clone)]
struct HitDistribution {
    counts: Vec<BTreeMap<i64, u128>>,
}

impl HitDistribution {
    fn new(weights: &[i64]) -> Self {
        let mut classes: BTreeMap<i64, usize> = BTreeMap::new();
        for &w in weights {
            *classes.entry(w).or_default() += 1;
        }
        let n = weights.len();
        let mut counts: Vec<BTreeMap<i64, u128>> = vec![BTreeMap::new(); n + 1];
        counts[0].insert(0, 1);
        for (&value, &mult) in &classes {
            let mut next: Vec<BTreeMap<i64, u128>> = vec![BTreeMap::new(); n + 1];
            for (size, by_sum) in counts.iter().enumerate() {
                for (&sum, &count) in by_sum {
                    for t in 0..=mult.min(n - size) {
                        *next[size + t].entry(sum + value * t as i64).or_default() += count * binomial(mult, t);
                    }
                }
            }
            counts = next;
        }
        Self { counts }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let lnf = |m: usize| (2..=m).map(|i| (i as f64).ln()).sum::<f64>();
    lnf(n) - lnf(k) - lnf(n - k)
}

/// Fixed, placement-independent part of a multi-level conditional.
#[derive(Debug, Clone)]
struct FamilyTerms {
    base: VarianceBreakdown,
    /// `var_gi = gi_scale * S`.
    gi_scale: f64,
    /// Squared chips of user 1 over the free ranks (zero on deactivated ranks).
    weights: Vec<i64>,
    hits: HitDistribution,
}

/// Conditional error probability `Pe(m, l)` with memoized per-family terms.
#[derive(Debug, Clone)]
pub struct PeCalculator {
    budget: LinkBudget,
    policy: CodePolicy,
    placement: Placement,
    book: CodeBook,
    families: HashMap<usize, Option<FamilyTerms>>,
}

impl PeCalculator {
    pub fn new(budget: LinkBudget, policy: CodePolicy, placement: Placement) -> Result<Self, AnalysisError> {
        if budget.n_users == 0 {
            return Err(AnalysisError::InvalidArgument("at least one user required".into()));
        }
        if !(budget.energy_per_bit > 0.0) {
            return Err(AnalysisError::InvalidArgument("energy_per_bit must be positive".into()));
        }
        Ok(Self {
            book: CodeBook::new(budget.n_subcarriers)?,
            budget,
            policy,
            placement,
            families: HashMap::new(),
        })
    }

    pub fn budget(&self) -> &LinkBudget {
        &self.budget
    }

    fn family(&mut self, n_free: usize) -> Option<&FamilyTerms> {
        let budget = self.budget;
        let book = &self.book;
        self.families
            .entry(n_free)
            .or_insert_with(|| {
                let order = book.usable_order(n_free);
                if order == 0 || order < budget.n_users {
                    return None;
                }
                let code = book.code(order).expect("usable order is cached");
                // Free ranks 0..n_free laid out contiguously; only the first
                // `order` carry chips.
                let mask: Vec<bool> = (0..n_free).map(|j| j >= order).collect();
                let sigs: Vec<ModifiedSignature> = (0..budget.n_users)
                    .map(|k| crate::orthocodes::embed(code.row(k), &mask).expect("mask matches order"))
                    .collect();
                let base = variance_terms(
                    &sigs[0],
                    &sigs[1..],
                    &[],
                    budget.energy_per_bit,
                    budget.noise_psd,
                    budget.interference_power,
                )
                .expect("nonzero energy");
                let weights: Vec<i64> = sigs[0].chips().iter().map(|c| c * c).collect();
                let gi_scale = 0.5 * budget.energy_per_bit / sigs[0].energy() as f64 * budget.interference_power;
                Some(FamilyTerms {
                    base,
                    gi_scale,
                    hits: HitDistribution::new(&weights),
                    weights,
                })
            })
            .as_ref()
    }

    /// Error probability given `m` zeroed and `l` misdetected subcarriers.
    pub fn pe_of_counts(&mut self, m: usize, l: usize) -> Result<f64, AnalysisError> {
        let n = self.budget.n_subcarriers;
        if m + l > n {
            return Err(AnalysisError::InvalidArgument(format!(
                "m + l = {} exceeds N = {n}",
                m + l
            )));
        }
        let n_free = n - m;
        let b = self.budget;
        if n_free == 0 || self.book.rows_available(self.policy, n_free) < b.n_users {
            return Ok(ERASURE_PE);
        }
        match self.policy {
            CodePolicy::Binary => {
                let nf = n_free as f64;
                let eb = b.energy_per_bit;
                let v = VarianceBreakdown {
                    var_s: eb * eb / nf,
                    var_mai: (b.n_users - 1) as f64 * eb * eb / (2.0 * nf),
                    var_gi: eb * l as f64 * b.interference_power / (2.0 * nf),
                    var_n: 0.5 * eb * b.noise_psd,
                };
                Ok(conditional_pe(&v, eb))
            }
            CodePolicy::MultiLevel => match self.placement {
                Placement::Exact => {
                    let eb = b.energy_per_bit;
                    let fam = self.family(n_free).expect("capacity checked");
                    let total = binomial(n_free, l) as f64;
                    let pe = fam.hits.counts[l]
                        .iter()
                        .map(|(&s, &count)| {
                            let v = VarianceBreakdown {
                                var_gi: fam.gi_scale * s as f64,
                                ..fam.base
                            };
                            count as f64 * conditional_pe(&v, eb)
                        })
                        .sum::<f64>();
                    Ok(pe / total)
                }
                Placement::Sampled { subsets, seed } => Ok(self.pe_sampled(m, l, subsets, seed)?.0),
            },
        }
    }

    /// Multi-level `Pe(m, l)` averaged over `subsets` sampled placements,
    /// with the standard error of that mean.
    pub fn pe_sampled(&mut self, m: usize, l: usize, subsets: usize, seed: u64) -> Result<(f64, f64), AnalysisError> {
        let n = self.budget.n_subcarriers;
        if m + l > n || subsets == 0 {
            return Err(AnalysisError::InvalidArgument(format!(
                "bad sampling request m={m} l={l} subsets={subsets}"
            )));
        }
        let n_free = n - m;
        let eb = self.budget.energy_per_bit;
        let Some(fam) = self.family(n_free) else {
            return Ok((ERASURE_PE, 0.0));
        };
        let mut rng = substream(seed, Domain::PlacementSampling, (m * (n + 1) + l) as u64, 0);
        let draws: Vec<f64> = (0..subsets)
            .map(|_| {
                let s: i64 = sample(&mut rng, n_free, l).iter().map(|j| fam.weights[j]).sum();
                let v = VarianceBreakdown {
                    var_gi: fam.gi_scale * s as f64,
                    ..fam.base
                };
                conditional_pe(&v, eb)
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / subsets as f64;
        let var = if subsets > 1 {
            draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (subsets - 1) as f64
        } else {
            0.0
        };
        Ok((mean, (var / subsets as f64).sqrt()))
    }

    /// Occupancy-averaged error probability.
    pub fn average_pe(&mut self, model: &OccupancyModel) -> Result<f64, AnalysisError> {
        let weights = trinomial_weights(self.budget.n_subcarriers, model)?;
        let mut total = 0.0;
        for (m, row) in weights.iter().enumerate() {
            for (l, &w) in row.iter().enumerate() {
                if w > 0.0 {
                    total += w * self.pe_of_counts(m, l)?;
                }
            }
        }
        Ok(total)
    }

    /// Occupancy average with every multi-level cell estimated from
    /// `subsets` sampled placements; returns the mean and its standard error.
    pub fn average_pe_sampled(
        &mut self,
        model: &OccupancyModel,
        subsets: usize,
        seed: u64,
    ) -> Result<(f64, f64), AnalysisError> {
        let weights = trinomial_weights(self.budget.n_subcarriers, model)?;
        let (mut total, mut var) = (0.0, 0.0);
        for (m, row) in weights.iter().enumerate() {
            for (l, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let (pe, se) = match self.policy {
                    CodePolicy::MultiLevel => self.pe_sampled(m, l, subsets, seed)?,
                    CodePolicy::Binary => (self.pe_of_counts(m, l)?, 0.0),
                };
                total += w * pe;
                var += (w * se).powi(2);
            }
        }
        Ok((total, var.sqrt()))
    }
}

/// `weights[m][l] = C(N,m) C(N-m,l) p_zero^m p_mis^l (1-p_zero-p_mis)^(N-m-l)`
/// over the full support `0 <= m <= N`, `0 <= l <= N - m`.
pub fn trinomial_weights(n: usize, model: &OccupancyModel) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let (pz, pm) = (model.p_zero, model.p_mis);
    let pc = 1.0 - pz - pm;
    if !(pz >= 0.0 && pm >= 0.0) || pc < -1e-12 {
        return Err(AnalysisError::InvalidArgument(format!(
            "p_zero={pz} and p_mis={pm} do not form a probability split"
        )));
    }
    let pc = pc.max(0.0);
    let ln_pow = |p: f64, e: usize| -> Option<f64> {
        match (p == 0.0, e == 0) {
            (_, true) => Some(0.0),
            (true, false) => None,
            (false, false) => Some(e as f64 * p.ln()),
        }
    };
    Ok((0..=n)
        .map(|m| {
            (0..=n - m)
                .map(|l| match (ln_pow(pz, m), ln_pow(pm, l), ln_pow(pc, n - m - l)) {
                    (Some(a), Some(b), Some(c)) => (ln_binomial(n, m) + ln_binomial(n - m, l) + a + b + c).exp(),
                    _ => 0.0,
                })
                .collect()
        })
        .collect())
}

/// Occupancy-averaged error probability with exact placement averaging.
pub fn average_pe(params: &SystemParams, model: &OccupancyModel, policy: CodePolicy) -> Result<f64, AnalysisError> {
    PeCalculator::new(params.into(), policy, Placement::Exact)?.average_pe(model)
}

/// One-off `Pe(m, l)`.
#[allow(clippy::too_many_arguments)]
pub fn pe_of_counts(
    n: usize,
    m: usize,
    l: usize,
    users: usize,
    energy_per_bit: f64,
    noise_psd: f64,
    interference_power: f64,
    policy: CodePolicy,
) -> Result<f64, AnalysisError> {
    let budget = LinkBudget {
        n_subcarriers: n,
        n_users: users,
        energy_per_bit,
        noise_psd,
        interference_power,
    };
    PeCalculator::new(budget, policy, Placement::Exact)?.pe_of_counts(m, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthocodes::embed;

    fn sig(chips: &[i64], n: usize) -> ModifiedSignature {
        let mut mask = vec![true; n];
        for m in mask.iter_mut().take(chips.len()) {
            *m = false;
        }
        embed(chips, &mask).unwrap()
    }

    fn budget(n: usize, k: usize, noise: f64, inter: f64) -> LinkBudget {
        LinkBudget {
            n_subcarriers: n,
            n_users: k,
            energy_per_bit: 1.0,
            noise_psd: noise,
            interference_power: inter,
        }
    }

    #[test]
    fn q_function_values() {
        assert_eq!(q_function(0.0), 0.5);
        // erfc(1.96 / sqrt 2) / 2, evaluated with mpmath.
        assert!((q_function(1.96) - 0.024997895148220435).abs() < 1e-15);
        assert!((q_function(-40.0) - 1.0).abs() < 1e-15);
        for x in [0.3, 1.0, 2.5, 5.0] {
            assert!((q_function(x) + q_function(-x) - 1.0).abs() < 1e-15);
        }
        assert!((q_function(1.0) - 0.15865525393145707).abs() < 1e-15);
    }

    #[test]
    fn unit_chip_specialization() {
        let (n, m, k, l) = (16usize, 4usize, 3usize, 2usize);
        let nf = n - m;
        let chips: Vec<Vec<i64>> = (0..k)
            .map(|u| (0..nf).map(|j| if (j + u) % 3 == 0 { -1 } else { 1 }).collect())
            .collect();
        let sigs: Vec<_> = chips.iter().map(|c| sig(c, n)).collect();
        let (eb, sn, ss) = (1.3, 0.2, 0.7);
        let v = variance_terms(&sigs[0], &sigs[1..], &[0, 5], eb, sn, ss).unwrap();
        let nf = nf as f64;
        assert!((v.var_s - eb * eb / nf).abs() < 1e-15);
        assert!((v.var_mai - (k - 1) as f64 * eb * eb / (2.0 * nf)).abs() < 1e-15);
        assert!((v.var_gi - eb * l as f64 * ss / (2.0 * nf)).abs() < 1e-15);
        assert!((v.var_n - eb * sn / 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_user_without_misdetection() {
        let s = sig(&[1, 1, -1, 1], 4);
        let v = variance_terms(&s, &[], &[], 1.0, 0.1, 5.0).unwrap();
        assert_eq!((v.var_mai, v.var_gi), (0.0, 0.0));
    }

    #[test]
    fn multilevel_signal_variance() {
        let s = sig(&[1, 2, 2], 3);
        let v = variance_terms(&s, &[], &[], 1.0, 0.0, 0.0).unwrap();
        assert!((v.var_s - 33.0 / 81.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_signature() {
        let s = embed(&[], &[true, true]).unwrap();
        assert_eq!(
            variance_terms(&s, &[], &[], 1.0, 0.1, 0.1),
            Err(AnalysisError::DegenerateSlot)
        );
    }

    #[test]
    fn conditional_pe_examples() {
        let v = VarianceBreakdown {
            var_s: 0.25,
            var_mai: 0.25,
            var_gi: 0.25,
            var_n: 0.25,
        };
        assert!((conditional_pe(&v, 1.0) - 0.15865525393145707).abs() < 1e-15);
        let pe = pe_of_counts(32, 0, 0, 1, 1.0, 0.1, 0.0, CodePolicy::Binary).unwrap();
        let x = 1.0 / (1.0f64 / 32.0 + 0.05).sqrt();
        assert!((x - 3.5082).abs() < 1e-4);
        assert!((pe - q_function(x)).abs() < 1e-18);
        assert!((pe - 2.26e-4).abs() < 0.01e-4, "{pe}");
        let noisy = VarianceBreakdown {
            var_n: 1e30,
            ..Default::default()
        };
        assert!((conditional_pe(&noisy, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(conditional_pe(&VarianceBreakdown::default(), 1.0), 0.0);
    }

    #[test]
    fn pe_of_counts_edges() {
        for policy in [CodePolicy::Binary, CodePolicy::MultiLevel] {
            assert_eq!(pe_of_counts(8, 8, 0, 1, 1.0, 0.1, 0.1, policy).unwrap(), 0.5);
            assert!(pe_of_counts(8, 5, 4, 1, 1.0, 0.1, 0.1, policy).is_err());
        }
        // Multi-level: 2 free subcarriers cannot carry 3 users.
        assert_eq!(
            pe_of_counts(8, 6, 0, 3, 1.0, 0.1, 0.1, CodePolicy::MultiLevel).unwrap(),
            0.5
        );
        // Power-of-two free count: multi-level family is Walsh, same as binary.
        let a = pe_of_counts(32, 0, 0, 1, 1.0, 0.1, 0.0, CodePolicy::MultiLevel).unwrap();
        let b = pe_of_counts(32, 0, 0, 1, 1.0, 0.1, 0.0, CodePolicy::Binary).unwrap();
        assert!((a - b).abs() < 1e-18);
    }

    #[test]
    fn hit_distribution_matches_explicit_enumeration() {
        let weights = [1i64, 4, 4, 9, 1, 0, 4];
        let dist = HitDistribution::new(&weights);
        let n = weights.len();
        for l in 0..=n {
            let mut explicit: BTreeMap<i64, u128> = BTreeMap::new();
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize == l {
                    let s = (0..n).filter(|&j| mask >> j & 1 == 1).map(|j| weights[j]).sum();
                    *explicit.entry(s).or_default() += 1;
                }
            }
            assert_eq!(dist.counts[l], explicit, "l={l}");
        }
    }

    #[test]
    fn exact_and_sampled_placements_agree() {
        // Order-3 family: chips (1, 2, 2) for user 1.
        let mut calc = PeCalculator::new(budget(4, 1, 0.3, 2.0), CodePolicy::MultiLevel, Placement::Exact).unwrap();
        let exact = calc.pe_of_counts(1, 1).unwrap();
        let (sampled, se) = calc.pe_sampled(1, 1, 10_000, 11).unwrap();
        assert!((exact - sampled).abs() < 3.0 * se, "{exact} {sampled} {se}");
        // Larger family with deactivated ranks: 29 free -> order 28.
        let mut calc = PeCalculator::new(budget(32, 4, 0.05, 1.0), CodePolicy::MultiLevel, Placement::Exact).unwrap();
        let exact = calc.pe_of_counts(3, 3).unwrap();
        let (sampled, se) = calc.pe_sampled(3, 3, 10_000, 12).unwrap();
        assert!((exact - sampled).abs() < 3.0 * se, "{exact} {sampled} {se}");
    }

    #[test]
    fn trinomial_weights_sum_to_one() {
        for &(pz, pm) in &[(0.23, 0.01), (0.0, 0.0), (0.5, 0.5), (0.1, 0.0), (0.0, 0.3)] {
            let model = OccupancyModel {
                pr_h1: 0.2,
                p_zero: pz,
                p_mis: pm,
            };
            for n in [1usize, 4, 6, 32] {
                let total: f64 = trinomial_weights(n, &model).unwrap().iter().flatten().sum();
                assert!((total - 1.0).abs() < 1e-12, "n={n} pz={pz} pm={pm} {total}");
            }
        }
        let bad = OccupancyModel {
            pr_h1: 0.2,
            p_zero: 0.8,
            p_mis: 0.3,
        };
        assert!(trinomial_weights(4, &bad).is_err());
    }

    #[test]
    fn degenerate_trinomial_reduces_to_single_cell() {
        let model = OccupancyModel {
            pr_h1: 0.0,
            p_zero: 0.0,
            p_mis: 0.0,
        };
        let mut calc = PeCalculator::new(budget(32, 1, 0.1, 0.1), CodePolicy::Binary, Placement::Exact).unwrap();
        let avg = calc.average_pe(&model).unwrap();
        assert_eq!(avg, calc.pe_of_counts(0, 0).unwrap());
    }

    #[test]
    fn average_pe_is_monotone() {
        let model = |pz: f64, pm: f64| OccupancyModel {
            pr_h1: 0.2,
            p_zero: pz,
            p_mis: pm,
        };
        for policy in [CodePolicy::Binary, CodePolicy::MultiLevel] {
            let avg = |k: usize, noise: f64, inter: f64, m: &OccupancyModel| {
                PeCalculator::new(budget(32, k, noise, inter), policy, Placement::Exact)
                    .unwrap()
                    .average_pe(m)
                    .unwrap()
            };
            let base = model(0.19, 0.01);
            let mut prev = 0.0;
            for k in 1..=16 {
                let pe = avg(k, 0.05, 0.05, &base);
                assert!(pe >= prev, "{policy} K={k}");
                prev = pe;
            }
            let mut prev = 0.0;
            for inter in [0.0, 0.01, 0.1, 1.0, 10.0] {
                let pe = avg(4, 0.05, inter, &base);
                assert!(pe >= prev, "{policy} sigma_s^2={inter}");
                prev = pe;
            }
            let mut prev = 0.0;
            for pm in [0.0, 0.01, 0.02, 0.05, 0.1] {
                let pe = avg(4, 0.05, 1.0, &model(0.19, pm));
                assert!(pe >= prev, "{policy} p_mis={pm}");
                prev = pe;
            }
        }
    }

    #[test]
    fn error_floor_with_many_users() {
        let model = OccupancyModel {
            pr_h1: 0.2,
            p_zero: 0.19,
            p_mis: 0.01,
        };
        for policy in [CodePolicy::Binary, CodePolicy::MultiLevel] {
            for snr_db in [30.0, 40.0] {
                let noise = 10f64.powf(-snr_db / 10.0);
                let pe = |n: f64| {
                    PeCalculator::new(budget(32, 8, n, n), policy, Placement::Exact)
                        .unwrap()
                        .average_pe(&model)
                        .unwrap()
                };
                let (a, b) = (pe(noise), pe(noise / 10.0));
                assert!((a - b).abs() / a < 0.5, "{policy} {snr_db} {a} {b}");
            }
        }
    }
}
