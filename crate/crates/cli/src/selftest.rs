//! Fast invariant suite behind `fscdma selftest`.

use std::fmt::Write as _;

use fscdma_core::ber_analysis::{PeCalculator, Placement};
use fscdma_core::oracle::enumerate_with_book;
use fscdma_core::orthocodes::{compose, verify, CodeBook, PrimeTable};
use fscdma_core::rng::{substream, Domain};
use fscdma_core::sensing::{
    detect_sample_level, fuse_or, occupancy_model, pd_rayleigh, pfa, solve_threshold, DetectorConfig, SensingOutcome,
    ThresholdTarget,
};
use fscdma_core::{CodePolicy, SystemParams};

/// Result of one selftest group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Fault injected into the run, for exercising the failure path.
#[derive(Debug, Clone, Default)]
pub struct Faults {
    /// Replace the base matrix of this prime with a non-orthogonal one.
    pub corrupt_prime: Option<u64>,
}

impl Faults {
    fn table(&self) -> PrimeTable {
        let table = PrimeTable::standard();
        match self.corrupt_prime {
            None => table,
            Some(p) => {
                let order = p.max(2) as usize;
                let mut rows = vec![vec![1i64; order]; order];
                rows[0][0] = 2;
                table.with_base(p, rows)
            }
        }
    }
}

fn summarize(failures: &[String]) -> String {
    match failures.len() {
        0..=3 => failures.join("; "),
        n => format!("{}; and {} more", failures[..3].join("; "), n - 3),
    }
}

fn codes_group(table: &PrimeTable) -> GroupReport {
    let mut failures = Vec::new();
    let mut checked = 0;
    for n in 1..=64usize {
        if !table.is_supported_order(n) {
            continue;
        }
        checked += 1;
        match table.build(n) {
            Ok(c) => {
                let r = verify(&c.to_rows());
                if !(r.is_orthogonal && r.all_nonzero) {
                    failures.push(format!("n={n} not orthogonal"));
                }
            }
            Err(e) => failures.push(format!("n={n}: {e}")),
        }
    }
    let primes: Vec<u64> = table.primes().collect();
    for &a in &primes {
        for &b in &primes {
            let (Ok(outer), Ok(inner)) = (table.base(a), table.base(b)) else {
                failures.push(format!("base {a} or {b} invalid"));
                continue;
            };
            let law = compose(&outer, &inner).map(|c| {
                let gram = verify(&c.to_rows());
                let (go, gi) = (verify(&outer.to_rows()), verify(&inner.to_rows()));
                let n = inner.order();
                (0..c.order())
                    .all(|i| (0..c.order()).all(|j| gram.at(i, j) == go.at(i / n, j / n) * gi.at(i % n, j % n)))
            });
            if law != Ok(true) {
                failures.push(format!("composition law {a}x{b}"));
            }
        }
    }
    GroupReport {
        name: "codes",
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{checked} orders, {} compositions", primes.len() * primes.len())
        } else {
            summarize(&failures)
        },
    }
}

fn sensing_group(seed: u64) -> GroupReport {
    const DRAWS: u64 = 20_000;
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, &zeta) in [6.0, 10.0, 16.0].iter().enumerate() {
        let cfg = DetectorConfig::new(5, zeta, 2.3).expect("valid detector");
        for (h, (occupied, formula)) in [(false, pfa(&cfg)), (true, pd_rayleigh(&cfg))].into_iter().enumerate() {
            let mut rng = substream(seed, Domain::SelfTest, (i * 2 + h) as u64, 0);
            let hits = (0..DRAWS)
                .filter(|_| detect_sample_level(&cfg, occupied, &mut rng))
                .count();
            let se = (formula * (1.0 - formula) / DRAWS as f64).sqrt();
            let z = (hits as f64 / DRAWS as f64 - formula).abs() / se;
            worst = worst.max(z);
            if z > 4.0 {
                failures.push(format!("zeta={zeta} occupied={occupied} z={z:.2}"));
            }
        }
    }
    for samples in [5u32, 320] {
        for target in [0.01, 0.1, 0.5, 0.9, 0.99] {
            for mode in [ThresholdTarget::ForPfa, ThresholdTarget::ForPd] {
                let ok = solve_threshold(samples, target, mode, 2.3).map(|z| {
                    let cfg = DetectorConfig::new(samples, z, 2.3).expect("valid detector");
                    let got = match mode {
                        ThresholdTarget::ForPfa => pfa(&cfg),
                        ThresholdTarget::ForPd => pd_rayleigh(&cfg),
                    };
                    (got - target).abs() <= 1e-8
                });
                if ok != Ok(true) {
                    failures.push(format!("round trip u={samples} target={target} {mode:?}"));
                }
            }
        }
    }
    GroupReport {
        name: "sensing",
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("max |z| {worst:.2}, 20 threshold round trips")
        } else {
            summarize(&failures)
        },
    }
}

fn occupancy_group(table: &PrimeTable) -> GroupReport {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let n = 4;
    let book = match CodeBook::with_table(n, table.clone()) {
        Ok(b) => b,
        Err(e) => {
            return GroupReport {
                name: "occupancy",
                passed: false,
                detail: format!("code book: {e}"),
            }
        }
    };
    for policy in [CodePolicy::Binary, CodePolicy::MultiLevel] {
        for users in [1usize, 2] {
            let params = SystemParams {
                n_subcarriers: n,
                n_users: users,
                noise_psd: 0.2,
                interference_power: 0.5,
                ..SystemParams::default()
            };
            let local = SensingOutcome { pfa: 0.08, pd: 0.7 };
            let fused = fuse_or(&vec![local; users]).expect("nonempty");
            let model = occupancy_model(params.pr_h1, &fused).expect("valid split");
            let oracle = enumerate_with_book(&params, &fused, policy, &book);
            let analytic =
                PeCalculator::new((&params).into(), policy, Placement::Exact).and_then(|mut c| c.average_pe(&model));
            match (oracle, analytic) {
                (Ok(o), Ok(a)) => {
                    worst = worst.max((o - a).abs());
                    if (o - a).abs() > 1e-12 {
                        failures.push(format!("{policy} K={users}: {a:e} vs {o:e}"));
                    }
                }
                (o, a) => failures.push(format!("{policy} K={users}: {o:?} {a:?}")),
            }
        }
    }
    GroupReport {
        name: "occupancy",
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("N=4, max difference {worst:.1e}")
        } else {
            summarize(&failures)
        },
    }
}

/// Runs every group.
pub fn run(seed: u64, faults: &Faults) -> Vec<GroupReport> {
    let table = faults.table();
    vec![codes_group(&table), sensing_group(seed), occupancy_group(&table)]
}

/// One line per group plus an overall verdict.
pub fn render(reports: &[GroupReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let _ = writeln!(
            s,
            "{}: {} ({})",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.detail
        );
    }
    let all = reports.iter().all(|r| r.passed);
    let _ = writeln!(s, "selftest: {}", if all { "pass" } else { "FAIL" });
    s
}
