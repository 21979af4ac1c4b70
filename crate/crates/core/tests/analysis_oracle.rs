use fscdma_core::ber_analysis::{average_pe, PeCalculator, Placement};
use fscdma_core::oracle::enumerate_average_pe;
use fscdma_core::sensing::{fuse_or, occupancy_model, SensingOutcome};
use fscdma_core::{CodePolicy, SystemParams};

fn case(n: usize, users: usize, noise: f64, inter: f64) -> SystemParams {
    SystemParams {
        n_subcarriers: n,
        n_users: users,
        pr_h1: 0.3,
        noise_psd: noise,
        interference_power: inter,
        ..SystemParams::default()
    }
}

#[test]
fn occupancy_average_matches_enumeration() {
    for n in [1usize, 2, 3, 4, 5, 6] {
        for users in [1usize, 2, 3] {
            if users > n {
                continue;
            }
            for policy in [CodePolicy::Binary, CodePolicy::MultiLevel] {
                for &(noise, inter) in &[(0.1, 0.1), (0.4, 3.0), (0.0, 1.0)] {
                    let p = case(n, users, noise, inter);
                    let fused = fuse_or(&vec![SensingOutcome { pfa: 0.1, pd: 0.6 }; users]).unwrap();
                    let model = occupancy_model(p.pr_h1, &fused).unwrap();
                    let a = average_pe(&p, &model, policy).unwrap();
                    let o = enumerate_average_pe(&p, &fused, policy).unwrap();
                    assert!(
                        (a - o).abs() < 1e-12,
                        "N={n} K={users} {policy} {noise} {inter}: {a} vs {o}"
                    );
                }
            }
        }
    }
}

#[test]
fn sampled_placements_bracket_enumeration() {
    let p = case(6, 2, 0.2, 2.0);
    let fused = fuse_or(&[SensingOutcome { pfa: 0.1, pd: 0.6 }; 2]).unwrap();
    let model = occupancy_model(p.pr_h1, &fused).unwrap();
    let oracle = enumerate_average_pe(&p, &fused, CodePolicy::MultiLevel).unwrap();
    let mut calc = PeCalculator::new((&p).into(), CodePolicy::MultiLevel, Placement::Exact).unwrap();
    let (sampled, se) = calc.average_pe_sampled(&model, 2_000, 17).unwrap();
    assert!((sampled - oracle).abs() <= 3.0 * se, "{sampled} {oracle} {se}");
}

#[test]
fn misdetection_free_model_is_count_only() {
    // With p_mis = 0 placement never matters, so both policies' averages must
    // be reproduced by the sampled path with zero spread.
    let p = case(6, 2, 0.2, 2.0);
    let model = fscdma_core::OccupancyModel {
        pr_h1: 0.3,
        p_zero: 0.25,
        p_mis: 0.0,
    };
    let mut calc = PeCalculator::new((&p).into(), CodePolicy::MultiLevel, Placement::Exact).unwrap();
    let exact = calc.average_pe(&model).unwrap();
    let (sampled, se) = calc.average_pe_sampled(&model, 50, 1).unwrap();
    assert!(se < 1e-15, "{se}");
    assert!((exact - sampled).abs() < 1e-15);
}
