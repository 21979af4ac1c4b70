use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use fscdma_core::ber_analysis::{PeCalculator, Placement};
use fscdma_core::montecarlo::{estimate_ber, RunConfig};
use fscdma_core::orthocodes::{build, verify, CodeBook};
use fscdma_core::phylink::{draw_slot, transmit_and_receive, DetectionProbs};
use fscdma_core::rng::{substream, Domain};
use fscdma_core::sensing::{
    occupancy_model, pd_rayleigh, solve_threshold, DetectorConfig, FusionResult, ThresholdTarget,
};
use fscdma_core::{CodePolicy, SystemParams};

fn codes(c: &mut Criterion) {
    let mut g = c.benchmark_group("codes");
    for n in [27usize, 60, 64] {
        g.bench_with_input(BenchmarkId::new("build_verify", n), &n, |b, &n| {
            b.iter(|| verify(&build(black_box(n)).unwrap().to_rows()).is_orthogonal)
        });
    }
    g.finish();
}

fn sensing(c: &mut Criterion) {
    let cfg = DetectorConfig::new(320, 900.0, 27.35).unwrap();
    c.bench_function("sensing/pd_rayleigh_u320", |b| b.iter(|| pd_rayleigh(black_box(&cfg))));
    c.bench_function("sensing/solve_threshold_u320", |b| {
        b.iter(|| solve_threshold(320, black_box(0.527), ThresholdTarget::ForPd, 27.35).unwrap())
    });
}

fn analysis(c: &mut Criterion) {
    let fused = FusionResult {
        qfa: 1e-12,
        qd: 0.95,
        k_users: 4,
    };
    let model = occupancy_model(0.2, &fused).unwrap();
    let mut g = c.benchmark_group("average_pe");
    for policy in [CodePolicy::Binary, CodePolicy::MultiLevel] {
        let params = SystemParams::default();
        g.bench_function(policy.name(), |b| {
            b.iter(|| {
                PeCalculator::new((&params).into(), policy, Placement::Exact)
                    .unwrap()
                    .average_pe(black_box(&model))
                    .unwrap()
            })
        });
    }
    g.finish();
}

fn link(c: &mut Criterion) {
    let params = SystemParams::default();
    let book = CodeBook::new(32).unwrap();
    let probs = DetectionProbs { pd: 0.527, pfa: 1e-12 };
    let mut rng = substream(1, Domain::Slots, 0, 0);
    let slot = draw_slot(&params, probs, &book, CodePolicy::MultiLevel, &mut rng).unwrap();
    c.bench_function("link/draw_slot", |b| {
        b.iter(|| draw_slot(&params, probs, &book, CodePolicy::MultiLevel, &mut rng).unwrap())
    });
    c.bench_function("link/transmit_and_receive_k4", |b| {
        b.iter(|| transmit_and_receive(&slot, &params, black_box(&[1, -1, 1, 1]), &mut rng).unwrap())
    });
    let cfg = RunConfig {
        trials_min: 20_000,
        target_error_events: 1,
        max_trials: 20_000,
        ..RunConfig::default()
    };
    let mut g = c.benchmark_group("montecarlo");
    g.sample_size(10);
    g.bench_function("estimate_ber_one_round", |b| {
        b.iter(|| estimate_ber(&cfg, black_box(10.0)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, codes, sensing, analysis, link);
criterion_main!(benches);
