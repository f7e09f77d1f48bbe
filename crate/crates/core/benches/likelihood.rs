//! Sequential vs rayon reductions of the log-likelihood and its gradient.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ctsurv::data::VariantMix;
use ctsurv::hazard::{CompiledLikelihood, HazardModel, LikelihoodOptions, ThresholdConfig, VariantKnowledge};
use ctsurv::parallel::Reduction;
use ctsurv::simulation::{synthetic_curves, SimConfig, TrialDesign};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const REDUCTIONS: [Reduction; 3] = [Reduction::Sequential, Reduction::Ordered, Reduction::Unordered];

fn likelihood(c: &mut Criterion) {
    let mut group = c.benchmark_group("log_lik");
    for n in [500, 5000] {
        let design = TrialDesign::new(
            &SimConfig {
                n_subjects: n,
                ..Default::default()
            },
            &synthetic_curves(),
        )
        .unwrap();
        let data = design.simulate(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mix = VariantMix::single(data.grid(), data.n_sites());
        let threshold = ThresholdConfig::none();
        let refs = vec![10; data.n_sites()];
        let params = design.true_parameters(&refs);
        let compiled = CompiledLikelihood::new(
            &data,
            &mix,
            threshold,
            LikelihoodOptions::default(),
            VariantKnowledge::Unknown,
        )
        .unwrap();
        let model = HazardModel::new(data.grid(), &mix, threshold);

        for reduction in REDUCTIONS {
            let label = format!("{reduction:?}");
            group.bench_with_input(BenchmarkId::new(format!("compiled/{label}"), n), &n, |b, _| {
                b.iter(|| black_box(compiled.log_lik_with(black_box(&params), reduction).unwrap()))
            });
            group.bench_with_input(BenchmarkId::new(format!("gradient/{label}"), n), &n, |b, _| {
                b.iter(|| black_box(compiled.log_lik_gradient(black_box(&params), reduction).unwrap()))
            });
            group.bench_with_input(BenchmarkId::new(format!("daily/{label}"), n), &n, |b, _| {
                b.iter(|| {
                    black_box(
                        model
                            .log_lik_total(black_box(&params), &data, VariantKnowledge::Unknown, reduction)
                            .unwrap(),
                    )
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, likelihood);
criterion_main!(benches);
