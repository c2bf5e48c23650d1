use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use gaterag::eval::{bleu, rouge_l};
use gaterag::exec::Executor;
use gaterag::pipeline::{Mode, PipelineConfig};
use gaterag::simlab::{generate_world, WorldSpec};

fn world_config(parallelism: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        mode: Mode::Hybrid,
        parallelism,
        cache_dir: None,
        ..PipelineConfig::default()
    };
    cfg.answerer.model = "bench-answerer".into();
    cfg.verifier.model = "bench-verifier".into();
    cfg
}

fn run_dataset(c: &mut Criterion) {
    let spec = WorldSpec {
        n_questions: 200,
        ..WorldSpec::default()
    };
    let world = generate_world(&spec, &world_config(1)).expect("world");
    let mut group = c.benchmark_group("run_dataset");
    group.sample_size(10);
    for parallelism in [1, 4] {
        let engine = world
            .engine(&world_config(parallelism), None)
            .expect("engine");
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("parallelism={parallelism}")),
            &engine,
            |b, engine| b.iter(|| black_box(engine.run_dataset(&world.records))),
        );
    }
    group.finish();
}

fn score_pairs(c: &mut Criterion) {
    let vocab = [
        "the", "cat", "sat", "on", "mat", "a", "dog", "ran", "far", "away",
    ];
    let pairs: Vec<(String, Vec<String>)> = (0..2000)
        .map(|i| {
            let sentence = |seed: usize, len: usize| {
                (0..len)
                    .map(|j| vocab[(seed * 31 + j * 7 + j * j) % vocab.len()])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            (
                sentence(i, 20 + i % 15),
                vec![sentence(i + 1, 25), sentence(i + 2, 18)],
            )
        })
        .collect();
    let mut group = c.benchmark_group("score_pairs");
    for (label, exec) in [
        ("sequential", Executor::sequential()),
        ("parallel", Executor::new(4)),
    ] {
        group.bench_function(label, |b| {
            b.iter(|| {
                let scores = exec.map(&pairs, |(cand, refs)| {
                    rouge_l(cand, refs) + bleu(cand, refs)
                });
                black_box(scores)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, run_dataset, score_pairs);
criterion_main!(benches);
