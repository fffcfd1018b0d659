//! Sequential vs. parallel throughput for generation and exact inference.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use causalbench::dataset::{generate_dataset, GenerationConfig};
use causalbench::inference::query_value;
use causalbench::par::{map_slice, Execution};
use causalbench::scm::random_binary_scm;
use causalbench::{Event, Motif, Query};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Auto),
];

fn generation(c: &mut Criterion) {
    let cfg = GenerationConfig {
        seed: 1,
        count: 256,
        ..Default::default()
    };
    let mut group = c.benchmark_group("generate");
    group.throughput(Throughput::Elements(cfg.count as u64));
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_dataset(&cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let cases: Vec<(causalbench::Scm, Query)> = (0..256u64)
        .map(|k| {
            let scm = random_binary_scm(k, 7, Motif::Mixed).unwrap();
            let sink = scm
                .graph()
                .nodes()
                .filter(|&n| scm.graph().is_sink(n))
                .last()
                .unwrap();
            let cause = scm
                .graph()
                .nodes()
                .find(|&n| n != sink && scm.graph().has_path(n, sink))
                .unwrap();
            let q = Query::counterfactual(
                Event::from_pairs([(sink, 1)]),
                [(cause, 0)].into_iter().collect(),
                Event::from_pairs([(cause, 1), (sink, 1)]),
            );
            (scm, q)
        })
        .collect();
    let mut group = c.benchmark_group("counterfactual");
    group.throughput(Throughput::Elements(cases.len() as u64));
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| map_slice(&cases, exec, |(scm, q)| query_value(scm, q).ok()))
        });
    }
    group.finish();
}

criterion_group!(benches, generation, inference);
criterion_main!(benches);
