use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use wolff_core::kernels::{riesz_kernel, BarField, DyadicKernelMap, NaiveBarField};
use wolff_core::lattice::LatticeWindow;
use wolff_core::measures::AtomicMeasure;
use wolff_core::par::Execution;
use wolff_core::suites::{fubini_suite, shifted_suite, FubiniSuite, Generator, ShiftedSuite};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn instance_suite(c: &mut Criterion) {
    let suite = FubiniSuite {
        generator: Generator {
            instances: 24,
            ..Generator::default()
        },
        ..FubiniSuite::default()
    };
    let mut g = c.benchmark_group("fubini_suite");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| fubini_suite(black_box(&suite), 7, exec).unwrap()));
    }
    g.finish();
}

fn shifted_average(c: &mut Criterion) {
    let suite = ShiftedSuite {
        shift_samples: 2_000,
        seeds: 2,
        ..ShiftedSuite::default()
    };
    let mut g = c.benchmark_group("shifted_average");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| shifted_suite(black_box(&suite), 7, exec).unwrap()));
    }
    g.finish();
}

fn bar_queries(c: &mut Criterion) {
    let mut g = c.benchmark_group("bar_query");
    for depth in [6, 9] {
        let window = LatticeWindow::unit(1, 0, depth).unwrap();
        let sigma = AtomicMeasure::lebesgue_grid(&[0.0], &[1.0], depth + 2).unwrap();
        let kernel = DyadicKernelMap::radial(riesz_kernel(0.5, 1).unwrap());
        let fast = BarField::build(&kernel, &sigma, &window).unwrap();
        let naive = NaiveBarField::build(&kernel, &sigma, &window).unwrap();
        let queries: Vec<(usize, [f64; 1])> = (0..64)
            .map(|i| (i % window.len(), [(i as f64 + 0.5) / 64.0]))
            .collect();
        g.bench_with_input(BenchmarkId::new("prefix", depth), &queries, |b, qs| {
            b.iter(|| qs.iter().map(|(id, x)| fast.value(*id, x).unwrap()).sum::<f64>())
        });
        g.bench_with_input(BenchmarkId::new("naive", depth), &queries, |b, qs| {
            b.iter(|| qs.iter().map(|(id, x)| naive.value(*id, x).unwrap()).sum::<f64>())
        });
    }
    g.finish();
}

criterion_group!(benches, instance_suite, shifted_average, bar_queries);
criterion_main!(benches);
