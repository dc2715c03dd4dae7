//! Sequential recurrence against the work-efficient parallel scan.
//!
//! `cargo bench --bench scan` runs the parallel scan on the rayon pool;
//! add `--no-default-features` for the single-threaded build of the same kernel.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use phasescan::ssm::{ScanInputs, ScanMode};
use std::hint::black_box;

fn scan(c: &mut Criterion) {
    let mut group = c.benchmark_group(if phasescan::par::is_parallel() { "scan/rayon" } else { "scan/sequential-build" });
    for &len in &[64usize, 512, 4096] {
        let inputs = ScanInputs::<f32>::random(len, 16, 8, 0);
        group.throughput(Throughput::Elements(len as u64));
        for (name, mode) in [("sequential", ScanMode::Sequential), ("parallel", ScanMode::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, len), &inputs, |b, x| {
                b.iter(|| black_box(x.run(mode).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, scan);
criterion_main!(benches);
