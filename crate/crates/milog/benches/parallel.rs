//! Parallel vs. sequential comparison for the data-parallel hot loops:
//! automorphism enumeration, brute-force isomorphism, and back-and-forth
//! table construction. Build with the default `parallel` feature; the
//! `*_seq` entry points always run single-threaded.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use milog::corpus::random_structure_sized;
use milog::scott::BackAndForthTables;
use milog::structure::{brute_force_isomorphic, brute_force_isomorphic_seq, FiniteStructure};

/// A 7-point structure with a constant unary predicate and uniform
/// distances: every permutation must be checked and many survive.
fn symmetric_structure(points: usize) -> FiniteStructure {
    use milog::rational::{int, rat};
    use milog::signature::{PredicateSymbol, Signature};
    let sig = Signature {
        predicates: vec![PredicateSymbol {
            name: "P".into(),
            arity: 1,
            lipschitz: int(1),
        }],
        functions: vec![],
        constants: vec![],
    };
    let names: Vec<String> = (0..points).map(|i| format!("p{i}")).collect();
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut m = FiniteStructure::new(sig, &refs);
    for i in 0..points {
        for j in (i + 1)..points {
            m.set_distance(&names[i], &names[j], rat(1, 2));
        }
    }
    for name in &refs {
        m.set_predicate("P", &[name], rat(1, 3));
    }
    m
}

fn bench_automorphisms(c: &mut Criterion) {
    let m = symmetric_structure(7);
    let mut group = c.benchmark_group("automorphisms_7pt");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| black_box(&m).automorphisms()));
    group.bench_function("sequential", |b| b.iter(|| black_box(&m).automorphisms_seq()));
    group.finish();
}

fn bench_isomorphism(c: &mut Criterion) {
    let m = symmetric_structure(7);
    let n = milog::corpus::renamed_copy(&m, "q");
    let mut group = c.benchmark_group("isomorphism_7pt");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| brute_force_isomorphic(black_box(&m), black_box(&n)))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| brute_force_isomorphic_seq(black_box(&m), black_box(&n)))
    });
    group.finish();
}

fn bench_bf_tables(c: &mut Criterion) {
    let m = random_structure_sized(11, 4, 4);
    let cap = m.point_count();
    let mut group = c.benchmark_group("bf_tables_4pt_cap4");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| BackAndForthTables::compute(black_box(&m), cap).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| BackAndForthTables::compute_seq(black_box(&m), cap).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_automorphisms, bench_isomorphism, bench_bf_tables);
criterion_main!(benches);
