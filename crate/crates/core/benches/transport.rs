use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, DVector};
use penumbra_core::geometry::{SceneConfig, VoxelGrid};
use penumbra_core::transport::{
    build_transport, render_linearized, TransportMatrix, VisibilitySet,
};

struct Fixture {
    a: TransportMatrix,
    vis: VisibilitySet,
    dense: Vec<DMatrix<f64>>,
    alpha: Vec<f64>,
    f: Vec<f64>,
    b: Vec<f64>,
}

fn fixture() -> Fixture {
    let cfg = SceneConfig::square((1.0, 32), (0.8, 8), 1.0, (6, 3, 6));
    let grid = VoxelGrid::from_config(&cfg).unwrap();
    let a = build_transport(&cfg).unwrap();
    let vis = VisibilitySet::from_config(&cfg, &grid);
    let ad = a.to_dmatrix();
    let dense = vis
        .items
        .iter()
        .map(|v| ad.component_mul(&v.to_dense(a.rows, a.cols)))
        .collect();
    let alpha = (0..vis.len())
        .map(|k| ((k * 37) % 11) as f64 / 10.0)
        .collect();
    let f = (0..a.cols).map(|n| 0.5 + (n % 5) as f64 * 0.1).collect();
    let b = vec![0.0; a.rows];
    Fixture {
        a,
        vis,
        dense,
        alpha,
        f,
        b,
    }
}

fn dense_render(fx: &Fixture) -> DVector<f64> {
    let mut eff = fx.a.to_dmatrix();
    for (k, m) in fx.dense.iter().enumerate() {
        eff -= m * fx.alpha[k];
    }
    eff * DVector::from_column_slice(&fx.f)
}

fn sparse_vs_dense(c: &mut Criterion) {
    let fx = fixture();
    let mut g = c.benchmark_group("linearized_render");
    g.sample_size(20);
    g.bench_function("sparse", |b| {
        b.iter(|| render_linearized(&fx.a, &fx.vis, black_box(&fx.alpha), &fx.f, &fx.b).unwrap())
    });
    g.bench_function("dense", |b| b.iter(|| dense_render(black_box(&fx))));
    g.finish();
}

fn parallel_vs_sequential(c: &mut Criterion) {
    let fx = fixture();
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let mut g = c.benchmark_group("threads");
    g.sample_size(20);
    g.bench_function("sequential", |b| {
        b.iter(|| {
            one.install(|| {
                render_linearized(&fx.a, &fx.vis, black_box(&fx.alpha), &fx.f, &fx.b).unwrap()
            })
        })
    });
    g.bench_function("parallel", |b| {
        b.iter(|| render_linearized(&fx.a, &fx.vis, black_box(&fx.alpha), &fx.f, &fx.b).unwrap())
    });
    g.finish();
}

criterion_group!(benches, sparse_vs_dense, parallel_vs_sequential);
criterion_main!(benches);
