use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use vpcalib::heatmap::{encode_vp_all, select_vp, BBox, ScaleSet, DEFAULT_RESOLUTION, DEFAULT_SIGMA, DEFAULT_TAU};
use vpcalib::projective::{from_diamond, to_diamond, HomogeneousPoint2};

fn diamond(c: &mut Criterion) {
    let points: Vec<HomogeneousPoint2> =
        (0..1000).map(|k| HomogeneousPoint2::new(k as f64 - 500.0, 0.37 * k as f64 + 1.0, 1.0)).collect();
    c.bench_function("diamond round trip x1000", |b| {
        b.iter(|| {
            for p in &points {
                black_box(from_diamond(to_diamond(black_box(*p))));
            }
        })
    });
}

fn heatmaps(c: &mut Criterion) {
    let scales = ScaleSet::default();
    let vp = HomogeneousPoint2::new(-42.0, 7.5, 1.0);
    c.bench_function("encode 4 scales", |b| {
        b.iter(|| encode_vp_all(black_box(vp), &scales, DEFAULT_RESOLUTION, DEFAULT_SIGMA).unwrap())
    });
    let maps = encode_vp_all(vp, &scales, DEFAULT_RESOLUTION, DEFAULT_SIGMA).unwrap();
    let bbox = BBox::new(-1.0, -1.0, 1.0, 1.0).unwrap();
    c.bench_function("select_vp 4 scales", |b| b.iter(|| select_vp(black_box(&maps), &bbox, DEFAULT_TAU).unwrap()));
}

criterion_group!(benches, diamond, heatmaps);
criterion_main!(benches);
