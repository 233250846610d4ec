mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use tsnmf::sketch::{scale_columns, RowGaussians, SeededGaussians};
use tsnmf::{sketch_pass, stream_pass, PassOptions, SketchSpec};

fn dense_g(m: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let gen = SeededGaussians { seed };
    let mut g = DMatrix::zeros(m, k);
    let mut row = vec![0.0; k];
    for i in 0..m {
        gen.fill(i as u64, &mut row);
        for (t, v) in row.iter().enumerate() {
            g[(i, t)] = *v;
        }
    }
    g
}

fn sketch_of(x: &DMatrix<f64>, chunk: usize, spec: SketchSpec) -> DMatrix<f64> {
    let out = stream_pass(
        &mut source(x, chunk),
        &PassOptions {
            sketch: Some(spec),
            ..PassOptions::default()
        },
    )
    .unwrap();
    out.sketch.unwrap().entries
}

#[test]
fn matches_dense_product() {
    let mut g = rng(10);
    let x = signed(&mut g, 1300, 9);
    let spec = SketchSpec { k: 6, seed: 77 };
    let want = dense_g(1300, 6, 77).transpose() * &x;
    let got = sketch_of(&x, 100, spec);
    assert!((&got - &want).abs().max() < 1e-11 * want.abs().max());
}

#[test]
fn chunking_is_bitwise_invisible() {
    let mut g = rng(11);
    let x = uniform(&mut g, 2100, 7);
    let spec = SketchSpec { k: 5, seed: 3 };
    let reference = sketch_of(&x, 2100, spec);
    for chunk in [1, 7, 333, 512, 1024, 8192] {
        assert_eq!(sketch_of(&x, chunk, spec), reference, "chunk {chunk}");
    }
}

#[test]
fn sketch_is_linear_in_the_data() {
    let mut g = rng(12);
    let a = signed(&mut g, 700, 4);
    let b = signed(&mut g, 700, 4);
    let spec = SketchSpec { k: 3, seed: 5 };
    let lhs = sketch_of(&(&a * 2.0 - &b), 64, spec);
    let rhs = sketch_of(&a, 64, spec) * 2.0 - sketch_of(&b, 64, spec);
    assert!((&lhs - &rhs).abs().max() < 1e-11 * rhs.abs().max());
}

#[test]
fn scaled_sketch_is_sketch_of_normalized_data() {
    let mut g = rng(13);
    let x = uniform(&mut g, 600, 5);
    let spec = SketchSpec { k: 4, seed: 8 };
    let (stats, sketch) = sketch_pass(&mut source(&x, 50), spec, 4).unwrap();
    let scaled = scale_columns(&sketch, &stats).unwrap();
    let d: Vec<f64> = (0..5).map(|j| x.column(j).sum()).collect();
    let xd = DMatrix::from_fn(600, 5, |i, j| x[(i, j)] / d[j]);
    let want = dense_g(600, 4, 8).transpose() * xd;
    assert!((&scaled.entries - &want).abs().max() < 1e-12 * want.abs().max());
}

#[test]
fn seeds_give_different_sketches() {
    let mut g = rng(14);
    let x = uniform(&mut g, 50, 3);
    let a = sketch_of(&x, 10, SketchSpec { k: 2, seed: 1 });
    let b = sketch_of(&x, 10, SketchSpec { k: 2, seed: 2 });
    assert_ne!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn any_partition_same_bits(seed in any::<u64>(), rows in 3usize..1500, chunk in 1usize..900) {
        let mut g = rng(seed);
        let x = signed(&mut g, rows, 3);
        let spec = SketchSpec { k: 2, seed };
        prop_assert_eq!(sketch_of(&x, chunk, spec), sketch_of(&x, rows, spec));
    }
}
