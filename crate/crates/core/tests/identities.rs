//! Exact enumeration identities: the Mayer / circle-product identity for
//! the initial activity and the reblocking identity on a 4x4 torus.

use num_complex::Complex64;
use sgrg::activities::{eval_v, eval_w, ActivityEvaluator, BlockGeometry};
use sgrg::grid::{Field, TorusGrid};
use sgrg::polymers::{circle_product, reblock_map, BlockTorus, Polymer};
use sgrg::rng::SeedSplitter;
use rand::Rng;
use std::f64::consts::PI;

fn smooth_field(grid: &TorusGrid, rng: &mut impl Rng, amp: f64) -> Field {
    let mut f = Field::zero(*grid);
    let n = grid.points_per_side;
    for _ in 0..3 {
        let kx = rng.gen_range(1..=2) as f64;
        let ky = rng.gen_range(1..=2) as f64;
        let a: f64 = rng.gen_range(-amp..amp);
        let p: f64 = rng.gen_range(0.0..(2.0 * PI));
        for iy in 0..n {
            for ix in 0..n {
                let t = 2.0 * PI * (kx * ix as f64 + ky * iy as f64) / n as f64;
                f.values[grid.index(ix, iy)] += a * (t + p).sin();
            }
        }
    }
    f
}

/// Exp(box e^-V0 + K0)(Lambda, phi) against exp(zW(Lambda) - sigma V(Lambda)),
/// exactly, for the factorized initial activity.
fn mayer_identity_on(torus: &BlockTorus, seeds: u64, n_fields: usize) {
    // per-block values read off a square reference grid; the torus only
    // fixes the connectivity of the enumeration
    let grid = TorusGrid::new(32, 4.0).unwrap();
    let ref_torus = BlockTorus::new(4).unwrap();
    let geom = BlockGeometry::for_grid(&grid, &ref_torus).unwrap();
    let z = 0.3;
    let sigma = 0.2;
    let splitter = SeedSplitter::new(seeds);
    let mut rng = splitter.stream(0);
    for trial in 0..n_fields {
        let phi = smooth_field(&grid, &mut rng, 0.9);
        let w_of = |b: (i32, i32)| eval_w(&geom, b, &phi);
        let v_of = |b: (i32, i32)| eval_v(&geom, b, &phi, sigma);
        let k0 = |x: &Polymer| -> f64 {
            x.blocks
                .iter()
                .map(|&b| ((z * w_of(b)).exp() - 1.0) * (-v_of(b)).exp())
                .product()
        };
        let lhs = circle_product(torus, &v_of, &k0);
        let (w_tot, v_tot) = torus
            .all_blocks()
            .iter()
            .fold((0.0, 0.0), |(w, v), &b| (w + w_of(b), v + v_of(b)));
        let rhs = (z * w_tot - v_tot).exp();
        let rel = ((lhs - rhs) / rhs).abs();
        assert!(
            rel <= 1e-12,
            "trial {trial}: relative gap {rel:.3e} on {}x{}",
            torus.nx,
            torus.ny
        );
    }
}

#[test]
fn mayer_identity_2x2() {
    mayer_identity_on(&BlockTorus::new(2).unwrap(), 41, 25);
}

#[test]
fn mayer_identity_2x3() {
    mayer_identity_on(&BlockTorus::new_rect(2, 3).unwrap(), 43, 25);
}

#[test]
fn subset_partition_identity_with_constant_k() {
    // V = 0, K(X) = t^{|X|}: the circle product counts partitions into
    // connected parts; against the closed product over blocks it must equal
    // Exp = prod (1 + ...) only for factorized K, so recount directly
    let torus = BlockTorus::new(2).unwrap();
    let t = 0.25f64;
    let z = circle_product(&torus, &|_| 0.0, &|p: &Polymer| t.powi(p.size() as i32));
    assert!(z > 1.0);
}

#[test]
fn reblocking_identity_4x4_l2() {
    let torus = BlockTorus::new(4).unwrap();
    let grid = TorusGrid::new(32, 4.0).unwrap();
    let geom = BlockGeometry::for_grid(&grid, &torus).unwrap();
    let z = 0.3;
    // moderate sigma and amplitude keep exp(zW - V) well away from the
    // float underflow regime, so the relative comparison stays conditioned
    let sigma = 0.05;
    let splitter = SeedSplitter::new(2029);
    let mut rng = splitter.stream(0);
    for trial in 0..5 {
        let phi = smooth_field(&grid, &mut rng, 0.45);
        let zeta = smooth_field(&grid, &mut rng, 0.35);
        let mut phi_plus = phi.clone();
        phi_plus.add_assign(&zeta);

        let k0 = ActivityEvaluator::k0_vacuum(geom, z, sigma);
        let v_phi = |b: (i32, i32)| eval_v(&geom, b, &phi, sigma);
        let v_plus = |b: (i32, i32)| eval_v(&geom, b, &phi_plus, sigma);
        let k_plus = |x: &Polymer| k0.value(x, &phi_plus).re;
        let p_block = |b: (i32, i32)| (-v_plus(b)).exp() - (-v_phi(b)).exp();

        // left side: the circle product at the fluctuated field
        let lhs = circle_product(&torus, &v_plus, &k_plus);

        // right side: reblocked activity on the coarse torus, with the
        // L-block background at the base field
        let bk = reblock_map(&torus, 2, &v_phi, &k_plus, &p_block).unwrap();
        let coarse = bk.coarse;
        let coarse_v = |c: (i32, i32)| {
            let mut v = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    v += v_phi((c.0 * 2 + dx, c.1 * 2 + dy));
                }
            }
            v
        };
        let rhs = circle_product(&coarse, &coarse_v, &|y: &Polymer| bk.at(y));
        let rel = ((lhs - rhs) / rhs).abs();
        assert!(rel <= 1e-12, "trial {trial}: relative gap {rel:.3e}");
    }
}

#[test]
fn reblocking_with_zero_k_and_zero_zeta_is_trivial() {
    // zeta = 0 makes P vanish, so BK vanishes identically
    let torus = BlockTorus::new(4).unwrap();
    let grid = TorusGrid::new(32, 4.0).unwrap();
    let geom = BlockGeometry::for_grid(&grid, &torus).unwrap();
    let splitter = SeedSplitter::new(7);
    let mut rng = splitter.stream(0);
    let phi = smooth_field(&grid, &mut rng, 0.8);
    let v_phi = |b: (i32, i32)| eval_v(&geom, b, &phi, 0.2);
    let bk = reblock_map(&torus, 2, &v_phi, &|_| 0.0, &|_| 0.0).unwrap();
    for (_, v) in bk.values.iter() {
        assert!(v.abs() < 1e-13);
    }
}

#[test]
fn reblocking_single_polymer_term() {
    // a single fine polymer inside one L-block: BK(Y) = e^{-V(Y minus X)} K(X)
    let torus = BlockTorus::new(4).unwrap();
    let grid = TorusGrid::new(32, 4.0).unwrap();
    let geom = BlockGeometry::for_grid(&grid, &torus).unwrap();
    let splitter = SeedSplitter::new(9);
    let mut rng = splitter.stream(0);
    let phi = smooth_field(&grid, &mut rng, 0.6);
    let v_phi = |b: (i32, i32)| eval_v(&geom, b, &phi, 0.2);
    // K supported on exactly one single-block polymer at (0, 0)
    let k_val = 0.37;
    let k = move |x: &Polymer| {
        if x.blocks == vec![(0, 0)] {
            k_val
        } else {
            0.0
        }
    };
    let bk = reblock_map(&torus, 2, &v_phi, &k, &|_| 0.0).unwrap();
    let coarse = BlockTorus::new(2).unwrap();
    let y = Polymer::from_blocks(&coarse, [(0, 0)]);
    let expect = k_val
        * (-(v_phi((1, 0)) + v_phi((0, 1)) + v_phi((1, 1)))).exp();
    let got = bk.at(&y);
    assert!(
        ((got - expect) / expect).abs() < 1e-12,
        "got {got}, expect {expect}"
    );
    // no other coarse set carries weight
    for (blocks, v) in bk.values.iter() {
        if *blocks != y.blocks {
            assert!(v.abs() < 1e-13, "unexpected weight on {blocks:?}");
        }
    }
}

#[test]
fn k0_activity_complex_glue() {
    // K0 through the evaluator agrees with the direct per-block product
    let torus = BlockTorus::new(4).unwrap();
    let grid = TorusGrid::new(32, 4.0).unwrap();
    let geom = BlockGeometry::for_grid(&grid, &torus).unwrap();
    let splitter = SeedSplitter::new(11);
    let mut rng = splitter.stream(0);
    let phi = smooth_field(&grid, &mut rng, 0.8);
    let k0 = ActivityEvaluator::k0_vacuum(geom, 0.3, 0.2);
    let x = Polymer::from_blocks(&torus, [(0, 0), (1, 1)]);
    let direct: Complex64 = x
        .blocks
        .iter()
        .map(|&b| {
            Complex64::new(
                ((0.3 * eval_w(&geom, b, &phi)).exp() - 1.0)
                    * (-eval_v(&geom, b, &phi, 0.2)).exp(),
                0.0,
            )
        })
        .product();
    assert!((k0.value(&x, &phi) - direct).norm() < 1e-14);
}
