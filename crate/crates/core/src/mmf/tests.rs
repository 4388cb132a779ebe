use super::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn random_spd(n: usize, density: f64, seed: u64) -> SparseSymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, n as f64 * 0.5 + rng.gen::<f64>()));
        for j in 0..i {
            if rng.gen::<f64>() < density {
                let v = rng.gen_range(-1.0..1.0);
                t.push((i, j, v));
                t.push((j, i, v));
            }
        }
    }
    SparseSymMatrix::from_triplets(n, t).unwrap()
}

fn dense_rot(n: usize, g: &KPointRotation) -> DMatrix<f64> {
    let mut q = DMatrix::identity(n, n);
    let k = g.k();
    for (r, &i) in g.indices.iter().enumerate() {
        for (c, &j) in g.indices.iter().enumerate() {
            q[(i, j)] = g.block[r * k + c];
        }
    }
    q
}

fn cfg(target_core: usize, max_block: usize, seed: u64) -> PmmfConfig {
    PmmfConfig { target_core, max_block, seed, ..PmmfConfig::default() }
}

/// `||A - QᵀHQ||_F²` from dense products of the individual rotations.
fn dense_error_sq(a: &SparseSymMatrix, f: &MmfFactorization) -> f64 {
    let n = a.n();
    let mut q = DMatrix::identity(n, n);
    for r in &f.rotations {
        q = dense_rot(n, r) * q;
    }
    let mut h = DMatrix::zeros(n, n);
    let ci = f.h.core_indices.as_slice();
    for (p, &i) in ci.iter().enumerate() {
        for (s, &j) in ci.iter().enumerate() {
            h[(i, j)] = f.h.core[(p, s)];
        }
    }
    for &(i, d) in &f.h.diagonal {
        h[(i, i)] = d;
    }
    (a.to_dense() - q.transpose() * h * q).norm_squared()
}

#[test]
fn diagonal_pair_is_left_alone() {
    let w = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
    let g = &w * &w;
    let ch = find_rotation(&w, &g, &[0, 1], 0);
    assert!(ch.rotation.is_none());
    assert_eq!(ch.error_contribution, 0.0);
}

#[test]
fn equal_diagonal_pair_rotates_by_quarter_turn() {
    let w = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let g = &w * &w;
    let ch = find_rotation(&w, &g, &[0, 1], 0);
    let rot = ch.rotation.expect("rotation");
    assert_eq!(ch.partner, Some(1));
    let theta = rot.sin.atan2(rot.cos);
    assert!((theta.abs() - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    let mut m = w.clone();
    rotate_dense(&mut m, &rot);
    let mut d = [m[(0, 0)], m[(1, 1)]];
    d.sort_by(f64::total_cmp);
    assert!((d[0] - 1.0).abs() < 1e-14 && (d[1] - 3.0).abs() < 1e-14);
    assert!(m[(0, 1)].abs() < 1e-15);
    assert!(ch.error_contribution.abs() < 1e-28);
}

#[test]
fn jacobi_angle_annihilates() {
    for &(a, b, c) in &[(1.0, 0.3, 5.0), (4.0, -2.0, 1.0), (-3.0, 1e-3, 2.0), (1.0, 5.0, 1.0)] {
        let t: f64 = jacobi_angle(a, b, c);
        assert!(t > -std::f64::consts::FRAC_PI_4 - 1e-15 && t <= std::f64::consts::FRAC_PI_4 + 1e-15);
        let (s, co) = t.sin_cos();
        let off = co * s * (a - c) + (co * co - s * s) * b;
        assert!(off.abs() < 1e-14 * (a.abs() + b.abs() + c.abs()));
    }
}

#[test]
fn duplicated_columns_pick_each_other() {
    // columns 1 and 3 are identical
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[5.0, 1.0, 0.5, 1.0, 1.0, 2.0, 0.0, 2.0, 0.5, 0.0, 3.0, 0.0, 1.0, 2.0, 0.0, 2.0],
    );
    let g = a.transpose() * &a;
    let active = [0, 1, 2, 3];
    assert_eq!(find_rotation(&a, &g, &active, 1).partner, Some(3));
    assert_eq!(find_rotation(&a, &g, &active, 3).partner, Some(1));
}

#[test]
fn sparse_rotation_matches_dense_oracle() {
    let a = random_spd(12, 0.3, 4);
    let mut w = Working::new(&a);
    let (i, j, t) = (3, 8, 0.37f64);
    let (s, c) = t.sin_cos();
    w.rotate(i, j, c, s);
    let q = dense_rot(12, &KPointRotation::givens(i, j, c, s, 0));
    let expect = &q * a.to_dense() * q.transpose();
    let got = w.dense_block(&(0..12).collect::<Vec<_>>());
    assert!((got - &expect).norm() < 1e-13);
    for r in 0..12 {
        for &(k, v) in &w.rows[r] {
            assert_eq!(v, w.get(k, r), "symmetry at ({r},{k})");
        }
    }
}

#[test]
fn greedy_error_identity_on_random_spd() {
    let a = random_spd(32, 0.4, 1);
    let f = greedy_mmf(&a, 16, &cfg(0, 2000, 5)).unwrap();
    assert_eq!(f.retirements.len(), 16);
    assert_eq!(f.core_size(), 16);
    let oracle = dense_error_sq(&a, &f);
    assert!(oracle > 0.0);
    assert!((oracle - f.recorded_error_sq).abs() <= 1e-10 * oracle.max(1.0), "{oracle} vs {}", f.recorded_error_sq);
    let recon = f.reconstruct_dense();
    assert!(((a.to_dense() - recon).norm_squared() - oracle).abs() <= 1e-10 * oracle);
}

#[test]
fn blocked_error_identity_and_orthogonality() {
    let a = random_spd(48, 0.15, 2);
    let f = pmmf(&a, &cfg(6, 10, 9)).unwrap();
    assert!(f.core_size() <= 6);
    assert!(f.stage_ends.len() > 1);
    let oracle = dense_error_sq(&a, &f);
    assert!((oracle - f.recorded_error_sq).abs() <= 1e-10 * oracle.max(1.0));
    let q = f.dense_q();
    assert!((q.transpose() * &q - DMatrix::identity(48, 48)).norm() < 1e-12);
    for r in &f.rotations {
        assert!(r.orthogonality_error() < 1e-14);
    }
}

#[test]
fn retired_indices_are_never_rotated_again() {
    let a = random_spd(40, 0.2, 3);
    for f in [greedy_mmf(&a, 30, &cfg(0, 2000, 1)).unwrap(), pmmf(&a, &cfg(5, 8, 1)).unwrap()] {
        for r in &f.retirements {
            assert!(f.rotations[r.after_rotations..].iter().all(|q| !q.indices.contains(&r.index)));
        }
        let sched = f.schedule();
        assert!(sched.windows(2).all(|w| w[1] + 1 == w[0]));
        let mut seen: Vec<usize> = f.retirements.iter().map(|r| r.index).collect();
        seen.extend(f.h.core_indices.iter());
        seen.sort_unstable();
        assert_eq!(seen, (0..40).collect::<Vec<_>>());
        assert_eq!(f.h.core, f.h.core.transpose());
    }
}

#[test]
fn identity_factors_exactly() {
    let a = SparseSymMatrix::identity(512);
    let f = pmmf(&a, &PmmfConfig::default()).unwrap();
    assert!(f.core_size() <= 100);
    assert_eq!(f.recorded_error_sq, 0.0);
    assert!(f.rotations.is_empty());
    let p = MmfPreconditioner::new(f);
    let v: Vec<f64> = (0..512).map(|i| i as f64).collect();
    assert_eq!(p.apply(&v).unwrap(), v);
}

#[test]
fn block_diagonal_never_mixes_blocks() {
    let a = random_spd(20, 0.5, 7);
    let b = random_spd(20, 0.5, 8);
    let mut t: Vec<_> = a.triplets().collect();
    t.extend(b.triplets().map(|(i, j, v)| (i + 20, j + 20, v)));
    let m = SparseSymMatrix::from_triplets(40, t).unwrap();
    let clusters = cluster_columns(&cluster::MatrixColumns::new(&m), &(0..40).collect::<Vec<_>>(), 20, 3);
    for c in &clusters {
        assert!(c.iter().all(|&i| i < 20) || c.iter().all(|&i| i >= 20));
    }
    for f in [pmmf(&m, &cfg(4, 20, 2)).unwrap(), greedy_mmf(&m, 30, &cfg(0, 2000, 2)).unwrap()] {
        for r in &f.rotations {
            assert_eq!(r.indices[0] < 20, r.indices[1] < 20);
        }
    }
}

#[test]
fn clusters_partition_and_respect_cap() {
    let a = random_spd(200, 0.02, 11);
    let active: Vec<usize> = (0..200).filter(|i| i % 3 != 0).collect();
    let c = cluster_columns(&cluster::MatrixColumns::new(&a), &active, 16, 4);
    let mut all: Vec<usize> = c.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, active);
    assert!(c.iter().all(|b| !b.is_empty() && b.len() <= 16));
    assert_eq!(c, cluster_columns(&cluster::MatrixColumns::new(&a), &active, 16, 4));
}

#[test]
fn quotas_respect_budget() {
    assert_eq!(quotas(&[10, 5], 0.5, 100), vec![5, 3]);
    let q = quotas(&[10, 10, 10], 0.5, 7);
    assert_eq!(q.iter().sum::<usize>(), 7);
    assert!(q.iter().zip([10, 10, 10]).all(|(a, b)| *a <= b));
}

#[test]
fn inverse_undoes_factored() {
    let a = random_spd(30, 0.3, 12);
    let p = MmfPreconditioner::new(pmmf(&a, &cfg(4, 8, 3)).unwrap());
    let v: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin()).collect();
    let back = p.apply_inverse(&p.apply_factored(&v).unwrap()).unwrap();
    let err: f64 = back.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(err < 1e-10, "{err}");
}

#[test]
fn zero_diagonal_is_clamped_and_flagged() {
    let mut f = greedy_mmf(&random_spd(8, 0.3, 1), 4, &cfg(0, 2000, 0)).unwrap();
    f.h.diagonal[0].1 = 0.0;
    let p = MmfPreconditioner::new(f);
    assert!(p.flags().iter().any(|s| s.starts_with("mmf_diagonal_clamped")));
    assert!(p.apply(&[1.0; 8]).unwrap().iter().all(|x| x.is_finite()));
}

#[test]
fn text_format_round_trips_bit_exactly() {
    let a = random_spd(40, 0.2, 5);
    let f = pmmf(&a, &cfg(5, 9, 6)).unwrap();
    let back = MmfFactorization::from_text(&f.to_text()).unwrap();
    assert_eq!(back, f);
    let v: Vec<f64> = (0..40).map(|i| 1.0 / (i as f64 + 0.3)).collect();
    let (x, y) = (f.apply_factored(&v).unwrap(), back.apply_factored(&v).unwrap());
    assert!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn text_format_rejects_garbage() {
    let f = greedy_mmf(&random_spd(6, 0.5, 1), 3, &cfg(0, 2000, 0)).unwrap();
    let text = f.to_text();
    assert!(MmfFactorization::from_text("mmf-factorization v2\n").is_err());
    assert!(MmfFactorization::from_text(&text[..text.len() / 2]).is_err());
    assert!(MmfFactorization::from_text(&text.replace("core 3", "core 2")).is_err());
}

#[test]
fn config_validation() {
    let a = SparseSymMatrix::identity(4);
    assert!(pmmf(&a, &PmmfConfig { k: 3, ..PmmfConfig::default() }).is_err());
    assert!(pmmf(&a, &PmmfConfig { wavelet_fraction: 1.0, ..PmmfConfig::default() }).is_err());
    assert!(pmmf(&a, &PmmfConfig { max_block: 1, ..PmmfConfig::default() }).is_err());
}

#[test]
fn factorization_is_thread_count_independent() {
    let a = random_spd(300, 0.01, 21);
    let c = cfg(20, 40, 17);
    let one = par::with_threads(1, || pmmf(&a, &c).unwrap());
    let many = par::with_threads(4, || pmmf(&a, &c).unwrap());
    assert_eq!(one, many);
    assert_eq!(one.to_text(), pmmf(&a, &c).unwrap().to_text());
}

#[test]
fn mismatched_lengths_are_rejected() {
    let f = greedy_mmf(&SparseSymMatrix::identity(4), 2, &cfg(0, 2000, 0)).unwrap();
    assert!(matches!(f.apply_factored(&[1.0; 3]), Err(Error::DimensionMismatch { expected: 4, got: 3 })));
}

#[test]
fn recovers_a_planted_rotation() {
    let theta = 0.3f64;
    let (s, c) = theta.sin_cos();
    let q = dense_rot(2, &KPointRotation::givens(0, 1, c, s, 0));
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[1.0, 4.0]));
    let a = SparseSymMatrix::from_dense(&(q.transpose() * d * &q)).unwrap();
    for seed in 0..4 {
        let f = greedy_mmf(&a, 1, &cfg(0, 2000, seed)).unwrap();
        assert!(f.recorded_error_sq < 1e-28);
        let r = &f.rotations[0];
        let found = r.block[2].atan2(r.block[0]).abs();
        let half = std::f64::consts::FRAC_PI_2;
        let dist = |x: f64| x.rem_euclid(half).min(half - x.rem_euclid(half));
        assert!(dist(found - theta) < 1e-12 || dist(found + theta) < 1e-12, "{found}");
    }
}

#[test]
fn small_active_set_is_one_cluster() {
    let a = random_spd(30, 0.2, 1);
    let c = cluster_columns(&MatrixColumns::new(&a), &[4, 2, 9], 3, 0);
    assert_eq!(c, vec![vec![2, 4, 9]]);
}

#[test]
fn diagonal_input_has_zero_error() {
    let a = SparseSymMatrix::diagonal(&(1..=64).map(|i| i as f64 * 0.5).collect::<Vec<_>>());
    let f = greedy_mmf(&a, 40, &cfg(0, 2000, 2)).unwrap();
    assert_eq!(f.recorded_error_sq, 0.0);
    assert!((f.reconstruct_dense() - a.to_dense()).norm() == 0.0);
}

#[test]
fn blocked_error_is_comparable_to_greedy() {
    // soft property: only printed
    let a = random_spd(256, 0.02, 30);
    let g = greedy_mmf(&a, 156, &cfg(100, 2000, 1)).unwrap();
    let p = pmmf(&a, &cfg(100, 64, 1)).unwrap();
    eprintln!(
        "greedy error {:.4e}, blocked error {:.4e} (core {} vs {})",
        g.recorded_error_sq,
        p.recorded_error_sq,
        g.core_size(),
        p.core_size()
    );
    assert!(g.recorded_error_sq.is_finite() && p.recorded_error_sq.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prop_error_identity(n in 4usize..24, seed in 0u64..1000, block in 2usize..12, frac in 0.2f64..0.8) {
        let a = random_spd(n, 0.3, seed);
        let c = PmmfConfig { wavelet_fraction: frac, target_core: 2, max_block: block, seed, ..PmmfConfig::default() };
        let f = pmmf(&a, &c).unwrap();
        let oracle = dense_error_sq(&a, &f);
        prop_assert!((oracle - f.recorded_error_sq).abs() <= 1e-9 * oracle.max(1.0));
        prop_assert!(f.core_size() <= 2 || !f.flags.is_empty());
    }
}
