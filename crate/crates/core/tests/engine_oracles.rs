use dtucker::engine::{
    execute_tree, hooi_sweep, hooi_sweep_with_stats, leading_left_factors, projector, reconstruction_error, ttm, unfold,
    DenseTensor, Decomposition, Matrix, SweepMode,
};
use dtucker::tree::{tree_cost, TreeStrategy};
use dtucker::{Error, ProblemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Left singular vectors and values of `a` by one-sided Jacobi rotations on
/// the columns of `aᵀ`, sorted by decreasing singular value.
fn jacobi_svd_left(a: &Matrix) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (rows, cols) = a.shape();
    // w[j] is column j of aᵀ, i.e. row j of a.
    let mut w: Vec<Vec<f64>> = (0..rows).map(|j| (0..cols).map(|c| a[(j, c)]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..rows).map(|j| (0..rows).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..rows {
            for q in p + 1..rows {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for x in [&mut w, &mut v] {
                    for i in 0..x[p].len() {
                        let (xp, xq) = (x[p][i], x[q][i]);
                        x[p][i] = c * xp - s * xq;
                        x[q][i] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    // aᵀ V = W, so a = V Wᵀ and the columns of V are the left singular vectors.
    let sigma: Vec<f64> = w.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    // v[j] holds column j of V as a row of the accumulated rotation.
    let vecs = order.iter().map(|&j| (0..rows).map(|i| v[j][i]).collect()).collect();
    (vecs, order.iter().map(|&j| sigma[j]).collect())
}

fn oracle_projector(a: &Matrix, k: usize) -> (Matrix, f64) {
    let (vecs, sigma) = jacobi_svd_left(a);
    let rows = a.nrows();
    let f = Matrix::from_fn(rows, k, |i, j| vecs[j][i]);
    let gap = if k < rows { (sigma[k - 1] - sigma[k]) / sigma[0] } else { 1.0 };
    (&f * f.transpose(), gap)
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

#[test]
fn jacobi_oracle_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = gaussian(5, 9, &mut rng);
    let (vecs, sigma) = jacobi_svd_left(&a);
    let u = Matrix::from_fn(5, 5, |i, j| vecs[j][i]);
    assert!((u.transpose() * &u - Matrix::identity(5, 5)).norm() < 1e-12);
    let svd = a.clone().svd(false, false);
    let mut reference: Vec<f64> = svd.singular_values.iter().copied().collect();
    reference.sort_by(|x, y| y.total_cmp(x));
    for (s, r) in sigma.iter().zip(&reference) {
        assert!((s - r).abs() < 1e-10);
    }
}

#[test]
fn leading_factors_match_svd_projector() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for _ in 0..40 {
        let rows = rng.random_range(2..10);
        let cols = rng.random_range(rows..40);
        let k = rng.random_range(1..=rows);
        let a = gaussian(rows, cols, &mut rng);
        let (p_oracle, gap) = oracle_projector(&a, k);
        if gap < 1e-3 {
            continue;
        }
        let f = leading_left_factors(&a, k).unwrap();
        assert!(!f.degenerate);
        assert!((projector(&f.vectors) - p_oracle).norm() < 1e-9);
        checked += 1;
    }
    assert!(checked >= 30);
}

#[test]
fn jacobi_sweep_factors_match_svd_of_projected_tensor() {
    let t = DenseTensor::random(vec![7, 6, 5, 4], 11);
    let core = [3, 2, 3, 2];
    let init = Decomposition::random_init(&t, &core, 12).unwrap();
    let spec = ProblemSpec::new(vec![7, 6, 5, 4], core.iter().map(|&k| k as u64).collect()).unwrap();
    let d = hooi_sweep(&t, &init, &TreeStrategy::Opt.build(&spec).unwrap(), SweepMode::Jacobi).unwrap();
    for n in 0..4 {
        let mut z = t.clone();
        for m in (0..4).filter(|&m| m != n) {
            z = ttm(&z, &init.factors[m].transpose(), m).unwrap();
        }
        let (p_oracle, gap) = oracle_projector(&unfold(&z, n).unwrap(), core[n]);
        assert!(gap > 1e-6);
        assert!((projector(&d.factors[n]) - p_oracle).norm() < 1e-9, "mode {n}");
    }
}

#[test]
fn ttm_commutes_across_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = DenseTensor::random(vec![5, 6, 7], 4);
    let a = gaussian(3, 5, &mut rng);
    let b = gaussian(4, 7, &mut rng);
    let one = ttm(&ttm(&t, &a, 0).unwrap(), &b, 2).unwrap();
    let two = ttm(&ttm(&t, &b, 2).unwrap(), &a, 0).unwrap();
    assert_eq!(one.dims(), [3, 6, 4]);
    assert!(one.max_abs_diff(&two) < 1e-12);
}

#[test]
fn exact_low_rank_is_recovered() {
    let dims = [9usize, 8, 7];
    let core_dims = [3usize, 2, 4];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g = DenseTensor::random(core_dims.to_vec(), 22);
    let factors: Vec<Matrix> =
        dims.iter().zip(&core_dims).map(|(&l, &k)| gaussian(l, k, &mut rng).qr().q()).collect();
    let t = Decomposition { core: g, factors }.reconstruct().unwrap();
    let init = Decomposition::random_init(&t, &core_dims, 5).unwrap();
    let d = hooi_sweep(&t, &init, &TreeStrategy::ChainK.build(&ProblemSpec::new(vec![9, 8, 7], vec![3, 2, 4]).unwrap()).unwrap(), SweepMode::Jacobi).unwrap();
    assert!(reconstruction_error(&t, &d).unwrap() < 1e-12);
}

/// Low-rank signal plus Gaussian noise: the fitted error should land near the
/// noise-to-signal ratio.
#[test]
fn noisy_error_tracks_noise_level() {
    let dims = [12usize, 12, 12];
    let core_dims = [3usize, 3, 3];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let g = DenseTensor::random(core_dims.to_vec(), 32);
    let factors: Vec<Matrix> =
        dims.iter().zip(&core_dims).map(|(&l, &k)| gaussian(l, k, &mut rng).qr().q()).collect();
    let signal = Decomposition { core: g, factors }.reconstruct().unwrap();
    let noise = DenseTensor::random(dims.to_vec(), 33);
    let eps = 0.05 * signal.norm() / noise.norm();
    let data: Vec<f64> = signal.data().iter().zip(noise.data()).map(|(s, n)| s + eps * n).collect();
    let t = DenseTensor::new(dims.to_vec(), data).unwrap();
    let spec = ProblemSpec::new(vec![12; 3], vec![3; 3]).unwrap();
    let chain = TreeStrategy::ChainInput.build(&spec).unwrap();
    let mut d = Decomposition::random_init(&t, &core_dims, 34).unwrap();
    for _ in 0..5 {
        d = hooi_sweep(&t, &d, &chain, SweepMode::GaussSeidel).unwrap();
    }
    let expected = eps * noise.norm() / t.norm();
    let err = reconstruction_error(&t, &d).unwrap();
    assert!((err - expected).abs() <= 0.1 * expected, "error {err} vs noise level {expected}");
}

#[test]
fn executed_macs_equal_planned_cost() {
    let spec = ProblemSpec::new(vec![6, 5, 7, 4], vec![2, 3, 3, 2]).unwrap();
    let t = DenseTensor::random(vec![6, 5, 7, 4], 41);
    let init = Decomposition::random_init(&t, &[2, 3, 3, 2], 42).unwrap();
    for s in TreeStrategy::ALL {
        let tree = s.build(&spec).unwrap();
        let (_, stats) = hooi_sweep_with_stats(&t, &init, &tree, SweepMode::Jacobi).unwrap();
        assert_eq!(stats.macs, tree_cost(&tree, &spec).unwrap().total_flops, "{s}");
        assert!(stats.peak_live <= tree.depth() + 1);
        let mut leaves = 0;
        execute_tree(&t, &init.factors, &tree, |_, _| {
            leaves += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(leaves, 4);
    }
}

#[test]
fn gauss_seidel_requires_chain() {
    let spec = ProblemSpec::new(vec![5, 5, 5, 5], vec![2, 2, 2, 2]).unwrap();
    let t = DenseTensor::random(vec![5; 4], 51);
    let d = Decomposition::random_init(&t, &[2; 4], 52).unwrap();
    let balanced = TreeStrategy::Balanced.build(&spec).unwrap();
    assert!(matches!(hooi_sweep(&t, &d, &balanced, SweepMode::GaussSeidel), Err(Error::GaussSeidelNeedsChain)));
    let chain = TreeStrategy::ChainH.build(&spec).unwrap();
    assert!(hooi_sweep(&t, &d, &chain, SweepMode::GaussSeidel).is_ok());
}
