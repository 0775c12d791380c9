//! Consensus operators checked against explicit dense matrices.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use pmace_core::consensus::{
    mann_solve, AgentSet, ConsensusOperator, MannConfig, PatchStack, ProximalQuadratic,
};
use pmace_core::ptycho::ScanPattern;
use pmace_core::{ComplexImage, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_patch(rng: &mut ChaCha8Rng, n: usize) -> ComplexImage {
    Array2::from_shape_simple_fn((n, n), || {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

/// Selection matrix of patch `j`: rows index patch pixels, columns image
/// pixels (both row-major).
fn selector(scan: &ScanPattern, j: usize) -> DMatrix<C64> {
    let (rows, cols) = scan.image_shape();
    let n = scan.patch_size();
    let (r0, c0) = scan.positions()[j];
    let mut p = DMatrix::zeros(n * n, rows * cols);
    for i in 0..n {
        for k in 0..n {
            p[(i * n + k, (r0 + i) * cols + c0 + k)] = C64::new(1.0, 0.0);
        }
    }
    p
}

fn flatten(a: &ComplexImage) -> DVector<C64> {
    DVector::from_iterator(a.len(), a.iter().copied())
}

fn diag(w: &Array2<f64>) -> DMatrix<C64> {
    DMatrix::from_diagonal(&DVector::from_iterator(
        w.len(),
        w.iter().map(|&x| C64::new(x, 0.0)),
    ))
}

/// Pixels outside every patch have a zero row in `Λ`; they are
/// unconstrained and the operators set them to zero, so pin them.
fn pin_uncovered(lambda: &mut DMatrix<C64>) {
    for i in 0..lambda.nrows() {
        if lambda[(i, i)].norm() == 0.0 {
            lambda[(i, i)] = C64::new(1.0, 0.0);
        }
    }
}

fn relative_error(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn three_patch_scan() -> ScanPattern {
    ScanPattern::new((8, 8), 5, vec![(0, 0), (0, 3), (3, 1)]).unwrap()
}

#[test]
fn weighted_mean_matches_dense_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let scan = ScanPattern::new((6, 7), 4, vec![(0, 0), (0, 3), (2, 1), (2, 3)]).unwrap();
    let w = Array2::from_shape_simple_fn((4, 4), || rng.random_range(0.1..2.0));
    let op = ConsensusOperator::new(scan.clone(), w.clone()).unwrap();
    let v: Vec<_> = (0..scan.len()).map(|_| random_patch(&mut rng, 4)).collect();

    let wd = diag(&w);
    let mut lambda = DMatrix::<C64>::zeros(42, 42);
    let mut rhs = DVector::<C64>::zeros(42);
    for (j, vj) in v.iter().enumerate() {
        let p = selector(&scan, j);
        lambda += p.adjoint() * &wd * &p;
        rhs += p.adjoint() * &wd * flatten(vj);
    }
    pin_uncovered(&mut lambda);
    let dense = lambda.lu().solve(&rhs).unwrap();
    let ours = flatten(&op.weighted_mean(&PatchStack::new(v).unwrap()).unwrap());
    assert!(relative_error(&ours, &dense) < 1e-12);
}

#[test]
fn projector_matches_dense_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let scan = three_patch_scan();
    let w = Array2::from_shape_simple_fn((5, 5), || rng.random_range(0.1..2.0));
    let op = ConsensusOperator::new(scan.clone(), w.clone()).unwrap();

    // stacked selector S = [P_0; P_1; P_2], weights blockdiag(W)
    let m = 25;
    let mut s = DMatrix::<C64>::zeros(3 * m, 64);
    let mut wd = DMatrix::<C64>::zeros(3 * m, 3 * m);
    for j in 0..3 {
        s.view_mut((j * m, 0), (m, 64))
            .copy_from(&selector(&scan, j));
        wd.view_mut((j * m, j * m), (m, m)).copy_from(&diag(&w));
    }
    let mut lambda = s.adjoint() * &wd * &s;
    pin_uncovered(&mut lambda);
    let g = &s * lambda.try_inverse().unwrap() * s.adjoint() * &wd;

    let v: Vec<_> = (0..3).map(|_| random_patch(&mut rng, 5)).collect();
    let stacked = DVector::from_iterator(3 * m, v.iter().flat_map(|p| p.iter().copied()));
    let dense = &g * &stacked;
    let ours = op.project(&PatchStack::new(v).unwrap()).unwrap();
    let ours = DVector::from_iterator(3 * m, ours.patches().iter().flat_map(|p| p.iter().copied()));
    assert!(relative_error(&ours, &dense) < 1e-12);
    // G is idempotent as a matrix too
    assert!((&g * &g - &g).norm() < 1e-12 * g.norm());
}

/// With proximal agents for `f_j(v) = ½‖v − b_j‖²` and uniform weights, the
/// consensus equilibrium image minimizes `Σ_j f_j(P_j x)`, whose normal
/// equations are `(Σ P_jᵀP_j) x = Σ P_jᵀ b_j`.
#[test]
fn equilibrium_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let scan = three_patch_scan();
    let targets: Vec<_> = (0..3).map(|_| random_patch(&mut rng, 5)).collect();

    let mut normal = DMatrix::<C64>::zeros(64, 64);
    let mut rhs = DVector::<C64>::zeros(64);
    for (j, b) in targets.iter().enumerate() {
        let p = selector(&scan, j);
        normal += p.adjoint() * &p;
        rhs += p.adjoint() * flatten(b);
    }
    pin_uncovered(&mut normal);
    let dense = normal.lu().solve(&rhs).unwrap();

    let op = ConsensusOperator::uniform(scan.clone()).unwrap();
    let agents: AgentSet = targets
        .iter()
        .map(|b| {
            Box::new(ProximalQuadratic::new(b.clone(), 0.8).unwrap())
                as Box<dyn pmace_core::consensus::Agent>
        })
        .collect();
    let v0 = PatchStack::new(vec![Array2::zeros((5, 5)); 3]).unwrap();
    let cfg = MannConfig {
        max_iters: 500,
        residual_tol: 1e-13,
        ..Default::default()
    };
    let sol = mann_solve(&op, &agents, v0, &cfg).unwrap();
    let ours = flatten(&op.weighted_mean(&sol.state).unwrap());
    assert!(
        relative_error(&ours, &dense) <= 1e-8,
        "{}",
        relative_error(&ours, &dense)
    );
}

#[test]
fn mann_fixed_point_does_not_depend_on_rho() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let scan = three_patch_scan();
    let w = Array2::from_shape_simple_fn((5, 5), || rng.random_range(0.5..1.5));
    let op = ConsensusOperator::new(scan, w).unwrap();
    let agents = || -> AgentSet {
        (0..3)
            .map(|s| {
                let mut r = ChaCha8Rng::seed_from_u64(100 + s);
                Box::new(ProximalQuadratic::new(random_patch(&mut r, 5), 0.5).unwrap())
                    as Box<dyn pmace_core::consensus::Agent>
            })
            .collect()
    };
    let v0 = PatchStack::new((0..3).map(|_| random_patch(&mut rng, 5)).collect()).unwrap();
    let solve = |rho| {
        let cfg = MannConfig {
            rho,
            max_iters: 5000,
            residual_tol: 1e-12,
            record_trace: true,
        };
        mann_solve(&op, &agents(), v0.clone(), &cfg).unwrap()
    };
    let a = solve(0.5);
    let b = solve(0.8);
    assert!(a.converged && b.converged);
    assert_ne!(a.iterations, b.iterations);
    let xa = op.weighted_mean(&a.state).unwrap();
    let xb = op.weighted_mean(&b.state).unwrap();
    let diff: f64 = xa
        .iter()
        .zip(xb.iter())
        .map(|(p, q)| (p - q).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let scale: f64 = xa.iter().map(|p| p.norm_sqr()).sum::<f64>().sqrt();
    assert!(diff <= 1e-9 * scale);
}
