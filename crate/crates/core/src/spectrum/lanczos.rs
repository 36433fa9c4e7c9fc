//! Shift-invert block Krylov iteration for the lowest eigenpairs of the
//! pencil `(L, M)` with diagonal `M`.
//!
//! The basis is kept fully `M`-orthonormal (two passes of classical
//! Gram-Schmidt) and eigenpairs are extracted by Rayleigh-Ritz with `L`
//! itself, so Ritz values are Rayleigh quotients and convergence is judged on
//! the true residual `|L x - lambda M x| / |M x|`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::SpectrumError;

pub(crate) const BLOCK: usize = 8;

pub(crate) struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

/// `apply(x)` multiplies by `L`; `solve(b)` overwrites `b` with
/// `(L - sigma M)^{-1} b`.
pub(crate) fn lowest_eigenpairs(
    n: usize,
    mass: &[f64],
    apply: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    solve: &(dyn Fn(&mut [f64]) + Sync),
    k: usize,
    tol: f64,
    seed: u64,
) -> Result<Eigenpairs, SpectrumError> {
    let block = BLOCK.min(n);
    let max_dim = n.min(12 * (k + 2 * block));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random_block = |count: usize| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    };

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_dim);
    let mut gram = DMatrix::<f64>::zeros(0, 0);
    let mut candidates = random_block(block);
    let mut best = f64::INFINITY;

    loop {
        let mut fresh = orthonormalize(&basis, candidates, mass);
        if fresh.is_empty() && basis.len() < n {
            fresh = orthonormalize(&basis, random_block(block), mass);
        }
        if fresh.is_empty() {
            break;
        }
        fresh.truncate(max_dim - basis.len());
        let fresh_images: Vec<Vec<f64>> = fresh.par_iter().map(|q| apply(q)).collect();

        let old = basis.len();
        let dim = old + fresh.len();
        let mut next = DMatrix::<f64>::zeros(dim, dim);
        next.view_mut((0, 0), (old, old)).copy_from(&gram);
        basis.extend(fresh);
        let entries: Vec<(usize, usize, f64)> = (old..dim)
            .into_par_iter()
            .flat_map_iter(|j| {
                let (basis, image) = (&basis, &fresh_images[j - old]);
                (0..=j).map(move |i| (i, j, dot(&basis[i], image)))
            })
            .collect();
        for (i, j, g) in entries {
            next[(i, j)] = g;
            next[(j, i)] = g;
        }
        gram = next;

        let done = dim >= max_dim || dim == n;
        if dim >= k {
            let ritz = rayleigh_ritz(&gram, &basis, apply, mass, k);
            let worst = ritz.residuals.iter().cloned().fold(0.0, f64::max);
            best = best.min(worst);
            if worst <= tol {
                return Ok(ritz);
            }
            if done {
                return Err(SpectrumError::NoConvergence { requested: k, best_residual: best });
            }
        } else if done {
            break;
        }

        candidates = basis[old..]
            .par_iter()
            .map(|q| {
                let mut b: Vec<f64> = q.iter().zip(mass).map(|(x, m)| x * m).collect();
                solve(&mut b);
                b
            })
            .collect();
    }
    Err(SpectrumError::NoConvergence { requested: k, best_residual: best })
}

fn rayleigh_ritz(
    gram: &DMatrix<f64>,
    basis: &[Vec<f64>],
    apply: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    mass: &[f64],
    k: usize,
) -> Eigenpairs {
    let eig = SymmetricEigen::new(gram.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let n = mass.len();
    let pairs: Vec<(f64, Vec<f64>, f64)> = order[..k]
        .par_iter()
        .map(|&c| {
            let y = eig.eigenvectors.column(c);
            let mut x = vec![0.0; n];
            for (j, &yj) in y.iter().enumerate() {
                axpy(yj, &basis[j], &mut x);
            }
            let norm = m_dot(&x, &x, mass).sqrt();
            x.iter_mut().for_each(|v| *v /= norm);
            // L is applied afresh, not combined from stored images.
            let lx = apply(&x);
            let theta = dot(&x, &lx);
            let (mut r2, mut mx2) = (0.0, 0.0);
            for i in 0..n {
                let mx = mass[i] * x[i];
                r2 += (lx[i] - theta * mx).powi(2);
                mx2 += mx * mx;
            }
            (theta, x, (r2 / mx2).sqrt())
        })
        .collect();
    let mut out = Eigenpairs { values: Vec::new(), vectors: Vec::new(), residuals: Vec::new() };
    for (theta, x, res) in pairs {
        out.values.push(theta);
        out.vectors.push(x);
        out.residuals.push(res);
    }
    out
}

/// `M`-orthonormalises `block` against `basis` and itself, dropping
/// directions that are numerically already spanned.
fn orthonormalize(basis: &[Vec<f64>], block: Vec<Vec<f64>>, mass: &[f64]) -> Vec<Vec<f64>> {
    let mut accepted: Vec<Vec<f64>> = Vec::new();
    for mut q in block {
        let norm0 = m_dot(&q, &q, mass).sqrt();
        if !(norm0 > 0.0) {
            continue;
        }
        for _ in 0..2 {
            let coeffs: Vec<f64> = basis
                .par_iter()
                .chain(accepted.par_iter())
                .map(|v| m_dot(v, &q, mass))
                .collect();
            for (c, v) in coeffs.iter().zip(basis.iter().chain(accepted.iter())) {
                axpy(-c, v, &mut q);
            }
        }
        let norm = m_dot(&q, &q, mass).sqrt();
        if norm > 1e-10 * norm0 {
            q.iter_mut().for_each(|v| *v /= norm);
            accepted.push(q);
        }
    }
    accepted
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn m_dot(a: &[f64], b: &[f64], m: &[f64]) -> f64 {
    a.iter().zip(b).zip(m).map(|((x, y), w)| x * y * w).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}
