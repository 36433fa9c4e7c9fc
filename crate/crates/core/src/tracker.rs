//! Eigenvalue branches along a flow.
//!
//! Consecutive snapshots are matched greedily by eigenvector overlap.
//! Matches whose overlap is below `overlap_min`, and times where a branch
//! comes within `gap_tol * lambda_max` of a neighbouring eigenvalue, are
//! flagged as crossings.

use std::cmp::Ordering;

use serde::Serialize;
use thiserror::Error;

use crate::flow::{central_derivative, FlowSample, FlowTrace};
use crate::spectrum::SpectrumSnapshot;

pub const DEFAULT_OVERLAP_MIN: f64 = 0.5;
pub const DEFAULT_GAP_TOL: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("need at least {needed} snapshots, got {found}")]
    TooFewSnapshots { needed: usize, found: usize },
    #[error("snapshot {index} has {found} eigenpairs, expected {expected}")]
    MismatchedCount { index: usize, expected: usize, found: usize },
    #[error("snapshot {index} lives on {found} vertices, expected {expected}")]
    MismatchedMesh { index: usize, expected: usize, found: usize },
    #[error("branch {branch} is flagged as crossing at time index {index}")]
    Crossing { branch: usize, index: usize },
    #[error("branch {branch} is not positive at time index {index}")]
    NonPositive { branch: usize, index: usize },
    #[error("time index {index} out of range for {len} times")]
    OutOfRange { index: usize, len: usize },
    #[error("branch {0} does not exist")]
    NoSuchBranch(usize),
    #[error("trace has no sample at t = {0}")]
    NotInTrace(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Central,
    OneSided,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Branch {
    pub values: Vec<f64>,
    /// Snapshot column carrying this branch at each time.
    pub columns: Vec<usize>,
    /// Sign that makes the column's eigenvector continuous along the branch.
    pub signs: Vec<f64>,
    /// Overlap with the previous time (1 at the first).
    pub overlaps: Vec<f64>,
    pub flagged: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchSet {
    pub times: Vec<f64>,
    pub branches: Vec<Branch>,
    /// Sorted nonzero eigenvalues `mu_1 <= mu_2 <= ...` at each time.
    pub relabeled: Vec<Vec<f64>>,
}

impl BranchSet {
    fn branch(&self, id: usize) -> Result<&Branch, TrackError> {
        self.branches.get(id).ok_or(TrackError::NoSuchBranch(id))
    }

    /// Sign-corrected eigenvector of `branch` at time `index`.
    pub fn eigenvector(&self, snapshots: &[&SpectrumSnapshot], branch: usize, index: usize) -> Vec<f64> {
        let b = &self.branches[branch];
        snapshots[index].eigenvectors[b.columns[index]].iter().map(|x| x * b.signs[index]).collect()
    }
}

/// `|a^T M b|` with the mean of the two mass diagonals.
fn overlap(a: &[f64], b: &[f64], ma: &[f64], mb: &[f64]) -> f64 {
    (0..a.len()).map(|i| a[i] * b[i] * 0.5 * (ma[i] + mb[i])).sum()
}

pub fn track_branches(
    snapshots: &[&SpectrumSnapshot],
    overlap_min: f64,
    gap_tol: f64,
) -> Result<BranchSet, TrackError> {
    if snapshots.len() < 2 {
        return Err(TrackError::TooFewSnapshots { needed: 2, found: snapshots.len() });
    }
    let k = snapshots[0].eigenvalues.len();
    let n = snapshots[0].mass.len();
    for (index, s) in snapshots.iter().enumerate() {
        if s.eigenvalues.len() != k || s.eigenvectors.len() != k {
            return Err(TrackError::MismatchedCount { index, expected: k, found: s.eigenvalues.len() });
        }
        if s.mass.len() != n || s.eigenvectors.iter().any(|v| v.len() != n) {
            return Err(TrackError::MismatchedMesh { index, expected: n, found: s.mass.len() });
        }
    }

    let mut branches: Vec<Branch> = (0..k)
        .map(|c| Branch {
            values: vec![snapshots[0].eigenvalues[c]],
            columns: vec![c],
            signs: vec![1.0],
            overlaps: vec![1.0],
            flagged: vec![false],
        })
        .collect();

    for step in 1..snapshots.len() {
        let (prev, next) = (snapshots[step - 1], snapshots[step]);
        let signed: Vec<Vec<f64>> = (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| overlap(&prev.eigenvectors[a], &next.eigenvectors[b], &prev.mass, &next.mass))
                    .collect()
            })
            .collect();
        let mut pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).collect();
        pairs.sort_by(|&(a1, b1), &(a2, b2)| {
            let o = signed[a2][b2].abs().total_cmp(&signed[a1][b1].abs());
            let gap = |a: usize, b: usize| (prev.eigenvalues[a] - next.eigenvalues[b]).abs();
            o.then(gap(a1, b1).total_cmp(&gap(a2, b2))).then(a1.cmp(&a2)).then(b1.cmp(&b2))
        });
        let mut target = vec![usize::MAX; k];
        let mut taken = vec![false; k];
        let mut fallback = vec![false; k];
        for (a, b) in pairs {
            if signed[a][b].abs() < overlap_min {
                break;
            }
            if target[a] == usize::MAX && !taken[b] {
                target[a] = b;
                taken[b] = true;
            }
        }
        let by_value = |items: Vec<usize>, values: &[f64]| {
            let mut items = items;
            items.sort_by(|&x, &y| values[x].total_cmp(&values[y]).then(x.cmp(&y)));
            items
        };
        let free_a = by_value((0..k).filter(|&a| target[a] == usize::MAX).collect(), &prev.eigenvalues);
        let free_b = by_value((0..k).filter(|&b| !taken[b]).collect(), &next.eigenvalues);
        for (a, b) in free_a.into_iter().zip(free_b) {
            target[a] = b;
            fallback[a] = true;
        }

        for branch in &mut branches {
            let a = *branch.columns.last().unwrap();
            let b = target[a];
            let raw = signed[a][b];
            let sign = *branch.signs.last().unwrap() * if raw < 0.0 { -1.0 } else { 1.0 };
            branch.values.push(next.eigenvalues[b]);
            branch.columns.push(b);
            branch.signs.push(sign);
            branch.overlaps.push(raw.abs());
            branch.flagged.push(fallback[a]);
        }
    }

    // Near-degenerate values are flagged at every time they occur.
    for (index, s) in snapshots.iter().enumerate() {
        let scale = s.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for branch in &mut branches {
            let c = branch.columns[index];
            let close = (0..k).any(|o| o != c && (s.eigenvalues[o] - s.eigenvalues[c]).abs() < gap_tol * scale);
            if close {
                branch.flagged[index] = true;
            }
        }
    }

    let relabeled = (0..snapshots.len())
        .map(|i| {
            let mut v: Vec<f64> = branches.iter().map(|b| b.values[i]).collect();
            v.sort_by(f64::total_cmp);
            v.remove(0);
            v
        })
        .collect();
    Ok(BranchSet { times: snapshots.iter().map(|s| s.t).collect(), branches, relabeled })
}

/// Finite-difference `d log(lambda) / dt` along a branch at time `index`.
/// The one-sided scheme differences forward, or backward at the last time.
pub fn branch_log_derivative(
    set: &BranchSet,
    branch: usize,
    index: usize,
    scheme: Scheme,
) -> Result<f64, TrackError> {
    let b = set.branch(branch)?;
    let len = set.times.len();
    if index >= len {
        return Err(TrackError::OutOfRange { index, len });
    }
    let stencil: Vec<usize> = match scheme {
        Scheme::Central if index > 0 && index + 1 < len => vec![index - 1, index, index + 1],
        Scheme::Central => return Err(TrackError::OutOfRange { index, len }),
        Scheme::OneSided if index + 1 < len => vec![index, index + 1],
        Scheme::OneSided => vec![index - 1, index],
    };
    for &i in &stencil {
        if b.flagged[i] {
            return Err(TrackError::Crossing { branch, index: i });
        }
        if !(b.values[i] > 0.0) {
            return Err(TrackError::NonPositive { branch, index: i });
        }
    }
    let log = |i: usize| b.values[i].ln();
    Ok(match stencil[..] {
        [a, m, c] => central_derivative([set.times[a], set.times[m], set.times[c]], [log(a), log(m), log(c)]),
        [a, c] => (log(c) - log(a)) / (set.times[c] - set.times[a]),
        _ => unreachable!(),
    })
}

fn sample_at(trace: &FlowTrace, t: f64) -> Result<&FlowSample, TrackError> {
    trace.samples.iter().find(|s| s.t == t).ok_or(TrackError::NotInTrace(t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvolutionResidual {
    pub t: f64,
    pub lambda: f64,
    pub fd: f64,
    pub rhs: f64,
    pub relative_residual: f64,
}

/// Compares the central difference of a branch with
/// `lambda * sum_i (R_i - r) phi_i^2 A_i`, normalised by
/// `lambda * max|R - r|`.
pub fn evolution_formula_residual(
    trace: &FlowTrace,
    set: &BranchSet,
    snapshots: &[&SpectrumSnapshot],
    branch: usize,
    index: usize,
) -> Result<EvolutionResidual, TrackError> {
    let b = set.branch(branch)?;
    let len = set.times.len();
    if index == 0 || index + 1 >= len {
        return Err(TrackError::OutOfRange { index, len });
    }
    for i in index - 1..=index + 1 {
        if b.flagged[i] {
            return Err(TrackError::Crossing { branch, index: i });
        }
    }
    let t = set.times[index];
    let field = &sample_at(trace, t)?.curvature;
    let lambda = b.values[index];
    let fd = central_derivative(
        [set.times[index - 1], t, set.times[index + 1]],
        [b.values[index - 1], lambda, b.values[index + 1]],
    );
    let phi = &snapshots[index].eigenvectors[b.columns[index]];
    let weighted: f64 = (0..phi.len())
        .map(|i| (field.scalar[i] - field.mean) * phi[i] * phi[i] * field.dual_area[i])
        .sum();
    let rhs = lambda * weighted;
    let scale = lambda.abs() * field.max_deviation() + 1e-12 * lambda.abs();
    Ok(EvolutionResidual { t, lambda, fd, rhs, relative_residual: (fd - rhs).abs() / scale })
}

/// Per-vertex `dA_i/dt - (r - R_i) A_i` at an interior sample, by central
/// differences over the neighbouring samples.
pub fn volume_form_residual(trace: &FlowTrace, sample_index: usize) -> Result<Vec<f64>, TrackError> {
    let len = trace.samples.len();
    if sample_index == 0 || sample_index + 1 >= len {
        return Err(TrackError::OutOfRange { index: sample_index, len });
    }
    let [a, b, c] = [sample_index - 1, sample_index, sample_index + 1].map(|i| &trace.samples[i]);
    let field = &b.curvature;
    Ok((0..field.dual_area.len())
        .map(|i| {
            let da = central_derivative(
                [a.t, b.t, c.t],
                [a.curvature.dual_area[i], field.dual_area[i], c.curvature.dual_area[i]],
            );
            da - (field.mean - field.scalar[i]) * field.dual_area[i]
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormalizationResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_residual: f64,
}

/// `2 sum phi dphi/dt A` against `sum phi^2 R A - r` on the sign-corrected
/// eigenvector of a branch, normalised by `max|R - r|`.
pub fn normalization_derivative_residual(
    trace: &FlowTrace,
    set: &BranchSet,
    snapshots: &[&SpectrumSnapshot],
    branch: usize,
    index: usize,
) -> Result<NormalizationResidual, TrackError> {
    let b = set.branch(branch)?;
    let len = set.times.len();
    if index == 0 || index + 1 >= len {
        return Err(TrackError::OutOfRange { index, len });
    }
    for i in index - 1..=index + 1 {
        if b.flagged[i] {
            return Err(TrackError::Crossing { branch, index: i });
        }
    }
    let times = [set.times[index - 1], set.times[index], set.times[index + 1]];
    let field = &sample_at(trace, times[1])?.curvature;
    let [p0, p1, p2] = [index - 1, index, index + 1].map(|i| set.eigenvector(snapshots, branch, i));
    let (mut lhs, mut rhs) = (0.0, -field.mean);
    for i in 0..p1.len() {
        let dphi = central_derivative(times, [p0[i], p1[i], p2[i]]);
        lhs += 2.0 * p1[i] * dphi * field.dual_area[i];
        rhs += p1[i] * p1[i] * field.scalar[i] * field.dual_area[i];
    }
    let scale = field.max_deviation() + 1e-12 * field.mean.abs();
    Ok(NormalizationResidual { lhs, rhs, relative_residual: (lhs - rhs).abs() / scale })
}

/// Median of the finite values; `None` if there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
