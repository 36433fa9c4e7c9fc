//! Sparse Cholesky factorisation for matrices with the vertex-adjacency
//! pattern of a mesh. The symbolic phase (ordering, elimination tree, column
//! counts) depends only on the pattern and is reused across factorisations.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::mesh::VertexAdjacency;

const NONE: usize = usize::MAX;

#[derive(Debug)]
pub(crate) struct Symbolic {
    n: usize,
    /// New index to old index.
    perm: Vec<usize>,
    parent: Vec<usize>,
    /// Upper triangle of the permuted matrix by column.
    cp: Vec<usize>,
    ci: Vec<usize>,
    /// Position of each upper entry in the CSR value array.
    src: Vec<usize>,
    lp: Vec<usize>,
}

impl Symbolic {
    pub(crate) fn analyze(adj: &VertexAdjacency) -> Self {
        let n = adj.n();
        let perm = minimum_degree(adj);
        let mut pinv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }

        let mut count = vec![0usize; n];
        for i in 0..n {
            for &j in adj.row(i) {
                if pinv[i] <= pinv[j] {
                    count[pinv[j]] += 1;
                }
            }
        }
        let cp = cumsum(&count);
        let mut next = cp.clone();
        let mut ci = vec![0; cp[n]];
        let mut src = vec![0; cp[n]];
        for i in 0..n {
            for (slot, &j) in (adj.row_ptr[i]..).zip(adj.row(i)) {
                let (a, b) = (pinv[i], pinv[j]);
                if a <= b {
                    ci[next[b]] = a;
                    src[next[b]] = slot;
                    next[b] += 1;
                }
            }
        }

        let parent = etree(n, &cp, &ci);
        let mut colcount = vec![1usize; n];
        let mut stack = vec![0; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            let top = ereach(k, &cp, &ci, &parent, &mut stack, &mut mark);
            for &j in &stack[top..] {
                colcount[j] += 1;
            }
        }
        let lp = cumsum(&colcount);
        Self { n, perm, parent, cp, ci, src, lp }
    }

    pub(crate) fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }
}

#[derive(Debug)]
pub(crate) struct Factor {
    li: Vec<usize>,
    lx: Vec<f64>,
}

#[derive(Debug)]
pub(crate) struct NotPositiveDefinite(pub usize);

/// Up-looking factorisation `P A P^T = L L^T`; `values` are the CSR values
/// of `A` on the adjacency pattern.
pub(crate) fn factor(sym: &Symbolic, values: &[f64]) -> Result<Factor, NotPositiveDefinite> {
    let n = sym.n;
    let nnz = sym.factor_nnz();
    let mut li = vec![0; nnz];
    let mut lx = vec![0.0; nnz];
    let mut next = sym.lp[..n].to_vec();
    let mut x = vec![0.0; n];
    let mut stack = vec![0; n];
    let mut mark = vec![NONE; n];
    for k in 0..n {
        let top = ereach(k, &sym.cp, &sym.ci, &sym.parent, &mut stack, &mut mark);
        x[k] = 0.0;
        for p in sym.cp[k]..sym.cp[k + 1] {
            x[sym.ci[p]] = values[sym.src[p]];
        }
        let mut d = x[k];
        x[k] = 0.0;
        for &i in &stack[top..] {
            let lki = x[i] / lx[sym.lp[i]];
            x[i] = 0.0;
            for p in sym.lp[i] + 1..next[i] {
                x[li[p]] -= lx[p] * lki;
            }
            d -= lki * lki;
            li[next[i]] = k;
            lx[next[i]] = lki;
            next[i] += 1;
        }
        if !(d > 0.0) {
            return Err(NotPositiveDefinite(sym.perm[k]));
        }
        li[next[k]] = k;
        lx[next[k]] = d.sqrt();
        next[k] += 1;
    }
    Ok(Factor { li, lx })
}

impl Factor {
    /// Solves `A x = b` in place.
    pub(crate) fn solve(&self, sym: &Symbolic, b: &mut [f64]) {
        let n = sym.n;
        let mut z: Vec<f64> = sym.perm.iter().map(|&old| b[old]).collect();
        for j in 0..n {
            let range = sym.lp[j]..sym.lp[j + 1];
            z[j] /= self.lx[range.start];
            let zj = z[j];
            for p in range.start + 1..range.end {
                z[self.li[p]] -= self.lx[p] * zj;
            }
        }
        for j in (0..n).rev() {
            let range = sym.lp[j]..sym.lp[j + 1];
            let mut zj = z[j];
            for p in range.start + 1..range.end {
                zj -= self.lx[p] * z[self.li[p]];
            }
            z[j] = zj / self.lx[range.start];
        }
        for (new, &old) in sym.perm.iter().enumerate() {
            b[old] = z[new];
        }
    }
}

fn cumsum(count: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(count.len() + 1);
    let mut acc = 0;
    out.push(0);
    for c in count {
        acc += c;
        out.push(acc);
    }
    out
}

fn etree(n: usize, cp: &[usize], ci: &[usize]) -> Vec<usize> {
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for &start in &ci[cp[k]..cp[k + 1]] {
            let mut i = start;
            while i != NONE && i < k {
                let up = ancestor[i];
                ancestor[i] = k;
                if up == NONE {
                    parent[i] = k;
                }
                i = up;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of the factor, returned in `stack[top..]` in
/// topological order.
fn ereach(
    k: usize,
    cp: &[usize],
    ci: &[usize],
    parent: &[usize],
    stack: &mut [usize],
    mark: &mut [usize],
) -> usize {
    let n = parent.len();
    let mut top = n;
    mark[k] = k;
    for &start in &ci[cp[k]..cp[k + 1]] {
        if start > k {
            continue;
        }
        let mut i = start;
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

/// Minimum-degree ordering on an explicit elimination graph. Ties go to the
/// lowest vertex index so the ordering is deterministic.
fn minimum_degree(adj: &VertexAdjacency) -> Vec<usize> {
    let n = adj.n();
    let mut graph: Vec<Vec<usize>> = (0..n)
        .map(|i| adj.row(i).iter().copied().filter(|&j| j != i).collect())
        .collect();
    let mut degree: Vec<usize> = graph.iter().map(Vec::len).collect();
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|i| Reverse((degree[i], i))).collect();
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some(Reverse((d, v))) = heap.pop() {
        if eliminated[v] || d != degree[v] {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let clique = std::mem::take(&mut graph[v]);
        for &w in &clique {
            merged.clear();
            let (a, b) = (&graph[w], &clique);
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                let next = match (a.get(i), b.get(j)) {
                    (Some(&x), Some(&y)) if x == y => {
                        i += 1;
                        j += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        i += 1;
                        x
                    }
                    (Some(_), Some(&y)) => {
                        j += 1;
                        y
                    }
                    (Some(&x), None) => {
                        i += 1;
                        x
                    }
                    (None, Some(&y)) => {
                        j += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                if next != w && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut graph[w], &mut merged);
            degree[w] = graph[w].len();
            heap.push(Reverse((degree[w], w)));
        }
    }
    order
}
