use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Multipliers applied to the median pairwise distance by
/// [`RbfKernel::median_heuristic`].
pub const DEFAULT_BANDWIDTH_SCALES: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Rows used from each sample when computing the median heuristic.
const MEDIAN_SUBSAMPLE: usize = 500;

/// Sum of Gaussian kernels `Σ_b exp(−‖x − y‖² / (2 b²))`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RbfKernel {
    bandwidths: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl RbfKernel {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::invalid(format!("bandwidths must be a non-empty list of positive values, got {bandwidths:?}")));
        }
        Ok(Self { bandwidths })
    }

    /// Default bandwidth scales times the median pairwise distance of the
    /// pooled samples (1 if that median is zero).
    pub fn median_heuristic(p: &Tensor, q: &Tensor) -> Self {
        let mut rows: Vec<&[f64]> = (0..p.rows().min(MEDIAN_SUBSAMPLE)).map(|i| p.row_slice(i)).collect();
        rows.extend((0..q.rows().min(MEDIAN_SUBSAMPLE)).map(|i| q.row_slice(i)));
        let mut d: Vec<f64> = Vec::with_capacity(rows.len() * rows.len() / 2);
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                d.push(sq_dist(rows[i], rows[j]).sqrt());
            }
        }
        let median = if d.is_empty() {
            0.0
        } else {
            let mid = d.len() / 2;
            *d.select_nth_unstable_by(mid, f64::total_cmp).1
        };
        let base = if median > 0.0 && median.is_finite() { median } else { 1.0 };
        Self {
            bandwidths: DEFAULT_BANDWIDTH_SCALES.iter().map(|s| s * base).collect(),
        }
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d = sq_dist(a, b);
        self.bandwidths.iter().map(|bw| (-d / (2.0 * bw * bw)).exp()).sum()
    }

    /// Kernel matrix on a tape, `(n, m)`.
    fn matrix_var<'t>(&self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        let ra = a.square().sum_rows()?;
        let rb = b.square().sum_rows()?.transpose()?;
        let d = a.matmul(b.transpose()?)?.scale(-2.0).add_col(ra)?.add_row(rb)?;
        let mut k: Option<Var<'t>> = None;
        for bw in &self.bandwidths {
            let term = d.scale(-1.0 / (2.0 * bw * bw)).exp();
            k = Some(match k {
                Some(acc) => acc.add(term)?,
                None => term,
            });
        }
        Ok(k.expect("kernel has at least one bandwidth"))
    }
}

fn check_pair(nd_p: &[usize], nd_q: &[usize]) -> Result<(usize, usize)> {
    if nd_p.len() != 2 || nd_q.len() != 2 || nd_p[1] != nd_q[1] {
        return Err(Error::shape("mmd", nd_p, nd_q));
    }
    let (n, m) = (nd_p[0], nd_q[0]);
    if n < 2 || m < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: n.min(m),
        });
    }
    Ok((n, m))
}

/// Unbiased U-statistic estimate of MMD² between the rows of `p` and `q`.
pub fn mmd_unbiased(p: &Tensor, q: &Tensor, k: &RbfKernel) -> Result<f64> {
    let (n, m) = check_pair(p.shape(), q.shape())?;
    let within = |t: &Tensor, len: usize| {
        let mut s = 0.0;
        for i in 0..len {
            for j in i + 1..len {
                s += k.eval(t.row_slice(i), t.row_slice(j));
            }
        }
        2.0 * s / (len * (len - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..m {
            cross += k.eval(p.row_slice(i), q.row_slice(j));
        }
    }
    Ok(within(p, n) + within(q, m) - 2.0 * cross / (n * m) as f64)
}

/// Differentiable [`mmd_unbiased`].
pub fn mmd_unbiased_var<'t>(p: Var<'t>, q: Var<'t>, k: &RbfKernel) -> Result<Var<'t>> {
    let (n, m) = check_pair(&p.shape(), &q.shape())?;
    let tape: &'t Tape = p.tape();
    let off_diag = |len: usize| {
        let mut t = Tensor::ones(&[len, len]);
        for i in 0..len {
            t.data_mut()[i * len + i] = 0.0;
        }
        tape.constant(t)
    };
    let kpp = k.matrix_var(p, p)?.mul(off_diag(n))?.sum().scale(1.0 / (n * (n - 1)) as f64);
    let kqq = k.matrix_var(q, q)?.mul(off_diag(m))?.sum().scale(1.0 / (m * (m - 1)) as f64);
    let kpq = k.matrix_var(p, q)?.sum().scale(-2.0 / (n * m) as f64);
    kpp.add(kqq)?.add(kpq)
}

/// Two-sample permutation test on the unbiased MMD² statistic.
#[derive(Clone, Debug, Serialize)]
pub struct MmdTest {
    pub statistic: f64,
    pub null_q95: f64,
    pub p_value: f64,
    pub permutations: usize,
}

impl MmdTest {
    /// True when the statistic lies below the 95th percentile of the null.
    pub fn passes_null(&self) -> bool {
        self.statistic < self.null_q95
    }
}

pub fn mmd_permutation_test<R: Rng + ?Sized>(
    p: &Tensor,
    q: &Tensor,
    k: &RbfKernel,
    permutations: usize,
    rng: &mut R,
) -> Result<MmdTest> {
    let (n, m) = check_pair(p.shape(), q.shape())?;
    if permutations == 0 {
        return Err(Error::invalid("permutation test needs at least one permutation"));
    }
    let mut rows: Vec<&[f64]> = (0..n).map(|i| p.row_slice(i)).collect();
    rows.extend((0..m).map(|j| q.row_slice(j)));
    let total = n + m;
    let mut gram = vec![0.0; total * total];
    for i in 0..total {
        for j in i + 1..total {
            let v = k.eval(rows[i], rows[j]);
            gram[i * total + j] = v;
            gram[j * total + i] = v;
        }
    }
    let stat = |idx: &[usize]| {
        let (a, b) = idx.split_at(n);
        let block = |x: &[usize], y: &[usize]| -> f64 {
            x.iter().map(|&i| y.iter().map(|&j| gram[i * total + j]).sum::<f64>()).sum()
        };
        block(a, a) / (n * (n - 1)) as f64 + block(b, b) / (m * (m - 1)) as f64
            - 2.0 * block(a, b) / (n * m) as f64
    };
    let mut idx: Vec<usize> = (0..total).collect();
    let statistic = stat(&idx);
    let mut null: Vec<f64> = (0..permutations)
        .map(|_| {
            idx.shuffle(rng);
            stat(&idx)
        })
        .collect();
    let exceed = null.iter().filter(|&&v| v >= statistic).count();
    null.sort_by(f64::total_cmp);
    let q_idx = ((0.95 * permutations as f64).ceil() as usize).clamp(1, permutations) - 1;
    Ok(MmdTest {
        statistic,
        null_q95: null[q_idx],
        p_value: (exceed + 1) as f64 / (permutations + 1) as f64,
        permutations,
    })
}
