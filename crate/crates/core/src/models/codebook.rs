use rand::Rng;

use crate::distributions::standard_normal;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `L` centroids with usage counts from the most recent assignment pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    centroids: Vec<Vec<f64>>,
    usage_counts: Vec<u64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Codebook {
    pub fn new(centroids: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = centroids.first() else {
            return Err(Error::EmptyCodebook);
        };
        let dim = first.len();
        if dim == 0 || centroids.iter().any(|c| c.len() != dim || c.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("centroids must be finite, non-empty and of equal width"));
        }
        let usage_counts = vec![0; centroids.len()];
        Ok(Self {
            centroids,
            usage_counts,
        })
    }

    pub fn with_counts(centroids: Vec<Vec<f64>>, usage_counts: Vec<u64>) -> Result<Self> {
        let mut cb = Self::new(centroids)?;
        if usage_counts.len() != cb.len() {
            return Err(Error::LengthMismatch(usage_counts.len(), cb.len()));
        }
        cb.usage_counts = usage_counts;
        Ok(cb)
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn usage_counts(&self) -> &[u64] {
        &self.usage_counts
    }

    /// Index of the nearest centroid per row; ties go to the lowest index.
    pub fn assign(&self, z: &Tensor) -> Result<Vec<usize>> {
        if z.rank() != 2 || z.cols() != self.dim() {
            return Err(Error::shape("quantize", z.shape(), &[0, self.dim()]));
        }
        Ok((0..z.rows())
            .map(|i| {
                let row = z.row_slice(i);
                let mut best = (0, f64::INFINITY);
                for (j, c) in self.centroids.iter().enumerate() {
                    let d = sq_dist(row, c);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best.0
            })
            .collect())
    }

    /// Centroid rows for the given indices.
    pub fn lookup(&self, idx: &[usize]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&j| self.centroids[j].clone()).collect();
        Tensor::from_rows(&rows)
    }

    /// Hard assignment; replaces the usage counts with this pass's counts.
    pub fn quantize(&mut self, z: &Tensor) -> Result<(Vec<usize>, Tensor)> {
        let idx = self.assign(z)?;
        self.usage_counts = vec![0; self.len()];
        for &j in &idx {
            self.usage_counts[j] += 1;
        }
        let out = self.lookup(&idx)?;
        Ok((idx, out))
    }

    /// Empirical usage probabilities.
    pub fn probs(&self) -> Result<Vec<f64>> {
        let total: u64 = self.usage_counts.iter().sum();
        if total == 0 {
            return Err(Error::ZeroUsage);
        }
        Ok(self.usage_counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    /// `R_Q = −Σ p_j log p_j` in nats.
    pub fn rate(&self) -> Result<f64> {
        Ok(crate::oracle::entropy(&self.probs()?))
    }

    /// Mean squared distance from each row to its nearest centroid.
    pub fn distortion(&self, z: &Tensor) -> Result<f64> {
        let idx = self.assign(z)?;
        let total: f64 = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| sq_dist(z.row_slice(i), &self.centroids[j]))
            .sum();
        Ok(total / z.rows() as f64)
    }

    /// Mean distance from each centroid to its nearest other centroid; 0 for `L = 1`.
    pub fn mean_nearest_centroid_distance(&self) -> f64 {
        if self.len() < 2 {
            return 0.0;
        }
        let total: f64 = self
            .centroids
            .iter()
            .enumerate()
            .map(|(i, a)| {
                self.centroids
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, b)| sq_dist(a, b).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / self.len() as f64
    }

    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        let c = Tensor::from_rows(&self.centroids).expect("validated centroids");
        let counts = Tensor::new(
            vec![self.len()],
            self.usage_counts.iter().map(|&v| v as f64).collect(),
        )
        .expect("counts length matches");
        vec![
            ("codebook.centroids".to_string(), c),
            ("codebook.counts".to_string(), counts),
        ]
    }

    pub fn from_tensors(centroids: &Tensor, counts: &Tensor) -> Result<Self> {
        let counts = counts
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as u64)
                } else {
                    Err(Error::Checkpoint(format!("codebook count {v} is not a non-negative integer")))
                }
            })
            .collect::<Result<Vec<u64>>>()?;
        Self::with_counts(centroids.to_rows(), counts)
    }
}

/// Result of [`fit_codebook`]: the codebook and the distortion after
/// seeding followed by the distortion after each Lloyd iteration.
#[derive(Clone, Debug)]
pub struct CodebookFit {
    pub codebook: Codebook,
    pub distortion_trace: Vec<f64>,
}

/// k-means with k-means++ seeding. Empty clusters keep their previous
/// centroid. Usage counts come from a final assignment of `latents`.
pub fn fit_codebook<R: Rng + ?Sized>(latents: &Tensor, l: usize, iters: usize, rng: &mut R) -> Result<CodebookFit> {
    if l == 0 {
        return Err(Error::EmptyCodebook);
    }
    let n = latents.rows();
    if n < l {
        return Err(Error::InsufficientSamples { needed: l, got: n });
    }
    let rows: Vec<&[f64]> = (0..n).map(|i| latents.row_slice(i)).collect();

    let mut centroids = vec![rows[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < l {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just above the final sum.
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            rng.random_range(0..n)
        };
        let c = rows[pick].to_vec();
        for (d, r) in d2.iter_mut().zip(&rows) {
            *d = d.min(sq_dist(r, &c));
        }
        centroids.push(c);
    }

    let mut cb = Codebook::new(centroids)?;
    let mut trace = vec![cb.distortion(latents)?];
    let dim = cb.dim();
    for _ in 0..iters {
        let idx = cb.assign(latents)?;
        let mut sums = vec![vec![0.0; dim]; l];
        let mut counts = vec![0usize; l];
        for (r, &j) in rows.iter().zip(&idx) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(*r) {
                *s += v;
            }
        }
        for j in 0..l {
            if counts[j] > 0 {
                cb.centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        trace.push(cb.distortion(latents)?);
    }
    cb.quantize(latents)?;
    Ok(CodebookFit {
        codebook: cb,
        distortion_trace: trace,
    })
}

/// `centroid + u`, `u ~ N(0, u_sigma² I)`.
pub fn dither<R: Rng + ?Sized>(centroid: &[f64], u_sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(u_sigma >= 0.0 && u_sigma.is_finite()) {
        return Err(Error::invalid(format!("u_sigma must be >= 0, got {u_sigma}")));
    }
    if u_sigma == 0.0 {
        return Ok(centroid.to_vec());
    }
    let u = standard_normal(&[centroid.len()], rng);
    Ok(centroid.iter().zip(u.data()).map(|(c, e)| c + u_sigma * e).collect())
}

/// Row-wise [`dither`] of a batch of centroids.
pub fn dither_batch<R: Rng + ?Sized>(centroids: &Tensor, u_sigma: f64, rng: &mut R) -> Result<Tensor> {
    let rows = centroids
        .to_rows()
        .iter()
        .map(|r| dither(r, u_sigma, rng))
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}
