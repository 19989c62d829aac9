use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

/// Row-major probability table; `table[row][col]`.
pub type Table = Vec<Vec<f64>>;

pub const MAX_X: usize = 16;
pub const MAX_Z: usize = 16;
pub const MAX_C: usize = 8;

const ROW_SUM_TOL: f64 = 1e-12;

/// Fully enumerated world over tiny alphabets.
///
/// * `px[x]` data distribution
/// * `enc[x][z]` encoder `q(z|x)`
/// * `prior[z]` latent prior `p(z)`
/// * `labels[c][x]` joint `p(c, x)`, whose column sums must equal `px`
/// * `classifier[z][c]` variational classifier `p_θ(c|z)`
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteWorld {
    pub px: Vec<f64>,
    pub enc: Table,
    pub prior: Vec<f64>,
    pub labels: Option<Table>,
    pub classifier: Option<Table>,
}

fn check_simplex(name: &str, row: &[f64]) -> Result<()> {
    if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidTable {
            table: name.to_string(),
            detail: format!("entry {v} is negative or non-finite"),
        });
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::InvalidTable {
            table: name.to_string(),
            detail: format!("row sums to {s}, expected 1"),
        });
    }
    Ok(())
}

fn check_dims(name: &str, t: &Table, rows: usize, cols: usize) -> Result<()> {
    if t.len() != rows || t.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidTable {
            table: name.to_string(),
            detail: format!("expected {rows}x{cols}"),
        });
    }
    Ok(())
}

impl DiscreteWorld {
    pub fn new(px: Vec<f64>, enc: Table, prior: Vec<f64>) -> Result<Self> {
        let w = Self {
            px,
            enc,
            prior,
            labels: None,
            classifier: None,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn with_labels(mut self, labels: Table, classifier: Option<Table>) -> Result<Self> {
        self.labels = Some(labels);
        self.classifier = classifier;
        self.validate()?;
        Ok(self)
    }

    pub fn nx(&self) -> usize {
        self.px.len()
    }

    pub fn nz(&self) -> usize {
        self.prior.len()
    }

    pub fn nc(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.len())
    }

    /// Checks alphabet caps, shapes, non-negativity and unit row sums.
    pub fn validate(&self) -> Result<()> {
        let (nx, nz) = (self.nx(), self.nz());
        if nx == 0 || nx > MAX_X {
            return Err(Error::InvalidTable {
                table: "px".into(),
                detail: format!("X alphabet size {nx} outside 1..={MAX_X}"),
            });
        }
        if nz == 0 || nz > MAX_Z {
            return Err(Error::InvalidTable {
                table: "prior".into(),
                detail: format!("Z alphabet size {nz} outside 1..={MAX_Z}"),
            });
        }
        check_simplex("px", &self.px)?;
        check_simplex("prior", &self.prior)?;
        check_dims("enc", &self.enc, nx, nz)?;
        for row in &self.enc {
            check_simplex("enc", row)?;
        }
        if let Some(labels) = &self.labels {
            let nc = labels.len();
            if nc == 0 || nc > MAX_C {
                return Err(Error::InvalidTable {
                    table: "labels".into(),
                    detail: format!("C alphabet size {nc} outside 1..={MAX_C}"),
                });
            }
            check_dims("labels", labels, nc, nx)?;
            let flat: Vec<f64> = labels.iter().flatten().copied().collect();
            check_simplex("labels", &flat)?;
            for x in 0..nx {
                let m: f64 = labels.iter().map(|r| r[x]).sum();
                if (m - self.px[x]).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidTable {
                        table: "labels".into(),
                        detail: format!("marginal p(x={x}) = {m} disagrees with px = {}", self.px[x]),
                    });
                }
            }
            if let Some(cls) = &self.classifier {
                check_dims("classifier", cls, nz, nc)?;
                for row in cls {
                    check_simplex("classifier", row)?;
                }
            }
        } else if self.classifier.is_some() {
            return Err(Error::MissingTable("labels"));
        }
        Ok(())
    }

    /// Aggregated posterior `q(z) = Σ_x p(x) q(z|x)`.
    pub fn marginal_z(&self) -> Vec<f64> {
        let mut qz = vec![0.0; self.nz()];
        for (px, row) in self.px.iter().zip(&self.enc) {
            for (q, e) in qz.iter_mut().zip(row) {
                *q += px * e;
            }
        }
        qz
    }

    /// Joint `p(c, z) = Σ_x p(c, x) q(z|x)`, rows indexed by `c`.
    pub fn joint_cz(&self) -> Result<Table> {
        let labels = self.labels.as_ref().ok_or(Error::MissingTable("labels"))?;
        Ok(labels
            .iter()
            .map(|pcx| {
                let mut row = vec![0.0; self.nz()];
                for (p, enc_row) in pcx.iter().zip(&self.enc) {
                    for (r, e) in row.iter_mut().zip(enc_row) {
                        *r += p * e;
                    }
                }
                row
            })
            .collect())
    }

    /// True posterior classifier `p(c|z)`, rows indexed by `z`. Rows for
    /// unreachable `z` (q(z) = 0) are uniform.
    pub fn true_classifier(&self) -> Result<Table> {
        let joint = self.joint_cz()?;
        let nc = joint.len();
        Ok((0..self.nz())
            .map(|z| {
                let pz: f64 = joint.iter().map(|r| r[z]).sum();
                if pz > 0.0 {
                    joint.iter().map(|r| r[z] / pz).collect()
                } else {
                    vec![1.0 / nc as f64; nc]
                }
            })
            .collect())
    }

    /// Serializes to the plain-text table format read by [`DiscreteWorld::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::from("# biblab discrete world\n");
        let mut table = |name: &str, rows: &[Vec<f64>]| {
            let _ = writeln!(s, "{name} {} {}", rows.len(), rows[0].len());
            for r in rows {
                let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        };
        table("px", std::slice::from_ref(&self.px));
        table("enc", &self.enc);
        table("prior", std::slice::from_ref(&self.prior));
        if let Some(l) = &self.labels {
            table("labels", l);
        }
        if let Some(c) = &self.classifier {
            table("classifier", c);
        }
        s
    }

    /// Parses the table format without validating probabilities; call
    /// [`DiscreteWorld::validate`] before use.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut px = None;
        let mut enc = None;
        let mut prior = None;
        let mut labels = None;
        let mut classifier = None;
        while let Some((line, header)) = lines.next() {
            let parts: Vec<&str> = header.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(Error::Parse {
                    line,
                    detail: format!("expected '<name> <rows> <cols>', got '{header}'"),
                });
            };
            let dim = |s: &str| {
                s.parse::<usize>().map_err(|e| Error::Parse {
                    line,
                    detail: format!("bad dimension '{s}': {e}"),
                })
            };
            let (rows, cols) = (dim(rows)?, dim(cols)?);
            let mut table = Vec::with_capacity(rows);
            for _ in 0..rows {
                let (rl, row) = lines.next().ok_or(Error::Parse {
                    line,
                    detail: format!("table '{name}' ended early"),
                })?;
                let vals = row
                    .split_whitespace()
                    .map(|v| {
                        v.parse::<f64>().map_err(|e| Error::Parse {
                            line: rl,
                            detail: format!("bad number '{v}': {e}"),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                if vals.len() != cols {
                    return Err(Error::Parse {
                        line: rl,
                        detail: format!("expected {cols} values, got {}", vals.len()),
                    });
                }
                table.push(vals);
            }
            let single_row = |t: Table| -> Result<Vec<f64>> {
                if t.len() != 1 {
                    return Err(Error::Parse {
                        line,
                        detail: format!("table '{name}' must have exactly one row"),
                    });
                }
                Ok(t.into_iter().next().unwrap_or_default())
            };
            match name {
                "px" => px = Some(single_row(table)?),
                "prior" => prior = Some(single_row(table)?),
                "enc" => enc = Some(table),
                "labels" => labels = Some(table),
                "classifier" => classifier = Some(table),
                other => {
                    return Err(Error::Parse {
                        line,
                        detail: format!("unknown table '{other}'"),
                    })
                }
            }
        }
        Ok(Self {
            px: px.ok_or(Error::MissingTable("px"))?,
            enc: enc.ok_or(Error::MissingTable("enc"))?,
            prior: prior.ok_or(Error::MissingTable("prior"))?,
            labels,
            classifier,
        })
    }
}

/// A point on the simplex drawn from the flat Dirichlet.
pub fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let s: f64 = draws.iter().sum();
    draws.into_iter().map(|v| v / s).collect()
}

/// Random world with fully stochastic tables.
pub fn random_world<R: Rng + ?Sized>(nx: usize, nz: usize, rng: &mut R) -> Result<DiscreteWorld> {
    let px = random_simplex(nx, rng);
    let enc = (0..nx).map(|_| random_simplex(nz, rng)).collect();
    let prior = random_simplex(nz, rng);
    DiscreteWorld::new(px, enc, prior)
}

/// Random world with labels `p(c,x) = p(x) p(c|x)` and a random classifier.
pub fn random_labeled_world<R: Rng + ?Sized>(nx: usize, nz: usize, nc: usize, rng: &mut R) -> Result<DiscreteWorld> {
    let w = random_world(nx, nz, rng)?;
    let cond: Table = (0..nx).map(|_| random_simplex(nc, rng)).collect();
    let labels = (0..nc)
        .map(|c| (0..nx).map(|x| w.px[x] * cond[x][c]).collect())
        .collect();
    let classifier = (0..nz).map(|_| random_simplex(nc, rng)).collect();
    w.with_labels(labels, Some(classifier))
}

/// Random world whose encoder rows are point masses.
pub fn random_deterministic_world<R: Rng + ?Sized>(nx: usize, nz: usize, rng: &mut R) -> Result<DiscreteWorld> {
    let px = random_simplex(nx, rng);
    let enc = (0..nx)
        .map(|_| {
            let mut row = vec![0.0; nz];
            row[rng.random_range(0..nz)] = 1.0;
            row
        })
        .collect();
    let prior = random_simplex(nz, rng);
    DiscreteWorld::new(px, enc, prior)
}
