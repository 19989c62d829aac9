//! Randomized property runner over enumerable worlds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::world::{random_deterministic_world, random_labeled_world, random_world, DiscreteWorld};
use super::{decompose_first_term, entropy_z, exact_mi, supervised_bound, MiPair};
use crate::error::Result;

const TOL: f64 = 1e-12;
const MAX_ALPHABET: usize = 8;

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub property: &'static str,
    pub seed: u64,
    pub detail: String,
    /// The offending world in the text table format.
    pub world: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SuiteReport {
    pub seeds: u64,
    pub checks: u64,
    pub max_decomposition_err: f64,
    pub max_bound_excess: f64,
    pub max_true_classifier_err: f64,
    pub max_deterministic_err: f64,
    pub violations: Vec<Violation>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn check(&mut self, property: &'static str, seed: u64, ok: bool, detail: impl FnOnce() -> String, w: &DiscreteWorld) {
        self.checks += 1;
        if !ok {
            self.violations.push(Violation {
                property,
                seed,
                detail: detail(),
                world: w.to_text(),
            });
        }
    }
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        rng.random_range(1..=MAX_ALPHABET),
        rng.random_range(1..=MAX_ALPHABET),
        rng.random_range(2..=MAX_ALPHABET),
    )
}

impl SuiteReport {
    fn decomposition(&mut self, seed: u64, w: &DiscreteWorld) -> Result<()> {
        let d = decompose_first_term(w)?;
        let err = ((d.term_a - d.term_b) - d.mi).abs();
        self.max_decomposition_err = self.max_decomposition_err.max(err);
        self.check("decomposition_identity", seed, err < TOL, || format!("|A - B - I| = {err:e}"), w);
        let upper_ok = d.term_a >= d.mi - TOL && (d.term_b <= TOL || d.term_a > d.mi);
        self.check(
            "vae_upper_bound",
            seed,
            upper_ok,
            || format!("A = {:?}, I = {:?}, B = {:?}", d.term_a, d.mi, d.term_b),
            w,
        );
        Ok(())
    }

    /// Bound check with the world's own classifier (if any), then the
    /// equality check with the true conditional.
    fn supervised(&mut self, seed: u64, w: &DiscreteWorld) -> Result<()> {
        if w.classifier.is_some() {
            let b = supervised_bound(w)?;
            let excess = b.bound - b.exact_izc;
            self.max_bound_excess = self.max_bound_excess.max(excess);
            self.check(
                "supervised_bound",
                seed,
                excess <= TOL,
                || format!("bound {:?} exceeds I(Z;C) {:?}", b.bound, b.exact_izc),
                w,
            );
        }
        let mut tw = w.clone();
        tw.classifier = Some(w.true_classifier()?);
        let b = supervised_bound(&tw)?;
        let err = (b.bound - b.exact_izc).abs();
        self.max_true_classifier_err = self.max_true_classifier_err.max(err);
        self.check(
            "supervised_bound_equality",
            seed,
            err < TOL,
            || format!("true-classifier gap {err:e}"),
            &tw,
        );
        Ok(())
    }

    fn deterministic(&mut self, seed: u64, w: &DiscreteWorld) -> Result<()> {
        let err = (exact_mi(w, MiPair::XZ)? - entropy_z(w)).abs();
        self.max_deterministic_err = self.max_deterministic_err.max(err);
        self.check(
            "deterministic_encoder_entropy",
            seed,
            err < TOL,
            || format!("|I - H(Z)| = {err:e}"),
            w,
        );
        Ok(())
    }
}

/// Runs every property on `count` worlds; world `i` is drawn from seed `base_seed + i`.
pub fn run_suite(base_seed: u64, count: u64) -> Result<SuiteReport> {
    let mut r = SuiteReport {
        seeds: count,
        ..Default::default()
    };
    for i in 0..count {
        let seed = base_seed.wrapping_add(i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nx, nz, nc) = dims(&mut rng);
        r.decomposition(seed, &random_world(nx, nz, &mut rng)?)?;
        r.supervised(seed, &random_labeled_world(nx, nz, nc, &mut rng)?)?;
        r.deterministic(seed, &random_deterministic_world(nx, nz, &mut rng)?)?;
    }
    Ok(r)
}

/// Validates one world, then runs the properties that apply to it: the
/// decomposition checks always, the supervised checks when it carries
/// labels, and the entropy identity when every encoder row is a point mass.
pub fn check_world(w: &DiscreteWorld) -> Result<SuiteReport> {
    w.validate()?;
    let mut r = SuiteReport {
        seeds: 1,
        ..Default::default()
    };
    r.decomposition(0, w)?;
    if w.labels.is_some() {
        r.supervised(0, w)?;
    }
    if w.enc.iter().all(|row| row.iter().all(|&q| q == 0.0 || q == 1.0)) {
        r.deterministic(0, w)?;
    }
    Ok(r)
}
