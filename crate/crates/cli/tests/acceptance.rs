//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Reference values are computed here from first principles rather
//! than through the library's own oracle.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use biblab::distributions::{standard_normal, DiagGaussian, LaplacianLikelihood, Likelihood, StandardNormalPrior};
use biblab::estimators::{
    discriminator_step, kl_from_ratio, mmd_permutation_test, Discriminator, RbfKernel,
};
use biblab::harness::{
    build_models, decompose, gc_reconstruct, generate, linear_gaussian_encoder, rd_sweep, run_gradcheck, train,
    train_quantized, window_mean, Dataset, DatasetKind, DatasetSpec, MetricLog, ModelConfig, QuantizerConfig, TrainConfig,
    COMPOSITE_TOL, OP_TOL,
};
use biblab::models::{Activation, Encoder, EncoderKind, Mlp, Models};
use biblab::objectives::{bib_loss, preset, Objective, Preset, TermB};
use biblab::optim::{Adam, AdamConfig};
use biblab::oracle::{
    decompose_first_term, exact_mi, random_deterministic_world, random_labeled_world, random_world,
    supervised_bound, DiscreteWorld, MiPair,
};
use biblab::tensor::{load_checkpoint, save_checkpoint, Module, Tape, Tensor};
use biblab_cli::{run, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// Sample size and permutation count of the MMD null test, shared by the
/// calibration check and the trained adversarial latent check.
const MMD_N: usize = 200;
const MMD_PERMUTATIONS: usize = 200;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("{what} took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// Plain enumeration references.

fn ent(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

fn q_of_z(w: &DiscreteWorld) -> Vec<f64> {
    let mut q = vec![0.0; w.nz()];
    for (x, row) in w.enc.iter().enumerate() {
        for (z, e) in row.iter().enumerate() {
            q[z] += w.px[x] * e;
        }
    }
    q
}

fn mi_xz(w: &DiscreteWorld) -> f64 {
    let q = q_of_z(w);
    w.enc.iter().zip(&w.px).map(|(row, px)| px * kl(row, &q)).sum()
}

fn mi_zc(w: &DiscreteWorld) -> f64 {
    let labels = w.labels.as_ref().expect("labeled world");
    let nz = w.nz();
    let joint: Vec<Vec<f64>> = labels
        .iter()
        .map(|pcx| (0..nz).map(|z| pcx.iter().enumerate().map(|(x, p)| p * w.enc[x][z]).sum()).collect())
        .collect();
    let pc: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let pz: Vec<f64> = (0..nz).map(|z| joint.iter().map(|r| r[z]).sum()).collect();
    let mut mi = 0.0;
    for (c, row) in joint.iter().enumerate() {
        for (z, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (pc[c] * pz[z])).ln();
            }
        }
    }
    mi
}

fn sizes(r: &mut ChaCha8Rng) -> (usize, usize) {
    (r.random_range(2..=8), r.random_range(2..=8))
}

// Criteria.

fn decomposition_identity() -> Outcome {
    let t = Instant::now();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let (nx, nz) = sizes(&mut r);
        let w = ok(random_world(nx, nz, &mut r))?;
        let d = ok(decompose_first_term(&w))?;
        let gap = ((d.term_a - d.term_b) - mi_xz(&w)).abs();
        ensure(gap < 1e-12, || format!("world {i}: |(A - B) - I| = {gap:e}"))?;
        worst = worst.max(gap);
    }
    within(t.elapsed(), 10.0, "1000 worlds")?;
    Ok(format!("max gap {worst:.1e} over 1000 worlds in {:.2} s", t.elapsed().as_secs_f64()))
}

fn upper_bound() -> Outcome {
    let mut r = rng(1);
    let mut strict = 0;
    for i in 0..1000 {
        let (nx, nz) = sizes(&mut r);
        let w = ok(random_world(nx, nz, &mut r))?;
        let d = ok(decompose_first_term(&w))?;
        let mi = mi_xz(&w);
        ensure(d.term_a >= mi, || format!("world {i}: A = {} < I = {mi}", d.term_a))?;
        if d.term_b > 1e-12 {
            ensure(d.term_a > mi, || format!("world {i}: B = {:e} but A = I", d.term_b))?;
            strict += 1;
        }
    }
    Ok(format!("A >= I on 1000 worlds, strict on all {strict} with B > 1e-12"))
}

fn supervised_bound_check() -> Outcome {
    let mut r = rng(3);
    let mut max_slack: f64 = 0.0;
    let mut max_eq: f64 = 0.0;
    for i in 0..1000 {
        let (nx, nz) = sizes(&mut r);
        let nc = r.random_range(2..=8);
        let mut w = ok(random_labeled_world(nx, nz, nc, &mut r))?;
        let exact = mi_zc(&w);
        let b = ok(supervised_bound(&w))?;
        ensure(b.bound <= exact + 1e-12, || format!("world {i}: bound {} > I(Z;C) {exact}", b.bound))?;
        max_slack = max_slack.max(exact - b.bound);
        w.classifier = Some(ok(w.true_classifier())?);
        let t = ok(supervised_bound(&w))?;
        let gap = (t.bound - exact).abs();
        ensure(gap < 1e-12, || format!("world {i}: true classifier gap {gap:e}"))?;
        max_eq = max_eq.max(gap);
    }
    Ok(format!("1000 labeled worlds, largest slack {max_slack:.3}, equality gap {max_eq:.1e}"))
}

fn deterministic_identity() -> Outcome {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let (nx, nz) = sizes(&mut r);
        let w = ok(random_deterministic_world(nx, nz, &mut r))?;
        let h = ent(&q_of_z(&w));
        let gap = (ok(exact_mi(&w, MiPair::XZ))? - h).abs();
        ensure(gap < 1e-12, || format!("world {i}: |I - H(Z)| = {gap:e}"))?;
        worst = worst.max(gap);
    }
    Ok(format!("max gap {worst:.1e} over 100 point-mass worlds"))
}

fn reference_neg_elbo(m: &Models, x: &Tensor, eps: &Tensor, lambda: f64) -> f64 {
    let enc = m.encoder.as_ref().unwrap();
    let out = enc.body().eval(x).unwrap();
    let nz = enc.latent_dim();
    let mut total = 0.0;
    for i in 0..x.rows() {
        let (mu, ls) = out.row_slice(i).split_at(nz);
        let mut kl = 0.0;
        let mut z = vec![0.0; nz];
        for j in 0..nz {
            let var = (2.0 * ls[j]).exp();
            kl += 0.5 * (mu[j] * mu[j] + var - 1.0 - var.ln());
            z[j] = mu[j] + var.sqrt() * eps.row_slice(i)[j];
        }
        let g = m.decoder.eval(&Tensor::row(&z).unwrap()).unwrap();
        let loglik: f64 = x
            .row_slice(i)
            .iter()
            .zip(g.data())
            .map(|(a, b)| lambda.ln() - std::f64::consts::LN_2 - lambda * (a - b).abs())
            .sum();
        total += kl - loglik;
    }
    total / x.rows() as f64
}

fn random_models(r: &mut ChaCha8Rng, dx: usize, nz: usize) -> Models {
    let h = r.random_range(2..=8);
    let enc = Encoder::new(EncoderKind::GaussianHead, dx, &[h], nz, Activation::Tanh, 0, 0.0, r).unwrap();
    let dec = Mlp::new("decoder", &[nz, h, dx], Activation::Tanh, r).unwrap();
    Models::new(Some(enc), dec)
}

fn preset_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut r = rng(500 + seed);
        let (dx, nz, n) = (r.random_range(1..=4), r.random_range(1..=3), r.random_range(1..=16));
        let m = random_models(&mut r, dx, nz);
        let lambda = r.random_range(0.2..4.0);
        let x = standard_normal(&[n, dx], &mut r);
        let mut vae = ok(Objective::new(preset(Preset::Vae)))?;
        vae.likelihood = Likelihood::Laplacian(ok(LaplacianLikelihood::new(lambda))?);
        let noise_seed = 10_000 + seed;
        let eps = standard_normal(&[n, nz], &mut rng(noise_seed));
        let got = {
            let tape = Tape::new();
            ok(bib_loss(&tape, &x, &m, &vae, &mut rng(noise_seed)))?.report.total
        };
        let want = reference_neg_elbo(&m, &x, &eps, lambda);
        let gap = (got - want).abs();
        ensure(gap < 1e-10, || format!("batch {seed}: loss {got} vs reference {want}"))?;
        worst = worst.max(gap);

        let mut beta = ok(Objective::new(ok(preset(Preset::BetaVae).with_beta(1.0))?))?;
        beta.likelihood = vae.likelihood;
        let b = {
            let tape = Tape::new();
            ok(bib_loss(&tape, &x, &m, &beta, &mut rng(noise_seed)))?.report.total
        };
        ensure(b.to_bits() == got.to_bits(), || format!("batch {seed}: beta-VAE(1) {b:e} != VAE {got:e}"))?;

        let mut gm = m.clone();
        let mut dr = rng(seed);
        gm.disc_x = Some(ok(Discriminator::new("disc_x", dx, &[4], Activation::Tanh, &mut dr))?);
        let gan = ok(Objective::new(preset(Preset::Gan)))?;
        let tape = Tape::new();
        let out = ok(bib_loss(&tape, &x, &gm, &gan, &mut rng(noise_seed)))?;
        let g = ok(tape.backward(out.total))?;
        for p in gm.encoder.as_ref().unwrap().parameters() {
            let zero = g.for_param(p.id()).is_none_or(|t| t.data().iter().all(|v| *v == 0.0));
            ensure(zero, || format!("batch {seed}: GAN loss reaches encoder parameter {}", p.name))?;
        }
    }
    Ok(format!("max |loss - reference| {worst:.1e}; beta-VAE(1) bit-exact; GAN encoder gradients zero"))
}

fn gradient_check() -> Outcome {
    let t = Instant::now();
    let rep = ok(run_gradcheck(7, 50))?;
    ensure(rep.op_max_rel_err < OP_TOL, || format!("op error {:e}", rep.op_max_rel_err))?;
    ensure(rep.composite_max_rel_err < COMPOSITE_TOL, || {
        format!("composite error {:e}", rep.composite_max_rel_err)
    })?;
    within(t.elapsed(), 60.0, "gradcheck")?;
    Ok(format!(
        "{} configs, ops {:.1e}, composite {:.1e}, {:.1} s",
        rep.configs,
        rep.op_max_rel_err,
        rep.composite_max_rel_err,
        t.elapsed().as_secs_f64()
    ))
}

fn one_hot(p: &[f64], n: usize, r: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(&[n, p.len()]);
    for i in 0..n {
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut k = p.len() - 1;
        for (j, v) in p.iter().enumerate() {
            acc += v;
            if u < acc {
                k = j;
                break;
            }
        }
        t.data_mut()[i * p.len() + k] = 1.0;
    }
    t
}

fn calibration() -> Outcome {
    let mut r = rng(7);
    let mut ratio_worst: f64 = 0.0;
    for world in 0..5 {
        // Mixing with the uniform keeps every symbol visible in 10^4 draws.
        let mix = |v: Vec<f64>| v.iter().map(|p| 0.5 * p + 0.125).collect::<Vec<_>>();
        let (pt, qt) = (mix(biblab::oracle::random_simplex(4, &mut r)), mix(biblab::oracle::random_simplex(4, &mut r)));
        let exact = kl(&pt, &qt);
        let p = one_hot(&pt, 10_000, &mut r);
        let q = one_hot(&qt, 10_000, &mut r);
        let mut d = ok(Discriminator::new("d", 4, &[], Activation::Tanh, &mut r))?;
        let mut opt = ok(Adam::new(AdamConfig { lr: 0.05, ..Default::default() }))?;
        for _ in 0..1500 {
            ok(discriminator_step(&mut d, &p, &q, &mut opt))?;
        }
        let est = ok(kl_from_ratio(&d, &p))?;
        ensure((est - exact).abs() < 0.1, || format!("world {world}: ratio KL {est} vs {exact}"))?;
        ratio_worst = ratio_worst.max((est - exact).abs());
    }

    let prior = ok(StandardNormalPrior::new(2))?;
    let mut mc_worst: f64 = 0.0;
    for k in 0..3 {
        let mu: Vec<f64> = (0..2).map(|_| r.random_range(-1.5..1.5)).collect();
        let ls: Vec<f64> = (0..2).map(|_| r.random_range(-0.7..0.5)).collect();
        let q = ok(DiagGaussian::new(mu, ls))?;
        let eps = standard_normal(&[1_000_000, 2], &mut r);
        let mut acc = 0.0;
        for i in 0..eps.rows() {
            let z = ok(q.sample_reparam(eps.row_slice(i)))?;
            acc += ok(q.log_prob(&z))? - ok(prior.log_prob(&z))?;
        }
        let mc = acc / eps.rows() as f64;
        let closed = q.kl_to_std_normal();
        ensure((mc - closed).abs() < 1e-2, || format!("gaussian {k}: MC {mc} vs closed form {closed}"))?;
        mc_worst = mc_worst.max((mc - closed).abs());
    }

    let a = standard_normal(&[MMD_N, 2], &mut r);
    let b = standard_normal(&[MMD_N, 2], &mut r);
    let kern = RbfKernel::median_heuristic(&a, &b);
    let t = ok(mmd_permutation_test(&a, &b, &kern, MMD_PERMUTATIONS, &mut r))?;
    ensure(t.passes_null(), || format!("same-distribution MMD {} >= q95 {}", t.statistic, t.null_q95))?;
    Ok(format!(
        "ratio KL err {ratio_worst:.3}; MC KL err {mc_worst:.1e}; MMD null {:.1e} < q95 {:.1e}",
        t.statistic, t.null_q95
    ))
}

fn load(name: &str) -> Result<RunConfig, String> {
    let mut cfg = ok(RunConfig::load(&golden(name)))?;
    cfg.apply_seed(None);
    Ok(cfg)
}

type Trained = (RunConfig, Models, MetricLog, Dataset);

fn train_golden(name: &str) -> Result<Trained, String> {
    let cfg = load(name)?;
    let obj = ok(cfg.objective())?;
    let data = ok(cfg.dataset())?;
    let mut m = ok(build_models(&cfg.model, data.dim(), data.n_classes(), &obj.spec, cfg.run_seed()))?;
    let log = ok(train(&mut m, &obj, &data, &cfg.train))?;
    Ok((cfg, m, log, data))
}

/// Term A and gaussian-fit B of a fixed linear-Gaussian encoder, against the
/// closed form `½ [log det(A Σ Aᵀ + V) − log det V]`.
fn linear_gaussian() -> Result<String, String> {
    let cov = [[1.0, 0.3], [0.3, 0.5]];
    let a = [[1.0, 0.5], [-0.2, 0.8]];
    let v = [0.4, 0.2];
    let mut spec = DatasetSpec::new(DatasetKind::LinearGaussian, 6, 10, 100_000);
    spec.cov = Some(cov.iter().map(|r| r.to_vec()).collect());
    let data = ok(generate(&spec))?;
    let enc = ok(linear_gaussian_encoder(&[a[0].to_vec(), a[1].to_vec()], &[0.0, 0.0], &v))?;
    let dec = ok(Mlp::new("decoder", &[2, 2], Activation::Tanh, &mut rng(0)))?;
    let m = Models::new(Some(enc), dec);
    let mut s = preset(Preset::InfoVae);
    s.bindings.term_b = TermB::GaussianFit;
    let obj = ok(Objective::new(s))?;
    let d = ok(decompose(&m, &obj, &data, 100_000, 1))?;

    let mut s_z = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            s_z[i][j] = (0..2).flat_map(|k| (0..2).map(move |l| (k, l))).map(|(k, l)| a[i][k] * cov[k][l] * a[j][l]).sum();
        }
        s_z[i][i] += v[i];
    }
    let det = s_z[0][0] * s_z[1][1] - s_z[0][1] * s_z[1][0];
    let closed = 0.5 * (det.ln() - (v[0] * v[1]).ln());
    let lib = d.oracle.ok_or("no linear-Gaussian oracle")?.mi_exact;
    ensure((lib - closed).abs() < 1e-12, || format!("library MI {lib} vs closed form {closed}"))?;
    let est = d.report.a - d.report.b;
    ensure((est - closed).abs() < 0.05, || format!("A - B = {est} vs exact {closed}"))?;
    Ok(format!("linear-Gaussian A - B {est:.4} vs {closed:.4}"))
}

fn training_sanity() -> Outcome {
    let mut notes = Vec::new();

    let t = Instant::now();
    let (cfg, _, log, _) = train_golden("vae_gmm.toml")?;
    within(t.elapsed(), 300.0, "VAE run")?;
    let (steps, totals): (Vec<usize>, Vec<f64>) = log.records().iter().map(|r| (r.step, r.total)).unzip();
    let n = cfg.train.steps;
    let head = steps.iter().take_while(|s| **s < 100).count();
    let tail = steps.iter().position(|s| *s >= n - 100).unwrap_or(steps.len());
    let start = window_mean(&totals, 0..head).ok_or("empty start window")?;
    let end = window_mean(&totals, tail..totals.len()).ok_or("empty end window")?;
    ensure(end < start, || format!("VAE smoothed loss rose: {start:.3} -> {end:.3}"))?;
    notes.push(format!("VAE {start:.2} -> {end:.2} ({:.0} s)", t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let (_, m, _, data) = train_golden("aae_gmm.toml")?;
    within(t.elapsed(), 300.0, "AAE run")?;
    let idx: Vec<usize> = (0..MMD_N).collect();
    let z = ok(m.encoder.as_ref().ok_or("AAE has no encoder")?.encode_mean(&ok(data.test.select_rows(&idx))?))?;
    let mut r = rng(5);
    let prior = standard_normal(&[MMD_N, z.cols()], &mut r);
    let kern = RbfKernel::median_heuristic(&z, &prior);
    let test = ok(mmd_permutation_test(&z, &prior, &kern, MMD_PERMUTATIONS, &mut r))?;
    ensure(test.passes_null(), || {
        format!("AAE latent MMD {:.2e} >= q95 {:.2e} (n = {MMD_N})", test.statistic, test.null_q95)
    })?;
    notes.push(format!(
        "AAE MMD {:.1e} < q95 {:.1e} ({:.0} s)",
        test.statistic,
        test.null_q95,
        t.elapsed().as_secs_f64()
    ));

    notes.push(linear_gaussian()?);
    Ok(notes.join("; "))
}

fn rate_distortion() -> Outcome {
    let data = ok(generate(&DatasetSpec::new(DatasetKind::Gmm2d, 2, 1000, 500)))?;
    let obj = ok(Objective::new(preset(Preset::ShannonAe)))?;
    let model = ModelConfig { hidden: vec![16], ..Default::default() };
    let cfg = TrainConfig { steps: 500, batch_size: 64, learning_rate: 3e-3, eval_every: 500, eval_size: 64, ..Default::default() };
    let seeds: Vec<u64> = (0..20).collect();
    let sweep = ok(rd_sweep(&data, &model, &[1, 2, 4, 8, 16], 50, &obj, &cfg, &seeds))?;
    let mut monotone_d = 0;
    for (seed, pts) in &sweep {
        ensure(pts[0].rate_nats == 0.0, || format!("seed {seed}: L=1 rate {}", pts[0].rate_nats))?;
        ensure(pts.windows(2).all(|w| w[1].rate_nats >= w[0].rate_nats), || {
            format!("seed {seed}: rate decreases: {:?}", pts.iter().map(|p| p.rate_nats).collect::<Vec<_>>())
        })?;
        if pts.windows(2).all(|w| w[1].distortion <= w[0].distortion) {
            monotone_d += 1;
        }
    }
    ensure(monotone_d * 10 >= 9 * sweep.len(), || {
        format!("distortion non-increasing in only {monotone_d}/{} runs", sweep.len())
    })?;
    Ok(format!("rate monotone in 20/20 runs, distortion in {monotone_d}/20, L=1 rate 0"))
}

fn stochastic_reconstruction() -> Outcome {
    let data = ok(generate(&DatasetSpec::new(DatasetKind::Gmm2d, 3, 400, 100)))?;
    let obj = ok(Objective::new(preset(Preset::Gcae)))?;
    let model = ModelConfig { hidden: vec![16], disc_hidden: vec![16], ..Default::default() };
    let mut m = ok(build_models(&model, 2, None, &obj.spec, 3))?;
    let q = QuantizerConfig { codebook_size: 8, finetune_steps: 50, ..QuantizerConfig::default() };
    let cfg = TrainConfig { steps: 100, batch_size: 64, eval_every: 50, eval_size: 64, ..Default::default() };
    let (_, obj) = ok(train_quantized(&mut m, &obj, &data, &cfg, &q))?;
    let x = ok(data.test.select_rows(&(0..10).collect::<Vec<_>>()))?;
    let n_draws = 6;
    let same = ok(gc_reconstruct(&m, &x, 0.0, n_draws, &mut rng(9)))?;
    ensure(same.len() == n_draws && same.windows(2).all(|w| w[0] == w[1]), || {
        "u_sigma = 0 gave differing reconstructions".into()
    })?;
    let diff = ok(gc_reconstruct(&m, &x, obj.u_sigma, n_draws, &mut rng(9)))?;
    for i in 0..n_draws {
        for j in 0..i {
            ensure(diff[i] != diff[j], || format!("draws {j} and {i} coincide at u_sigma {}", obj.u_sigma))?;
        }
    }
    Ok(format!("u_sigma 0: {n_draws} identical; u_sigma {:.3}: {n_draws} distinct", obj.u_sigma))
}

struct Cli {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Cli {
    let (mut so, mut se) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("biblab").chain(args.iter().copied()), &mut so, &mut se);
    Cli {
        code,
        stdout: String::from_utf8_lossy(&so).into_owned(),
        stderr: String::from_utf8_lossy(&se).into_owned(),
    }
}

fn cli_ok(args: &[&str]) -> Result<String, String> {
    let o = cli(args);
    ensure(o.code == 0, || format!("`{}` exited {}: {}", args.join(" "), o.code, o.stderr.trim()))?;
    Ok(o.stdout)
}

fn novelty() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let out = dir.path().to_str().ok_or("non-UTF-8 temp dir")?;
    let cfg = golden("novelty_gmm.toml");
    let cfg = cfg.to_str().ok_or("non-UTF-8 path")?;
    let t = Instant::now();
    cli_ok(&["train", "--config", cfg, "--out", out])?;
    let ckpt = dir.path().join("checkpoint.bin");
    let stdout = cli_ok(&["novelty", "--config", cfg, "--out", out, "--checkpoint", ckpt.to_str().unwrap()])?;
    let v: serde_json::Value = ok(serde_json::from_str(&stdout))?;
    let auroc = v["auroc"].as_f64().ok_or("no auroc in output")?;
    ensure(auroc > 0.95, || format!("AUROC {auroc:.4}"))?;
    Ok(format!("AUROC {auroc:.4} ({:.0} s)", t.elapsed().as_secs_f64()))
}

fn determinism() -> Outcome {
    let cfg = golden("vae_trace.toml");
    let cfg = cfg.to_str().ok_or("non-UTF-8 path")?;
    let dirs = [ok(tempfile::tempdir())?, ok(tempfile::tempdir())?];
    let mut csvs = Vec::new();
    for d in &dirs {
        cli_ok(&["train", "--config", cfg, "--out", d.path().to_str().unwrap()])?;
        csvs.push(ok(fs::read(d.path().join("metrics.csv")))?);
    }
    ensure(csvs[0] == csvs[1], || "two identical runs wrote different metrics.csv".into())?;
    let committed = ok(fs::read(golden("vae_trace.csv")))?;
    ensure(csvs[0] == committed, || "metrics.csv differs from the committed trace".into())?;

    // Decompose from the written checkpoint equals decompose on the models
    // trained in memory, and a save/load cycle changes nothing.
    let (rc, m, _, data) = train_golden("vae_trace.toml")?;
    let obj = ok(rc.objective())?;
    let n_eval = rc.decompose.n_eval.min(data.test.rows());
    let before = ok(decompose(&m, &obj, &data, n_eval, rc.run_seed()))?;
    let path = dirs[0].path().join("again.bin");
    ok(save_checkpoint(&path, &m.to_entries()))?;
    let mut fresh = ok(build_models(&rc.model, data.dim(), data.n_classes(), &obj.spec, rc.run_seed() + 1))?;
    ok(fresh.load_entries(ok(load_checkpoint(&path))?))?;
    let after = ok(decompose(&fresh, &obj, &data, n_eval, rc.run_seed()))?;
    ensure(format!("{before:?}") == format!("{after:?}"), || "decompose changed across save/load".into())?;
    ensure(before.report.total.to_bits() == after.report.total.to_bits(), || "total differs in bits".into())?;

    let ckpt = dirs[0].path().join("checkpoint.bin");
    let args = ["decompose", "--config", cfg, "--checkpoint", ckpt.to_str().unwrap()];
    let first = cli_ok(&args)?;
    ensure(first == cli_ok(&args)?, || "repeated CLI decompose differs".into())?;
    let v: serde_json::Value = ok(serde_json::from_str(&first))?;
    let total = v["total"].as_f64().ok_or("no total in decompose output")?;
    ensure(total.to_bits() == before.report.total.to_bits(), || {
        format!("CLI decompose total {total:e} vs in-memory {:e}", before.report.total)
    })?;
    Ok(format!("metrics.csv identical ({} bytes); decompose bit-exact after reload", csvs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("decomposition identity", decomposition_identity),
        ("first-term upper bound", upper_bound),
        ("supervised bound", supervised_bound_check),
        ("deterministic encoder identity", deterministic_identity),
        ("preset fidelity", preset_fidelity),
        ("gradient correctness", gradient_check),
        ("estimator calibration", calibration),
        ("training sanity", training_sanity),
        ("rate-distortion direction", rate_distortion),
        ("compression stochasticity", stochastic_reconstruction),
        ("novelty detection", novelty),
        ("determinism and round-trip", determinism),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
