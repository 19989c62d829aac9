use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use biblab::harness::{
    auroc, build_models, decompose, novelty_scores, rd_sweep, run_gradcheck, shifted_outliers, train,
    train_quantized, Dataset, Decomposition, MetricLog, MetricRecord,
};
use biblab::models::Models;
use biblab::objectives::{EncoderRequirement, LossReport, Objective, TermA, TermB, TermC, TermD};
use biblab::oracle::{check_world, run_suite, SuiteReport};
use biblab::tensor::{load_checkpoint, save_checkpoint};
use serde::Serialize;

use crate::config::{read_world, RunConfig};
use crate::error::{CliError, CliResult};
use crate::{Format, THREADS_ENV};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Output streams and global options shared by every command.
pub struct Ctx<'a> {
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub format: Format,
}

impl Ctx<'_> {
    fn log(&mut self, msg: impl std::fmt::Display) {
        let _ = writeln!(self.stderr, "{msg}");
    }

    fn emit<T: Serialize>(&mut self, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
        writeln!(self.stdout, "{text}").map_err(|e| CliError::io("<stdout>", e))
    }

    /// The config file, or the defaults when `--config` is absent and `optional`.
    fn run_config(&self, optional: bool) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None if optional => RunConfig::default(),
            None => return Err(CliError::Usage("this command needs --config PATH".into())),
        };
        cfg.apply_seed(self.seed);
        Ok(cfg)
    }

    /// `--out` wins over the config's `out`, which is relative to the config file.
    fn out_dir(&self, cfg: &RunConfig) -> Option<PathBuf> {
        self.out.clone().or_else(|| cfg.out.as_ref().map(|o| cfg.base_dir.join(o)))
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::Usage(format!("csv: {e}"));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| CliError::Usage(format!("csv: {e}")))
}

/// Models for `cfg`, restored from `checkpoint` when given. A dithered
/// codec gets its dither scale back from the restored codebook.
fn restore(
    cfg: &RunConfig,
    data: &Dataset,
    obj: &mut Objective,
    checkpoint: Option<&Path>,
) -> CliResult<Models> {
    let mut models = build_models(&cfg.model, data.dim(), data.n_classes(), &obj.spec, cfg.run_seed())?;
    if let Some(path) = checkpoint {
        models.load_entries(load_checkpoint(path)?)?;
    }
    if obj.spec.dither {
        if let Some(cb) = &models.codebook {
            obj.u_sigma = cfg.quantizer.u_sigma.unwrap_or(0.1 * cb.mean_nearest_centroid_distance());
        }
    }
    Ok(models)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    version: &'static str,
    seed: u64,
    u_sigma: f64,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    out: String,
    steps: usize,
    records: usize,
    last: Option<&'a MetricRecord>,
}

pub fn train_cmd(ctx: &mut Ctx) -> CliResult<()> {
    let cfg = ctx.run_config(false)?;
    let out = ctx
        .out_dir(&cfg)
        .ok_or_else(|| CliError::Usage("train needs an output directory (--out or `out` in the config)".into()))?;
    let data = cfg.dataset()?;
    let mut obj = cfg.objective()?;
    let mut models = build_models(&cfg.model, data.dim(), data.n_classes(), &obj.spec, cfg.run_seed())?;
    ctx.log(format_args!(
        "training {} for {} steps on {}",
        obj.spec.preset.map_or("custom objective", |p| p.name()),
        cfg.train.steps,
        cfg.data.kind.name()
    ));
    let log: MetricLog = if obj.spec.encoder == EncoderRequirement::Quantized {
        let (log, resolved) = train_quantized(&mut models, &obj, &data, &cfg.train, &cfg.quantizer)?;
        obj = resolved;
        log
    } else {
        train(&mut models, &obj, &data, &cfg.train)?
    };
    create_dir(&out)?;
    save_checkpoint(out.join(CHECKPOINT_FILE), &models.to_entries())?;
    write_file(&out.join(METRICS_CSV), log.to_csv()?.as_bytes())?;
    write_file(&out.join(METRICS_JSON), log.to_json()?.as_bytes())?;
    let manifest = Manifest {
        command: "train",
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.run_seed(),
        u_sigma: obj.u_sigma,
        config: &cfg,
    };
    write_file(&out.join(MANIFEST_FILE), to_json(&manifest)?.as_bytes())?;
    ctx.log(format_args!("wrote {}", out.display()));
    ctx.emit(&TrainSummary {
        out: out.display().to_string(),
        steps: cfg.train.steps,
        records: log.len(),
        last: log.records().last(),
    })
}

/// Binding overrides given on the command line.
#[derive(Clone, Copy, Debug, Default)]
pub struct BindingFlags {
    pub term_a: Option<TermA>,
    pub term_b: Option<TermB>,
    pub term_c: Option<TermC>,
    pub term_d: Option<TermD>,
}

#[derive(Serialize)]
struct DecomposeOut {
    #[serde(flatten)]
    report: LossReport,
    n_eval: usize,
    #[serde(flatten)]
    oracle: Option<biblab::harness::OracleComparison>,
}

pub fn decompose_cmd(
    ctx: &mut Ctx,
    checkpoint: Option<&Path>,
    flags: BindingFlags,
    n_eval: Option<usize>,
) -> CliResult<()> {
    let mut cfg = ctx.run_config(true)?;
    let o = &mut cfg.objective;
    o.term_a = flags.term_a.or(o.term_a);
    o.term_b = flags.term_b.or(o.term_b);
    o.term_c = flags.term_c.or(o.term_c);
    o.term_d = flags.term_d.or(o.term_d);
    let data = cfg.dataset()?;
    let mut obj = cfg.objective()?;
    let models = restore(&cfg, &data, &mut obj, checkpoint)?;
    let n_eval = n_eval.unwrap_or(cfg.decompose.n_eval).min(data.test.rows());
    let Decomposition { report, n_eval, oracle } = decompose(&models, &obj, &data, n_eval, cfg.run_seed())?;
    let out = DecomposeOut { report, n_eval, oracle };
    if let Some(dir) = ctx.out_dir(&cfg) {
        create_dir(&dir)?;
        write_file(&dir.join("decompose.json"), to_json(&out)?.as_bytes())?;
    }
    ctx.emit(&out)
}

/// A pool sized by the thread-cap variable, if set.
fn thread_pool() -> CliResult<Option<rayon::ThreadPool>> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map(Some)
        .map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Serialize)]
struct RdRow {
    seed: u64,
    #[serde(rename = "L")]
    l: usize,
    rate_nats: f64,
    rate_bits: f64,
    distortion: f64,
}

pub fn rd_cmd(ctx: &mut Ctx) -> CliResult<()> {
    let cfg = ctx.run_config(false)?;
    if cfg.rd.seeds == 0 {
        return Err(CliError::Usage("rd.seeds must be >= 1".into()));
    }
    let data = cfg.dataset()?;
    let obj = cfg.objective()?;
    let seeds: Vec<u64> = (0..cfg.rd.seeds).map(|i| cfg.run_seed().wrapping_add(i)).collect();
    ctx.log(format_args!("rate-distortion sweep over L = {:?}, {} seed(s)", cfg.rd.ls, seeds.len()));
    let sweep = || rd_sweep(&data, &cfg.model, &cfg.rd.ls, cfg.rd.kmeans_iters, &obj, &cfg.train, &seeds);
    let curves = match thread_pool()? {
        Some(pool) => pool.install(sweep)?,
        None => sweep()?,
    };
    let rows: Vec<RdRow> = curves
        .iter()
        .flat_map(|(seed, pts)| {
            pts.iter().map(move |p| RdRow {
                seed: *seed,
                l: p.l,
                rate_nats: p.rate_nats,
                rate_bits: p.rate_bits(),
                distortion: p.distortion,
            })
        })
        .collect();
    if let Some(dir) = ctx.out_dir(&cfg) {
        create_dir(&dir)?;
        match ctx.format {
            Format::Csv => {
                let bytes = csv_bytes(
                    &["seed", "L", "rate_nats", "rate_bits", "distortion"],
                    rows.iter().map(|r| {
                        vec![
                            r.seed.to_string(),
                            r.l.to_string(),
                            format!("{:?}", r.rate_nats),
                            format!("{:?}", r.rate_bits),
                            format!("{:?}", r.distortion),
                        ]
                    }),
                )?;
                write_file(&dir.join("rd.csv"), &bytes)?;
            }
            Format::Json => write_file(&dir.join("rd.json"), to_json(&rows)?.as_bytes())?,
        }
    }
    ctx.emit(&rows)
}

#[derive(Serialize)]
struct NoveltyOut {
    auroc: f64,
    n_inliers: usize,
    n_outliers: usize,
    outlier_sigmas: f64,
}

#[derive(Serialize)]
struct NoveltyRow {
    id: usize,
    score: f64,
    label: u8,
}

pub fn novelty_cmd(ctx: &mut Ctx, checkpoint: Option<&Path>) -> CliResult<()> {
    let cfg = ctx.run_config(true)?;
    let data = cfg.dataset()?;
    let mut obj = cfg.objective()?;
    let models = restore(&cfg, &data, &mut obj, checkpoint)?;
    let n = &cfg.novelty;
    let outliers = shifted_outliers(&data.spec, n.n_outliers, n.outlier_sigmas, cfg.run_seed())?;
    let inl = novelty_scores(&models, &data.test, n.weights())?;
    let outl = novelty_scores(&models, &outliers, n.weights())?;
    let neg: Vec<f64> = inl.iter().map(|s| s.score).collect();
    let pos: Vec<f64> = outl.iter().map(|s| s.score).collect();
    let result = NoveltyOut {
        auroc: auroc(&neg, &pos)?,
        n_inliers: neg.len(),
        n_outliers: pos.len(),
        outlier_sigmas: n.outlier_sigmas,
    };
    ctx.log(format_args!("AUROC {:.4}", result.auroc));
    if let Some(dir) = ctx.out_dir(&cfg) {
        create_dir(&dir)?;
        let rows: Vec<NoveltyRow> = neg
            .iter()
            .map(|&s| (s, 0))
            .chain(pos.iter().map(|&s| (s, 1)))
            .enumerate()
            .map(|(id, (score, label))| NoveltyRow { id, score, label })
            .collect();
        match ctx.format {
            Format::Csv => {
                let bytes = csv_bytes(
                    &["id", "score", "label"],
                    rows.iter()
                        .map(|r| vec![r.id.to_string(), format!("{:?}", r.score), r.label.to_string()]),
                )?;
                write_file(&dir.join("novelty.csv"), &bytes)?;
            }
            Format::Json => write_file(&dir.join("novelty.json"), to_json(&rows)?.as_bytes())?,
        }
    }
    ctx.emit(&result)
}

pub fn gradcheck_cmd(ctx: &mut Ctx, configs: usize) -> CliResult<()> {
    if configs == 0 {
        return Err(CliError::Usage("--configs must be >= 1".into()));
    }
    let report = run_gradcheck(ctx.seed.unwrap_or(0), configs)?;
    ctx.log(format_args!(
        "max rel err: ops {:e}, composite {:e}",
        report.op_max_rel_err, report.composite_max_rel_err
    ));
    ctx.emit(&report)?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Property(format!(
            "gradient check exceeded tolerance (ops {:e}, composite {:e})",
            report.op_max_rel_err, report.composite_max_rel_err
        )))
    }
}

pub fn oracle_suite_cmd(ctx: &mut Ctx, count: u64, world: Option<&Path>) -> CliResult<()> {
    if count == 0 {
        return Err(CliError::Usage("--count must be >= 1".into()));
    }
    let report: SuiteReport = match world {
        Some(path) => check_world(&read_world(path)?)?,
        None => run_suite(ctx.seed.unwrap_or(0), count)?,
    };
    ctx.emit(&report)?;
    if report.passed() {
        ctx.log(format_args!("{} checks passed", report.checks));
        return Ok(());
    }
    for v in &report.violations {
        ctx.log(format_args!("{} failed at seed {}: {}\n{}", v.property, v.seed, v.detail, v.world));
    }
    Err(CliError::Property(format!(
        "{} of {} checks failed",
        report.violations.len(),
        report.checks
    )))
}
