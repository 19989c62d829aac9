//! Synthetic data, the training loop, evaluation and the codec sweeps.
//!
//! Every routine is a pure function of its configuration and seed. Random
//! streams are split with ChaCha stream ids: 0 for training draws, 1 for
//! held-out diagnostics, 2 for outliers and 3 for k-means seeding.

mod data;
mod eval;
mod gradcheck;
mod metrics;
mod novelty;
mod rd;
mod setup;
mod train;

pub use data::{generate, shifted_outliers, Dataset, DatasetKind, DatasetSpec};
pub use eval::{decompose, gaussian_fit_kl, linear_gaussian_oracle, Decomposition, OracleComparison};
pub use gradcheck::{run_gradcheck, GradcheckEntry, GradcheckReport, COMPOSITE_TOL, OP_TOL};
pub use metrics::{window_mean, MetricLog, MetricRecord, BASE_COLUMNS};
pub use novelty::{auroc, novelty_scores, NoveltyScore, NoveltyWeights};
pub use rd::{
    autoencoder_objective, gc_reconstruct, rd_curve, rd_sweep, train_quantized, QuantizerConfig, RdPoint,
};
pub use setup::{analytic_linear_gaussian, build_models, linear_gaussian_encoder, LinearGaussianParams, ModelConfig};
pub use train::{batch_loss, train, TrainConfig};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{GaussianLikelihood, Likelihood};
    use crate::error::Error;
    use crate::estimators::Discriminator;
    use crate::models::{Activation, Codebook, EncoderKind, Mlp};
    use crate::objectives::{preset, Objective, Preset, TermB, TermC};
    use crate::oracle::random_world;
    use crate::tensor::{read_checkpoint, write_checkpoint, Module, Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gmm(seed: u64, n: usize) -> Dataset {
        generate(&DatasetSpec::new(DatasetKind::Gmm2d, seed, n, n)).unwrap()
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            hidden: vec![8],
            disc_hidden: vec![8],
            ..ModelConfig::default()
        }
    }

    fn quick(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 32,
            eval_every: 5,
            eval_size: 64,
            learning_rate: 5e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn generate_is_reproducible_and_streams_differ() {
        let spec = DatasetSpec::new(DatasetKind::Ring2d, 9, 50, 50);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, a.test);
        let other = generate(&DatasetSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.train, other.train);
    }

    #[test]
    fn single_component_mean_within_clt_band() {
        let mut spec = DatasetSpec::new(DatasetKind::Gmm2d, 3, 4000, 10);
        spec.means = Some(vec![vec![0.0, 0.0]]);
        spec.std = 1.0;
        let d = generate(&spec).unwrap();
        for m in d.train.col_means() {
            assert!(m.abs() < 3.0 / (4000f64).sqrt(), "{m}");
        }
    }

    #[test]
    fn labeled_gmm_labels_are_components() {
        let mut spec = DatasetSpec::new(DatasetKind::LabeledGmm, 4, 300, 100);
        spec.means = Some(vec![vec![0.0, 0.0, 0.0], vec![5.0, 0.0, 1.0], vec![-5.0, 2.0, 0.0]]);
        spec.std = 1e-9;
        let d = generate(&spec).unwrap();
        let means = spec.mixture_means();
        let labels = d.train_labels.as_ref().unwrap();
        for (i, &c) in labels.iter().enumerate() {
            for (a, b) in d.train.row_slice(i).iter().zip(&means[c]) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert_eq!(d.n_classes(), Some(3));
        assert!((0..3).all(|c| labels.contains(&c)));
    }

    #[test]
    fn dataset_validation() {
        let mut spec = DatasetSpec::new(DatasetKind::Gmm2d, 0, 10, 10);
        spec.means = Some(vec![vec![0.0, 0.0, 1.0]]);
        assert!(matches!(generate(&spec), Err(Error::InvalidParameter(_))));
        let mut spec = DatasetSpec::new(DatasetKind::LinearGaussian, 0, 10, 10);
        spec.cov = Some(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(generate(&spec), Err(Error::NotSpd("cov"))));
        let spec = DatasetSpec::new(DatasetKind::DiscreteWorldSamples, 0, 10, 10);
        assert!(matches!(generate(&spec), Err(Error::MissingTable("world"))));
        let spec = DatasetSpec::new(DatasetKind::Ring2d, 0, 0, 10);
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn discrete_world_samples_are_one_hot() {
        let w = random_world(3, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut spec = DatasetSpec::new(DatasetKind::DiscreteWorldSamples, 2, 20000, 10);
        spec.world = Some(w.clone());
        let d = generate(&spec).unwrap();
        assert_eq!(d.dim(), 3);
        for i in 0..d.train.rows() {
            let r = d.train.row_slice(i);
            assert_eq!(r.iter().sum::<f64>(), 1.0);
        }
        for (m, p) in d.train.col_means().iter().zip(&w.px) {
            assert!((m - p).abs() < 0.02);
        }
        assert!(d.train_labels.is_none());
    }

    #[test]
    fn zero_steps_leave_models_unchanged() {
        let data = gmm(1, 64);
        let obj = Objective::new(preset(Preset::Bibae)).unwrap();
        let mut m = build_models(&small_model(), 2, None, &obj.spec, 5).unwrap();
        let before = m.to_entries();
        let log = train(&mut m, &obj, &data, &quick(0)).unwrap();
        assert!(log.is_empty());
        assert_eq!(m.to_entries(), before);
    }

    #[test]
    fn training_is_deterministic_and_logs_each_eval() {
        let data = gmm(2, 128);
        let obj = Objective::new(preset(Preset::Bibae)).unwrap();
        let run = || {
            let mut m = build_models(&small_model(), 2, None, &obj.spec, 6).unwrap();
            let log = train(&mut m, &obj, &data, &quick(12)).unwrap();
            (m.to_entries(), log.to_csv().unwrap())
        };
        let (ea, ca) = run();
        let (eb, cb) = run();
        assert_eq!(ea, eb);
        assert_eq!(ca, cb);
        let lines: Vec<&str> = ca.lines().collect();
        assert_eq!(lines[0], BASE_COLUMNS.join(","));
        // steps 0, 5, 10 and the final step 11
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("11,"));
    }

    #[test]
    fn discriminators_are_trained_in_alternation() {
        let data = gmm(3, 128);
        let obj = Objective::new(preset(Preset::Bibae)).unwrap();
        let mut m = build_models(&small_model(), 2, None, &obj.spec, 7).unwrap();
        train(&mut m, &obj, &data, &quick(4)).unwrap();
        assert_eq!(m.disc_z.as_ref().unwrap().steps_trained(), 12);
        assert_eq!(m.disc_x.as_ref().unwrap().steps_trained(), 12);

        let tape = Tape::new();
        let out = bib_loss_for(&tape, &data, &m, &obj);
        let g = tape.backward(out).unwrap();
        for d in [m.disc_z.as_ref().unwrap(), m.disc_x.as_ref().unwrap()] {
            assert!(d.parameters().iter().all(|p| g.for_param(p.id()).is_none()));
        }
        assert!(m.model_params().iter().any(|p| g.for_param(p.id()).is_some()));
    }

    fn bib_loss_for<'t>(tape: &'t Tape, data: &Dataset, m: &crate::models::Models, obj: &Objective) -> crate::tensor::Var<'t> {
        batch_loss(tape, &data.test, None, m, obj, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap()
            .total
    }

    #[test]
    fn divergence_is_reported_with_step_and_term() {
        let mut spec = DatasetSpec::new(DatasetKind::Gmm2d, 0, 16, 16);
        spec.means = Some(vec![vec![1e200, 0.0]]);
        let data = generate(&spec).unwrap();
        let mut s = preset(Preset::Vae);
        s.bindings.term_c = TermC::GaussianLoglik;
        let mut obj = Objective::new(s).unwrap();
        obj.likelihood = Likelihood::Gaussian(GaussianLikelihood::new(1.0).unwrap());
        let mut m = build_models(&small_model(), 2, None, &obj.spec, 1).unwrap();
        let err = train(&mut m, &obj, &data, &quick(3)).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 0, term: "c" }), "{err}");
    }

    #[test]
    fn vae_loss_decreases() {
        let data = gmm(4, 512);
        let obj = Objective::new(preset(Preset::Vae)).unwrap();
        let mut m = build_models(&small_model(), 2, None, &obj.spec, 2).unwrap();
        let cfg = TrainConfig {
            eval_every: 1,
            ..quick(300)
        };
        let log = train(&mut m, &obj, &data, &cfg).unwrap();
        let t = log.totals();
        assert!(window_mean(&t, 250..300).unwrap() < window_mean(&t, 0..50).unwrap());
    }

    #[test]
    fn supervised_training_runs_on_labels() {
        let spec = DatasetSpec::new(DatasetKind::LabeledGmm, 5, 256, 64);
        let data = generate(&spec).unwrap();
        let obj = Objective::new(preset(Preset::SupervisedIb)).unwrap();
        let mut m = build_models(&small_model(), 2, data.n_classes(), &obj.spec, 3).unwrap();
        let log = train(&mut m, &obj, &data, &quick(50)).unwrap();
        let first = log.records()[0].term_c;
        let last = log.records().last().unwrap().term_c;
        assert!(last > first, "{first} -> {last}");
        assert!(matches!(
            build_models(&small_model(), 2, None, &obj.spec, 3),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn decompose_zero_init_head_gives_zero_a() {
        let data = gmm(5, 64);
        let obj = Objective::new(preset(Preset::Vae)).unwrap();
        let cfg = ModelConfig {
            zero_init_head: true,
            ..small_model()
        };
        let m = build_models(&cfg, 2, None, &obj.spec, 4).unwrap();
        let d = decompose(&m, &obj, &data, 64, 0).unwrap();
        assert_eq!(d.report.a, 0.0);
        assert!(d.oracle.is_none());
        assert!(decompose(&m, &obj, &data, 65, 0).is_err());
    }

    #[test]
    fn decompose_discrete_matches_oracle() {
        let w = random_world(4, 3, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let mut spec = DatasetSpec::new(DatasetKind::DiscreteWorldSamples, 0, 10, 10);
        spec.world = Some(w);
        let data = generate(&spec).unwrap();
        let obj = Objective::new(preset(Preset::Bibae)).unwrap();
        let m = build_models(&small_model(), 4, None, &obj.spec, 0).unwrap();
        let d = decompose(&m, &obj, &data, 10, 0).unwrap();
        let o = d.oracle.unwrap();
        assert_eq!(o.mode, "discrete");
        assert!((d.report.a - d.report.b - o.mi_exact).abs() < 1e-12);
    }

    #[test]
    fn decompose_linear_gaussian_matches_closed_form() {
        let mut spec = DatasetSpec::new(DatasetKind::LinearGaussian, 6, 10, 20000);
        spec.cov = Some(vec![vec![1.0, 0.3], vec![0.3, 0.5]]);
        let data = generate(&spec).unwrap();
        let enc = linear_gaussian_encoder(&[vec![1.0, 0.5], vec![-0.2, 0.8]], &[0.0, 0.0], &[0.4, 0.2]).unwrap();
        let mut s = preset(Preset::InfoVae);
        s.bindings.term_b = TermB::GaussianFit;
        let obj = Objective::new(s).unwrap();
        let dec = Mlp::new("decoder", &[2, 2], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let m = crate::models::Models::new(Some(enc), dec);
        let d = decompose(&m, &obj, &data, 20000, 1).unwrap();
        let o = d.oracle.unwrap();
        assert!(o.mi_gap.abs() < 0.05, "{o:?}");
        assert!(o.a_gap.abs() < 0.05 && o.b_gap.abs() < 0.05, "{o:?}");
        let (a, b, v) = analytic_linear_gaussian(m.encoder.as_ref().unwrap()).unwrap();
        assert_eq!(a, vec![vec![1.0, 0.5], vec![-0.2, 0.8]]);
        assert_eq!(b, vec![0.0, 0.0]);
        assert!((v[0] - 0.4).abs() < 1e-15 && (v[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_decompose() {
        let data = gmm(7, 128);
        let obj = Objective::new(preset(Preset::Bibae)).unwrap();
        let mut m = build_models(&small_model(), 2, None, &obj.spec, 9).unwrap();
        train(&mut m, &obj, &data, &quick(5)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m.to_entries()).unwrap();
        let mut fresh = build_models(&small_model(), 2, None, &obj.spec, 99).unwrap();
        fresh.load_entries(read_checkpoint(&buf[..]).unwrap()).unwrap();
        let a = decompose(&m, &obj, &data, 100, 3).unwrap();
        let b = decompose(&fresh, &obj, &data, 100, 3).unwrap();
        assert_eq!(format!("{:?}", a), format!("{:?}", b));
        assert_eq!(a.report.total.to_bits(), b.report.total.to_bits());
    }

    #[test]
    fn rd_curve_small() {
        let data = gmm(8, 200);
        let obj = Objective::new(preset(Preset::ShannonAe)).unwrap();
        let pts = rd_curve(&data, &small_model(), &[1, 2, 4], 20, &obj, &quick(30)).unwrap();
        assert_eq!(pts.iter().map(|p| p.l).collect::<Vec<_>>(), vec![1, 2, 4]);
        assert_eq!(pts[0].rate_nats, 0.0);
        assert_eq!(pts[0].rate_bits(), 0.0);
        assert!(pts.windows(2).all(|w| w[1].rate_nats >= w[0].rate_nats));
        assert!(rd_curve(&data, &small_model(), &[2, 1], 5, &obj, &quick(1)).is_err());
        let sweep = rd_sweep(&data, &small_model(), &[1, 2], 5, &obj, &quick(3), &[4, 1]).unwrap();
        assert_eq!(sweep.iter().map(|s| s.0).collect::<Vec<_>>(), vec![4, 1]);
        assert_eq!(sweep[1].1, rd_curve(&data, &small_model(), &[1, 2], 5, &obj, &TrainConfig { seed: 1, ..quick(3) }).unwrap());
    }

    #[test]
    fn quantized_training_and_dithered_reconstruction() {
        let data = gmm(9, 200);
        let obj = Objective::new(preset(Preset::Gcae)).unwrap();
        let mut m = build_models(&small_model(), 2, None, &obj.spec, 1).unwrap();
        let q = QuantizerConfig {
            codebook_size: 4,
            finetune_steps: 10,
            ..QuantizerConfig::default()
        };
        let (log, obj) = train_quantized(&mut m, &obj, &data, &quick(20), &q).unwrap();
        assert!(obj.u_sigma > 0.0);
        assert!(log.records().last().unwrap().step == 29);
        assert!(m.disc_x.as_ref().unwrap().steps_trained() > 0);

        let x = data.test.select_rows(&[0, 1, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let same = gc_reconstruct(&m, &x, 0.0, 4, &mut rng).unwrap();
        assert!(same.windows(2).all(|w| w[0] == w[1]));
        let diff = gc_reconstruct(&m, &x, 0.3, 4, &mut rng).unwrap();
        for i in 0..4 {
            for j in 0..i {
                assert_ne!(diff[i], diff[j]);
            }
        }
        let vae = Objective::new(preset(Preset::Vae)).unwrap();
        assert!(train_quantized(&mut m, &vae, &data, &quick(1), &q).is_err());
    }

    #[test]
    fn novelty_requires_trained_discriminator() {
        let lin = |name: &str| {
            let mut l = Mlp::new(name, &[2, 2], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            l.layers_mut()[0].weight.value = Tensor::eye(2);
            l.layers_mut()[0].bias.value = Tensor::zeros(&[1, 2]);
            l
        };
        let enc = crate::models::Encoder::from_body(EncoderKind::Deterministic, lin("encoder"), 2, 0, 0.0).unwrap();
        let mut m = crate::models::Models::new(Some(enc), lin("decoder"));
        let x = Tensor::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.4]]).unwrap();
        let w = NoveltyWeights { disc: 0.0, recon: 1.0 };
        assert!(matches!(novelty_scores(&m, &x, w), Err(Error::UntrainedDiscriminator(_))));
        let net = Mlp::new("disc_x", &[2, 1], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        m.disc_x = Some(Discriminator::from_mlp(net.clone(), 0).unwrap());
        assert!(matches!(novelty_scores(&m, &x, w), Err(Error::UntrainedDiscriminator(_))));
        m.disc_x = Some(Discriminator::from_mlp(net, 1).unwrap());
        let s = novelty_scores(&m, &x, w).unwrap();
        assert!(s.iter().all(|s| s.recon == 0.0 && s.score == 0.0));
        m.codebook = Some(Codebook::new(vec![vec![0.0, 0.0]]).unwrap());
        let s = novelty_scores(&m, &x, w).unwrap();
        assert!((s[0].recon - 0.3).abs() < 1e-12);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(auroc(&[1.0], &[1.0]).unwrap(), 0.5);
        assert!((auroc(&[0.0, 2.0], &[1.0, 3.0]).unwrap() - 0.75).abs() < 1e-15);
        assert!(auroc(&[], &[1.0]).is_err());
    }

    #[test]
    fn metric_log_rejects_non_monotone_steps_and_exports_json() {
        let mut log = MetricLog::new();
        let mut r = MetricRecord::from_report(3, &Default::default());
        r.oracle.insert("mi_exact".into(), 0.5);
        log.push(r.clone()).unwrap();
        assert!(log.push(r.clone()).is_err());
        r.step = 4;
        r.disc_acc = Some(0.5);
        log.push(r).unwrap();
        let csv = log.to_csv().unwrap();
        assert!(csv.starts_with("step,term_a,term_b,term_c,term_d,total,disc_acc,mmd,mi_exact\n"));
        assert!(csv.contains("3,0.0,0.0,0.0,0.0,0.0,,,0.5\n"));
        let v: serde_json::Value = serde_json::from_str(&log.to_json().unwrap()).unwrap();
        assert_eq!(v[0]["mmd"], serde_json::Value::Null);
        assert_eq!(v[1]["disc_acc"], 0.5);
        assert_eq!(v[1]["mi_exact"], 0.5);
    }

    #[test]
    fn linear_gaussian_training_logs_oracle_columns() {
        let spec = DatasetSpec::new(DatasetKind::LinearGaussian, 1, 64, 64);
        let data = generate(&spec).unwrap();
        let enc = linear_gaussian_encoder(&[vec![1.0, 0.0]], &[0.0], &[0.5]).unwrap();
        let dec = Mlp::new("decoder", &[1, 2], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut m = crate::models::Models::new(Some(enc), dec);
        let obj = Objective::new(preset(Preset::Vae)).unwrap();
        let log = train(&mut m, &obj, &data, &quick(1)).unwrap();
        assert_eq!(log.oracle_columns(), vec!["a_exact", "b_exact", "mi_exact"]);
    }
}
