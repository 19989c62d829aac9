//! The four terms, the bottleneck Lagrangian and the preset table.
//!
//! We minimize `L = w_a·A − w_b·B − β (w_c·C − w_d·D)`. Presets transcribe
//! each method's own Lagrangian: the adversarial autoencoder adds B rather
//! than subtracting it, which [`Composition::AddB`] records.
//!
//! Term D uses the f-divergence lower bound `E_data[l] + 1 − E_gen[exp l]`
//! on clamped discriminator logits `l`, so the generator receives gradient
//! through the generated samples.

mod loss;
mod spec;

pub use loss::{
    bib_loss, discrete_terms, gan_generator_loss, supervised_ib_loss, LossOutput, LossReport, Objective, TermKinds,
};
pub use spec::{
    preset, preset_table, Composition, EncoderRequirement, Preset, PresetSpec, TermA, TermB, TermBindings, TermC,
    TermD, TermDSource, TermWeights,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::standard_normal;
    use crate::error::Error;
    use crate::estimators::{Discriminator, EstimatorKind, RbfKernel};
    use crate::models::{fit_codebook, Activation, Encoder, EncoderKind, Mlp, Models};
    use crate::oracle::{exact_mi, random_world, MiPair};
    use crate::tensor::{finite_diff_grad, max_relative_error, Module, Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn models(kind: EncoderKind, seed: u64) -> Models {
        let mut r = rng(seed);
        let enc = Encoder::new(kind, 3, &[6], 2, Activation::Tanh, 2, 0.3, &mut r).unwrap();
        let dec = Mlp::new("decoder", &[2, 6, 3], Activation::Tanh, &mut r).unwrap();
        let mut m = Models::new(Some(enc), dec);
        let mut dz = Discriminator::new("disc_z", 2, &[5], Activation::Tanh, &mut r).unwrap();
        let mut dx = Discriminator::new("disc_x", 3, &[5], Activation::Tanh, &mut r).unwrap();
        // Non-zero output layers so the ratio terms carry signal.
        for d in [&mut dz, &mut dx] {
            for p in d.parameters_mut() {
                p.value = standard_normal(p.value.shape(), &mut r).scale(0.5);
            }
        }
        m.disc_z = Some(dz);
        m.disc_x = Some(dx);
        m
    }

    /// Independent transcription of the negative ELBO with a unit-scale
    /// Laplacian decoder, computed row by row from plain values.
    fn reference_neg_elbo(m: &Models, x: &Tensor, eps: &Tensor) -> f64 {
        let enc = m.encoder.as_ref().unwrap();
        let out = enc.body().eval(x).unwrap();
        let nz = enc.latent_dim();
        let mut total = 0.0;
        for i in 0..x.rows() {
            let row = out.row_slice(i);
            let (mu, ls) = row.split_at(nz);
            let mut kl = 0.0;
            let mut z = vec![0.0; nz];
            for j in 0..nz {
                kl += 0.5 * (mu[j] * mu[j] + (2.0 * ls[j]).exp() - 1.0 - 2.0 * ls[j]);
                z[j] = mu[j] + ls[j].exp() * eps.row_slice(i)[j];
            }
            let g = m.decoder.eval(&Tensor::row(&z).unwrap()).unwrap();
            let loglik: f64 = x
                .row_slice(i)
                .iter()
                .zip(g.data())
                .map(|(a, b)| -std::f64::consts::LN_2 - (a - b).abs())
                .sum();
            total += kl - loglik;
        }
        total / x.rows() as f64
    }

    #[test]
    fn vae_matches_reference_elbo() {
        let obj = Objective::new(preset(Preset::Vae)).unwrap();
        for seed in 0..20 {
            let m = models(EncoderKind::GaussianHead, seed);
            let x = standard_normal(&[8, 3], &mut rng(100 + seed));
            let eps = standard_normal(&[8, 2], &mut rng(200 + seed));
            let tape = Tape::new();
            let out = bib_loss(&tape, &x, &m, &obj, &mut rng(200 + seed)).unwrap();
            let reference = reference_neg_elbo(&m, &x, &eps);
            assert!((out.report.total - reference).abs() < 1e-10, "{} vs {reference}", out.report.total);
            assert_eq!(out.report.kinds.b, None);
        }
    }

    #[test]
    fn beta_vae_at_one_equals_vae() {
        let vae = preset(Preset::Vae);
        let beta = preset(Preset::BetaVae).with_beta(1.0).unwrap();
        assert!(vae.same_shape(&beta));
        let m = models(EncoderKind::GaussianHead, 3);
        let x = standard_normal(&[16, 3], &mut rng(4));
        let run = |s: PresetSpec| {
            let tape = Tape::new();
            bib_loss(&tape, &x, &m, &Objective::new(s).unwrap(), &mut rng(5)).unwrap().report
        };
        assert_eq!(run(vae).total.to_bits(), run(beta).total.to_bits());
        assert!(preset(Preset::Vae).with_beta(2.0).is_err());
    }

    #[test]
    fn gan_preset_detaches_encoder() {
        let s = preset(Preset::Gan);
        assert_eq!((s.weights.w_a, s.weights.w_b), (0.0, 0.0));
        assert_eq!(s.encoder, EncoderRequirement::None);
        let m = models(EncoderKind::GaussianHead, 6);
        let x = standard_normal(&[16, 3], &mut rng(7));
        let tape = Tape::new();
        let out = bib_loss(&tape, &x, &m, &Objective::new(s).unwrap(), &mut rng(8)).unwrap();
        let g = tape.backward(out.total).unwrap();
        for p in m.encoder.as_ref().unwrap().parameters() {
            assert!(g.for_param(p.id()).is_none_or(|t| t.max_abs() == 0.0));
        }
        assert!(m.decoder.parameters().iter().any(|p| g.for_param(p.id()).is_some()));
        for p in m.disc_x.as_ref().unwrap().parameters() {
            assert!(g.for_param(p.id()).is_none());
        }
    }

    #[test]
    fn info_vae_bindings() {
        let s = preset(Preset::InfoVae);
        assert_eq!(s.bindings.term_a, TermA::ClosedFormGaussian);
        assert!(matches!(s.bindings.term_b, TermB::DensityRatio | TermB::Mmd));
        assert_eq!(s.bindings.term_d, TermD::Off);
        assert!(s.weights.w_c > 0.0);
        for &p in Preset::ALL {
            preset(p).validate().unwrap();
        }
    }

    #[test]
    fn posterior_at_prior_gives_zero_term_a() {
        let mut m = models(EncoderKind::GaussianHead, 9);
        m.encoder.as_mut().unwrap().body_mut().zero_last_layer();
        let x = standard_normal(&[10, 3], &mut rng(10));
        let tape = Tape::new();
        let out = bib_loss(&tape, &x, &m, &Objective::new(preset(Preset::Vae)).unwrap(), &mut rng(11)).unwrap();
        assert_eq!(out.report.a, 0.0);
    }

    #[test]
    fn discrete_mode_matches_oracle() {
        let mut r = rng(12);
        for _ in 0..50 {
            let w = random_world(5, 4, &mut r).unwrap();
            let rep = discrete_terms(&w, &preset(Preset::Bibae)).unwrap();
            assert!((rep.a - rep.b - exact_mi(&w, MiPair::XZ).unwrap()).abs() < 1e-12);
            let vae = discrete_terms(&w, &preset(Preset::Vae)).unwrap();
            assert!(vae.a >= exact_mi(&w, MiPair::XZ).unwrap() - 1e-12);
        }
    }

    #[test]
    fn report_total_follows_composition() {
        let x = standard_normal(&[12, 3], &mut rng(13));
        for &p in &[Preset::Bibae, Preset::InfoVae, Preset::VaeGan, Preset::BetaVae] {
            let m = models(EncoderKind::GaussianHead, 14);
            let s = preset(p).with_beta(1.7).unwrap();
            let tape = Tape::new();
            let r = bib_loss(&tape, &x, &m, &Objective::new(s).unwrap(), &mut rng(15)).unwrap().report;
            assert!((r.total - LossReport::compose(&s, r.a, r.b, r.c, r.d)).abs() < 1e-12, "{p}");
        }
        let mut m = models(EncoderKind::Deterministic, 16);
        m.encoder = Some(Encoder::new(EncoderKind::Deterministic, 3, &[6], 2, Activation::Tanh, 0, 0.0, &mut rng(1)).unwrap());
        let s = preset(Preset::Aae).with_beta(2.0).unwrap();
        let tape = Tape::new();
        let r = bib_loss(&tape, &x, &m, &Objective::new(s).unwrap(), &mut rng(17)).unwrap().report;
        assert!((r.total - (r.b - 2.0 * r.c)).abs() < 1e-12);
    }

    #[test]
    fn beta_scales_reconstruction_term_linearly() {
        let m = models(EncoderKind::GaussianHead, 18);
        let x = standard_normal(&[12, 3], &mut rng(19));
        let report = |beta| {
            let s = preset(Preset::BetaVae).with_beta(beta).unwrap();
            let tape = Tape::new();
            bib_loss(&tape, &x, &m, &Objective::new(s).unwrap(), &mut rng(20)).unwrap().report
        };
        let r1 = report(1.0);
        for beta in [0.5, 2.0, 4.0] {
            let r = report(beta);
            assert_eq!(r.c, r1.c);
            assert!((r.total - (r.a - beta * r.c)).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_term_a_rejects_noise_injection_encoders() {
        for kind in [EncoderKind::AdditiveInputNoise, EncoderKind::ConcatNoise] {
            let m = models(kind, 21);
            let x = standard_normal(&[4, 3], &mut rng(22));
            let tape = Tape::new();
            let err = bib_loss(&tape, &x, &m, &Objective::new(preset(Preset::Vae)).unwrap(), &mut rng(0)).unwrap_err();
            assert!(matches!(err, Error::BindingMismatch(_)), "{err}");
        }
        let mut s = preset(Preset::Aae);
        s.encoder = EncoderRequirement::Stochastic;
        let m = models(EncoderKind::ConcatNoise, 23);
        let x = standard_normal(&[4, 3], &mut rng(24));
        let tape = Tape::new();
        assert!(bib_loss(&tape, &x, &m, &Objective::new(s).unwrap(), &mut rng(0)).is_ok());
    }

    #[test]
    fn mmd_binding_and_quantized_presets_run() {
        let mut s = preset(Preset::InfoVae);
        s.bindings.term_b = TermB::Mmd;
        let m = models(EncoderKind::GaussianHead, 25);
        let x = standard_normal(&[10, 3], &mut rng(26));
        let tape = Tape::new();
        let out = bib_loss(&tape, &x, &m, &Objective::new(s).unwrap(), &mut rng(27)).unwrap();
        assert_eq!(out.report.kinds.b, Some(EstimatorKind::Mmd));

        let mut m = models(EncoderKind::Deterministic, 28);
        let z = m.encoder.as_ref().unwrap().encode_mean(&x).unwrap();
        m.codebook = Some(fit_codebook(&z, 1, 5, &mut rng(29)).unwrap().codebook);
        let tape = Tape::new();
        let obj = Objective::new(preset(Preset::ShannonAe)).unwrap();
        let out = bib_loss(&tape, &x, &m, &obj, &mut rng(30)).unwrap();
        assert_eq!(out.report.a, 0.0);

        let mut obj = Objective::new(preset(Preset::Gcae)).unwrap();
        obj.u_sigma = 0.2;
        let tape = Tape::new();
        let a = bib_loss(&tape, &x, &m, &obj, &mut rng(31)).unwrap();
        let b = bib_loss(&tape, &x, &m, &obj, &mut rng(32)).unwrap();
        assert_ne!(a.latents, b.latents);
        assert!(a.generated.is_some());
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        let x = standard_normal(&[6, 3], &mut rng(33));
        for (p, seed) in [(Preset::Bibae, 34), (Preset::InfoVae, 35), (Preset::VaeGan, 36), (Preset::Gan, 37)] {
            let mut s = preset(p).with_beta(1.3).unwrap();
            let mut obj = Objective::new(s).unwrap();
            if p == Preset::InfoVae {
                s.bindings.term_b = TermB::Mmd;
                obj = Objective::new(s).unwrap();
                obj.kernel = Some(RbfKernel::new(vec![0.5, 1.0, 2.0]).unwrap());
            }
            // The Laplacian residual is not differentiable at zero; a Gaussian
            // likelihood keeps the check on smooth ground.
            let mut s2 = obj.spec;
            s2.bindings.term_c = TermC::GaussianLoglik;
            obj.spec = s2;
            obj.likelihood = crate::distributions::Likelihood::Gaussian(
                crate::distributions::GaussianLikelihood::new(0.8).unwrap(),
            );
            let m = models(EncoderKind::GaussianHead, seed);
            let tape = Tape::new();
            let out = bib_loss(&tape, &x, &m, &obj, &mut rng(seed)).unwrap();
            let g = tape.backward(out.total).unwrap();
            let params: Vec<_> = m.model_params().into_iter().cloned().collect();
            for (k, p0) in params.iter().enumerate() {
                let num = finite_diff_grad(
                    |pp| {
                        let mut mm = m.clone();
                        *mm.model_params_mut()[k] = pp.clone();
                        let tape = Tape::new();
                        Ok(bib_loss(&tape, &x, &mm, &obj, &mut rng(seed))?.report.total)
                    },
                    p0,
                    1e-6,
                )
                .unwrap();
                let ana = g.for_param(p0.id()).cloned().unwrap_or_else(|| Tensor::zeros(p0.value.shape()));
                let err = max_relative_error(&ana, &num).unwrap();
                assert!(err < 1e-4, "{p} {}: {err}", p0.name);
            }
        }
    }

    #[test]
    fn supervised_examples() {
        let mut m = models(EncoderKind::GaussianHead, 38);
        let mut cls = Mlp::new("classifier", &[2, 3], Activation::Tanh, &mut rng(39)).unwrap();
        cls.zero_last_layer();
        m.classifier = Some(cls);
        let obj = Objective::new(preset(Preset::SupervisedIb).with_beta(2.0).unwrap()).unwrap();
        let x = standard_normal(&[9, 3], &mut rng(40));
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let tape = Tape::new();
        let out = supervised_ib_loss(&tape, &x, &labels, &m, &obj, &mut rng(41)).unwrap();
        assert!((out.report.c + 3f64.ln()).abs() < 1e-12);
        assert!((out.report.total - (out.report.a + 2.0 * 3f64.ln())).abs() < 1e-12);

        // Output layer ignores z and puts a huge margin on the true class.
        let mut cls = Mlp::new("classifier", &[2, 3], Activation::Tanh, &mut rng(42)).unwrap();
        cls.layers_mut()[0].weight.value = Tensor::zeros(&[2, 3]);
        cls.layers_mut()[0].bias.value = Tensor::row(&[1000.0, 0.0, 0.0]).unwrap();
        m.classifier = Some(cls);
        let tape = Tape::new();
        let out = supervised_ib_loss(&tape, &x, &[0; 9], &m, &obj, &mut rng(41)).unwrap();
        assert_eq!(out.report.c, 0.0);
        assert!(matches!(
            supervised_ib_loss(&tape, &x, &[3; 9], &m, &obj, &mut rng(41)),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn gan_generator_examples() {
        let m = models(EncoderKind::GaussianHead, 43);
        let x = standard_normal(&[8, 3], &mut rng(44));
        let tape = Tape::new();
        let out = gan_generator_loss(&tape, &x, &m, 0.0, &mut rng(45)).unwrap();
        assert_eq!(out.report.total, out.report.d);

        // A constant generator whose output equals every data row.
        let mut g = Mlp::new("decoder", &[2, 3], Activation::Tanh, &mut rng(46)).unwrap();
        g.layers_mut()[0].weight.value = Tensor::zeros(&[2, 3]);
        g.layers_mut()[0].bias.value = Tensor::row(&[0.5, -1.0, 2.0]).unwrap();
        let x = Tensor::from_rows(&vec![vec![0.5, -1.0, 2.0]; 8]).unwrap();
        let mut m2 = m.clone();
        m2.decoder = g;
        m2.disc_x = Some(Discriminator::new("disc_x", 3, &[5], Activation::Tanh, &mut rng(48)).unwrap());
        let out = gan_generator_loss(&tape, &x, &m2, 3.0, &mut rng(47)).unwrap();
        assert_eq!(out.report.c, 0.0);
        // Untrained discriminator gives zero logits everywhere, so the bound is zero.
        assert!(out.report.d.abs() < 1e-12);
        assert_eq!(out.report.total, out.report.d);
    }

    #[test]
    fn preset_table_lists_every_preset() {
        let t = preset_table();
        assert_eq!(t.lines().count(), Preset::ALL.len() + 1);
        assert!(t.contains("AAE 0 1 1 0 add-b unavailable density-ratio laplacian-loglik off deterministic false"));
        assert!(matches!("nope".parse::<Preset>(), Err(Error::UnknownName { .. })));
        assert_eq!("betavae".parse::<Preset>().unwrap(), Preset::BetaVae);
    }
}
