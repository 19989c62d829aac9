use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Enum with stable lowercase names, `FromStr` and `Display`.
macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            pub fn valid_names() -> String {
                Self::ALL.iter().map(|v| v.name()).collect::<Vec<_>>().join(", ")
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.name().eq_ignore_ascii_case(s))
                    .ok_or_else(|| Error::UnknownName {
                        kind: $kind,
                        name: s.to_string(),
                        valid: Self::valid_names(),
                    })
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

named_enum!(Preset, "preset" {
    Vae => "VAE",
    BetaVae => "BetaVAE",
    Aae => "AAE",
    InfoVae => "InfoVAE",
    Gan => "GAN",
    VaeGan => "VAEGAN",
    ShannonAe => "ShannonAE",
    Gcae => "GCAE",
    SupervisedIb => "SupervisedIB",
    Bibae => "BIBAE",
});

named_enum!(
    /// Estimator for term A, `E_x KL(q(z|x) ‖ p(z))`. `codebook-rate`
    /// substitutes the quantized rate `R_Q` for the deterministic-plus-VQ presets.
    TermA, "term-a binding" {
    ClosedFormGaussian => "closed-form-gaussian",
    CodebookRate => "codebook-rate",
    Unavailable => "unavailable",
});

named_enum!(
    /// Estimator for term B, `KL(q(z) ‖ p(z))`. `gaussian-fit` is the
    /// closed-form KL of a moment-matched Gaussian; evaluation only.
    TermB, "term-b binding" {
    DensityRatio => "density-ratio",
    Mmd => "mmd",
    Enumeration => "enumeration",
    GaussianFit => "gaussian-fit",
    Off => "off",
});

named_enum!(
    /// Log-likelihood used for term C.
    TermC, "term-c binding" {
    LaplacianLoglik => "laplacian-loglik",
    GaussianLoglik => "gaussian-loglik",
    ClassifierLoglik => "classifier-loglik",
});

named_enum!(
    /// Estimator for term D, `KL(p_data(x) ‖ p_model(x))`.
    TermD, "term-d binding" {
    DensityRatio => "density-ratio",
    Enumeration => "enumeration",
    Off => "off",
});

named_enum!(
    /// How term B enters the total. `canonical` subtracts it as part of
    /// `I(X;Z) = A − B`; `add-b` adds it, as in the adversarial autoencoder.
    Composition, "composition" {
    Canonical => "canonical",
    AddB => "add-b",
});

named_enum!(
    /// Encoder a preset requires.
    EncoderRequirement, "encoder requirement" {
    GaussianHead => "gaussian-head",
    Deterministic => "deterministic",
    Quantized => "quantized",
    Stochastic => "stochastic",
    Any => "any",
    None => "none",
});

named_enum!(
    /// Source of the generated samples compared against data by term D.
    TermDSource, "term-d source" {
    Prior => "prior",
    Reconstruction => "reconstruction",
});

/// `L = w_a·A ∓ w_b·B − β (w_c·C − w_d·D)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermWeights {
    pub w_a: f64,
    pub w_b: f64,
    pub w_c: f64,
    pub w_d: f64,
    pub beta: f64,
}

impl TermWeights {
    pub fn new(w_a: f64, w_b: f64, w_c: f64, w_d: f64, beta: f64) -> Result<Self> {
        let w = Self { w_a, w_b, w_c, w_d, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_a, self.w_b, self.w_c, self.w_d];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(format!("term weights must be finite and >= 0, got {ws:?}")));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid(format!("beta must be finite and > 0, got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermBindings {
    pub term_a: TermA,
    pub term_b: TermB,
    pub term_c: TermC,
    pub term_d: TermD,
}

/// A fully resolved objective shape: weights, bindings, composition rule
/// and encoder requirement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PresetSpec {
    pub preset: Option<Preset>,
    pub weights: TermWeights,
    pub bindings: TermBindings,
    pub composition: Composition,
    pub encoder: EncoderRequirement,
    /// Add `u ~ N(0, u_sigma² I)` to quantized latents before decoding.
    pub dither: bool,
}

impl PresetSpec {
    /// Same shape as `other`, ignoring which preset produced it.
    pub fn same_shape(&self, other: &PresetSpec) -> bool {
        self.weights == other.weights
            && self.bindings == other.bindings
            && self.composition == other.composition
            && self.encoder == other.encoder
            && self.dither == other.dither
    }

    /// Replaces β. The VAE preset pins β = 1.
    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if self.preset == Some(Preset::Vae) && beta != 1.0 {
            return Err(Error::invalid(format!("the VAE preset fixes beta = 1, got {beta}; use BetaVAE")));
        }
        self.weights.beta = beta;
        self.weights.validate()?;
        Ok(self)
    }

    /// Checks internal consistency of bindings, weights and encoder requirement.
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let b = &self.bindings;
        if b.term_a == TermA::ClosedFormGaussian
            && !matches!(self.encoder, EncoderRequirement::GaussianHead)
        {
            return Err(Error::BindingMismatch(format!(
                "term A closed-form-gaussian needs a gaussian-head encoder, preset requires {}",
                self.encoder
            )));
        }
        if b.term_a == TermA::CodebookRate && self.encoder != EncoderRequirement::Quantized {
            return Err(Error::BindingMismatch("term A codebook-rate needs a quantized encoder".into()));
        }
        if self.encoder == EncoderRequirement::None
            && (b.term_a != TermA::Unavailable || b.term_b != TermB::Off)
        {
            return Err(Error::BindingMismatch(
                "terms A and B need an encoder; latents drawn from the prior carry no information".into(),
            ));
        }
        if self.dither && self.encoder != EncoderRequirement::Quantized {
            return Err(Error::BindingMismatch("dither applies to quantized latents only".into()));
        }
        let active = [
            (self.weights.w_a, b.term_a == TermA::Unavailable, "a"),
            (self.weights.w_b, b.term_b == TermB::Off, "b"),
            (self.weights.w_d, b.term_d == TermD::Off, "d"),
        ];
        for (w, off, term) in active {
            if w > 0.0 && off {
                return Err(Error::BindingMismatch(format!(
                    "w_{term} = {w} but term {} has no estimator",
                    term.to_uppercase()
                )));
            }
        }
        Ok(())
    }
}

fn spec(
    preset: Preset,
    (w_a, w_b, w_c, w_d): (f64, f64, f64, f64),
    bindings: (TermA, TermB, TermC, TermD),
    composition: Composition,
    encoder: EncoderRequirement,
) -> PresetSpec {
    PresetSpec {
        preset: Some(preset),
        weights: TermWeights {
            w_a,
            w_b,
            w_c,
            w_d,
            beta: 1.0,
        },
        bindings: TermBindings {
            term_a: bindings.0,
            term_b: bindings.1,
            term_c: bindings.2,
            term_d: bindings.3,
        },
        composition,
        encoder,
        dither: preset == Preset::Gcae,
    }
}

/// The fixed mapping from a method name to its objective, with β = 1.
///
/// | preset       | Lagrangian                         |
/// |--------------|------------------------------------|
/// | VAE          | `A − C`                            |
/// | BetaVAE      | `A − β C`                          |
/// | AAE          | `B − β C`                          |
/// | InfoVAE      | `A − B − β C`                      |
/// | GAN          | `β (D − C)`, `z ~ p(z)`            |
/// | VAEGAN       | `A − β C + β D`                    |
/// | ShannonAE    | `R_Q − β C`                        |
/// | GCAE         | `R_Q − β (C − D)`, dithered decode |
/// | SupervisedIB | `A − β E log p(c|z)`               |
/// | BIBAE        | `A − B − β (C − D)`                |
pub fn preset(name: Preset) -> PresetSpec {
    use Composition::*;
    use EncoderRequirement as E;
    let c = TermC::LaplacianLoglik;
    match name {
        Preset::Vae | Preset::BetaVae => spec(
            name,
            (1.0, 0.0, 1.0, 0.0),
            (TermA::ClosedFormGaussian, TermB::Off, c, TermD::Off),
            Canonical,
            E::GaussianHead,
        ),
        Preset::Aae => spec(
            name,
            (0.0, 1.0, 1.0, 0.0),
            (TermA::Unavailable, TermB::DensityRatio, c, TermD::Off),
            AddB,
            E::Deterministic,
        ),
        Preset::InfoVae => spec(
            name,
            (1.0, 1.0, 1.0, 0.0),
            (TermA::ClosedFormGaussian, TermB::DensityRatio, c, TermD::Off),
            Canonical,
            E::GaussianHead,
        ),
        Preset::Gan => spec(
            name,
            (0.0, 0.0, 1.0, 1.0),
            (TermA::Unavailable, TermB::Off, c, TermD::DensityRatio),
            Canonical,
            E::None,
        ),
        Preset::VaeGan => spec(
            name,
            (1.0, 0.0, 1.0, 1.0),
            (TermA::ClosedFormGaussian, TermB::Off, c, TermD::DensityRatio),
            Canonical,
            E::GaussianHead,
        ),
        Preset::ShannonAe => spec(
            name,
            (1.0, 0.0, 1.0, 0.0),
            (TermA::CodebookRate, TermB::Off, c, TermD::Off),
            Canonical,
            E::Quantized,
        ),
        Preset::Gcae => spec(
            name,
            (1.0, 0.0, 1.0, 1.0),
            (TermA::CodebookRate, TermB::Off, c, TermD::DensityRatio),
            Canonical,
            E::Quantized,
        ),
        Preset::SupervisedIb => spec(
            name,
            (1.0, 0.0, 1.0, 0.0),
            (TermA::ClosedFormGaussian, TermB::Off, TermC::ClassifierLoglik, TermD::Off),
            Canonical,
            E::GaussianHead,
        ),
        Preset::Bibae => spec(
            name,
            (1.0, 1.0, 1.0, 1.0),
            (TermA::ClosedFormGaussian, TermB::DensityRatio, c, TermD::DensityRatio),
            Canonical,
            E::GaussianHead,
        ),
    }
}

/// Plain-text reference of every preset, one line each.
pub fn preset_table() -> String {
    let mut out = String::from("# preset w_a w_b w_c w_d composition term_a term_b term_c term_d encoder dither\n");
    for &p in Preset::ALL {
        let s = preset(p);
        let w = s.weights;
        let b = s.bindings;
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {} {} {}\n",
            p, w.w_a, w.w_b, w.w_c, w.w_d, s.composition, b.term_a, b.term_b, b.term_c, b.term_d, s.encoder, s.dither
        ));
    }
    out
}
