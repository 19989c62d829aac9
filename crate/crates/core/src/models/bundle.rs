use std::collections::BTreeMap;

use super::codebook::Codebook;
use super::encoder::Encoder;
use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::estimators::Discriminator;
use crate::tensor::{Module, Parameter, Tensor};

/// Every trainable actor of one experiment.
#[derive(Clone, Debug)]
pub struct Models {
    pub encoder: Option<Encoder>,
    pub decoder: Mlp,
    pub disc_z: Option<Discriminator>,
    pub disc_x: Option<Discriminator>,
    pub codebook: Option<Codebook>,
    pub classifier: Option<Mlp>,
}

const TRAIN_STEPS_SUFFIX: &str = ".train_steps";

impl Models {
    pub fn new(encoder: Option<Encoder>, decoder: Mlp) -> Self {
        Self {
            encoder,
            decoder,
            disc_z: None,
            disc_x: None,
            codebook: None,
            classifier: None,
        }
    }

    /// Encoder, decoder and classifier parameters: everything updated by the model step.
    pub fn model_params(&self) -> Vec<&Parameter> {
        let mut v = Vec::new();
        if let Some(e) = &self.encoder {
            v.extend(e.parameters());
        }
        v.extend(self.decoder.parameters());
        if let Some(c) = &self.classifier {
            v.extend(c.parameters());
        }
        v
    }

    pub fn model_params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = Vec::new();
        if let Some(e) = &mut self.encoder {
            v.extend(e.parameters_mut());
        }
        v.extend(self.decoder.parameters_mut());
        if let Some(c) = &mut self.classifier {
            v.extend(c.parameters_mut());
        }
        v
    }

    /// All parameters including discriminators.
    pub fn all_params(&self) -> Vec<&Parameter> {
        let mut v = self.model_params();
        for d in [&self.disc_z, &self.disc_x].into_iter().flatten() {
            v.extend(d.parameters());
        }
        v
    }

    fn all_params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = Vec::new();
        if let Some(e) = &mut self.encoder {
            v.extend(e.parameters_mut());
        }
        v.extend(self.decoder.parameters_mut());
        if let Some(c) = &mut self.classifier {
            v.extend(c.parameters_mut());
        }
        for d in [&mut self.disc_z, &mut self.disc_x].into_iter().flatten() {
            v.extend(d.parameters_mut());
        }
        v
    }

    fn discriminators(&self) -> [(&'static str, Option<&Discriminator>); 2] {
        [("disc_z", self.disc_z.as_ref()), ("disc_x", self.disc_x.as_ref())]
    }

    /// Named tensors in checkpoint order.
    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .all_params()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        for (name, d) in self.discriminators() {
            if let Some(d) = d {
                out.push((
                    format!("{name}{TRAIN_STEPS_SUFFIX}"),
                    Tensor::scalar(d.steps_trained() as f64),
                ));
            }
        }
        if let Some(cb) = &self.codebook {
            out.extend(cb.to_entries());
        }
        out
    }

    /// Overwrites parameter values from checkpoint entries. Every parameter
    /// must be present with a matching shape and no entry may be left over.
    pub fn load_entries(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        let mut map: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, t) in entries {
            if map.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate entry '{name}'")));
            }
        }
        for p in self.all_params_mut() {
            let t = map
                .remove(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry '{}'", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "'{}' has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t;
            p.zero_grad();
        }
        for (name, slot) in [("disc_z", &mut self.disc_z), ("disc_x", &mut self.disc_x)] {
            let key = format!("{name}{TRAIN_STEPS_SUFFIX}");
            if let Some(d) = slot {
                let steps = map
                    .remove(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing entry '{key}'")))?
                    .item();
                if !(steps >= 0.0 && steps.fract() == 0.0) {
                    return Err(Error::Checkpoint(format!("'{key}' is not a step count")));
                }
                d.set_steps_trained(steps as u64);
            }
        }
        match (map.remove("codebook.centroids"), map.remove("codebook.counts")) {
            (Some(c), Some(n)) => self.codebook = Some(Codebook::from_tensors(&c, &n)?),
            (None, None) => {}
            _ => return Err(Error::Checkpoint("codebook needs both centroids and counts".into())),
        }
        if let Some(name) = map.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected entry '{name}'")));
        }
        Ok(())
    }
}
