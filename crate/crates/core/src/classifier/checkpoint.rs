use std::fs;
use std::path::Path;

use plumeshift_nn::{Adam, Container, ParamStore, Section, Tensor};
use serde::{Deserialize, Serialize};

use super::{Arch, Classifier, EpochRecord};
use crate::error::{Error, Result};
use crate::normalization::NormStats;
use crate::types::Domain;

pub const KIND: &str = "classifier";

/// Provenance of a fine-tuned model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub source_digest: String,
    pub n_unfrozen_blocks: usize,
}

#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub model: Classifier,
    pub optimizer: Option<Adam>,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub config_hash: String,
    pub domain: Domain,
    pub norm: NormStats,
    pub lineage: Option<Lineage>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    arch: Arch,
    epoch: usize,
    history: Vec<EpochRecord>,
    config_hash: String,
    domain: Domain,
    norm: NormStats,
    lineage: Option<Lineage>,
    optimizer: Option<OptMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    step: u64,
}

fn moments_store(m: &[Option<Tensor>]) -> ParamStore {
    let mut s = ParamStore::new();
    for (i, t) in m.iter().enumerate() {
        if let Some(t) = t {
            s.add("moment", &i.to_string(), t.clone());
        }
    }
    s
}

fn moments_from(store: Option<&ParamStore>, n: usize) -> Result<Vec<Option<Tensor>>> {
    let mut out: Vec<Option<Tensor>> = vec![None; n];
    if let Some(store) = store {
        for e in store.entries() {
            let i: usize = e
                .name
                .parse()
                .map_err(|_| Error::Data(format!("bad optimizer moment name {}", e.name)))?;
            if i >= n {
                return Err(Error::Data(format!("optimizer moment {} out of range", i)));
            }
            out[i] = Some(e.value.clone());
        }
    }
    Ok(out)
}

impl ModelCheckpoint {
    pub fn encode(&self) -> Vec<u8> {
        let optimizer = self.optimizer.as_ref().map(|o| OptMeta {
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            step: o.steps(),
        });
        let meta = Meta {
            arch: self.model.arch.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            config_hash: self.config_hash.clone(),
            domain: self.domain,
            norm: self.norm.clone(),
            lineage: self.lineage.clone(),
            optimizer,
        };
        let mut sections = vec![Section {
            name: "model".into(),
            params: self.model.params.clone(),
        }];
        if let Some(o) = &self.optimizer {
            let (m, v) = o.moments();
            sections.push(Section {
                name: "adam_m".into(),
                params: moments_store(m),
            });
            sections.push(Section {
                name: "adam_v".into(),
                params: moments_store(v),
            });
        }
        Container {
            kind: KIND.into(),
            meta: serde_json::to_value(meta).expect("meta serialises"),
            sections,
        }
        .encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<ModelCheckpoint> {
        let c = Container::decode(bytes)?;
        if c.kind != KIND {
            return Err(Error::Data(format!(
                "expected a {} checkpoint, found {}",
                KIND, c.kind
            )));
        }
        let meta: Meta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::Data(format!("checkpoint metadata: {}", e)))?;
        let params = c
            .section("model")
            .ok_or_else(|| Error::Data("checkpoint lacks a model section".into()))?
            .clone();
        let model = Classifier::from_params(&meta.arch, params)?;
        let optimizer = match meta.optimizer {
            Some(o) => {
                let n = model.params.len();
                let m = moments_from(c.section("adam_m"), n)?;
                let v = moments_from(c.section("adam_v"), n)?;
                Some(Adam::with_betas(o.lr, o.beta1, o.beta2).restore(o.step, m, v))
            }
            None => None,
        };
        Ok(ModelCheckpoint {
            model,
            optimizer,
            epoch: meta.epoch,
            history: meta.history,
            config_hash: meta.config_hash,
            domain: meta.domain,
            norm: meta.norm,
            lineage: meta.lineage,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ModelCheckpoint> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingArtifact(path.to_path_buf()))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        ModelCheckpoint::decode(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}
