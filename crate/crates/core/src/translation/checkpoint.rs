use std::fs;
use std::path::Path;

use plumeshift_nn::{Container, Section};
use serde::{Deserialize, Serialize};

use super::{CycleGanConfig, Discriminator, Generator, LossRecord, TrackRecord};
use crate::error::{Error, Result};
use crate::normalization::NormStats;

pub const KIND: &str = "cyclegan";

#[derive(Clone, Debug)]
pub struct CycleGanCheckpoint {
    pub config: CycleGanConfig,
    /// Airborne → spaceborne.
    pub g_s: Generator,
    /// Spaceborne → airborne.
    pub g_a: Generator,
    pub d_a: Discriminator,
    pub d_s: Discriminator,
    pub norm_airborne: NormStats,
    pub norm_spaceborne: NormStats,
    pub losses: Vec<LossRecord>,
    pub tracking: Vec<TrackRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: CycleGanConfig,
    norm_airborne: NormStats,
    norm_spaceborne: NormStats,
    losses: Vec<LossRecord>,
    tracking: Vec<TrackRecord>,
}

impl CycleGanCheckpoint {
    pub fn encode(&self) -> Vec<u8> {
        let meta = Meta {
            config: self.config.clone(),
            norm_airborne: self.norm_airborne.clone(),
            norm_spaceborne: self.norm_spaceborne.clone(),
            losses: self.losses.clone(),
            tracking: self.tracking.clone(),
        };
        let sec = |name: &str, p: &plumeshift_nn::ParamStore| Section {
            name: name.into(),
            params: p.clone(),
        };
        Container {
            kind: KIND.into(),
            meta: serde_json::to_value(meta).expect("meta serialises"),
            sections: vec![
                sec("G_s", &self.g_s.params),
                sec("G_a", &self.g_a.params),
                sec("D_a", &self.d_a.params),
                sec("D_s", &self.d_s.params),
            ],
        }
        .encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<CycleGanCheckpoint> {
        let c = Container::decode(bytes)?;
        if c.kind != KIND {
            return Err(Error::Data(format!("expected a {} checkpoint, found {}", KIND, c.kind)));
        }
        let meta: Meta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::Data(format!("checkpoint metadata: {}", e)))?;
        let sec = |name: &str| {
            c.section(name)
                .cloned()
                .ok_or_else(|| Error::Data(format!("checkpoint lacks section {}", name)))
        };
        let cfg = &meta.config;
        Ok(CycleGanCheckpoint {
            g_s: Generator::from_params(&cfg.generator, sec("G_s")?)?,
            g_a: Generator::from_params(&cfg.generator, sec("G_a")?)?,
            d_a: Discriminator::from_params(&cfg.discriminator, sec("D_a")?)?,
            d_s: Discriminator::from_params(&cfg.discriminator, sec("D_s")?)?,
            config: meta.config,
            norm_airborne: meta.norm_airborne,
            norm_spaceborne: meta.norm_spaceborne,
            losses: meta.losses,
            tracking: meta.tracking,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<CycleGanCheckpoint> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingArtifact(path.to_path_buf()))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        CycleGanCheckpoint::decode(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}
