//! Declarative run configuration (TOML). Every random stream of a run is a
//! named sub-seed of `master_seed`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::{FineTuneConfig, DEFAULT_FRACTIONS};
use crate::classifier::ClassifierConfig;
use crate::error::{Error, Result};
use crate::synthkit::{DatasetGenConfig, DomainProfile};
use crate::translation::{CycleGanConfig, DiscArch, GenArch};
use crate::types::{Domain, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSynth {
    pub n_plume: usize,
    pub n_background: usize,
    pub profile: DomainProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub extent_px: usize,
    pub tiles_per_region: usize,
    pub airborne: DomainSynth,
    pub spaceborne: DomainSynth,
}

impl SynthSection {
    pub fn domain(&self, d: Domain) -> &DomainSynth {
        match d {
            Domain::Airborne => &self.airborne,
            Domain::Spaceborne => &self.spaceborne,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurationSection {
    pub cloud_threshold: f64,
    /// Train / val / test.
    pub split_ratios: [f64; 3],
    pub stratify_by_region: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationSection {
    /// Splits pooled for the reported summary statistics. The clipping
    /// ceiling itself always comes from the train split.
    pub summary_splits: Vec<Split>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationSection {
    pub fine_tune: FineTuneConfig,
    /// Plan used for the fine-tuned model of the four-way comparison.
    pub n_unfrozen_blocks: usize,
    pub unfreeze_sweep: bool,
    /// Empty disables the fraction sweep.
    pub fractions: Vec<f64>,
    pub repeats: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentsSection {
    pub gallery_plume: usize,
    pub gallery_background: usize,
    pub display_clip_ppmm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub synth: SynthSection,
    pub curation: CurationSection,
    pub normalization: NormalizationSection,
    pub classifier: ClassifierConfig,
    pub adaptation: AdaptationSection,
    pub cyclegan: CycleGanConfig,
    pub experiments: ExperimentsSection,
}

impl Default for RunConfig {
    /// Desk-scale study: 64-pixel tiles, ~1,900 airborne and ~550
    /// spaceborne training tiles, small networks.
    fn default() -> Self {
        RunConfig {
            master_seed: 1,
            synth: SynthSection {
                extent_px: 64,
                tiles_per_region: 8,
                airborne: DomainSynth {
                    n_plume: 600,
                    n_background: 1775,
                    profile: DomainProfile::airborne(),
                },
                spaceborne: DomainSynth {
                    n_plume: 260,
                    n_background: 500,
                    profile: DomainProfile::spaceborne(),
                },
            },
            curation: CurationSection {
                cloud_threshold: crate::curation::DEFAULT_CLOUD_THRESHOLD,
                split_ratios: [0.8, 0.1, 0.1],
                stratify_by_region: true,
            },
            normalization: NormalizationSection {
                summary_splits: vec![Split::Train, Split::Val, Split::Test],
            },
            classifier: ClassifierConfig {
                learning_rate: 1e-3,
                epochs: 20,
                ..ClassifierConfig::default()
            },
            adaptation: AdaptationSection {
                fine_tune: FineTuneConfig::default(),
                n_unfrozen_blocks: 4,
                unfreeze_sweep: true,
                fractions: DEFAULT_FRACTIONS.to_vec(),
                repeats: 3,
            },
            cyclegan: CycleGanConfig {
                learning_rate: 2e-4,
                epochs: 8,
                steps_per_epoch: Some(200),
                generator: GenArch {
                    channels: 4,
                    res_blocks: 2,
                },
                discriminator: DiscArch {
                    channels: 4,
                    leaky_slope: 0.2,
                },
                ..CycleGanConfig::default()
            },
            experiments: ExperimentsSection {
                gallery_plume: 3,
                gallery_background: 3,
                display_clip_ppmm: 1000.0,
            },
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingArtifact(path.to_path_buf()))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => cfg_err(format!("{}: {}", path.display(), m)),
            e => e,
        })
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(bytes))[..16].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.synth;
        for d in Domain::ALL {
            let ds = s.domain(d);
            ds.profile
                .validate()
                .map_err(|e| cfg_err(format!("synth.{}.profile: {}", d, e)))?;
            if ds.n_plume == 0 || ds.n_background == 0 {
                return Err(cfg_err(format!("synth.{} needs plume and background tiles", d)));
            }
        }
        if s.extent_px < 16 || s.extent_px % 8 != 0 {
            return Err(cfg_err(format!(
                "synth.extent_px must be a multiple of 8 and >= 16, got {}",
                s.extent_px
            )));
        }
        if s.tiles_per_region == 0 {
            return Err(cfg_err("synth.tiles_per_region must be >= 1"));
        }
        let c = &self.curation;
        if !(0.0..=1.0).contains(&c.cloud_threshold) {
            return Err(cfg_err("curation.cloud_threshold must lie in [0,1]"));
        }
        if self.normalization.summary_splits.contains(&Split::Rejected)
            || self.normalization.summary_splits.is_empty()
        {
            return Err(cfg_err(
                "normalization.summary_splits must list train/val/test splits only",
            ));
        }
        self.classifier
            .validate()
            .map_err(|e| cfg_err(format!("classifier: {}", e)))?;
        let a = &self.adaptation;
        if a.n_unfrozen_blocks > self.classifier.n_blocks {
            return Err(cfg_err(format!(
                "adaptation.n_unfrozen_blocks {} exceeds classifier.n_blocks {}",
                a.n_unfrozen_blocks, self.classifier.n_blocks
            )));
        }
        if !(a.fine_tune.learning_rate > 0.0) || a.fine_tune.batch_size == 0 {
            return Err(cfg_err("adaptation.fine_tune needs a positive learning rate and batch size"));
        }
        if a.repeats == 0 || a.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(cfg_err("adaptation.fractions must lie in [0,1] and repeats be >= 1"));
        }
        self.cyclegan
            .validate()
            .map_err(|e| cfg_err(format!("cyclegan: {}", e)))?;
        let e = &self.experiments;
        if !(e.display_clip_ppmm > 0.0) {
            return Err(cfg_err("experiments.display_clip_ppmm must be positive"));
        }
        for (name, seed) in [
            ("classifier.seed", self.classifier.seed),
            ("adaptation.fine_tune.seed", a.fine_tune.seed),
            ("cyclegan.seed", self.cyclegan.seed),
        ] {
            if seed != 0 {
                return Err(cfg_err(format!(
                    "{} is derived from master_seed; remove it from the config",
                    name
                )));
            }
        }
        Ok(())
    }

    pub fn gen_config(&self, d: Domain) -> DatasetGenConfig {
        let ds = self.synth.domain(d);
        DatasetGenConfig {
            domain: d,
            n_plume: ds.n_plume,
            n_background: ds.n_background,
            tiles_per_region: self.synth.tiles_per_region,
            extent_px: self.synth.extent_px,
            seed: crate::rng::sub_seed(self.master_seed, &format!("synth-{}", d)),
            profile: ds.profile.clone(),
            config_hash: self.hash(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = RunConfig::default().to_toml().replace("[curation]", "[curation]\nbogus = 1");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("bogus")), "{}", err);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn section_seeds_are_refused() {
        let mut cfg = RunConfig::default();
        cfg.cyclegan.seed = 4;
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("cyclegan.seed")));
    }

    #[test]
    fn learning_rate_outside_grid_is_refused() {
        let mut cfg = RunConfig::default();
        cfg.cyclegan.learning_rate = 1e-3;
        assert!(cfg.validate().is_err());
    }
}
