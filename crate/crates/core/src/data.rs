//! In-memory normalized tile sets used as model input.

use std::path::Path;

use plumeshift_nn::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::manifest::{load_tile, DatasetManifest};
use crate::normalization::{normalize_tile, NormStats};
use crate::synthkit::Tile;
use crate::types::{Domain, Label};

/// Normalized single-channel images with labels. NODATA pixels become 0 in
/// the model input.
#[derive(Clone, Debug, PartialEq)]
pub struct TileSet {
    pub side: usize,
    pub domain: Domain,
    /// Instrument whose statistics normalized these tiles.
    pub norm_instrument: Domain,
    pub instr_max: f64,
    pub ids: Vec<String>,
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl TileSet {
    pub fn from_tiles(tiles: &[Tile], stats: &NormStats) -> Result<TileSet> {
        let first = tiles
            .first()
            .ok_or_else(|| Error::Data("empty tile set".into()))?;
        let side = first.width;
        let mut set = TileSet {
            side,
            domain: first.domain,
            norm_instrument: stats.instrument,
            instr_max: stats.instr_max,
            ids: Vec::with_capacity(tiles.len()),
            images: Vec::with_capacity(tiles.len()),
            labels: Vec::with_capacity(tiles.len()),
        };
        for t in tiles {
            if t.width != side || t.height != side {
                return Err(Error::Shape(format!(
                    "tile {} is {}x{}, set expects {}x{}",
                    t.scene_id, t.width, t.height, side, side
                )));
            }
            if t.domain != set.domain {
                return Err(Error::Data(format!(
                    "tile {} is from another instrument",
                    t.scene_id
                )));
            }
            let n = if t.normalized {
                t.clone()
            } else {
                normalize_tile(t, stats)?
            };
            set.ids.push(t.scene_id.clone());
            set.images.push(
                n.grid
                    .iter()
                    .map(|&v| if v.is_nan() { 0.0 } else { v as f64 })
                    .collect(),
            );
            set.labels.push(t.label == Label::Plume);
        }
        Ok(set)
    }

    /// Loads and normalizes every tile listed in `m`.
    pub fn load(root: &Path, m: &DatasetManifest, stats: &NormStats) -> Result<TileSet> {
        let tiles: Vec<Tile> = m
            .entries()
            .iter()
            .map(|r| load_tile(root, r))
            .collect::<Result<_>>()?;
        TileSet::from_tiles(&tiles, stats)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// NCHW batch of the given sample indices.
    pub fn batch(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.side * self.side);
        for &i in idx {
            data.extend_from_slice(&self.images[i]);
        }
        Tensor::from_vec(&[idx.len(), 1, self.side, self.side], data).expect("uniform tiles")
    }

    pub fn targets(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .map(|&i| if self.labels[i] { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> TileSet {
        TileSet {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ..self.without_samples()
        }
    }

    fn without_samples(&self) -> TileSet {
        TileSet {
            side: self.side,
            domain: self.domain,
            norm_instrument: self.norm_instrument,
            instr_max: self.instr_max,
            ids: Vec::new(),
            images: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Same metadata with new pixel content, e.g. after translation.
    pub fn with_images(&self, images: Vec<Vec<f64>>) -> TileSet {
        assert_eq!(images.len(), self.len());
        TileSet {
            images,
            ids: self.ids.clone(),
            labels: self.labels.clone(),
            ..self.without_samples()
        }
    }

    /// Seeded class-proportional subsample holding `round(fraction * n)`
    /// tiles per class (at least one of each class when the fraction is
    /// positive). Indices are returned in set order.
    pub fn stratified_fraction<R: Rng>(&self, fraction: f64, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::new();
        for class in [true, false] {
            let mut members: Vec<usize> = (0..self.len())
                .filter(|&i| self.labels[i] == class)
                .collect();
            let mut k = (fraction * members.len() as f64).round() as usize;
            if fraction > 0.0 && !members.is_empty() {
                k = k.max(1);
            }
            members.shuffle(rng);
            out.extend_from_slice(&members[..k.min(members.len())]);
        }
        out.sort_unstable();
        out
    }
}
