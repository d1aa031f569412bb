//! Cloud rejection, region-stratified splitting and class balancing. Every
//! operation returns a new manifest and leaves its input untouched.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::rng::rng;
use crate::types::{Label, Split};

pub const DEFAULT_CLOUD_THRESHOLD: f64 = 0.20;

/// Marks every tile with `cloud_fraction >= threshold` as rejected.
pub fn reject_cloudy(m: &DatasetManifest, threshold: f64) -> Result<DatasetManifest> {
    if let Some(r) = m.entries().iter().find(|r| r.cloud_fraction.is_none()) {
        return Err(Error::Data(format!(
            "tile {} has no cloud_fraction",
            r.tile_id
        )));
    }
    Ok(m.with_splits(|r| {
        if r.cloud_fraction.expect("checked above") >= threshold {
            Some(Split::Rejected)
        } else {
            r.split
        }
    }))
}

/// Assigns train/val/test to every non-rejected tile.
///
/// Groups (regions when stratifying, single tiles otherwise) are visited in a
/// seeded random order and each goes to the split currently furthest below
/// its target tile count.
pub fn split(
    m: &DatasetManifest,
    ratios: (f64, f64, f64),
    stratify_by_region: bool,
    seed: u64,
) -> Result<DatasetManifest> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|v| !(0.0..=1.0).contains(v)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {:?} must be in [0,1] and sum to 1",
            r
        )));
    }
    let splits = [Split::Train, Split::Val, Split::Test];
    let wanted = r.iter().filter(|v| **v > 0.0).count();

    // Group key -> indices of member tiles, in manifest order.
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut total = 0usize;
    for (i, e) in m.entries().iter().enumerate() {
        if e.split == Some(Split::Rejected) {
            continue;
        }
        let key = if stratify_by_region {
            e.region_id as u64
        } else {
            i as u64
        };
        groups.entry(key).or_default().push(i);
        total += 1;
    }
    if groups.len() < wanted {
        return Err(Error::Config(format!(
            "{} {} cannot fill {} non-empty splits",
            groups.len(),
            if stratify_by_region {
                "regions"
            } else {
                "tiles"
            },
            wanted
        )));
    }
    let mut order: Vec<&Vec<usize>> = groups.values().collect();
    order.shuffle(&mut rng(seed));

    let target: Vec<f64> = r.iter().map(|v| v * total as f64).collect();
    let mut filled = [0usize; 3];
    let mut assign: Vec<Option<Split>> = m.entries().iter().map(|e| e.split).collect();
    for members in order {
        let mut best = None;
        for s in 0..3 {
            if r[s] <= 0.0 {
                continue;
            }
            let deficit = target[s] - filled[s] as f64;
            if best.is_none_or(|(_, d)| deficit > d) {
                best = Some((s, deficit));
            }
        }
        let (s, _) = best.expect("at least one positive ratio");
        filled[s] += members.len();
        for &i in members {
            assign[i] = Some(splits[s]);
        }
    }
    if let Some(s) = (0..3).find(|&s| r[s] > 0.0 && filled[s] == 0) {
        return Err(Error::Config(format!(
            "split {} ended empty; more regions are needed",
            splits[s]
        )));
    }
    let ids: BTreeMap<&str, Option<Split>> = m
        .entries()
        .iter()
        .zip(&assign)
        .map(|(e, s)| (e.tile_id.as_str(), *s))
        .collect();
    Ok(m.with_splits(|e| ids[e.tile_id.as_str()]))
}

/// Keeps every positive of `split` plus an equal-size seeded random subset
/// of its negatives. The result holds only that split, in manifest order.
pub fn balance(m: &DatasetManifest, split: Split, seed: u64) -> Result<DatasetManifest> {
    let in_split: Vec<usize> = (0..m.len())
        .filter(|&i| m.entries()[i].split == Some(split))
        .collect();
    let pos = in_split
        .iter()
        .filter(|&&i| m.entries()[i].label == Label::Plume)
        .count();
    let mut neg: Vec<usize> = in_split
        .iter()
        .copied()
        .filter(|&i| m.entries()[i].label == Label::Background)
        .collect();
    if pos == 0 {
        return Err(Error::Config(format!(
            "split {} has no positive tiles to balance",
            split
        )));
    }
    if neg.len() < pos {
        return Err(Error::Config(format!(
            "split {} has {} negatives for {} positives; balancing never upsamples",
            split,
            neg.len(),
            pos
        )));
    }
    neg.shuffle(&mut rng(seed));
    let mut keep = vec![false; m.len()];
    for &i in &neg[..pos] {
        keep[i] = true;
    }
    for &i in &in_split {
        if m.entries()[i].label == Label::Plume {
            keep[i] = true;
        }
    }
    let ids: std::collections::HashSet<&str> = (0..m.len())
        .filter(|&i| keep[i])
        .map(|i| m.entries()[i].tile_id.as_str())
        .collect();
    Ok(m.filter(|r| ids.contains(r.tile_id.as_str())))
}

/// Tile counts per split.
pub fn split_counts(m: &DatasetManifest) -> BTreeMap<Split, usize> {
    let mut out = BTreeMap::new();
    for e in m.entries() {
        if let Some(s) = e.split {
            *out.entry(s).or_insert(0) += 1;
        }
    }
    out
}
