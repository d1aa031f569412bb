//! Per-instrument clipping ceiling and pooled summary statistics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{load_tile, DatasetManifest};
use crate::synthkit::Tile;
use crate::types::{Domain, Split};

/// Percentile used for the clipping ceiling.
pub const CEILING_PERCENT: u32 = 95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub instrument: Domain,
    pub instr_max: f64,
    pub count_pixels: u64,
    pub mean_ppmm: f64,
    pub max_ppmm: f64,
    pub p95_ppmm: f64,
    pub variance_ppmm: f64,
}

/// One-based rank of the nearest-rank percentile: `ceil(pct/100 * n)`,
/// computed in integers so it never suffers from rounding.
pub fn nearest_rank(n: usize, pct: u32) -> usize {
    ((pct as usize * n).div_ceil(100)).max(1)
}

/// Nearest-rank percentile of `values`; reorders the slice.
pub fn percentile(values: &mut [f64], pct: u32) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let k = nearest_rank(values.len(), pct) - 1;
    let (_, v, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    Some(*v)
}

/// Statistics of the non-NaN, non-negative values of `pool`. Mean and
/// variance are taken after clipping at the 95th percentile; the maximum is
/// the unclipped pool maximum.
pub fn pool_stats(instrument: Domain, pool: impl IntoIterator<Item = f64>) -> Result<NormStats> {
    let mut v: Vec<f64> = pool
        .into_iter()
        .filter(|x| !x.is_nan() && *x >= 0.0)
        .collect();
    let p95 = percentile(&mut v, CEILING_PERCENT)
        .ok_or_else(|| Error::Data("no valid non-negative pixels in the pool".into()))?;
    let n = v.len() as f64;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = v.iter().map(|x| x.min(p95)).sum::<f64>() / n;
    let var = v.iter().map(|x| (x.min(p95) - mean).powi(2)).sum::<f64>() / n;
    if !(p95 > 0.0) {
        return Err(Error::Data(format!(
            "{} pool has a non-positive 95th percentile ({}); cannot scale",
            instrument, p95
        )));
    }
    Ok(NormStats {
        instrument,
        instr_max: p95,
        count_pixels: v.len() as u64,
        mean_ppmm: mean,
        max_ppmm: max,
        p95_ppmm: p95,
        variance_ppmm: var,
    })
}

fn tiles_pool<'a>(tiles: impl Iterator<Item = &'a Tile>) -> Vec<f64> {
    tiles
        .flat_map(|t| t.grid.iter().map(|&v| v as f64))
        .collect()
}

fn instrument_of(m: &DatasetManifest) -> Result<Domain> {
    let first = m
        .entries()
        .first()
        .ok_or_else(|| Error::Data("empty manifest".into()))?
        .domain;
    if m.entries().iter().any(|e| e.domain != first) {
        return Err(Error::Data("manifest mixes instruments".into()));
    }
    Ok(first)
}

/// Clipping ceiling from the train split of `m` (tiles under `root`).
pub fn compute_instr_max(root: &Path, m: &DatasetManifest) -> Result<NormStats> {
    let train = m.filter(|r| r.split == Some(Split::Train));
    if train.is_empty() {
        return Err(Error::Data("manifest has no train tiles".into()));
    }
    summary_stats(root, &train)
}

/// Pooled statistics over every tile listed in `m`.
pub fn summary_stats(root: &Path, m: &DatasetManifest) -> Result<NormStats> {
    let instrument = instrument_of(m)?;
    let tiles: Vec<Tile> = m
        .entries()
        .iter()
        .map(|r| load_tile(root, r))
        .collect::<Result<_>>()?;
    pool_stats(instrument, tiles_pool(tiles.iter()))
}

pub fn clip(v: f64, instr_max: f64) -> f64 {
    v.clamp(0.0, instr_max)
}

/// `clip(v, 0, instr_max) / instr_max` per pixel; NaN stays NaN.
pub fn normalize_tile(t: &Tile, s: &NormStats) -> Result<Tile> {
    if !(s.instr_max > 0.0 && s.instr_max.is_finite()) {
        return Err(Error::Config(format!(
            "instr_max must be positive, got {}",
            s.instr_max
        )));
    }
    if t.normalized {
        return Err(Error::Usage(format!(
            "tile {} is already normalized",
            t.scene_id
        )));
    }
    let m = s.instr_max;
    let grid = t
        .grid
        .iter()
        .map(|&v| {
            if v.is_nan() {
                f32::NAN
            } else {
                (clip(v as f64, m) / m) as f32
            }
        })
        .collect();
    Ok(Tile {
        grid,
        normalized: true,
        ..t.clone()
    })
}

/// Maps a normalized tile back to ppmm with the given instrument ceiling.
pub fn denormalize_tile(t: &Tile, s: &NormStats) -> Tile {
    Tile {
        grid: t
            .grid
            .iter()
            .map(|&v| (v as f64 * s.instr_max) as f32)
            .collect(),
        normalized: false,
        ..t.clone()
    }
}

impl NormStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serialises")
    }

    pub fn from_json(text: &str) -> std::result::Result<NormStats, String> {
        let s: NormStats = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if !(s.instr_max > 0.0 && s.instr_max.is_finite()) {
            return Err(format!("instr_max must be positive, got {}", s.instr_max));
        }
        if !(s.p95_ppmm <= s.max_ppmm) || !(s.variance_ppmm >= 0.0) {
            return Err("inconsistent statistics (p95 > max or negative variance)".into());
        }
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<NormStats> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingArtifact(path.to_path_buf()))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        NormStats::from_json(&text).map_err(|m| Error::format(path, m))
    }
}

/// Summary table with rows Average/Maximum/95th Percentile/Variance and one
/// column per named pool.
pub fn summary_csv(columns: &[(&str, &NormStats)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["statistic".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header).expect("in-memory");
    let rows: [(&str, fn(&NormStats) -> f64); 4] = [
        ("Average (ppmm)", |s| s.mean_ppmm),
        ("Maximum (ppmm)", |s| s.max_ppmm),
        ("95th Percentile (ppmm)", |s| s.p95_ppmm),
        ("Variance (ppmm^2)", |s| s.variance_ppmm),
    ];
    for (name, f) in rows {
        let mut rec = vec![name.to_string()];
        rec.extend(columns.iter().map(|(_, s)| format!("{:.3}", f(s))));
        w.write_record(&rec).expect("in-memory");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Label;

    fn tile(values: Vec<f32>) -> Tile {
        let n = values.len();
        Tile {
            grid: values,
            width: n,
            height: 1,
            label: Label::Background,
            domain: Domain::Airborne,
            gsd_m: 5.0,
            region_id: 0,
            cloud_fraction: 0.0,
            scene_id: "t".into(),
            normalized: false,
        }
    }

    fn stats(m: f64) -> NormStats {
        NormStats {
            instrument: Domain::Airborne,
            instr_max: m,
            count_pixels: 1,
            mean_ppmm: 0.0,
            max_ppmm: m,
            p95_ppmm: m,
            variance_ppmm: 0.0,
        }
    }

    #[test]
    fn percentile_one_to_hundred() {
        let s = pool_stats(Domain::Airborne, (1..=100).map(|v| v as f64)).unwrap();
        assert_eq!(s.instr_max, 95.0);
        assert_eq!(s.max_ppmm, 100.0);
        let with_neg = pool_stats(
            Domain::Airborne,
            std::iter::once(-10.0).chain((0..=100).map(|v| v as f64)),
        )
        .unwrap();
        let without = pool_stats(Domain::Airborne, (0..=100).map(|v| v as f64)).unwrap();
        assert_eq!(with_neg, without);
    }

    #[test]
    fn constant_pool() {
        let s = pool_stats(Domain::Spaceborne, vec![7.0; 50]).unwrap();
        assert_eq!(
            (s.mean_ppmm, s.max_ppmm, s.p95_ppmm, s.variance_ppmm),
            (7.0, 7.0, 7.0, 0.0)
        );
    }

    #[test]
    fn empty_or_nan_pool_is_data_error() {
        assert!(matches!(
            pool_stats(Domain::Airborne, vec![f64::NAN, -1.0]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn normalize_example() {
        let t =
            normalize_tile(&tile(vec![-5.0, 0.0, 50.0, 200.0, f32::NAN]), &stats(100.0)).unwrap();
        assert_eq!(&t.grid[..4], &[0.0, 0.0, 0.5, 1.0]);
        assert!(t.grid[4].is_nan());
        assert!(matches!(
            normalize_tile(&tile(vec![1.0]), &stats(0.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stats_json_round_trip() {
        let s = pool_stats(Domain::Spaceborne, (0..1000).map(|v| v as f64 * 0.37)).unwrap();
        assert_eq!(NormStats::from_json(&s.to_json()).unwrap(), s);
        assert!(NormStats::from_json("{\"instrument\":\"airborne\"}").is_err());
    }

    #[test]
    fn summary_layout() {
        let s = stats(3.0);
        let csv = summary_csv(&[("airborne", &s)]);
        let rows: Vec<&str> = csv.lines().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(
            rows,
            [
                "statistic",
                "Average (ppmm)",
                "Maximum (ppmm)",
                "95th Percentile (ppmm)",
                "Variance (ppmm^2)"
            ]
        );
    }
}
