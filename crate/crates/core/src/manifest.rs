//! Tab-separated dataset manifest.
//!
//! ```text
//! #cmf-manifest v1 config_hash=<hex> seed=<u64>
//! tile_id  relative_path  domain  label  region_id  gsd_m  cloud_fraction  split
//! ```
//!
//! Empty `cloud_fraction` means unknown; empty `split` means unassigned.

use std::collections::HashSet;
use std::fs;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use crate::cmft;
use crate::error::{Error, Result};
use crate::synthkit::Tile;
use crate::types::{Domain, Label, Split};

const MAGIC_LINE: &str = "#cmf-manifest v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub tile_id: String,
    pub relative_path: String,
    pub domain: Domain,
    pub label: Label,
    pub region_id: u32,
    pub gsd_m: f64,
    pub cloud_fraction: Option<f64>,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    entries: Vec<TileRecord>,
    pub provenance: Provenance,
}

fn check_record(r: &TileRecord) -> std::result::Result<(), String> {
    if r.tile_id.is_empty() || r.tile_id.chars().any(|c| c.is_whitespace()) {
        return Err(format!("invalid tile_id '{}'", r.tile_id));
    }
    let p = Path::new(&r.relative_path);
    if r.relative_path.is_empty() || !p.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(format!(
            "tile {}: relative_path '{}' must stay inside the dataset directory",
            r.tile_id, r.relative_path
        ));
    }
    if !(r.gsd_m > 0.0 && r.gsd_m.is_finite()) {
        return Err(format!(
            "tile {}: gsd_m {} must be positive",
            r.tile_id, r.gsd_m
        ));
    }
    if let Some(cf) = r.cloud_fraction {
        if !(0.0..=1.0).contains(&cf) {
            return Err(format!(
                "tile {}: cloud_fraction {} outside [0,1]",
                r.tile_id, cf
            ));
        }
    }
    Ok(())
}

impl DatasetManifest {
    /// Builds a manifest, checking that every tile_id is unique and every
    /// record is well formed.
    pub fn new(entries: Vec<TileRecord>, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &entries {
            check_record(r).map_err(Error::Data)?;
            if !seen.insert(r.tile_id.as_str()) {
                return Err(Error::Data(format!("duplicate tile_id {}", r.tile_id)));
            }
        }
        Ok(DatasetManifest {
            entries,
            provenance,
        })
    }

    pub fn entries(&self) -> &[TileRecord] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split_of(&self, tile_id: &str) -> Option<Split> {
        self.entries
            .iter()
            .find(|r| r.tile_id == tile_id)
            .and_then(|r| r.split)
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &TileRecord> {
        self.entries.iter().filter(move |r| r.split == Some(split))
    }

    /// Copy restricted to records for which `keep` holds.
    pub fn filter(&self, keep: impl Fn(&TileRecord) -> bool) -> DatasetManifest {
        DatasetManifest {
            entries: self.entries.iter().filter(|r| keep(r)).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Copy with the split field rewritten by `f`.
    pub fn with_splits(&self, f: impl Fn(&TileRecord) -> Option<Split>) -> DatasetManifest {
        DatasetManifest {
            entries: self
                .entries
                .iter()
                .map(|r| TileRecord {
                    split: f(r),
                    ..r.clone()
                })
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.entries.iter().filter(|r| r.label == label).count()
    }

    pub fn to_tsv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_writer(Vec::new());
        w.write_record([
            "tile_id",
            "relative_path",
            "domain",
            "label",
            "region_id",
            "gsd_m",
            "cloud_fraction",
            "split",
        ])
        .expect("in-memory write");
        for r in &self.entries {
            w.write_record([
                r.tile_id.clone(),
                r.relative_path.clone(),
                r.domain.to_string(),
                r.label.to_string(),
                r.region_id.to_string(),
                r.gsd_m.to_string(),
                r.cloud_fraction.map(|v| v.to_string()).unwrap_or_default(),
                r.split.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("flush")).expect("utf8");
        format!(
            "{} config_hash={} seed={}\n{}",
            MAGIC_LINE, self.provenance.config_hash, self.provenance.seed, body
        )
    }

    pub fn parse(text: &str) -> std::result::Result<DatasetManifest, String> {
        let (first, rest) = text
            .split_once('\n')
            .ok_or("missing manifest header line")?;
        let provenance = parse_magic(first.trim_end_matches('\r'))?;
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(true)
            .from_reader(rest.as_bytes());
        let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
        let want = [
            "tile_id",
            "relative_path",
            "domain",
            "label",
            "region_id",
            "gsd_m",
            "cloud_fraction",
            "split",
        ];
        if headers.iter().ne(want.iter().copied()) {
            return Err(format!("unexpected column header {:?}", headers));
        }
        let mut entries = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| format!("record {}: {}", i + 1, e))?;
            let ctx = |msg: String| format!("record {}: {}", i + 1, msg);
            let field = |k: usize| row.get(k).unwrap_or("");
            let opt = |s: &str| {
                if s.is_empty() {
                    None
                } else {
                    Some(s.to_string())
                }
            };
            let rec = TileRecord {
                tile_id: field(0).to_string(),
                relative_path: field(1).to_string(),
                domain: field(2).parse().map_err(ctx)?,
                label: field(3).parse().map_err(ctx)?,
                region_id: field(4)
                    .parse()
                    .map_err(|e| ctx(format!("region_id: {}", e)))?,
                gsd_m: field(5).parse().map_err(|e| ctx(format!("gsd_m: {}", e)))?,
                cloud_fraction: opt(field(6))
                    .map(|s| s.parse::<f64>())
                    .transpose()
                    .map_err(|e| ctx(format!("cloud_fraction: {}", e)))?,
                split: opt(field(7)).map(|s| s.parse()).transpose().map_err(ctx)?,
            };
            entries.push(rec);
        }
        DatasetManifest::new(entries, provenance).map_err(|e| e.to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<DatasetManifest> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingArtifact(path.to_path_buf()))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        DatasetManifest::parse(&text).map_err(|m| Error::format(path, m))
    }
}

fn parse_magic(line: &str) -> std::result::Result<Provenance, String> {
    let rest = line
        .strip_prefix(MAGIC_LINE)
        .ok_or_else(|| format!("expected '{}' header", MAGIC_LINE))?;
    let mut hash = None;
    let mut seed = None;
    for tok in rest.split_whitespace() {
        match tok.split_once('=') {
            Some(("config_hash", v)) => hash = Some(v.to_string()),
            Some(("seed", v)) => seed = Some(v.parse::<u64>().map_err(|e| format!("seed: {}", e))?),
            _ => return Err(format!("unexpected header token '{}'", tok)),
        }
    }
    Ok(Provenance {
        config_hash: hash.ok_or("header lacks config_hash")?,
        seed: seed.ok_or("header lacks seed")?,
    })
}

/// Reads one tile from disk and attaches its manifest metadata.
pub fn load_tile(root: &Path, rec: &TileRecord) -> Result<Tile> {
    let path = root.join(&rec.relative_path);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArtifact(path))
        }
        Err(e) => return Err(Error::io(&path, e)),
    };
    let (width, height, grid) = cmft::decode(&bytes).map_err(|m| Error::format(&path, m))?;
    Ok(Tile {
        grid,
        width,
        height,
        label: rec.label,
        domain: rec.domain,
        gsd_m: rec.gsd_m,
        region_id: rec.region_id,
        cloud_fraction: rec.cloud_fraction.unwrap_or(f64::NAN),
        scene_id: rec.tile_id.clone(),
        normalized: false,
    })
}
