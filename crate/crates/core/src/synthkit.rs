//! Synthetic CMF scenes: centred plumes, correlated background noise, false
//! enhancements and clouds, rendered at airborne or spaceborne resolution.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmft;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Provenance, TileRecord};
use crate::rng::{rng, sub_seed};
use crate::types::{Domain, Label};

/// Internal rendering resolution for the spaceborne path.
pub const FINE_GSD_M: f64 = 5.0;
/// Mean enhancement of a cloud pixel on top of the background.
pub const CLOUD_PPMM: f64 = 1800.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlumeParams {
    pub peak_ppmm: f64,
    pub sigma_along_m: f64,
    pub sigma_cross_m: f64,
    pub wind_angle_rad: f64,
    pub decay_length_m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FalseKind {
    LinearRoad,
    Blob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalseEnhancementParams {
    pub kind: FalseKind,
    pub amplitude_ppmm: f64,
    pub width_m: f64,
    pub angle_rad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    pub region_id: u32,
    pub domain: Domain,
    pub gsd_m: f64,
    pub extent_px: usize,
    pub has_plume: bool,
    pub plume: Option<PlumeParams>,
    pub false_enh: Option<FalseEnhancementParams>,
    pub cloud_fraction: f64,
    pub noise_sigma_ppmm: f64,
    pub background_mean_ppmm: f64,
    pub seed: u64,
}

/// Row-major double-precision working grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Grid {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} grid needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Maximum over non-NaN pixels (`-inf` when there are none).
    pub fn max(&self) -> f64 {
        self.data
            .iter()
            .filter(|v| !v.is_nan())
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    fn add(&mut self, other: &Grid) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// One CMF tile. Values are ppmm unless `normalized` is set, in which case
/// they are the dimensionless `[0,1]` output of normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub grid: Vec<f32>,
    pub width: usize,
    pub height: usize,
    pub label: Label,
    pub domain: Domain,
    pub gsd_m: f64,
    pub region_id: u32,
    pub cloud_fraction: f64,
    pub scene_id: String,
    pub normalized: bool,
}

impl Tile {
    pub fn max(&self) -> f32 {
        self.grid
            .iter()
            .filter(|v| !v.is_nan())
            .fold(f32::NEG_INFINITY, |a, &b| a.max(b))
    }
}

fn param(msg: String) -> Error {
    Error::Param(msg)
}

fn check_dims(extent_px: usize, gsd_m: f64) -> Result<()> {
    if extent_px < 16 {
        return Err(param(format!("extent_px must be >= 16, got {}", extent_px)));
    }
    if !(gsd_m > 0.0 && gsd_m.is_finite()) {
        return Err(param(format!("gsd_m must be positive, got {}", gsd_m)));
    }
    Ok(())
}

impl PlumeParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(self.peak_ppmm >= 0.0 && self.peak_ppmm.is_finite()) {
            return Err(param(format!(
                "plume peak must be >= 0, got {}",
                self.peak_ppmm
            )));
        }
        if !pos(self.sigma_cross_m) || !pos(self.sigma_along_m) || !pos(self.decay_length_m) {
            return Err(param(
                "plume sigmas and decay length must be positive".into(),
            ));
        }
        if self.sigma_along_m < self.sigma_cross_m {
            return Err(param(format!(
                "sigma_along_m {} < sigma_cross_m {}",
                self.sigma_along_m, self.sigma_cross_m
            )));
        }
        if !(0.0..TAU).contains(&self.wind_angle_rad) {
            return Err(param(format!(
                "wind_angle_rad {} outside [0, 2pi)",
                self.wind_angle_rad
            )));
        }
        Ok(())
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        check_dims(self.extent_px, self.gsd_m)?;
        if self.has_plume != self.plume.is_some() {
            return Err(param(format!(
                "scene {}: has_plume={} disagrees with plume parameters",
                self.scene_id, self.has_plume
            )));
        }
        if let Some(p) = &self.plume {
            p.validate()?;
        }
        if let Some(f) = &self.false_enh {
            if !(f.amplitude_ppmm > 0.0 && f.width_m > 0.0 && f.angle_rad.is_finite()) {
                return Err(param(format!(
                    "scene {}: false enhancement needs positive amplitude and width",
                    self.scene_id
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.cloud_fraction) {
            return Err(param(format!(
                "cloud_fraction {} outside [0,1]",
                self.cloud_fraction
            )));
        }
        if !(self.noise_sigma_ppmm >= 0.0 && self.noise_sigma_ppmm.is_finite()) {
            return Err(param("noise_sigma_ppmm must be >= 0".into()));
        }
        if !(self.background_mean_ppmm >= 0.0 && self.background_mean_ppmm.is_finite()) {
            return Err(param("background_mean_ppmm must be >= 0".into()));
        }
        Ok(())
    }
}

/// Plume field with its source at an arbitrary pixel position (pixel-centre
/// coordinates, so `(c, c)` is the centre of pixel `c`).
fn plume_field_at(
    p: &PlumeParams,
    width: usize,
    height: usize,
    gsd_m: f64,
    center: (f64, f64),
) -> Grid {
    let (cr, cc) = center;
    let (s, c) = p.wind_angle_rad.sin_cos();
    let ia = 1.0 / (2.0 * p.sigma_along_m * p.sigma_along_m);
    let ic = 1.0 / (2.0 * p.sigma_cross_m * p.sigma_cross_m);
    let mut g = Grid::zeros(width, height);
    if p.peak_ppmm == 0.0 {
        return g;
    }
    for r in 0..height {
        let dy = (r as f64 - cr) * gsd_m;
        for q in 0..width {
            let dx = (q as f64 - cc) * gsd_m;
            let u = dx * c + dy * s;
            let w = -dx * s + dy * c;
            let v =
                p.peak_ppmm * (-(u * u * ia) - w * w * ic - u.max(0.0) / p.decay_length_m).exp();
            g.data[r * width + q] = v;
        }
    }
    g
}

/// Anisotropic Gaussian ridge with exponential downwind decay, peaking at the
/// centre pixel `(extent/2, extent/2)`.
pub fn gen_plume_field(p: &PlumeParams, extent_px: usize, gsd_m: f64) -> Result<Grid> {
    check_dims(extent_px, gsd_m)?;
    p.validate()?;
    let c = (extent_px / 2) as f64;
    Ok(plume_field_at(p, extent_px, extent_px, gsd_m, (c, c)))
}

/// One-dimensional Gaussian taps (sigma 1 px) scaled to unit L2 norm, so the
/// separable 2-D smoothing keeps the marginal variance of white noise.
fn smoothing_taps() -> [f64; 7] {
    let mut k = [0.0; 7];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - 3.0;
        *v = (-0.5 * d * d).exp();
    }
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    k.iter_mut().for_each(|v| *v /= norm);
    k
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

fn smooth(src: &[f64], width: usize, height: usize) -> Vec<f64> {
    let k = smoothing_taps();
    let mut tmp = vec![0.0; src.len()];
    for r in 0..height {
        for q in 0..width {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * src[r * width + reflect(q as isize + t as isize - 3, width)];
            }
            tmp[r * width + q] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for r in 0..height {
        for q in 0..width {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * tmp[reflect(r as isize + t as isize - 3, height) * width + q];
            }
            out[r * width + q] = acc;
        }
    }
    out
}

/// Unit-variance spatially correlated noise.
fn correlated_noise(width: usize, height: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let white: Vec<f64> = (0..width * height)
        .map(|_| StandardNormal.sample(&mut r))
        .collect();
    smooth(&white, width, height)
}

/// False-enhancement structure. Its anchor point is offset from the tile
/// centre by a seed-derived distance and direction so it does not sit on the
/// plume source.
fn false_structure(
    f: &FalseEnhancementParams,
    width: usize,
    height: usize,
    gsd_m: f64,
    seed: u64,
) -> Grid {
    let mut r = rng(seed);
    let extent_m = width.min(height) as f64 * gsd_m;
    let dist = r.random_range(0.15..0.35) * extent_m;
    let dir = r.random_range(0.0..TAU);
    let ax = (width as f64 - 1.0) / 2.0 * gsd_m + dist * dir.cos();
    let ay = (height as f64 - 1.0) / 2.0 * gsd_m + dist * dir.sin();
    let sd = f.width_m / 2.0;
    let inv = 1.0 / (2.0 * sd * sd);
    let (s, c) = f.angle_rad.sin_cos();
    let mut g = Grid::zeros(width, height);
    for row in 0..height {
        let y = row as f64 * gsd_m - ay;
        for col in 0..width {
            let x = col as f64 * gsd_m - ax;
            let d2 = match f.kind {
                FalseKind::LinearRoad => {
                    let d = -x * s + y * c;
                    d * d
                }
                FalseKind::Blob => x * x + y * y,
            };
            g.data[row * width + col] = f.amplitude_ppmm * (-d2 * inv).exp();
        }
    }
    g
}

#[derive(PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // Min-heap on priority, ties broken by index for determinism.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

/// Exactly `round(fraction * w * h)` 4-connected pixels grown from a seeded
/// start pixel, in order of noisy distance so the outline is irregular.
pub(crate) fn cloud_mask(width: usize, height: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let n = width * height;
    let target = ((fraction * n as f64).round() as usize).min(n);
    let mut mask = vec![false; n];
    if target == 0 {
        return mask;
    }
    let mut r = rng(sub_seed(seed, "cloud-start"));
    let start = r.random_range(0..n);
    let wobble = correlated_noise(width, height, sub_seed(seed, "cloud-shape"));
    let (sr, sc) = ((start / width) as f64, (start % width) as f64);
    let prio = |i: usize| {
        let (pr, pc) = ((i / width) as f64, (i % width) as f64);
        ((pr - sr).powi(2) + (pc - sc).powi(2)).sqrt() * (1.0 + 0.4 * wobble[i].tanh())
    };
    let mut queued = vec![false; n];
    let mut heap = BinaryHeap::new();
    heap.push(Frontier(0.0, start));
    queued[start] = true;
    let mut taken = 0;
    while let Some(Frontier(_, i)) = heap.pop() {
        mask[i] = true;
        taken += 1;
        if taken == target {
            break;
        }
        let (row, col) = (i / width, i % width);
        let mut push = |j: usize| {
            if !queued[j] {
                queued[j] = true;
                heap.push(Frontier(prio(j), j));
            }
        };
        if row > 0 {
            push(i - width);
        }
        if row + 1 < height {
            push(i + width);
        }
        if col > 0 {
            push(i - 1);
        }
        if col + 1 < width {
            push(i + 1);
        }
    }
    mask
}

fn add_cloud(g: &mut Grid, fraction: f64, seed: u64) {
    let mask = cloud_mask(g.width, g.height, fraction, seed);
    if !mask.iter().any(|&m| m) {
        return;
    }
    let texture = correlated_noise(g.width, g.height, sub_seed(seed, "cloud-texture"));
    for (i, v) in g.data.iter_mut().enumerate() {
        if mask[i] {
            *v += CLOUD_PPMM * (1.0 + 0.15 * texture[i].tanh());
        }
    }
}

/// Instrument noise, mean level and cloud at the resolution of `spec`.
fn noise_and_cloud(spec: &SceneSpec) -> Grid {
    let (w, h) = (spec.extent_px, spec.extent_px);
    let mut g = Grid::zeros(w, h);
    if spec.noise_sigma_ppmm > 0.0 {
        let n = correlated_noise(w, h, sub_seed(spec.seed, "noise"));
        for (v, z) in g.data.iter_mut().zip(n) {
            *v = spec.background_mean_ppmm + spec.noise_sigma_ppmm * z;
        }
    } else {
        g.data
            .iter_mut()
            .for_each(|v| *v = spec.background_mean_ppmm);
    }
    add_cloud(&mut g, spec.cloud_fraction, sub_seed(spec.seed, "cloud"));
    g
}

/// Background of a scene: correlated noise around the mean level, optional
/// false enhancement and the cloud region.
pub fn gen_background(spec: &SceneSpec) -> Result<Grid> {
    spec.validate()?;
    let mut g = noise_and_cloud(spec);
    if let Some(f) = &spec.false_enh {
        let s = false_structure(
            f,
            spec.extent_px,
            spec.extent_px,
            spec.gsd_m,
            sub_seed(spec.seed, "false"),
        );
        g.add(&s);
    }
    Ok(g)
}

/// Block mean over `factor`×`factor` blocks. NaN in a block gives NaN.
pub fn downsample_area_mean(fine: &Grid, factor: usize) -> Result<Grid> {
    if factor == 0 || fine.width % factor != 0 || fine.height % factor != 0 {
        return Err(Error::Shape(format!(
            "factor {} does not divide {}x{}",
            factor, fine.width, fine.height
        )));
    }
    if factor == 1 {
        return Ok(fine.clone());
    }
    let (w, h) = (fine.width / factor, fine.height / factor);
    let mut out = Grid::zeros(w, h);
    let inv = 1.0 / (factor * factor) as f64;
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for fr in r * factor..(r + 1) * factor {
                let row =
                    &fine.data[fr * fine.width + c * factor..fr * fine.width + (c + 1) * factor];
                acc += row.iter().sum::<f64>();
            }
            out.data[r * w + c] = acc * inv;
        }
    }
    Ok(out)
}

/// Renders a scene. Airborne scenes are drawn at their own GSD. Spaceborne
/// scenes draw plume and surface structure at [`FINE_GSD_M`] and area-average
/// them down, then add instrument noise and clouds at the coarse pixel size.
pub fn render_tile(spec: &SceneSpec) -> Result<Tile> {
    spec.validate()?;
    let factor = (spec.gsd_m / FINE_GSD_M).round() as usize;
    let grid = if spec.domain == Domain::Spaceborne && factor > 1 {
        let fe = spec.extent_px * factor;
        let mut structure = Grid::zeros(fe, fe);
        if let Some(p) = &spec.plume {
            // Source at the centre of coarse pixel extent/2.
            let c = ((spec.extent_px / 2) * factor) as f64 + (factor as f64 - 1.0) / 2.0;
            structure.add(&plume_field_at(p, fe, fe, FINE_GSD_M, (c, c)));
        }
        if let Some(f) = &spec.false_enh {
            structure.add(&false_structure(
                f,
                fe,
                fe,
                FINE_GSD_M,
                sub_seed(spec.seed, "false"),
            ));
        }
        let mut g = downsample_area_mean(&structure, factor)?;
        g.add(&noise_and_cloud(spec));
        g
    } else {
        let mut g = gen_background(spec)?;
        if let Some(p) = &spec.plume {
            g.add(&gen_plume_field(p, spec.extent_px, spec.gsd_m)?);
        }
        g
    };
    Ok(Tile {
        grid: grid.data.iter().map(|&v| v as f32).collect(),
        width: spec.extent_px,
        height: spec.extent_px,
        label: Label::from_bool(spec.has_plume),
        domain: spec.domain,
        gsd_m: spec.gsd_m,
        region_id: spec.region_id,
        cloud_fraction: spec.cloud_fraction,
        scene_id: spec.scene_id.clone(),
        normalized: false,
    })
}

/// Inclusive-exclusive sampling range `[lo, hi)`; `lo == hi` is a constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    fn sample<R: Rng>(&self, r: &mut R) -> f64 {
        if self.1 > self.0 {
            r.random_range(self.0..self.1)
        } else {
            self.0
        }
    }

    fn valid(&self) -> bool {
        self.0.is_finite() && self.1.is_finite() && self.1 >= self.0
    }
}

/// Population statistics of one synthetic instrument.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainProfile {
    pub gsd_m: f64,
    pub background_mean_ppmm: Range,
    /// Standard deviation of a per-region offset added to the mean level.
    pub region_offset_ppmm: f64,
    pub noise_sigma_ppmm: Range,
    pub peak_ppmm: Range,
    pub sigma_cross_m: Range,
    /// Ratio sigma_along / sigma_cross.
    pub elongation: Range,
    pub decay_length_m: Range,
    pub false_enh_prob: f64,
    pub false_amplitude_ppmm: Range,
    pub false_width_m: Range,
    /// Probability that a scene carries a cloud, and its fraction range.
    pub cloudy_prob: f64,
    pub cloud_fraction: Range,
}

impl DomainProfile {
    pub fn airborne() -> Self {
        DomainProfile {
            gsd_m: 5.0,
            background_mean_ppmm: Range(40.0, 90.0),
            region_offset_ppmm: 15.0,
            noise_sigma_ppmm: Range(60.0, 110.0),
            peak_ppmm: Range(300.0, 1200.0),
            sigma_cross_m: Range(10.0, 25.0),
            elongation: Range(1.5, 3.0),
            decay_length_m: Range(40.0, 150.0),
            false_enh_prob: 0.25,
            false_amplitude_ppmm: Range(150.0, 500.0),
            false_width_m: Range(8.0, 20.0),
            cloudy_prob: 0.0,
            cloud_fraction: Range(0.0, 0.0),
        }
    }

    pub fn spaceborne() -> Self {
        DomainProfile {
            gsd_m: 60.0,
            background_mean_ppmm: Range(150.0, 200.0),
            region_offset_ppmm: 15.0,
            noise_sigma_ppmm: Range(25.0, 45.0),
            peak_ppmm: Range(100.0, 450.0),
            sigma_cross_m: Range(120.0, 300.0),
            elongation: Range(1.5, 3.0),
            decay_length_m: Range(500.0, 1800.0),
            false_enh_prob: 0.25,
            false_amplitude_ppmm: Range(100.0, 300.0),
            false_width_m: Range(120.0, 300.0),
            cloudy_prob: 0.15,
            cloud_fraction: Range(0.05, 0.6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("background_mean_ppmm", self.background_mean_ppmm),
            ("noise_sigma_ppmm", self.noise_sigma_ppmm),
            ("peak_ppmm", self.peak_ppmm),
            ("sigma_cross_m", self.sigma_cross_m),
            ("elongation", self.elongation),
            ("decay_length_m", self.decay_length_m),
            ("false_amplitude_ppmm", self.false_amplitude_ppmm),
            ("false_width_m", self.false_width_m),
            ("cloud_fraction", self.cloud_fraction),
        ];
        for (name, r) in ranges {
            if !r.valid() {
                return Err(Error::Config(format!(
                    "profile range {} is invalid: {:?}",
                    name, r
                )));
            }
        }
        if self.elongation.0 < 1.0 || self.sigma_cross_m.0 <= 0.0 || self.decay_length_m.0 <= 0.0 {
            return Err(Error::Config(
                "plume shape ranges must be positive, elongation >= 1".into(),
            ));
        }
        if self.false_amplitude_ppmm.0 <= 0.0 || self.false_width_m.0 <= 0.0 {
            return Err(Error::Config(
                "false enhancement ranges must be positive".into(),
            ));
        }
        for (name, p) in [
            ("false_enh_prob", self.false_enh_prob),
            ("cloudy_prob", self.cloudy_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "{} must lie in [0,1], got {}",
                    name, p
                )));
            }
        }
        if self.cloud_fraction.0 < 0.0 || self.cloud_fraction.1 > 1.0 {
            return Err(Error::Config(
                "cloud_fraction range must lie in [0,1]".into(),
            ));
        }
        if !(self.gsd_m > 0.0) || self.region_offset_ppmm < 0.0 {
            return Err(Error::Config(
                "gsd_m must be positive and region offset >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetGenConfig {
    pub domain: Domain,
    pub n_plume: usize,
    pub n_background: usize,
    pub tiles_per_region: usize,
    pub extent_px: usize,
    pub seed: u64,
    pub profile: DomainProfile,
    /// Recorded in the manifest header.
    pub config_hash: String,
}

/// Draws every scene of a dataset. Plume and background scenes are shuffled
/// together before being grouped into regions.
pub fn scene_specs(cfg: &DatasetGenConfig) -> Result<Vec<SceneSpec>> {
    cfg.profile.validate()?;
    if cfg.n_plume + cfg.n_background == 0 || cfg.tiles_per_region == 0 {
        return Err(Error::Config(
            "dataset needs at least one tile and one tile per region".into(),
        ));
    }
    let p = &cfg.profile;
    let mut r = rng(sub_seed(cfg.seed, "scenes"));
    let total = cfg.n_plume + cfg.n_background;
    let mut labels: Vec<bool> = (0..total).map(|i| i < cfg.n_plume).collect();
    for i in (1..total).rev() {
        let j = r.random_range(0..=i);
        labels.swap(i, j);
    }
    let n_regions = total.div_ceil(cfg.tiles_per_region);
    let offsets: Vec<f64> = (0..n_regions)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            p.region_offset_ppmm * z
        })
        .collect();
    let mut specs = Vec::with_capacity(total);
    for (i, has_plume) in labels.into_iter().enumerate() {
        let region = i / cfg.tiles_per_region;
        let plume = if has_plume {
            let sc = p.sigma_cross_m.sample(&mut r);
            Some(PlumeParams {
                peak_ppmm: p.peak_ppmm.sample(&mut r),
                sigma_cross_m: sc,
                sigma_along_m: sc * p.elongation.sample(&mut r),
                wind_angle_rad: r.random_range(0.0..TAU),
                decay_length_m: p.decay_length_m.sample(&mut r),
            })
        } else {
            None
        };
        let false_enh = if r.random_bool(p.false_enh_prob) {
            Some(FalseEnhancementParams {
                kind: if r.random_bool(0.5) {
                    FalseKind::LinearRoad
                } else {
                    FalseKind::Blob
                },
                amplitude_ppmm: p.false_amplitude_ppmm.sample(&mut r),
                width_m: p.false_width_m.sample(&mut r),
                angle_rad: r.random_range(0.0..TAU),
            })
        } else {
            None
        };
        let cloud_fraction = if r.random_bool(p.cloudy_prob) {
            p.cloud_fraction.sample(&mut r)
        } else {
            0.0
        };
        let mean = (p.background_mean_ppmm.sample(&mut r) + offsets[region]).max(0.0);
        specs.push(SceneSpec {
            scene_id: format!("{}-{:05}", cfg.domain, i),
            region_id: region as u32,
            domain: cfg.domain,
            gsd_m: p.gsd_m,
            extent_px: cfg.extent_px,
            has_plume,
            plume,
            false_enh,
            cloud_fraction,
            noise_sigma_ppmm: p.noise_sigma_ppmm.sample(&mut r),
            background_mean_ppmm: mean,
            seed: r.random(),
        });
    }
    Ok(specs)
}

/// Renders a dataset into `out_dir/tiles/*.cmft` and writes
/// `out_dir/manifest.tsv`.
pub fn make_dataset(cfg: &DatasetGenConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let specs = scene_specs(cfg)?;
    let tiles: Vec<Tile> = specs.par_iter().map(render_tile).collect::<Result<_>>()?;
    let tile_dir = out_dir.join("tiles");
    fs::create_dir_all(&tile_dir).map_err(|e| Error::io(&tile_dir, e))?;
    let mut entries = Vec::with_capacity(tiles.len());
    for t in &tiles {
        let rel = format!("tiles/{}.cmft", t.scene_id);
        let path = out_dir.join(&rel);
        fs::write(&path, cmft::encode(t.width, t.height, &t.grid)?)
            .map_err(|e| Error::io(&path, e))?;
        entries.push(TileRecord {
            tile_id: t.scene_id.clone(),
            relative_path: rel,
            domain: t.domain,
            label: t.label,
            region_id: t.region_id,
            gsd_m: t.gsd_m,
            cloud_fraction: Some(t.cloud_fraction),
            split: None,
        });
    }
    let manifest = DatasetManifest::new(
        entries,
        Provenance {
            config_hash: cfg.config_hash.clone(),
            seed: cfg.seed,
        },
    )?;
    manifest.write(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
