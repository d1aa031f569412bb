//! Signed pixelwise differences between a source tile and its translation.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::synthkit::Tile;

pub const DISPLAY_CLIP_PPMM: f64 = 1000.0;

/// `source - translated` in ppmm. Pixels that are NODATA or negative in
/// either input are masked and carry no value.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Option<f64>>,
    pub display_clip_ppmm: f64,
}

impl DifferenceMap {
    pub fn masked_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Value shown on screen: clipped to the display range. Stored values
    /// are never clipped.
    pub fn display_value(&self, i: usize) -> Option<f64> {
        self.values[i].map(|v| v.clamp(-self.display_clip_ppmm, self.display_clip_ppmm))
    }

    pub fn mean_difference(&self) -> Option<f64> {
        let vals: Vec<f64> = self.values.iter().flatten().copied().collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Diverging palette: red where the source is higher, blue where it is
    /// lower, white at zero and gray for masked pixels.
    pub fn to_rgb(&self) -> RgbImage {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in img.pixels_mut().enumerate() {
            *px = match self.display_value(i) {
                None => Rgb([128, 128, 128]),
                Some(v) => {
                    let t = (v.abs() / self.display_clip_ppmm).min(1.0);
                    let fade = (255.0 * (1.0 - t)).round() as u8;
                    if v >= 0.0 {
                        Rgb([255, fade, fade])
                    } else {
                        Rgb([fade, fade, 255])
                    }
                }
            };
        }
        img
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb()
            .write_to(&mut out, ImageFormat::Png)
            .expect("in-memory PNG encoding");
        out.into_inner()
    }
}

fn usable(v: f32) -> bool {
    !v.is_nan() && v >= 0.0
}

pub fn difference_map(source: &Tile, translated: &Tile, display_clip_ppmm: f64) -> Result<DifferenceMap> {
    if source.width != translated.width || source.height != translated.height {
        return Err(Error::Shape(format!(
            "difference map needs equal shapes, got {}x{} and {}x{}",
            source.width, source.height, translated.width, translated.height
        )));
    }
    if source.normalized || translated.normalized {
        return Err(Error::Usage(
            "difference maps are computed on de-normalized (ppmm) tiles".into(),
        ));
    }
    let values = source
        .grid
        .iter()
        .zip(&translated.grid)
        .map(|(&s, &t)| (usable(s) && usable(t)).then(|| s as f64 - t as f64))
        .collect();
    Ok(DifferenceMap {
        width: source.width,
        height: source.height,
        values,
        display_clip_ppmm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Domain, Label};

    fn tile(grid: Vec<f32>) -> Tile {
        Tile {
            width: grid.len(),
            height: 1,
            grid,
            label: Label::Plume,
            domain: Domain::Spaceborne,
            gsd_m: 60.0,
            region_id: 0,
            cloud_fraction: 0.0,
            scene_id: "s".into(),
            normalized: false,
        }
    }

    #[test]
    fn identical_tiles_give_zero_and_no_mask() {
        let t = tile(vec![0.0, 10.0, 250.5]);
        let d = difference_map(&t, &t, DISPLAY_CLIP_PPMM).unwrap();
        assert_eq!(d.values, vec![Some(0.0); 3]);
        assert_eq!(d.masked_count(), 0);
    }

    #[test]
    fn negative_or_nodata_in_either_input_masks() {
        let s = tile(vec![-5.0, 100.0, f32::NAN, 100.0]);
        let t = tile(vec![3000.0, -1.0, 5.0, 40.0]);
        let d = difference_map(&s, &t, DISPLAY_CLIP_PPMM).unwrap();
        assert_eq!(d.values, vec![None, None, None, Some(60.0)]);
        let d2 = difference_map(&t, &s, DISPLAY_CLIP_PPMM).unwrap();
        assert_eq!(d2.masked_count(), 3);
    }

    #[test]
    fn display_clips_but_storage_does_not() {
        let d = difference_map(&tile(vec![200.0]), &tile(vec![1500.0]), DISPLAY_CLIP_PPMM).unwrap();
        assert_eq!(d.values[0], Some(-1300.0));
        assert_eq!(d.display_value(0), Some(-1000.0));
    }

    #[test]
    fn palette_direction() {
        let d = difference_map(&tile(vec![900.0, 0.0, 0.0, -1.0]), &tile(vec![0.0, 900.0, 0.0, 0.0]), 1000.0).unwrap();
        let img = d.to_rgb();
        let px: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
        assert_eq!(px[0][0], 255);
        assert!(px[0][2] < 50);
        assert_eq!(px[1][2], 255);
        assert!(px[1][0] < 50);
        assert_eq!(px[2], [255, 255, 255]);
        assert_eq!(px[3], [128, 128, 128]);
        assert_eq!(&d.to_png()[1..4], b"PNG");
    }

    #[test]
    fn shape_and_unit_checks() {
        assert!(matches!(
            difference_map(&tile(vec![1.0]), &tile(vec![1.0, 2.0]), 1000.0),
            Err(Error::Shape(_))
        ));
        let mut n = tile(vec![0.5]);
        n.normalized = true;
        assert!(matches!(difference_map(&n, &tile(vec![1.0]), 1000.0), Err(Error::Usage(_))));
    }
}
