//! Tables, CSV writers and SVG charts for the report bundle.

use std::fs;
use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{FractionSweep, UnfreezeSweep};
use crate::classifier::ModelCheckpoint;
use crate::data::TileSet;
use crate::error::{Error, Result};
use crate::metrics::EvalResult;
use crate::translation::{LossRecord, TrackRecord};

/// Positive-class F1 of every model on every test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<EvalResult>>,
    /// Column holding each row's in-domain test set, if any.
    pub diagonal: Vec<Option<usize>>,
}

impl BaselineMatrix {
    pub fn f1(&self, row: usize, col: usize) -> f64 {
        self.cells[row][col].plume.f1
    }

    /// Rows whose in-domain cell is the row maximum.
    pub fn diagonal_dominance(&self) -> usize {
        self.diagonal
            .iter()
            .enumerate()
            .filter(|(r, d)| {
                d.is_some_and(|c| (0..self.columns.len()).all(|j| self.f1(*r, c) >= self.f1(*r, j)))
            })
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model", "dataset", "in_domain", "plume_f1", "macro_f1", "plume_precision",
            "plume_recall", "tp", "fp", "fn", "tn",
        ])
        .expect("in-memory csv");
        for (r, row) in self.rows.iter().enumerate() {
            for (c, col) in self.columns.iter().enumerate() {
                let e = &self.cells[r][c];
                w.write_record([
                    row.clone(),
                    col.clone(),
                    (self.diagonal[r] == Some(c)).to_string(),
                    fmt(e.plume.f1),
                    fmt(e.macro_f1()),
                    fmt(e.plume.precision),
                    fmt(e.plume.recall),
                    e.tp.to_string(),
                    e.fp.to_string(),
                    e.fn_.to_string(),
                    e.tn.to_string(),
                ])
                .expect("in-memory csv");
            }
        }
        into_string(w)
    }
}

/// Evaluates each model on each test set. Models must carry the statistics
/// of the instrument they were trained on, and every test set must be
/// normalized with its own instrument's statistics.
pub fn run_baseline_matrix(
    models: &[(&str, &ModelCheckpoint)],
    datasets: &[(&str, &TileSet)],
) -> Result<BaselineMatrix> {
    for (tag, m) in models {
        if m.norm.instrument != m.domain {
            return Err(Error::Config(format!(
                "model {} was trained on {} data but carries {} normalization statistics",
                tag, m.domain, m.norm.instrument
            )));
        }
    }
    for (tag, d) in datasets {
        if d.norm_instrument != d.domain {
            return Err(Error::Config(format!(
                "test set {} holds {} tiles normalized with {} statistics",
                tag, d.domain, d.norm_instrument
            )));
        }
    }
    let mut cells = Vec::with_capacity(models.len());
    for (_, m) in models {
        let row = datasets
            .iter()
            .map(|(_, d)| crate::adaptation::evaluate_on(&m.model, d))
            .collect::<Result<Vec<_>>>()?;
        cells.push(row);
    }
    Ok(BaselineMatrix {
        rows: models.iter().map(|(t, _)| t.to_string()).collect(),
        columns: datasets.iter().map(|(t, _)| t.to_string()).collect(),
        diagonal: models
            .iter()
            .map(|(_, m)| datasets.iter().position(|(_, d)| d.domain == m.domain))
            .collect(),
        cells,
    })
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{:.6}", v)
}

pub(crate) fn into_string(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

pub fn unfreeze_csv(s: &UnfreezeSweep) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n_unfrozen_blocks", "trainable_params", "best_epoch", "precision", "recall", "f1", "macro_f1"])
        .expect("in-memory csv");
    for p in &s.points {
        w.write_record([
            p.n_unfrozen_blocks.to_string(),
            p.trainable_params.to_string(),
            p.best_epoch.to_string(),
            fmt(p.test.plume.precision),
            fmt(p.test.plume.recall),
            fmt(p.test.plume.f1),
            fmt(p.test.macro_f1()),
        ])
        .expect("in-memory csv");
    }
    into_string(w)
}

pub fn fraction_csv(s: &FractionSweep) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fraction", "repeats", "skipped", "mean_f1", "min_f1", "max_f1", "mean_precision", "mean_recall"])
        .expect("in-memory csv");
    for p in &s.points {
        let n = p.runs.len().max(1) as f64;
        w.write_record([
            p.fraction.to_string(),
            p.runs.len().to_string(),
            p.skipped.len().to_string(),
            fmt(p.mean_f1()),
            fmt(p.min_f1()),
            fmt(p.max_f1()),
            fmt(p.runs.iter().map(|r| r.plume.precision).sum::<f64>() / n),
            fmt(p.runs.iter().map(|r| r.plume.recall).sum::<f64>() / n),
        ])
        .expect("in-memory csv");
    }
    into_string(w)
}

pub fn tracking_csv(t: &[TrackRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "epoch", "air_to_space_f1", "air_to_space_macro_f1", "air_to_space_precision", "air_to_space_recall",
        "space_to_air_f1", "space_to_air_macro_f1", "space_to_air_precision", "space_to_air_recall",
    ])
    .expect("in-memory csv");
    for r in t {
        let (a, s) = (&r.air_to_space, &r.space_to_air);
        w.write_record([
            r.epoch.to_string(),
            fmt(a.plume.f1),
            fmt(a.macro_f1()),
            fmt(a.plume.precision),
            fmt(a.plume.recall),
            fmt(s.plume.f1),
            fmt(s.macro_f1()),
            fmt(s.plume.precision),
            fmt(s.plume.recall),
        ])
        .expect("in-memory csv");
    }
    into_string(w)
}

pub fn losses_csv(l: &[LossRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "d_airborne", "d_spaceborne", "g_adversarial", "cycle"])
        .expect("in-memory csv");
    for r in l {
        w.write_record([
            r.epoch.to_string(),
            fmt(r.d_airborne),
            fmt(r.d_spaceborne),
            fmt(r.g_adversarial),
            fmt(r.cycle),
        ])
        .expect("in-memory csv");
    }
    into_string(w)
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Min/max whiskers per point, when available.
    pub spread: Option<Vec<(f64, f64)>>,
}

pub struct Chart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series>,
    /// Horizontal reference lines.
    pub references: Vec<(String, f64)>,
}

const PALETTE: [RGBColor; 4] = [RGBColor(31, 119, 180), RGBColor(214, 39, 40), RGBColor(44, 160, 44), RGBColor(148, 103, 189)];

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::format(path, format!("plot: {}", e))
}

/// Renders `chart` as an SVG file with a [0, 1] y axis.
pub fn write_chart(path: &Path, chart: &Chart) -> Result<()> {
    let xs = chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 440)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
        let mut c = ChartBuilder::on(&root)
            .caption(chart.title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(lo..hi, 0f64..1.02f64)
            .map_err(|e| plot_err(path, e))?;
        c.configure_mesh()
            .x_desc(chart.x_label)
            .y_desc(chart.y_label)
            .draw()
            .map_err(|e| plot_err(path, e))?;
        for (i, s) in chart.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            c.draw_series(LineSeries::new(s.points.clone(), color.stroke_width(2)))
                .map_err(|e| plot_err(path, e))?
                .label(s.name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
            c.draw_series(s.points.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(|e| plot_err(path, e))?;
            if let Some(spread) = &s.spread {
                c.draw_series(
                    s.points
                        .iter()
                        .zip(spread)
                        .map(|(&(x, _), &(a, b))| PathElement::new(vec![(x, a), (x, b)], color)),
                )
                .map_err(|e| plot_err(path, e))?;
            }
        }
        for (i, (name, y)) in chart.references.iter().enumerate() {
            let color = RGBColor(90, 90, 90).mix(if i == 0 { 0.9 } else { 0.5 });
            c.draw_series(DashedLineSeries::new(vec![(lo, *y), (hi, *y)], 6, 4, color.stroke_width(1)))
                .map_err(|e| plot_err(path, e))?
                .label(format!("{} ({:.3})", name, y))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
        }
        c.configure_series_labels()
            .position(SeriesLabelPosition::LowerRight)
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(path, e))?;
        root.present().map_err(|e| plot_err(path, e))?;
    }
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}
