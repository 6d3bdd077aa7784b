//! Persistence: the flat per-interaction CSV, summary reports and a small
//! mean ± SE chart.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::stats::Summary;
use super::{HarnessError, InteractionRecord, Result};
use crate::humans::HumanKind;
use crate::influence::ControllerKind;
use crate::world::EnvKind;

pub const CSV_HEADER: &str = "experiment_id,seed,env,controller,human,interaction,lane_progress,reverse_time,yielded,robot_return,human_return,belief_h0,belief_h1";

/// One CSV line: an interaction record without its trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub experiment_id: String,
    pub seed: u64,
    pub env: EnvKind,
    pub controller: ControllerKind,
    pub human: HumanKind,
    pub interaction: usize,
    pub lane_progress: f64,
    pub reverse_time: f64,
    pub yielded: bool,
    pub robot_return: f64,
    pub human_return: f64,
    pub belief_h0: Option<f64>,
    pub belief_h1: Option<f64>,
}

impl From<&InteractionRecord> for RecordRow {
    fn from(r: &InteractionRecord) -> RecordRow {
        let b = |i: usize| r.belief.as_ref().and_then(|b| b.get(i).copied());
        RecordRow {
            experiment_id: r.experiment_id.clone(),
            seed: r.seed,
            env: r.env,
            controller: r.controller,
            human: r.human,
            interaction: r.interaction,
            lane_progress: r.metrics.lane_progress,
            reverse_time: r.metrics.reverse_time,
            yielded: r.metrics.yielded,
            robot_return: r.robot_return,
            human_return: r.human_return,
            belief_h0: b(0),
            belief_h1: b(1),
        }
    }
}

pub fn rows(records: &[InteractionRecord]) -> Vec<RecordRow> {
    records.iter().map(RecordRow::from).collect()
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Renders rows as CSV text (header always present).
pub fn csv_string(rows: &[RecordRow]) -> String {
    let mut out = String::with_capacity(CSV_HEADER.len() + 1 + rows.len() * 96);
    out.push_str(CSV_HEADER);
    out.push('\n');
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize to csv");
    }
    let body = w.into_inner().expect("in-memory writer");
    out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    out
}

pub fn write_rows(rows: &[RecordRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::write(path, csv_string(rows)).map_err(|e| HarnessError::io(path, e))
}

pub fn export_csv(records: &[InteractionRecord], path: &Path) -> Result<()> {
    write_rows(&rows(records), path)
}

pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<RecordRow>> {
    let header = text.lines().next().unwrap_or_default();
    if header != CSV_HEADER {
        return Err(format_err(path, format!("unexpected header `{header}`")));
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize()
        .map(|r| r.map_err(|e| format_err(path, e)))
        .collect()
}

pub fn load_csv(path: &Path) -> Result<Vec<RecordRow>> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_csv(&text, path)
}

/// Writes `<stem>.json` and `<stem>.txt`, plus `<stem>.png` when `chart` is
/// set. Returns the files written.
pub fn export_summary(summary: &Summary, stem: &Path, chart: bool) -> Result<Vec<PathBuf>> {
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let json = stem.with_extension("json");
    let text = serde_json::to_string_pretty(summary).map_err(|e| format_err(&json, e))?;
    fs::write(&json, text + "\n").map_err(|e| HarnessError::io(&json, e))?;
    let txt = stem.with_extension("txt");
    fs::write(&txt, summary.to_string()).map_err(|e| HarnessError::io(&txt, e))?;
    let mut written = vec![json, txt];
    if chart {
        let png = stem.with_extension("png");
        render_chart(summary, 640, 360)
            .save(&png)
            .map_err(|e| format_err(&png, e))?;
        written.push(png);
    }
    Ok(written)
}

const MARGIN: u32 = 24;

/// Mean per interaction index as a dark line over a light ±SE band.
pub fn render_chart(summary: &Summary, width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let pts = &summary.per_interaction;
    if pts.is_empty() || width <= 2 * MARGIN || height <= 2 * MARGIN {
        return img;
    }
    let lo = pts.iter().map(|m| m.mean - m.se).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|m| m.mean + m.se).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = ((width - 2 * MARGIN) as f64, (height - 2 * MARGIN) as f64);
    let x_of = |i: usize| MARGIN as f64 + w * i as f64 / (pts.len().max(2) - 1) as f64;
    let y_of = |v: f64| MARGIN as f64 + h * (1.0 - (v - lo) / span);

    for (x, y) in [(MARGIN, height - MARGIN), (MARGIN, MARGIN)] {
        line(&mut img, (MARGIN as f64, (height - MARGIN) as f64), (x as f64, y as f64), Rgb([0, 0, 0]));
    }
    line(
        &mut img,
        (MARGIN as f64, (height - MARGIN) as f64),
        ((width - MARGIN) as f64, (height - MARGIN) as f64),
        Rgb([0, 0, 0]),
    );
    for (i, m) in pts.iter().enumerate() {
        let x = x_of(i);
        line(&mut img, (x, y_of(m.mean - m.se)), (x, y_of(m.mean + m.se)), Rgb([170, 190, 235]));
    }
    for (i, pair) in pts.windows(2).enumerate() {
        line(&mut img, (x_of(i), y_of(pair[0].mean)), (x_of(i + 1), y_of(pair[1].mean)), Rgb([20, 50, 150]));
    }
    img
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}
