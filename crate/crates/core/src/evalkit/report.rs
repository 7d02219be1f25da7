use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AblationTable, MetricReport, SweepReport};
use crate::error::{Error, Result};

/// One CSV/JSONL line: a scene of a report, or its mean (`scene_id` "mean").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub scene_id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_interp: f64,
    pub psnr_recon: f64,
    pub cross_view: Option<f64>,
    pub flicker: Option<f64>,
    pub seconds: f64,
}

fn rows(reports: &[MetricReport]) -> Vec<MetricRow> {
    let mut out = Vec::new();
    for r in reports {
        for s in &r.scenes {
            out.push(MetricRow {
                label: r.label.clone(),
                scene_id: s.scene_id.clone(),
                psnr: s.psnr,
                ssim: s.ssim,
                psnr_interp: s.psnr_interp,
                psnr_recon: s.psnr_recon,
                cross_view: s.cross_view,
                flicker: s.flicker,
                seconds: s.seconds,
            });
        }
        let a = &r.aggregate;
        out.push(MetricRow {
            label: r.label.clone(),
            scene_id: "mean".into(),
            psnr: a.psnr,
            ssim: a.ssim,
            psnr_interp: a.psnr_interp,
            psnr_recon: a.psnr_recon,
            cross_view: a.cross_view,
            flicker: a.flicker,
            seconds: a.seconds,
        });
    }
    out
}

fn csv_bytes<T: Serialize>(path: &Path, items: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for it in items {
        w.serialize(it).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    }
    w.into_inner().map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn jsonl_bytes<T: Serialize>(path: &Path, items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for it in items {
        out.extend(serde_json::to_vec(it).map_err(|e| Error::json(path, e))?);
        out.push(b'\n');
    }
    Ok(out)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Schema {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    step: u64,
    psnr: f64,
    ssim: f64,
    flicker: Option<f64>,
    best: bool,
}

#[derive(Debug, Clone, Serialize)]
struct AblationCsvRow {
    variant: String,
    seeds: usize,
    psnr: f64,
    ssim: f64,
    psnr_interp: f64,
    psnr_recon: f64,
    cross_view: Option<f64>,
    flicker: Option<f64>,
}

/// Three stacked panels (PSNR, SSIM, flicker) against fine-tuning steps,
/// one point per mark, with the best mark circled.
fn sweep_svg(sweep: &SweepReport) -> std::result::Result<String, String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (640, 720)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| e.to_string())?;
        let panels = root.split_evenly((3, 1));
        let xs: Vec<f64> = sweep.points.iter().map(|p| p.step as f64).collect();
        let (x0, x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let pad = ((x1 - x0) * 0.05).max(1.0);
        let series: [(&str, Vec<f64>); 3] = [
            ("PSNR (dB)", sweep.points.iter().map(|p| p.psnr).collect()),
            ("SSIM", sweep.points.iter().map(|p| p.ssim).collect()),
            ("flicker", sweep.points.iter().map(|p| p.flicker.unwrap_or(f64::NAN)).collect()),
        ];
        for (area, (name, ys)) in panels.iter().zip(series) {
            let finite: Vec<f64> = ys.iter().copied().filter(|y| y.is_finite()).collect();
            let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
            let (lo, hi) = if finite.is_empty() { (0.0, 1.0) } else { (lo, hi) };
            let ypad = ((hi - lo) * 0.1).max(1e-3);
            let mut chart = ChartBuilder::on(area)
                .margin(10)
                .caption(name, ("sans-serif", 16))
                .x_label_area_size(30)
                .y_label_area_size(60)
                .build_cartesian_2d(x0 - pad..x1 + pad, lo - ypad..hi + ypad)
                .map_err(|e| e.to_string())?;
            chart
                .configure_mesh()
                .x_desc("fine-tuning steps")
                .draw()
                .map_err(|e| e.to_string())?;
            let pts: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).filter(|(_, y)| y.is_finite()).collect();
            chart.draw_series(LineSeries::new(pts.clone(), &BLUE)).map_err(|e| e.to_string())?;
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))
                .map_err(|e| e.to_string())?;
            if let Some((&bx, &by)) = xs.get(sweep.best).zip(ys.get(sweep.best)).filter(|(_, y)| y.is_finite()) {
                chart
                    .draw_series(std::iter::once(Circle::new((bx, by), 7, RED.stroke_width(2))))
                    .map_err(|e| e.to_string())?;
            }
        }
        root.present().map_err(|e| e.to_string())?;
    }
    Ok(svg)
}

/// Everything a report directory is generated from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub reports: Vec<MetricReport>,
    pub sweep: Option<SweepReport>,
    pub ablation: Option<AblationTable>,
}

/// Paths written by [`emit_report`] and a digest over their contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub files: Vec<PathBuf>,
    pub digest: String,
}

/// Write `metrics.csv`, `metrics.jsonl` and, when given, `sweep.csv`,
/// `sweep.svg`, `ablation.csv` and `ablation.json` under `out`, plus
/// `digest.txt` holding the SHA-256 over the other files in name order.
pub fn emit_report(out: &Path, reports: &[MetricReport], sweep: Option<&SweepReport>, ablation: Option<&AblationTable>) -> Result<ReportFiles> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mrows = rows(reports);
    files.push(("metrics.csv".into(), csv_bytes(&out.join("metrics.csv"), &mrows)?));
    files.push(("metrics.jsonl".into(), jsonl_bytes(&out.join("metrics.jsonl"), &mrows)?));
    if let Some(sw) = sweep {
        let srows: Vec<SweepRow> = sw
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| SweepRow {
                step: p.step,
                psnr: p.psnr,
                ssim: p.ssim,
                flicker: p.flicker,
                best: i == sw.best,
            })
            .collect();
        files.push(("sweep.csv".into(), csv_bytes(&out.join("sweep.csv"), &srows)?));
        if !sw.points.is_empty() {
            let svg = sweep_svg(sw).map_err(Error::Plot)?;
            files.push(("sweep.svg".into(), svg.into_bytes()));
        }
    }
    if let Some(ab) = ablation {
        let arows: Vec<AblationCsvRow> = ab
            .rows
            .iter()
            .map(|r| AblationCsvRow {
                variant: r.label.clone(),
                seeds: r.seeds.len(),
                psnr: r.mean.psnr,
                ssim: r.mean.ssim,
                psnr_interp: r.mean.psnr_interp,
                psnr_recon: r.mean.psnr_recon,
                cross_view: r.mean.cross_view,
                flicker: r.mean.flicker,
            })
            .collect();
        files.push(("ablation.csv".into(), csv_bytes(&out.join("ablation.csv"), &arows)?));
        let mut json = serde_json::to_vec_pretty(ab).map_err(|e| Error::json(out.join("ablation.json"), e))?;
        json.push(b'\n');
        files.push(("ablation.json".into(), json));
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    let mut h = Sha256::new();
    let mut paths = Vec::new();
    for (name, bytes) in &files {
        let p = out.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
        paths.push(p);
    }
    let digest = hex::encode(h.finalize());
    let dp = out.join("digest.txt");
    fs::write(&dp, format!("{digest}\n")).map_err(|e| Error::io(&dp, e))?;
    paths.push(dp);
    Ok(ReportFiles { files: paths, digest })
}
