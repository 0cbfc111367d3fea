use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::Deserialize;

use super::run::{read_lengths, read_summary, LengthRow, SummaryRow};
use crate::training::smooth;
use crate::{Error, Result};

/// Files written by [`plot`] and the plots skipped for lack of data.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlotReport {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<String>,
}

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

struct Figure {
    file: &'static str,
    title: &'static str,
    x_desc: &'static str,
    y_desc: &'static str,
    series: Vec<Series>,
}

struct Input {
    label: String,
    dir: PathBuf,
    rows: Vec<SummaryRow>,
}

#[derive(Deserialize)]
struct MetricsRow {
    step: usize,
    reward_mean: f64,
}

const REWARD_WINDOW: usize = 20;

fn load_input(path: &Path) -> Result<Input> {
    let file = if path.is_dir() { path.join("summary.csv") } else { path.to_path_buf() };
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let label = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file.display().to_string());
    if !file.is_file() {
        return Err(Error::io(&file, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let rows = read_summary(&file)?;
    Ok(Input { label, dir, rows })
}

/// Mean of `value` over seeds for each (channel, snr), one series per channel.
fn per_channel(input: &Input, suffix: &str, value: impl Fn(&SummaryRow) -> Option<f64>) -> Vec<Series> {
    let mut acc: BTreeMap<String, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for r in &input.rows {
        if let Some(v) = value(r) {
            let e = acc
                .entry(r.channel.clone())
                .or_default()
                .entry(r.snr_db.to_bits())
                .or_insert((r.snr_db, 0.0, 0));
            e.1 += v;
            e.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(channel, cells)| {
            let mut points: Vec<(f64, f64)> = cells.into_values().map(|(x, s, n)| (x, s / n as f64)).collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                name: format!("{} {}{}", input.label, channel, suffix),
                points,
            }
        })
        .collect()
}

fn length_series(input: &Input, rows: &[LengthRow]) -> Vec<Series> {
    let mut acc: BTreeMap<(String, u64), (f64, BTreeMap<usize, (f64, usize)>)> = BTreeMap::new();
    for r in rows {
        let e = acc
            .entry((r.channel.clone(), r.snr_db.to_bits()))
            .or_insert((r.snr_db, BTreeMap::new()));
        let c = e.1.entry(r.length).or_insert((0.0, 0));
        c.0 += r.distill_enc_mean;
        c.1 += 1;
    }
    acc.into_iter()
        .map(|((channel, _), (snr, by_len))| Series {
            name: format!("{} {} {} dB enc", input.label, channel, snr),
            points: by_len.into_iter().map(|(l, (s, n))| (l as f64, s / n as f64)).collect(),
        })
        .collect()
}

fn reward_series(input: &Input) -> Result<Vec<Series>> {
    let mut out = Vec::new();
    let Ok(entries) = fs::read_dir(&input.dir) else {
        return Ok(out);
    };
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed-")))
        .collect();
    dirs.sort();
    for d in dirs {
        let path = d.join("metrics.csv");
        if !path.is_file() {
            continue;
        }
        let mut r = csv::Reader::from_path(&path)?;
        let rows: Vec<MetricsRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        if rows.is_empty() {
            continue;
        }
        let rewards: Vec<f64> = rows.iter().map(|r| r.reward_mean).collect();
        let sm = smooth(&rewards, REWARD_WINDOW);
        out.push(Series {
            name: format!("{} {}", input.label, d.file_name().unwrap_or_default().to_string_lossy()),
            points: rows.iter().zip(sm).map(|(r, v)| (r.step as f64, v)).collect(),
        });
    }
    Ok(out)
}

fn write_series_csv(path: &Path, series: &[Series]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "x", "y"])?;
    for s in series {
        for (x, y) in &s.points {
            w.write_record([s.name.clone(), format!("{x:?}"), format!("{y:?}")])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn bounds(series: &[Series]) -> ((f64, f64), (f64, f64)) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = |lo: f64, hi: f64| {
        if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            let m = 0.05 * (hi - lo);
            (lo - m, hi + m)
        }
    };
    (pad(x0, x1), pad(y0, y1))
}

fn draw_svg(path: &Path, fig: &Figure) -> Result<()> {
    let perr = |e: &dyn std::fmt::Display| Error::Plot(e.to_string());
    let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| perr(&e))?;
    let ((x0, x1), (y0, y1)) = bounds(&fig.series);
    let mut chart = ChartBuilder::on(&root)
        .caption(fig.title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| perr(&e))?;
    chart
        .configure_mesh()
        .x_desc(fig.x_desc)
        .y_desc(fig.y_desc)
        .draw()
        .map_err(|e| perr(&e))?;
    for (i, s) in fig.series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| perr(&e))?
            .label(s.name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(|e| perr(&e))?;
    root.present().map_err(|e| perr(&e))
}

/// Renders WER / MSE / distillation-vs-SNR, distillation-vs-length and
/// smoothed reward curves from run summaries (files or run directories)
/// into `out_dir`, each SVG accompanied by a CSV of its series. Figures
/// without data are skipped with a warning.
pub fn plot(inputs: &[PathBuf], out_dir: &Path) -> Result<PlotReport> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no summary files given".into()));
    }
    let inputs: Vec<Input> = inputs.iter().map(|p| load_input(p)).collect::<Result<_>>()?;
    if inputs.iter().all(|i| i.rows.is_empty()) {
        return Err(Error::InvalidArgument("summaries contain no rows".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut figures = vec![
        Figure {
            file: "wer_vs_snr",
            title: "Word error rate",
            x_desc: "SNR (dB)",
            y_desc: "WER",
            series: inputs.iter().flat_map(|i| per_channel(i, "", |r| r.wer)).collect(),
        },
        Figure {
            file: "mse_vs_snr",
            title: "Image reconstruction MSE",
            x_desc: "SNR (dB)",
            y_desc: "MSE",
            series: inputs.iter().flat_map(|i| per_channel(i, "", |r| r.mse_final)).collect(),
        },
        Figure {
            file: "distill_vs_snr",
            title: "Mean distillation passes",
            x_desc: "SNR (dB)",
            y_desc: "passes",
            series: inputs
                .iter()
                .flat_map(|i| {
                    let mut s = per_channel(i, " enc", |r| r.distill_enc_mean);
                    s.extend(per_channel(i, " dec", |r| r.distill_dec_mean));
                    s
                })
                .collect(),
        },
    ];
    let mut by_length = Vec::new();
    let mut rewards = Vec::new();
    for i in &inputs {
        let lpath = i.dir.join("length_breakdown.csv");
        if lpath.is_file() {
            by_length.extend(length_series(i, &read_lengths(&lpath)?));
        }
        rewards.extend(reward_series(i)?);
    }
    figures.push(Figure {
        file: "distill_vs_length",
        title: "Encoder distillation passes by sentence length",
        x_desc: "length (words)",
        y_desc: "passes",
        series: by_length,
    });
    figures.push(Figure {
        file: "reward",
        title: "Smoothed training reward",
        x_desc: "step",
        y_desc: "reward",
        series: rewards,
    });
    let mut report = PlotReport::default();
    for fig in figures {
        let series: Vec<Series> = fig.series.into_iter().filter(|s| !s.points.is_empty()).collect();
        if series.is_empty() {
            log::warn!("skipping {}: no data in the given summaries", fig.file);
            report.skipped.push(fig.file.to_string());
            continue;
        }
        let fig = Figure { series, ..fig };
        let csv_path = out_dir.join(format!("{}.csv", fig.file));
        write_series_csv(&csv_path, &fig.series)?;
        let svg_path = out_dir.join(format!("{}.svg", fig.file));
        draw_svg(&svg_path, &fig)?;
        report.written.push(svg_path);
        report.written.push(csv_path);
    }
    Ok(report)
}
