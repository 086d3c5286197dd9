use std::path::Path;

use bilearn::detect::{
    classify_noise, linear_grid, precision_recall_f1, sweep_csv, threshold_sweep, DetectionMetrics, NoiseMask,
};
use bilearn::reweight::estimate_noise_ratio;
use bilearn::train::{artifacts, read_probs_final};
use plotters::prelude::*;
use serde_json::json;

use crate::output::{guard_overwrite, require, write, Failure};

pub const DETECT_JSON: &str = "detect.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_SVG: &str = "sweep_f1.svg";

type Metric = fn(&DetectionMetrics) -> f64;

/// Negative-head probabilities on the noisy labels and, when every sample
/// carries a clean label, the true noise mask.
pub struct Dump {
    pub neg_on_noisy: Vec<f64>,
    pub truth: Option<NoiseMask>,
}

pub fn load_dump(run_dir: &Path) -> Result<Dump, Failure> {
    let path = run_dir.join(artifacts::PROBS_FINAL);
    require(&path, "probability dump")?;
    let records = read_probs_final(&path)?;
    let truth = records
        .iter()
        .map(|r| r.clean_label.map(|y| y != r.noisy_label))
        .collect::<Option<Vec<bool>>>()
        .map(NoiseMask::new);
    Ok(Dump {
        neg_on_noisy: records.iter().map(|r| r.neg_prob_on_noisy).collect(),
        truth,
    })
}

fn metrics_json(m: &DetectionMetrics) -> serde_json::Value {
    serde_json::to_value(m).expect("metrics serialise")
}

pub fn cmd_detect(run_dir: &Path, h: f64, force: bool) -> Result<(), Failure> {
    let out = run_dir.join(DETECT_JSON);
    guard_overwrite(std::slice::from_ref(&out), force)?;
    let dump = load_dump(run_dir)?;
    let flagged = classify_noise(&dump.neg_on_noisy, h)?;
    let r = estimate_noise_ratio(&dump.neg_on_noisy, h)?;
    println!(
        "h = {h}: {} of {} samples flagged noisy (r = {r:.4})",
        flagged.count(),
        flagged.len()
    );
    let mut report = json!({
        "h": h,
        "flagged": flagged.count(),
        "total": flagged.len(),
        "noise_ratio": r,
    });
    if let Some(truth) = &dump.truth {
        let m = precision_recall_f1(&flagged, truth)?;
        println!("precision {:.4}  recall {:.4}  f1 {:.4}", m.precision, m.recall, m.f1);
        report["metrics"] = metrics_json(&m);
    }
    write(&out, serde_json::to_string_pretty(&report).expect("json") + "\n")
}

pub fn cmd_sweep(run_dir: &Path, h_min: f64, h_max: f64, steps: usize, force: bool) -> Result<(), Failure> {
    let csv = run_dir.join(SWEEP_CSV);
    let svg = run_dir.join(SWEEP_SVG);
    guard_overwrite(&[csv.clone(), svg.clone()], force)?;
    let grid = linear_grid(h_min, h_max, steps)?;
    let dump = load_dump(run_dir)?;
    let truth = dump
        .truth
        .ok_or_else(|| Failure::usage("sweep needs clean labels, and this run has none"))?;
    let rows = threshold_sweep(&dump.neg_on_noisy, &truth, &grid)?;
    write(&csv, sweep_csv(&rows))?;
    plot_sweep(&svg, &rows).map_err(|e| Failure::runtime(format!("plotting {}: {e}", svg.display())))?;
    for (h, m) in &rows {
        println!(
            "h {h:.3}  precision {:.4}  recall {:.4}  f1 {:.4}",
            m.precision, m.recall, m.f1
        );
    }
    Ok(())
}

fn plot_sweep(path: &Path, rows: &[(f64, DetectionMetrics)]) -> Result<(), Box<dyn std::error::Error>> {
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE)?;
    let lo = rows.first().map_or(0.0, |r| r.0);
    let hi = rows.last().map_or(1.0, |r| r.0);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.05, hi + 0.05) };
    let mut chart = ChartBuilder::on(&root)
        .caption("Detection vs threshold", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(lo..hi, 0.0..1.02)?;
    chart.configure_mesh().x_desc("h").y_desc("score").draw()?;
    let series: [(&str, RGBColor, Metric); 3] = [
        ("F1", BLUE, |m| m.f1),
        ("precision", GREEN, |m| m.precision),
        ("recall", RED, |m| m.recall),
    ];
    for (name, color, get) in series {
        chart
            .draw_series(LineSeries::new(
                rows.iter().map(|(h, m)| (*h, get(m))),
                color.stroke_width(2),
            ))?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart.draw_series(rows.iter().map(|(h, m)| Circle::new((*h, get(m)), 3, color.filled())))?;
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}
