use std::fmt::Write as _;
use std::path::Path;

use bilearn::detect::{auc_low_score_noisy, classify_noise, precision_recall_f1};
use bilearn::train::{artifacts, read_metrics, EpochReport, RunManifest, RunStatus, TrainConfig};
use plotters::prelude::*;

use crate::detect::load_dump;
use crate::output::{guard_overwrite, require, write, Failure};

pub const REPORT_DIR: &str = "report";
pub const HISTOGRAM_SVG: &str = "neg_prob_hist.svg";
pub const CURVES_SVG: &str = "curves.svg";
pub const SUMMARY_MD: &str = "summary.md";

const BINS: usize = 20;

type Column = fn(&EpochReport) -> f64;
type PlotResult = Result<(), Box<dyn std::error::Error>>;

fn plot_error(path: &Path) -> impl Fn(Box<dyn std::error::Error>) -> Failure + '_ {
    move |e| Failure::runtime(format!("plotting {}: {e}", path.display()))
}

pub fn cmd_report(run_dir: &Path, force: bool) -> Result<(), Failure> {
    require(&run_dir.join(artifacts::RUN_MANIFEST), "run manifest")?;
    let manifest = RunManifest::read(run_dir)?;
    if manifest.status != RunStatus::Complete {
        return Err(Failure::runtime(format!(
            "run stopped after {} epochs; resume it before reporting",
            manifest.epochs_completed
        )));
    }
    let missing = manifest.missing(run_dir);
    if !missing.is_empty() {
        return Err(Failure::runtime(format!("run directory is missing {missing:?}")));
    }
    let out_dir = run_dir.join(REPORT_DIR);
    let outputs = [HISTOGRAM_SVG, CURVES_SVG, SUMMARY_MD].map(|f| out_dir.join(f));
    guard_overwrite(&outputs, force)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Failure::runtime(format!("creating {}: {e}", out_dir.display())))?;

    let snapshot = std::fs::read_to_string(run_dir.join(artifacts::CONFIG_SNAPSHOT))
        .map_err(|e| Failure::runtime(format!("reading config snapshot: {e}")))?;
    let cfg = TrainConfig::from_toml(&snapshot, &[])?;
    let metrics = read_metrics(&run_dir.join(artifacts::METRICS))?;
    let dump = load_dump(run_dir)?;

    plot_histogram(&outputs[0], &dump.neg_on_noisy, dump.truth.as_ref().map(|t| t.flags()))
        .map_err(plot_error(&outputs[0]))?;
    plot_curves(&outputs[1], &metrics).map_err(plot_error(&outputs[1]))?;

    let mut md = String::new();
    writeln!(md, "# Run `{}`\n", manifest.name).unwrap();
    writeln!(
        md,
        "Objective `{:?}`, backbone `{:?}`, seed {}, {} epochs ({} warm-up).\n",
        cfg.objective, cfg.model.backbone, cfg.seed, manifest.epochs_completed, cfg.warmup_epochs
    )
    .unwrap();
    let flagged = classify_noise(&dump.neg_on_noisy, cfg.threshold)?;
    writeln!(md, "## Detection at h = {}\n", cfg.threshold).unwrap();
    writeln!(md, "- flagged noisy: {} of {}", flagged.count(), flagged.len()).unwrap();
    if let Some(truth) = &dump.truth {
        let m = precision_recall_f1(&flagged, truth)?;
        writeln!(md, "- truly noisy: {}", truth.count()).unwrap();
        writeln!(
            md,
            "- precision {:.4}, recall {:.4}, F1 {:.4}",
            m.precision, m.recall, m.f1
        )
        .unwrap();
        if let Some(auc) = auc_low_score_noisy(&dump.neg_on_noisy, truth)? {
            writeln!(md, "- AUC (low probability = noisy): {auc:.4}").unwrap();
        }
    }
    writeln!(
        md,
        "\n![negative-head probability]({HISTOGRAM_SVG})\n\n![curves]({CURVES_SVG})\n"
    )
    .unwrap();
    writeln!(md, "## Metrics\n").unwrap();
    writeln!(
        md,
        "| epoch | loss | pl | nl | sd | train acc | test acc | r | beta | lr |"
    )
    .unwrap();
    writeln!(md, "|---|---|---|---|---|---|---|---|---|---|").unwrap();
    for r in &metrics {
        let test = r.test_acc.map_or("-".to_string(), |a| format!("{a:.4}"));
        writeln!(
            md,
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {test} | {:.4} | {:.3} | {:.5} |",
            r.epoch + 1,
            r.loss_total,
            r.loss_pl,
            r.loss_nl,
            r.loss_sd,
            r.train_acc,
            r.r_est,
            r.beta,
            r.lr
        )
        .unwrap();
    }
    write(&outputs[2], md)?;
    println!("report written to {}", out_dir.display());
    Ok(())
}

fn bin_counts(values: impl Iterator<Item = f64>) -> Vec<u32> {
    let mut counts = vec![0u32; BINS];
    for v in values {
        let b = ((v.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1);
        counts[b] += 1;
    }
    counts
}

/// Histogram of negative-head probabilities on the noisy labels, with clean
/// and noisy samples drawn separately when the truth is known.
fn plot_histogram(path: &Path, probs: &[f64], truth: Option<&[bool]>) -> PlotResult {
    let groups: Vec<(&str, RGBColor, Vec<u32>)> = match truth {
        Some(t) => vec![
            (
                "clean",
                RGBColor(40, 120, 200),
                bin_counts(probs.iter().zip(t).filter(|(_, n)| !**n).map(|(p, _)| *p)),
            ),
            (
                "noisy",
                RGBColor(210, 60, 50),
                bin_counts(probs.iter().zip(t).filter(|(_, n)| **n).map(|(p, _)| *p)),
            ),
        ],
        None => vec![("all", RGBColor(90, 90, 90), bin_counts(probs.iter().copied()))],
    };
    let top = groups
        .iter()
        .flat_map(|g| g.2.iter())
        .copied()
        .max()
        .unwrap_or(1)
        .max(1);
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Negative-head probability on the given label", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..1.0, 0u32..top + top / 10 + 1)?;
    chart.configure_mesh().x_desc("probability").y_desc("samples").draw()?;
    let width = 1.0 / BINS as f64;
    for (name, color, counts) in groups {
        chart
            .draw_series(counts.iter().enumerate().map(|(b, &n)| {
                let x0 = b as f64 * width;
                Rectangle::new([(x0, 0), (x0 + width, n)], color.mix(0.55).filled())
            }))?
            .label(name)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperMiddle)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

/// Loss components (left) and accuracies (right) per epoch.
fn plot_curves(path: &Path, metrics: &[EpochReport]) -> PlotResult {
    let root = SVGBackend::new(path, (960, 400)).into_drawing_area();
    root.fill(&WHITE)?;
    let (left, right) = root.split_horizontally(480);
    let epochs = metrics.len().max(2) as f64;
    let xs = |r: &EpochReport| (r.epoch + 1) as f64;

    let top = metrics.iter().map(|r| r.loss_total).fold(0.0, f64::max).max(1e-6) * 1.05;
    let mut loss = ChartBuilder::on(&left)
        .caption("Loss", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(32)
        .y_label_area_size(48)
        .build_cartesian_2d(1.0..epochs, 0.0..top)?;
    loss.configure_mesh().x_desc("epoch").draw()?;
    let parts: [(&str, RGBColor, Column); 4] = [
        ("total", BLACK, |r| r.loss_total),
        ("positive", BLUE, |r| r.loss_pl),
        ("negative", RED, |r| r.loss_nl),
        ("distill", GREEN, |r| r.loss_sd),
    ];
    for (name, color, get) in parts {
        loss.draw_series(LineSeries::new(
            metrics.iter().map(|r| (xs(r), get(r))),
            color.stroke_width(2),
        ))?
        .label(name)
        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    loss.configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;

    let mut acc = ChartBuilder::on(&right)
        .caption("Accuracy", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(32)
        .y_label_area_size(48)
        .build_cartesian_2d(1.0..epochs, 0.0..1.02)?;
    acc.configure_mesh().x_desc("epoch").draw()?;
    acc.draw_series(LineSeries::new(
        metrics.iter().map(|r| (xs(r), r.train_acc)),
        BLUE.stroke_width(2),
    ))?
    .label("train (given labels)")
    .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLUE));
    if metrics.iter().all(|r| r.test_acc.is_some()) {
        acc.draw_series(LineSeries::new(
            metrics.iter().map(|r| (xs(r), r.test_acc.unwrap_or(0.0))),
            RED.stroke_width(2),
        ))?
        .label("test")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], RED));
    }
    acc.configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}
