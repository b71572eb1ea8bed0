//! Three-panel trade-off figure: PSNR, SSIM, and classification accuracy
//! versus alpha, one curve per beta, with a dashed perfect-channel baseline
//! in the accuracy panel when a noiseless record is present. Alphas are
//! placed at equal spacing (the grid is heavily non-uniform), labeled with
//! their values.

use plotters::prelude::*;
use semcom_core::evaluation::{load_records, MetricsRecord};
use semcom_core::Error;
use std::path::Path;

const CURVE_COLORS: [RGBColor; 6] = [
    RGBColor(0, 119, 187),
    RGBColor(51, 187, 238),
    RGBColor(0, 153, 136),
    RGBColor(238, 119, 51),
    RGBColor(204, 51, 17),
    RGBColor(136, 34, 85),
];

fn sorted_distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v
}

struct Panel<'a> {
    title: &'a str,
    y_desc: &'a str,
    metric: fn(&MetricsRecord) -> f64,
    baseline: Option<f64>,
}

pub fn cmd_plot(results_path: &Path, out_path: &Path) -> Result<(), Error> {
    let records = load_records(results_path)?;
    if records.is_empty() {
        return Err(Error::Argument(format!(
            "no records in {}",
            results_path.display()
        )));
    }
    let signatures = sorted_distinct_strings(records.iter().map(|r| r.ssim_cfg.clone()));
    if signatures.len() > 1 {
        return Err(Error::Argument(format!(
            "refusing to mix records with different SSIM configurations: {signatures:?}"
        )));
    }

    let curves: Vec<&MetricsRecord> = records.iter().filter(|r| !r.noiseless).collect();
    if curves.is_empty() {
        return Err(Error::Argument(
            "results file holds only baseline records".into(),
        ));
    }
    let alphas = sorted_distinct(curves.iter().map(|r| r.alpha));
    let betas = sorted_distinct(curves.iter().map(|r| r.beta));
    // Latest noiseless record wins as the baseline.
    let baseline_accuracy = records
        .iter()
        .rev()
        .find(|r| r.noiseless)
        .map(|r| r.accuracy);

    let config_hash = &curves.last().unwrap().config_hash;
    let panels = [
        Panel {
            title: "PSNR",
            y_desc: "PSNR [dB]",
            metric: |r| r.psnr_db,
            baseline: None,
        },
        Panel {
            title: "SSIM",
            y_desc: "SSIM",
            metric: |r| r.ssim,
            baseline: None,
        },
        Panel {
            title: "Classification accuracy",
            y_desc: "accuracy",
            metric: |r| r.accuracy,
            baseline: baseline_accuracy,
        },
    ];

    let root = SVGBackend::new(out_path, (920, 1080)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let (header, body) = root.split_vertically(26);
    header
        .draw(&Text::new(
            format!("trade-off over alpha (config {config_hash})"),
            (10, 5),
            ("sans-serif", 16),
        ))
        .map_err(draw_err)?;
    let areas = body.split_evenly((3, 1));

    for (panel, area) in panels.iter().zip(areas.iter()) {
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for r in &curves {
            let v = (panel.metric)(r);
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
        if let Some(b) = panel.baseline {
            y_min = y_min.min(b);
            y_max = y_max.max(b);
        }
        let pad = ((y_max - y_min) * 0.08).max(0.02);
        let x_max = (alphas.len() as f64 - 1.0).max(0.5);
        let mut chart = ChartBuilder::on(area)
            .margin(12)
            .caption(panel.title, ("sans-serif", 18))
            .x_label_area_size(38)
            .y_label_area_size(62)
            .build_cartesian_2d(-0.4f64..x_max + 0.4, (y_min - pad)..(y_max + pad))
            .map_err(draw_err)?;
        let alphas_for_labels = alphas.clone();
        chart
            .configure_mesh()
            .x_labels(alphas.len().min(20))
            .x_label_formatter(&move |x| {
                let i = x.round();
                if (x - i).abs() > 1e-6 || i < 0.0 {
                    return String::new();
                }
                alphas_for_labels
                    .get(i as usize)
                    .map(|a| a.to_string())
                    .unwrap_or_default()
            })
            .x_desc("alpha")
            .y_desc(panel.y_desc)
            .draw()
            .map_err(draw_err)?;

        for (bi, &beta) in betas.iter().enumerate() {
            let color = CURVE_COLORS[bi % CURVE_COLORS.len()];
            let mut points: Vec<(f64, f64)> = Vec::new();
            for (xi, &alpha) in alphas.iter().enumerate() {
                // Latest record for this grid point wins.
                if let Some(r) = curves
                    .iter()
                    .rev()
                    .find(|r| r.alpha == alpha && r.beta == beta)
                {
                    points.push((xi as f64, (panel.metric)(r)));
                }
            }
            if points.is_empty() {
                continue;
            }
            chart
                .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
                .map_err(draw_err)?
                .label(format!("beta = {beta}"))
                .legend(move |(x, y)| {
                    PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
                });
            chart
                .draw_series(points.iter().map(|p| Circle::new(*p, 3, color.filled())))
                .map_err(draw_err)?;
        }

        if let Some(b) = panel.baseline {
            chart
                .draw_series(DashedLineSeries::new(
                    vec![(-0.4, b), (x_max + 0.4, b)],
                    6,
                    4,
                    BLACK.stroke_width(2),
                ))
                .map_err(draw_err)?
                .label("baseline: perfect channel")
                .legend(|(x, y)| {
                    PathElement::new(vec![(x, y), (x + 18, y)], BLACK.stroke_width(2))
                });
        }

        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE.mix(0.85))
            .position(SeriesLabelPosition::LowerLeft)
            .draw()
            .map_err(draw_err)?;
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

fn sorted_distinct_strings(values: impl Iterator<Item = String>) -> Vec<String> {
    let mut v: Vec<String> = values.collect();
    v.sort();
    v.dedup();
    v
}

fn draw_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Training(format!("plot rendering failed: {e}"))
}
