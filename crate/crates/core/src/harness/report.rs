use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::run::{metrics_csv, RunLedger, LEDGER_FILE};
use crate::error::{Error, Result};
use crate::eval::EvalReport;

/// One plotted line: mean accuracy over the runs sharing a label.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// Retrained-output-layer accuracy rather than raw accuracy.
    pub gd: bool,
    /// `(t, mean accuracy, runs averaged)`.
    pub points: Vec<(usize, f64, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    pub scenarios: Vec<String>,
}

/// Run directories matched by `pattern` that hold a ledger.
pub fn load_ledgers(pattern: &str) -> Result<Vec<RunLedger>> {
    let paths = glob::glob(pattern).map_err(|e| Error::argument(format!("bad glob `{pattern}`: {e}")))?;
    let mut out = Vec::new();
    for p in paths {
        let p = p.map_err(|e| Error::Io(e.into()))?;
        if p.join(LEDGER_FILE).is_file() {
            out.push(RunLedger::load(&p)?);
        }
    }
    out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(out)
}

fn series_key(r: &EvalReport) -> String {
    format!("{} |M_e|={}", r.algorithm, r.memory_size)
}

/// Raw and retrained accuracy curves averaged over seeds. All reports must
/// come from the same scenario.
pub fn accuracy_series(reports: &[&EvalReport]) -> Result<Vec<Series>> {
    let mut scenarios: Vec<&str> = reports.iter().map(|r| r.scenario.as_str()).collect();
    scenarios.sort_unstable();
    scenarios.dedup();
    if scenarios.len() > 1 {
        return Err(Error::Grouping(format!("one plot cannot mix scenarios {scenarios:?}")));
    }
    let mut acc: BTreeMap<(String, bool), BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for r in reports {
        let key = series_key(r);
        if let Some(raw) = r.raw_accuracy {
            let e = acc.entry((key.clone(), false)).or_default().entry(r.task_index).or_insert((0.0, 0));
            e.0 += raw;
            e.1 += 1;
        }
        let e = acc.entry((key, true)).or_default().entry(r.task_index).or_insert((0.0, 0));
        e.0 += r.gd_accuracy;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|((label, gd), pts)| Series {
            label: if gd { format!("{label} (GD)") } else { label },
            gd,
            points: pts.into_iter().map(|(t, (s, n))| (t, s / n as f64, n)).collect(),
        })
        .collect())
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(format!("plot: {e}")))
}

/// Accuracy-vs-task line plot. Retrained series are dashed.
pub fn plot_accuracy(series: &[Series], title: &str, path: &Path) -> Result<()> {
    let t_max = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).max().unwrap_or(1).max(2);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(1f64..t_max as f64, 0f64..1f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("task t")
        .y_desc("accuracy")
        .x_labels(t_max)
        .x_label_formatter(&|x| format!("{}", x.round() as i64))
        .draw()
        .map_err(plot_err)?;
    let mut colors: BTreeMap<String, usize> = BTreeMap::new();
    for s in series {
        let base = s.label.trim_end_matches(" (GD)").to_string();
        let n = colors.len();
        let color = Palette99::pick(*colors.entry(base).or_insert(n)).to_rgba();
        let pts: Vec<(f64, f64)> = s.points.iter().map(|p| (p.0 as f64, p.1)).collect();
        let style = color.stroke_width(2);
        if s.gd {
            chart
                .draw_series(DashedLineSeries::new(pts, 6, 4, style))
                .map_err(plot_err)?
                .label(s.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], style));
        } else {
            chart
                .draw_series(LineSeries::new(pts, style))
                .map_err(plot_err)?
                .label(s.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], style));
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerLeft)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Grouped bars of downstream accuracy, one group per dataset.
fn plot_downstream(rows: &[(String, String, f64)], path: &Path) -> Result<()> {
    let mut datasets: Vec<&str> = rows.iter().map(|r| r.1.as_str()).collect();
    datasets.sort_unstable();
    datasets.dedup();
    let mut labels: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    let width = labels.len() as f64 + 1.0;
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("downstream accuracy", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0f64..datasets.len() as f64 * width, 0f64..1f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(datasets.len() * 2 + 1)
        .x_label_formatter(&|x| {
            let g = (x / width).floor() as usize;
            let mid = g as f64 * width + width / 2.0;
            if (x - mid).abs() < 0.5 {
                datasets.get(g).map(|d| d.to_string()).unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("accuracy")
        .draw()
        .map_err(plot_err)?;
    for (li, label) in labels.iter().enumerate() {
        let color = Palette99::pick(li).to_rgba();
        let bars: Vec<Rectangle<(f64, f64)>> = rows
            .iter()
            .filter(|r| r.0 == *label)
            .map(|r| {
                let g = datasets.iter().position(|d| *d == r.1).expect("listed") as f64;
                let x0 = g * width + 0.5 + li as f64;
                Rectangle::new([(x0, 0.0), (x0 + 0.9, r.2)], color.filled())
            })
            .collect();
        chart
            .draw_series(bars)
            .map_err(plot_err)?
            .label(label.to_string())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Writes, under `out`: all metrics (`metrics.csv`), a final-task bias-gap
/// table, a downstream table, and per scenario an accuracy plot with the CSV
/// it was drawn from.
pub fn emit_report(ledgers: &[RunLedger], out: &Path) -> Result<ReportSummary> {
    let reports: Vec<&EvalReport> = ledgers.iter().flat_map(|l| l.reports.iter()).collect();
    if reports.is_empty() {
        return Err(Error::argument("no completed tasks to report on"));
    }
    fs::create_dir_all(out)?;
    let mut summary = ReportSummary::default();
    let write = |name: &str, text: String, summary: &mut ReportSummary| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, text)?;
        summary.files.push(p);
        Ok(())
    };

    let owned: Vec<EvalReport> = reports.iter().map(|r| (*r).clone()).collect();
    write("metrics.csv", metrics_csv(&owned), &mut summary)?;

    let finals: Vec<&EvalReport> = ledgers.iter().filter_map(|l| l.final_report()).collect();
    let mut gap = String::from("run_id,scenario,algorithm,memory_size,seed,t,raw_acc,gd_acc,bias_gap\n");
    let mut down = String::from("run_id,algorithm,memory_size,seed,dataset,accuracy\n");
    let mut bars: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for r in &finals {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        gap.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{}\n",
            r.run_id,
            r.scenario,
            r.algorithm,
            r.memory_size,
            r.seed,
            r.task_index,
            f(r.raw_accuracy),
            r.gd_accuracy,
            f(r.bias_gap)
        ));
        for (d, a) in &r.downstream {
            down.push_str(&format!("{},{},{},{},{},{:.6}\n", r.run_id, r.algorithm, r.memory_size, r.seed, d, a));
            let e = bars.entry((series_key(r), d.clone())).or_insert((0.0, 0));
            e.0 += a;
            e.1 += 1;
        }
    }
    write("bias_gap.csv", gap, &mut summary)?;
    write("downstream.csv", down, &mut summary)?;
    if !bars.is_empty() {
        let rows: Vec<(String, String, f64)> = bars.into_iter().map(|((l, d), (s, n))| (l, d, s / n as f64)).collect();
        let p = out.join("downstream.svg");
        plot_downstream(&rows, &p)?;
        summary.files.push(p);
    }

    let mut by_scenario: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for r in &reports {
        by_scenario.entry(r.scenario.as_str()).or_default().push(r);
    }
    for (scenario, group) in by_scenario {
        let series = accuracy_series(&group)?;
        let mut csv = String::from("scenario,series,gd,t,accuracy,runs\n");
        for s in &series {
            for (t, a, n) in &s.points {
                csv.push_str(&format!("{scenario},{},{},{t},{a:.6},{n}\n", s.label, s.gd));
            }
        }
        let stem = format!("accuracy_{}", slug(scenario));
        write(&format!("{stem}.csv"), csv, &mut summary)?;
        let svg = out.join(format!("{stem}.svg"));
        plot_accuracy(&series, scenario, &svg)?;
        summary.files.push(svg);
        summary.scenarios.push(scenario.to_string());
    }
    Ok(summary)
}
