//! Static SVG figures rendered without external dependencies: the
//! pretraining-ablation curves, the four-setup bar chart, and the
//! cost-versus-accuracy scatter. Incomplete sweeps render with a warning
//! annotation instead of failing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{average_accuracy_sem, RunResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    F3,
    F4,
    CostVsAccuracy,
}

impl FigureId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "F3" | "f3" => Ok(FigureId::F3),
            "F4" | "f4" => Ok(FigureId::F4),
            "cost-vs-acc" | "cost_vs_acc" => Ok(FigureId::CostVsAccuracy),
            other => Err(Error::config(format!(
                "unknown figure id '{other}' (expected F3, F4 or cost-vs-acc)"
            ))),
        }
    }

    pub fn file_name(&self) -> &'static str {
        match self {
            FigureId::F3 => "fig3_pretraining_ablation.svg",
            FigureId::F4 => "fig4_freezing_setups.svg",
            FigureId::CostVsAccuracy => "cost_vs_accuracy.svg",
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;

struct Canvas {
    svg: String,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Canvas {
    fn new(title: &str, x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Canvas {
        let mut svg = String::new();
        let _ = write!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">
<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{:.1}" y="28" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>
"#,
            WIDTH / 2.0,
            escape(title)
        );
        Canvas {
            svg,
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    fn px(&self, x: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-12);
        MARGIN_L + (x - self.x_min) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-12);
        HEIGHT - MARGIN_B - (y - self.y_min) / span * (HEIGHT - MARGIN_T - MARGIN_B)
    }

    fn axes(&mut self, x_label: &str, y_label: &str, x_ticks: &[(f64, String)], y_ticks: &[(f64, String)]) {
        let x0 = MARGIN_L;
        let x1 = WIDTH - MARGIN_R;
        let y0 = HEIGHT - MARGIN_B;
        let y1 = MARGIN_T;
        let _ = write!(
            self.svg,
            r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>
<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>
<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>
<text x="18" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>
"#,
            (x0 + x1) / 2.0,
            HEIGHT - 14.0,
            escape(x_label),
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
        for (x, label) in x_ticks {
            let px = self.px(*x);
            let _ = write!(
                self.svg,
                r#"<line x1="{px:.1}" y1="{y0}" x2="{px:.1}" y2="{:.1}" stroke="black"/>
<text x="{px:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>
"#,
                y0 + 5.0,
                y0 + 20.0,
                escape(label)
            );
        }
        for (y, label) in y_ticks {
            let py = self.py(*y);
            let _ = write!(
                self.svg,
                r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0}" y2="{py:.1}" stroke="black"/>
<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>
"#,
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0,
                escape(label)
            );
        }
    }

    fn polyline(&mut self, points: &[(f64, f64)], color: &str) {
        if points.is_empty() {
            return;
        }
        let coords: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{:.1},{:.1}", self.px(*x), self.py(*y)))
            .collect();
        let _ = write!(
            self.svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>
"#,
            coords.join(" ")
        );
        for (x, y) in points {
            let _ = write!(
                self.svg,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}"/>
"#,
                self.px(*x),
                self.py(*y)
            );
        }
    }

    fn bar(&mut self, x_center: f64, half_width: f64, y: f64, color: &str) {
        let px0 = self.px(x_center - half_width);
        let px1 = self.px(x_center + half_width);
        let py = self.py(y);
        let base = self.py(self.y_min);
        let _ = write!(
            self.svg,
            r#"<rect x="{px0:.1}" y="{py:.1}" width="{:.1}" height="{:.1}" fill="{color}" stroke="black"/>
"#,
            px1 - px0,
            base - py
        );
    }

    fn error_bar(&mut self, x: f64, y: f64, sem: f64) {
        let px = self.px(x);
        let y0 = self.py(y - sem);
        let y1 = self.py(y + sem);
        let _ = write!(
            self.svg,
            r#"<line x1="{px:.1}" y1="{y0:.1}" x2="{px:.1}" y2="{y1:.1}" stroke="black" stroke-width="1.5"/>
<line x1="{:.1}" y1="{y0:.1}" x2="{:.1}" y2="{y0:.1}" stroke="black"/>
<line x1="{:.1}" y1="{y1:.1}" x2="{:.1}" y2="{y1:.1}" stroke="black"/>
"#,
            px - 4.0,
            px + 4.0,
            px - 4.0,
            px + 4.0
        );
    }

    fn scatter(&mut self, x: f64, y: f64, color: &str) {
        let _ = write!(
            self.svg,
            r#"<circle cx="{:.1}" cy="{:.1}" r="5" fill="{color}" fill-opacity="0.8" stroke="black"/>
"#,
            self.px(x),
            self.py(y)
        );
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = MARGIN_T + 8.0 + i as f64 * 18.0;
            let _ = write!(
                self.svg,
                r#"<rect x="{:.1}" y="{:.1}" width="12" height="12" fill="{color}"/>
<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>
"#,
                WIDTH - MARGIN_R - 150.0,
                y - 10.0,
                WIDTH - MARGIN_R - 132.0,
                y,
                escape(label)
            );
        }
    }

    fn warning(&mut self, msg: &str) {
        let _ = write!(
            self.svg,
            r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" fill="#b00020" text-anchor="middle">warning: {}</text>
"##,
            WIDTH / 2.0,
            HEIGHT - 2.0,
            escape(msg)
        );
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const SERIES_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Render one figure from run results and write it under `out_dir`.
/// Returns the path of the written file.
pub fn emit_plot(results: &[RunResult], id: FigureId, out_dir: &Path) -> Result<std::path::PathBuf> {
    if results.is_empty() {
        return Err(Error::input("no results to plot"));
    }
    let svg = match id {
        FigureId::F3 => plot_fig3(results)?,
        FigureId::F4 => plot_fig4(results)?,
        FigureId::CostVsAccuracy => plot_cost_vs_acc(results)?,
    };
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(id.file_name());
    std::fs::write(&path, svg)?;
    Ok(path)
}

/// Parse the `pc{N}-{aug|noaug}` cell labels of the pretraining sweep.
fn parse_fig3_label(label: &str) -> Option<(usize, bool)> {
    let rest = label.strip_prefix("pc")?;
    let (num, aug) = rest.split_once('-')?;
    let classes: usize = num.parse().ok()?;
    match aug {
        "aug" => Some((classes, true)),
        "noaug" => Some((classes, false)),
        _ => None,
    }
}

fn plot_fig3(results: &[RunResult]) -> Result<String> {
    let mut series: BTreeMap<bool, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in results {
        if let Some((classes, aug)) = parse_fig3_label(&r.strategy_label) {
            series
                .entry(aug)
                .or_default()
                .entry(classes)
                .or_default()
                .push(r.average_accuracy);
        }
    }
    if series.is_empty() {
        return Err(Error::input("no pretraining-sweep cells among the results"));
    }
    let all_points: Vec<f64> = series
        .values()
        .flat_map(|m| m.values())
        .flat_map(|v| v.iter().copied())
        .collect();
    let y_min = (all_points.iter().cloned().fold(f64::MAX, f64::min) - 0.05).max(0.0);
    let y_max = (all_points.iter().cloned().fold(f64::MIN, f64::max) + 0.05).min(1.0);
    let x_min = *series.values().flat_map(|m| m.keys()).min().unwrap() as f64 - 0.5;
    let x_max = *series.values().flat_map(|m| m.keys()).max().unwrap() as f64 + 0.5;
    let mut canvas = Canvas::new("Pretraining ablation: accuracy vs class count", x_min, x_max, y_min, y_max);
    let x_ticks: Vec<(f64, String)> = series
        .values()
        .flat_map(|m| m.keys())
        .map(|&c| (c as f64, c.to_string()))
        .collect();
    let y_ticks = percent_ticks(y_min, y_max);
    canvas.axes("pretraining classes", "final average accuracy", &x_ticks, &y_ticks);
    let mut warn = false;
    let expected: usize = series.values().map(|m| m.len()).max().unwrap_or(0);
    for (i, (_aug, points)) in series.iter().enumerate() {
        if points.len() < expected {
            warn = true;
        }
        let line: Vec<(f64, f64)> = points
            .iter()
            .map(|(&c, accs)| (c as f64, accs.iter().sum::<f64>() / accs.len() as f64))
            .collect();
        canvas.polyline(&line, SERIES_COLORS[i % SERIES_COLORS.len()]);
    }
    let labels: Vec<(&str, &str)> = series
        .keys()
        .enumerate()
        .map(|(i, aug)| {
            (
                if *aug { "with augmentation" } else { "no augmentation" },
                SERIES_COLORS[i % SERIES_COLORS.len()],
            )
        })
        .collect();
    canvas.legend(&labels);
    if warn {
        canvas.warning("sweep incomplete: some cells are missing");
    }
    Ok(canvas.finish())
}

fn plot_fig4(results: &[RunResult]) -> Result<String> {
    let setups = ["GR", "IR_freeze_enc", "GR_freeze_enc_dec", "IR_naive"];
    let mut cells: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in results {
        if let Some(name) = setups.iter().find(|s| **s == r.strategy_label) {
            cells.entry(name).or_default().push(r.average_accuracy);
        }
    }
    if cells.is_empty() {
        return Err(Error::input("no freezing-setup cells among the results"));
    }
    let y_max = cells
        .values()
        .flat_map(|v| v.iter())
        .cloned()
        .fold(f64::MIN, f64::max)
        + 0.1;
    let mut canvas = Canvas::new("Freezing setups: final average accuracy", -0.5, setups.len() as f64 - 0.5, 0.0, y_max.min(1.0));
    let x_ticks: Vec<(f64, String)> = setups
        .iter()
        .enumerate()
        .map(|(i, s)| (i as f64, s.to_string()))
        .collect();
    let y_ticks = percent_ticks(0.0, y_max);
    canvas.axes("setup", "final average accuracy", &x_ticks, &y_ticks);
    let mut missing = Vec::new();
    for (i, setup) in setups.iter().enumerate() {
        match cells.get(setup) {
            Some(accs) => {
                let (mean, sem) = average_accuracy_sem(accs);
                canvas.bar(i as f64, 0.3, mean, SERIES_COLORS[i % SERIES_COLORS.len()]);
                if let Some(sem) = sem {
                    canvas.error_bar(i as f64, mean, sem);
                }
            }
            None => missing.push(*setup),
        }
    }
    if !missing.is_empty() {
        canvas.warning(&format!("missing setups: {}", missing.join(", ")));
    }
    Ok(canvas.finish())
}

fn plot_cost_vs_acc(results: &[RunResult]) -> Result<String> {
    let mut cells: BTreeMap<(String, String), (f64, Vec<f64>)> = BTreeMap::new();
    for r in results {
        let e = cells
            .entry((r.architecture.clone(), r.strategy_label.clone()))
            .or_insert((r.relative_cost, Vec::new()));
        e.1.push(r.average_accuracy);
    }
    let accs: Vec<f64> = cells.values().flat_map(|(_, v)| v.iter().copied()).collect();
    let y_min = (accs.iter().cloned().fold(f64::MAX, f64::min) - 0.03).max(0.0);
    let y_max = (accs.iter().cloned().fold(f64::MIN, f64::max) + 0.03).min(1.0);
    let mut canvas = Canvas::new("Replay cost vs accuracy", 0.0, 1.05, y_min, y_max);
    let x_ticks: Vec<(f64, String)> = (0..=5).map(|i| (i as f64 * 0.2, format!("{}%", i * 20))).collect();
    let y_ticks = percent_ticks(y_min, y_max);
    canvas.axes("relative cost R", "final average accuracy", &x_ticks, &y_ticks);
    let archs: Vec<String> = {
        let mut a: Vec<String> = cells.keys().map(|(arch, _)| arch.clone()).collect();
        a.sort();
        a.dedup();
        a
    };
    for ((arch, _label), (r, accs)) in &cells {
        let color_idx = archs.iter().position(|a| a == arch).unwrap_or(0);
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        canvas.scatter(*r, mean, SERIES_COLORS[color_idx % SERIES_COLORS.len()]);
    }
    let legend: Vec<(&str, &str)> = archs
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), SERIES_COLORS[i % SERIES_COLORS.len()]))
        .collect();
    canvas.legend(&legend);
    Ok(canvas.finish())
}

fn percent_ticks(y_min: f64, y_max: f64) -> Vec<(f64, String)> {
    let span = (y_max - y_min).max(1e-9);
    let step = if span > 0.5 {
        0.1
    } else if span > 0.2 {
        0.05
    } else {
        0.02
    };
    let mut ticks = Vec::new();
    let mut y = (y_min / step).ceil() * step;
    while y <= y_max + 1e-12 {
        ticks.push((y, format!("{:.0}%", y * 100.0)));
        y += step;
    }
    ticks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(label: &str, acc: f64, seed: u64) -> RunResult {
        RunResult {
            dataset: "synthetic".into(),
            architecture: "FMNIST3".into(),
            mode: "fig4".into(),
            strategy_label: label.into(),
            strategy: vec![],
            relative_cost: 1.0,
            per_task_accuracy: vec![acc],
            average_accuracy: acc,
            mfid: None,
            seed,
            wall_clock_seconds: 0.0,
            config_hash: "h".into(),
        }
    }

    #[test]
    fn fig4_plot_has_four_bars_and_writes_file() {
        let results: Vec<RunResult> = ["GR", "IR_freeze_enc", "GR_freeze_enc_dec", "IR_naive"]
            .into_iter()
            .flat_map(|s| (1..=2).map(move |seed| result(s, 0.5 + seed as f64 * 0.01, seed)))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = emit_plot(&results, FigureId::F4, dir.path()).unwrap();
        let svg = std::fs::read_to_string(path).unwrap();
        assert_eq!(svg.matches("<rect").count() - 1, 4, "one rect per setup plus background");
        assert!(!svg.contains("warning:"));
    }

    #[test]
    fn incomplete_fig4_gets_warning_annotation() {
        let results = vec![result("GR", 0.8, 1), result("IR_naive", 0.3, 1)];
        let dir = tempfile::tempdir().unwrap();
        let path = emit_plot(&results, FigureId::F4, dir.path()).unwrap();
        let svg = std::fs::read_to_string(path).unwrap();
        assert!(svg.contains("warning:"));
        assert!(svg.contains("IR_freeze_enc"));
    }

    #[test]
    fn fig3_plot_has_two_series() {
        let mut results = Vec::new();
        for classes in [2usize, 6, 10] {
            for aug in [true, false] {
                let label = format!("pc{classes:02}-{}", if aug { "aug" } else { "noaug" });
                results.push(RunResult {
                    strategy_label: label,
                    average_accuracy: 0.3 + classes as f64 * 0.02 + if aug { 0.05 } else { 0.0 },
                    ..result("x", 0.0, 1)
                });
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = emit_plot(&results, FigureId::F3, dir.path()).unwrap();
        let svg = std::fs::read_to_string(path).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("with augmentation"));
        assert!(svg.contains("no augmentation"));
    }

    #[test]
    fn cost_vs_acc_has_one_point_per_cell() {
        let mut results = Vec::new();
        for (label, r) in [("IR", 1.0), ("[0.7, 0.3]", 0.714), ("[0.3, 0.7]", 0.333)] {
            for seed in 1..=2 {
                let mut rr = result(label, 0.7, seed);
                rr.relative_cost = r;
                rr.architecture = "ARCH1".into();
                results.push(rr);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = emit_plot(&results, FigureId::CostVsAccuracy, dir.path()).unwrap();
        let svg = std::fs::read_to_string(path).unwrap();
        // 3 scatter points (r=5) plus legend squares
        assert_eq!(svg.matches("r=\"5\"").count(), 3);
    }
}
