//! Experiment manifests with artifact hashes, the markdown report, and
//! minimal SVG charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::probe::ProbeReport;
use crate::train::TrainRun;

pub const EXPERIMENT_FILE: &str = "experiment.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// What the file holds, e.g. `train_run` or `noise_csv`.
    pub role: String,
    /// Path relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

/// `experiment.json`: what a command produced and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub name: String,
    pub command: String,
    pub seeds: BTreeMap<String, u64>,
    pub configs: BTreeMap<String, serde_json::Value>,
    pub artifacts: Vec<Artifact>,
}

impl ExperimentManifest {
    pub fn new(name: impl Into<String>, command: impl Into<String>) -> Self {
        ExperimentManifest {
            name: name.into(),
            command: command.into(),
            seeds: BTreeMap::new(),
            configs: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn config<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.configs.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    /// Hashes `dir/rel` and records it under `role`.
    pub fn record(&mut self, dir: &Path, role: &str, rel: &str) -> Result<()> {
        let sha256 = sha256_file(&dir.join(rel))?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact {
            role: role.into(),
            path: rel.into(),
            sha256,
        });
        Ok(())
    }

    /// Fails on the first artifact that is missing or whose hash changed.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let path = dir.join(&a.path);
            if !path.is_file() {
                return Err(Error::Format {
                    path,
                    reason: format!("artifact listed in {EXPERIMENT_FILE} is missing"),
                });
            }
            let found = sha256_file(&path)?;
            if found != a.sha256 {
                return Err(Error::HashMismatch {
                    path,
                    expected: a.sha256.clone(),
                    found,
                });
            }
        }
        Ok(())
    }

    pub fn of_role<'a>(&'a self, role: &'a str) -> impl Iterator<Item = &'a Artifact> + 'a {
        self.artifacts.iter().filter(move |a| a.role == role)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(EXPERIMENT_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(EXPERIMENT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Directories at or directly below `root` holding an experiment manifest,
/// sorted by path.
pub fn find_experiments(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    if root.join(EXPERIMENT_FILE).is_file() {
        found.push(root.to_path_buf());
    }
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(EXPERIMENT_FILE).is_file())
        .collect();
    subdirs.sort();
    found.extend(subdirs);
    Ok(found)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub model: String,
    pub epsilon: f64,
    pub trial: usize,
    pub accuracy: f64,
}

pub const NOISE_CSV_HEADER: &str = "model,epsilon,trial,accuracy";

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    let mut out = format!("{NOISE_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.model, r.epsilon, r.trial, r.accuracy);
    }
    out
}

pub fn parse_noise_csv(text: &str, path: &Path) -> Result<Vec<NoiseRow>> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(NOISE_CSV_HEADER) {
        return Err(bad(format!("expected header {NOISE_CSV_HEADER}")));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(format!("bad row {line:?}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{e} in {line:?}")));
            Ok(NoiseRow {
                model: f[0].to_string(),
                epsilon: num(f[1])?,
                trial: f[2].parse().map_err(|e| bad(format!("{e} in {line:?}")))?,
                accuracy: num(f[3])?,
            })
        })
        .collect()
}

/// Mean accuracy per model and ε, models in first-seen order.
pub fn noise_means(rows: &[NoiseRow]) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut models: Vec<String> = Vec::new();
    for r in rows {
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
    }
    models
        .into_iter()
        .map(|m| {
            let mut eps: Vec<f64> = rows.iter().filter(|r| r.model == m).map(|r| r.epsilon).collect();
            eps.sort_by(f64::total_cmp);
            eps.dedup();
            let points = eps
                .into_iter()
                .map(|e| {
                    let accs: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.model == m && r.epsilon == e)
                        .map(|r| r.accuracy)
                        .collect();
                    (e, accs.iter().sum::<f64>() / accs.len() as f64)
                })
                .collect();
            (m, points)
        })
        .collect()
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of `(x, y)` series with a legend.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, esc(title));
    let _ = writeln!(
        out,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{b}" stroke="black"/>"#,
        b = h - m,
        r = w - m
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#, sx(xv), h - m + 16.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, m - 6.0, sy(yv) + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 14.0, esc(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        esc(y_label)
    );
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            w - m - 120.0,
            ly,
            w - m - 104.0,
            ly + 9.0,
            esc(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bar chart of named values.
pub fn bar_chart_svg(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let top = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1e-12);
    let slot = (w - 2.0 * m) / bars.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, esc(title));
    let _ = writeln!(out, r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#, b = h - m, r = w - m);
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        esc(y_label)
    );
    for (i, (name, v)) in bars.iter().enumerate() {
        let bh = v / top * (h - 2.0 * m);
        let x = m + slot * i as f64 + slot * 0.15;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{bh:.1}" fill="{}"/>"#,
            h - m - bh,
            slot * 0.7,
            PALETTE[i % PALETTE.len()]
        );
        let cx = x + slot * 0.35;
        let _ = writeln!(out, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{v:.3}</text>"#, h - m - bh - 4.0);
        let _ = writeln!(out, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, h - m + 16.0, esc(name));
    }
    out.push_str("</svg>\n");
    out
}

/// Everything the report is built from, already verified.
#[derive(Clone, Debug, Default)]
pub struct ReportInputs {
    pub runs: Vec<(String, TrainRun)>,
    pub noise: Vec<NoiseRow>,
    pub probes: Vec<ProbeReport>,
    pub ensembles: Vec<(String, serde_json::Value)>,
}

/// Verifies every manifest under `root` and loads the artifacts the report
/// understands.
pub fn collect(root: &Path) -> Result<ReportInputs> {
    let dirs = find_experiments(root)?;
    if dirs.is_empty() {
        return Err(Error::invalid(format!(
            "no {EXPERIMENT_FILE} found in {} or its subdirectories",
            root.display()
        )));
    }
    let mut inputs = ReportInputs::default();
    for dir in dirs {
        let manifest = ExperimentManifest::load(&dir)?;
        manifest.verify(&dir)?;
        let read = |a: &Artifact| -> Result<String> {
            let p = dir.join(&a.path);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        for a in manifest.of_role("train_run") {
            let run: TrainRun = serde_json::from_str(&read(a)?)?;
            inputs.runs.push((manifest.name.clone(), run));
        }
        for a in manifest.of_role("noise_csv") {
            inputs.noise.extend(parse_noise_csv(&read(a)?, &dir.join(&a.path))?);
        }
        for a in manifest.of_role("probe_report") {
            inputs.probes.push(serde_json::from_str(&read(a)?)?);
        }
        for a in manifest.of_role("ensemble") {
            inputs.ensembles.push((manifest.name.clone(), serde_json::from_str(&read(a)?)?));
        }
    }
    Ok(inputs)
}

fn describe(run: &TrainRun) -> String {
    format!(
        "{:?} / {} / λ={}",
        run.config.pipeline.features,
        run.config.pipeline.encoding.label(),
        run.config.weights.lambda_crl
    )
    .to_lowercase()
}

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{:.1}", 100.0 * v))
}

/// Markdown report plus `(file name, svg)` charts.
pub fn render(inputs: &ReportInputs) -> (String, Vec<(String, String)>) {
    let mut md = String::from("# Experiment report\n\n");
    let mut charts = Vec::new();

    if !inputs.runs.is_empty() {
        let base = inputs
            .runs
            .iter()
            .find(|(_, r)| {
                r.config.pipeline.encoding == crate::pipeline::Encoding::None
                    && r.config.weights.lambda_crl == 0.0
            })
            .unwrap_or(&inputs.runs[0]);
        let _ = writeln!(md, "## Training runs\n\nBaseline: `{}`.\n", base.0);
        md.push_str("| run | configuration | val acc (%) | Δ acc | backbone | cls head | chron head | total params |\n");
        md.push_str("|---|---|---|---|---|---|---|---|\n");
        for (name, run) in &inputs.runs {
            let delta = match (run.final_val_accuracy, base.1.final_val_accuracy) {
                (Some(a), Some(b)) => format!("{:+.1}", 100.0 * (a - b)),
                _ => "n/a".into(),
            };
            let p = run.param_count;
            let _ = writeln!(
                md,
                "| {name} | {} | {} | {delta} | {} | {} | {} | {} |",
                describe(run),
                pct(run.final_val_accuracy),
                p.backbone,
                p.classifier,
                p.chron,
                p.total
            );
        }
        md.push('\n');

        for (name, run) in inputs.runs.iter().filter(|r| r.0 != base.0) {
            let (Some(e), Some(b)) = (&run.evaluation, &base.1.evaluation) else {
                continue;
            };
            let class_name = |c: usize| run.class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
            let _ = writeln!(md, "### Per-class accuracy: `{name}` vs `{}`\n", base.0);
            md.push_str("| class | baseline (%) | run (%) | Δ | most confused with |\n|---|---|---|---|---|\n");
            for c in 0..e.num_classes() {
                let (bc, rc) = (
                    b.per_class_accuracy.get(c).copied().flatten(),
                    e.per_class_accuracy[c],
                );
                let d = match (rc, bc) {
                    (Some(r), Some(b)) => format!("{:+.1}", 100.0 * (r - b)),
                    _ => "n/a".into(),
                };
                let similar = e.most_confused[c].map_or("none".into(), class_name);
                let _ = writeln!(md, "| {} | {} | {} | {d} | {similar} |", class_name(c), pct(bc), pct(rc));
            }
            md.push('\n');
        }

        let bars: Vec<(String, f64)> = inputs
            .runs
            .iter()
            .map(|(n, r)| (n.clone(), r.final_val_accuracy.unwrap_or(0.0)))
            .collect();
        charts.push(("accuracy.svg".into(), bar_chart_svg("Validation accuracy", "accuracy", &bars)));
        md.push_str("![accuracy](accuracy.svg)\n\n");
    }

    if !inputs.noise.is_empty() {
        let means = noise_means(&inputs.noise);
        md.push_str("## Noise robustness\n\nMean accuracy (%) over trials.\n\n| model |");
        let eps: Vec<f64> = means.first().map(|m| m.1.iter().map(|p| p.0).collect()).unwrap_or_default();
        for e in &eps {
            let _ = write!(md, " ε={e} |");
        }
        md.push_str("\n|---|");
        md.push_str(&"---|".repeat(eps.len()));
        md.push('\n');
        for (m, pts) in &means {
            let _ = write!(md, "| {m} |");
            for (_, a) in pts {
                let _ = write!(md, " {:.1} |", 100.0 * a);
            }
            md.push('\n');
        }
        charts.push(("noise.svg".into(), line_chart_svg("Accuracy under noise", "epsilon", "accuracy", &means)));
        md.push_str("\n![noise](noise.svg)\n\n");
    }

    if !inputs.probes.is_empty() {
        md.push_str("## Chronological-order probe\n\n| kind | K | output frames | mean monotonicity | degenerate curves |\n|---|---|---|---|---|\n");
        for p in &inputs.probes {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {:.3} | {} |",
                p.config.kind.name(),
                p.config.k,
                p.output_frames,
                p.held_out.mean_fraction,
                p.held_out.degenerate.iter().filter(|&&d| d).count()
            );
        }
        let series: Vec<(String, Vec<(f64, f64)>)> = inputs
            .probes
            .iter()
            .filter_map(|p| {
                p.held_out.curves.first().map(|c| {
                    (
                        p.config.kind.name().to_string(),
                        c.iter().enumerate().map(|(t, &v)| (t as f64, v)).collect(),
                    )
                })
            })
            .collect();
        charts.push(("probe.svg".into(), line_chart_svg("Probe output, first held-out sample", "frame", "normalized value", &series)));
        md.push_str("\n![probe](probe.svg)\n\n");
    }

    if !inputs.ensembles.is_empty() {
        md.push_str("## Ensembles\n\n```json\n");
        for (name, v) in &inputs.ensembles {
            let _ = writeln!(md, "// {name}\n{}", serde_json::to_string_pretty(v).unwrap_or_default());
        }
        md.push_str("```\n");
    }
    (md, charts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "x").unwrap();
        let mut m = ExperimentManifest::new("t", "test");
        m.record(dir.path(), "noise_csv", "a.csv").unwrap();
        m.save(dir.path()).unwrap();
        let back = ExperimentManifest::load(dir.path()).unwrap();
        back.verify(dir.path()).unwrap();
        fs::write(dir.path().join("a.csv"), "y").unwrap();
        let err = back.verify(dir.path()).unwrap_err();
        assert!(err.to_string().contains("a.csv"), "{err}");
        fs::remove_file(dir.path().join("a.csv")).unwrap();
        assert!(back.verify(dir.path()).unwrap_err().to_string().contains("a.csv"));
    }

    #[test]
    fn noise_csv_round_trip() {
        let rows = vec![
            NoiseRow { model: "a".into(), epsilon: 0.0, trial: 0, accuracy: 1.0 },
            NoiseRow { model: "a".into(), epsilon: 0.1, trial: 0, accuracy: 0.5 },
            NoiseRow { model: "a".into(), epsilon: 0.1, trial: 1, accuracy: 0.7 },
        ];
        let text = noise_csv(&rows);
        assert!(text.starts_with("model,epsilon,trial,accuracy\n"));
        assert_eq!(parse_noise_csv(&text, Path::new("n.csv")).unwrap(), rows);
        let means = noise_means(&rows);
        assert_eq!(means[0].1, vec![(0.0, 1.0), (0.1, 0.6)]);
        assert!(parse_noise_csv("a,b\n", Path::new("n.csv")).is_err());
    }

    #[test]
    fn charts_are_svg() {
        let s = line_chart_svg("t", "x", "y", &[("m".into(), vec![(0.0, 1.0), (1.0, 0.5)])]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("polyline"));
        let b = bar_chart_svg("t<", "y", &[("a".into(), 0.5)]);
        assert!(b.contains("t&lt;"));
    }
}
