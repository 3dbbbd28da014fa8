//! Seed-aggregated metric tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{Task, View};
use crate::error::{Error, Result};

use super::F1Average;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    SingleView,
    MultiView,
}

impl Category {
    pub fn label(self) -> &'static str {
        match self {
            Category::SingleView => "Single View",
            Category::MultiView => "Multi View",
        }
    }
}

/// Model family of a report row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Supervised,
    /// Independent VAEs; concatenated latents in the multi-view regime.
    IndVae,
    MmvmVae,
}

impl Method {
    pub fn label(self, category: Category) -> &'static str {
        match (self, category) {
            (Method::Supervised, _) => "Supervised",
            (Method::IndVae, Category::SingleView) => "Ind-VAE",
            (Method::IndVae, Category::MultiView) => "Ind-VAE-FA",
            (Method::MmvmVae, _) => "MMVM-VAE",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "supervised" => Ok(Method::Supervised),
            "ind-vae" | "ind-vae-fa" => Ok(Method::IndVae),
            "mmvm-vae" | "mmvm" => Ok(Method::MmvmVae),
            _ => Err(Error::Config(format!("unknown method {s:?} (expected supervised, ind-vae or mmvm-vae)"))),
        }
    }
}

/// Identity of a report row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub category: Category,
    pub method: Method,
    pub views: Vec<View>,
}

impl RowKey {
    pub fn view_label(&self) -> String {
        if self.views.len() == View::ALL.len() {
            "All views".into()
        } else {
            self.views.iter().map(|v| v.name()).collect::<Vec<_>>().join("+")
        }
    }

    pub fn label(&self) -> String {
        format!("{} {} {}", self.category.label(), self.method.label(self.category), self.view_label())
    }
}

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl MetricCell {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: if values.len() < 2 { 0.0 } else { var.sqrt() },
            per_seed: values,
        }
    }
}

/// One evaluation's metric values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub auroc: f64,
    pub f1: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub auroc: MetricCell,
    pub f1: MetricCell,
    pub balanced_accuracy: MetricCell,
}

impl TaskMetrics {
    fn from_scores(s: &[Scores]) -> Self {
        Self {
            auroc: MetricCell::from_values(s.iter().map(|x| x.auroc).collect()),
            f1: MetricCell::from_values(s.iter().map(|x| x.f1).collect()),
            balanced_accuracy: MetricCell::from_values(s.iter().map(|x| x.balanced_accuracy).collect()),
        }
    }

    fn scores(&self) -> Vec<Scores> {
        (0..self.auroc.per_seed.len())
            .map(|i| Scores {
                auroc: self.auroc.per_seed[i],
                f1: self.f1.per_seed[i],
                balanced_accuracy: self.balanced_accuracy.per_seed[i],
            })
            .collect()
    }

    fn cells(&self) -> [&MetricCell; 3] {
        [&self.auroc, &self.f1, &self.balanced_accuracy]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub key: RowKey,
    pub method_label: String,
    pub view_label: String,
    /// Keyed by task name.
    pub tasks: std::collections::BTreeMap<Task, TaskMetrics>,
}

/// Mean cross-view latent distance on held-out studies for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub seed: u64,
    pub mmvm: f64,
    pub independent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seeds: Vec<u64>,
    /// `held-out`, or `held-out+{k}-fold-cv`.
    pub fold_scheme: String,
    pub f1_average: F1Average,
    /// SHA-256 of the resolved configuration.
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metadata: ReportMetadata,
    /// Held-out test results.
    pub rows: Vec<ReportRow>,
    /// Cross-validation results (per-seed values are means over folds).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cross_validation: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alignment: Vec<AlignmentRecord>,
}

pub const REPORT_JSON: &str = "metrics.json";
pub const REPORT_TABLE: &str = "metrics.txt";

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("configuration serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Collects per-seed scores in insertion order.
#[derive(Debug, Default, Clone)]
pub struct RowAccumulator {
    rows: Vec<(RowKey, std::collections::BTreeMap<Task, Vec<Scores>>)>,
}

impl RowAccumulator {
    pub fn add(&mut self, key: &RowKey, task: Task, scores: Scores) {
        let i = match self.rows.iter().position(|(k, _)| k == key) {
            Some(i) => i,
            None => {
                self.rows.push((key.clone(), Default::default()));
                self.rows.len() - 1
            }
        };
        self.rows[i].1.entry(task).or_default().push(scores);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn finish(self) -> Vec<ReportRow> {
        self.rows
            .into_iter()
            .map(|(key, tasks)| ReportRow {
                method_label: key.method.label(key.category).to_string(),
                view_label: key.view_label(),
                tasks: tasks.iter().map(|(t, s)| (*t, TaskMetrics::from_scores(s))).collect(),
                key,
            })
            .collect()
    }

    fn extend_rows(&mut self, rows: &[ReportRow]) {
        for r in rows {
            for (task, m) in &r.tasks {
                for s in m.scores() {
                    self.add(&r.key, *task, s);
                }
            }
        }
    }
}

impl MetricsReport {
    pub fn row(&self, category: Category, method: Method, views: &[View]) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.key.category == category && r.key.method == method && r.key.views == views)
    }

    /// Every cell must hold one value per seed.
    pub fn validate(&self) -> Result<()> {
        let n = self.metadata.seeds.len();
        for r in self.rows.iter().chain(&self.cross_validation) {
            for m in r.tasks.values() {
                if m.cells().iter().any(|c| c.per_seed.len() != n) {
                    return Err(Error::Evaluation(format!(
                        "row {} does not aggregate exactly {n} seed runs",
                        r.key.label()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Combines reports over disjoint seed sets into one table.
    pub fn merge(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Evaluation("no reports to merge".into()))?;
        let mut seeds = Vec::new();
        let (mut rows, mut cv) = (RowAccumulator::default(), RowAccumulator::default());
        let mut alignment = Vec::new();
        for r in reports {
            if r.metadata.f1_average != first.metadata.f1_average || r.metadata.fold_scheme != first.metadata.fold_scheme {
                return Err(Error::Evaluation("reports use different F1 averaging or fold schemes".into()));
            }
            for s in &r.metadata.seeds {
                if seeds.contains(s) {
                    return Err(Error::Evaluation(format!("seed {s} appears in more than one report")));
                }
                seeds.push(*s);
            }
            rows.extend_rows(&r.rows);
            cv.extend_rows(&r.cross_validation);
            alignment.extend(r.alignment.iter().cloned());
        }
        let hashes: Vec<&str> = reports.iter().map(|r| r.metadata.config_hash.as_str()).collect();
        let merged = MetricsReport {
            metadata: ReportMetadata {
                seeds,
                fold_scheme: first.metadata.fold_scheme.clone(),
                f1_average: first.metadata.f1_average,
                config_hash: if hashes.iter().all(|h| *h == hashes[0]) {
                    hashes[0].to_string()
                } else {
                    config_hash(&hashes)
                },
            },
            rows: rows.finish(),
            cross_validation: cv.finish(),
            alignment,
        };
        merged.validate()?;
        Ok(merged)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Evaluation(format!("malformed metrics report: {e}")))
    }

    /// Aligned plain-text table with `mean ± std` cells.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.metadata.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(
            out,
            "seeds: {}  folds: {}  f1: {:?}  config: {}",
            seeds.join(","),
            self.metadata.fold_scheme,
            self.metadata.f1_average,
            &self.metadata.config_hash[..self.metadata.config_hash.len().min(16)]
        );
        out.push_str(&table_section("held-out test", &self.rows));
        if !self.cross_validation.is_empty() {
            out.push_str(&table_section("cross-validation", &self.cross_validation));
        }
        if !self.alignment.is_empty() {
            let _ = writeln!(out, "\ncross-view latent distance (held-out)");
            let _ = writeln!(out, "{:>6}  {:>10}  {:>12}", "seed", "mmvm", "independent");
            for a in &self.alignment {
                let _ = writeln!(out, "{:>6}  {:>10.4}  {:>12.4}", a.seed, a.mmvm, a.independent);
            }
        }
        out
    }

    /// Writes `metrics.json` and `metrics.txt` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(REPORT_JSON);
        fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join(REPORT_TABLE);
        fs::write(&txt, self.to_table()).map_err(|e| Error::io(&txt, e))?;
        Ok(json)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(REPORT_JSON) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        Self::from_json(&text)
    }
}

fn table_section(title: &str, rows: &[ReportRow]) -> String {
    let tasks = [Task::Binary, Task::Severity];
    let mut header = vec!["Category".to_string(), "Method".into(), "View".into()];
    for t in tasks {
        for m in ["AUROC", "F1", "Bal.Acc"] {
            header.push(format!("{} {m}", t.name()));
        }
    }
    let mut lines = vec![header];
    for r in rows {
        let mut line = vec![
            r.key.category.label().to_string(),
            r.method_label.clone(),
            r.view_label.clone(),
        ];
        for t in tasks {
            match r.tasks.get(&t) {
                Some(m) => line.extend(m.cells().iter().map(|c| format!("{:.2} ± {:.2}", c.mean, c.std))),
                None => line.extend(std::iter::repeat_n("-".to_string(), 3)),
            }
        }
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = format!("\n{title}\n");
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(seeds: &[u64], values: &[f64]) -> MetricsReport {
        let mut acc = RowAccumulator::default();
        let key = RowKey {
            category: Category::MultiView,
            method: Method::MmvmVae,
            views: View::ALL.to_vec(),
        };
        for v in values {
            acc.add(&key, Task::Binary, Scores { auroc: *v, f1: *v, balanced_accuracy: *v });
        }
        MetricsReport {
            metadata: ReportMetadata {
                seeds: seeds.to_vec(),
                fold_scheme: "held-out".into(),
                f1_average: F1Average::Macro,
                config_hash: config_hash(&1),
            },
            rows: acc.finish(),
            cross_validation: Vec::new(),
            alignment: Vec::new(),
        }
    }

    #[test]
    fn one_seed_has_zero_std() {
        let r = report(&[0], &[0.7]);
        r.validate().unwrap();
        let m = &r.rows[0].tasks[&Task::Binary];
        assert_eq!((m.auroc.mean, m.auroc.std), (0.7, 0.0));
    }

    #[test]
    fn merge_pools_seeds() {
        let m = MetricsReport::merge(&[report(&[0], &[0.6]), report(&[1, 2], &[0.8, 1.0])]).unwrap();
        assert_eq!(m.metadata.seeds, vec![0, 1, 2]);
        let c = &m.rows[0].tasks[&Task::Binary].auroc;
        assert_eq!(c.per_seed, vec![0.6, 0.8, 1.0]);
        assert!((c.mean - 0.8).abs() < 1e-12);
        assert!(c.mean >= 0.6 && c.mean <= 1.0);
        assert!(MetricsReport::merge(&[report(&[0], &[0.6]), report(&[0], &[0.6])]).is_err());
        assert!(report(&[0, 1], &[0.6]).validate().is_err());
    }

    #[test]
    fn json_and_table_roundtrip() {
        let r = report(&[0, 1], &[0.5, 0.7]);
        assert_eq!(MetricsReport::from_json(&r.to_json()).unwrap(), r);
        let t = r.to_table();
        assert!(t.contains("Multi View  MMVM-VAE  All views  0.60 ± 0.10"), "{t}");
        assert!(t.contains("binary AUROC"));
    }

    #[test]
    fn row_labels_follow_method_and_category() {
        assert_eq!(Method::IndVae.label(Category::SingleView), "Ind-VAE");
        assert_eq!(Method::IndVae.label(Category::MultiView), "Ind-VAE-FA");
        let k = RowKey {
            category: Category::SingleView,
            method: Method::MmvmVae,
            views: vec![View::PsaxP],
        };
        assert_eq!(k.view_label(), "PSAX-P");
    }
}
