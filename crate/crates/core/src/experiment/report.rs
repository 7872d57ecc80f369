use super::metrics::{accuracy, auc, mean_std};
use crate::corpus::Label;
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Published results on the PC-GITA corpus: (configuration, accuracy mean,
/// accuracy std, AUC mean, AUC std). The corpus is not distributed, so
/// these serve as documentation targets only.
pub const PC_GITA_REFERENCE: &[(&str, f64, f64, f64, f64)] = &[
    ("Magnitude", 69.72, 15.62, 0.77, 0.16),
    ("Phase", 62.76, 14.52, 0.70, 0.15),
    ("MGD", 70.78, 12.22, 0.79, 0.12),
    ("IF", 72.64, 13.37, 0.79, 0.13),
    ("Magnitude-Phase", 87.32, 9.69, 0.93, 0.10),
    ("Magnitude-MGD", 80.92, 10.11, 0.90, 0.10),
    ("Magnitude-IF", 93.68, 5.32, 0.97, 0.05),
    ("Envelope-Fine structure", 86.04, 8.03, 0.94, 0.08),
];

type ScoresAndLabels = (Vec<f64>, Vec<Label>);

/// Soft-voted score of one test speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub config: String,
    pub representations: String,
    pub seed: usize,
    pub split: usize,
    pub fold: usize,
    pub speaker_id: String,
    pub label: Label,
    pub score: f64,
}

/// Speaker-level metrics of one trained (seed, split), pooled over folds.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub seed: usize,
    pub split: usize,
    pub accuracy: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSummary {
    pub config: String,
    pub representations: String,
    pub runs: Vec<RunMetrics>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub scores: Vec<ScoreRow>,
    /// One entry per configuration, in order of first appearance.
    pub summaries: Vec<ConfigSummary>,
    /// Configuration text written next to the report when present.
    pub config_echo: Option<String>,
}

impl EvaluationReport {
    /// Aggregates speaker scores: metrics per (configuration, seed, split)
    /// over the pooled test speakers of all folds, then mean and
    /// population std across those runs.
    pub fn from_scores(scores: Vec<ScoreRow>) -> Result<Self> {
        let mut order: Vec<(String, String)> = Vec::new();
        let mut groups: BTreeMap<&str, BTreeMap<(usize, usize), ScoresAndLabels>> = BTreeMap::new();
        for r in &scores {
            if !order.iter().any(|(c, _)| *c == r.config) {
                order.push((r.config.clone(), r.representations.clone()));
            }
            let g = groups
                .entry(&r.config)
                .or_default()
                .entry((r.seed, r.split))
                .or_default();
            g.0.push(r.score);
            g.1.push(r.label);
        }
        let summaries = order
            .into_iter()
            .map(|(config, representations)| {
                let runs = groups[config.as_str()]
                    .iter()
                    .map(|(&(seed, split), (s, l))| {
                        Ok(RunMetrics {
                            seed,
                            split,
                            accuracy: accuracy(s, l)?,
                            auc: auc(s, l)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (accuracy_mean, accuracy_std) = mean_std(&runs.iter().map(|r| r.accuracy).collect::<Vec<_>>());
                let (auc_mean, auc_std) = mean_std(&runs.iter().map(|r| r.auc).collect::<Vec<_>>());
                Ok(ConfigSummary {
                    config,
                    representations,
                    runs,
                    accuracy_mean,
                    accuracy_std,
                    auc_mean,
                    auc_std,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scores,
            summaries,
            config_echo: None,
        })
    }

    pub fn summary(&self, config: &str) -> Option<&ConfigSummary> {
        self.summaries.iter().find(|s| s.config == config)
    }

    pub fn results_csv(&self) -> String {
        let mut out = String::from("config,representations,seed,split,fold,speaker_id,label,score\n");
        for r in &self.scores {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.config, r.representations, r.seed, r.split, r.fold, r.speaker_id, r.label, r.score
            )
            .expect("write to string");
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("config,accuracy_mean,accuracy_std,auc_mean,auc_std\n");
        for s in &self.summaries {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                s.config, s.accuracy_mean, s.accuracy_std, s.auc_mean, s.auc_std
            )
            .expect("write to string");
        }
        out
    }

    /// Plain-text table: representation, accuracy and AUC as mean ± std.
    pub fn summary_table(&self) -> String {
        let width = self
            .summaries
            .iter()
            .map(|s| s.representations.chars().count())
            .chain(["Representation".len()])
            .max()
            .unwrap_or(0);
        let runs = self.summaries.first().map(|s| s.runs.len()).unwrap_or(0);
        let mut out = String::new();
        writeln!(out, "{:<width$}  {:>15}  {:>11}", "Representation", "Accuracy", "AUC").expect("write");
        writeln!(out, "{}", "-".repeat(width + 32)).expect("write");
        for s in &self.summaries {
            writeln!(
                out,
                "{:<width$}  {:>15}  {:>11}",
                s.representations,
                format!("{:.2} ± {:.2}", s.accuracy_mean, s.accuracy_std),
                format!("{:.2} ± {:.2}", s.auc_mean, s.auc_std),
            )
            .expect("write");
        }
        writeln!(
            out,
            "\nmean ± population std over {runs} trained models per configuration"
        )
        .expect("write");
        out
    }
}

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TABLE_FILE: &str = "summary.txt";
pub const ECHO_FILE: &str = "config.toml";

/// Writes `results.csv`, `summary.csv`, `summary.txt` and, when present,
/// the configuration echo. Returns the written paths.
pub fn emit_report(report: &EvaluationReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![
        (RESULTS_FILE, report.results_csv()),
        (SUMMARY_FILE, report.summary_csv()),
        (TABLE_FILE, report.summary_table()),
    ];
    if let Some(echo) = &report.config_echo {
        files.push((ECHO_FILE, echo.clone()));
    }
    files
        .into_iter()
        .map(|(name, text)| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            Ok(p)
        })
        .collect()
}

/// Reads a results table written by [`emit_report`].
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ScoreRow>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let bad = |line: usize, reason: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        if rec.len() != 8 {
            return Err(bad(line, format!("expected 8 fields, got {}", rec.len())));
        }
        let num = |j: usize| {
            rec[j]
                .parse::<usize>()
                .map_err(|_| bad(line, format!("bad number {:?}", &rec[j])))
        };
        out.push(ScoreRow {
            config: rec[0].to_string(),
            representations: rec[1].to_string(),
            seed: num(2)?,
            split: num(3)?,
            fold: num(4)?,
            speaker_id: rec[5].to_string(),
            label: Label::parse(&rec[6]).ok_or_else(|| bad(line, format!("bad label {:?}", &rec[6])))?,
            score: rec[7]
                .parse()
                .map_err(|_| bad(line, format!("bad score {:?}", &rec[7])))?,
        });
    }
    Ok(out)
}
