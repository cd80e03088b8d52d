//! Subject-level metrics and cohort reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{infer, load_subject, Checkpoint, Subject};
use crate::volume::{CohortLabel, CohortManifest, Volume};

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("auroc scores".into()));
    }
    let mut ranked: Vec<(f64, u8)> = scores.iter().cloned().zip(labels.iter().cloned()).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.iter().filter(|&&l| l == 0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(format!("{n_pos} positive, {n_neg} negative")));
    }
    // Mann-Whitney U from midranks of tied groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < ranked.len() {
        let mut j = i;
        while j + 1 < ranked.len() && ranked[j + 1].0 == ranked[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += midrank * ranked[i..=j].iter().filter(|r| r.1 == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

fn same_shape(x: &Volume, y: &Volume) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

pub fn mae(x: &Volume, y: &Volume) -> Result<f64> {
    same_shape(x, y)?;
    Ok(x.data().iter().zip(y.data()).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / x.len() as f64)
}

pub fn mse(x: &Volume, y: &Volume) -> Result<f64> {
    same_shape(x, y)?;
    Ok(x.data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / x.len() as f64)
}

/// SSIM from whole-volume statistics, dynamic range 1.
pub fn ssim(x: &Volume, y: &Volume) -> Result<f64> {
    same_shape(x, y)?;
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let n = x.len() as f64;
    let mx = x.mean();
    let my = y.mean();
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.data().iter().zip(y.data()) {
        let (da, db) = (a as f64 - mx, b as f64 - my);
        vx += da * da;
        vy += db * db;
        cov += da * db;
    }
    let (vx, vy, cov) = (vx / n, vy / n, cov / n);
    Ok(((2.0 * mx * my + C1) * (2.0 * cov + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for fewer than two values.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std, n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub id: String,
    pub label: CohortLabel,
    pub anomaly_score: f64,
    pub residual_score: f64,
    pub folding_score: f64,
    #[serde(default)]
    pub region_scores: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectFailure {
    pub id: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub subjects: Vec<SubjectScore>,
    #[serde(default)]
    pub failures: Vec<SubjectFailure>,
    /// AUROC of the combined anomaly-map score.
    pub auroc: f64,
    pub auroc_residual: f64,
    pub auroc_folding: f64,
    /// region -> cohort label -> mean and spread of region scores.
    pub regions: BTreeMap<String, BTreeMap<CohortLabel, MeanStd>>,
}

impl CohortReport {
    /// Aggregates per-subject scores. Needs both cohorts.
    pub fn from_scores(subjects: Vec<SubjectScore>, failures: Vec<SubjectFailure>) -> Result<Self> {
        let labels: Vec<u8> = subjects.iter().map(|s| s.label.as_binary()).collect();
        let col = |f: fn(&SubjectScore) -> f64| subjects.iter().map(f).collect::<Vec<_>>();
        let auroc_all = auroc(&col(|s| s.anomaly_score), &labels)?;
        let auroc_residual = auroc(&col(|s| s.residual_score), &labels)?;
        let auroc_folding = auroc(&col(|s| s.folding_score), &labels)?;
        let mut grouped: BTreeMap<String, BTreeMap<CohortLabel, Vec<f64>>> = BTreeMap::new();
        for s in &subjects {
            for (region, &v) in &s.region_scores {
                grouped.entry(region.clone()).or_default().entry(s.label).or_default().push(v);
            }
        }
        let regions = grouped
            .into_iter()
            .map(|(r, by)| (r, by.into_iter().map(|(l, v)| (l, MeanStd::of(&v))).collect()))
            .collect();
        Ok(Self {
            subjects,
            failures,
            auroc: auroc_all,
            auroc_residual,
            auroc_folding,
            regions,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// One row per subject: `id,label,anomaly_score,residual_score,folding_score`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "label", "anomaly_score", "residual_score", "folding_score"])?;
        for s in &self.subjects {
            let label = match s.label {
                CohortLabel::Healthy => "healthy",
                CohortLabel::Anomalous => "anomalous",
            };
            w.write_record([
                s.id.clone(),
                label.to_string(),
                s.anomaly_score.to_string(),
                s.residual_score.to_string(),
                s.folding_score.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn require_both(labels: impl Iterator<Item = CohortLabel>) -> Result<()> {
    let (mut h, mut a) = (0, 0);
    for l in labels {
        match l {
            CohortLabel::Healthy => h += 1,
            CohortLabel::Anomalous => a += 1,
        }
    }
    if h == 0 || a == 0 {
        return Err(Error::SingleClass(format!("{h} healthy, {a} anomalous subjects")));
    }
    Ok(())
}

fn score_subject(ck: &Checkpoint, s: &Subject) -> Result<SubjectScore> {
    let r = infer(ck, &s.volume, s.mask.as_ref())?;
    Ok(SubjectScore {
        id: s.entry.id.clone(),
        label: s.entry.label,
        anomaly_score: r.scores.patient_score,
        residual_score: r.scores.residual_score,
        folding_score: r.scores.folding_score,
        region_scores: r.scores.region_scores,
    })
}

/// Scores already loaded subjects. Per-subject failures are collected,
/// not fatal.
pub fn evaluate_subjects(ck: &Checkpoint, subjects: &[Subject]) -> Result<CohortReport> {
    require_both(subjects.iter().map(|s| s.entry.label))?;
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for s in subjects {
        match score_subject(ck, s) {
            Ok(sc) => scores.push(sc),
            Err(e) => failures.push(SubjectFailure {
                id: s.entry.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    CohortReport::from_scores(scores, failures)
}

/// Loads and scores every manifest subject.
pub fn evaluate_cohort(ck: &Checkpoint, manifest: &CohortManifest) -> Result<CohortReport> {
    require_both(manifest.entries.iter().map(|e| e.label))?;
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for entry in &manifest.entries {
        match load_subject(entry, &ck.config).and_then(|s| score_subject(ck, &s)) {
            Ok(sc) => scores.push(sc),
            Err(e) => failures.push(SubjectFailure {
                id: entry.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    CohortReport::from_scores(scores, failures)
}
