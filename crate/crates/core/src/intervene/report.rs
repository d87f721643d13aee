use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::provenance::Provenance;

use super::bootstrap::{aggregate_runs, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "CIE")]
    Cie,
    #[serde(rename = "NormCIE")]
    NormCie,
    #[serde(rename = "CMA")]
    Cma,
    #[serde(rename = "logprob_delta")]
    LogprobDelta,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Cie => "CIE",
            Metric::NormCie => "NormCIE",
            Metric::Cma => "CMA",
            Metric::LogprobDelta => "logprob_delta",
        }
    }
}

/// Effect values at one site (layer, optionally head) under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSeries {
    pub layer: usize,
    pub head: Option<usize>,
    pub condition: String,
    /// Per run: (query id, value).
    pub values: Vec<Vec<(String, f64)>>,
    /// Items dropped for an undefined metric (NormCIE with a vanishing
    /// denominator).
    pub excluded: usize,
    pub summary: Summary,
}

impl EffectSeries {
    pub fn new(
        layer: usize,
        head: Option<usize>,
        condition: impl Into<String>,
        values: Vec<Vec<(String, f64)>>,
        excluded: usize,
        resamples: usize,
        level: f64,
        seed: u64,
    ) -> Result<Self> {
        let summary = aggregate_runs(&values, resamples, level, seed)?;
        Ok(EffectSeries { layer, head, condition: condition.into(), values, excluded, summary })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub metric: Metric,
    pub n_demos: usize,
    pub seed: u64,
    pub series: Vec<EffectSeries>,
    /// Same measurement with random subspaces of equal rank.
    pub baseline: Option<Box<EffectReport>>,
    pub provenance: Provenance,
}

/// One line of the long-form CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub metric: String,
    pub layer: usize,
    pub head: Option<usize>,
    pub condition: String,
    pub n_demos: usize,
    pub seed: u64,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub baseline_value: Option<f64>,
}

impl EffectReport {
    pub fn validate(&self) -> Result<()> {
        for s in &self.series {
            let m = &s.summary;
            ensure!(
                m.mean.is_finite() && m.ci_low.is_finite() && m.ci_high.is_finite(),
                "non-finite summary at layer {}",
                s.layer
            );
            ensure!(s.values.iter().flatten().all(|(_, v)| v.is_finite()), "non-finite effect value");
        }
        if let Some(b) = &self.baseline {
            b.validate()?;
        }
        Ok(())
    }

    pub fn find(&self, layer: usize, head: Option<usize>, condition: &str) -> Option<&EffectSeries> {
        self.series.iter().find(|s| s.layer == layer && s.head == head && s.condition == condition)
    }

    pub fn rows(&self) -> Vec<EffectRow> {
        self.series
            .iter()
            .map(|s| EffectRow {
                metric: self.metric.name().to_string(),
                layer: s.layer,
                head: s.head,
                condition: s.condition.clone(),
                n_demos: self.n_demos,
                seed: self.seed,
                value: s.summary.mean,
                ci_low: s.summary.ci_low,
                ci_high: s.summary.ci_high,
                baseline_value: self
                    .baseline
                    .as_ref()
                    .and_then(|b| b.find(s.layer, s.head, &s.condition))
                    .map(|b| b.summary.mean),
            })
            .collect()
    }
}
