//! Peer Truth Serum reward over a finite answer space.
//!
//! An agent's report is rewarded only when it agrees with a randomly chosen
//! peer, and the payment is inversely proportional to the answer's empirical
//! frequency across statistically similar questions. Agreement on rare
//! answers therefore pays more than agreement on common ones — the same
//! structure the posterior/prior score in [`crate::scoring`] applies to
//! language-model answers.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PtsError {
    #[error("label not in answer space: {0}")]
    UnknownLabel(String),
    #[error("total count over the answer space is zero")]
    ZeroTotal,
    #[error("report agrees with peer but has zero empirical frequency")]
    ZeroFrequencyAgreement,
    #[error("invalid peer distribution: {0}")]
    InvalidDistribution(String),
}

/// Finite answer space with per-label counts from other agents, one report
/// and one peer report.
#[derive(Debug, Clone, PartialEq)]
pub struct PtsContext {
    answer_space: Vec<String>,
    counts: BTreeMap<String, u64>,
    report: String,
    peer_report: String,
}

impl PtsContext {
    /// Labels missing from `counts` get a zero count; counts for labels
    /// outside the answer space are rejected.
    pub fn new(
        answer_space: Vec<String>,
        counts: BTreeMap<String, u64>,
        report: impl Into<String>,
        peer_report: impl Into<String>,
    ) -> Result<Self, PtsError> {
        let report = report.into();
        let peer_report = peer_report.into();
        for label in [&report, &peer_report] {
            if !answer_space.iter().any(|l| l == label) {
                return Err(PtsError::UnknownLabel(label.clone()));
            }
        }
        for label in counts.keys() {
            if !answer_space.iter().any(|l| l == label) {
                return Err(PtsError::UnknownLabel(label.clone()));
            }
        }
        let mut full_counts = BTreeMap::new();
        for label in &answer_space {
            full_counts.insert(label.clone(), counts.get(label).copied().unwrap_or(0));
        }
        if full_counts.values().sum::<u64>() == 0 {
            return Err(PtsError::ZeroTotal);
        }
        Ok(Self {
            answer_space,
            counts: full_counts,
            report,
            peer_report,
        })
    }

    pub fn answer_space(&self) -> &[String] {
        &self.answer_space
    }

    pub fn report(&self) -> &str {
        &self.report
    }

    pub fn peer_report(&self) -> &str {
        &self.peer_report
    }
}

/// Empirical frequency of a label among the other agents' reports.
pub fn pts_frequency(ctx: &PtsContext, label: &str) -> Result<f64, PtsError> {
    let count = *ctx
        .counts
        .get(label)
        .ok_or_else(|| PtsError::UnknownLabel(label.to_string()))?;
    let total: u64 = ctx.counts.values().sum();
    if total == 0 {
        return Err(PtsError::ZeroTotal);
    }
    Ok(count as f64 / total as f64)
}

/// Reward for the context's report against its peer: zero on disagreement,
/// the inverse empirical frequency on agreement.
pub fn pts_reward(ctx: &PtsContext) -> Result<f64, PtsError> {
    if ctx.report != ctx.peer_report {
        return Ok(0.0);
    }
    let freq = pts_frequency(ctx, &ctx.report)?;
    if freq == 0.0 {
        return Err(PtsError::ZeroFrequencyAgreement);
    }
    Ok(1.0 / freq)
}

/// Expected reward of reporting `candidate_report` when the peer's report is
/// drawn from `peer_distribution`: the peer probability of the label divided
/// by its empirical frequency.
pub fn pts_expected_reward(
    ctx: &PtsContext,
    peer_distribution: &BTreeMap<String, f64>,
    candidate_report: &str,
) -> Result<f64, PtsError> {
    let mut sum = 0.0;
    for (label, p) in peer_distribution {
        if !ctx.answer_space.iter().any(|l| l == label) {
            return Err(PtsError::UnknownLabel(label.clone()));
        }
        if !p.is_finite() || *p < 0.0 {
            return Err(PtsError::InvalidDistribution(format!(
                "probability of {label} is {p}"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PtsError::InvalidDistribution(format!(
            "probabilities sum to {sum}"
        )));
    }
    let peer_p = peer_distribution
        .get(candidate_report)
        .copied()
        .unwrap_or(0.0);
    if !ctx.answer_space.iter().any(|l| l == candidate_report) {
        return Err(PtsError::UnknownLabel(candidate_report.to_string()));
    }
    let freq = pts_frequency(ctx, candidate_report)?;
    if freq == 0.0 {
        return Err(PtsError::ZeroFrequencyAgreement);
    }
    Ok(peer_p / freq)
}
