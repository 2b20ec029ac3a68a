//! Post-processing of chain traces: structure posterior, MAP topology, link
//! probabilities, conditional posterior means and one-step prediction.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_regression, ModelStructure, TimeSeriesExperiment};
use crate::error::{Error, Result};
use crate::rjmcmc::ChainTrace;

pub type StructureDistribution = BTreeMap<ModelStructure, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMeans {
    /// Mean responses per experiment, ascending group order.
    pub w_hat: Vec<Vec<f64>>,
    pub sigma_hat: Vec<f64>,
    /// Samples that visited the structure.
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    /// Structures ordered by decreasing probability.
    pub structure_probs: Vec<(ModelStructure, f64)>,
    pub map_structure: ModelStructure,
    pub link_probs: Vec<f64>,
    pub means: PosteriorMeans,
}

/// Visit frequencies of the retained samples.
pub fn empirical_structure_distribution(trace: &ChainTrace) -> Result<StructureDistribution> {
    if trace.samples.is_empty() {
        return Err(Error::Usage("trace holds no retained samples".into()));
    }
    let mut counts: BTreeMap<ModelStructure, usize> = BTreeMap::new();
    for s in &trace.samples {
        *counts.entry(s.structure.clone()).or_default() += 1;
    }
    let n = trace.samples.len() as f64;
    Ok(counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect())
}

/// Most probable structure; ties go to fewer links, then the smaller parent vector.
pub fn map_topology(probs: &StructureDistribution) -> Result<ModelStructure> {
    probs
        .iter()
        .min_by(|(a, pa), (b, pb)| {
            pb.total_cmp(pa)
                .then(a.link_count().cmp(&b.link_count()))
                .then(a.parents.cmp(&b.parents))
        })
        .map(|(s, _)| s.clone())
        .ok_or_else(|| Error::Usage("empty structure distribution".into()))
}

/// `P(j → i | Y)` for every candidate group `j`.
pub fn link_probabilities(probs: &StructureDistribution) -> Result<Vec<f64>> {
    let first = probs
        .keys()
        .next()
        .ok_or_else(|| Error::Usage("empty structure distribution".into()))?;
    let mut out = vec![0.0; first.n_candidates()];
    for (s, p) in probs {
        for g in s.groups() {
            out[g] += p;
        }
    }
    out[first.target] = 1.0;
    Ok(out)
}

/// Ordered distribution, most probable first.
pub fn ranked(probs: &StructureDistribution) -> Vec<(ModelStructure, f64)> {
    let mut v: Vec<_> = probs.iter().map(|(s, p)| (s.clone(), *p)).collect();
    v.sort_by(|(a, pa), (b, pb)| {
        pb.total_cmp(pa)
            .then(a.link_count().cmp(&b.link_count()))
            .then(a.parents.cmp(&b.parents))
    });
    v
}

/// Means of `W` and `σ` over the samples that visited `structure`.
pub fn posterior_means(trace: &ChainTrace, structure: &ModelStructure) -> Option<PosteriorMeans> {
    let hits: Vec<_> = trace.samples.iter().filter(|s| &s.structure == structure).collect();
    let first = hits.first()?;
    let n = hits.len() as f64;
    let mut w_hat: Vec<Vec<f64>> = first.w.per_experiment.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut sigma_hat = vec![0.0; first.sigma.len()];
    for s in &hits {
        for (acc, w) in w_hat.iter_mut().zip(&s.w.per_experiment) {
            for (a, v) in acc.iter_mut().zip(w) {
                *a += v;
            }
        }
        for (a, v) in sigma_hat.iter_mut().zip(&s.sigma) {
            *a += v;
        }
    }
    w_hat.iter_mut().flatten().for_each(|v| *v /= n);
    sigma_hat.iter_mut().for_each(|v| *v /= n);
    Some(PosteriorMeans {
        w_hat,
        sigma_hat,
        n_samples: hits.len(),
    })
}

pub fn summarize(trace: &ChainTrace) -> Result<PosteriorSummary> {
    let probs = empirical_structure_distribution(trace)?;
    let map_structure = map_topology(&probs)?;
    let link_probs = link_probabilities(&probs)?;
    let means = posterior_means(trace, &map_structure).expect("the MAP structure was visited");
    Ok(PosteriorSummary {
        structure_probs: ranked(&probs),
        map_structure,
        link_probs,
        means,
    })
}

/// `ŷ_i(T+1), …, ŷ_i(N)` in time order from impulse responses `w_hat`.
pub fn predict_one_step(
    w_hat: &[f64],
    structure: &ModelStructure,
    experiment: &TimeSeriesExperiment,
    truncation: usize,
) -> Result<Vec<f64>> {
    if w_hat.len() != structure.link_count() * truncation {
        return Err(Error::Usage(format!(
            "{} coefficients for {} groups of length {truncation}",
            w_hat.len(),
            structure.link_count()
        )));
    }
    let reg = build_regression(std::slice::from_ref(experiment), structure, truncation)
        .map_err(|e| match e {
            Error::DataTooShort { len, truncation, .. } => Error::DataTooShort {
                experiment: 0,
                len,
                truncation,
            },
            other => other,
        })?;
    let fit = &reg.experiments[0].regressors * DVector::from_column_slice(w_hat);
    // regression rows run backwards in time
    Ok(fit.iter().rev().copied().collect())
}

/// `100 (1 − ‖y − ŷ‖ / ‖y − ȳ‖)`.
pub fn fitness(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(Error::Usage(format!(
            "fitness needs equal non-empty lengths, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let den = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::Domain("fitness is undefined for a constant signal".into()));
    }
    let num = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(100.0 * (1.0 - num / den))
}
