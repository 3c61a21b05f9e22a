//! Trajectory metrics, polarization indices and distribution divergences.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{derive_stance, OceanVector, Stance};

pub const BIN_EDGES: [f64; 6] = [-1.0, -0.6, -0.2, 0.2, 0.6, 1.0];
pub const BIN_CENTERS: [f64; 5] = [-0.8, -0.4, 0.0, 0.4, 0.8];
pub const EXTREMITY_THRESHOLD: f64 = 0.6;
pub const ER_ALPHA: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("metric needs a non-empty population")]
    Empty,
    #[error("bimodality needs at least 4 values, got {0}")]
    TooFew(usize),
    #[error("inputs are misaligned: {0}")]
    Misaligned(String),
    #[error("distribution `{0}` has no mass")]
    ZeroMass(&'static str),
    #[error("invalid distribution: {0}")]
    Invalid(String),
}

pub fn bin_index(b: f64) -> usize {
    BIN_EDGES[1..5].iter().filter(|e| b >= **e).count()
}

pub fn histogram(values: &[f64]) -> [usize; 5] {
    let mut h = [0; 5];
    for v in values {
        h[bin_index(*v)] += 1;
    }
    h
}

pub fn bin_masses(values: &[f64]) -> Result<[f64; 5], MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len() as f64;
    Ok(histogram(values).map(|c| c as f64 / n))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divide by N).
pub fn polarization_variance(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok(0.0);
    }
    let m = mean(values);
    Ok(values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64)
}

fn entropy_of(masses: &[f64]) -> f64 {
    -masses.iter().filter(|p| **p > 0.0).map(|p| p * p.log2()).sum::<f64>()
}

pub fn shannon_entropy_5bin(values: &[f64]) -> Result<f64, MetricsError> {
    Ok(entropy_of(&bin_masses(values)?))
}

pub fn extremization(values: &[f64], threshold: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|v| v.abs() >= threshold).count() as f64 / values.len() as f64
}

/// Mean over agents of the mean absolute belief across topics.
pub fn mean_radicalisation(agents: &[BTreeMap<String, f64>]) -> Result<f64, MetricsError> {
    if agents.is_empty() || agents.iter().any(BTreeMap::is_empty) {
        return Err(MetricsError::Empty);
    }
    Ok(agents
        .iter()
        .map(|a| a.values().map(|v| v.abs()).sum::<f64>() / a.len() as f64)
        .sum::<f64>()
        / agents.len() as f64)
}

pub fn anchor_drift(beliefs: &[f64], anchors: &[f64]) -> Result<f64, MetricsError> {
    if beliefs.len() != anchors.len() {
        return Err(MetricsError::Misaligned(format!("{} beliefs vs {} anchors", beliefs.len(), anchors.len())));
    }
    if beliefs.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(beliefs.iter().zip(anchors).map(|(b, m)| (b - m).abs()).sum::<f64>() / beliefs.len() as f64)
}

pub fn esteban_ray_masses(masses: &[f64; 5], alpha: f64) -> f64 {
    let mut er = 0.0;
    for c in 0..5 {
        for d in 0..5 {
            er += masses[c].powf(1.0 + alpha) * masses[d] * (BIN_CENTERS[c] - BIN_CENTERS[d]).abs();
        }
    }
    er
}

pub fn esteban_ray(values: &[f64], alpha: f64) -> Result<f64, MetricsError> {
    Ok(esteban_ray_masses(&bin_masses(values)?, alpha))
}

/// Sarle's coefficient with bias-corrected skewness and excess kurtosis.
/// `Ok(None)` for a constant population, where both moments are undefined.
pub fn bimodality(values: &[f64]) -> Result<Option<f64>, MetricsError> {
    let n = values.len();
    if n < 4 {
        return Err(MetricsError::TooFew(n));
    }
    let nf = n as f64;
    let m = mean(values);
    let moment = |k: i32| values.iter().map(|v| (v - m).powi(k)).sum::<f64>() / nf;
    let (m2, m3, m4) = (moment(2), moment(3), moment(4));
    if m2 <= 1e-15 {
        return Ok(None);
    }
    let g1 = m3 / m2.powf(1.5);
    let g2 = m4 / (m2 * m2) - 3.0;
    let skew = (nf * (nf - 1.0)).sqrt() / (nf - 2.0) * g1;
    let kurt = (nf - 1.0) / ((nf - 2.0) * (nf - 3.0)) * ((nf + 1.0) * g2 + 6.0);
    Ok(Some((skew * skew + 1.0) / (kurt + 3.0 * (nf - 1.0).powi(2) / ((nf - 2.0) * (nf - 3.0)))))
}

/// Mean across the five traits of the cross-agent population variance.
pub fn personality_diversity(ocean: &[OceanVector]) -> Result<f64, MetricsError> {
    if ocean.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut total = 0.0;
    for t in 0..5 {
        let col: Vec<f64> = ocean.iter().map(|o| o.to_array()[t]).collect();
        total += polarization_variance(&col)?;
    }
    Ok(total / 5.0)
}

fn mean_count(counts: &[usize]) -> Result<f64, MetricsError> {
    if counts.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(counts.iter().sum::<usize>() as f64 / counts.len() as f64)
}

/// Mean per-agent number of distinct rationale tags.
pub fn rationale_tag_diversity(distinct_per_agent: &[usize]) -> Result<f64, MetricsError> {
    mean_count(distinct_per_agent)
}

/// Mean per-agent reflection-log length.
pub fn reflection_activity(per_agent: &[usize]) -> Result<f64, MetricsError> {
    mean_count(per_agent)
}

/// Topic with the highest mean |score|; ties go to the smaller topic id.
pub fn dominant_topic(agents: &[BTreeMap<String, f64>]) -> Option<String> {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for a in agents {
        for (t, v) in a {
            let e = sums.entry(t).or_default();
            e.0 += v.abs();
            e.1 += 1;
        }
    }
    let mut best: Option<(&str, f64)> = None;
    for (t, (s, c)) in sums {
        let m = s / c as f64;
        if best.is_none_or(|(_, bm)| m > bm) {
            best = Some((t, m));
        }
    }
    best.map(|(t, _)| t.to_string())
}

/// Per-agent state consumed by [`compute_tick_metrics`].
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSnapshot {
    pub beliefs: BTreeMap<String, f64>,
    pub anchors: BTreeMap<String, f64>,
    pub ocean: OceanVector,
    pub rho: f64,
    pub distinct_rationale_tags: usize,
    pub reflections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickMetrics {
    pub tick: u32,
    pub dominant_topic: String,
    pub polarization_variance: f64,
    pub esteban_ray: f64,
    pub shannon_entropy: f64,
    pub extremization: f64,
    pub mean_radicalisation: f64,
    pub bimodality: Option<f64>,
    pub personality_diversity: f64,
    pub rationale_tag_diversity: f64,
    pub reflection_activity: f64,
    pub mean_rho: f64,
    pub mean_anchor_drift: f64,
    pub stance_counts: BTreeMap<Stance, usize>,
    pub histogram: [usize; 5],
}

pub fn compute_tick_metrics(tick: u32, agents: &[AgentSnapshot]) -> Result<TickMetrics, MetricsError> {
    if agents.is_empty() {
        return Err(MetricsError::Empty);
    }
    let beliefs: Vec<BTreeMap<String, f64>> = agents.iter().map(|a| a.beliefs.clone()).collect();
    let topic = dominant_topic(&beliefs).ok_or(MetricsError::Empty)?;
    let mut dom = Vec::with_capacity(agents.len());
    let mut anc = Vec::with_capacity(agents.len());
    for a in agents {
        let b = *a
            .beliefs
            .get(&topic)
            .ok_or_else(|| MetricsError::Misaligned(format!("agent lacks topic {topic}")))?;
        dom.push(b);
        anc.push(a.anchors.get(&topic).copied().unwrap_or(b));
    }
    let mut stance_counts: BTreeMap<Stance, usize> = Stance::ALL.into_iter().map(|s| (s, 0)).collect();
    for a in agents {
        let m = a.beliefs.values().sum::<f64>() / a.beliefs.len().max(1) as f64;
        *stance_counts.entry(derive_stance(m)).or_default() += 1;
    }
    let ocean: Vec<OceanVector> = agents.iter().map(|a| a.ocean).collect();
    let bimodality = match bimodality(&dom) {
        Ok(b) => b,
        Err(MetricsError::TooFew(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(TickMetrics {
        tick,
        polarization_variance: polarization_variance(&dom)?,
        esteban_ray: esteban_ray(&dom, ER_ALPHA)?,
        shannon_entropy: shannon_entropy_5bin(&dom)?,
        extremization: extremization(&dom, EXTREMITY_THRESHOLD),
        mean_radicalisation: mean_radicalisation(&beliefs)?,
        bimodality,
        personality_diversity: personality_diversity(&ocean)?,
        rationale_tag_diversity: rationale_tag_diversity(&agents.iter().map(|a| a.distinct_rationale_tags).collect::<Vec<_>>())?,
        reflection_activity: reflection_activity(&agents.iter().map(|a| a.reflections).collect::<Vec<_>>())?,
        mean_rho: agents.iter().map(|a| a.rho).sum::<f64>() / agents.len() as f64,
        mean_anchor_drift: anchor_drift(&dom, &anc)?,
        stance_counts,
        histogram: histogram(&dom),
        dominant_topic: topic,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub labels: Vec<String>,
    pub masses: Vec<f64>,
}

impl Distribution {
    /// Validates and normalizes to unit mass. An all-zero vector is kept
    /// as-is and rejected later by the divergence functions.
    pub fn new(labels: Vec<String>, masses: Vec<f64>) -> Result<Self, MetricsError> {
        if labels.len() != masses.len() {
            return Err(MetricsError::Invalid(format!("{} labels vs {} masses", labels.len(), masses.len())));
        }
        if let Some(m) = masses.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(MetricsError::Invalid(format!("mass {m}")));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(l) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(MetricsError::Invalid(format!("duplicate label `{l}`")));
        }
        let total: f64 = masses.iter().sum();
        let masses = if total > 0.0 { masses.iter().map(|m| m / total).collect() } else { masses };
        Ok(Distribution { labels, masses })
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Result<Self, MetricsError> {
        let (l, m): (Vec<String>, Vec<f64>) = pairs.into_iter().map(|(k, v)| (k.into(), v)).unzip();
        Self::new(l, m)
    }

    fn mass(&self, label: &str) -> f64 {
        self.labels.iter().position(|l| l == label).map(|i| self.masses[i]).unwrap_or(0.0)
    }

    fn total(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Union-aligned mass vectors, `p`'s labels first.
pub fn align(p: &Distribution, q: &Distribution) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    if p.total() <= 0.0 {
        return Err(MetricsError::ZeroMass("p"));
    }
    if q.total() <= 0.0 {
        return Err(MetricsError::ZeroMass("q"));
    }
    let mut labels: Vec<&str> = p.labels.iter().map(String::as_str).collect();
    for l in &q.labels {
        if !labels.contains(&l.as_str()) {
            labels.push(l);
        }
    }
    Ok((labels.iter().map(|l| p.mass(l)).collect(), labels.iter().map(|l| q.mass(l)).collect()))
}

pub fn weighted_jaccard(p: &Distribution, q: &Distribution) -> Result<f64, MetricsError> {
    let (a, b) = align(p, q)?;
    let mn: f64 = a.iter().zip(&b).map(|(x, y)| x.min(*y)).sum();
    let mx: f64 = a.iter().zip(&b).map(|(x, y)| x.max(*y)).sum();
    Ok(mn / mx)
}

pub fn cosine_similarity(p: &Distribution, q: &Distribution) -> Result<f64, MetricsError> {
    let (a, b) = align(p, q)?;
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((dot / (na * nb)).min(1.0))
}

/// Square root of the natural-log Jensen–Shannon divergence.
pub fn jensen_shannon(p: &Distribution, q: &Distribution) -> Result<f64, MetricsError> {
    let (a, b) = align(p, q)?;
    let kl = |x: &[f64], m: &[f64]| -> f64 {
        x.iter().zip(m).filter(|(xi, _)| **xi > 0.0).map(|(xi, mi)| xi * (xi / mi).ln()).sum()
    };
    let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
    let js = 0.5 * kl(&a, &m) + 0.5 * kl(&b, &m);
    Ok(js.max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub dimension: String,
    pub weighted_jaccard: f64,
    pub cosine_similarity: f64,
    pub jsd: f64,
}

pub fn divergence_row(dimension: &str, p: &Distribution, q: &Distribution) -> Result<DivergenceRow, MetricsError> {
    Ok(DivergenceRow {
        dimension: dimension.to_string(),
        weighted_jaccard: weighted_jaccard(p, q)?,
        cosine_similarity: cosine_similarity(p, q)?,
        jsd: jensen_shannon(p, q)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution as _, Normal};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn variance_examples() {
        assert_eq!(polarization_variance(&[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(polarization_variance(&[0.3; 4]).unwrap(), 0.0);
        assert!(close(polarization_variance(&[0.5, 0.1, -0.3]).unwrap(), 0.1067, 5e-5));
        assert_eq!(polarization_variance(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn entropy_examples() {
        let uniform = [-0.8, -0.4, 0.0, 0.4, 0.8];
        assert!(close(shannon_entropy_5bin(&uniform).unwrap(), 5f64.log2(), 1e-12));
        assert_eq!(shannon_entropy_5bin(&[0.1, 0.0, -0.1]).unwrap(), 0.0);
        assert!(close(shannon_entropy_5bin(&[-0.9, -0.9, -0.5, -0.5]).unwrap(), 1.0, 1e-12));
    }

    #[test]
    fn bin_edges() {
        assert_eq!(bin_index(-1.0), 0);
        assert_eq!(bin_index(-0.6), 1);
        assert_eq!(bin_index(0.2), 3);
        assert_eq!(bin_index(0.6), 4);
        assert_eq!(bin_index(1.0), 4);
    }

    #[test]
    fn extremization_and_radicalisation() {
        assert_eq!(extremization(&[0.7, -0.6, 0.1, 0.0], 0.6), 0.5);
        assert_eq!(extremization(&[0.0; 3], 0.6), 0.0);
        assert_eq!(extremization(&[1.0, -1.0], 0.6), 1.0);
        let one: BTreeMap<String, f64> = [("a".to_string(), 0.4), ("b".to_string(), -0.8)].into_iter().collect();
        assert!(close(mean_radicalisation(&[one]).unwrap(), 0.6, 1e-12));
        let z: BTreeMap<String, f64> = [("a".to_string(), 0.0)].into_iter().collect();
        assert_eq!(mean_radicalisation(&[z.clone(), z]).unwrap(), 0.0);
    }

    #[test]
    fn drift_examples() {
        assert_eq!(anchor_drift(&[0.2, 0.3], &[0.2, 0.3]).unwrap(), 0.0);
        assert_eq!(anchor_drift(&[1.0], &[-1.0]).unwrap(), 2.0);
        assert!(close(anchor_drift(&[0.5, -0.2], &[0.3, 0.2]).unwrap(), 0.3, 1e-12));
        assert!(matches!(anchor_drift(&[0.1], &[]), Err(MetricsError::Misaligned(_))));
    }

    #[test]
    fn esteban_ray_examples() {
        assert_eq!(esteban_ray(&[0.9; 5], 1.0).unwrap(), 0.0);
        assert!(close(esteban_ray_masses(&[0.5, 0.0, 0.0, 0.0, 0.5], 1.0), 0.4, 1e-12));
    }

    #[test]
    fn bimodality_examples() {
        let two: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        // g1 = 0 and g2 = -2 for a symmetric two-point mass
        let n = 100.0f64;
        let g2c = (n - 1.0) / ((n - 2.0) * (n - 3.0)) * ((n + 1.0) * -2.0 + 6.0);
        let expect = 1.0 / (g2c + 3.0 * (n - 1.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0)));
        let got = bimodality(&two).unwrap().unwrap();
        assert!(close(got, expect, 1e-12));
        assert!(got > 0.9);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let g: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
        assert!(close(bimodality(&g).unwrap().unwrap(), 1.0 / 3.0, 0.03));
        assert_eq!(bimodality(&[0.1, 0.2, 0.3]), Err(MetricsError::TooFew(3)));
        assert_eq!(bimodality(&[0.5; 6]).unwrap(), None);
    }

    #[test]
    fn aggregate_examples() {
        let o = OceanVector::new(0.3, 0.4, 0.5, 0.6, 0.7);
        assert_eq!(personality_diversity(&[o, o, o]).unwrap(), 0.0);
        assert_eq!(rationale_tag_diversity(&[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(reflection_activity(&[7, 7]).unwrap(), 7.0);
    }

    fn table8_sentiment() -> (Distribution, Distribution) {
        let l = ["negative", "neutral", "positive"];
        (
            Distribution::from_pairs(l.into_iter().zip([0.3317, 0.4020, 0.2663])).unwrap(),
            Distribution::from_pairs(l.into_iter().zip([0.9700, 0.0, 0.0300])).unwrap(),
        )
    }

    #[test]
    fn sentiment_divergences() {
        let (p, q) = table8_sentiment();
        assert!(close(weighted_jaccard(&p, &q).unwrap(), 0.2207, 5e-4));
        assert!(close(cosine_similarity(&p, &q).unwrap(), 0.5805, 5e-4));
        assert!(close(jensen_shannon(&p, &q).unwrap(), 0.5246, 5e-4));
    }

    #[test]
    fn divergence_errors_and_alignment() {
        let z = Distribution::from_pairs([("a", 0.0)]).unwrap();
        let p = Distribution::from_pairs([("a", 1.0)]).unwrap();
        assert_eq!(weighted_jaccard(&z, &p), Err(MetricsError::ZeroMass("p")));
        assert_eq!(jensen_shannon(&p, &z), Err(MetricsError::ZeroMass("q")));
        let q = Distribution::from_pairs([("b", 1.0)]).unwrap();
        assert_eq!(weighted_jaccard(&p, &q).unwrap(), 0.0);
        assert!(close(jensen_shannon(&p, &q).unwrap(), 2f64.ln().sqrt(), 1e-12));
        assert!(Distribution::from_pairs([("a", -0.1)]).is_err());
    }

    #[test]
    fn dominant_topic_tie_goes_to_first_id() {
        let a: BTreeMap<String, f64> = [("x".to_string(), 0.5), ("w".to_string(), -0.5)].into_iter().collect();
        assert_eq!(dominant_topic(&[a]).unwrap(), "w");
    }

    proptest! {
        #[test]
        fn metric_domains(values in prop::collection::vec(-1.0f64..=1.0, 1..60)) {
            let h = shannon_entropy_5bin(&values).unwrap();
            prop_assert!((0.0..=5f64.log2() + 1e-12).contains(&h));
            prop_assert!(polarization_variance(&values).unwrap() >= 0.0);
            prop_assert!(esteban_ray(&values, 1.0).unwrap() >= 0.0);
            let mut rev = values.clone();
            rev.reverse();
            prop_assert_eq!(histogram(&rev), histogram(&values));
            prop_assert!((polarization_variance(&rev).unwrap() - polarization_variance(&values).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn extremization_monotone(values in prop::collection::vec(-1.0f64..=1.0, 1..40), t1 in 0.01f64..=1.0, t2 in 0.01f64..=1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(extremization(&values, hi) <= extremization(&values, lo));
        }

        #[test]
        fn divergence_properties(p in prop::collection::vec(0.0f64..1.0, 4), q in prop::collection::vec(0.0f64..1.0, 4)) {
            prop_assume!(p.iter().sum::<f64>() > 1e-6 && q.iter().sum::<f64>() > 1e-6);
            let labels: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
            let p = Distribution::new(labels.clone(), p).unwrap();
            let q = Distribution::new(labels, q).unwrap();
            let wj = weighted_jaccard(&p, &q).unwrap();
            let cs = cosine_similarity(&p, &q).unwrap();
            let js = jensen_shannon(&p, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&wj) && (0.0..=1.0).contains(&cs));
            prop_assert!((0.0..=2f64.ln().sqrt() + 1e-12).contains(&js));
            prop_assert!((wj - weighted_jaccard(&q, &p).unwrap()).abs() < 1e-12);
            prop_assert!((cs - cosine_similarity(&q, &p).unwrap()).abs() < 1e-12);
            prop_assert!((js - jensen_shannon(&q, &p).unwrap()).abs() < 1e-12);
            prop_assert!((weighted_jaccard(&p, &p).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((cosine_similarity(&p, &p).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!(jensen_shannon(&p, &p).unwrap() < 1e-7);
        }
    }
}
