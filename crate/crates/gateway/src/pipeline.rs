//! Config-to-engine assembly and the batch commands built on it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anchorsim_core::cognition::{ExternalReasoner, MockReasoner, ReasoningProvider};
use anchorsim_core::dynamics::RhoPolicy;
use anchorsim_core::engine::log::EventLog;
use anchorsim_core::engine::{Engine, EngineSettings, EngineSnapshot};
use anchorsim_core::metrics::{compute_tick_metrics, divergence_row, AgentSnapshot, DivergenceRow, Distribution, TickMetrics};
use anchorsim_core::profiles::{default_priors, generate_pool, AgentProfile, TemplateTextProvider};
use anchorsim_core::sampling::{sample, SamplingReport};
use anchorsim_core::scenario::{parse_scenario, KeywordDispatcher, Scenario, ScenarioSource};
use anchorsim_core::socialnet::{build_network, identify_kols, TrustGraph};
use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{PopulationSpec, ProviderSpec, RunConfig, ScenarioSpec};
use crate::persist::{self, EventLogWriter};

/// Everything a run needs before the first tick.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub case: String,
    pub pool: Vec<AgentProfile>,
    /// Agents that take part in the run (the sampled cohort, or the pool).
    pub cohort: Vec<AgentProfile>,
    /// Trust graph restricted to the cohort.
    pub graph: TrustGraph,
    pub kols: BTreeSet<String>,
    pub sampling: Option<SamplingReport>,
    pub settings: EngineSettings,
}

pub fn load_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    let dispatcher = KeywordDispatcher::default();
    let s = match spec {
        ScenarioSpec::Fixture(name) => parse_scenario(ScenarioSource::Fixture(name), &dispatcher)?,
        ScenarioSpec::Text(text) => parse_scenario(ScenarioSource::Text(text), &dispatcher)?,
        ScenarioSpec::File(path) => {
            let doc = std::fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
            parse_scenario(ScenarioSource::Document(&doc), &dispatcher)?
        }
        ScenarioSpec::Inline(s) => {
            s.validate()?;
            s.clone()
        }
    };
    Ok(s)
}

pub fn provider(spec: &ProviderSpec) -> Result<Arc<dyn ReasoningProvider>> {
    Ok(match spec {
        ProviderSpec::Mock => Arc::new(MockReasoner),
        ProviderSpec::External { name } => Arc::new(ExternalReasoner::from_env(name).map_err(|e| anyhow!(e))?),
    })
}

pub fn induced_subgraph(graph: &TrustGraph, members: &BTreeSet<String>) -> TrustGraph {
    let mut g = TrustGraph::new(graph.nodes.iter().filter(|n| members.contains(*n)).cloned().collect());
    g.edges = graph
        .edges
        .iter()
        .filter(|e| members.contains(&e.source) && members.contains(&e.target))
        .cloned()
        .collect();
    g
}

/// The run seed drives pool generation, network construction and the engine.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let scenario = load_scenario(&cfg.scenario)?;
    let case = cfg.case.clone().unwrap_or_else(|| match &cfg.scenario {
        ScenarioSpec::Fixture(name) => name.clone(),
        _ => scenario.title.clone(),
    });
    let pool = match &cfg.population {
        PopulationSpec::Pool(path) => persist::load_pool(path).with_context(|| format!("loading pool {}", path.display()))?,
        PopulationSpec::Generate(g) => {
            let mut g = g.clone();
            g.seed = cfg.seed;
            generate_pool(&g, &default_priors(), &TemplateTextProvider { seed: cfg.seed })?.profiles
        }
    };
    let mut net_cfg = cfg.network.clone();
    net_cfg.seed = cfg.seed;
    let built = build_network(&pool, &case, &net_cfg)?;
    let kols = identify_kols(&pool, net_cfg.kol_fraction);
    let (cohort, graph, sampling) = match &cfg.sampling {
        None => (pool.clone(), built.graph, None),
        Some(s) => {
            let c = sample(&pool, &scenario, s, Some(&built.graph))?;
            let members: BTreeSet<String> = c.members.iter().cloned().collect();
            let cohort = pool.iter().filter(|p| members.contains(&p.id)).cloned().collect();
            (cohort, induced_subgraph(&built.graph, &members), Some(c.report))
        }
    };
    let settings = EngineSettings {
        seed: cfg.seed,
        dynamics: cfg.dynamics.clone(),
        snapshot_stride: cfg.snapshot_stride,
        ..EngineSettings::default()
    };
    Ok(Prepared {
        scenario,
        case,
        pool,
        cohort,
        graph,
        kols,
        sampling,
        settings,
    })
}

pub fn build_engine(cfg: &RunConfig) -> Result<(Engine, Prepared)> {
    let prep = prepare(cfg)?;
    let engine = Engine::new(
        prep.cohort.clone(),
        prep.graph.clone(),
        prep.scenario.clone(),
        prep.settings.clone(),
        provider(&cfg.provider)?,
    )?;
    Ok((engine, prep))
}

/// Writes the pre-run artifacts of a run directory.
pub fn persist_inputs(dir: &Path, cfg: &RunConfig, prep: &Prepared) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(persist::CONFIG_FILE), cfg.to_toml()?)?;
    persist::save_pool(&dir.join(persist::POOL_FILE), &prep.pool)?;
    persist::save_graph(&dir.join(persist::GRAPH_FILE), &prep.graph)?;
    if let Some(r) = &prep.sampling {
        std::fs::write(dir.join("cohort.json"), serde_json::to_string_pretty(r)? + "\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub dir: Option<PathBuf>,
    pub metrics: Vec<TickMetrics>,
    pub log: EventLog,
}

/// Runs to completion, streaming the event log into `out` when given.
pub fn run_batch(cfg: &RunConfig, out: Option<&Path>) -> Result<BatchOutcome> {
    let (mut engine, prep) = build_engine(cfg)?;
    let mut writer = match out {
        Some(dir) => {
            persist_inputs(dir, cfg, &prep)?;
            Some(EventLogWriter::create(&dir.join(persist::EVENTS_FILE), engine.header())?)
        }
        None => None,
    };
    while !engine.is_finished() {
        let report = engine.step()?;
        if let (Some(w), Some(dir)) = (writer.as_mut(), out) {
            w.append_all(&report.records)?;
            if let Some(snap) = &report.snapshot {
                persist::save_snapshot(&persist::snapshot_path(dir, snap.tick), snap)?;
            }
        }
    }
    if let (Some(w), Some(dir)) = (writer.as_mut(), out) {
        w.sync()?;
        persist::save_metrics(&dir.join(persist::METRICS_FILE), engine.metrics())?;
    }
    let result = engine.into_result();
    Ok(BatchOutcome {
        dir: out.map(Path::to_path_buf),
        metrics: result.metrics,
        log: result.log,
    })
}

pub fn metrics_from_snapshot(snap: &EngineSnapshot) -> Result<TickMetrics> {
    let agents: Vec<AgentSnapshot> = snap
        .agents
        .iter()
        .map(|a| AgentSnapshot {
            beliefs: a.state.scores(),
            anchors: a.state.anchors.clone(),
            ocean: a.profile.ocean,
            rho: a.state.rho,
            distinct_rationale_tags: a.tags.len(),
            reflections: a.memory.reflections.len(),
        })
        .collect();
    Ok(compute_tick_metrics(snap.tick, &agents)?)
}

/// Dimension name to label masses, e.g. `{"sentiment": {"positive": 0.4, ...}}`.
pub type DiscourseDocument = BTreeMap<String, BTreeMap<String, f64>>;

/// One divergence row per dimension present in both documents.
pub fn compare_discourse(p: &DiscourseDocument, q: &DiscourseDocument) -> Result<Vec<DivergenceRow>> {
    let mut rows = Vec::new();
    for (dim, pm) in p {
        let Some(qm) = q.get(dim) else { continue };
        let pd = Distribution::from_pairs(pm.iter().map(|(k, v)| (k.clone(), *v)))?;
        let qd = Distribution::from_pairs(qm.iter().map(|(k, v)| (k.clone(), *v)))?;
        rows.push(divergence_row(dim, &pd, &qd).with_context(|| format!("dimension `{dim}`"))?);
    }
    if rows.is_empty() {
        return Err(anyhow!("the documents share no dimension"));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(values: &[f64]) -> MeanSd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanSd { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub rho_policy: RhoPolicy,
    pub polarization_variance: MeanSd,
    pub esteban_ray: MeanSd,
    pub shannon_entropy: MeanSd,
    pub extremization: MeanSd,
    pub mean_radicalisation: MeanSd,
    pub finals: Vec<TickMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub base: VariantSummary,
    pub anchored: VariantSummary,
    /// Seeds where the anchored run ends more polarized than the base run.
    pub anchored_wins: usize,
}

fn summarize(variant: &str, rho_policy: RhoPolicy, finals: Vec<TickMetrics>) -> VariantSummary {
    let col = |f: fn(&TickMetrics) -> f64| MeanSd::of(&finals.iter().map(f).collect::<Vec<_>>());
    VariantSummary {
        variant: variant.into(),
        rho_policy,
        polarization_variance: col(|m| m.polarization_variance),
        esteban_ray: col(|m| m.esteban_ray),
        shannon_entropy: col(|m| m.shannon_entropy),
        extremization: col(|m| m.extremization),
        mean_radicalisation: col(|m| m.mean_radicalisation),
        finals,
    }
}

/// Base (rho = 0) versus anchored runs over the same seeds. The anchored
/// variant uses the configured rho policy, or OCEAN-derived rho when the
/// config itself sets rho to 0.
pub fn ablate(cfg: &RunConfig, seeds: &[u64]) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(anyhow!("ablation needs at least one seed"));
    }
    let base_policy = RhoPolicy::Constant(0.0);
    let anchored_policy = match cfg.dynamics.rho_policy {
        RhoPolicy::Constant(0.0) => RhoPolicy::Ocean,
        p => p,
    };
    let final_metrics = |seed: u64, policy: &RhoPolicy| -> Result<TickMetrics> {
        let mut c = cfg.clone();
        c.seed = seed;
        c.dynamics.rho_policy = *policy;
        let out = run_batch(&c, None)?;
        out.metrics.last().cloned().ok_or_else(|| anyhow!("run produced no metrics"))
    };
    let mut base = Vec::new();
    let mut anchored = Vec::new();
    for &s in seeds {
        base.push(final_metrics(s, &base_policy)?);
        anchored.push(final_metrics(s, &anchored_policy)?);
    }
    let anchored_wins = base
        .iter()
        .zip(&anchored)
        .filter(|(b, a)| a.polarization_variance > b.polarization_variance)
        .count();
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        base: summarize("base", base_policy, base),
        anchored: summarize("anchored", anchored_policy, anchored),
        anchored_wins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_sd_sample_form() {
        let m = MeanSd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m.mean - 2.5).abs() < 1e-12);
        assert!((m.sd - 1.2909944487358056).abs() < 1e-12);
        assert_eq!(MeanSd::of(&[0.7]).sd, 0.0);
    }

    #[test]
    fn discourse_rows_follow_shared_dimensions() {
        let doc = |pairs: &[(&str, &[(&str, f64)])]| -> DiscourseDocument {
            pairs
                .iter()
                .map(|(d, m)| (d.to_string(), m.iter().map(|(k, v)| (k.to_string(), *v)).collect()))
                .collect()
        };
        let p = doc(&[("sentiment", &[("pos", 0.5), ("neg", 0.5)]), ("emotion", &[("joy", 1.0)])]);
        let q = doc(&[("sentiment", &[("pos", 0.5), ("neg", 0.5)])]);
        let rows = compare_discourse(&p, &q).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].weighted_jaccard - 1.0).abs() < 1e-12);
        assert!(rows[0].jsd.abs() < 1e-9);
        assert!(compare_discourse(&doc(&[("a", &[("x", 1.0)])]), &q).is_err());
    }
}
