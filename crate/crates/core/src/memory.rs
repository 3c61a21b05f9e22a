//! Four-namespace agent memory: episodic window, semantic store, procedural
//! routines and the reflection log, plus the anchor strategies that feed the
//! update rule.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{clip_unit, reflection_confidence, AnchorStrategy, DynamicsConfig};
use crate::text::tokenize;

pub const DEFAULT_EPISODIC_CAPACITY: usize = 20;
pub const DEFAULT_EMBEDDING_DIM: usize = 256;
pub const DEFAULT_RETRIEVAL_K: usize = 4;
pub const EMPTY_REFLECTION: &str = "(no activity)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodicEntry {
    pub tick: u32,
    pub sender: String,
    pub text: String,
}

/// FIFO window of received messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicWindow {
    capacity: usize,
    entries: VecDeque<EpisodicEntry>,
}

impl EpisodicWindow {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        EpisodicWindow {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(&mut self, entry: EpisodicEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn iter(&self) -> impl Iterator<Item = &EpisodicEntry> {
        self.entries.iter()
    }
}

impl Default for EpisodicWindow {
    fn default() -> Self {
        EpisodicWindow::new(DEFAULT_EPISODIC_CAPACITY)
    }
}

/// Text embedding backend for the semantic store.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Signed feature hashing over lowercase word tokens, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder {
            dim: DEFAULT_EMBEDDING_DIM,
            seed: 0x5eed,
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

impl HashedEmbedder {
    /// Bucket and sign for one token.
    pub fn slot(&self, token: &str) -> (usize, f64) {
        let h = fnv1a(self.seed, token.as_bytes());
        let bucket = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        (bucket, sign)
    }
}

impl TextEmbedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in tokenize(text) {
            let (i, s) = self.slot(&tok);
            v[i] += s;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMemoryEntry {
    pub content: String,
    pub topic: String,
    pub stance_score: f64,
    pub rationale_tag: String,
    pub source_platform: String,
    pub importance: f64,
    pub embedding: Vec<f64>,
}

/// Unbounded store with exact cosine top-k search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticStore {
    dim: usize,
    entries: Vec<ProfileMemoryEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieved<'a> {
    pub index: usize,
    pub similarity: f64,
    pub entry: &'a ProfileMemoryEntry,
}

impl SemanticStore {
    pub fn new(dim: usize) -> Self {
        SemanticStore {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ProfileMemoryEntry] {
        &self.entries
    }

    /// Embeds `content` and appends an entry. Importance and score are clamped
    /// into their domains.
    pub fn insert(
        &mut self,
        embedder: &dyn TextEmbedder,
        content: impl Into<String>,
        topic: impl Into<String>,
        stance_score: f64,
        rationale_tag: impl Into<String>,
        source_platform: impl Into<String>,
        importance: f64,
    ) -> usize {
        let content = content.into();
        let mut embedding = embedder.embed(&content);
        embedding.resize(self.dim, 0.0);
        self.entries.push(ProfileMemoryEntry {
            content,
            topic: topic.into(),
            stance_score: clip_unit(stance_score),
            rationale_tag: rationale_tag.into(),
            source_platform: source_platform.into(),
            importance: importance.clamp(0.0, 1.0),
            embedding,
        });
        self.entries.len() - 1
    }

    /// Top-`k` entries by cosine similarity to the query.
    ///
    /// Ties: higher importance first, then lower insertion index.
    pub fn retrieve(&self, embedder: &dyn TextEmbedder, query: &str, k: usize) -> Vec<Retrieved<'_>> {
        self.retrieve_where(embedder, query, k, |_| true)
    }

    pub fn retrieve_where<F>(&self, embedder: &dyn TextEmbedder, query: &str, k: usize, filter: F) -> Vec<Retrieved<'_>>
    where
        F: Fn(&ProfileMemoryEntry) -> bool,
    {
        let q = embedder.embed(query);
        let mut hits: Vec<Retrieved<'_>> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| filter(e))
            .map(|(index, entry)| Retrieved {
                index,
                similarity: cosine(&q, &entry.embedding),
                entry,
            })
            .collect();
        hits.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then(b.entry.importance.total_cmp(&a.entry.importance))
                .then(a.index.cmp(&b.index))
        });
        hits.truncate(k.max(1));
        hits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emotion {
    Joy,
    Fear,
    Anger,
    Sadness,
    Disgust,
    Surprise,
    Neutral,
}

impl Emotion {
    pub const ALL: [Emotion; 7] = [
        Emotion::Joy,
        Emotion::Fear,
        Emotion::Anger,
        Emotion::Sadness,
        Emotion::Disgust,
        Emotion::Surprise,
        Emotion::Neutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Joy => "joy",
            Emotion::Fear => "fear",
            Emotion::Anger => "anger",
            Emotion::Sadness => "sadness",
            Emotion::Disgust => "disgust",
            Emotion::Surprise => "surprise",
            Emotion::Neutral => "neutral",
        }
    }

    pub fn parse(s: &str) -> Option<Emotion> {
        let s = s.trim().to_ascii_lowercase();
        let s = match s.as_str() {
            "angry" => "anger",
            "happy" | "happiness" => "joy",
            "sad" => "sadness",
            "afraid" | "scared" => "fear",
            other => other,
        };
        Emotion::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Procedural routine `<preconditions, base priority, emotion modulation>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Routine {
    pub name: String,
    pub preconditions: BTreeMap<String, bool>,
    pub base_priority: f64,
    #[serde(default)]
    pub emotion_modulation: BTreeMap<Emotion, f64>,
}

impl Routine {
    pub fn eligible(&self, state: &BTreeMap<String, bool>) -> bool {
        self.preconditions
            .iter()
            .all(|(k, want)| state.get(k).copied().unwrap_or(false) == *want)
    }

    pub fn priority(&self, emotion: Emotion) -> f64 {
        self.base_priority * self.emotion_modulation.get(&emotion).copied().unwrap_or(1.0)
    }
}

/// Highest `base_priority * modulation(emotion)` among eligible routines.
/// Ties keep the earlier routine.
pub fn select_routine<'a>(routines: &'a [Routine], state: &BTreeMap<String, bool>, emotion: Emotion) -> Option<&'a Routine> {
    let mut best: Option<(&Routine, f64)> = None;
    for r in routines.iter().filter(|r| r.eligible(state)) {
        let p = r.priority(emotion);
        match best {
            Some((_, bp)) if bp >= p => {}
            _ => best = Some((r, p)),
        }
    }
    best.map(|(r, _)| r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionEntry {
    pub tick: u32,
    pub summary: String,
    pub deltas: BTreeMap<String, f64>,
    pub confidence: f64,
}

/// Message as seen by the reflection step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceivedMessage {
    pub sender: String,
    pub sender_group: String,
    pub text: String,
}

/// Deterministic self-reflection for one tick.
pub fn reflect(tick: u32, received: &[ReceivedMessage], deltas: &BTreeMap<String, f64>) -> ReflectionEntry {
    let mut per_group: BTreeMap<&str, usize> = BTreeMap::new();
    for m in received {
        *per_group.entry(m.sender_group.as_str()).or_default() += 1;
    }
    let mut parts = Vec::new();
    if !per_group.is_empty() {
        let groups = per_group
            .iter()
            .map(|(g, n)| format!("{n} from {g}"))
            .collect::<Vec<_>>()
            .join(", ");
        parts.push(format!("heard {groups}"));
    }
    let moved = deltas
        .iter()
        .filter(|(_, d)| **d != 0.0)
        .map(|(t, d)| format!("{t} {}", if *d > 0.0 { '+' } else { '-' }))
        .collect::<Vec<_>>();
    if !moved.is_empty() {
        parts.push(format!("shifted {}", moved.join(", ")));
    }
    let summary = if parts.is_empty() {
        EMPTY_REFLECTION.to_string()
    } else {
        format!("tick {tick}: {}", parts.join("; "))
    };
    ReflectionEntry {
        tick,
        summary,
        deltas: deltas.clone(),
        confidence: reflection_confidence(deltas.values().copied()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub episodic: EpisodicWindow,
    pub semantic: SemanticStore,
    pub procedural: Vec<Routine>,
    pub reflections: Vec<ReflectionEntry>,
}

impl MemoryStore {
    pub fn new(episodic_capacity: usize, dim: usize) -> Self {
        MemoryStore {
            episodic: EpisodicWindow::new(episodic_capacity),
            semantic: SemanticStore::new(dim),
            procedural: Vec::new(),
            reflections: Vec::new(),
        }
    }

    /// Appends the reflection and routes it into the semantic pool, one entry
    /// per topic with importance equal to the reflection's confidence.
    pub fn consolidate(
        &mut self,
        embedder: &dyn TextEmbedder,
        entry: ReflectionEntry,
        beliefs: &BTreeMap<String, f64>,
    ) {
        for topic in entry.deltas.keys() {
            if let Some(&score) = beliefs.get(topic) {
                let content = format!("{} reflection on {}", entry.summary, topic);
                self.semantic
                    .insert(embedder, content, topic.clone(), score, "reflection", "self", entry.confidence);
            }
        }
        self.reflections.push(entry);
    }
}

/// Importance-weighted mean stance over the top-`k` topic entries.
pub fn retrieval_anchor(store: &SemanticStore, embedder: &dyn TextEmbedder, topic: &str, k: usize) -> Option<f64> {
    let hits = store.retrieve_where(embedder, topic, k, |e| e.topic == topic);
    let weight: f64 = hits.iter().map(|h| h.entry.importance).sum();
    if hits.is_empty() || weight <= 0.0 {
        return None;
    }
    let total: f64 = hits.iter().map(|h| h.entry.importance * h.entry.stance_score).sum();
    Some(clip_unit(total / weight))
}

/// Next anchor for one topic under the configured strategy.
pub fn compute_anchor(
    current_anchor: f64,
    current_belief: f64,
    topic: &str,
    store: &SemanticStore,
    embedder: &dyn TextEmbedder,
    cfg: &DynamicsConfig,
    k: usize,
) -> f64 {
    let ema = || cfg.ema_alpha * current_anchor + (1.0 - cfg.ema_alpha) * current_belief;
    let retrieval = || retrieval_anchor(store, embedder, topic, k).unwrap_or(current_anchor);
    let m = match cfg.anchor_strategy {
        AnchorStrategy::Ema => ema(),
        AnchorStrategy::Retrieval => retrieval(),
        AnchorStrategy::Hybrid => cfg.hybrid_weight * ema() + (1.0 - cfg.hybrid_weight) * retrieval(),
    };
    clip_unit(m)
}

/// Distinct tokens appearing in a set of texts; used by the summary tooling.
pub fn vocabulary<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> BTreeSet<String> {
    texts.into_iter().flat_map(tokenize).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(tick: u32, s: &str) -> EpisodicEntry {
        EpisodicEntry {
            tick,
            sender: s.into(),
            text: s.into(),
        }
    }

    #[test]
    fn episodic_fifo() {
        let mut w = EpisodicWindow::new(2);
        w.append(e(0, "a"));
        w.append(e(1, "b"));
        w.append(e(2, "c"));
        let got: Vec<_> = w.iter().map(|x| x.sender.as_str()).collect();
        assert_eq!(got, ["b", "c"]);

        let mut w = EpisodicWindow::default();
        w.append(e(0, "a"));
        assert_eq!(w.len(), 1);

        let mut w = EpisodicWindow::new(20);
        for i in 0..25 {
            w.append(e(i, &i.to_string()));
        }
        let ticks: Vec<u32> = w.iter().map(|x| x.tick).collect();
        assert_eq!(ticks, (5..25).collect::<Vec<_>>());
    }

    #[test]
    fn embedding_basics() {
        let emb = HashedEmbedder::default();
        assert!(emb.embed("").iter().all(|x| *x == 0.0));
        assert_eq!(emb.embed("hello world"), emb.embed("hello world"));
        assert_eq!(emb.embed("abortion rights"), emb.embed("rights abortion"));
    }

    #[test]
    fn embedding_matches_token_counts() {
        let emb = HashedEmbedder::default();
        let text = "Rights, rights and more RIGHTS for abortion access";
        let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
        for t in ["rights", "rights", "and", "more", "rights", "for", "abortion", "access"] {
            *counts.entry(t).or_default() += 1.0;
        }
        let mut expect = vec![0.0; emb.dim];
        for (t, c) in counts {
            let (i, s) = emb.slot(t);
            expect[i] += s * c;
        }
        let n = expect.iter().map(|x| x * x).sum::<f64>().sqrt();
        expect.iter_mut().for_each(|x| *x /= n);
        let got = emb.embed(text);
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn store_with(texts: &[(&str, f64)]) -> (SemanticStore, HashedEmbedder) {
        let emb = HashedEmbedder::default();
        let mut s = SemanticStore::new(emb.dim);
        for (t, imp) in texts {
            s.insert(&emb, *t, "topic", 0.0, "tag", "corpus", *imp);
        }
        (s, emb)
    }

    #[test]
    fn retrieve_underfull_and_self_match() {
        let (s, emb) = store_with(&[("school funding cuts", 0.5), ("tax relief for farmers", 0.5)]);
        assert_eq!(s.retrieve(&emb, "anything", 4).len(), 2);
        let top = s.retrieve(&emb, "tax relief for farmers", 4);
        assert_eq!(top[0].index, 1);
        assert!((top[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn retrieve_tie_breaks_on_importance_then_index() {
        let (s, emb) = store_with(&[("same text", 0.2), ("same text", 0.9), ("same text", 0.9)]);
        let idx: Vec<_> = s.retrieve(&emb, "same text", 3).iter().map(|r| r.index).collect();
        assert_eq!(idx, [1, 2, 0]);
    }

    fn brute_force(store: &SemanticStore, emb: &HashedEmbedder, q: &str, k: usize) -> Vec<usize> {
        let qv = emb.embed(q);
        let mut all: Vec<(usize, f64, f64)> = store
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let dot: f64 = qv.iter().zip(&e.embedding).map(|(a, b)| a * b).sum();
                let nq = qv.iter().map(|x| x * x).sum::<f64>().sqrt();
                let ne = e.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
                let sim = if nq == 0.0 || ne == 0.0 { 0.0 } else { dot / (nq * ne) };
                (i, sim, e.importance)
            })
            .collect();
        // insertion sort, no shared comparator
        for i in 1..all.len() {
            let mut j = i;
            while j > 0 {
                let (a, b) = (all[j - 1], all[j]);
                let b_first = b.1 > a.1 || (b.1 == a.1 && (b.2 > a.2 || (b.2 == a.2 && b.0 < a.0)));
                if !b_first {
                    break;
                }
                all.swap(j - 1, j);
                j -= 1;
            }
        }
        all.into_iter().take(k).map(|x| x.0).collect()
    }

    #[test]
    fn retrieve_matches_brute_force_on_ten_entries() {
        let words = ["tax", "school", "rights", "court", "vote", "health", "jobs", "river", "clinic", "law"];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let emb = HashedEmbedder::default();
        let mut s = SemanticStore::new(emb.dim);
        for _ in 0..10 {
            let n = rng.random_range(1..5);
            let text: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
            s.insert(&emb, text.join(" "), "t", 0.0, "x", "y", rng.random_range(0.0..1.0));
        }
        for q in ["tax school", "court rights vote", "river"] {
            let got: Vec<_> = s.retrieve(&emb, q, 4).iter().map(|r| r.index).collect();
            assert_eq!(got, brute_force(&s, &emb, q, 4));
        }
    }

    fn routine(name: &str, pre: &[(&str, bool)], p: f64, fear: f64) -> Routine {
        Routine {
            name: name.into(),
            preconditions: pre.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            base_priority: p,
            emotion_modulation: [(Emotion::Fear, fear)].into_iter().collect(),
        }
    }

    #[test]
    fn routine_selection() {
        let state: BTreeMap<String, bool> = [("has_unread_messages".to_string(), true)].into_iter().collect();
        let rs = vec![routine("post", &[("is_online", true)], 0.9, 1.0)];
        assert!(select_routine(&rs, &state, Emotion::Neutral).is_none());

        let rs = vec![routine("read", &[("has_unread_messages", true)], 0.3, 1.0)];
        assert_eq!(select_routine(&rs, &state, Emotion::Joy).unwrap().name, "read");

        let rs = vec![
            routine("argue", &[("has_unread_messages", true)], 0.5, 1.0),
            routine("withdraw", &[], 0.4, 1.5),
        ];
        assert_eq!(select_routine(&rs, &state, Emotion::Fear).unwrap().name, "withdraw");
        assert_eq!(select_routine(&rs, &state, Emotion::Joy).unwrap().name, "argue");
    }

    #[test]
    fn anchor_strategies() {
        let emb = HashedEmbedder::default();
        let mut s = SemanticStore::new(emb.dim);
        s.insert(&emb, "strong support for gun control", "gun_control", 0.8, "safety", "corpus", 1.0);
        s.insert(&emb, "mild support for gun control", "gun_control", 0.2, "safety", "corpus", 0.5);
        s.insert(&emb, "unrelated", "taxes", -0.9, "x", "corpus", 1.0);

        let mut cfg = DynamicsConfig {
            ema_alpha: 1.0,
            ..DynamicsConfig::default()
        };
        assert_eq!(compute_anchor(0.3, -0.7, "gun_control", &s, &emb, &cfg, 4), 0.3);
        cfg.ema_alpha = 0.0;
        assert_eq!(compute_anchor(0.3, -0.7, "gun_control", &s, &emb, &cfg, 4), -0.7);

        cfg.anchor_strategy = AnchorStrategy::Retrieval;
        let m = compute_anchor(0.0, 0.0, "gun_control", &s, &emb, &cfg, 4);
        assert!((m - 0.6).abs() < 1e-12);
        // no matching entry falls back to the current anchor
        assert_eq!(compute_anchor(0.42, 0.0, "immigration", &s, &emb, &cfg, 4), 0.42);

        cfg.anchor_strategy = AnchorStrategy::Hybrid;
        cfg.hybrid_weight = 0.5;
        cfg.ema_alpha = 1.0;
        let m = compute_anchor(0.2, 0.0, "gun_control", &s, &emb, &cfg, 4);
        assert!((m - 0.4).abs() < 1e-12);
    }

    #[test]
    fn reflection_examples() {
        let r = reflect(0, &[], &BTreeMap::new());
        assert_eq!(r.confidence, 1.0);
        assert_eq!(r.summary, EMPTY_REFLECTION);

        let deltas: BTreeMap<String, f64> = [("t1".to_string(), 0.2), ("t2".to_string(), 0.3)].into_iter().collect();
        let msgs = vec![ReceivedMessage {
            sender: "a".into(),
            sender_group: "Citizen".into(),
            text: "hi".into(),
        }];
        let r1 = reflect(3, &msgs, &deltas);
        assert!((r1.confidence - 0.5).abs() < 1e-12);
        assert_eq!(r1, reflect(3, &msgs, &deltas));
        assert_eq!(r1.summary, "tick 3: heard 1 from Citizen; shifted t1 +, t2 +");
    }

    #[test]
    fn consolidate_feeds_retrieval_pool() {
        let emb = HashedEmbedder::default();
        let mut m = MemoryStore::new(4, emb.dim);
        let deltas: BTreeMap<String, f64> = [("vax".to_string(), 0.1)].into_iter().collect();
        let beliefs: BTreeMap<String, f64> = [("vax".to_string(), 0.7)].into_iter().collect();
        m.consolidate(&emb, reflect(1, &[], &deltas), &beliefs);
        assert_eq!(m.reflections.len(), 1);
        assert_eq!(m.semantic.len(), 1);
        assert!((m.semantic.entries()[0].importance - 0.9).abs() < 1e-12);
        let a = retrieval_anchor(&m.semantic, &emb, "vax", 4).unwrap();
        assert!((a - 0.7).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn window_never_exceeds_capacity(cap in 1usize..30, n in 0usize..80) {
            let mut w = EpisodicWindow::new(cap);
            for i in 0..n {
                w.append(e(i as u32, "x"));
                prop_assert!(w.len() <= cap);
            }
            let ticks: Vec<u32> = w.iter().map(|x| x.tick).collect();
            let start = n.saturating_sub(cap) as u32;
            prop_assert_eq!(ticks, (start..n as u32).collect::<Vec<_>>());
        }

        #[test]
        fn ema_is_contraction(m in -1.0f64..=1.0, b in -1.0f64..=1.0, alpha in 0.0f64..=1.0) {
            let cfg = DynamicsConfig { ema_alpha: alpha, ..DynamicsConfig::default() };
            let s = SemanticStore::new(8);
            let emb = HashedEmbedder { dim: 8, seed: 1 };
            let next = compute_anchor(m, b, "t", &s, &emb, &cfg, 4);
            prop_assert!((-1.0..=1.0).contains(&next));
            prop_assert!(((next - b).abs() - alpha * (m - b).abs()).abs() < 1e-12);
        }

        #[test]
        fn reflection_confidence_consistent(ds in prop::collection::btree_map("[a-d]", -1.0f64..=1.0, 0..4)) {
            let r = reflect(1, &[], &ds);
            prop_assert_eq!(r.confidence, reflection_confidence(r.deltas.values().copied()));
        }

        #[test]
        fn selected_routine_is_eligible(flags in prop::collection::vec(any::<bool>(), 3),
                                        prios in prop::collection::vec(0.0f64..=1.0, 5),
                                        reqs in prop::collection::vec((0usize..3, any::<bool>()), 5)) {
            let keys = ["a", "b", "c"];
            let state: BTreeMap<String, bool> = keys.iter().zip(&flags).map(|(k, v)| (k.to_string(), *v)).collect();
            let rs: Vec<Routine> = prios.iter().zip(&reqs).enumerate().map(|(i, (p, (k, v)))| Routine {
                name: i.to_string(),
                preconditions: [(keys[*k].to_string(), *v)].into_iter().collect(),
                base_priority: *p,
                emotion_modulation: BTreeMap::new(),
            }).collect();
            if let Some(r) = select_routine(&rs, &state, Emotion::Anger) {
                prop_assert!(r.eligible(&state));
            }
        }
    }
}
