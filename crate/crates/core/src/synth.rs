//! Two-domain synthetic corpora with known domain labels.
//!
//! Each domain owns a disjoint vocabulary of words `d{domain}w{k}` split
//! into topics. A document picks one topic and draws most of its words
//! from that topic's Zipf-weighted core, the rest uniformly from the
//! domain vocabulary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::Serialize;

use crate::corpus::{SourceDocument, SourceTag};
use crate::{seed, Error, Result};

pub const MAJORITY: u8 = 0;
pub const MINORITY: u8 = 1;

/// Specialist document ids start here so they never collide with
/// generalist ids.
pub const SPECIALIST_ID_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub generalist_documents: usize,
    /// Fraction of generalist documents drawn from the minority domain.
    pub minority_fraction: f64,
    pub specialist_documents: usize,
    pub words_per_document: usize,
    pub vocab_per_domain: usize,
    pub topics_per_domain: usize,
    /// Probability that a word comes from the document's topic core.
    pub topic_weight: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            generalist_documents: 20_000,
            minority_fraction: 0.1,
            specialist_documents: 200,
            words_per_document: 64,
            vocab_per_domain: 2000,
            topics_per_domain: 8,
            topic_weight: 0.7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.minority_fraction) {
            return Err(Error::Config(format!(
                "minority fraction {} outside [0, 1]",
                self.minority_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.topic_weight) {
            return Err(Error::Config(format!(
                "topic weight {} outside [0, 1]",
                self.topic_weight
            )));
        }
        if self.topics_per_domain == 0 || self.vocab_per_domain < self.topics_per_domain {
            return Err(Error::Config(format!(
                "need at least one word per topic: {} words, {} topics",
                self.vocab_per_domain, self.topics_per_domain
            )));
        }
        if self.words_per_document == 0 {
            return Err(Error::Config("documents need at least one word".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynthDocument {
    pub id: u64,
    #[serde(skip)]
    pub domain: u8,
    #[serde(skip)]
    pub topic: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub generalist: Vec<SynthDocument>,
    pub specialist: Vec<SynthDocument>,
}

impl SynthDocument {
    pub fn to_source(&self, tag: SourceTag) -> SourceDocument {
        SourceDocument {
            doc_id: self.id,
            source_tag: tag,
            text: self.text.clone(),
        }
    }
}

struct Domain {
    id: u8,
    topics: Vec<Vec<usize>>,
    zipf: Vec<WeightedIndex<f64>>,
    vocab: usize,
}

impl Domain {
    fn new(id: u8, cfg: &SynthConfig) -> Self {
        let per = cfg.vocab_per_domain / cfg.topics_per_domain;
        let topics: Vec<Vec<usize>> = (0..cfg.topics_per_domain)
            .map(|t| (t * per..(t + 1) * per).collect())
            .collect();
        let zipf = topics
            .iter()
            .map(|words| {
                WeightedIndex::new((1..=words.len()).map(|r| 1.0 / r as f64))
                    .expect("non-empty positive weights")
            })
            .collect();
        Self {
            id,
            topics,
            zipf,
            vocab: cfg.vocab_per_domain,
        }
    }

    fn document(&self, id: u64, cfg: &SynthConfig, rng: &mut seed::Rng) -> SynthDocument {
        let topic = rng.random_range(0..self.topics.len());
        let words: Vec<String> = (0..cfg.words_per_document)
            .map(|_| {
                let k = if rng.random_bool(cfg.topic_weight) {
                    self.topics[topic][self.zipf[topic].sample(rng)]
                } else {
                    rng.random_range(0..self.vocab)
                };
                format!("d{}w{k}", self.id)
            })
            .collect();
        SynthDocument {
            id,
            domain: self.id,
            topic: topic as u32,
            text: words.join(" "),
        }
    }
}

/// Generalist documents mix the domains with exactly
/// `round(minority_fraction · n)` minority documents at shuffled positions;
/// specialist documents all come from the minority domain.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let domains = [Domain::new(MAJORITY, cfg), Domain::new(MINORITY, cfg)];
    let n = cfg.generalist_documents;
    let minority = (cfg.minority_fraction * n as f64).round() as usize;
    let mut labels: Vec<u8> = (0..n)
        .map(|i| if i < minority { MINORITY } else { MAJORITY })
        .collect();
    let mut rng = seed::child_rng(cfg.seed, &[0x5e7]);
    labels.shuffle(&mut rng);

    let generalist = labels
        .iter()
        .enumerate()
        .map(|(i, &d)| domains[d as usize].document(i as u64, cfg, &mut rng))
        .collect();
    let mut rng = seed::child_rng(cfg.seed, &[0x5e7, 1]);
    let specialist = (0..cfg.specialist_documents)
        .map(|i| domains[MINORITY as usize].document(SPECIALIST_ID_OFFSET + i as u64, cfg, &mut rng))
        .collect();
    Ok(SynthCorpus {
        generalist,
        specialist,
    })
}

impl SynthCorpus {
    /// Generalist document id to domain.
    pub fn labels(&self) -> BTreeMap<u64, u8> {
        self.generalist.iter().map(|d| (d.id, d.domain)).collect()
    }

    /// Writes `generalist.jsonl`, `specialist.jsonl` and `labels.tsv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_jsonl(&dir.join("generalist.jsonl"), &self.generalist)?;
        write_jsonl(&dir.join("specialist.jsonl"), &self.specialist)?;
        let path = dir.join("labels.tsv");
        let io = |e| Error::io(&path, e);
        let mut out = BufWriter::new(File::create(&path).map_err(io)?);
        writeln!(out, "doc_id\tdomain").map_err(io)?;
        for d in &self.generalist {
            writeln!(out, "{}\t{}", d.id, d.domain).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

fn write_jsonl(path: &Path, docs: &[SynthDocument]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for d in docs {
        serde_json::to_writer(&mut out, d)
            .map_err(|e| Error::InvalidData(format!("serializing document {}: {e}", d.id)))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}
