//! Corpus-level caption metrics and word-diversity statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

mod bleu;
mod cider;
mod diversity;
mod meteor;
mod rouge;

pub use bleu::{bleu, BLEU_EPSILON};
pub use cider::cider;
pub use diversity::{diversity_stats, DiversityStats};
pub use meteor::{meteor_lite, meteor_sentence};
pub use rouge::{lcs_len, rouge_l, rouge_l_sentence, ROUGE_BETA};

/// Ground-truth stories for the image sequence of `story_id`; each reference
/// is five sentences of space-separated tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub story_id: String,
    pub references: Vec<Vec<String>>,
}

/// A generated story. Extra fields in generation output are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub story_id: String,
    pub sentences: Vec<String>,
}

/// A candidate story against its references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub sentences: Vec<Vec<String>>,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(sentences: Vec<Vec<String>>, references: Vec<Vec<String>>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::Empty("references"));
        }
        let candidate = sentences.concat();
        Ok(Self {
            sentences,
            candidate,
            references,
        })
    }

    /// Single-sentence convenience: whitespace-split strings.
    pub fn from_text(candidate: &str, references: &[&str]) -> Result<Self> {
        Self::new(
            vec![split(candidate)],
            references.iter().map(|r| split(r)).collect(),
        )
    }
}

pub(crate) fn split(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Counts of the `n`-grams of `tokens`.
pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if n > 0 {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

fn check_corpus(pairs: &[EvalPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation corpus"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub bleu: [f64; 4],
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub diversity: DiversityStats,
}

impl MetricReport {
    pub fn compute(pairs: &[EvalPair]) -> Result<Self> {
        check_corpus(pairs)?;
        let stories: Vec<Vec<Vec<String>>> = pairs.iter().map(|p| p.sentences.clone()).collect();
        Ok(Self {
            bleu: [
                bleu(pairs, 1)?,
                bleu(pairs, 2)?,
                bleu(pairs, 3)?,
                bleu(pairs, 4)?,
            ],
            meteor: meteor_lite(pairs)?,
            rouge_l: rouge_l(pairs)?,
            cider: cider(pairs)?,
            diversity: diversity_stats(&stories),
        })
    }
}

pub const METRIC_SETTINGS: &str = "BLEU: corpus-level, clipped counts, closest reference length, zero precisions replaced by 1e-9; \
ROUGE_L: LCS F-measure, beta=1.2, max over references; \
METEOR-lite: exact then Porter stem matching, no synonyms, alpha=0.9, penalty 0.5*(chunks/matches)^3, max over references; \
CIDEr: n=1..4 TF-IDF cosine, idf over references, no length penalty, no x10 scaling; \
diversity: distinct n-grams within sentences, punctuation included";

/// Pairs candidates with their references in story-id order. Every
/// candidate needs references and story ids must be unique.
pub fn align(candidates: &[CandidateRecord], references: &[ReferenceRecord]) -> Result<Vec<(String, EvalPair)>> {
    let refs: BTreeMap<&str, &ReferenceRecord> = references.iter().map(|r| (r.story_id.as_str(), r)).collect();
    let mut seen = BTreeSet::new();
    let mut offenders = Vec::new();
    let mut out = BTreeMap::new();
    for c in candidates {
        if !seen.insert(c.story_id.as_str()) {
            offenders.push(format!("{} (duplicate)", c.story_id));
            continue;
        }
        match refs.get(c.story_id.as_str()) {
            Some(r) if !r.references.is_empty() => {
                let references = r.references.iter().map(|story| split(&story.join(" "))).collect();
                let sentences = c.sentences.iter().map(|s| split(s)).collect();
                out.insert(c.story_id.clone(), EvalPair::new(sentences, references)?);
            }
            _ => offenders.push(format!("{} (no references)", c.story_id)),
        }
    }
    offenders.extend(
        refs.keys()
            .filter(|id| !seen.contains(*id))
            .map(|id| format!("{id} (no candidate)")),
    );
    if !offenders.is_empty() {
        return Err(Error::Misaligned(offenders));
    }
    Ok(out.into_iter().collect())
}

/// Scores every system. All systems must cover the same story ids.
pub fn report(
    systems: &BTreeMap<String, Vec<CandidateRecord>>,
    references: &[ReferenceRecord],
) -> Result<Vec<(String, MetricReport)>> {
    let id_sets: Vec<BTreeSet<&str>> = systems
        .values()
        .map(|c| c.iter().map(|r| r.story_id.as_str()).collect())
        .collect();
    if let Some(first) = id_sets.first() {
        let mut offenders = BTreeSet::new();
        for set in &id_sets[1..] {
            offenders.extend(first.symmetric_difference(set).map(|s| s.to_string()));
        }
        if !offenders.is_empty() {
            return Err(Error::Misaligned(offenders.into_iter().collect()));
        }
    }
    systems
        .iter()
        .map(|(name, cands)| {
            let pairs: Vec<EvalPair> = align(cands, references)?.into_iter().map(|(_, p)| p).collect();
            Ok((name.clone(), MetricReport::compute(&pairs)?))
        })
        .collect()
}

const COLUMNS: [&str; 14] = [
    "system",
    "bleu_1",
    "bleu_2",
    "bleu_3",
    "bleu_4",
    "cider",
    "meteor",
    "rouge_l",
    "words_per_story",
    "words_per_sentence",
    "unique_1",
    "unique_2",
    "unique_3",
    "unique_4",
];

fn row(name: &str, r: &MetricReport) -> Vec<String> {
    let d = &r.diversity;
    let mut cells = vec![name.to_string()];
    cells.extend(r.bleu.iter().map(|v| format!("{v:.4}")));
    cells.extend([r.cider, r.meteor, r.rouge_l].iter().map(|v| format!("{v:.4}")));
    cells.push(format!("{:.3}", d.avg_words_per_story));
    cells.push(format!("{:.3}", d.avg_words_per_sentence));
    cells.extend(d.unique_ngrams.iter().map(|v| v.to_string()));
    cells
}

pub fn render_csv(rows: &[(String, MetricReport)]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for (name, r) in rows {
        out.push_str(&row(name, r).join(","));
        out.push('\n');
    }
    out
}

pub fn render_table(rows: &[(String, MetricReport)]) -> String {
    let cells: Vec<Vec<String>> = std::iter::once(COLUMNS.iter().map(|c| c.to_string()).collect())
        .chain(rows.iter().map(|(n, r)| row(n, r)))
        .collect();
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|i| cells.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for part in METRIC_SETTINGS.split("; ") {
        let _ = writeln!(out, "# {part}");
    }
    for r in &cells {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::json(path, e))?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
