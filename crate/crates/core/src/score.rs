//! Character and word error rates.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub id: String,
    pub char_edits: usize,
    pub chars: usize,
    pub word_edits: usize,
    pub words: usize,
}

impl UtteranceScore {
    pub fn new(id: &str, reference: &str, hypothesis: &str) -> Self {
        let rc: Vec<char> = reference.chars().collect();
        let hc: Vec<char> = hypothesis.chars().collect();
        let rw: Vec<&str> = reference.split_whitespace().collect();
        let hw: Vec<&str> = hypothesis.split_whitespace().collect();
        Self {
            id: id.to_string(),
            char_edits: edit_distance(&rc, &hc),
            chars: rc.len(),
            word_edits: edit_distance(&rw, &hw),
            words: rw.len(),
        }
    }

    pub fn cer(&self) -> f64 {
        ratio(self.char_edits, self.chars)
    }

    pub fn wer(&self) -> f64 {
        ratio(self.word_edits, self.words)
    }
}

fn ratio(edits: usize, len: usize) -> f64 {
    if len == 0 {
        if edits == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        edits as f64 / len as f64
    }
}

/// Per-utterance scores with totals; aggregates weight utterances by
/// reference length.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub utterances: Vec<UtteranceScore>,
}

impl ScoreReport {
    pub fn cer(&self) -> f64 {
        ratio(
            self.utterances.iter().map(|u| u.char_edits).sum(),
            self.utterances.iter().map(|u| u.chars).sum(),
        )
    }

    pub fn wer(&self) -> f64 {
        ratio(
            self.utterances.iter().map(|u| u.word_edits).sum(),
            self.utterances.iter().map(|u| u.words).sum(),
        )
    }

    /// One JSON object per utterance, then a totals record.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for u in &self.utterances {
            let _ = writeln!(s, "{}", serde_json::to_string(u).expect("plain struct"));
        }
        let total = serde_json::json!({"total": true, "cer": self.cer(), "wer": self.wer(), "utterances": self.utterances.len()});
        let _ = writeln!(s, "{total}");
        s
    }
}

/// Scores `hypotheses` against `(id, reference)` pairs. Every reference id
/// needs a hypothesis; extra hypotheses are ignored.
pub fn score<'a>(
    references: impl IntoIterator<Item = (&'a str, &'a str)>,
    hypotheses: &HashMap<String, String>,
) -> Result<ScoreReport> {
    let mut missing = Vec::new();
    let mut utterances = Vec::new();
    for (id, r) in references {
        match hypotheses.get(id) {
            Some(h) => utterances.push(UtteranceScore::new(id, r, h)),
            None => missing.push(id.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingHypotheses(missing));
    }
    Ok(ScoreReport { utterances })
}

/// Parses `id<TAB>hypothesis` lines; an absent hypothesis is empty.
pub fn parse_hypotheses(text: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, hyp) = line.split_once('\t').unwrap_or((line, ""));
        if out.insert(id.to_string(), hyp.to_string()).is_some() {
            return Err(Error::Manifest(format!("hypotheses line {}: duplicate id {id}", i + 1)));
        }
    }
    Ok(out)
}
