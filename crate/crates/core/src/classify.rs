//! Multinomial naive Bayes over bag-of-words token streams.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase word tokens of a free-text field.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenStream(Vec<String>);

impl TokenStream {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for TokenStream {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenStream(
            iter.into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        )
    }
}

/// Lowercases, splits on runs of non-alphanumeric characters and drops
/// tokens shorter than two characters. No stemming, no stop words.
pub fn tokenize(text: &str) -> TokenStream {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

/// A trained classifier. Probabilities are stored directly (not as logs) so
/// the persisted JSON round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    /// Sorted labels.
    pub classes: Vec<String>,
    pub priors: Vec<f64>,
    pub vocabulary: Vec<String>,
    /// `likelihoods[c][w]` is P(vocabulary[w] | classes[c]).
    pub likelihoods: Vec<Vec<f64>>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    /// Posterior per class, in `NbModel::classes` order.
    pub posteriors: Vec<f64>,
    /// Set when the document had no in-vocabulary token; the label is then
    /// the prior argmax.
    pub no_evidence: bool,
}

pub fn train_nb<L: AsRef<str>>(docs: &[(TokenStream, L)], alpha: f64) -> Result<NbModel> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Precondition(format!(
            "smoothing alpha must be positive, got {alpha}"
        )));
    }
    let mut doc_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut word_counts: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    let mut vocab = BTreeSet::new();
    for (doc, label) in docs {
        let label = label.as_ref();
        *doc_counts.entry(label).or_default() += 1;
        let counts = word_counts.entry(label).or_default();
        for token in doc.tokens() {
            *counts.entry(token.as_str()).or_default() += 1;
            vocab.insert(token.as_str());
        }
    }
    if doc_counts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "naive Bayes needs at least two labels with documents, found {}",
            doc_counts.len()
        )));
    }
    if vocab.is_empty() {
        return Err(Error::InsufficientData("empty vocabulary".into()));
    }

    let n_docs = docs.len() as f64;
    let v = vocab.len() as f64;
    let vocabulary: Vec<String> = vocab.iter().map(|w| w.to_string()).collect();
    let mut classes = Vec::new();
    let mut priors = Vec::new();
    let mut likelihoods = Vec::new();
    for (label, count) in &doc_counts {
        let counts = &word_counts[label];
        let total: usize = counts.values().sum();
        let denom = total as f64 + alpha * v;
        classes.push(label.to_string());
        priors.push(*count as f64 / n_docs);
        likelihoods.push(
            vocab
                .iter()
                .map(|w| (counts.get(w).copied().unwrap_or(0) as f64 + alpha) / denom)
                .collect(),
        );
    }
    Ok(NbModel {
        classes,
        priors,
        vocabulary,
        likelihoods,
        alpha,
    })
}

impl NbModel {
    fn word_index(&self, word: &str) -> Option<usize> {
        self.vocabulary
            .binary_search_by(|w| w.as_str().cmp(word))
            .ok()
    }

    pub fn classify(&self, doc: &TokenStream) -> Classification {
        classify_nb(self, doc)
    }

    /// Checks the structural invariants of a deserialized model.
    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if k < 2 || self.priors.len() != k || self.likelihoods.len() != k {
            return Err(Error::invalid("classes", "model shape is inconsistent"));
        }
        if self
            .likelihoods
            .iter()
            .any(|l| l.len() != self.vocabulary.len())
        {
            return Err(Error::invalid(
                "likelihoods",
                "row length differs from vocabulary",
            ));
        }
        if !self.vocabulary.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("vocabulary", "must be sorted and unique"));
        }
        if !self.classes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("classes", "must be sorted and unique"));
        }
        Ok(())
    }
}

pub fn classify_nb(model: &NbModel, doc: &TokenStream) -> Classification {
    let hits: Vec<usize> = doc
        .tokens()
        .iter()
        .filter_map(|t| model.word_index(t))
        .collect();
    let scores: Vec<f64> = model
        .priors
        .iter()
        .zip(&model.likelihoods)
        .map(|(prior, lik)| prior.ln() + hits.iter().map(|&w| lik[w].ln()).sum::<f64>())
        .collect();

    // Strict `>` keeps the first (lexicographically smallest) label on ties.
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    let max = scores[best];
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Classification {
        label: model.classes[best].clone(),
        posteriors: weights.iter().map(|w| w / total).collect(),
        no_evidence: hits.is_empty(),
    }
}
