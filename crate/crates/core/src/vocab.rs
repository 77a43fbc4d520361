//! Regional vocabulary: tokenization, word vectors, cosine similarity,
//! tf-idf and frequency-rank differences between corpora.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regions::{RoutedPost, Routing};

/// Default per-tweet frequency a word must exceed in both compared corpora.
pub const DEFAULT_RANK_THRESHOLD: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedPost {
    pub post_id: String,
    pub tokens: Vec<String>,
}

fn is_url(token: &str) -> bool {
    token.starts_with("http://") || token.starts_with("https://") || token.starts_with("www.")
}

/// Lowercased words of `text`. `@user` handles and URLs are removed
/// entirely; a hashtag keeps its body; any other non-alphanumeric character
/// (punctuation, emoji) is stripped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let lower = raw.to_lowercase();
            if lower.starts_with('@') || is_url(&lower) {
                return None;
            }
            let word: String = lower.chars().filter(|c| c.is_alphanumeric()).collect();
            (!word.is_empty()).then_some(word)
        })
        .collect()
}

pub fn tokenize_post(post_id: &str, text: &str) -> TokenizedPost {
    TokenizedPost {
        post_id: post_id.to_string(),
        tokens: tokenize(text),
    }
}

/// Word occurrence counts for one corpus, with the number of posts it holds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordVector {
    pub region: usize,
    pub counts: BTreeMap<String, u64>,
    pub total_tweets: u64,
}

impl WordVector {
    pub fn new(region: usize) -> Self {
        WordVector {
            region,
            ..Default::default()
        }
    }

    pub fn add_tokens<S: AsRef<str>>(&mut self, tokens: &[S]) {
        self.total_tweets += 1;
        for t in tokens {
            *self.counts.entry(t.as_ref().to_string()).or_insert(0) += 1;
        }
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    /// Counts divided by the number of posts.
    pub fn frequencies(&self) -> BTreeMap<String, f64> {
        let n = self.total_tweets.max(1) as f64;
        self.counts
            .iter()
            .map(|(w, &c)| (w.clone(), c as f64 / n))
            .collect()
    }

    pub fn merge(&mut self, other: &WordVector) {
        self.total_tweets += other.total_tweets;
        for (w, &c) in &other.counts {
            *self.counts.entry(w.clone()).or_insert(0) += c;
        }
    }
}

/// One word vector per community from every post whose author has a region.
pub fn region_word_vectors(routing: &Routing<'_>, region_count: usize) -> Vec<WordVector> {
    let mut vectors: Vec<WordVector> = (0..region_count).map(WordVector::new).collect();
    for rp in &routing.posts {
        vectors[rp.origin].add_tokens(&tokenize(&rp.post.text));
    }
    vectors
}

/// Count or frequency usable as a vector component.
pub trait Component: Copy {
    fn value(self) -> f64;
}

impl Component for u64 {
    fn value(self) -> f64 {
        self as f64
    }
}

impl Component for f64 {
    fn value(self) -> f64 {
        self
    }
}

/// Cosine similarity of two sparse non-negative vectors.
pub fn cosine<V: Component>(a: &BTreeMap<String, V>, b: &BTreeMap<String, V>) -> Result<f64> {
    let sq_norm = |m: &BTreeMap<String, V>| m.values().map(|&v| v.value().powi(2)).sum::<f64>();
    let (na, nb) = (sq_norm(a), sq_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: f64 = small
        .iter()
        .filter_map(|(w, &x)| large.get(w).map(|&y| x.value() * y.value()))
        .sum();
    Ok((dot / (na * nb).sqrt()).clamp(0.0, 1.0))
}

pub fn cosine_similarity(a: &WordVector, b: &WordVector) -> Result<f64> {
    cosine(&a.counts, &b.counts)
}

/// Symmetric region-by-region similarity matrix.
pub fn cosine_matrix(vectors: &[WordVector]) -> Result<Vec<Vec<f64>>> {
    let n = vectors.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let s = cosine_similarity(&vectors[i], &vectors[j])?;
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTerms {
    pub region: usize,
    /// `(term, score)` by descending score, ties alphabetical.
    pub terms: Vec<(String, f64)>,
}

/// tf-idf with raw term counts: `count(w, d) * ln(N / df(w))`.
/// `top_k = None` keeps every term.
pub fn tfidf(documents: &[WordVector], top_k: Option<usize>) -> Result<Vec<RegionTerms>> {
    if documents.len() < 2 {
        return Err(Error::TooFewCommunities {
            needed: 2,
            got: documents.len(),
        });
    }
    let n_docs = documents.len() as f64;
    let mut df: BTreeMap<&str, u64> = BTreeMap::new();
    for doc in documents {
        for (w, &c) in &doc.counts {
            if c > 0 {
                *df.entry(w.as_str()).or_insert(0) += 1;
            }
        }
    }
    Ok(documents
        .iter()
        .map(|doc| {
            let mut terms: Vec<(String, f64)> = doc
                .counts
                .iter()
                .filter(|(_, &c)| c > 0)
                .map(|(w, &c)| {
                    let idf = (n_docs / df[w.as_str()] as f64).ln();
                    (w.clone(), c as f64 * idf)
                })
                .collect();
            terms.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            if let Some(k) = top_k {
                terms.truncate(k);
            }
            RegionTerms {
                region: doc.region,
                terms,
            }
        })
        .collect())
}

/// Which set of posts a ranking was computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scope {
    /// Posts from `i` mentioning someone in `i`.
    Local(usize),
    /// Posts from `i` mentioning someone outside `i`.
    Outbound(usize),
    /// Posts from `i` mentioning someone in `j`.
    Pair(usize, usize),
    /// Posts from `i` mentioning someone in a region other than `i` and `j`.
    PairComplement(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedWord {
    pub word: String,
    pub count: u64,
    pub freq_per_tweet: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedVocab {
    pub scope: Scope,
    /// Ordered by rank.
    pub words: Vec<RankedWord>,
    index: BTreeMap<String, usize>,
}

impl RankedVocab {
    pub fn get(&self, word: &str) -> Option<&RankedWord> {
        self.index.get(word).map(|&i| &self.words[i])
    }

    pub fn rank(&self, word: &str) -> Option<usize> {
        self.get(word).map(|w| w.rank)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Ranks words by descending count (rank 1 = most frequent), ties alphabetical.
pub fn rank_words(counts: &BTreeMap<String, u64>, tweet_count: u64, scope: Scope) -> RankedVocab {
    if tweet_count == 0 {
        return RankedVocab {
            scope,
            words: Vec::new(),
            index: BTreeMap::new(),
        };
    }
    let mut entries: Vec<(&String, u64)> = counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(w, &c)| (w, c))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let words: Vec<RankedWord> = entries
        .into_iter()
        .enumerate()
        .map(|(i, (w, c))| RankedWord {
            word: w.clone(),
            count: c,
            freq_per_tweet: c as f64 / tweet_count as f64,
            rank: i + 1,
        })
        .collect();
    let index = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.word.clone(), i))
        .collect();
    RankedVocab {
        scope,
        words,
        index,
    }
}

pub fn rank_vector(vector: &WordVector, scope: Scope) -> RankedVocab {
    rank_words(&vector.counts, vector.total_tweets, scope)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankDiffEntry {
    pub word: String,
    pub delta_r: i64,
    pub scope_a: Scope,
    pub scope_b: Scope,
}

/// `rank_a(w) - rank_b(w)` for words whose per-tweet frequency is strictly
/// above `threshold` in both scopes, by descending difference (ties alphabetical).
/// Positive values mark words more characteristic of `scope_b`.
pub fn rank_differences(a: &RankedVocab, b: &RankedVocab, threshold: f64) -> Vec<RankDiffEntry> {
    let mut out: Vec<RankDiffEntry> = a
        .words
        .iter()
        .filter(|w| w.freq_per_tweet > threshold)
        .filter_map(|wa| {
            let wb = b.get(&wa.word)?;
            (wb.freq_per_tweet > threshold).then(|| RankDiffEntry {
                word: wa.word.clone(),
                delta_r: wa.rank as i64 - wb.rank as i64,
                scope_a: a.scope,
                scope_b: b.scope,
            })
        })
        .collect();
    out.sort_by(|x, y| y.delta_r.cmp(&x.delta_r).then_with(|| x.word.cmp(&y.word)));
    out
}

/// Local, outbound and pairwise mention corpora for every region.
///
/// A post counts once in each corpus it qualifies for, so a post mentioning
/// both a local and a distant user lands in the local and the outbound corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionCorpora {
    pub local: Vec<WordVector>,
    pub outbound: Vec<WordVector>,
    /// `pair[i][j]`: posts from `i` mentioning `j` (`i != j`).
    pub pair: Vec<Vec<WordVector>>,
    /// `complement[i][j]`: posts from `i` mentioning any `k` not in `{i, j}`.
    pub complement: Vec<Vec<WordVector>>,
}

impl MentionCorpora {
    pub fn build(routing: &Routing<'_>, region_count: usize) -> Self {
        let n = region_count;
        let grid = |_: ()| -> Vec<Vec<WordVector>> {
            (0..n)
                .map(|i| (0..n).map(|_| WordVector::new(i)).collect())
                .collect()
        };
        let mut corpora = MentionCorpora {
            local: (0..n).map(WordVector::new).collect(),
            outbound: (0..n).map(WordVector::new).collect(),
            pair: grid(()),
            complement: grid(()),
        };
        for rp in &routing.posts {
            if rp.targets.is_empty() {
                continue;
            }
            corpora.add(rp, &tokenize(&rp.post.text));
        }
        corpora
    }

    fn add(&mut self, rp: &RoutedPost<'_>, tokens: &[String]) {
        let i = rp.origin;
        let n = self.local.len();
        if rp.has_local() {
            self.local[i].add_tokens(tokens);
        }
        if rp.has_outbound() {
            self.outbound[i].add_tokens(tokens);
        }
        let distinct: BTreeSet<usize> = rp.targets.iter().copied().filter(|&t| t != i).collect();
        for j in (0..n).filter(|&j| j != i) {
            if distinct.contains(&j) {
                self.pair[i][j].add_tokens(tokens);
            }
            if distinct.iter().any(|&k| k != j) {
                self.complement[i][j].add_tokens(tokens);
            }
        }
    }

    pub fn region_count(&self) -> usize {
        self.local.len()
    }

    /// `Δr_i`: local rank minus outbound rank for region `i`.
    pub fn local_vs_outbound(&self, i: usize, threshold: f64) -> Vec<RankDiffEntry> {
        let loc = rank_vector(&self.local[i], Scope::Local(i));
        let out = rank_vector(&self.outbound[i], Scope::Outbound(i));
        rank_differences(&loc, &out, threshold)
    }

    /// `Δr_ij`: rank among posts to everyone but `i` and `j`, minus rank among posts to `j`.
    pub fn pairwise(&self, i: usize, j: usize, threshold: f64) -> Vec<RankDiffEntry> {
        let rest = rank_vector(&self.complement[i][j], Scope::PairComplement(i, j));
        let pair = rank_vector(&self.pair[i][j], Scope::Pair(i, j));
        rank_differences(&rest, &pair, threshold)
    }
}
