//! Lexicon polarity and inter-region sentiment metrics.
//!
//! For a complete `N × N` matrix of mean polarities `p_ij` (sender `i`,
//! receiver `j`):
//!
//! - baseline `μ_i = (1/N) Σ_j p_ij`, corrected `p̃_ij = p_ij − μ_i`
//! - self-regard `s_i = p_ii − (1/(N−1)) Σ_{j≠i} p_ij`
//! - popularity `P̃_i = (1/(N−1)) Σ_{j≠i} p̃_ji`

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regions::Routing;
use crate::vocab::tokenize;

/// Word polarities in `[-1, 1]`, keyed by lowercase token.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SentimentLexicon {
    words: BTreeMap<String, f64>,
}

impl SentimentLexicon {
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let mut words = BTreeMap::new();
        for (i, (w, v)) in pairs.into_iter().enumerate() {
            let w: String = w.into();
            check_polarity(i + 1, v)?;
            words.insert(w.to_lowercase(), v);
        }
        Ok(SentimentLexicon { words })
    }

    /// Reads `word<TAB>polarity` lines. Blank lines and `#` comments are skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut words = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (word, value) = trimmed.split_once('\t').ok_or_else(|| Error::Lexicon {
                line: line_no,
                reason: "expected word<TAB>polarity".into(),
            })?;
            let value: f64 = value.trim().parse().map_err(|e| Error::Lexicon {
                line: line_no,
                reason: format!("bad polarity {value:?}: {e}"),
            })?;
            check_polarity(line_no, value)?;
            words.insert(word.trim().to_lowercase(), value);
        }
        Ok(SentimentLexicon { words })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file)).map_err(|e| match e {
            Error::Stream(io) => Error::io(path, io),
            other => other,
        })
    }

    pub fn get(&self, word: &str) -> Option<f64> {
        self.words.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.words.iter().map(|(w, &v)| (w.as_str(), v))
    }

    /// `word<TAB>polarity` lines in word order.
    pub fn to_tsv(&self) -> String {
        self.words
            .iter()
            .map(|(w, v)| format!("{w}\t{v}\n"))
            .collect()
    }
}

fn check_polarity(line: usize, v: f64) -> Result<()> {
    if v.is_finite() && (-1.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Lexicon {
            line,
            reason: format!("polarity {v} outside [-1, 1]"),
        })
    }
}

/// Mean polarity of matched tokens; `0.0` when nothing matches.
pub fn polarity<S: AsRef<str>>(tokens: &[S], lexicon: &SentimentLexicon) -> f64 {
    let (sum, n) = tokens
        .iter()
        .filter_map(|t| lexicon.get(t.as_ref()))
        .fold((0.0, 0u32), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).clamp(-1.0, 1.0)
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct CellStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl CellStats {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn stderr(&self) -> Option<f64> {
        (self.n >= 2)
            .then(|| (self.m2.max(0.0) / (self.n - 1) as f64).sqrt() / (self.n as f64).sqrt())
    }
}

/// Per-pair mean polarity, event count and standard error of the mean.
/// Cells with no events have `mean = None`; `stderr` needs at least two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarityMatrix {
    pub labels: Vec<usize>,
    pub mean: Vec<Vec<Option<f64>>>,
    pub count: Vec<Vec<u64>>,
    pub stderr: Vec<Vec<Option<f64>>>,
}

impl PolarityMatrix {
    /// Fully defined matrix with unknown errors, mostly for analysis of
    /// externally computed means.
    pub fn from_means(means: Vec<Vec<f64>>) -> Self {
        let n = means.len();
        PolarityMatrix {
            labels: (0..n).collect(),
            mean: means
                .into_iter()
                .map(|r| r.into_iter().map(Some).collect())
                .collect(),
            count: vec![vec![1; n]; n],
            stderr: vec![vec![None; n]; n],
        }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn total_count(&self) -> u64 {
        self.count.iter().flatten().sum()
    }

    fn full_means(&self) -> Result<Vec<Vec<f64>>> {
        self.mean
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        v.ok_or(Error::MissingCell {
                            from: self.labels[i],
                            to: self.labels[j],
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Largest set of regions (by greedy removal of the region with the
    /// most undefined cells) whose submatrix is fully defined.
    pub fn complete_regions(&self) -> Vec<usize> {
        let mut keep: Vec<usize> = (0..self.size()).collect();
        loop {
            let missing: Vec<usize> = keep
                .iter()
                .map(|&i| {
                    keep.iter()
                        .filter(|&&j| self.mean[i][j].is_none() || self.mean[j][i].is_none())
                        .count()
                })
                .collect();
            match missing
                .iter()
                .copied()
                .enumerate()
                .max_by_key(|&(pos, m)| (m, pos))
            {
                Some((pos, m)) if m > 0 => {
                    keep.remove(pos);
                }
                _ => return keep,
            }
        }
    }

    /// Submatrix over the given positions; labels are carried along.
    pub fn restrict(&self, positions: &[usize]) -> PolarityMatrix {
        fn pick<T: Copy>(m: &[Vec<T>], positions: &[usize]) -> Vec<Vec<T>> {
            positions
                .iter()
                .map(|&i| positions.iter().map(|&j| m[i][j]).collect())
                .collect()
        }
        PolarityMatrix {
            labels: positions.iter().map(|&i| self.labels[i]).collect(),
            mean: pick(&self.mean, positions),
            count: pick(&self.count, positions),
            stderr: pick(&self.stderr, positions),
        }
    }
}

/// Every located mention event from region `i` to region `j` contributes
/// its post's polarity once to cell `(i, j)`.
pub fn polarity_matrix(
    routing: &Routing<'_>,
    region_count: usize,
    lexicon: &SentimentLexicon,
) -> PolarityMatrix {
    let n = region_count;
    let mut cells = vec![vec![CellStats::default(); n]; n];
    for rp in &routing.posts {
        if rp.targets.is_empty() {
            continue;
        }
        let p = polarity(&tokenize(&rp.post.text), lexicon);
        for &j in &rp.targets {
            cells[rp.origin][j].push(p);
        }
    }
    PolarityMatrix {
        labels: (0..n).collect(),
        mean: cells
            .iter()
            .map(|r| r.iter().map(|c| (c.n > 0).then_some(c.mean)).collect())
            .collect(),
        count: cells
            .iter()
            .map(|r| r.iter().map(|c| c.n).collect())
            .collect(),
        stderr: cells
            .iter()
            .map(|r| r.iter().map(CellStats::stderr).collect())
            .collect(),
    }
}

/// Baseline-corrected polarities `p̃_ij = p_ij − μ_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedPolarity {
    pub labels: Vec<usize>,
    pub baseline: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

pub fn baseline_correct(p: &PolarityMatrix) -> Result<CorrectedPolarity> {
    let means = p.full_means()?;
    let n = means.len();
    let baseline: Vec<f64> = means
        .iter()
        .map(|r| r.iter().sum::<f64>() / n as f64)
        .collect();
    let values = means
        .iter()
        .zip(&baseline)
        .map(|(r, mu)| r.iter().map(|v| v - mu).collect())
        .collect();
    Ok(CorrectedPolarity {
        labels: p.labels.clone(),
        baseline,
        values,
    })
}

fn require_pairwise(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::TooFewCommunities { needed: 2, got: n })
    } else {
        Ok(())
    }
}

/// `s_i`: own-region polarity minus mean polarity towards other regions.
pub fn self_regard(p: &PolarityMatrix) -> Result<Vec<f64>> {
    let means = p.full_means()?;
    let n = means.len();
    require_pairwise(n)?;
    Ok((0..n)
        .map(|i| {
            let others: f64 = (0..n).filter(|&j| j != i).map(|j| means[i][j]).sum();
            means[i][i] - others / (n - 1) as f64
        })
        .collect())
}

/// `P̃_i`: mean corrected polarity received from the other regions.
pub fn popularity(corrected: &CorrectedPolarity) -> Result<Vec<f64>> {
    let n = corrected.values.len();
    require_pairwise(n)?;
    Ok((0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| corrected.values[j][i])
                .sum::<f64>()
                / (n - 1) as f64
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

/// Unordered pairs by descending `p̃_ab + p̃_ba`, ties by `(a, b)`.
pub fn friendliest_pairs(corrected: &CorrectedPolarity) -> Vec<PairScore> {
    let n = corrected.values.len();
    let v = &corrected.values;
    let mut pairs: Vec<PairScore> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| PairScore {
            a: corrected.labels[i],
            b: corrected.labels[j],
            score: v[i][j] + v[j][i],
        })
        .collect();
    pairs.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then((x.a, x.b).cmp(&(y.a, y.b)))
    });
    pairs
}

/// Per-region summary with standard errors propagated from the cell
/// errors, treating cells as independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSentiment {
    pub region: usize,
    pub self_regard: f64,
    pub self_regard_err: Option<f64>,
    pub popularity: f64,
    pub popularity_err: Option<f64>,
}

pub fn sentiment_summary(p: &PolarityMatrix) -> Result<Vec<RegionSentiment>> {
    let s = self_regard(p)?;
    let corrected = baseline_correct(p)?;
    let pop = popularity(&corrected)?;
    let n = p.size();
    let nf = n as f64;
    let var: Option<Vec<Vec<f64>>> = p
        .stderr
        .iter()
        .map(|r| r.iter().map(|e| e.map(|e| e * e)).collect())
        .collect();
    Ok((0..n)
        .map(|i| {
            let (s_err, p_err) = match &var {
                Some(v) => {
                    let off: f64 = (0..n).filter(|&j| j != i).map(|j| v[i][j]).sum();
                    let s_var = v[i][i] + off / ((nf - 1.0) * (nf - 1.0));
                    // p̃_ji = (1 − 1/N) p_ji − (1/N) Σ_{l≠i} p_jl
                    let p_var: f64 = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| {
                            let rest: f64 = (0..n).filter(|&l| l != i).map(|l| v[j][l]).sum();
                            (1.0 - 1.0 / nf).powi(2) * v[j][i] + rest / (nf * nf)
                        })
                        .sum::<f64>()
                        / ((nf - 1.0) * (nf - 1.0));
                    (Some(s_var.sqrt()), Some(p_var.sqrt()))
                }
                None => (None, None),
            };
            RegionSentiment {
                region: p.labels[i],
                self_regard: s[i],
                self_regard_err: s_err,
                popularity: pop[i],
                popularity_err: p_err,
            }
        })
        .collect())
}

/// Renders a value with its error in last-digit parenthetical form, e.g.
/// `0.164(1)` for `0.1641 ± 0.0012`. Without a positive error the value is
/// printed to four decimals.
pub fn format_with_error(value: f64, err: Option<f64>) -> String {
    match err {
        Some(e) if e > 0.0 && e.is_finite() => {
            let mut decimals = (-e.log10().floor()).max(0.0) as i32;
            let mut digit = (e * 10f64.powi(decimals)).round();
            if digit >= 10.0 && decimals > 0 {
                decimals -= 1;
                digit = (e * 10f64.powi(decimals)).round();
            }
            format!("{value:.prec$}({digit})", prec = decimals as usize)
        }
        _ => format!("{value:.4}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::Partition;
    use crate::ingest::{locate_users, BBox, GridSpec, LocationKind, PostRecord, TileId};
    use crate::regions::RegionIndex;

    fn lexicon() -> SentimentLexicon {
        SentimentLexicon::from_pairs([
            ("good", 0.5),
            ("great", 1.0),
            ("meh", -0.5),
            ("ok", 0.1),
            ("fine", 0.3),
        ])
        .unwrap()
    }

    #[test]
    fn polarity_examples() {
        let lex = lexicon();
        assert_eq!(polarity(&["good", "good"], &lex), 0.5);
        assert_eq!(polarity(&["nothing", "here"], &lex), 0.0);
        assert_eq!(polarity(&["great", "meh", "cat"], &lex), 0.25);
        let empty: [&str; 0] = [];
        assert_eq!(polarity(&empty, &lex), 0.0);
    }

    #[test]
    fn lexicon_file_format() {
        let lex = SentimentLexicon::read("# header\nGood\t0.5\n\nbad\t-0.7\n".as_bytes()).unwrap();
        assert_eq!(lex.get("good"), Some(0.5));
        assert_eq!(lex.get("bad"), Some(-0.7));
        assert!(matches!(
            SentimentLexicon::read("x\t1.5\n".as_bytes()),
            Err(Error::Lexicon { line: 1, .. })
        ));
        assert!(SentimentLexicon::read("x 0.5\n".as_bytes()).is_err());
        let err = SentimentLexicon::from_path(Path::new("/nonexistent/missing.tsv")).unwrap_err();
        assert!(err.to_string().contains("missing.tsv"));
    }

    fn routed(
        texts: &[(&str, &str, &[&str], f64)],
    ) -> (Vec<PostRecord>, Partition, crate::ingest::UserLocationMap) {
        let grid = GridSpec::new(BBox::new(0.0, 0.0, 2.0, 2.0).unwrap(), 2).unwrap();
        let posts: Vec<PostRecord> = texts
            .iter()
            .enumerate()
            .map(|(k, &(author, text, mentions, lon))| PostRecord {
                post_id: k.to_string(),
                author_id: author.into(),
                mentioned_ids: mentions.iter().map(|s| s.to_string()).collect(),
                text: text.into(),
                lon,
                lat: 0.5,
                location_kind: LocationKind::PlaceTag,
                timestamp: "2017-10-01T00:00:00Z".parse().unwrap(),
            })
            .collect();
        let loc = locate_users(&posts, &grid).unwrap();
        let part = Partition::from_assignment([(TileId::new(0, 0), 0), (TileId::new(1, 0), 1)]);
        (posts, part, loc)
    }

    #[test]
    fn single_region_matrix() {
        let lex = SentimentLexicon::from_pairs([("nice", 0.2)]).unwrap();
        let (posts, _, loc) = routed(&[("a", "nice", &["b"], 0.5), ("b", "nice one", &["a"], 0.5)]);
        let part = Partition::from_assignment([(TileId::new(0, 0), 0)]);
        let routing = RegionIndex::new(&part, &loc).route(&posts);
        let m = polarity_matrix(&routing, 1, &lex);
        assert_eq!(m.mean[0][0], Some(0.2));
        assert_eq!(m.stderr[0][0], Some(0.0));
        assert_eq!(m.count[0][0], 2);
    }

    #[test]
    fn two_event_cell_standard_error() {
        let (posts, part, loc) = routed(&[
            ("a", "ok", &["b"], 0.5),
            ("a", "fine", &["b"], 0.5),
            ("b", "x", &[], 1.5),
        ]);
        let routing = RegionIndex::new(&part, &loc).route(&posts);
        let m = polarity_matrix(&routing, 2, &lexicon());
        assert!((m.mean[0][1].unwrap() - 0.2).abs() < 1e-12);
        assert!((m.stderr[0][1].unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(m.mean[1][0], None);
        assert_eq!(m.count[1][0], 0);
        assert_eq!(m.total_count(), 2);
        assert!(matches!(
            baseline_correct(&m),
            Err(Error::MissingCell { .. })
        ));
        // no diagonal cell is defined either
        assert!(m.complete_regions().is_empty());
    }

    #[test]
    fn baseline_correction_examples() {
        let p = PolarityMatrix::from_means(vec![
            vec![0.1, 0.2, 0.3],
            vec![0.4, 0.4, 0.4],
            vec![0.0, 0.0, 0.3],
        ]);
        let c = baseline_correct(&p).unwrap();
        assert!((c.baseline[0] - 0.2).abs() < 1e-15);
        let want = [-0.1, 0.0, 0.1];
        for (got, want) in c.values[0].iter().zip(want) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(c.values[1].iter().all(|v| v.abs() < 1e-15));
        for row in &c.values {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn self_regard_examples() {
        let p = PolarityMatrix::from_means(vec![
            vec![0.3, 0.1, 0.1],
            vec![0.2, 0.2, 0.2],
            vec![0.0, 0.0, 0.0],
        ]);
        let s = self_regard(&p).unwrap();
        assert!((s[0] - 0.2).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
        assert!(self_regard(&PolarityMatrix::from_means(vec![vec![0.1]])).is_err());
    }

    #[test]
    fn popularity_examples() {
        let flat = PolarityMatrix::from_means(vec![vec![0.1; 3]; 3]);
        let pop = popularity(&baseline_correct(&flat).unwrap()).unwrap();
        assert!(pop.iter().all(|v| v.abs() < 1e-15));

        // column 2 sits 0.05 above what each sender gives the others; baselines
        // absorb 0.05/N of that, so build it directly on corrected values
        let corrected = CorrectedPolarity {
            labels: vec![0, 1, 2],
            baseline: vec![0.0; 3],
            values: vec![
                vec![0.0, -0.02, 0.05],
                vec![0.01, 0.0, 0.05],
                vec![0.0, 0.0, 0.0],
            ],
        };
        let pop = popularity(&corrected).unwrap();
        assert!((pop[2] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn friendliest_pair_ranking() {
        let two = CorrectedPolarity {
            labels: vec![0, 1],
            baseline: vec![0.0; 2],
            values: vec![vec![0.0, 0.1], vec![0.2, 0.0]],
        };
        assert_eq!(friendliest_pairs(&two).len(), 1);

        let mut v = vec![vec![0.0; 3]; 3];
        v[0][2] = 0.3;
        v[2][0] = 0.2;
        v[0][1] = -0.1;
        let three = CorrectedPolarity {
            labels: vec![0, 1, 2],
            baseline: vec![0.0; 3],
            values: v,
        };
        let pairs = friendliest_pairs(&three);
        assert_eq!((pairs[0].a, pairs[0].b), (0, 2));
        assert_eq!((pairs[2].a, pairs[2].b), (0, 1));

        let anti = CorrectedPolarity {
            labels: vec![0, 1, 2],
            baseline: vec![0.0; 3],
            values: vec![
                vec![0.0, 0.1, -0.3],
                vec![-0.1, 0.0, 0.2],
                vec![0.3, -0.2, 0.0],
            ],
        };
        let pairs = friendliest_pairs(&anti);
        assert!(pairs.iter().all(|p| p.score == 0.0));
        let order: Vec<_> = pairs.iter().map(|p| (p.a, p.b)).collect();
        assert_eq!(order, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn error_formatting() {
        assert_eq!(format_with_error(0.1641, Some(0.0012)), "0.164(1)");
        assert_eq!(format_with_error(0.0042, Some(0.0002)), "0.0042(2)");
        assert_eq!(format_with_error(-0.0108, Some(0.0003)), "-0.0108(3)");
        assert_eq!(format_with_error(0.5, Some(0.00096)), "0.500(1)");
        assert_eq!(format_with_error(0.25, None), "0.2500");
    }

    #[test]
    fn summary_errors_propagate() {
        let mut p = PolarityMatrix::from_means(vec![vec![0.2, 0.1], vec![0.0, 0.1]]);
        p.stderr = vec![vec![Some(0.03), Some(0.04)], vec![Some(0.0), Some(0.0)]];
        let s = sentiment_summary(&p).unwrap();
        // s_0 = p_00 - p_01, independent errors
        assert!((s[0].self_regard_err.unwrap() - 0.05).abs() < 1e-12);
        assert!((s[0].self_regard - 0.1).abs() < 1e-15);
        assert!(
            sentiment_summary(&PolarityMatrix::from_means(vec![vec![0.0; 2]; 2]))
                .unwrap()
                .iter()
                .all(|r| r.popularity_err.is_none())
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn means() -> impl Strategy<Value = Vec<Vec<f64>>> {
            (2usize..=9).prop_flat_map(|n| {
                proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, n), n)
            })
        }

        proptest! {
            #[test]
            fn polarity_bounded_and_diluted(vals in proptest::collection::vec(-1.0f64..=1.0, 1..10)) {
                let words: Vec<String> = (0..vals.len()).map(|i| format!("w{i}")).collect();
                let lex = SentimentLexicon::from_pairs(words.iter().cloned().zip(vals.iter().copied())).unwrap();
                let p = polarity(&words, &lex);
                prop_assert!((-1.0..=1.0).contains(&p));
                let mut diluted = words.clone();
                diluted.push("unmatched".into());
                // unmatched tokens are ignored by the matched-token mean
                prop_assert_eq!(polarity(&diluted, &lex), p);
                let mut pairs: Vec<(String, f64)> = words.iter().cloned().zip(vals.iter().copied()).collect();
                pairs.push(("neutral".into(), 0.0));
                let lex = SentimentLexicon::from_pairs(pairs).unwrap();
                diluted.push("neutral".into());
                let q = polarity(&diluted, &lex);
                prop_assert!(q.abs() <= p.abs() && q * p >= 0.0);
            }

            #[test]
            fn corrected_rows_sum_to_zero_and_match_self_regard(m in means()) {
                let n = m.len() as f64;
                let p = PolarityMatrix::from_means(m);
                let c = baseline_correct(&p).unwrap();
                let s = self_regard(&p).unwrap();
                for (i, row) in c.values.iter().enumerate() {
                    prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
                    prop_assert!((c.values[i][i] - (n - 1.0) / n * s[i]).abs() < 1e-12);
                }
            }
        }
    }
}
