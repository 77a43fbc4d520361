//! Seed-deterministic synthetic corpora with planted regions.
//!
//! Each region owns a rectangular block of tiles in the configured grid and a
//! handful of "places" (fixed coordinates, like place tags) inside it. Users
//! live at a home place and occasionally post from a second place in the
//! same region. A mention targets a random user of the author's own region
//! with probability `intra_bias`, otherwise a random user of a uniformly
//! chosen other region.
//!
//! Text is drawn from a Zipf-weighted shared vocabulary. Posts with at least
//! one intra-region mention carry the region's dialect words. Every post
//! carries exactly one sentiment word from the generated lexicon, sampled
//! symmetrically around the `sentiment_offset` of the first mentioned user's
//! region, so the expected polarity of a message equals that offset.
//!
//! Randomness comes from a single `ChaCha8Rng` seeded with `seed` and
//! consumed in a fixed order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{tile_of, BBox, GridSpec, LocationKind, RawPost, TileId};
use crate::sentiment::SentimentLexicon;
use crate::vocab::tokenize;

const LEXICON_STEP: f64 = 0.05;

/// Inclusive tile rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileBlock {
    pub col_min: u32,
    pub row_min: u32,
    pub col_max: u32,
    pub row_max: u32,
}

impl TileBlock {
    pub fn contains(&self, t: TileId) -> bool {
        (self.col_min..=self.col_max).contains(&t.col)
            && (self.row_min..=self.row_max).contains(&t.row)
    }

    fn overlaps(&self, other: &TileBlock) -> bool {
        self.col_min <= other.col_max
            && other.col_min <= self.col_max
            && self.row_min <= other.row_max
            && other.row_min <= self.row_max
    }

    pub fn tiles(&self) -> impl Iterator<Item = TileId> + '_ {
        (self.col_min..=self.col_max)
            .flat_map(move |c| (self.row_min..=self.row_max).map(move |r| TileId::new(c, r)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub name: String,
    pub block: TileBlock,
    pub user_count: u32,
    /// Number of distinct posting locations in the region.
    pub places: u32,
    /// Probability that a post mentions someone.
    pub base_mention_rate: f64,
    pub intra_bias: f64,
    pub dialect_words: Vec<String>,
    /// Probability that each dialect word appears in an intra-region post.
    pub dialect_rate: f64,
    /// Mean polarity of messages addressed to this region.
    pub sentiment_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub regions: Vec<RegionSpec>,
    pub posts_per_user_min: u32,
    pub posts_per_user_max: u32,
    pub words_per_post_min: u32,
    pub words_per_post_max: u32,
    /// Probability that a mentioning post names a second user.
    pub second_mention_rate: f64,
    /// Probability that a post comes from the user's secondary place.
    pub mobility: f64,
    pub shared_vocab: Vec<String>,
    pub start: DateTime<Utc>,
    pub span_days: u32,
}

const SHARED_VOCAB: &[&str] = &[
    "the", "to", "and", "a", "of", "in", "is", "you", "for", "it", "on", "my", "that", "this",
    "with", "be", "just", "at", "me", "so", "have", "are", "not", "all", "we", "your", "was",
    "but", "day", "love", "get", "like", "now", "today", "time", "see", "night", "week", "back",
    "home", "tonight", "thanks", "people", "work", "game", "team", "news", "brexit", "nhs", "eu",
];

const DIALECTS: &[(&str, &[&str])] = &[
    ("north", &["ginnel", "mardy", "nowt"]),
    ("midlands", &["bostin", "babby", "yampy"]),
    ("west", &["dreckly", "gurt", "emmet"]),
    ("east", &["peng", "innit", "bruv"]),
];

impl SynthConfig {
    /// Four quadrant regions on a 10×10 grid over the default bounding box,
    /// 60 users each.
    pub fn four_regions(seed: u64) -> Self {
        let blocks = [(0, 5), (5, 5), (0, 0), (5, 0)];
        let regions = DIALECTS
            .iter()
            .zip(blocks)
            .map(|(&(name, words), (c, r))| RegionSpec {
                name: name.to_string(),
                block: TileBlock {
                    col_min: c,
                    row_min: r,
                    col_max: c + 4,
                    row_max: r + 4,
                },
                user_count: 60,
                places: 5,
                base_mention_rate: 0.8,
                intra_bias: 0.9,
                dialect_words: words.iter().map(|w| w.to_string()).collect(),
                dialect_rate: 0.5,
                sentiment_offset: 0.0,
            })
            .collect();
        SynthConfig {
            seed,
            grid: GridSpec {
                bbox: BBox::default(),
                resolution: 10,
            },
            regions,
            posts_per_user_min: 20,
            posts_per_user_max: 20,
            words_per_post_min: 6,
            words_per_post_max: 12,
            second_mention_rate: 0.25,
            mobility: 0.15,
            shared_vocab: SHARED_VOCAB.iter().map(|w| w.to_string()).collect(),
            start: DateTime::parse_from_rfc3339("2017-10-01T00:00:00Z")
                .expect("valid literal")
                .with_timezone(&Utc),
            span_days: 172,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if let Err(e) = self.grid.validate() {
            errs.push(e.to_string());
        }
        if self.regions.is_empty() {
            errs.push("at least one region is required".into());
        }
        let lexicon = synth_lexicon();
        let check_word = |errs: &mut Vec<String>, w: &str, what: &str| {
            if tokenize(w) != [w] {
                errs.push(format!("{what} word {w:?} is not a single lowercase token"));
            } else if lexicon.get(w).is_some() {
                errs.push(format!(
                    "{what} word {w:?} collides with the sentiment lexicon"
                ));
            }
        };
        let mut names = BTreeSet::new();
        for (i, r) in self.regions.iter().enumerate() {
            let tag = format!("region {i} ({})", r.name);
            if !names.insert(r.name.as_str()) {
                errs.push(format!("{tag}: duplicate name"));
            }
            if tokenize(&r.name) != [r.name.as_str()] {
                errs.push(format!("{tag}: name must be a single lowercase token"));
            }
            let b = r.block;
            if b.col_min > b.col_max || b.row_min > b.row_max {
                errs.push(format!("{tag}: block bounds inverted"));
            }
            if b.col_max >= self.grid.resolution || b.row_max >= self.grid.resolution {
                errs.push(format!("{tag}: block exceeds the grid"));
            }
            if r.user_count < 2 {
                errs.push(format!("{tag}: needs at least 2 users"));
            }
            if r.places == 0 {
                errs.push(format!("{tag}: needs at least one place"));
            }
            if !(r.base_mention_rate > 0.0 && r.base_mention_rate <= 1.0) {
                errs.push(format!("{tag}: base_mention_rate must be in (0, 1]"));
            }
            if !(0.5..=1.0).contains(&r.intra_bias) {
                errs.push(format!("{tag}: intra_bias must be in [0.5, 1]"));
            }
            if !(r.dialect_rate > 0.0 && r.dialect_rate <= 1.0) {
                errs.push(format!("{tag}: dialect_rate must be in (0, 1]"));
            }
            if !(-0.5..=0.5).contains(&r.sentiment_offset) {
                errs.push(format!("{tag}: sentiment_offset must be in [-0.5, 0.5]"));
            }
            for w in &r.dialect_words {
                check_word(&mut errs, w, "dialect");
            }
            for (j, other) in self.regions.iter().enumerate().skip(i + 1) {
                if b.overlaps(&other.block) {
                    errs.push(format!("{tag}: block overlaps region {j}"));
                }
            }
        }
        if self.shared_vocab.is_empty() {
            errs.push("shared_vocab is empty".into());
        }
        for w in &self.shared_vocab {
            check_word(&mut errs, w, "shared");
        }
        if self.posts_per_user_min == 0 || self.posts_per_user_min > self.posts_per_user_max {
            errs.push("posts_per_user range must satisfy 1 <= min <= max".into());
        }
        if self.words_per_post_min == 0 || self.words_per_post_min > self.words_per_post_max {
            errs.push("words_per_post range must satisfy 1 <= min <= max".into());
        }
        if !(0.0..=1.0).contains(&self.second_mention_rate) {
            errs.push("second_mention_rate must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.mobility) {
            errs.push("mobility must be in [0, 1]".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::SynthConfig(errs))
        }
    }
}

/// Lexicon of `mood*` words on a 0.05 grid over `[-1, 1]`.
pub fn synth_lexicon() -> SentimentLexicon {
    let pairs = (-20..=20).map(|k| (mood_word(k), k as f64 / 20.0));
    SentimentLexicon::from_pairs(pairs).expect("grid values lie in [-1, 1]")
}

fn mood_word(step: i32) -> String {
    match step {
        0 => "moodz00".to_string(),
        s if s > 0 => format!("moodp{:02}", s * 5),
        s => format!("moodn{:02}", -s * 5),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub region: usize,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthUser {
    pub id: String,
    pub region: usize,
    pub home: usize,
    pub secondary: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub places: Vec<Place>,
    pub users: Vec<SynthUser>,
    pub posts: Vec<RawPost>,
    pub lexicon: SentimentLexicon,
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let grid = &config.grid;
    let (w, h) = (grid.cell_width(), grid.cell_height());
    let bbox = grid.bbox;

    let mut places = Vec::new();
    let mut region_places: Vec<Vec<usize>> = Vec::new();
    for (ri, r) in config.regions.iter().enumerate() {
        let lon0 = bbox.lon_min + r.block.col_min as f64 * w;
        let lon1 = bbox.lon_min + (r.block.col_max + 1) as f64 * w;
        let lat0 = bbox.lat_min + r.block.row_min as f64 * h;
        let lat1 = bbox.lat_min + (r.block.row_max + 1) as f64 * h;
        let mut ids = Vec::new();
        for _ in 0..r.places {
            ids.push(places.len());
            places.push(Place {
                region: ri,
                // stay off the outer block edges so places never spill into a neighbour
                lon: lon0 + (lon1 - lon0) * rng.random_range(0.02..0.98),
                lat: lat0 + (lat1 - lat0) * rng.random_range(0.02..0.98),
            });
        }
        region_places.push(ids);
    }

    let mut users = Vec::new();
    let mut region_users: Vec<Vec<usize>> = Vec::new();
    for (ri, r) in config.regions.iter().enumerate() {
        let mut ids = Vec::new();
        for k in 0..r.user_count {
            let pl = &region_places[ri];
            ids.push(users.len());
            users.push(SynthUser {
                id: format!("{}_{k:04}", r.name),
                region: ri,
                home: pl[rng.random_range(0..pl.len())],
                secondary: pl[rng.random_range(0..pl.len())],
            });
        }
        region_users.push(ids);
    }

    let zipf: Vec<f64> = (1..=config.shared_vocab.len())
        .map(|k| 1.0 / k as f64)
        .collect();
    let vocab_dist = WeightedIndex::new(&zipf).expect("non-empty positive weights");
    let span_secs = i64::from(config.span_days) * 86_400;

    let mut posts = Vec::new();
    for (ui, user) in users.iter().enumerate() {
        let region = &config.regions[user.region];
        let n_posts = rng.random_range(config.posts_per_user_min..=config.posts_per_user_max);
        for _ in 0..n_posts {
            let place = if rng.random_bool(config.mobility) {
                user.secondary
            } else {
                user.home
            };

            let mut targets: Vec<usize> = Vec::new();
            if rng.random_bool(region.base_mention_rate) {
                targets.push(pick_target(&mut rng, ui, user, region, &region_users));
                if rng.random_bool(config.second_mention_rate) {
                    targets.push(pick_target(&mut rng, ui, user, region, &region_users));
                }
            }
            let intra = targets.iter().any(|&t| users[t].region == user.region);

            let n_words = rng.random_range(config.words_per_post_min..=config.words_per_post_max);
            let mut words: Vec<String> = (0..n_words)
                .map(|_| config.shared_vocab[vocab_dist.sample(&mut rng)].clone())
                .collect();
            if intra {
                for d in &region.dialect_words {
                    if rng.random_bool(region.dialect_rate) {
                        let at = rng.random_range(0..=words.len());
                        words.insert(at, d.clone());
                    }
                }
            }
            let offset = targets
                .first()
                .map_or(0.0, |&t| config.regions[users[t].region].sentiment_offset);
            let centre = (offset / LEXICON_STEP).round() as i32;
            let mood = mood_word(centre + [-4, -2, 0, 2, 4][rng.random_range(0..5)]);
            let at = rng.random_range(0..=words.len());
            words.insert(at, mood);

            let mut text = String::new();
            for &t in &targets {
                text.push('@');
                text.push_str(&users[t].id);
                text.push(' ');
            }
            text.push_str(&words.join(" "));
            if rng.random_bool(0.2) {
                let tag = &config.shared_vocab[vocab_dist.sample(&mut rng)];
                text.push_str(&format!(" #{}", tag.to_uppercase()));
            }
            if rng.random_bool(0.1) {
                text.push_str(&format!(" https://t.co/{:08x}", rng.random::<u32>()));
            }

            let ts = config.start + Duration::seconds(rng.random_range(0..span_secs.max(1)));
            let p = &places[place];
            posts.push(RawPost {
                id: format!("s{}-{:07}", config.seed, posts.len()),
                user_id: user.id.clone(),
                mentions: targets.iter().map(|&t| users[t].id.clone()).collect(),
                text,
                lon: p.lon,
                lat: p.lat,
                loc_kind: LocationKind::PlaceTag,
                ts,
            });
        }
    }

    Ok(SynthCorpus {
        config: config.clone(),
        places,
        users,
        posts,
        lexicon: synth_lexicon(),
    })
}

fn pick_target(
    rng: &mut ChaCha8Rng,
    author: usize,
    user: &SynthUser,
    region: &RegionSpec,
    region_users: &[Vec<usize>],
) -> usize {
    let n_regions = region_users.len();
    if n_regions == 1 || rng.random_bool(region.intra_bias) {
        // uniform over the region minus the author
        let own = &region_users[user.region];
        let k = rng.random_range(0..own.len() - 1);
        let pos = own
            .iter()
            .position(|&u| u == author)
            .expect("author in own region");
        return own[if k >= pos { k + 1 } else { k }];
    }
    let k = rng.random_range(0..n_regions - 1);
    let pool = &region_users[if k >= user.region { k + 1 } else { k }];
    pool[rng.random_range(0..pool.len())]
}

impl SynthCorpus {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.posts {
            out.push_str(&raw_post_json(p));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for p in &self.posts {
            writeln!(out, "{}", raw_post_json(p))?;
        }
        Ok(())
    }

    /// Writes `posts.jsonl`, `truth_tiles.csv`, `truth_users.csv` and
    /// `lexicon.tsv` into `dir`, returning their paths.
    pub fn write_bundle(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| -> Result<(PathBuf, BufWriter<File>)> {
            let path = dir.join(name);
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            Ok((path, BufWriter::new(f)))
        };
        let (posts, mut w) = create("posts.jsonl")?;
        self.write_jsonl(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&posts, e))?;
        let (tiles, w) = create("truth_tiles.csv")?;
        self.write_truth_tiles(w)?;
        let (users, w) = create("truth_users.csv")?;
        self.write_truth_users(w)?;
        let (lex, mut w) = create("lexicon.tsv")?;
        w.write_all(self.lexicon.to_tsv().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&lex, e))?;
        Ok(vec![posts, tiles, users, lex])
    }

    /// Planted region of each user.
    pub fn user_truth(&self) -> BTreeMap<String, usize> {
        self.users
            .iter()
            .map(|u| (u.id.clone(), u.region))
            .collect()
    }

    /// Planted region of every tile in the configured grid's region blocks.
    pub fn block_truth(&self) -> BTreeMap<TileId, usize> {
        self.config
            .regions
            .iter()
            .enumerate()
            .flat_map(|(ri, r)| r.block.tiles().map(move |t| (t, ri)))
            .collect()
    }

    /// Planted region of each tile of `grid` that holds at least one place;
    /// a tile holding places of several regions takes the most common one.
    pub fn place_truth(&self, grid: &GridSpec) -> Result<BTreeMap<TileId, usize>> {
        let mut tally: BTreeMap<TileId, BTreeMap<usize, u32>> = BTreeMap::new();
        for p in &self.places {
            let t = tile_of(p.lon, p.lat, grid)?;
            *tally.entry(t).or_default().entry(p.region).or_insert(0) += 1;
        }
        Ok(tally
            .into_iter()
            .map(|(t, counts)| {
                let best = counts
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(&r, _)| r)
                    .expect("non-empty tally");
                (t, best)
            })
            .collect())
    }

    /// `truth_tiles.csv`: `col,row,region`.
    pub fn write_truth_tiles<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["col", "row", "region"])
            .map_err(crate::network::csv_err)?;
        for (t, r) in self.block_truth() {
            w.write_record([
                t.col.to_string(),
                t.row.to_string(),
                self.config.regions[r].name.clone(),
            ])
            .map_err(crate::network::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `truth_users.csv`: `user_id,region`.
    pub fn write_truth_users<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "region"])
            .map_err(crate::network::csv_err)?;
        for u in &self.users {
            w.write_record([u.id.as_str(), self.config.regions[u.region].name.as_str()])
                .map_err(crate::network::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn raw_post_json(p: &RawPost) -> String {
    serde_json::json!({
        "id": p.id,
        "user_id": p.user_id,
        "mentions": p.mentions,
        "text": p.text,
        "lon": p.lon,
        "lat": p.lat,
        "loc_kind": "place",
        "ts": p.ts.to_rfc3339_opts(SecondsFormat::Secs, true),
    })
    .to_string()
}
