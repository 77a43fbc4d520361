//! Staged pipeline over versioned on-disk intermediates.
//!
//! Stages: ingest, network, communities, sweep, vocab, flow, sentiment.
//! Each reads the JSON intermediates of earlier stages from
//! `<output_dir>/intermediate/` and writes its report files into
//! `<output_dir>`. [`Pipeline::run`] executes them in order and writes
//! `manifest.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::community::{best_of_restarts, resolution_sweep, Partition};
use crate::error::{Error, Result};
use crate::flow::{
    in_out_ratio, induce_flow_matrix, net_flow_edges, null_model, rewired_null_model,
    CommunityFlowMatrix,
};
use crate::ingest::{
    locate_users, parse_many, BBox, GridSpec, PostRecord, RejectionCounts, UserLocationMap,
};
use crate::network::{
    build_mention_network, csv_err, filter_tiles, network_stats, symmetrize, write_tile_edges,
    BuiltNetwork,
};
use crate::regions::RegionIndex;
use crate::sentiment::{
    baseline_correct, format_with_error, friendliest_pairs, polarity_matrix, sentiment_summary,
    SentimentLexicon,
};
use crate::vocab::{
    cosine_matrix, region_word_vectors, tfidf, MentionCorpora, DEFAULT_RANK_THRESHOLD,
};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const INTERMEDIATE_DIR: &str = "intermediate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub bbox: BBox,
    /// Grid resolution for the main analysis.
    pub grid: u32,
    /// Resolutions for the sweep; empty means just `grid`.
    pub sweep_grids: Vec<u32>,
    pub restarts: u32,
    pub rank_threshold: f64,
    /// Without a lexicon the sentiment stage is skipped by `run`.
    pub lexicon: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub tfidf_top_k: usize,
    /// Monte-Carlo rewiring draws for the flow null-model cross-check; 0 disables it.
    pub null_samples: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            bbox: BBox::default(),
            grid: 30,
            sweep_grids: Vec::new(),
            restarts: 100,
            rank_threshold: DEFAULT_RANK_THRESHOLD,
            lexicon: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            tfidf_top_k: 20,
            null_samples: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Checks the values; file existence is checked by the stages that read them.
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        GridSpec::new(self.bbox, self.grid)?;
        for &x in &self.sweep_grids {
            GridSpec::new(self.bbox, x)?;
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if !(self.rank_threshold > 0.0 && self.rank_threshold < 1.0) {
            return Err(Error::Config(format!(
                "rank_threshold must lie in (0, 1), got {}",
                self.rank_threshold
            )));
        }
        Ok(())
    }

    pub fn sweep_resolutions(&self) -> Vec<u32> {
        if self.sweep_grids.is_empty() {
            vec![self.grid]
        } else {
            self.sweep_grids.clone()
        }
    }
}

/// Seed for one stage, derived from the top-level seed.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Network,
    Communities,
    Sweep,
    Vocab,
    Flow,
    Sentiment,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Network,
        Stage::Communities,
        Stage::Sweep,
        Stage::Vocab,
        Stage::Flow,
        Stage::Sentiment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Network => "network",
            Stage::Communities => "communities",
            Stage::Sweep => "sweep",
            Stage::Vocab => "vocab",
            Stage::Flow => "flow",
            Stage::Sentiment => "sentiment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestArtifact {
    pub grid: GridSpec,
    pub posts: Vec<PostRecord>,
    pub rejections: RejectionCounts,
    pub locations: UserLocationMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArtifact {
    pub grid: GridSpec,
    pub built: BuiltNetwork,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionArtifact {
    pub grid: GridSpec,
    pub partition: Partition,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    stage: String,
    body: T,
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub seed: Option<u64>,
    pub millis: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub inputs: Vec<FileDigest>,
    pub lexicon: Option<FileDigest>,
    pub stages: Vec<StageRecord>,
    /// Every file written by the run except the manifest, by path.
    pub outputs: Vec<FileDigest>,
    pub failed_stage: Option<Stage>,
}

impl Manifest {
    pub fn output_digests(&self) -> BTreeMap<&str, &str> {
        self.outputs
            .iter()
            .map(|d| (d.path.as_str(), d.sha256.as_str()))
            .collect()
    }
}

pub fn digest_file(path: &Path, label: String) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: label,
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

pub struct Pipeline {
    config: PipelineConfig,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline { config })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn output_path(&self, file: &str) -> PathBuf {
        self.config.output_dir.join(file)
    }

    fn intermediate(&self, stage: Stage) -> PathBuf {
        self.config
            .output_dir
            .join(INTERMEDIATE_DIR)
            .join(format!("{}.json", stage.name()))
    }

    fn seed_for(&self, stage: Stage) -> Option<u64> {
        matches!(stage, Stage::Communities | Stage::Sweep | Stage::Flow)
            .then(|| stage_seed(self.config.seed, stage.name()))
    }

    fn save<T: Serialize>(&self, stage: Stage, body: &T) -> Result<String> {
        let path = self.intermediate(stage);
        let dir = path.parent().expect("intermediate path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(
            &mut w,
            &Envelope {
                format_version: FORMAT_VERSION,
                stage: stage.name().to_string(),
                body,
            },
        )?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(format!("{INTERMEDIATE_DIR}/{}.json", stage.name()))
    }

    fn load<T: DeserializeOwned>(&self, stage: Stage) -> Result<T> {
        let path = self.intermediate(stage);
        if !path.exists() {
            return Err(Error::Prerequisite {
                stage: stage.name(),
                path,
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let header: Header = serde_json::from_str(&text)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                path,
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let env: Envelope<T> = serde_json::from_str(&text)?;
        Ok(env.body)
    }

    fn create(&self, file: &str) -> Result<BufWriter<File>> {
        let dir = &self.config.output_dir;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(file);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(BufWriter::new(f))
    }

    fn write_csv(&self, file: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
        let mut w = csv::Writer::from_writer(self.create(file)?);
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(&r).map_err(csv_err)?;
        }
        w.flush()
            .map_err(|e| Error::io(self.output_path(file), e))?;
        Ok(file.to_string())
    }

    fn write_text(&self, file: &str, text: &str) -> Result<String> {
        let mut w = self.create(file)?;
        w.write_all(text.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(self.output_path(file), e))?;
        Ok(file.to_string())
    }

    fn lexicon(&self) -> Result<SentimentLexicon> {
        match &self.config.lexicon {
            Some(p) => SentimentLexicon::from_path(p),
            None => Err(Error::Config("the sentiment stage needs a lexicon".into())),
        }
    }

    /// Runs one stage; returns the files it wrote, relative to the output directory.
    pub fn run_stage(&self, stage: Stage) -> Result<Vec<String>> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Network => self.network(),
            Stage::Communities => self.communities(),
            Stage::Sweep => self.sweep(),
            Stage::Vocab => self.vocab(),
            Stage::Flow => self.flow(),
            Stage::Sentiment => self.sentiment(),
        }
    }

    fn read_inputs(&self) -> Result<(Vec<PostRecord>, RejectionCounts)> {
        if self.config.inputs.is_empty() {
            return Err(Error::Config("no input files given".into()));
        }
        let readers = self
            .config
            .inputs
            .iter()
            .map(|p| {
                File::open(p)
                    .map(BufReader::new)
                    .map_err(|e| Error::io(p, e))
            })
            .collect::<Result<Vec<_>>>()?;
        parse_many(readers, &self.config.bbox)
    }

    pub fn ingest(&self) -> Result<Vec<String>> {
        let grid = GridSpec::new(self.config.bbox, self.config.grid)?;
        let (posts, rejections) = self.read_inputs()?;
        let locations = locate_users(&posts, &grid)?;
        let report = format!(
            "posts_kept={}\nusers_located={}\ngps_dropped={}\nout_of_bbox={}\nmalformed={}\nempty_after_clean={}\n",
            posts.len(),
            locations.len(),
            rejections.gps_dropped,
            rejections.out_of_bbox,
            rejections.malformed,
            rejections.empty_after_clean,
        );
        let artifact = IngestArtifact {
            grid,
            posts,
            rejections,
            locations,
        };
        Ok(vec![
            self.save(Stage::Ingest, &artifact)?,
            self.write_text("ingest_report.txt", &report)?,
        ])
    }

    pub fn network(&self) -> Result<Vec<String>> {
        let ing: IngestArtifact = self.load(Stage::Ingest)?;
        let built = build_mention_network(&ing.posts, &ing.locations);
        let filtered = filter_tiles(&built.network);
        let und = symmetrize(&filtered);
        let mut out = Vec::new();
        let mut w = self.create("tile_edges.csv")?;
        write_tile_edges(Some(&filtered), Some(&und), &mut w)?;
        out.push("tile_edges.csv".to_string());
        let mut stats = Vec::new();
        network_stats(&und).write_report(&mut stats)?;
        writeln!(stats, "located_events={}", built.located_events)?;
        writeln!(stats, "skipped_mentions={}", built.skipped_mentions)?;
        writeln!(stats, "raw_tiles={}", built.network.nodes().len())?;
        out.push(self.write_text("network_stats.txt", &String::from_utf8_lossy(&stats))?);
        out.push(self.save(
            Stage::Network,
            &NetworkArtifact {
                grid: ing.grid,
                built,
            },
        )?);
        Ok(out)
    }

    pub fn communities(&self) -> Result<Vec<String>> {
        let net: NetworkArtifact = self.load(Stage::Network)?;
        let und = symmetrize(&filter_tiles(&net.built.network));
        let seed = self.seed_for(Stage::Communities).expect("seeded stage");
        let partition = best_of_restarts(&und, self.config.restarts, seed)?;
        let rows = partition
            .assignment()
            .iter()
            .map(|(t, c)| vec![t.col.to_string(), t.row.to_string(), c.to_string()])
            .collect();
        let mut out = vec![self.write_csv("partition.csv", &["col", "row", "community"], rows)?];
        let geo = partition_geojson(&partition, &net.grid);
        out.push(self.write_text("partition.geojson", &format!("{geo}\n"))?);
        out.push(self.save(
            Stage::Communities,
            &PartitionArtifact {
                grid: net.grid,
                partition,
            },
        )?);
        Ok(out)
    }

    pub fn sweep(&self) -> Result<Vec<String>> {
        let ing: IngestArtifact = self.load(Stage::Ingest)?;
        self.sweep_with(&ing.posts, &self.config.sweep_resolutions())
    }

    /// Sweep over explicit resolutions, ignoring `sweep_grids`.
    pub fn sweep_grids(&self, grids: &[u32]) -> Result<Vec<String>> {
        let ing: IngestArtifact = self.load(Stage::Ingest)?;
        self.sweep_with(&ing.posts, grids)
    }

    fn sweep_with(&self, posts: &[PostRecord], grids: &[u32]) -> Result<Vec<String>> {
        let seed = self.seed_for(Stage::Sweep).expect("seeded stage");
        let rows = resolution_sweep(posts, &self.config.bbox, grids, self.config.restarts, seed)?;
        let rows = rows
            .into_iter()
            .map(|r| {
                vec![
                    r.resolution.to_string(),
                    r.community_count.to_string(),
                    r.modularity_q.map_or(String::new(), |q| q.to_string()),
                    r.empty.to_string(),
                ]
            })
            .collect();
        Ok(vec![self.write_csv(
            "sweep.csv",
            &["X", "communities", "Q", "empty"],
            rows,
        )?])
    }

    fn regions(&self) -> Result<(IngestArtifact, Partition)> {
        let ing: IngestArtifact = self.load(Stage::Ingest)?;
        let part: PartitionArtifact = self.load(Stage::Communities)?;
        Ok((ing, part.partition))
    }

    pub fn vocab(&self) -> Result<Vec<String>> {
        let (ing, partition) = self.regions()?;
        let index = RegionIndex::new(&partition, &ing.locations);
        let n = index.region_count();
        let routing = index.route(&ing.posts);
        let vectors = region_word_vectors(&routing, n);
        let mut out = Vec::new();

        let cos = cosine_matrix(&vectors)?;
        out.push(self.write_matrix("cosine_matrix.csv", &(0..n).collect::<Vec<_>>(), &cos)?);

        let terms = tfidf(&vectors, Some(self.config.tfidf_top_k))?;
        let rows = terms
            .iter()
            .flat_map(|rt| {
                rt.terms.iter().enumerate().map(move |(k, (term, score))| {
                    vec![
                        rt.region.to_string(),
                        (k + 1).to_string(),
                        term.clone(),
                        score.to_string(),
                    ]
                })
            })
            .collect();
        out.push(self.write_csv("tfidf_top.csv", &["region", "rank", "term", "score"], rows)?);

        let corpora = MentionCorpora::build(&routing, n);
        let thr = self.config.rank_threshold;
        let rows = (0..n)
            .flat_map(|i| {
                corpora
                    .local_vs_outbound(i, thr)
                    .into_iter()
                    .map(move |e| vec![i.to_string(), e.word, e.delta_r.to_string()])
            })
            .collect();
        out.push(self.write_csv(
            "rankdiff_local_out.csv",
            &["region", "term", "delta_r"],
            rows,
        )?);
        let rows = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .flat_map(|(i, j)| {
                corpora
                    .pairwise(i, j, thr)
                    .into_iter()
                    .map(move |e| vec![i.to_string(), j.to_string(), e.word, e.delta_r.to_string()])
            })
            .collect();
        out.push(self.write_csv("rankdiff_pairs.csv", &["i", "j", "term", "delta_r"], rows)?);
        Ok(out)
    }

    pub fn flow(&self) -> Result<Vec<String>> {
        let net: NetworkArtifact = self.load(Stage::Network)?;
        let part: PartitionArtifact = self.load(Stage::Communities)?;
        let flow = induce_flow_matrix(&filter_tiles(&net.built.network), &part.partition)?;
        let mut out = vec![self.write_flow("flow_observed.csv", &flow)?];
        out.push(self.write_flow("flow_null.csv", &null_model(&flow)?)?);
        if self.config.null_samples > 0 {
            let seed = self.seed_for(Stage::Flow).expect("seeded stage");
            let rewired = rewired_null_model(&flow, self.config.null_samples, seed)?;
            out.push(self.write_flow("flow_null_rewired.csv", &rewired)?);
        }
        let rows = net_flow_edges(&flow)
            .into_iter()
            .map(|e| vec![e.from.to_string(), e.to.to_string(), e.weight.to_string()])
            .collect();
        out.push(self.write_csv("net_flow_edges.csv", &["from", "to", "weight"], rows)?);
        let rows = in_out_ratio(&flow)
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                vec![
                    flow.labels[i].to_string(),
                    r.map_or(String::new(), |r| format!("{r:.3}")),
                ]
            })
            .collect();
        out.push(self.write_csv("inout_ratio.csv", &["region", "in_out_ratio"], rows)?);
        Ok(out)
    }

    pub fn sentiment(&self) -> Result<Vec<String>> {
        let lexicon = self.lexicon()?;
        let (ing, partition) = self.regions()?;
        let index = RegionIndex::new(&partition, &ing.locations);
        let n = index.region_count();
        let routing = index.route(&ing.posts);
        let pm = polarity_matrix(&routing, n, &lexicon);
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let rows = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| {
                vec![
                    i.to_string(),
                    j.to_string(),
                    opt(pm.mean[i][j]),
                    pm.count[i][j].to_string(),
                    opt(pm.stderr[i][j]),
                ]
            })
            .collect();
        let mut out = vec![self.write_csv(
            "polarity_matrix.csv",
            &["i", "j", "mean", "count", "stderr"],
            rows,
        )?];

        // Derived quantities need every cell, so drop regions with empty cells.
        let complete = pm.restrict(&pm.complete_regions());
        let (corrected_rows, summary_rows, pair_rows) = if complete.size() >= 2 {
            let corrected = baseline_correct(&complete)?;
            let m = complete.size();
            let corrected_rows = (0..m)
                .flat_map(|a| (0..m).map(move |b| (a, b)))
                .map(|(a, b)| {
                    vec![
                        corrected.labels[a].to_string(),
                        corrected.labels[b].to_string(),
                        corrected.values[a][b].to_string(),
                        corrected.baseline[a].to_string(),
                    ]
                })
                .collect();
            let summary_rows = sentiment_summary(&complete)?
                .into_iter()
                .map(|s| {
                    vec![
                        s.region.to_string(),
                        format_with_error(s.self_regard, s.self_regard_err),
                        format_with_error(s.popularity, s.popularity_err),
                        s.self_regard.to_string(),
                        s.popularity.to_string(),
                    ]
                })
                .collect();
            let pair_rows = friendliest_pairs(&corrected)
                .into_iter()
                .map(|p| vec![p.a.to_string(), p.b.to_string(), p.score.to_string()])
                .collect();
            (corrected_rows, summary_rows, pair_rows)
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        out.push(self.write_csv(
            "polarity_corrected.csv",
            &["i", "j", "corrected", "baseline_i"],
            corrected_rows,
        )?);
        out.push(self.write_csv(
            "sentiment_summary.csv",
            &[
                "region",
                "self_regard",
                "popularity",
                "self_regard_value",
                "popularity_value",
            ],
            summary_rows,
        )?);
        out.push(self.write_csv("friendliest_pairs.csv", &["a", "b", "score"], pair_rows)?);
        Ok(out)
    }

    fn write_matrix(&self, file: &str, labels: &[usize], m: &[Vec<f64>]) -> Result<String> {
        let mut header = vec!["region".to_string()];
        header.extend(labels.iter().map(|l| l.to_string()));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = labels
            .iter()
            .zip(m)
            .map(|(l, row)| {
                std::iter::once(l.to_string())
                    .chain(row.iter().map(|v| v.to_string()))
                    .collect()
            })
            .collect();
        self.write_csv(file, &header, rows)
    }

    fn write_flow(&self, file: &str, flow: &CommunityFlowMatrix) -> Result<String> {
        self.write_matrix(file, &flow.labels, &flow.m)
    }

    /// Runs every stage in order and writes `manifest.json`. On a stage
    /// failure the manifest marks it, later stages are not attempted, and
    /// the error is returned after the manifest is written.
    pub fn run(&self) -> Result<Manifest> {
        let cfg = &self.config;
        let mut manifest = Manifest {
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            inputs: Vec::new(),
            lexicon: None,
            stages: Vec::new(),
            outputs: Vec::new(),
            failed_stage: None,
        };
        let mut failure = None;
        let digests = cfg
            .inputs
            .iter()
            .map(|p| digest_file(p, p.display().to_string()))
            .collect::<Result<Vec<_>>>()
            .and_then(|inputs| {
                let lex = cfg
                    .lexicon
                    .as_ref()
                    .map(|p| digest_file(p, p.display().to_string()))
                    .transpose()?;
                Ok((inputs, lex))
            });
        match digests {
            Ok((inputs, lex)) => {
                manifest.inputs = inputs;
                manifest.lexicon = lex;
            }
            Err(e) => {
                manifest.failed_stage = Some(Stage::Ingest);
                failure = Some(e);
            }
        }

        let mut written = Vec::new();
        for stage in Stage::ALL {
            let seed = self.seed_for(stage);
            if failure.is_some() || (stage == Stage::Sentiment && cfg.lexicon.is_none()) {
                manifest.stages.push(StageRecord {
                    stage,
                    status: StageStatus::Skipped,
                    seed,
                    millis: 0,
                    error: None,
                });
                continue;
            }
            let t0 = Instant::now();
            let result = self.run_stage(stage);
            let millis = t0.elapsed().as_millis() as u64;
            match result {
                Ok(files) => {
                    written.extend(files);
                    manifest.stages.push(StageRecord {
                        stage,
                        status: StageStatus::Ok,
                        seed,
                        millis,
                        error: None,
                    });
                }
                Err(e) => {
                    manifest.stages.push(StageRecord {
                        stage,
                        status: StageStatus::Failed,
                        seed,
                        millis,
                        error: Some(e.to_string()),
                    });
                    manifest.failed_stage = Some(stage);
                    failure = Some(e);
                }
            }
        }

        written.sort();
        written.dedup();
        manifest.outputs = written
            .into_iter()
            .map(|f| digest_file(&cfg.output_dir.join(&f), f))
            .collect::<Result<_>>()?;
        let mut w = self.create(MANIFEST_FILE)?;
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(self.output_path(MANIFEST_FILE), e))?;
        match failure {
            Some(e) => Err(e),
            None => Ok(manifest),
        }
    }
}

/// Tile polygons with their community, for choropleth plotting.
pub fn partition_geojson(partition: &Partition, grid: &GridSpec) -> serde_json::Value {
    let features: Vec<serde_json::Value> = partition
        .assignment()
        .iter()
        .map(|(&t, &c)| {
            let corners = grid.tile_bounds(t);
            let mut ring: Vec<[f64; 2]> = corners.iter().map(|&(x, y)| [x, y]).collect();
            ring.push(ring[0]);
            serde_json::json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": [ring] },
                "properties": { "col": t.col, "row": t.row, "community": c },
            })
        })
        .collect();
    serde_json::json!({ "type": "FeatureCollection", "features": features })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pipeline(dir: &Path) -> Pipeline {
        Pipeline::new(PipelineConfig {
            output_dir: dir.to_path_buf(),
            ..PipelineConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn config_defaults_and_toml() {
        let cfg = PipelineConfig::from_toml(
            "inputs = [\"a.jsonl\"]\nsweep_grids = [10, 30, 52]\nseed = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.grid, 30);
        assert_eq!(cfg.restarts, 100);
        assert_eq!(cfg.sweep_resolutions(), vec![10, 30, 52]);
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn config_validation() {
        let bad = |f: fn(&mut PipelineConfig)| {
            let mut c = PipelineConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.restarts = 0));
        assert!(bad(|c| c.rank_threshold = 0.0));
        assert!(bad(|c| c.rank_threshold = 1.0));
        assert!(bad(|c| c.grid = 1));
        assert!(bad(|c| c.sweep_grids = vec![10, 0]));
        assert!(!bad(|_| ()));
    }

    #[test]
    fn stage_seeds_differ_and_are_stable() {
        assert_eq!(stage_seed(1, "sweep"), stage_seed(1, "sweep"));
        assert_ne!(stage_seed(1, "sweep"), stage_seed(1, "communities"));
        assert_ne!(stage_seed(1, "sweep"), stage_seed(2, "sweep"));
    }

    #[test]
    fn missing_intermediate_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let err = pipeline(dir.path()).communities().unwrap_err();
        assert!(
            matches!(
                err,
                Error::Prerequisite {
                    stage: "network",
                    ..
                }
            ),
            "{err}"
        );
        assert!(err.to_string().contains("run stage `network` first"));
    }

    #[test]
    fn stale_format_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = pipeline(dir.path());
        fs::create_dir_all(dir.path().join(INTERMEDIATE_DIR)).unwrap();
        fs::write(
            p.intermediate(Stage::Ingest),
            r#"{"format_version": 0, "stage": "ingest", "body": null}"#,
        )
        .unwrap();
        let err = p.network().unwrap_err();
        assert!(
            matches!(
                err,
                Error::FormatVersion {
                    found: 0,
                    expected: 1,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn geojson_rings_are_closed() {
        let grid = GridSpec::new(BBox::default(), 10).unwrap();
        let part = Partition::from_assignment([(crate::ingest::TileId::new(2, 3), 0)]);
        let geo = partition_geojson(&part, &grid);
        let ring = &geo["features"][0]["geometry"]["coordinates"][0];
        assert_eq!(ring.as_array().unwrap().len(), 5);
        assert_eq!(ring[0], ring[4]);
        assert_eq!(geo["features"][0]["properties"]["community"], 0);
    }
}
