//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use geosocial::community::{best_of_restarts, modularity, resolution_sweep};
use geosocial::flow::{induce_flow_matrix, null_model, CommunityFlowMatrix};
use geosocial::ingest::TileId;
use geosocial::metrics::adjusted_rand_index;
use geosocial::network::filter_tiles;
use geosocial::pipeline::{Pipeline, PipelineConfig};
use geosocial::regions::RegionIndex;
use geosocial::sentiment::{
    baseline_correct, polarity_matrix, self_regard, sentiment_summary, PolarityMatrix,
};
use geosocial::synth::{generate, SynthConfig};
use geosocial::vocab::{
    cosine, rank_differences, rank_vector, region_word_vectors, tfidf, MentionCorpora, Scope,
    WordVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn modularity_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut hits, mut partitions_checked) = (0, 0);
    for g in 0..50 {
        let n = rng.random_range(4..=8);
        let edges = random_graph(&mut rng, n);
        let net = tile_network(n, &edges);
        let mut best = f64::NEG_INFINITY;
        for labels in set_partitions(n) {
            let oracle = brute_modularity(n, &edges, &labels);
            let q = modularity(&net, &labels_partition(&labels)).map_err(|e| e.to_string())?;
            ensure!(
                (q - oracle).abs() <= 1e-12,
                "graph {g}: modularity {q} vs brute force {oracle}"
            );
            best = best.max(oracle);
            partitions_checked += 1;
        }
        let found = best_of_restarts(&net, 100, g).map_err(|e| e.to_string())?;
        if found.modularity_q >= best - 1e-9 {
            hits += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(hits >= 48, "optimum reached on {hits}/50 graphs, need 48");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("optimum on {hits}/50 graphs, {partitions_checked} partitions match brute force, {elapsed:.1?}"))
}

fn write_corpus(cfg: &SynthConfig, dir: &Path) -> PipelineConfig {
    let corpus = generate(cfg).unwrap();
    let files = corpus.write_bundle(&dir.join("data")).unwrap();
    PipelineConfig {
        inputs: vec![files[0].clone()],
        lexicon: Some(files[3].clone()),
        grid: cfg.grid.resolution,
        bbox: cfg.grid.bbox,
        output_dir: dir.join("out"),
        seed: 17,
        ..PipelineConfig::default()
    }
}

fn read_partition(path: &Path) -> BTreeMap<TileId, usize> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<u32> = l.split(',').map(|v| v.parse().unwrap()).collect();
            (TileId::new(f[0], f[1]), f[2] as usize)
        })
        .collect()
}

fn planted_recovery() -> Outcome {
    let start = Instant::now();
    let cfg = SynthConfig::four_regions(42);
    let users: u32 = cfg.regions.iter().map(|r| r.user_count).sum();
    ensure!(users >= 200, "only {users} users");
    let truth = generate(&cfg).unwrap().place_truth(&cfg.grid).unwrap();
    let mut partitions = Vec::new();
    for run in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let pc = write_corpus(&cfg, dir.path());
        Pipeline::new(pc)
            .unwrap()
            .run()
            .map_err(|e| format!("run {run}: {e}"))?;
        partitions.push(read_partition(&dir.path().join("out/partition.csv")));
    }
    let found = &partitions[0];
    ensure!(partitions[0] == partitions[1], "reruns disagree");
    let communities = found.values().max().map_or(0, |m| m + 1);
    ensure!(communities == 4, "found {communities} communities");
    let (pred, planted): (Vec<usize>, Vec<usize>) =
        found.iter().map(|(t, &c)| (c, truth[t])).unzip();
    let ari = adjusted_rand_index(&pred, &planted);
    let elapsed = start.elapsed();
    ensure!(ari >= 0.99, "ARI {ari}");
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "{users} users, 4 communities over {} tiles, ARI {ari}, deterministic, {elapsed:.1?}",
        pred.len()
    ))
}

fn two_triangles() -> Outcome {
    let edges = [
        (0, 1, 1.0),
        (1, 2, 1.0),
        (0, 2, 1.0),
        (3, 4, 1.0),
        (4, 5, 1.0),
        (3, 5, 1.0),
        (2, 3, 1.0),
    ];
    let q = modularity(
        &tile_network(6, &edges),
        &labels_partition(&[0, 0, 0, 1, 1, 1]),
    )
    .map_err(|e| e.to_string())?;
    ensure!((q - 5.0 / 14.0).abs() <= 1e-12, "Q = {q}");
    Ok(format!("Q = {q}"))
}

fn null_model_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let n = 2 + trial % 8;
        let integral = trial % 2 == 0;
        let m: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        if integral {
                            rng.random_range(1..500) as f64
                        } else {
                            rng.random_range(0.01..100.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let flow = CommunityFlowMatrix::new(m);
        let null = null_model(&flow).map_err(|e| e.to_string())?;
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| null.m[i][j]).sum();
            ensure!(
                within(off, flow.out_degree(i), 1e-9),
                "trial {trial} row {i}: {off} vs {}",
                flow.out_degree(i)
            );
            ensure!(
                null.m[i][i] == flow.m[i][i],
                "trial {trial}: diagonal {i} changed"
            );
        }
        if n == 2 {
            ensure!(
                null.m[0][1] == flow.m[0][1] && null.m[1][0] == flow.m[1][0],
                "trial {trial}: N=2 off-diagonals differ"
            );
        }
    }
    Ok("100 matrices, N in 2..=9".into())
}

fn sentiment_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let n = rng.random_range(2..=10);
        let means: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        let p = PolarityMatrix::from_means(means);
        let c = baseline_correct(&p).map_err(|e| e.to_string())?;
        let s = self_regard(&p).map_err(|e| e.to_string())?;
        let nf = n as f64;
        for (i, &s_i) in s.iter().enumerate() {
            let row: f64 = c.values[i].iter().sum();
            ensure!(row.abs() <= 1e-12, "trial {trial} row {i} sums to {row}");
            let expect = (nf - 1.0) / nf * s_i;
            ensure!(
                (c.values[i][i] - expect).abs() <= 1e-12,
                "trial {trial}: p~_ii {} vs {expect}",
                c.values[i][i]
            );
        }
    }

    let mut cfg = SynthConfig::four_regions(5);
    let k = 2;
    cfg.regions[k].sentiment_offset = 0.1;
    let a = analyse(&cfg, 50);
    let index = RegionIndex::new(&a.partition, &a.locations);
    let n = index.region_count();
    ensure!(n == 4, "{n} communities");
    let label = index
        .region_of_user(&a.corpus.users.iter().find(|u| u.region == k).unwrap().id)
        .unwrap();
    let pm = polarity_matrix(&index.route(&a.posts), n, &a.corpus.lexicon);
    let summary = sentiment_summary(&pm).map_err(|e| e.to_string())?;
    let target = summary
        .iter()
        .find(|s| s.region == label)
        .unwrap()
        .popularity;
    for s in &summary {
        ensure!(
            s.region == label || s.popularity < target,
            "region {} popularity {} >= {target}",
            s.region,
            s.popularity
        );
    }
    Ok(format!(
        "identities hold on 100 matrices; boosted region popularity {target:.4}"
    ))
}

fn rank_difference_planted() -> Outcome {
    let mut cfg = SynthConfig::four_regions(8);
    for r in &mut cfg.regions {
        r.user_count = 100;
        r.dialect_words.clear();
    }
    cfg.regions[0].dialect_words = vec!["localword".into()];
    cfg.regions[0].dialect_rate = 0.6;
    cfg.second_mention_rate = 0.03;
    cfg.posts_per_user_min = 30;
    cfg.posts_per_user_max = 30;
    let a = analyse(&cfg, 20);
    let index = RegionIndex::new(&a.partition, &a.locations);
    let home = index.region_of_user(&a.corpus.users[0].id).unwrap();
    let corpora = MentionCorpora::build(&index.route(&a.posts), index.region_count());
    let diffs = corpora.local_vs_outbound(home, 0.001);
    let bottom: Vec<&str> = diffs
        .iter()
        .rev()
        .take(3)
        .map(|e| e.word.as_str())
        .collect();
    ensure!(
        bottom.contains(&"localword"),
        "most negative entries: {bottom:?}"
    );
    let dr = diffs
        .iter()
        .find(|e| e.word == "localword")
        .unwrap()
        .delta_r;

    let local = &corpora.local[home];
    let same = rank_differences(
        &rank_vector(local, Scope::Local(home)),
        &rank_vector(local, Scope::Outbound(home)),
        0.001,
    );
    ensure!(
        !same.is_empty() && same.iter().all(|e| e.delta_r == 0),
        "identical corpora gave nonzero ranks"
    );

    let out = &corpora.outbound[home];
    let fwd = rank_differences(
        &rank_vector(local, Scope::Local(home)),
        &rank_vector(out, Scope::Outbound(home)),
        0.001,
    );
    let back = rank_differences(
        &rank_vector(out, Scope::Outbound(home)),
        &rank_vector(local, Scope::Local(home)),
        0.001,
    );
    let as_map = |v: &[geosocial::vocab::RankDiffEntry], sign: i64| -> BTreeMap<String, i64> {
        v.iter()
            .map(|e| (e.word.clone(), sign * e.delta_r))
            .collect()
    };
    ensure!(
        as_map(&fwd, 1) == as_map(&back, -1),
        "swap is not antisymmetric"
    );
    Ok(format!(
        "localword delta_r {dr} (most negative 3: {bottom:?}); zero and antisymmetry hold"
    ))
}

fn vocabulary_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut vectors: Vec<WordVector> = (0..20)
        .map(|r| {
            let mut v = WordVector::new(r);
            v.total_tweets = rng.random_range(1..1000);
            for w in 0..rng.random_range(1..30) {
                v.counts.insert(format!("w{w}"), rng.random_range(1..200));
            }
            v
        })
        .collect();
    let a = analyse(&SynthConfig::four_regions(21), 20);
    let index = RegionIndex::new(&a.partition, &a.locations);
    let regional = region_word_vectors(&index.route(&a.posts), index.region_count());
    vectors.extend(regional.iter().cloned());
    let mut pairs = 0;
    for x in &vectors {
        for y in &vectors {
            let raw = cosine(&x.counts, &y.counts).map_err(|e| e.to_string())?;
            let freq = cosine(&x.frequencies(), &y.frequencies()).map_err(|e| e.to_string())?;
            ensure!((raw - freq).abs() <= 1e-12, "cosine {raw} vs {freq}");
            pairs += 1;
        }
    }
    let scores = tfidf(&regional, None).map_err(|e| e.to_string())?;
    let mut everywhere = 0;
    for word in regional[0].counts.keys() {
        if regional.iter().all(|d| d.counts.contains_key(word)) {
            everywhere += 1;
            for rt in &scores {
                let s = rt.terms.iter().find(|(t, _)| t == word).map(|&(_, s)| s);
                ensure!(
                    s == Some(0.0),
                    "tf-idf of {word} in region {} is {s:?}",
                    rt.region
                );
            }
        }
    }
    ensure!(everywhere > 0, "no word shared by all regions");
    Ok(format!(
        "{pairs} cosine pairs scale-invariant; {everywhere} shared words score exactly 0"
    ))
}

fn conservation() -> Outcome {
    let mut runs = 0;
    for seed in 0..6 {
        let mut cfg = SynthConfig::four_regions(100 + seed);
        cfg.regions.iter_mut().for_each(|r| r.user_count = 40);
        cfg.mobility = 0.1 * seed as f64;
        cfg.regions[0].intra_bias = 0.5 + 0.1 * seed as f64;
        let a = analyse(&cfg, 10);
        let filtered = filter_tiles(&a.built.network);
        ensure!(
            filtered == a.built.network,
            "seed {seed}: filtering dropped tiles"
        );
        let flow = induce_flow_matrix(&filtered, &a.partition).map_err(|e| e.to_string())?;
        let (f, t, e) = (
            flow.total(),
            a.built.network.total_weight(),
            a.built.located_events as f64,
        );
        ensure!(
            within(f, t, 1e-9) && within(t, e, 1e-9),
            "seed {seed}: flow {f}, network {t}, events {e}"
        );
        runs += 1;
    }
    Ok(format!("flow = network = located events on {runs} runs"))
}

fn grid_sweep() -> Outcome {
    let cfg = SynthConfig::four_regions(42);
    let a = analyse(&cfg, 1);
    let rows = resolution_sweep(&a.posts, &cfg.grid.bbox, &[10, 20, 30], 100, 3)
        .map_err(|e| e.to_string())?;
    let counts: Vec<usize> = rows.iter().map(|r| r.community_count).collect();
    ensure!(counts == [4, 4, 4], "community counts {counts:?}");
    Ok(format!("X = 10, 20, 30 give {counts:?} communities"))
}

fn end_to_end_determinism() -> Outcome {
    let cfg = SynthConfig::four_regions(9);
    let mut digests = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut pc = write_corpus(&cfg, dir.path());
        pc.sweep_grids = vec![10, 20];
        pc.restarts = 20;
        pc.null_samples = 5;
        let m = Pipeline::new(pc)
            .unwrap()
            .run()
            .map_err(|e| e.to_string())?;
        digests.push(m.outputs);
    }
    ensure!(
        digests[0] == digests[1],
        "output digests differ between runs"
    );
    Ok(format!(
        "{} output files byte-identical across runs",
        digests[0].len()
    ))
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("modularity oracle equivalence", modularity_oracle),
        ("planted-region recovery", planted_recovery),
        ("two-triangle modularity", two_triangles),
        ("null-model identity", null_model_identity),
        ("sentiment identities", sentiment_identities),
        ("rank-difference planted word", rank_difference_planted),
        ("vocabulary invariants", vocabulary_invariants),
        ("conservation", conservation),
        ("grid sweep", grid_sweep),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  criterion {:>2}  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {:>2}  {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
