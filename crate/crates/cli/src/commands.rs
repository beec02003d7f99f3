//! The five subcommands behind the reproducible train → foldin → eval →
//! bench workflow.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use warmfold::data::{
    build_matrix, graph_stats, ingest, merge_for_foldin, temporal_split, Event, GraphStats, IdMap,
    InteractionLog, TemporalSplit,
};
use warmfold::eval::{
    self, apply_strategy, fitted_slope, rank_and_score, render_table, scaling_bench, BenchConfig,
    EvalConfig, EvalReport, TimingStats,
};
use warmfold::foldin::Strategy;
use warmfold::model::{train_puresvd, train_ultragcn, ModelKind};
use warmfold::persist::{
    file_fingerprint, read_foldin_embeddings, read_header, read_model, write_foldin_embeddings,
    write_model, write_split_manifest, FoldEntry, FoldInEmbeddings,
};
use warmfold::scalar::norm2;
use warmfold::{Error, Result};

use crate::config::RunConfig;

/// Drop events of users/items with fewer events than the thresholds, then
/// recompact indices. A single pass; thresholds default to zero (no-op).
fn apply_min_count_filters(
    log: InteractionLog,
    map: IdMap,
    min_user: usize,
    min_item: usize,
) -> Result<(InteractionLog, IdMap)> {
    if min_user == 0 && min_item == 0 {
        return Ok((log, map));
    }
    let mut user_counts = vec![0usize; log.num_users()];
    let mut item_counts = vec![0usize; log.num_items()];
    for e in log.events() {
        user_counts[e.user as usize] += 1;
        item_counts[e.item as usize] += 1;
    }
    let mut user_remap: HashMap<u32, u32> = HashMap::new();
    let mut item_remap: HashMap<u32, u32> = HashMap::new();
    let mut new_map = IdMap::default();
    let mut events = Vec::new();
    for e in log.events() {
        if user_counts[e.user as usize] < min_user || item_counts[e.item as usize] < min_item {
            continue;
        }
        let next_user = user_remap.len() as u32;
        let user = *user_remap.entry(e.user).or_insert_with(|| {
            new_map.users.push(map.users[e.user as usize].clone());
            next_user
        });
        let next_item = item_remap.len() as u32;
        let item = *item_remap.entry(e.item).or_insert_with(|| {
            new_map.items.push(map.items[e.item as usize].clone());
            next_item
        });
        events.push(Event {
            user,
            item,
            timestamp: e.timestamp,
        });
    }
    if events.is_empty() {
        return Err(Error::EmptyInput(
            "min-count filters removed every event".into(),
        ));
    }
    let users = new_map.users.len();
    let items = new_map.items.len();
    Ok((InteractionLog::new(events, users, items)?, new_map))
}

fn load_split(config: &RunConfig) -> Result<(InteractionLog, IdMap, TemporalSplit, u64)> {
    let dataset_fingerprint = file_fingerprint(&config.dataset)?;
    let (log, map) = ingest(&config.dataset, config.format)?;
    let (log, map) =
        apply_min_count_filters(log, map, config.min_user_events, config.min_item_events)?;
    let split = temporal_split(&log, config.fractions)?;
    Ok((log, map, split, dataset_fingerprint))
}

/// The recorded dataset fingerprint must match the file we are about to use.
fn verify_manifest(out_dir: &Path, dataset_fingerprint: u64) -> Result<()> {
    let path = out_dir.join("split_manifest.txt");
    let text = std::fs::read_to_string(&path)?;
    for line in text.lines() {
        if let Some(value) = line.strip_prefix("dataset_fingerprint = ") {
            let recorded =
                u64::from_str_radix(value.trim(), 16).map_err(|_| Error::CorruptFile {
                    path: path.clone(),
                    message: "unreadable dataset fingerprint".into(),
                })?;
            if recorded != dataset_fingerprint {
                return Err(Error::FingerprintMismatch {
                    expected: recorded,
                    found: dataset_fingerprint,
                });
            }
            return Ok(());
        }
    }
    Err(Error::CorruptFile {
        path,
        message: "manifest lacks a dataset fingerprint".into(),
    })
}

fn write_id_map(out_dir: &Path, map: &IdMap) -> Result<()> {
    let mut out = String::from("kind,index,raw_id\n");
    for (i, id) in map.users.iter().enumerate() {
        writeln!(out, "user,{i},{id}").unwrap();
    }
    for (i, id) in map.items.iter().enumerate() {
        writeln!(out, "item,{i},{id}").unwrap();
    }
    std::fs::write(out_dir.join("id_map.csv"), out)?;
    Ok(())
}

fn write_graph_stats(out_dir: &Path, stats: &GraphStats<f64>) -> Result<()> {
    let mut out = String::from("kind,index,degree,beta\n");
    for u in 0..stats.num_users() {
        let beta = stats
            .beta_user(u)
            .map_or("undefined".to_owned(), |b| format!("{b:.12}"));
        writeln!(out, "user,{u},{},{beta}", stats.user_degrees[u]).unwrap();
    }
    for i in 0..stats.num_items() {
        writeln!(
            out,
            "item,{i},{},{:.12}",
            stats.item_degrees[i],
            stats.beta_item(i)
        )
        .unwrap();
    }
    std::fs::write(out_dir.join("graph_stats.csv"), out)?;
    Ok(())
}

pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let (log, map, split, dataset_fingerprint) = load_split(config)?;
    std::fs::create_dir_all(&config.out_dir)?;
    write_split_manifest(
        config.out_dir.join("split_manifest.txt"),
        &split,
        dataset_fingerprint,
    )?;
    write_id_map(&config.out_dir, &map)?;

    let matrix = build_matrix(&split.train, (log.num_users(), log.num_items()))?;
    let stats = graph_stats::<f64>(&matrix);
    write_graph_stats(&config.out_dir, &stats)?;

    println!(
        "dataset: {} users, {} items, {} events ({} train / {} warm / {} test)",
        log.num_users(),
        log.num_items(),
        log.len(),
        split.train.len(),
        split.warm.len(),
        split.test.len()
    );

    let started = Instant::now();
    let model = match config.kind {
        ModelKind::UltraGcn => {
            let outcome = train_ultragcn(&matrix, &stats, &config.train)?;
            let losses = &outcome.epoch_losses;
            println!(
                "trained {} epochs in {:.1} s; pair loss {:.6} -> {:.6} (min {:.6})",
                losses.len(),
                started.elapsed().as_secs_f64(),
                losses.first().copied().unwrap_or(f64::NAN),
                losses.last().copied().unwrap_or(f64::NAN),
                losses.iter().copied().fold(f64::INFINITY, f64::min),
            );
            outcome.model
        }
        ModelKind::PureSvd => {
            let model = train_puresvd(&matrix, config.train.rank, config.train.seed)?;
            println!(
                "factorized rank {} in {:.1} s; spectrum head {:.4}",
                config.train.rank,
                started.elapsed().as_secs_f64(),
                model.sigma.as_ref().map_or(f64::NAN, |s| s[0]),
            );
            model
        }
    };

    let model_path = config.out_dir.join("model.bin");
    let fingerprint = write_model(&model_path, &model)?;
    println!(
        "wrote {} (M={}, N={}, d={}, fingerprint {fingerprint:016x})",
        model_path.display(),
        model.num_users(),
        model.num_items(),
        model.rank
    );
    Ok(())
}

pub fn cmd_foldin(config: &RunConfig, model_path: &Path) -> Result<()> {
    let (_, _, split, dataset_fingerprint) = load_split(config)?;
    verify_manifest(&config.out_dir, dataset_fingerprint)?;
    let (model, model_fingerprint) = read_model::<f64>(model_path)?;

    let warm_users = split.warm.active_users();
    if warm_users.is_empty() {
        println!("0 warm users: nothing to fold in");
        return Ok(());
    }
    println!("{} warm users", warm_users.len());

    let eval_config = eval_config_from(config);
    let mut timing_csv = String::from(eval::csv::TIMING_HEADER);
    timing_csv.push('\n');
    for &strategy in &config.strategies {
        let outcome = apply_strategy(&model, &split, strategy, &eval_config)?;
        let entries: Vec<FoldEntry<f64>> = outcome
            .per_user
            .iter()
            .map(|f| FoldEntry {
                user: f.user as u64,
                time_ns: f.time_ns as u64,
                embedding: f.embedding.clone(),
            })
            .collect();
        let path = config
            .out_dir
            .join(format!("foldin_{}.emb", strategy.name()));
        write_foldin_embeddings(
            &path,
            &FoldInEmbeddings {
                strategy: strategy.name().to_owned(),
                model_fingerprint,
                rank: model.rank,
                entries,
            },
        )?;
        for f in &outcome.per_user {
            writeln!(
                timing_csv,
                "{},{},{},{:.6}",
                f.user,
                strategy.name(),
                f.time_ns,
                f.norm
            )
            .unwrap();
        }
        let times: Vec<u128> = outcome.per_user.iter().map(|f| f.time_ns).collect();
        let stats = TimingStats::from_times(&times);
        println!(
            "{:<10} {} users, mean {:.6} s/user (p50 {:.6}, p99 {:.6}), plan build {:.3} s -> {}",
            strategy.name(),
            stats.count,
            stats.mean_ns / 1e9,
            stats.p50_ns / 1e9,
            stats.p99_ns / 1e9,
            outcome.plan_build_ns as f64 / 1e9,
            path.display()
        );
    }
    std::fs::write(config.out_dir.join("timing.csv"), timing_csv)?;
    Ok(())
}

fn eval_config_from(config: &RunConfig) -> EvalConfig<f64> {
    EvalConfig {
        ks: config.ks.clone(),
        coverage_k: config.coverage_k,
        sgd: config.sgd.clone(),
        train: config.train.clone(),
        timing_warmup: 5,
    }
}

pub fn cmd_eval(config: &RunConfig, model_path: &Path, foldin_dir: &Path) -> Result<()> {
    let (_, _, split, dataset_fingerprint) = load_split(config)?;
    verify_manifest(&config.out_dir, dataset_fingerprint)?;
    let (model, model_fingerprint) = read_model::<f64>(model_path)?;
    let train_matrix = build_matrix(
        &split.train,
        (split.train.num_users(), split.train.num_items()),
    )?;

    let mut reports: Vec<EvalReport> = Vec::new();
    for &strategy in &config.strategies {
        let path = foldin_dir.join(format!("foldin_{}.emb", strategy.name()));
        let folded = read_foldin_embeddings::<f64>(&path)?;
        if folded.model_fingerprint != model_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: folded.model_fingerprint,
                found: model_fingerprint,
            });
        }
        if folded.rank != model.rank {
            return Err(Error::DimensionMismatch(format!(
                "fold-in rank {} vs model rank {}",
                folded.rank, model.rank
            )));
        }

        let mut updated = model.clone();
        let mut degrees = updated.stats.user_degrees.clone();
        for entry in &folded.entries {
            let user = entry.user as usize;
            for (k, &x) in entry.embedding.iter().enumerate() {
                updated.user_embeddings.set(user, k, x);
            }
            if strategy != Strategy::Zero {
                if let Ok(h) = merge_for_foldin::<f64>(&train_matrix, &split.warm, user) {
                    degrees[user] = h.degree;
                }
            }
        }
        updated.stats = GraphStats::from_degrees(degrees, updated.stats.item_degrees.clone());

        let metrics = rank_and_score(&updated, &split, &config.ks, config.coverage_k)?;
        let times: Vec<u128> = folded.entries.iter().map(|e| e.time_ns as u128).collect();
        reports.push(EvalReport {
            strategy: strategy.name().to_owned(),
            metrics,
            timing: TimingStats::from_times(&times),
            plan_build_ns: 0,
            model_fingerprint,
            dataset_fingerprint,
        });
    }

    print!("{}", render_table(&reports));
    std::fs::write(
        config.out_dir.join("metrics.csv"),
        eval::csv::metrics_csv(&reports),
    )?;
    std::fs::write(
        config.out_dir.join("timing_summary.csv"),
        eval::csv::timing_summary_csv(&reports),
    )?;
    println!(
        "wrote {} and {}",
        config.out_dir.join("metrics.csv").display(),
        config.out_dir.join("timing_summary.csv").display()
    );
    Ok(())
}

fn available_memory_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("MemAvailable:") {
            let kb: u64 = rest.trim().trim_end_matches(" kB").trim().parse().ok()?;
            return Some(kb * 1024);
        }
    }
    None
}

pub fn cmd_bench(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)?;
    // Model + plan + benchmark scratch, all in doubles.
    let bytes_needed = |n: usize| (n * config.bench_rank * 8 * 4 + n * 8 * 4) as u64;
    let mut sizes = Vec::new();
    let mut truncated = false;
    for &n in &config.bench_sizes {
        match available_memory_bytes() {
            Some(avail) if bytes_needed(n) * 2 > avail => {
                eprintln!(
                    "skipping N = {n}: needs ~{} MB, {} MB available",
                    bytes_needed(n) / (1 << 20),
                    avail / (1 << 20)
                );
                truncated = true;
            }
            _ => sizes.push(n),
        }
    }

    let bench = BenchConfig {
        rank: config.bench_rank,
        sizes,
        trials: config.bench_trials,
        sgd_trials: config.bench_sgd_trials,
        sgd_steps: config.sgd.steps,
        history_len: 20,
        seed: config.seed,
        strategies: vec![Strategy::Linear, Strategy::Sgd],
    };
    let rows = scaling_bench(&bench)?;
    let csv = eval::csv::scaling_csv(&rows);
    std::fs::write(config.out_dir.join("scaling.csv"), &csv)?;
    print!("{csv}");
    for strategy in [Strategy::Linear, Strategy::Sgd] {
        if let Some(slope) = fitted_slope(&rows, strategy) {
            println!("fitted log-log exponent [{}]: {slope:.3}", strategy.name());
        }
    }
    println!("wrote {}", config.out_dir.join("scaling.csv").display());
    if truncated {
        return Err(Error::Degenerate(
            "benchmark table truncated: not enough memory for the largest sizes".into(),
        ));
    }
    Ok(())
}

pub fn cmd_inspect(model_path: &Path) -> Result<()> {
    let header = read_header(model_path)?;
    println!("magic:    WFLD1");
    println!(
        "kind:     {}",
        match header.kind {
            ModelKind::UltraGcn => "ultragcn",
            ModelKind::PureSvd => "puresvd",
        }
    );
    println!("users:    {}", header.num_users);
    println!("items:    {}", header.num_items);
    println!("rank:     {}", header.rank);
    println!("lambda:   {}", header.lambda);
    println!("checksum: {:016x}", header.checksum);
    // Full read validates payload length and checksum.
    let (model, fingerprint) = read_model::<f64>(model_path)?;
    println!("fingerprint: {fingerprint:016x}");
    let mean = model.mean_user_embedding();
    println!("mean user embedding norm: {:.6}", norm2(&mean));
    Ok(())
}

/// Exit code contract: 0 success, 1 usage, 2 data, 3 numeric, 4 fingerprint.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => 1,
        Error::Parse { .. }
        | Error::EmptyInput(_)
        | Error::DimensionMismatch(_)
        | Error::CorruptFile { .. }
        | Error::Io(_) => 2,
        Error::DegenerateSplit(_)
        | Error::ColdUser { .. }
        | Error::TrainingDiverged { .. }
        | Error::FoldInDiverged { .. }
        | Error::Degenerate(_) => 3,
        Error::StalePlan { .. } | Error::FingerprintMismatch { .. } => 4,
    }
}

pub fn resolve_paths(config: &RunConfig, model: Option<PathBuf>) -> PathBuf {
    model.unwrap_or_else(|| config.out_dir.join("model.bin"))
}
