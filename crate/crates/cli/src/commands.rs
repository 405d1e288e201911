use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use crisp_core::classifier::{
    filter, read_scores, subsample_negatives, threshold_from_quantile, train_logreg, write_scores,
};
use crisp_core::cluster::{assign_all, train_tree, AssignmentTable, ClusterTree};
use crisp_core::corpus::{ingest, window_corpus, write_windows, HashingTokenizer, SourceTag};
use crisp_core::diagnostics::{cluster_summary, distance_report};
use crisp_core::embed::{import_embeddings, read_embeddings, write_embeddings, LsiEmbedder};
use crisp_core::sampler::{
    export_sharded, read_manifest, repetition_stats, write_manifest, ClusterIndex, Phase,
    SamplerState, SamplingTarget, Schedule, WindowStore,
};
use crisp_core::synth::{generate, SynthConfig};
use crisp_core::weights::{histogram, importance_weights, mix_histograms, Histogram, ImportanceWeights, WeightOptions};
use serde_json::json;

use crate::config::RunConfig;
use crate::workdir::{Stage, Workdir};
use crate::{Cli, Cmd};

pub const GENERALIST_WINDOWS: &str = "generalist.wnd";
pub const SPECIALIST_WINDOWS: &str = "specialist.wnd";
pub const INGEST_LEDGER: &str = "ingest.json";
pub const GENERALIST_EMBEDDINGS: &str = "generalist.emb";
pub const SPECIALIST_EMBEDDINGS: &str = "specialist.emb";
pub const TFIDF: &str = "tfidf.bin";
pub const LSI: &str = "lsi.bin";
pub const TREE: &str = "tree.bin";
pub const GENERALIST_ASSIGNMENTS: &str = "generalist.asg";
pub const SPECIALIST_ASSIGNMENTS: &str = "specialist.asg";
pub const GENERALIST_HISTOGRAM: &str = "generalist.hist.json";
pub const SPECIALIST_HISTOGRAM: &str = "specialist.hist.json";
pub const WEIGHTS: &str = "weights.json";
pub const MIXED_HISTOGRAM: &str = "mixed.hist.json";
pub const SAMPLE_DIR: &str = "sample";
pub const SAMPLE_MANIFEST: &str = "sample/manifest.tsv";
pub const SCHEDULE: &str = "schedule.tsv";
pub const MODEL: &str = "classifier.txt";
pub const SCORES: &str = "scores.tsv";
pub const SELECTED: &str = "selected.tsv";
pub const THRESHOLD: &str = "threshold.json";
pub const REPETITION: &str = "repetition.json";
pub const DISTANCES: &str = "distance.tsv";
pub const DISTANCE_BINS: &str = "distance_bins.tsv";
pub const CLUSTERS: &str = "clusters.tsv";

const REPETITION_QUANTILES: [f64; 4] = [0.5, 0.9, 0.99, 1.0];

pub fn run(cli: Cli) -> Result<()> {
    let config = RunConfig::resolve(cli.config.as_deref(), |k| std::env::var(k).ok(), &cli.run)?;
    if let Cmd::Synth {
        output,
        generalist_documents,
        specialist_documents,
        minority_fraction,
        words_per_document,
    } = &cli.command
    {
        return synth(
            &config,
            output,
            SynthConfig {
                generalist_documents: *generalist_documents,
                specialist_documents: *specialist_documents,
                minority_fraction: *minority_fraction,
                words_per_document: *words_per_document,
                seed: config.seed,
                ..SynthConfig::default()
            },
        );
    }

    let dir = Workdir::open(&cli.workdir)?;
    let name = command_name(&cli.command);
    let mut stage = dir.begin(name, &config)?;
    match cli.command {
        Cmd::Ingest {
            generalist,
            specialist,
            task,
        } => run_ingest(&dir, &mut stage, &config, &generalist, &specialist, task)?,
        Cmd::EmbedLsi => embed_lsi(&dir, &mut stage, &config)?,
        Cmd::EmbedImport {
            generalist,
            specialist,
        } => embed_import(&dir, &mut stage, &generalist, &specialist)?,
        Cmd::ClusterTrain => cluster_train(&dir, &mut stage, &config)?,
        Cmd::Assign => assign(&dir, &mut stage, &config)?,
        Cmd::Histogram => histograms(&dir, &mut stage)?,
        Cmd::Weights {
            specialist,
            generalist,
        } => weights(&dir, &mut stage, &config, specialist, generalist)?,
        Cmd::Mix {
            inputs,
            weights,
            output,
        } => mix(&dir, &mut stage, &inputs, &weights, output)?,
        Cmd::Sample { target } => sample(&dir, &mut stage, &config, target)?,
        Cmd::Schedule { target } => schedule(&dir, &mut stage, &config, target)?,
        Cmd::Classify => classify(&dir, &mut stage, &config)?,
        Cmd::Filter => run_filter(&dir, &mut stage, &config)?,
        Cmd::Stats => stats(&dir, &mut stage)?,
        Cmd::Report { bins } => report(&dir, &mut stage, bins)?,
        Cmd::Synth { .. } => unreachable!(),
    }
    let entry = stage.record()?;
    log::info!("{name} finished in {:.2}s", entry.wall_seconds);
    Ok(())
}

fn command_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::Ingest { .. } => "ingest",
        Cmd::EmbedLsi => "embed-lsi",
        Cmd::EmbedImport { .. } => "embed-import",
        Cmd::ClusterTrain => "cluster-train",
        Cmd::Assign => "assign",
        Cmd::Histogram => "histogram",
        Cmd::Weights { .. } => "weights",
        Cmd::Mix { .. } => "mix",
        Cmd::Sample { .. } => "sample",
        Cmd::Schedule { .. } => "schedule",
        Cmd::Classify => "classify",
        Cmd::Filter => "filter",
        Cmd::Stats => "stats",
        Cmd::Report { .. } => "report",
        Cmd::Synth { .. } => "synth",
    }
}

fn synth(config: &RunConfig, output: &Path, cfg: SynthConfig) -> Result<()> {
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let corpus = generate(&cfg)?;
    corpus.write(output)?;
    println!(
        "wrote {} generalist and {} specialist documents to {} (seed {})",
        corpus.generalist.len(),
        corpus.specialist.len(),
        output.display(),
        config.seed
    );
    Ok(())
}

fn run_ingest(
    dir: &Workdir,
    stage: &mut Stage,
    config: &RunConfig,
    generalist: &Path,
    specialist: &Path,
    task: String,
) -> Result<()> {
    let tokenizer = HashingTokenizer::new(config.vocab_size);
    let window_config = config.window_config();
    let mut ledger = serde_json::Map::new();
    for (path, tag, out) in [
        (generalist, SourceTag::Generalist, GENERALIST_WINDOWS),
        (specialist, SourceTag::Specialist(task), SPECIALIST_WINDOWS),
    ] {
        let ingested = ingest(&stage.input(path)?, tag)?;
        let windows = window_corpus(&ingested.documents, &tokenizer, &window_config)?;
        write_windows(&stage.output(dir.path(out)), windows.iter())?;
        let l = &ingested.ledger;
        ledger.insert(
            out.trim_end_matches(".wnd").to_string(),
            json!({
                "lines": l.lines,
                "documents": l.documents,
                "malformed": l.malformed.iter().map(|m| json!({"line": m.line, "reason": m.reason})).collect::<Vec<_>>(),
                "windows": windows.len(),
            }),
        );
        println!("{}: {} documents, {} windows", path.display(), l.documents, windows.len());
    }
    write_json(&stage.output(dir.path(INGEST_LEDGER)), &serde_json::Value::Object(ledger))
}

fn embed_lsi(dir: &Workdir, stage: &mut Stage, config: &RunConfig) -> Result<()> {
    let generalist = crisp_core::corpus::read_windows(&stage.input(&dir.path(GENERALIST_WINDOWS))?)?;
    let specialist = crisp_core::corpus::read_windows(&stage.input(&dir.path(SPECIALIST_WINDOWS))?)?;
    let embedder = LsiEmbedder::fit(&generalist, config.vocab_size, &config.lsi_config())?;
    embedder.tfidf.save(&stage.output(dir.path(TFIDF)))?;
    embedder.projection.save(&stage.output(dir.path(LSI)))?;
    for (windows, out) in [
        (&generalist, GENERALIST_EMBEDDINGS),
        (&specialist, SPECIALIST_EMBEDDINGS),
    ] {
        let embedded = embedder.embed(windows)?;
        write_embeddings(&stage.output(dir.path(out)), &embedded.set)?;
        println!(
            "{out}: {} vectors of dim {} ({} degenerate)",
            embedded.set.len(),
            embedded.set.dim(),
            embedded.degenerate.len()
        );
    }
    Ok(())
}

fn embed_import(dir: &Workdir, stage: &mut Stage, generalist: &Path, specialist: &Path) -> Result<()> {
    let g = import_embeddings(&stage.input(generalist)?)?;
    let s = import_embeddings(&stage.input(specialist)?)?;
    if g.dim() != s.dim() {
        return Err(crisp_core::Error::DimensionMismatch {
            expected: g.dim(),
            found: s.dim(),
        }
        .into());
    }
    write_embeddings(&stage.output(dir.path(GENERALIST_EMBEDDINGS)), &g)?;
    write_embeddings(&stage.output(dir.path(SPECIALIST_EMBEDDINGS)), &s)?;
    println!("imported {} generalist and {} specialist vectors of dim {}", g.len(), s.len(), g.dim());
    Ok(())
}

fn cluster_train(dir: &Workdir, stage: &mut Stage, config: &RunConfig) -> Result<()> {
    let set = read_embeddings(&stage.input(&dir.path(GENERALIST_EMBEDDINGS))?)?;
    let tree = train_tree(&set, &config.tree_config())?;
    tree.save(&stage.output(dir.path(TREE)))?;
    println!(
        "trained arity-{} depth-{} tree on {} vectors",
        tree.arity(),
        tree.depth(),
        set.len()
    );
    Ok(())
}

fn assign(dir: &Workdir, stage: &mut Stage, config: &RunConfig) -> Result<()> {
    let tree = ClusterTree::load(&stage.input(&dir.path(TREE))?)?;
    for (input, out) in [
        (GENERALIST_EMBEDDINGS, GENERALIST_ASSIGNMENTS),
        (SPECIALIST_EMBEDDINGS, SPECIALIST_ASSIGNMENTS),
    ] {
        let set = read_embeddings(&stage.input(&dir.path(input))?)?;
        let table = assign_all(&tree, &set, config.level)?;
        table.save(&stage.output(dir.path(out)))?;
        println!("{out}: {} windows in {} clusters at level {}", table.len(), table.counts().len(), table.level());
    }
    Ok(())
}

fn histograms(dir: &Workdir, stage: &mut Stage) -> Result<()> {
    for (input, out) in [
        (GENERALIST_ASSIGNMENTS, GENERALIST_HISTOGRAM),
        (SPECIALIST_ASSIGNMENTS, SPECIALIST_HISTOGRAM),
    ] {
        let table = AssignmentTable::load(&stage.input(&dir.path(input))?)?;
        let h = histogram(&table)?;
        h.save(&stage.output(dir.path(out)))?;
        println!("{out}: {} windows over {} clusters", h.total(), h.probs().len());
    }
    Ok(())
}

fn weights(
    dir: &Workdir,
    stage: &mut Stage,
    config: &RunConfig,
    specialist: Option<PathBuf>,
    generalist: Option<PathBuf>,
) -> Result<()> {
    let s_path = specialist.unwrap_or_else(|| dir.path(SPECIALIST_HISTOGRAM));
    let g_path = generalist.unwrap_or_else(|| dir.path(GENERALIST_HISTOGRAM));
    let s = Histogram::load(&stage.input(&s_path)?)?;
    let g = Histogram::load(&stage.input(&g_path)?)?;
    let w = importance_weights(
        &s,
        &g,
        WeightOptions {
            smoothing: config.smoothing,
        },
    )?;
    w.save(&stage.output(dir.path(WEIGHTS)))?;
    println!(
        "{} weighted clusters, dropped specialist mass {:.6}",
        w.weights().len(),
        w.dropped_specialist_mass()
    );
    Ok(())
}

fn mix(
    dir: &Workdir,
    stage: &mut Stage,
    inputs: &[PathBuf],
    mix_weights: &[f64],
    output: Option<PathBuf>,
) -> Result<()> {
    let hists = inputs
        .iter()
        .map(|p| Ok(Histogram::load(&stage.input(p)?)?))
        .collect::<Result<Vec<_>>>()?;
    let mixed = mix_histograms(&hists, mix_weights)?;
    let out = stage.output(output.unwrap_or_else(|| dir.path(MIXED_HISTOGRAM)));
    mixed.save(&out)?;
    println!("{}: {} clusters", out.display(), mixed.probs().len());
    Ok(())
}

fn cluster_index(dir: &Workdir, stage: &mut Stage) -> Result<ClusterIndex> {
    let table = AssignmentTable::load(&stage.input(&dir.path(GENERALIST_ASSIGNMENTS))?)?;
    Ok(ClusterIndex::build(&table)?)
}

fn sample(dir: &Workdir, stage: &mut Stage, config: &RunConfig, target: Option<PathBuf>) -> Result<()> {
    let index = cluster_index(dir, stage)?;
    let target_path = target.unwrap_or_else(|| dir.path(SPECIALIST_HISTOGRAM));
    let target = SamplingTarget::new(&Histogram::load(&stage.input(&target_path)?)?, &index)?;
    let store = WindowStore::from_shards(&[stage.input(&dir.path(GENERALIST_WINDOWS))?])?;

    let out_dir = dir.path(SAMPLE_DIR);
    if out_dir.exists() {
        fs::remove_dir_all(&out_dir).with_context(|| format!("clearing {}", out_dir.display()))?;
    }
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let manifest = export_sharded(
        config.seed,
        &target,
        &index,
        config.sample_count,
        config.shards,
        &store,
        &out_dir,
    )?;
    for j in 0..config.shards {
        stage.output(out_dir.join(format!("shard-{j:05}.wnd")));
    }
    write_manifest(&stage.output(dir.path(SAMPLE_MANIFEST)), &manifest)?;
    println!(
        "sampled {} windows ({} distinct) into {} shards; dropped target mass {:.6}",
        config.sample_count,
        manifest.len(),
        config.shards,
        target.dropped_mass()
    );
    Ok(())
}

fn schedule(dir: &Workdir, stage: &mut Stage, config: &RunConfig, target: Option<PathBuf>) -> Result<()> {
    let index = cluster_index(dir, stage)?;
    let base = Histogram::load(&stage.input(&dir.path(GENERALIST_HISTOGRAM))?)?;
    let target_path = target.unwrap_or_else(|| dir.path(SPECIALIST_HISTOGRAM));
    let crisp = Histogram::load(&stage.input(&target_path)?)?;
    let plan = Schedule::from_generic_steps(
        config.total_steps,
        config.generic_steps,
        SamplingTarget::new(&base, &index)?,
        SamplingTarget::new(&crisp, &index)?,
    )?;
    let path = stage.output(dir.path(SCHEDULE));
    let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(out, "step\tphase\twindow_ids")?;
    let mut state = SamplerState::new(config.seed);
    for step in 0..plan.total_steps() {
        let ids = plan.sample(&mut state, &index, step, config.batch_size)?;
        let phase = match plan.phase(step)? {
            Phase::Generic => "generic",
            Phase::Crisp => "crisp",
        };
        let ids: Vec<String> = ids.iter().map(u64::to_string).collect();
        writeln!(out, "{step}\t{phase}\t{}", ids.join(","))?;
    }
    out.flush()?;
    println!(
        "{} steps of {} windows, CRISP from step {}",
        plan.total_steps(),
        config.batch_size,
        plan.generic_steps()
    );
    Ok(())
}

fn classify(dir: &Workdir, stage: &mut Stage, config: &RunConfig) -> Result<()> {
    let generalist = read_embeddings(&stage.input(&dir.path(GENERALIST_EMBEDDINGS))?)?;
    let specialist = read_embeddings(&stage.input(&dir.path(SPECIALIST_EMBEDDINGS))?)?;
    let negatives = generalist.select(&subsample_negatives(generalist.len(), specialist.len(), config.seed));
    let model = train_logreg(&specialist, &negatives, config.l2_strength)?;
    model.save(&stage.output(dir.path(MODEL)))?;
    let scores = model.score_all(&generalist)?;
    write_scores(&stage.output(dir.path(SCORES)), &scores)?;
    println!(
        "trained on {} positives / {} negatives in {} iterations (loss {:.6}); scored {} windows",
        specialist.len(),
        negatives.len(),
        model.iterations(),
        model.final_loss(),
        scores.len()
    );
    Ok(())
}

fn run_filter(dir: &Workdir, stage: &mut Stage, config: &RunConfig) -> Result<()> {
    let scores = read_scores(&stage.input(&dir.path(SCORES))?)?;
    let values: Vec<f64> = scores.iter().map(|s| s.1).collect();
    let threshold = threshold_from_quantile(&values, config.quantile)?;
    let selection = filter(&scores, &threshold);
    let path = stage.output(dir.path(SELECTED));
    let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(out, "window_id")?;
    for id in &selection.ids {
        writeln!(out, "{id}")?;
    }
    out.flush()?;
    let cut = threshold.score_cut.is_finite().then_some(threshold.score_cut);
    write_json(
        &stage.output(dir.path(THRESHOLD)),
        &json!({
            "quantile": threshold.quantile,
            "score_cut": cut,
            "accepted_fraction": threshold.accepted_fraction,
            "selected": selection.ids.len(),
        }),
    )?;
    println!(
        "kept {} of {} windows ({:.3}%)",
        selection.ids.len(),
        scores.len(),
        100.0 * selection.acceptance_rate
    );
    Ok(())
}

fn stats(dir: &Workdir, stage: &mut Stage) -> Result<()> {
    let manifest = read_manifest(&stage.input(&dir.path(SAMPLE_MANIFEST))?)?;
    let report = repetition_stats(&manifest, &REPETITION_QUANTILES)?;
    let value = json!({
        "distinct": report.distinct,
        "total": report.total,
        "mean": report.mean,
        "max": report.max,
        "quantiles": report.quantiles.iter().map(|(q, c)| json!({"q": q, "count": c})).collect::<Vec<_>>(),
    });
    write_json(&stage.output(dir.path(REPETITION)), &value)?;
    println!(
        "{} draws over {} windows: mean repetition {:.3}, max {}",
        report.total, report.distinct, report.mean, report.max
    );
    Ok(())
}

fn report(dir: &Workdir, stage: &mut Stage, bins: usize) -> Result<()> {
    let generalist = read_embeddings(&stage.input(&dir.path(GENERALIST_EMBEDDINGS))?)?;
    let specialist = read_embeddings(&stage.input(&dir.path(SPECIALIST_EMBEDDINGS))?)?;
    let distances = distance_report(&generalist, &specialist, bins)?;
    distances.write_rows(&stage.output(dir.path(DISTANCES)))?;
    distances.write_bins(&stage.output(dir.path(DISTANCE_BINS)))?;

    let table = AssignmentTable::load(&stage.input(&dir.path(GENERALIST_ASSIGNMENTS))?)?;
    let h_s = Histogram::load(&stage.input(&dir.path(SPECIALIST_HISTOGRAM))?)?;
    let h_g = Histogram::load(&stage.input(&dir.path(GENERALIST_HISTOGRAM))?)?;
    let w = ImportanceWeights::load(&stage.input(&dir.path(WEIGHTS))?)?;
    let summary = cluster_summary(&table, &h_s, &h_g, &w)?;
    summary.write(&stage.output(dir.path(CLUSTERS)))?;
    println!(
        "distance report over {} windows; {} clusters summarized",
        distances.rows.len(),
        summary.rows.len()
    );
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
