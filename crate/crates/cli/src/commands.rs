use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use ptune_core::adapt::{
    load_prompt, pretrain, save_prompt, train, AdaptStrategy, Adapted, HashCheck, Hyperparams, PretrainConfig,
    PretrainReport, TrainReport,
};
use ptune_core::eval::{compare_strategies, comparison_cells, ComparisonRow, StrategyRun, COMPARISON_COLUMNS};
use ptune_core::lm::{count_params, load_checkpoint, save_checkpoint, ParameterSet};
use ptune_core::rescore::{
    evaluate_scored, read_nbest, rescore_csv, score_nbest, synth_nbest, tune_scored, write_nbest, NBestEntry,
    RescoreReport, RescoreRow,
};
use ptune_core::rng::derive_seed;
use ptune_core::table::{fmt_real, Csv};
use ptune_core::text::{generate_domain, Split, Vocab};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{prepare, resolve_confusion, resolve_grammar, resolve_stopwords, Prepared};

/// File locations under an experiment's output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn base(&self) -> PathBuf {
        self.root.join("base.ptlm")
    }

    pub fn base_hash(&self) -> PathBuf {
        self.root.join("base.sha256")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.json")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn artifacts(&self) -> PathBuf {
        self.root.join("artifacts")
    }

    /// Where the artifact of `strategy` is saved; `None` has no artifact.
    pub fn artifact(&self, strategy: &AdaptStrategy) -> Option<PathBuf> {
        match strategy {
            AdaptStrategy::None => None,
            AdaptStrategy::FineTune => Some(self.artifacts().join("fine_tune.ptlm")),
            AdaptStrategy::PromptTune { prompt_size, .. } => {
                Some(self.artifacts().join(format!("prompt_tune_P{prompt_size}.ptpx")))
            }
        }
    }

    pub fn train_report(&self, strategy: &AdaptStrategy) -> PathBuf {
        let stem = match strategy {
            AdaptStrategy::PromptTune { prompt_size, .. } => format!("prompt_tune_P{prompt_size}"),
            other => other.kind().to_string(),
        };
        self.artifacts().join(format!("{stem}.report.json"))
    }

    fn fine_tune_meta(&self) -> PathBuf {
        self.artifacts().join("fine_tune.json")
    }

    pub fn nbest(&self, split: Split) -> PathBuf {
        self.root.join("nbest").join(format!("{}.jsonl", split.as_str()))
    }

    pub fn ablation_csv(&self) -> PathBuf {
        self.root.join("ablation.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.md")
    }

    pub fn timings_csv(&self) -> PathBuf {
        self.root.join("timings.csv")
    }

    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("eval.csv")
    }

    pub fn rescore_csv(&self) -> PathBuf {
        self.root.join("rescore.csv")
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn lines_file(lines: &[String]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

fn hash_check(cfg: &ExperimentConfig) -> HashCheck {
    if cfg.strict_hash {
        HashCheck::Strict
    } else {
        HashCheck::Warn
    }
}

/// Strategies of a full sweep in report order.
pub fn ablation_strategies(cfg: &ExperimentConfig) -> Vec<AdaptStrategy> {
    let mut s = vec![AdaptStrategy::None];
    s.extend(cfg.adaptation.prompt_sizes.iter().map(|&p| AdaptStrategy::PromptTune {
        prompt_size: p,
        init: cfg.adaptation.prompt_init,
    }));
    s.push(AdaptStrategy::FineTune);
    s
}

/// Training hyperparameters of one strategy, seeded from the master seed.
pub fn hyper_for(cfg: &ExperimentConfig, strategy: &AdaptStrategy) -> Hyperparams {
    let mut h = match strategy {
        AdaptStrategy::FineTune => cfg.adaptation.fine_tuning,
        _ => cfg.adaptation.prompt_tuning,
    };
    h.seed = derive_seed(cfg.seed, &format!("adapt-{}", strategy.label()));
    h
}

pub struct PretrainOutcome {
    pub checkpoint: PathBuf,
    pub digest: String,
    pub report: PretrainReport,
}

/// Builds the corpora, trains the generic base model on the union of the
/// pretraining sources and saves it with its digest and vocabulary.
pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    let data = prepare(cfg)?;
    for ((i, spec), lines) in cfg.data.pretrain.iter().enumerate().zip(&data.pretrain_text) {
        write(
            &layout.data_dir().join(format!("pretrain-{i}-{}.txt", spec.domain)),
            lines_file(lines),
        )?;
    }
    for split in Split::ALL {
        let name = format!("target.{}.txt", split.as_str());
        write(&layout.data_dir().join(name), lines_file(data.target_text.get(split)))?;
    }
    write(&layout.vocab(), data.vocab.to_json())?;

    let model = cfg.model.with_vocab(data.vocab.len());
    let p = &cfg.pretrain;
    let pcfg = PretrainConfig {
        hyper: Hyperparams {
            learning_rate: p.learning_rate,
            batch_size: p.batch_size,
            max_epochs: p.epochs,
            patience: p.epochs,
            seed: derive_seed(cfg.seed, "pretrain"),
            ..Hyperparams::fine_tuning()
        },
        context_max: p.context_max,
    };
    let (params, report) = pretrain(&model, &data.pretrain, &pcfg)?;
    let checkpoint = layout.base();
    let digest = save_checkpoint(&params, &checkpoint)?;
    write(&layout.base_hash(), format!("{digest}  base.ptlm\n"))?;
    write(
        &layout.root.join("pretrain_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(PretrainOutcome {
        checkpoint,
        digest,
        report,
    })
}

/// A saved base model together with the corpora it was built from.
pub struct Base {
    pub params: ParameterSet,
    pub hash: String,
    pub vocab: Arc<Vocab>,
    pub data: Prepared,
    pub layout: Layout,
}

/// Loads the base checkpoint of `cfg` and checks it against its recorded
/// digest, the vocabulary it was trained with, and the configured shape.
pub fn load_base(cfg: &ExperimentConfig) -> Result<Base> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    let path = layout.base();
    if !path.is_file() {
        bail!("no base checkpoint at {}; run `ptune pretrain` first", path.display());
    }
    let ck = load_checkpoint(&path)?;
    let recorded =
        fs::read_to_string(layout.base_hash()).with_context(|| format!("reading {}", layout.base_hash().display()))?;
    let recorded = recorded.split_whitespace().next().unwrap_or_default();
    if recorded != ck.content_hash {
        return Err(ptune_core::Error::Compatibility {
            expected: recorded.to_string(),
            found: ck.content_hash,
        }
        .into());
    }
    let data = prepare(cfg)?;
    let saved = Vocab::load(layout.vocab())?;
    if saved.digest() != data.vocab.digest() {
        bail!(
            "vocabulary rebuilt from the config (digest {}) differs from the one the base model was trained with ({})",
            data.vocab.digest(),
            saved.digest()
        );
    }
    let expected = cfg.model.with_vocab(data.vocab.len());
    if ck.config != expected {
        bail!(
            "base checkpoint shape {:?} does not match the config {:?}",
            ck.config,
            expected
        );
    }
    Ok(Base {
        params: ck.params,
        hash: ck.content_hash,
        vocab: data.vocab.clone(),
        data,
        layout,
    })
}

#[derive(Serialize, Deserialize)]
struct FineTuneMeta {
    base_model_hash: String,
}

fn save_artifact(layout: &Layout, strategy: &AdaptStrategy, artifact: &Adapted) -> Result<()> {
    let Some(path) = layout.artifact(strategy) else {
        return Ok(());
    };
    match artifact {
        Adapted::Base => {}
        Adapted::Prompt(p) => {
            save_prompt(p, &path)?;
        }
        Adapted::FineTuned {
            params,
            base_model_hash,
        } => {
            save_checkpoint(params, &path)?;
            let meta = FineTuneMeta {
                base_model_hash: base_model_hash.clone(),
            };
            write(&layout.fine_tune_meta(), serde_json::to_string_pretty(&meta)? + "\n")?;
        }
    }
    Ok(())
}

/// Reads the saved artifact of `strategy`, checking it belongs to `base`.
/// Hash mismatches fail in strict mode and are returned as a warning
/// otherwise.
pub fn load_artifact(base: &Base, strategy: &AdaptStrategy, check: HashCheck) -> Result<(Adapted, Option<String>)> {
    let Some(path) = base.layout.artifact(strategy) else {
        return Ok((Adapted::Base, None));
    };
    if !path.is_file() {
        bail!(
            "no {} artifact at {}; run `ptune adapt` or `ptune ablate` first",
            strategy.label(),
            path.display()
        );
    }
    match strategy {
        AdaptStrategy::FineTune => {
            let ck = load_checkpoint(&path)?;
            let meta: FineTuneMeta = serde_json::from_str(
                &fs::read_to_string(base.layout.fine_tune_meta()).context("reading fine-tune metadata")?,
            )?;
            let artifact = Adapted::FineTuned {
                params: ck.params,
                base_model_hash: meta.base_model_hash,
            };
            match (artifact.check_compatible(&base.hash), check) {
                (Ok(()), _) => Ok((artifact, None)),
                (Err(e), HashCheck::Strict) => Err(e.into()),
                (Err(e), HashCheck::Warn) => Ok((artifact, Some(format!("{}: {e}", path.display())))),
            }
        }
        _ => {
            let loaded = load_prompt(&path, &base.hash, check)?;
            Ok((Adapted::Prompt(loaded.prompt), loaded.warning))
        }
    }
}

/// Trains one strategy on the target corpus and saves its artifact and
/// training report.
pub fn run_strategy(cfg: &ExperimentConfig, base: &Base, strategy: &AdaptStrategy) -> Result<StrategyRun> {
    let hyper = hyper_for(cfg, strategy);
    let t = &base.data.target;
    let (artifact, report) = train(&base.params, &base.hash, strategy, &t.train, &t.dev, &hyper)?;
    save_artifact(&base.layout, strategy, &artifact)?;
    write(
        &base.layout.train_report(strategy),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(StrategyRun {
        strategy: strategy.clone(),
        artifact,
        report: Some(report),
    })
}

pub fn cmd_adapt(cfg: &ExperimentConfig, strategy: &AdaptStrategy) -> Result<(StrategyRun, ComparisonRow)> {
    let base = load_base(cfg)?;
    let run = run_strategy(cfg, &base, strategy)?;
    let row = compare_strategies(
        &base.params,
        &base.hash,
        std::slice::from_ref(&run),
        &base.data.target.test,
    )?
    .remove(0);
    Ok((run, row))
}

/// Test perplexity of the base model and of each saved artifact.
pub fn cmd_eval(cfg: &ExperimentConfig, strategies: &[AdaptStrategy]) -> Result<Vec<ComparisonRow>> {
    let base = load_base(cfg)?;
    let mut runs = Vec::new();
    for s in strategies {
        let (artifact, warning) = load_artifact(&base, s, hash_check(cfg))?;
        if let Some(w) = warning {
            eprintln!("warning: {w}");
        }
        runs.push(StrategyRun {
            strategy: s.clone(),
            artifact,
            report: None,
        });
    }
    let rows = compare_strategies(&base.params, &base.hash, &runs, &base.data.target.test)?;
    let mut csv = Csv::new(&COMPARISON_COLUMNS);
    for r in &rows {
        csv.row(comparison_cells(r, false));
    }
    write(&base.layout.eval_csv(), csv.finish())?;
    Ok(rows)
}

/// Strategies whose artifacts exist on disk, in report order.
pub fn saved_strategies(cfg: &ExperimentConfig) -> Vec<AdaptStrategy> {
    let layout = Layout::new(&cfg.output_dir);
    ablation_strategies(cfg)
        .into_iter()
        .filter(|s| layout.artifact(s).is_none_or(|p| p.is_file()))
        .collect()
}

/// One ablation cell: the comparison row, or the error that ended the run.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub strategy: AdaptStrategy,
    pub trainable_params: usize,
    pub trainable_fraction: f64,
    pub outcome: std::result::Result<ComparisonRow, String>,
    pub report: Option<TrainReport>,
}

pub struct AblateOutcome {
    pub rows: Vec<AblationRow>,
    pub csv: String,
    pub error_count: usize,
}

pub const ABLATION_EXTRA_COLUMN: &str = "error";

/// Sweeps none, every configured prompt size and fine tuning over the
/// saved base. A failing run becomes an error row and the sweep goes on.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<AblateOutcome> {
    let base = load_base(cfg)?;
    let model = *base.params.config();
    let mut rows = Vec::new();
    for strategy in ablation_strategies(cfg) {
        let mut report = None;
        let outcome = run_strategy(cfg, &base, &strategy)
            .and_then(|run| {
                report = run.report.clone();
                Ok(compare_strategies(&base.params, &base.hash, &[run], &base.data.target.test)?.remove(0))
            })
            .map_err(|e| format!("{e:#}"));
        rows.push(AblationRow {
            trainable_params: strategy.trainable_params(&model),
            trainable_fraction: strategy.trainable_fraction(&model),
            strategy,
            outcome,
            report,
        });
    }
    let csv = ablation_csv(&rows, cfg.record_wall_time);
    let layout = &base.layout;
    write(&layout.ablation_csv(), &csv)?;
    write(&layout.timings_csv(), timings_csv(&rows))?;
    write(&layout.summary(), summary_markdown(cfg, &base, &rows))?;
    let error_count = rows.iter().filter(|r| r.outcome.is_err()).count();
    Ok(AblateOutcome { rows, csv, error_count })
}

pub fn ablation_csv(rows: &[AblationRow], with_wall_time: bool) -> String {
    let mut header = COMPARISON_COLUMNS.to_vec();
    header.push(ABLATION_EXTRA_COLUMN);
    let mut csv = Csv::new(&header);
    for r in rows {
        let mut cells = match &r.outcome {
            Ok(row) => comparison_cells(row, with_wall_time),
            Err(_) => vec![
                r.strategy.kind().to_string(),
                r.strategy.prompt_size().map(|p| p.to_string()).unwrap_or_default(),
                r.trainable_params.to_string(),
                fmt_real(r.trainable_fraction),
                String::new(),
                String::new(),
                String::new(),
            ],
        };
        cells.push(r.outcome.as_ref().err().cloned().unwrap_or_default());
        csv.row(cells);
    }
    csv.finish()
}

fn timings_csv(rows: &[AblationRow]) -> String {
    let mut csv = Csv::new(&[
        "strategy",
        "prompt_size",
        "epochs_run",
        "optimizer_steps",
        "optimizer_memory_values",
        "wall_time_s",
    ]);
    for r in rows {
        let Some(rep) = &r.report else { continue };
        csv.row([
            r.strategy.kind().to_string(),
            r.strategy.prompt_size().map(|p| p.to_string()).unwrap_or_default(),
            rep.epochs_run.to_string(),
            rep.optimizer_steps.to_string(),
            rep.optimizer_memory_values.to_string(),
            fmt_real(rep.wall_time_seconds),
        ]);
    }
    csv.finish()
}

const BAR_WIDTH: usize = 40;

fn summary_markdown(cfg: &ExperimentConfig, base: &Base, rows: &[AblationRow]) -> String {
    let model = base.params.config();
    let test = &base.data.target.test;
    let mut s = String::new();
    let _ = writeln!(s, "# Prompt-size ablation: {}\n", cfg.name);
    let _ = writeln!(
        s,
        "Base model `{}`: {} parameters, {} layers, d_model {}, vocabulary {}.",
        &base.hash[..16],
        count_params(model).total,
        model.n_layers,
        model.d_model,
        model.vocab_size
    );
    let _ = writeln!(
        s,
        "Test set: {} `{}` sentences, {} scored tokens.\n",
        test.len(),
        test.domain(),
        test.token_count()
    );
    let _ = writeln!(s, "| strategy | trainable params | fraction | dev ppl | test ppl |");
    let _ = writeln!(s, "|---|---:|---:|---:|---:|");
    for r in rows {
        let (dev, test) = match &r.outcome {
            Ok(row) => (
                row.dev_ppl.map(fmt_real).unwrap_or_default(),
                fmt_real(row.test.perplexity),
            ),
            Err(e) => (String::new(), format!("error: {e}")),
        };
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            r.strategy.label(),
            r.trainable_params,
            fmt_real(r.trainable_fraction),
            dev,
            test
        );
    }
    let max = rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok())
        .map(|r| r.test.perplexity)
        .fold(0.0, f64::max);
    let _ = writeln!(s, "\nTest perplexity by prompt size:\n\n```text");
    let width = rows.iter().map(|r| row_name(&r.strategy).len()).max().unwrap_or(0);
    for r in rows {
        let name = row_name(&r.strategy);
        match &r.outcome {
            Ok(row) => {
                let ppl = row.test.perplexity;
                let n = if max > 0.0 {
                    (ppl / max * BAR_WIDTH as f64).round() as usize
                } else {
                    0
                };
                let _ = writeln!(s, "{name:<width$} | {:<BAR_WIDTH$} {}", "#".repeat(n), fmt_real(ppl));
            }
            Err(_) => {
                let _ = writeln!(s, "{name:<width$} | {:<BAR_WIDTH$} error", "");
            }
        }
    }
    s.push_str("```\n");
    s
}

fn row_name(s: &AdaptStrategy) -> String {
    match s {
        AdaptStrategy::PromptTune { prompt_size, .. } => format!("P={prompt_size}"),
        other => other.kind().to_string(),
    }
}

/// A synthetic n-best set for the first `n` sentences of a target split,
/// read from the output directory when already there.
pub fn nbest_set(cfg: &ExperimentConfig, base: &Base, split: Split, n: usize) -> Result<Vec<NBestEntry>> {
    let path = base.layout.nbest(split);
    if path.is_file() {
        let set = read_nbest(&path)?;
        if set.len() != n {
            bail!("{} holds {} utterances, expected {n}", path.display(), set.len());
        }
        return Ok(set);
    }
    let sentences = base.data.target_text.get(split);
    if sentences.len() < n {
        bail!(
            "the {} split has {} sentences, fewer than the {n} requested",
            split.as_str(),
            sentences.len()
        );
    }
    let r = &cfg.rescore;
    let set = synth_nbest(
        &sentences[..n],
        &format!("{}-", split.as_str()),
        &resolve_confusion(&r.confusion)?,
        &resolve_stopwords(r.stopwords.as_deref())?,
        r.n_hyps,
        r.noise_sd,
        derive_seed(cfg.seed, &format!("nbest-{}", split.as_str())),
    )?;
    write_nbest(&set, &path)?;
    Ok(set)
}

pub struct RescoreOutcome {
    pub rows: Vec<RescoreRow>,
    /// Test-set reports per system label, base LM first.
    pub reports: Vec<(String, RescoreReport)>,
    pub csv: String,
}

/// Tunes (λ, μ) on the dev n-best set for the base LM and each configured
/// prompt, then scores the test set. The acoustic-only baseline comes first.
pub fn cmd_rescore(cfg: &ExperimentConfig) -> Result<RescoreOutcome> {
    let base = load_base(cfg)?;
    let r = &cfg.rescore;
    let dev = nbest_set(cfg, &base, Split::Dev, r.dev_utterances)?;
    let test = nbest_set(cfg, &base, Split::Test, r.test_utterances)?;
    let stopwords = resolve_stopwords(r.stopwords.as_deref())?;
    let grids = r.grids();

    let mut systems = vec![(AdaptStrategy::None, Adapted::Base)];
    for &p in &r.prompt_sizes {
        let s = AdaptStrategy::PromptTune {
            prompt_size: p,
            init: cfg.adaptation.prompt_init,
        };
        let (artifact, warning) = load_artifact(&base, &s, hash_check(cfg))?;
        if let Some(w) = warning {
            eprintln!("warning: {w}");
        }
        systems.push((s, artifact));
    }

    let mut reports = Vec::new();
    for (s, artifact) in &systems {
        let (params, prompt) = (artifact.params(&base.params), artifact.prompt());
        let dev_scores = score_nbest(&dev, params, prompt, &base.vocab)?;
        let (lambda, mu) = tune_scored(&dev, &dev_scores, &grids, &stopwords)?;
        let test_scores = score_nbest(&test, params, prompt, &base.vocab)?;
        let report = evaluate_scored(&test, &test_scores, lambda, mu, &stopwords)?;
        reports.push((s.label(), report));
    }
    let first = &reports.first().ok_or_else(|| anyhow!("no systems to rescore"))?.1;
    let mut rows = vec![RescoreRow::baseline_of(first)];
    rows.extend(reports.iter().map(|(label, rep)| RescoreRow::from_report(label, rep)));
    let csv = rescore_csv(&rows);
    write(&base.layout.rescore_csv(), &csv)?;
    Ok(RescoreOutcome { rows, reports, csv })
}

pub struct GenRequest {
    pub grammar: String,
    pub count: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Confusion table for the n-best file; defaults to the shipped table
    /// named like the grammar.
    pub confusion: Option<String>,
    pub n_hyps: usize,
    pub noise_sd: f64,
    pub stopwords: Option<PathBuf>,
}

pub struct GenOutcome {
    pub corpus: PathBuf,
    pub nbest: Option<PathBuf>,
}

/// Samples a corpus from a grammar and, when a confusion table is
/// available, a synthetic n-best file over it.
pub fn cmd_gen(req: &GenRequest) -> Result<GenOutcome> {
    let grammar = resolve_grammar(&req.grammar)?;
    let lines = generate_domain(&grammar, req.count, req.seed)?;
    let stem = Path::new(&req.grammar)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| req.grammar.clone());
    let corpus = req.out.join(format!("{stem}.txt"));
    write(&corpus, lines_file(&lines))?;
    let table = match &req.confusion {
        Some(name) => Some(resolve_confusion(name)?),
        None => ptune_core::rescore::ConfusionTable::builtin(&req.grammar).ok(),
    };
    let nbest = match table {
        Some(table) => {
            let stopwords = resolve_stopwords(req.stopwords.as_deref())?;
            let set = synth_nbest(
                &lines,
                &format!("{stem}-"),
                &table,
                &stopwords,
                req.n_hyps,
                req.noise_sd,
                req.seed,
            )?;
            let path = req.out.join(format!("{stem}.nbest.jsonl"));
            write_nbest(&set, &path)?;
            Some(path)
        }
        None => None,
    };
    Ok(GenOutcome { corpus, nbest })
}
