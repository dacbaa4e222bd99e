use std::path::{Path, PathBuf};
use std::process::Command;

use ptune::{
    cmd_ablate, cmd_eval, cmd_gen, cmd_pretrain, cmd_rescore, load_artifact, load_base, saved_strategies,
    ExperimentConfig, GenRequest, Layout,
};
use ptune_core::adapt::{save_prompt, AdaptStrategy, Adapted, HashCheck, InitMode};
use ptune_core::lm::{count_params, digest_hex};
use ptune_core::rescore::{evaluate_rescoring, nbest_to_jsonl, parse_nbest, read_nbest};
use ptune_core::table::fmt_real;
use ptune_core::text::{default_stopwords, Split};

fn tiny(out: &Path) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.json");
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ptune"))
}

fn config_file(cfg: &ExperimentConfig, dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

#[test]
fn shipped_configs_are_valid() {
    for name in ["desk.json", "tiny.json"] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        ExperimentConfig::load(&path).unwrap().validate().unwrap();
    }
}

#[test]
fn validation_lists_every_problem() {
    let mut cfg = tiny(Path::new("unused"));
    cfg.model.n_heads = 3;
    cfg.adaptation.prompt_sizes = vec![5, 3];
    cfg.data.split_fracs = [0.5, 0.5, 0.5];
    cfg.rescore.n_hyps = 1;
    let problems = cfg.problems();
    assert_eq!(problems.len(), 5, "{problems:?}");
    let msg = cfg.validate().unwrap_err().to_string();
    for needle in [
        "n_heads",
        "strictly increasing",
        "split_fracs",
        "n_hyps",
        "rescore prompt size 2",
    ] {
        assert!(msg.contains(needle), "{needle} missing from {msg}");
    }
}

#[test]
fn pretrain_is_reproducible_and_hash_matches_file() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny(&dir.path().join("missing/nested/a"));
    let b = tiny(&dir.path().join("b"));
    let ra = cmd_pretrain(&a).unwrap();
    let rb = cmd_pretrain(&b).unwrap();
    let bytes = std::fs::read(&ra.checkpoint).unwrap();
    assert_eq!(bytes, std::fs::read(&rb.checkpoint).unwrap());
    assert_eq!(ra.digest, digest_hex(&bytes));
    let recorded = std::fs::read_to_string(Layout::new(&a.output_dir).base_hash()).unwrap();
    assert_eq!(recorded.split_whitespace().next().unwrap(), ra.digest);
    for split in ["train", "dev", "test"] {
        assert!(a.output_dir.join(format!("data/target.{split}.txt")).is_file());
    }
}

#[test]
fn ablation_rows_follow_the_formulas() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.adaptation.prompt_sizes = vec![5, 10];
    cfg.rescore.prompt_sizes = vec![5];
    cmd_pretrain(&cfg).unwrap();
    let out = cmd_ablate(&cfg).unwrap();
    assert_eq!(out.error_count, 0, "{}", out.csv);
    let d = cfg.model.d_model;
    let base = load_base(&cfg).unwrap();
    let total = count_params(base.params.config()).total;
    let lines: Vec<&str> = out.csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(
        lines[0],
        "strategy,prompt_size,trainable_params,trainable_fraction,wall_time_s,dev_ppl,test_ppl,error"
    );
    let cells: Vec<Vec<&str>> = lines[1..].iter().map(|l| l.split(',').collect()).collect();
    let kinds: Vec<&str> = cells.iter().map(|c| c[0]).collect();
    assert_eq!(kinds, ["none", "prompt_tune", "prompt_tune", "fine_tune"]);
    let trainable: Vec<usize> = cells.iter().map(|c| c[2].parse().unwrap()).collect();
    assert_eq!(trainable, [0, 5 * d, 10 * d, total]);
    for c in &cells {
        let want = c[2].parse::<f64>().unwrap() / total as f64;
        assert_eq!(c[3], fmt_real(want));
        assert_eq!(c[4], "", "wall time is off by default");
    }

    let eval = cmd_eval(&cfg, &saved_strategies(&cfg)).unwrap();
    let again: Vec<String> = eval.iter().map(|r| fmt_real(r.test.perplexity)).collect();
    let csv: Vec<String> = cells.iter().map(|c| c[6].to_string()).collect();
    assert_eq!(again, csv);

    let summary = std::fs::read_to_string(Layout::new(&cfg.output_dir).summary()).unwrap();
    assert!(summary.contains("```text") && summary.contains("P=10"));
    let timings = std::fs::read_to_string(Layout::new(&cfg.output_dir).timings_csv()).unwrap();
    assert_eq!(timings.lines().count(), 5);
}

#[test]
fn failed_runs_become_error_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.adaptation.prompt_sizes = vec![2, 30];
    cfg.rescore.prompt_sizes = vec![2];
    cmd_pretrain(&cfg).unwrap();
    let out = cmd_ablate(&cfg).unwrap();
    assert_eq!(out.error_count, 1);
    let rows: Vec<&str> = out.csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[2].starts_with("prompt_tune,30,"), "{}", rows[2]);
    assert!(rows[2].contains("capacity"), "{}", rows[2]);
    assert!(rows[3].starts_with("fine_tune,"), "sweep continued past the failure");
    assert!(rows[3].ends_with(','));

    let status = bin()
        .arg("--config")
        .arg(config_file(&cfg, dir.path()))
        .arg("ablate")
        .output()
        .unwrap();
    assert!(!status.status.success());
}

#[test]
fn rescoring_is_deterministic_and_matches_direct_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_pretrain(&cfg).unwrap();
    cmd_ablate(&cfg).unwrap();
    let first = cmd_rescore(&cfg).unwrap();
    let systems: Vec<&str> = first.rows.iter().map(|r| r.system.as_str()).collect();
    assert_eq!(systems, ["am_only", "none", "prompt_tune(P=2)"]);
    let second = cmd_rescore(&cfg).unwrap();
    assert_eq!(first.csv, second.csv);

    let base = load_base(&cfg).unwrap();
    let test = read_nbest(base.layout.nbest(Split::Test)).unwrap();
    assert_eq!(test.len(), cfg.rescore.test_utterances);
    let strategy = AdaptStrategy::PromptTune {
        prompt_size: 2,
        init: InitMode::FrequentWords,
    };
    let (artifact, _) = load_artifact(&base, &strategy, HashCheck::Strict).unwrap();
    for (row, prompt) in [(&first.rows[1], None), (&first.rows[2], artifact.prompt())] {
        let direct = evaluate_rescoring(
            &test,
            &base.params,
            prompt,
            &base.vocab,
            row.lambda,
            row.mu,
            &default_stopwords(),
        )
        .unwrap();
        assert_eq!(direct.system.cwer_rate(), row.cwer);
        assert_eq!(direct.system.wer_rate(), row.wer);
        assert_eq!(direct.baseline.cwer_rate(), first.rows[0].cwer);
    }
}

#[test]
fn base_only_rescoring_reports_against_acoustics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.rescore.prompt_sizes.clear();
    cmd_pretrain(&cfg).unwrap();
    let out = cmd_rescore(&cfg).unwrap();
    assert_eq!(out.rows.len(), 2);
    assert_eq!(out.rows[1].system, "none");
    let am = out.rows[0].cwer;
    let rel = out.rows[1].rel_improvement_pct;
    if am > 0.0 {
        assert_eq!(rel, Some(100.0 * (am - out.rows[1].cwer) / am));
    } else {
        assert_eq!(rel, None);
    }
}

#[test]
fn foreign_prompt_is_a_compatibility_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_pretrain(&cfg).unwrap();
    cmd_ablate(&cfg).unwrap();
    let base = load_base(&cfg).unwrap();
    let strategy = AdaptStrategy::PromptTune {
        prompt_size: 2,
        init: InitMode::FrequentWords,
    };
    let (artifact, _) = load_artifact(&base, &strategy, HashCheck::Strict).unwrap();
    let Adapted::Prompt(mut prompt) = artifact else {
        panic!("not a prompt")
    };
    prompt.base_model_hash = "0".repeat(64);
    save_prompt(&prompt, base.layout.artifact(&strategy).unwrap()).unwrap();
    let err = cmd_rescore(&cfg).err().unwrap();
    let msg = format!("{err:#}");
    assert!(msg.contains("incompatible base model"), "{msg}");
    assert!(msg.contains(&base.hash), "{msg}");

    let mut lenient = cfg.clone();
    lenient.strict_hash = false;
    assert!(cmd_rescore(&lenient).is_ok());
}

#[test]
fn gen_writes_corpus_and_parseable_nbest() {
    let dir = tempfile::tempdir().unwrap();
    let req = |out: PathBuf| GenRequest {
        grammar: "banking-queries".into(),
        count: 100,
        seed: 4,
        out,
        confusion: None,
        n_hyps: 5,
        noise_sd: 0.5,
        stopwords: None,
    };
    let a = cmd_gen(&req(dir.path().join("a"))).unwrap();
    let b = cmd_gen(&req(dir.path().join("b"))).unwrap();
    let text = std::fs::read_to_string(&a.corpus).unwrap();
    assert_eq!(text.lines().count(), 100);
    assert_eq!(std::fs::read(&a.corpus).unwrap(), std::fs::read(&b.corpus).unwrap());
    let nbest_bytes = std::fs::read_to_string(a.nbest.as_ref().unwrap()).unwrap();
    assert_eq!(nbest_bytes, std::fs::read_to_string(b.nbest.unwrap()).unwrap());
    let parsed = parse_nbest(&nbest_bytes).unwrap();
    assert_eq!(parsed.len(), 100);
    assert_eq!(nbest_to_jsonl(&parsed), nbest_bytes);
}

#[test]
fn binary_reports_unknown_grammar_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["gen", "--grammar", "pizza", "-n", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("fastfood-orders") && err.contains("banking-queries"),
        "{err}"
    );

    let mut cfg = tiny(dir.path());
    cfg.pretrain.epochs = 0;
    cfg.model.d_model = 9;
    let out = bin()
        .arg("--config")
        .arg(config_file(&cfg, dir.path()))
        .arg("pretrain")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("d_model") && err.contains("epochs"), "{err}");
}

#[test]
fn binary_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&dir.path().join("ignored"));
    let file = config_file(&cfg, dir.path());
    let run = |seed: &str, out: &str| {
        let status = bin()
            .arg("--config")
            .arg(&file)
            .args(["--seed", seed, "--out"])
            .arg(dir.path().join(out))
            .arg("pretrain")
            .output()
            .unwrap();
        assert!(status.status.success());
        std::fs::read(dir.path().join(out).join("base.ptlm")).unwrap()
    };
    assert_eq!(run("3", "x"), run("3", "y"));
    assert_ne!(run("3", "x"), run("4", "z"));
    assert!(!dir.path().join("ignored").exists());
}
