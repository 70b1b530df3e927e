//! End-to-end pipeline runs through the compiled `sqlpref` binary:
//! judge -> pairs -> eval -> dpo-metrics -> analyze -> report, plus the
//! prompt and synthesize entry points and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use sqlpref_core::corpus::DatasetItem;
use sqlpref_core::fixtures;
use sqlpref_core::rollouts::Rollout;

fn sqlpref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqlpref"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn expect_success(output: &Output, context: &str) {
    assert!(
        output.status.success(),
        "{context} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn read_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    db_root: PathBuf,
    items: PathBuf,
}

fn items() -> Vec<DatasetItem> {
    vec![
        DatasetItem {
            item_id: "i1".into(),
            question: "Codes of American drivers?".into(),
            evidence: String::new(),
            db_id: "drivers".into(),
            gold_sql: "SELECT code FROM drivers WHERE Nationality = 'American'".into(),
        },
        DatasetItem {
            item_id: "i2".into(),
            question: "How many triple bonds?".into(),
            evidence: "triple bond refers to bond_type = '#'".into(),
            db_id: "molecules".into(),
            gold_sql: "SELECT count(*) FROM bond WHERE bond_type = '#'".into(),
        },
        DatasetItem {
            item_id: "i3".into(),
            question: "Math averages by school code?".into(),
            evidence: String::new(),
            db_id: "schools".into(),
            gold_sql: "SELECT avgscrmath FROM satscores ORDER BY cds".into(),
        },
    ]
}

fn rollout(item: &str, tag: &str, index: u32, sql_or_prose: &str, fence: bool) -> Rollout {
    let text = if fence {
        format!("Working through the join structure.\n```sql\n{sql_or_prose}\n```")
    } else {
        sql_or_prose.to_string()
    };
    Rollout {
        item_id: item.into(),
        checkpoint_tag: tag.into(),
        sample_index: index,
        text,
        extracted_sql: None,
        verdict: None,
    }
}

fn setup() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let db_root = fixtures::build_fixture_root(dir.path());
    let items_path = dir.path().join("items.jsonl");
    sqlpref_core::jsonl::write_jsonl(&items_path, &items()).unwrap();
    Workspace {
        root: dir.path().to_path_buf(),
        db_root: db_root.path().to_path_buf(),
        items: items_path,
        _dir: dir,
    }
}

#[test]
fn full_pipeline_round_trip() {
    let ws = setup();
    let p = |name: &str| ws.root.join(name).display().to_string();
    let db_root = ws.db_root.display().to_string();
    let items = ws.items.display().to_string();

    // Sampled rollouts: two per item, mixed verdict patterns.
    let sampled = vec![
        rollout("i1", "sft", 0, "SELECT code FROM drivers WHERE nationality = 'American'", true),
        rollout("i1", "sft", 1, "SELECT code FROM drivers WHERE nationality = 'America'", true),
        rollout("i2", "sft", 0, "SELECT count(bond_id) FROM bond WHERE bond_type = '#'", true),
        rollout("i2", "sft", 1, "I cannot find the bond table, sorry about that.", false),
        rollout("i3", "sft", 0, "SELECT avgscrmath FROM satscores ORDER BY cds", true),
        rollout("i3", "sft", 1, "SELECT avgscrmath + 0.001 FROM satscores ORDER BY cds", true),
    ];
    sqlpref_core::jsonl::write_jsonl(&ws.root.join("rollouts.jsonl"), &sampled).unwrap();

    // judge
    let out = sqlpref(&[
        "judge",
        "--items", &items,
        "--rollouts", &p("rollouts.jsonl"),
        "--db-root", &db_root,
        "--workers", "4",
        "--timeout-ms", "5000",
        "--out", &p("verdicts.jsonl"),
        "--outcomes-out", &p("outcomes.jsonl"),
    ]);
    expect_success(&out, "judge");
    let verdicts = read_lines(&ws.root.join("verdicts.jsonl"));
    assert_eq!(verdicts.len(), 6);
    let verdict_of = |item: &str, index: u64| -> String {
        verdicts
            .iter()
            .find(|v| v["item_id"] == item && v["sample_index"] == index)
            .unwrap()["verdict"]
            .as_str()
            .unwrap()
            .to_string()
    };
    assert_eq!(verdict_of("i1", 0), "CORRECT");
    assert_eq!(verdict_of("i1", 1), "INCORRECT");
    assert_eq!(verdict_of("i2", 0), "CORRECT");
    assert_eq!(verdict_of("i2", 1), "NONEXECUTABLE");
    assert_eq!(verdict_of("i3", 0), "CORRECT");
    assert_eq!(verdict_of("i3", 1), "INCORRECT");
    let outcomes = read_lines(&ws.root.join("outcomes.jsonl"));
    assert!(outcomes.iter().any(|o| o["kind"] == "gold" && o["item_id"] == "i3"
        && o["order_sensitive"] == true));

    // pairs: byte-identical across reruns, one per mixed item.
    for out_name in ["pairs.jsonl", "pairs2.jsonl"] {
        let out = sqlpref(&[
            "pairs",
            "--rollouts", &p("rollouts.jsonl"),
            "--verdicts", &p("verdicts.jsonl"),
            "--seed", "7",
            "--out", &p(out_name),
        ]);
        expect_success(&out, "pairs");
    }
    let bytes_a = std::fs::read(ws.root.join("pairs.jsonl")).unwrap();
    let bytes_b = std::fs::read(ws.root.join("pairs2.jsonl")).unwrap();
    assert_eq!(bytes_a, bytes_b, "pairs output must be byte-stable under a fixed seed");
    let pairs = read_lines(&ws.root.join("pairs.jsonl"));
    assert_eq!(pairs.len(), 3);
    for pair in &pairs {
        assert_eq!(pair["seed"], 7);
        assert_eq!(pair["chosen_index"], 0);
        assert_eq!(pair["rejected_index"], 1);
    }

    // eval pass1 with two repeats: 3 of 6 samples are correct.
    let out = sqlpref(&[
        "eval",
        "--strategy", "pass1",
        "--rollouts", &p("rollouts.jsonl"),
        "--verdicts", &p("verdicts.jsonl"),
        "--k", "2",
        "--out", &p("report_pass1.json"),
    ]);
    expect_success(&out, "eval pass1");
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(ws.root.join("report_pass1.json")).unwrap())
            .unwrap();
    assert_eq!(report["pass_at_1_mean"], 0.5);
    assert_eq!(report["n_items"], 3);

    // eval majk over the stored outcomes: sample 0 wins every item.
    let out = sqlpref(&[
        "eval",
        "--strategy", "majk",
        "--rollouts", &p("rollouts.jsonl"),
        "--verdicts", &p("verdicts.jsonl"),
        "--outcomes", &p("outcomes.jsonl"),
        "--k", "2",
        "--out", &p("report_majk.json"),
        "--chosen-out", &p("chosen.jsonl"),
    ]);
    expect_success(&out, "eval majk");
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(ws.root.join("report_majk.json")).unwrap())
            .unwrap();
    assert_eq!(report["maj_at_k"], 1.0);
    let chosen = read_lines(&ws.root.join("chosen.jsonl"));
    assert!(chosen.iter().all(|c| c["sample_index"] == 0 && c["correct"] == true));
}

#[test]
fn greedy_eval_judge_analyze_and_report() {
    let ws = setup();
    let p = |name: &str| ws.root.join(name).display().to_string();
    let db_root = ws.db_root.display().to_string();
    let items = ws.items.display().to_string();

    // Greedy decodes from two checkpoints; the later one fixes item i3.
    let before = vec![
        rollout("i1", "sft", 0, "SELECT code FROM drivers WHERE nationality = 'American'", true),
        rollout("i2", "sft", 0, "SELECT count(*) FROM bond WHERE bond_type = '#'", true),
        rollout("i3", "sft", 0, "SELECT avgscrread FROM satscores ORDER BY cds", true),
    ];
    let after = vec![
        rollout("i1", "dpo", 0, "SELECT code FROM drivers WHERE nationality = 'American'", true),
        rollout("i2", "dpo", 0, "SELECT count(*) FROM bond WHERE bond_type = '#'", true),
        rollout("i3", "dpo", 0, "SELECT avgscrmath FROM satscores ORDER BY cds", true),
    ];
    sqlpref_core::jsonl::write_jsonl(&ws.root.join("before.jsonl"), &before).unwrap();
    sqlpref_core::jsonl::write_jsonl(&ws.root.join("after.jsonl"), &after).unwrap();

    for (rollouts, verdicts, outcomes) in [
        ("before.jsonl", "before_verdicts.jsonl", "before_outcomes.jsonl"),
        ("after.jsonl", "after_verdicts.jsonl", "after_outcomes.jsonl"),
    ] {
        let out = sqlpref(&[
            "judge",
            "--items", &items,
            "--rollouts", &p(rollouts),
            "--db-root", &db_root,
            "--out", &p(verdicts),
            "--outcomes-out", &p(outcomes),
        ]);
        expect_success(&out, "judge");
    }

    // Greedy reports for both checkpoints.
    for (rollouts, verdicts, report) in [
        ("before.jsonl", "before_verdicts.jsonl", "report_sft.json"),
        ("after.jsonl", "after_verdicts.jsonl", "report_dpo.json"),
    ] {
        let out = sqlpref(&[
            "eval",
            "--strategy", "greedy",
            "--rollouts", &p(rollouts),
            "--verdicts", &p(verdicts),
            "--items", &items,
            "--out", &p(report),
        ]);
        expect_success(&out, "eval greedy");
    }
    let sft: Value =
        serde_json::from_str(&std::fs::read_to_string(ws.root.join("report_sft.json")).unwrap())
            .unwrap();
    let ex = sft["ex_greedy"].as_f64().unwrap();
    assert!((ex - 2.0 / 3.0).abs() < 1e-12);

    // analyze: one checkpoint pair, no manual labels.
    let out = sqlpref(&[
        "analyze",
        "--items", &items,
        "--db-root", &db_root,
        "--before", &p("before.jsonl"),
        "--before-verdicts", &p("before_verdicts.jsonl"),
        "--before-outcomes", &p("before_outcomes.jsonl"),
        "--after", &p("after.jsonl"),
        "--after-verdicts", &p("after_verdicts.jsonl"),
        "--after-outcomes", &p("after_outcomes.jsonl"),
        "--out", &p("analysis"),
    ]);
    expect_success(&out, "analyze");
    let labels_before = read_lines(&ws.root.join("analysis/labels_before.jsonl"));
    assert_eq!(labels_before.len(), 3);
    let fix_table = std::fs::read_to_string(ws.root.join("analysis/fix_rates.txt")).unwrap();
    assert!(fix_table.contains("100.0 (1/1)"), "table was:\n{fix_table}");
    let matrix = std::fs::read_to_string(ws.root.join("analysis/transition_matrix.csv")).unwrap();
    assert!(matrix.starts_with("from\\to,G,A1,"));
    let stats: Value =
        serde_json::from_str(&std::fs::read_to_string(ws.root.join("analysis/output_stats.json")).unwrap())
            .unwrap();
    assert_eq!(stats.as_array().unwrap().len(), 2);

    // Manual labels override the automatic UNCLASSIFIED.
    let manual = json!({
        "item_id": "i3",
        "checkpoint_tag": "sft",
        "category": "B3",
        "provenance": "MANUAL",
    });
    std::fs::write(ws.root.join("manual.jsonl"), format!("{manual}\n")).unwrap();
    let out = sqlpref(&[
        "analyze",
        "--items", &items,
        "--db-root", &db_root,
        "--before", &p("before.jsonl"),
        "--before-verdicts", &p("before_verdicts.jsonl"),
        "--before-outcomes", &p("before_outcomes.jsonl"),
        "--after", &p("after.jsonl"),
        "--after-verdicts", &p("after_verdicts.jsonl"),
        "--after-outcomes", &p("after_outcomes.jsonl"),
        "--labels", &p("manual.jsonl"),
        "--out", &p("analysis_manual"),
    ]);
    expect_success(&out, "analyze with manual labels");
    let labels = read_lines(&ws.root.join("analysis_manual/labels_before.jsonl"));
    let i3 = labels.iter().find(|l| l["item_id"] == "i3").unwrap();
    assert_eq!(i3["category"], "B3");
    assert_eq!(i3["provenance"], "MANUAL");

    // report: comparison plus reward-hacking series.
    let sr = json!({
        "checkpoint_tag": "dpo",
        "epoch": 3,
        "n_rollouts": 3,
        "mean_implicit_reward": 0.25,
    });
    std::fs::write(ws.root.join("sr_dpo.json"), format!("{sr}\n")).unwrap();
    let out = sqlpref(&[
        "report",
        "--eval", &p("report_sft.json"),
        "--eval", &p("report_dpo.json"),
        "--self-reward", &p("sr_dpo.json"),
        "--out", &p("report"),
    ]);
    expect_success(&out, "report");
    let table = std::fs::read_to_string(ws.root.join("report/comparison.txt")).unwrap();
    assert!(table.contains("sft"), "table was:\n{table}");
    assert!(table.contains("(+33.3)"), "table was:\n{table}");
    let series = std::fs::read_to_string(ws.root.join("report/self_reward_series.csv")).unwrap();
    assert!(series.contains("3,dpo,0.25,"), "series was:\n{series}");

    // Determinism: rerunning report produces identical bytes.
    let first = std::fs::read(ws.root.join("report/comparison.json")).unwrap();
    let out = sqlpref(&[
        "report",
        "--eval", &p("report_sft.json"),
        "--eval", &p("report_dpo.json"),
        "--self-reward", &p("sr_dpo.json"),
        "--out", &p("report"),
    ]);
    expect_success(&out, "report rerun");
    let second = std::fs::read(ws.root.join("report/comparison.json")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn prompt_synthesize_and_dpo_metrics() {
    let ws = setup();
    let p = |name: &str| ws.root.join(name).display().to_string();
    let db_root = ws.db_root.display().to_string();

    // Raw benchmark ingestion path.
    let raw = json!([
        {"question_id": 11, "question": "Codes of American drivers?", "evidence": "",
         "db_id": "drivers", "SQL": "SELECT code FROM drivers WHERE Nationality = 'American'"},
    ]);
    std::fs::write(ws.root.join("bird.json"), raw.to_string()).unwrap();
    let out = sqlpref(&[
        "prompt",
        "--items", &p("bird.json"),
        "--format", "bird",
        "--db-root", &db_root,
        "--items-out", &p("items_norm.jsonl"),
        "--out", &p("prompts.jsonl"),
    ]);
    expect_success(&out, "prompt");
    let prompts = read_lines(&ws.root.join("prompts.jsonl"));
    assert_eq!(prompts.len(), 1);
    let text = prompts[0]["prompt"].as_str().unwrap();
    assert!(text.contains("Table drivers, columns = [ drivers.code ( integer | values : 1 , 2 )"));
    assert!(text.contains("Primary keys = [ drivers.code ]"));
    assert!(text.contains("Question: Codes of American drivers?"));
    let norm = read_lines(&ws.root.join("items_norm.jsonl"));
    assert_eq!(norm[0]["item_id"], "11");

    // Deterministic stub synthesis with verification.
    let out = sqlpref(&[
        "synthesize",
        "--items", &p("items_norm.jsonl"),
        "--db-root", &db_root,
        "--k", "2",
        "--stub",
        "--verify",
        "--out", &p("cot.jsonl"),
    ]);
    expect_success(&out, "synthesize");
    let cot = read_lines(&ws.root.join("cot.jsonl"));
    assert_eq!(cot.len(), 2);
    for record in &cot {
        assert_eq!(record["checkpoint_tag"], "synth");
        assert_eq!(
            record["extracted_sql"],
            "SELECT code FROM drivers WHERE Nationality = 'American'"
        );
    }

    // DPO metrics over a tiny pair dump.
    let dump = |id: &str, policy: Vec<f64>, reference: Vec<f64>| {
        json!({
            "sequence_id": id,
            "tokens": (0..policy.len()).map(|i| format!("t{i}")).collect::<Vec<_>>(),
            "policy_logprobs": policy,
            "ref_logprobs": reference,
        })
    };
    let pairs = [
        json!({
            "pair_id": "p1",
            "chosen": dump("c1", vec![-1.0, -1.0], vec![-2.0, -2.0]),
            "rejected": dump("r1", vec![-2.0, -2.0], vec![-1.0, -1.0]),
        }),
        json!({
            "pair_id": "p2",
            "chosen": dump("c2", vec![-3.0], vec![-1.0]),
            "rejected": dump("r2", vec![-1.0], vec![-1.0]),
        }),
    ];
    let body: String = pairs.iter().map(|p| format!("{p}\n")).collect();
    std::fs::write(ws.root.join("dpo_pairs.jsonl"), body).unwrap();
    let out = sqlpref(&[
        "dpo-metrics",
        "--pairs", &p("dpo_pairs.jsonl"),
        "--beta", "0.1",
        "--out", &p("dpo_results.jsonl"),
        "--summary-out", &p("dpo_summary.json"),
        "--credits-out", &p("credits.jsonl"),
    ]);
    expect_success(&out, "dpo-metrics");
    let results = read_lines(&ws.root.join("dpo_results.jsonl"));
    assert_eq!(results.len(), 2);
    assert_eq!(results[0]["classified_correct"], true);
    assert_eq!(results[1]["classified_correct"], false);
    let margin = results[0]["margin"].as_f64().unwrap();
    assert!((margin - 4.0).abs() < 1e-12);
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(ws.root.join("dpo_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["classification_accuracy"], 0.5);
    let credits = read_lines(&ws.root.join("credits.jsonl"));
    assert_eq!(credits.len(), 4, "chosen and rejected credits per pair");

    // Self-reward mode over bare dumps.
    let dumps: String = [dump("a", vec![-1.0], vec![-2.0]), dump("b", vec![-1.0], vec![-4.0])]
        .iter()
        .map(|d| format!("{d}\n"))
        .collect();
    std::fs::write(ws.root.join("dumps.jsonl"), dumps).unwrap();
    let out = sqlpref(&[
        "dpo-metrics",
        "--dumps", &p("dumps.jsonl"),
        "--beta", "0.1",
        "--checkpoint-tag", "dpo-epoch3",
        "--epoch", "3",
        "--self-reward-out", &p("sr.json"),
    ]);
    expect_success(&out, "dpo-metrics self-reward");
    let sr: Value =
        serde_json::from_str(&std::fs::read_to_string(ws.root.join("sr.json")).unwrap()).unwrap();
    assert_eq!(sr["checkpoint_tag"], "dpo-epoch3");
    let mean = sr["mean_implicit_reward"].as_f64().unwrap();
    assert!((mean - 0.2).abs() < 1e-12);
}

#[test]
fn suite_judging_requires_every_instance_to_pass() {
    let ws = setup();
    let p = |name: &str| ws.root.join(name).display().to_string();
    let suite = fixtures::build_suite_instances(&ws.root, "drivers", 3);
    let suite_root = suite[0].parent().unwrap().parent().unwrap();

    let rollouts = vec![
        rollout("i1", "sft", 0, "SELECT code FROM drivers WHERE nationality = 'American'", true),
        // Coincides with the gold rows on the base data but not on every
        // suite instance.
        rollout("i1", "sft", 1, "SELECT code FROM drivers WHERE code < 100", true),
    ];
    sqlpref_core::jsonl::write_jsonl(&ws.root.join("suite_rollouts.jsonl"), &rollouts).unwrap();

    let out = sqlpref(&[
        "judge",
        "--items", &ws.items.display().to_string(),
        "--rollouts", &p("suite_rollouts.jsonl"),
        "--db-root", &ws.db_root.display().to_string(),
        "--suite-root", &suite_root.display().to_string(),
        "--out", &p("suite_verdicts.jsonl"),
    ]);
    expect_success(&out, "judge with suite");
    let verdicts = read_lines(&ws.root.join("suite_verdicts.jsonl"));
    assert_eq!(verdicts[0]["verdict"], "CORRECT");
    assert_eq!(verdicts[1]["verdict"], "INCORRECT");
}

#[test]
fn exit_codes_follow_the_contract() {
    let ws = setup();
    let p = |name: &str| ws.root.join(name).display().to_string();

    // Unknown flag -> 1.
    let out = sqlpref(&["judge", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));

    // Missing required artifact flag -> 1 with the flag named.
    let out = sqlpref(&["eval", "--strategy", "majk", "--rollouts", "x", "--verdicts", "y", "--out", "z"]);
    assert_eq!(out.status.code(), Some(1));

    // Missing db root -> 1 naming the flag.
    std::fs::write(ws.root.join("empty.jsonl"), "").unwrap();
    let out = sqlpref(&[
        "judge",
        "--items", &p("empty.jsonl"),
        "--rollouts", &p("empty.jsonl"),
        "--out", &p("v.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--db-root"));

    // Nonexistent input file -> 1.
    let out = sqlpref(&[
        "pairs",
        "--rollouts", &p("nope.jsonl"),
        "--verdicts", &p("nope.jsonl"),
        "--out", &p("pairs.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(1));

    // Config file supplies db_root; flagless judge then succeeds.
    sqlpref_core::jsonl::write_jsonl(&ws.root.join("r.jsonl"), &[rollout(
        "i1", "sft", 0, "SELECT code FROM drivers WHERE nationality = 'American'", true,
    )]).unwrap();
    std::fs::write(
        ws.root.join("sqlpref.conf"),
        format!("db_root = {}\nworkers = 2\n", ws.db_root.display()),
    )
    .unwrap();
    let out = sqlpref(&[
        "judge",
        "--config", &p("sqlpref.conf"),
        "--items", &ws.items.display().to_string(),
        "--rollouts", &p("r.jsonl"),
        "--out", &p("v.jsonl"),
    ]);
    expect_success(&out, "judge with config file");
}
