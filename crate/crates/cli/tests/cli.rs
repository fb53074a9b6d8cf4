use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hybridseg::data::{load_dataset, save_dataset, save_predictions, PredictionRecord};
use hybridseg::labels::{LabelSequence, TokenSequence};
use hybridseg::metrics::{evaluate, GoldReplay, Predictor};
use hybridseg::{MixedTextRecord, Pattern};
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hybridseg"));
    for (key, _) in std::env::vars() {
        if key.starts_with("HYBRIDSEG_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn run(args: &[&str]) -> (u8, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["hybridseg"];
    argv.extend_from_slice(args);
    let code = hybridseg_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, prefix: &str, n: usize, seed: u64) -> (PathBuf, PathBuf) {
    let (code, _, err) = run(&[
        "synth", "--out-dir", p(dir), "--prefix", prefix, "--n", &n.to_string(), "--seed", &seed.to_string(),
    ]);
    assert_eq!(code, 0, "{err}");
    (dir.join(format!("{prefix}.jsonl")), dir.join(format!("{prefix}.seqe")))
}

fn train(dir: &Path, data: &Path, emb: &Path, model: &Path, extra: &[&str]) -> (u8, String, String) {
    let mut args = vec![
        "train", "--train", p(data), "--train-embeddings", p(emb), "--model-out", p(model),
        "--epochs", "1", "--hidden-dim", "4", "--num-layers", "2", "--batch-size", "8",
    ];
    args.extend_from_slice(extra);
    let _ = dir;
    run(&args)
}

fn record(id: &str, labels: Vec<usize>, pattern: Pattern) -> MixedTextRecord {
    MixedTextRecord {
        id: id.into(),
        tokens: TokenSequence::new((0..labels.len()).map(|i| format!("t{i}"))),
        gold_labels: LabelSequence(labels),
        pattern,
        embedding_key: None,
    }
}

#[test]
fn pipeline_runs_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (data, emb) = synth(d, "train", 30, 1);
    let (dev, dev_emb) = synth(d, "dev", 10, 2);
    let mut kvs = Vec::new();
    let mut models = Vec::new();
    for run_id in 0..2 {
        let model = d.join(format!("m{run_id}.bin"));
        let (code, out, err) = train(d, &data, &emb, &model, &["--dev", p(&dev), "--dev-embeddings", p(&dev_emb)]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("epoch=1 loss="), "{out}");
        assert!(err.contains("[train]"), "resolved config echoed: {err}");
        let preds = d.join(format!("p{run_id}.jsonl"));
        let (code, _, err) = run(&["predict", "--model", p(&model), "--data", p(&dev), "--embeddings", p(&dev_emb), "--out", p(&preds)]);
        assert_eq!(code, 0, "{err}");
        let kv = d.join(format!("kv{run_id}.txt"));
        let (code, out, err) = run(&["eval", "--predictions", p(&preds), "--gold", p(&dev), "--kv", p(&kv)]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("F1@3"));
        models.push(fs::read(&model).unwrap());
        kvs.push(fs::read(&kv).unwrap());
    }
    assert_eq!(models[0], models[1]);
    assert_eq!(kvs[0], kvs[1]);
}

#[test]
fn every_decoder_trains_and_predicts() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (data, emb) = synth(d, "train", 12, 5);
    for kind in ["crf", "hmm", "memm"] {
        let model = d.join(format!("{kind}.bin"));
        let (code, out, err) = train(d, &data, &emb, &model, &["--model", kind, "--memm-iterations", "20"]);
        assert_eq!(code, 0, "{kind}: {err}");
        assert!(out.contains(&format!("saved {kind} model")));
        let (code, out, _) = run(&["inspect", p(&model)]);
        assert_eq!(code, 0);
        assert!(out.contains(&format!("decoder={kind}")));
        let (code, out, err) = run(&["predict", "--model", p(&model), "--data", p(&data), "--embeddings", p(&emb)]);
        assert_eq!(code, 0, "{err}");
        assert_eq!(out.lines().count(), 12);
    }
}

#[test]
fn zero_epochs_saves_initial_model() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (data, emb) = synth(d, "train", 5, 1);
    let model = d.join("m.bin");
    let (code, out, err) = train(d, &data, &emb, &model, &["--epochs", "0"]);
    assert_eq!(code, 0, "{err}");
    assert!(!out.contains("epoch="));
    assert!(model.exists());
}

#[test]
fn hashed_embeddings_need_no_file_at_predict_time() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (data, _) = synth(d, "train", 6, 1);
    let model = d.join("m.bin");
    let (code, _, err) = run(&[
        "train", "--train", p(&data), "--model-out", p(&model), "--epochs", "1", "--hidden-dim", "4",
        "--embedding-dim", "6",
    ]);
    assert_eq!(code, 0, "{err}");
    let (code, out, err) = run(&["predict", "--model", p(&model), "--data", p(&data)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 6);
}

#[test]
fn gold_replay_predictions_score_like_direct_evaluation() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (data, _) = synth(d, "gold", 25, 9);
    let gold = load_dataset(&data).unwrap();
    let preds: Vec<_> = gold
        .iter()
        .map(|r| PredictionRecord::new(r.id.clone(), &GoldReplay.predict(r, 3).unwrap()))
        .rev()
        .collect();
    let pred_path = d.join("p.jsonl");
    save_predictions(&preds, &pred_path).unwrap();
    let kv = d.join("kv.txt");
    let (code, _, err) = run(&["eval", "--predictions", p(&pred_path), "--gold", p(&data), "--kv", p(&kv)]);
    assert_eq!(code, 0, "{err}");
    let direct = evaluate(&GoldReplay, &gold, 3).unwrap();
    assert_eq!(fs::read_to_string(&kv).unwrap(), direct.to_key_values());
    assert!(direct.to_key_values().contains("mae.all=0.000000"));
    // Four-boundary records can recover at most three boundaries.
    assert!(direct.to_key_values().contains("f1_at_k.1=1.000000"));
    assert!(direct.to_key_values().contains("f1_at_k.2=1.000000"));
}

#[test]
fn boundary_shifted_by_eight_scores_mae_eight() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mut gold_labels = vec![0; 20];
    gold_labels.extend(vec![1; 30]);
    let mut pred_labels = vec![0; 28];
    pred_labels.extend(vec![1; 22]);
    let gold = d.join("gold.jsonl");
    save_dataset(&[record("r", gold_labels, Pattern::HM)], &gold).unwrap();
    let preds = d.join("p.jsonl");
    let prediction = hybridseg::Prediction::from_labels(LabelSequence(pred_labels), 3);
    save_predictions(&[PredictionRecord::new("r", &prediction)], &preds).unwrap();
    let kv = d.join("kv.txt");
    let (code, _, err) = run(&["eval", "--predictions", p(&preds), "--gold", p(&gold), "--kv", p(&kv)]);
    assert_eq!(code, 0, "{err}");
    let kv = fs::read_to_string(kv).unwrap();
    assert!(kv.contains("mae.all=8.000000"), "{kv}");
    assert!(kv.contains("f1_at_k.all=0.000000"), "{kv}");
}

#[test]
fn missing_prediction_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (data, _) = synth(d, "gold", 3, 1);
    let preds = d.join("p.jsonl");
    fs::write(&preds, "").unwrap();
    let (code, _, err) = run(&["eval", "--predictions", p(&preds), "--gold", p(&data)]);
    assert_eq!(code, 2);
    assert!(err.contains("no prediction"), "{err}");
}

#[test]
fn empty_dataset_predicts_nothing() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (data, emb) = synth(d, "train", 4, 1);
    let model = d.join("m.bin");
    assert_eq!(train(d, &data, &emb, &model, &["--epochs", "0"]).0, 0);
    let empty = d.join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out_path = d.join("p.jsonl");
    let (code, _, err) = run(&["predict", "--model", p(&model), "--data", p(&empty), "--embeddings", p(&emb), "--out", p(&out_path)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read_to_string(out_path).unwrap(), "");
}

#[test]
fn embedding_dim_mismatch_is_reported() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (data, emb) = synth(d, "train", 4, 1);
    let model = d.join("m.bin");
    assert_eq!(train(d, &data, &emb, &model, &["--epochs", "0"]).0, 0);
    let (code, _, _) = run(&["synth", "--out-dir", p(d), "--prefix", "wide", "--n", "4", "--dim", "5"]);
    assert_eq!(code, 0);
    let (code, _, err) = run(&["predict", "--model", p(&model), "--data", p(&data), "--embeddings", p(&d.join("wide.seqe"))]);
    assert_eq!(code, 2);
    assert!(err.contains("does not match model input dim"), "{err}");
}

#[test]
fn invalid_records_are_all_listed_before_training() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let data = d.join("bad.jsonl");
    let records = vec![
        record("ok", [vec![0; 10], vec![1; 10]].concat(), Pattern::HM),
        record("long-a", [vec![0; 40], vec![1; 40]].concat(), Pattern::HM),
        record("long-b", [vec![1; 40], vec![0; 40]].concat(), Pattern::MH),
    ];
    save_dataset(&records, &data).unwrap();
    let model = d.join("m.bin");
    let (code, out, err) = run(&[
        "train", "--train", p(&data), "--model-out", p(&model), "--max-len", "50", "--embedding-dim", "4",
        "--hidden-dim", "4",
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("long-a") && err.contains("long-b"), "{err}");
    assert!(!out.contains("epoch="));
    assert!(!model.exists());
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(run(&["train", "--no-such-flag"]).0, 1);
    assert_eq!(run(&["frobnicate"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
    assert_eq!(run(&["train"]).0, 1, "missing required path");
    assert_eq!(run(&["inspect", p(&d.join("absent"))]).0, 2);
    assert_eq!(run(&["synth", "--out-dir", p(&d.join("absent"))]).0, 2);

    let bad = d.join("bad.jsonl");
    fs::write(&bad, "{\"id\": 1}\n").unwrap();
    let (code, _, err) = run(&["inspect", p(&bad)]);
    assert_eq!(code, 2);
    assert!(err.contains("line 1"), "{err}");

    let (data, emb) = synth(d, "train", 4, 1);
    let model = d.join("m.bin");
    assert_eq!(train(d, &data, &emb, &model, &["--epochs", "0"]).0, 0);
    let mut bytes = fs::read(&model).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let corrupt = d.join("corrupt.bin");
    fs::write(&corrupt, &bytes).unwrap();
    let (code, _, err) = run(&["predict", "--model", p(&corrupt), "--data", p(&data), "--embeddings", p(&emb)]);
    assert_eq!(code, 2);
    assert!(err.contains("checksum"), "{err}");

    assert_eq!(train(d, &data, &emb, &model, &["--llrd-rates", "1,2,3"]).0, 1);
    assert_eq!(train(d, &data, &emb, &model, &["--model", "lstm"]).0, 1);

    let (code, _, err) = train(d, &data, &emb, &model, &["--lr", "1e305", "--optimizer", "sgd", "--gradient-clip", "1e308", "--epochs", "3", "--batch-size", "1"]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn config_file_env_and_flags_layer_in_order() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.toml");
    fs::write(&cfg, format!("[synth]\nn = 3\ndim = 4\nout_dir = {:?}\nprefix = \"file\"\n", p(d))).unwrap();

    let out = bin().args(["synth", "--config", p(&cfg)]).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("wrote 3 records") && stdout.contains("dim 4"), "{stdout}");

    let out = bin().args(["synth"]).env("HYBRIDSEG_CONFIG", &cfg).env("HYBRIDSEG_N", "5").output().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("wrote 5 records"));

    let out: Output = bin()
        .args(["synth", "--n", "7"])
        .env("HYBRIDSEG_CONFIG", &cfg)
        .env("HYBRIDSEG_N", "5")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("wrote 7 records"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n = 7"));

    fs::write(&cfg, "[synth]\nbogus = 1\n").unwrap();
    let out = bin().args(["synth", "--config", p(&cfg)]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn inspect_summarizes_each_file_kind() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (data, emb) = synth(d, "s", 10, 2);
    let (_, out, _) = run(&["inspect", p(&data)]);
    assert!(out.contains("kind=dataset") && out.contains("records=10"), "{out}");
    let (_, out, _) = run(&["inspect", p(&emb)]);
    assert!(out.contains("kind=embeddings") && out.contains("dim=8") && out.contains("sequences=10"), "{out}");
    let model = d.join("m.bin");
    assert_eq!(train(d, &data, &emb, &model, &["--epochs", "0"]).0, 0);
    let (_, out, _) = run(&["inspect", p(&model)]);
    assert!(out.contains("params.embeddings=0") && out.contains("params.head_crf="), "{out}");
}
