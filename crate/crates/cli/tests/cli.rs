use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use avfuse::data::{load_manifest, Vocabulary};
use avfuse::frontend::write_wav;
use avfuse::model::{save_checkpoint, Checkpoint, FusionMode, Model, ModelConfig};
use avfuse::metrics::MetricReport;

fn avfuse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avfuse"))
        .args(args)
        .current_dir(cwd)
        .env_remove("AVFUSE_THREADS")
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "{}\n{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const SMALL: &[&str] = &[
    "--classes", "4", "--ambiguous-pairs", "1", "--feature-dim", "8", "--audio-len", "4",
    "--visual-len", "2", "--train-per-class", "4", "--eval-per-class", "2",
];

const TINY_MODEL: &[&str] = &[
    "--d", "16", "--heads", "2", "--encoder-blocks", "1", "--decoder-blocks", "1", "--epochs", "4",
    "--warmup-epochs", "1", "--batch-size", "4", "--lr", "3e-3",
];

fn synth_small(dir: &Path) {
    let mut args = vec!["synth", "--out", "data"];
    args.extend_from_slice(SMALL);
    ok(&avfuse(&args, dir));
}

fn train_tiny(dir: &Path, ck: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--train-manifest", "data/train.jsonl", "--eval-manifest", "data/eval.jsonl",
        "--checkpoint-dir", ck,
    ];
    args.extend_from_slice(TINY_MODEL);
    args.extend_from_slice(extra);
    avfuse(&args, dir)
}

#[test]
fn synth_writes_loadable_reproducible_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&avfuse(&["synth", "--out", "a"], p));
    let m = load_manifest(&p.join("a/train.jsonl")).unwrap();
    assert_eq!(m.len(), 8 * 16);
    assert!(m.has_visual());
    assert_eq!(load_manifest(&p.join("a/eval.jsonl")).unwrap().len(), 8 * 8);

    ok(&avfuse(&["synth", "--out", "s1", "--seed", "7"], p));
    ok(&avfuse(&["synth", "--out", "s2", "--seed", "7"], p));
    let (t1, t2) = (tree(&p.join("s1")), tree(&p.join("s2")));
    assert!(t1.len() > 100);
    assert_eq!(t1, t2);
    assert_ne!(tree(&p.join("a")), t1);

    let refused = avfuse(&["synth", "--out", "s1", "--seed", "8"], p);
    assert_eq!(code(&refused), 1);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    assert_eq!(tree(&p.join("s1")), t1);
    ok(&avfuse(&["synth", "--out", "s1", "--seed", "8", "--force"], p));

    let bad = avfuse(&["synth", "--out", "b", "--ambiguous-pairs", "2", "--classes", "3"], p);
    assert_eq!(code(&bad), 1);
    assert!(!p.join("b").exists());
}

#[test]
fn train_smoke_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth_small(p);
    fs::write(p.join("run.toml"), "seed = 2\n[model]\nbeta = 0.5\n[train]\nlabel_smoothing_eps = 0.05\n").unwrap();
    let out = ok(&train_tiny(p, "ck", &["--config", "run.toml", "--beta", "0.13"]));
    assert!(out.contains("beta=0.13"), "{out}");
    assert!(out.contains("fusion_mode=adaava_audio"));
    let echoed = avfuse_cli::RunConfig::from_toml(&fs::read_to_string(p.join("ck/run_config.toml")).unwrap()).unwrap();
    assert_eq!(echoed.model.beta, 0.13);
    assert_eq!(echoed.seed, 2);
    assert_eq!(echoed.train.label_smoothing_eps, 0.05);
    let res = echoed.resolution.unwrap();
    assert!(res.from_flags.contains(&"model.beta".to_string()));
    assert!(res.config_file.unwrap().ends_with("run.toml"));

    let log: Vec<serde_json::Value> = fs::read_to_string(p.join("ck/metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let val: Vec<f64> = log.iter().filter_map(|r| r["val_loss"].as_f64()).collect();
    assert_eq!(val.len(), 4);
    assert!(val[3] < val[0], "{val:?}");
    assert!(p.join("ck/best.ckpt").is_file() && p.join("ck/last.ckpt").is_file());
    assert!(!p.join("ck/.avfuse.lock").exists());

    // an existing run is neither overwritten nor shared
    assert_eq!(code(&train_tiny(p, "ck", &[])), 1);
    fs::write(p.join("ck/.avfuse.lock"), "1").unwrap();
    assert_eq!(code(&train_tiny(p, "ck", &["--force"])), 2);
}

#[test]
fn train_rejects_bad_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth_small(p);
    // strip visual features from the manifests
    for name in ["train", "eval"] {
        let text = fs::read_to_string(p.join(format!("data/{name}.jsonl"))).unwrap();
        let stripped: Vec<String> = text
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("visual_features");
                v.to_string()
            })
            .collect();
        fs::write(p.join(format!("data/{name}.jsonl")), stripped.join("\n") + "\n").unwrap();
    }
    let o = train_tiny(p, "ck", &["--fusion-mode", "video_only"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("video_only"));
    ok(&train_tiny(p, "ck2", &["--fusion-mode", "audio_only"]));

    let o = train_tiny(p, "ck3", &["--fusion-mode", "fancy"]);
    assert_eq!(code(&o), 1);
    let o = train_tiny(p, "ck3", &["--beta", "1.5", "--label-smoothing", "1.5"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr).to_string();
    assert!(err.contains("beta") && err.contains("label_smoothing_eps"), "{err}");
    fs::write(p.join("bad.toml"), "[model]\nbetta = 0.1\n").unwrap();
    assert_eq!(code(&train_tiny(p, "ck3", &["--config", "bad.toml"])), 1);
    assert_eq!(code(&avfuse(&["train", "--no-such-flag"], p)), 1);
    assert_eq!(code(&avfuse(&["--help"], p)), 0);
}

#[test]
fn eval_reports_and_beam_one_matches_greedy() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth_small(p);
    ok(&train_tiny(p, "ck", &[]));
    let run = |out: &str, extra: &[&str]| {
        let mut args = vec!["eval", "--checkpoint", "ck/last.ckpt", "--manifest", "data/eval.jsonl", "--out", out];
        args.extend_from_slice(extra);
        ok(&avfuse(&args, p));
        fs::read(p.join(out).join("report.json")).unwrap()
    };
    let beam1 = run("b1", &["--beam", "1"]);
    let greedy = run("g", &["--greedy"]);
    assert_eq!(beam1, greedy);
    assert_eq!(fs::read(p.join("b1/candidates.jsonl")).unwrap(), fs::read(p.join("g/candidates.jsonl")).unwrap());

    let default = run("d", &[]);
    let fields: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(&default).unwrap();
    for k in ["bleu_1", "bleu_2", "bleu_3", "bleu_4", "rouge_l", "cider"] {
        assert!(fields[k].is_f64(), "{k}");
    }
    let r: MetricReport = serde_json::from_slice(&default).unwrap();
    assert_eq!(r.n_items, 8);
    let echo = fs::read_to_string(p.join("d/eval_config.toml")).unwrap();
    assert!(echo.contains("beam = 3"), "{echo}");

    let threaded = Command::new(env!("CARGO_BIN_EXE_avfuse"))
        .args(["eval", "--checkpoint", "ck/last.ckpt", "--manifest", "data/eval.jsonl", "--out", "t"])
        .current_dir(p)
        .env("AVFUSE_THREADS", "1")
        .output()
        .unwrap();
    ok(&threaded);
    assert_eq!(fs::read(p.join("t/report.json")).unwrap(), default);
    let bad = Command::new(env!("CARGO_BIN_EXE_avfuse"))
        .args(["eval", "--checkpoint", "ck/last.ckpt", "--manifest", "data/eval.jsonl", "--out", "t"])
        .current_dir(p)
        .env("AVFUSE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 1);
    assert_eq!(code(&avfuse(&["eval", "--checkpoint", "nope.ckpt", "--manifest", "data/eval.jsonl"], p)), 1);
}

#[test]
fn infer_on_silence_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let vocab = Vocabulary::from_words(["a", "dog", "barks", "rain"]).unwrap();
    let cfg = ModelConfig {
        d: 16,
        heads: 2,
        encoder_blocks: 1,
        decoder_blocks: 1,
        fusion_mode: FusionMode::AudioOnly,
        vocab_size: vocab.len(),
        max_caption_len: 8,
        ..Default::default()
    };
    let save = |cfg: ModelConfig, name: &str| {
        let model = Model::new(cfg.clone(), 1).unwrap();
        let ck = Checkpoint {
            config: cfg,
            vocab: Some(vocab.clone()),
            params: model.params,
            state: serde_json::Value::Null,
            extra: Default::default(),
        };
        save_checkpoint(&ck, &p.join(name)).unwrap();
    };
    save(cfg.clone(), "audio.ckpt");
    save(
        ModelConfig {
            fusion_mode: FusionMode::AdaavaAudio,
            visual_in_dim: 3,
            ..cfg
        },
        "gated.ckpt",
    );
    write_wav(&p.join("silence.wav"), &vec![0.0; 320_000], 32_000).unwrap();
    avfuse::data::write_feature_file(&avfuse::Tensor::full(&[2, 3], 0.5), &p.join("v.avf")).unwrap();

    let a = ok(&avfuse(&["infer", "--checkpoint", "audio.ckpt", "--audio", "silence.wav"], p));
    let b = ok(&avfuse(&["infer", "--checkpoint", "audio.ckpt", "--audio", "silence.wav"], p));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 1);

    let o = avfuse(&["infer", "--checkpoint", "gated.ckpt", "--audio", "silence.wav"], p);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("adaava_audio"));

    let t = ok(&avfuse(
        &["infer", "--checkpoint", "gated.ckpt", "--audio", "silence.wav", "--visual", "v.avf", "--trace"],
        p,
    ));
    let mut densities = 0;
    for line in t.lines().filter(|l| l.starts_with("block")) {
        let words: Vec<&str> = line.split_whitespace().collect();
        for key in ["audio", "visual"] {
            let i = words.iter().position(|w| *w == key).unwrap();
            let v: f64 = words[i + 1].trim_end_matches(';').parse().unwrap();
            assert!((0.0..=1.0).contains(&v), "{line}");
            densities += 1;
        }
    }
    assert_eq!(densities, 2, "{t}");
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = ok(&avfuse(&["gradcheck", "--d", "32", "--samples", "6"], p));
    for group in ["conf", "cross_a", "cross_v", "self", "mlp", "ln1", "ln2", "ln3"] {
        assert!(out.contains(group), "{out}");
    }
    assert!(out.contains("PASS"));
    for seed in ["1", "2"] {
        ok(&avfuse(&["gradcheck", "--d", "32", "--samples", "6", "--seed", seed], p));
    }
    let crafted = avfuse(&["gradcheck", "--d", "32", "--samples", "6", "--near-threshold", "--no-exclusion"], p);
    assert_eq!(code(&crafted), 2);
    assert!(String::from_utf8_lossy(&crafted.stdout).contains("FAIL"));
    ok(&avfuse(&["gradcheck", "--d", "32", "--samples", "6", "--near-threshold"], p));
    ok(&avfuse(&["gradcheck", "--d", "32", "--samples", "6", "--mode", "concatenate"], p));
}
