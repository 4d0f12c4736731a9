//! Acceptance criteria 1-10, one PASS/FAIL line each.

mod oracles;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use avfuse::data::{
    build_vocabulary, decode_ids, generate_synthetic_task, normalize_caption, Clip, SyntheticTaskSpec, Vocabulary,
    EOS_ID,
};
use avfuse::frontend::{log_mel, waveform_to_patches, MelConfig};
use avfuse::inference::{beam_search, greedy_decode, log_softmax, rank, Hypothesis, StepScorer};
use avfuse::metrics::{bleu, cider, rouge_l, EvalItem, ROUGE_BETA};
use avfuse::model::{adaava_fuse, confidence, BatchItem, FusionMode, ModalityInput, Model, ModelConfig};
use avfuse::training::{examples_from_clips, fit, validation_loss, FitOptions, TrainConfig};
use avfuse::{Real, Tensor};
use avfuse_cli::{GradcheckArgs, Overrides, SynthArgs, TrainArgs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria known not to hold, with the reason logged alongside.
const EXPECTED_FAIL: &[usize] = &[];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn normal(rng: &mut ChaCha8Rng) -> Real {
    rng.sample::<f64, _>(rand_distr::StandardNormal) as Real
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: Real) -> Tensor {
    Tensor::from_fn(shape, |_| normal(rng) * scale)
}

fn within(limit: Duration, t: Instant) -> (bool, f64) {
    let s = t.elapsed().as_secs_f64();
    (s < limit.as_secs_f64(), s)
}

fn fusion_fidelity() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let beta: Real = 0.13;
    let d = 16;
    let (mut worst_out, mut worst_conf, mut mask_errors, mut boundary_hits) = (0.0, 0.0, 0, 0);
    for trial in 0..1000 {
        let rows = rng.random_range(1..=8);
        let h = randn(&mut rng, &[rows, d], 1.0);
        let a = randn(&mut rng, &[rows, d], 1.0);
        let v = randn(&mut rng, &[rows, d], 1.0);
        let scale = [0.05, 0.3, 1.0][trial % 3];
        let w = randn(&mut rng, &[2 * d, d], scale);
        let b = randn(&mut rng, &[d], 1.0);
        let mut conf = confidence(&a, &h, &w, &b).unwrap();
        for i in 0..rows {
            for j in 0..d {
                let mut z = b.data()[j];
                for k in 0..d {
                    z += a.at(i, k) * w.at(k, j) + h.at(i, k) * w.at(d + k, j);
                }
                worst_conf = Real::max(worst_conf, (conf.at(i, j) - oracles::sigmoid(z)).abs());
            }
        }
        if trial % 4 == 0 {
            // values on and next to both thresholds
            let edges = [
                beta,
                1.0 - beta,
                Real::from_bits(beta.to_bits() + 1),
                Real::from_bits(beta.to_bits() - 1),
                Real::from_bits((1.0 - beta).to_bits() + 1),
                Real::from_bits((1.0 - beta).to_bits() - 1),
            ];
            for e in edges {
                let k = rng.random_range(0..conf.numel());
                conf.data_mut()[k] = e;
            }
        }
        let t = adaava_fuse(&h, &a, &v, &conf, beta).unwrap();
        assert!(t.h_hidden == h && t.a_cross == a && t.v_cross == v && t.a_conf == conf);
        for k in 0..conf.numel() {
            let c = t.a_conf.data()[k];
            if (c - beta).abs() < 1e-15 || (1.0 - c - beta).abs() < 1e-15 {
                boundary_hits += 1;
            }
            let want_a = if c > beta { 1.0 } else { 0.0 };
            let want_v = if 1.0 - c > beta { 1.0 } else { 0.0 };
            if t.m_a.data()[k].to_bits() != (want_a as Real).to_bits()
                || t.m_v.data()[k].to_bits() != (want_v as Real).to_bits()
            {
                mask_errors += 1;
            }
            let want = oracles::adaava(c, a.data()[k], v.data()[k], beta);
            worst_out = Real::max(worst_out, (t.av_out.data()[k] - want).abs());
        }
    }
    let (fast, secs) = within(Duration::from_secs(10), t0);
    outcome(
        mask_errors == 0 && worst_out <= 1e-12 && worst_conf <= 1e-12 && fast,
        format!(
            "mask mismatches {mask_errors} ({boundary_hits} boundary values), max |AV_out - oracle| {worst_out:.1e}, \
             max |A_conf - oracle| {worst_conf:.1e}, {secs:.2}s"
        ),
    )
}

fn gradient_check() -> Outcome {
    let t0 = Instant::now();
    let s = avfuse_cli::gradcheck(&GradcheckArgs::default(), &mut std::io::sink()).unwrap();
    let (fast, secs) = within(Duration::from_secs(60), t0);
    let conf = s.groups.get("conf").map_or(0, |g| g.checked);
    let all_checked = s.groups.values().all(|g| g.checked > 0);
    let worst = s.max_rel_error();
    outcome(
        worst < 1e-5 && conf > 0 && all_checked && fast,
        format!(
            "{} groups, max relative error {worst:.2e}, {conf} confidence-layer coordinates, {secs:.1}s",
            s.groups.len()
        ),
    )
}

fn random_config(rng: &mut ChaCha8Rng, mode: FusionMode, beta: Real) -> ModelConfig {
    let heads = rng.random_range(1..=2);
    ModelConfig {
        d: heads * 2 * rng.random_range(1..=4),
        heads,
        encoder_blocks: rng.random_range(0..=1),
        decoder_blocks: rng.random_range(1..=2),
        mlp_ratio: 2.0,
        beta,
        fusion_mode: mode,
        max_caption_len: 8,
        vocab_size: 9,
        audio_in_dim: rng.random_range(2..=5),
        max_audio_len: 8,
        visual_in_dim: rng.random_range(2..=5),
        dropout: 0.0,
    }
}

fn fusion_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut zero_bad, mut half_bad, mut concat_bad) = (0, 0, 0);
    for k in 0..200 {
        let mode = if k % 2 == 0 { FusionMode::AdaavaAudio } else { FusionMode::AdaavaVideo };
        let cfg = random_config(&mut rng, mode, 1.0);
        let (t_a, t_v) = (rng.random_range(1..=6), rng.random_range(1..=4));
        let a = randn(&mut rng, &[t_a, cfg.audio_in_dim], 1.0);
        let v = randn(&mut rng, &[t_v, cfg.visual_in_dim], 1.0);
        let len = rng.random_range(1..=7);
        let mut prefix = vec![1];
        prefix.extend((1..len).map(|_| rng.random_range(4..9)));
        let input = ModalityInput { audio: Some(&a), visual: Some(&v) };

        let seed = rng.random();
        let closed = Model::new(cfg.clone(), seed).unwrap();
        for t in closed.trace(&input, &prefix).unwrap() {
            if t.av_out.data().iter().any(|&x| x != 0.0) {
                zero_bad += 1;
            }
        }

        let mut open = Model::new(ModelConfig { beta: 0.0, ..cfg.clone() }, seed).unwrap();
        for (name, t) in open.params.iter_mut() {
            if name.contains(".conf.") {
                *t = Tensor::zeros(t.shape());
            }
        }
        for t in open.trace(&input, &prefix).unwrap() {
            let even = t.a_conf.data().iter().all(|&c| c == 0.5);
            let mean = t.a_cross.zip_map(&t.v_cross, |x, y| (x + y) / 2.0).unwrap();
            if !even || t.av_out.data().iter().zip(mean.data()).any(|(x, y)| x.to_bits() != y.to_bits()) {
                half_bad += 1;
            }
        }

        let concat = Model::new(ModelConfig { fusion_mode: FusionMode::Concatenate, ..cfg.clone() }, seed).unwrap();
        let audio = Model::new(ModelConfig { fusion_mode: FusionMode::AudioOnly, ..cfg.clone() }, seed).unwrap();
        let empty = Tensor::zeros(&[0, cfg.visual_in_dim]);
        let with_empty = concat
            .forward(&[BatchItem { input: ModalityInput { audio: Some(&a), visual: Some(&empty) }, prefix: &prefix }])
            .unwrap();
        let alone = audio
            .forward(&[BatchItem { input: ModalityInput { audio: Some(&a), visual: None }, prefix: &prefix }])
            .unwrap();
        if with_empty[0].data().iter().zip(alone[0].data()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            concat_bad += 1;
        }
    }
    outcome(
        zero_bad + half_bad + concat_bad == 0,
        format!(
            "200 configs: beta=1 nonzero blocks {zero_bad}, beta=0 half-gate mismatches {half_bad}, \
             concatenate vs audio_only mismatches {concat_bad}"
        ),
    )
}

struct Task {
    vocab: Vocabulary,
    train: Vec<Clip>,
    eval: Vec<Clip>,
}

fn task(spec: &SyntheticTaskSpec) -> Task {
    let ds = generate_synthetic_task(spec).unwrap();
    let train: Vec<Clip> = ds.train.iter().map(Clip::from).collect();
    let eval: Vec<Clip> = ds.eval.iter().map(Clip::from).collect();
    let corpus: Vec<Vec<String>> = train.iter().map(|c| normalize_caption(&c.captions[0])).collect();
    Task { vocab: build_vocabulary(&corpus, 1).unwrap(), train, eval }
}

fn exact_match(model: &Model, clips: &[Clip], vocab: &Vocabulary) -> f64 {
    let hits = clips
        .iter()
        .filter(|c| {
            let input = ModalityInput { audio: Some(&c.audio), visual: c.visual.as_ref() };
            let mut s = model.session(&input).unwrap();
            let h = greedy_decode(&mut s, model.config.max_caption_len).unwrap();
            decode_ids(&h.tokens, vocab) == normalize_caption(&c.captions[0])
        })
        .count();
    hits as f64 / clips.len() as f64
}

fn overfit() -> Outcome {
    let t0 = Instant::now();
    let spec = SyntheticTaskSpec { n_ambiguous_pairs: 0, train_per_class: 8, eval_per_class: 1, ..Default::default() };
    let t = task(&spec);
    let cfg = ModelConfig {
        fusion_mode: FusionMode::AdaavaAudio,
        vocab_size: t.vocab.len(),
        audio_in_dim: spec.feature_dim,
        visual_in_dim: spec.feature_dim,
        max_caption_len: 12,
        dropout: 0.0,
        ..Default::default()
    };
    let mut model = Model::new(cfg, 0).unwrap();
    let train = examples_from_clips(&t.train, &t.vocab, 12).unwrap();
    let tc = TrainConfig {
        lr_peak: 1e-3,
        epochs: 50,
        warmup_epochs: 1,
        batch_size: 8,
        label_smoothing_eps: 0.0,
        spec_augment: false,
        ..Default::default()
    };
    let rep = fit(&mut model, &train, &[], &tc, FitOptions::default()).unwrap();
    let loss = validation_loss(&model, &train, 0.0).unwrap();
    let em = exact_match(&model, &t.train, &t.vocab);
    let (fast, secs) = within(Duration::from_secs(300), t0);
    outcome(
        train.len() == 64 && rep.state.step <= 2000 && loss < 0.05 && em >= 0.95 && fast,
        format!(
            "{} examples, {} steps, training loss {loss:.5}, exact-match {:.1}%, {secs:.1}s",
            train.len(),
            rep.state.step,
            em * 100.0
        ),
    )
}

/// Mean eval exact-match per mode over seeds 0..3 on the ambiguous task.
struct Disambiguation {
    scores: Vec<(FusionMode, Vec<f64>)>,
    secs: f64,
}

impl Disambiguation {
    fn run() -> Disambiguation {
        let t0 = Instant::now();
        let mut scores: Vec<(FusionMode, Vec<f64>)> = FusionMode::ALL.iter().map(|&m| (m, Vec::new())).collect();
        for seed in 0..3 {
            let spec = SyntheticTaskSpec { seed, ..Default::default() };
            let t = task(&spec);
            for (mode, per_seed) in scores.iter_mut() {
                let cfg = ModelConfig {
                    d: 64,
                    fusion_mode: *mode,
                    vocab_size: t.vocab.len(),
                    audio_in_dim: spec.feature_dim,
                    visual_in_dim: spec.feature_dim,
                    max_caption_len: 12,
                    ..Default::default()
                };
                let mut model = Model::new(cfg, seed).unwrap();
                let train = examples_from_clips(&t.train, &t.vocab, 12).unwrap();
                let tc = TrainConfig {
                    lr_peak: 1e-3,
                    epochs: 25,
                    warmup_epochs: 2,
                    batch_size: 8,
                    seed,
                    augment_policy: avfuse::frontend::SpecAugmentPolicy {
                        time_masks: 1,
                        max_time_width: 2,
                        freq_masks: 1,
                        max_freq_width: 4,
                    },
                    ..Default::default()
                };
                fit(&mut model, &train, &[], &tc, FitOptions::default()).unwrap();
                per_seed.push(exact_match(&model, &t.eval, &t.vocab));
            }
        }
        Disambiguation { scores, secs: t0.elapsed().as_secs_f64() }
    }

    fn of(&self, mode: FusionMode) -> &[f64] {
        &self.scores.iter().find(|(m, _)| *m == mode).unwrap().1
    }

    fn mean(&self, mode: FusionMode) -> f64 {
        let s = self.of(mode);
        s.iter().sum::<f64>() / s.len() as f64
    }

    fn table(&self) -> String {
        self.scores
            .iter()
            .map(|(m, s)| {
                let per: Vec<String> = s.iter().map(|x| format!("{:.0}", x * 100.0)).collect();
                format!("{m} {:.1} [{}]", self.mean(*m) * 100.0, per.join("/"))
            })
            .collect::<Vec<_>>()
            .join(", ")
    }
}

fn disambiguation(d: &Disambiguation) -> Outcome {
    let gap = d.mean(FusionMode::AdaavaAudio) - d.mean(FusionMode::AudioOnly);
    let four = [FusionMode::AudioOnly, FusionMode::Concatenate, FusionMode::AdaavaAudio];
    let video_lowest = (0..3).all(|s| {
        four.iter().all(|&m| d.of(FusionMode::VideoOnly)[s] < d.of(m)[s])
    });
    outcome(
        gap >= 0.20 && video_lowest && d.secs < 1800.0,
        format!(
            "adaava_audio - audio_only = {:.1} points, video_only lowest in every seed: {video_lowest}; {}; {:.0}s",
            gap * 100.0,
            d.table(),
            d.secs
        ),
    )
}

fn audio_vs_video_gate(d: &Disambiguation) -> Outcome {
    let (a, v) = (d.mean(FusionMode::AdaavaAudio), d.mean(FusionMode::AdaavaVideo));
    outcome(a >= v, format!("adaava_audio {:.1}% vs adaava_video {:.1}%", a * 100.0, v * 100.0))
}

fn fuzz_corpus(rng: &mut ChaCha8Rng, copy: bool) -> Vec<(oracles::Words, Vec<oracles::Words>)> {
    let words = ["a", "dog", "barks", "the", "cat", "rain", "falls", "loudly"];
    let sentence = |rng: &mut ChaCha8Rng, lo: usize| -> Vec<String> {
        let n = rng.random_range(lo..=12);
        (0..n).map(|_| words[rng.random_range(0..words.len())].to_string()).collect()
    };
    (0..50)
        .map(|_| {
            let lo = if copy { 4 } else { 1 };
            let refs: Vec<Vec<String>> = (0..rng.random_range(1..=5)).map(|_| sentence(rng, lo)).collect();
            let cand = if copy {
                refs[0].clone()
            } else if rng.random_bool(0.5) {
                // an edited reference
                let mut c = refs[rng.random_range(0..refs.len())].clone();
                for _ in 0..rng.random_range(0..3) {
                    let i = rng.random_range(0..c.len());
                    if rng.random_bool(0.5) && c.len() > 1 {
                        c.remove(i);
                    } else {
                        c[i] = words[rng.random_range(0..words.len())].to_string();
                    }
                }
                c
            } else {
                sentence(rng, 1)
            };
            (cand, refs)
        })
        .collect()
}

fn as_corpus(items: &[(oracles::Words, Vec<oracles::Words>)]) -> Vec<EvalItem> {
    items
        .iter()
        .map(|(c, r)| EvalItem { candidate: c.clone(), references: r.clone() })
        .collect()
}

fn metrics_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut lcs_disagree = 0;
    for _ in 0..5 {
        let items = fuzz_corpus(&mut rng, false);
        let corpus = as_corpus(&items);
        let ours = bleu(&corpus, 4).unwrap();
        for (x, y) in ours.iter().zip(oracles::bleu(&items, 4)) {
            worst = worst.max((x - y).abs());
        }
        worst = worst.max((rouge_l(&corpus, ROUGE_BETA).unwrap() - oracles::rouge_l(&items, 1.2)).abs());
        worst = worst.max((cider(&corpus).unwrap() - oracles::cider_d(&items)).abs());
        for (c, refs) in &items {
            for r in refs {
                let l = avfuse::metrics::lcs_len(c, r);
                if l != oracles::lcs(c, r) || l != oracles::lcs_enumerated(c, r) {
                    lcs_disagree += 1;
                }
            }
        }
    }
    let same = as_corpus(&fuzz_corpus(&mut rng, true));
    let self_bleu = bleu(&same, 4).unwrap();
    let self_rouge = rouge_l(&same, ROUGE_BETA).unwrap();
    let exact = self_bleu.iter().all(|&b| b == 1.0) && self_rouge == 1.0;
    outcome(
        worst <= 1e-9 && lcs_disagree == 0 && exact,
        format!(
            "5 fuzzed 50-item corpora: max |metric - oracle| {worst:.1e}, LCS disagreements {lcs_disagree}; \
             self-evaluation BLEU {self_bleu:?} ROUGE-L {self_rouge}"
        ),
    )
}

/// Autoregressive toy model: next-token logits drawn from a stream keyed
/// by the whole prefix.
struct Toy {
    seed: u64,
    words: usize,
}

impl Toy {
    const FIRST_WORD: usize = 4;

    fn vocab(&self) -> usize {
        Self::FIRST_WORD + self.words
    }
}

impl StepScorer for Toy {
    fn log_probs(&mut self, prefix: &[usize]) -> avfuse::Result<Vec<Real>> {
        let key: Vec<u8> = prefix.iter().flat_map(|&t| (t as u32).to_le_bytes()).collect();
        let mut rng = avfuse::rng::substream(self.seed, "toy", avfuse::rng::stable_hash(&key));
        let mut logits = vec![Real::NEG_INFINITY; self.vocab()];
        logits[EOS_ID] = rng.random_range(-3.0..3.0);
        for l in logits.iter_mut().skip(Self::FIRST_WORD) {
            *l = rng.random_range(-3.0..3.0);
        }
        Ok(log_softmax(&logits))
    }
}

/// Best complete hypothesis by enumerating every path.
fn exhaustive(toy: &mut Toy, max_len: usize, length_norm: bool) -> Hypothesis {
    let mut best: Option<Hypothesis> = None;
    let mut stack = vec![Hypothesis { tokens: vec![1], log_prob: 0.0, finished: false }];
    while let Some(h) = stack.pop() {
        if h.finished || h.tokens.len() >= max_len {
            if best.as_ref().is_none_or(|b| rank(&h, b, length_norm).is_lt()) {
                best = Some(h);
            }
            continue;
        }
        let lp = toy.log_probs(&h.tokens).unwrap();
        for (tok, &l) in lp.iter().enumerate().filter(|(_, l)| l.is_finite()) {
            let mut tokens = h.tokens.clone();
            tokens.push(tok);
            stack.push(Hypothesis { tokens, log_prob: h.log_prob + l, finished: tok == EOS_ID });
        }
    }
    best.unwrap()
}

fn decoding() -> Outcome {
    let mut greedy_same = 0;
    for seed in 0..100 {
        let mut toy = Toy { seed, words: 6 };
        let g = greedy_decode(&mut toy, 10).unwrap();
        let b = beam_search(&mut toy, 1, 10, true).unwrap();
        let b_raw = beam_search(&mut toy, 1, 10, false).unwrap();
        if b.len() == 1 && b[0] == g && b_raw[0] == g {
            greedy_same += 1;
        }
    }
    let mut exact = [0, 0];
    for seed in 0..100 {
        for (k, ln) in [false, true].into_iter().enumerate() {
            let mut toy = Toy { seed: 1000 + seed, words: 2 };
            let top = beam_search(&mut toy, 3, 5, ln).unwrap().swap_remove(0);
            if top.tokens == exhaustive(&mut toy, 5, ln).tokens {
                exact[k] += 1;
            }
        }
    }
    outcome(
        greedy_same == 100 && exact == [100, 100],
        format!(
            "beam 1 = greedy in {greedy_same}/100; beam 3 = exhaustive in {}/100 (summed log-prob) \
             and {}/100 (length-normalised)",
            exact[0], exact[1]
        ),
    )
}

fn frontend() -> Outcome {
    let cfg = MelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise: Vec<Real> = (0..320_000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let spec = log_mel(&noise, 32_000, &cfg).unwrap();
    let again = log_mel(&noise, 32_000, &cfg).unwrap();
    let patches = waveform_to_patches(&noise, 32_000, &cfg).unwrap();
    let patches_again = waveform_to_patches(&noise, 32_000, &cfg).unwrap();
    let same = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    let silence = log_mel(&vec![0.0; 320_000], 32_000, &cfg).unwrap();
    let floor = (cfg.floor as Real).ln();
    let flat = silence.frames.data().iter().all(|&x| x == floor);
    let shape_ok = spec.frames.shape() == [1000, 64] && patches.shape() == [250, 256];
    outcome(
        shape_ok && flat && same(&spec.frames, &again.frames) && same(&patches, &patches_again),
        format!(
            "log-mel {:?}, patches {:?}, silence at ln(floor) everywhere: {flat}, repeat runs bit-identical",
            spec.frames.shape(),
            patches.shape()
        ),
    )
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    avfuse_cli::synth(
        &SynthArgs {
            out: p.join("data"),
            classes: 4,
            ambiguous_pairs: 1,
            feature_dim: 8,
            audio_len: 4,
            visual_len: 2,
            noise_std: 0.1,
            train_per_class: 5,
            eval_per_class: 2,
            seed: 0,
            force: false,
        },
        &mut std::io::sink(),
    )
    .unwrap();
    let args = |ck: &str, max_steps: Option<u64>, resume: bool| TrainArgs {
        config: None,
        resume,
        force: false,
        overrides: Overrides {
            train_manifest: Some(p.join("data/train.jsonl")),
            eval_manifest: Some(p.join("data/eval.jsonl")),
            checkpoint_dir: Some(p.join(ck)),
            d: Some(16),
            heads: Some(2),
            encoder_blocks: Some(1),
            decoder_blocks: Some(1),
            epochs: Some(4),
            warmup_epochs: Some(1),
            batch_size: Some(3),
            lr: Some(3e-3),
            seed: Some(11),
            max_steps,
            ..Default::default()
        },
    };
    let train = |a: TrainArgs| avfuse_cli::train(&a, &mut std::io::sink()).unwrap();
    train(args("a", None, false));
    train(args("b", None, false));
    // 20 examples in batches of 3: 7 steps per epoch, so step 9 is mid-epoch
    train(args("c", Some(9), false));
    let partial = std::fs::read(p.join("c/last.ckpt")).unwrap();
    train(args("c", None, true));
    let read = |run: &str, f: &str| std::fs::read(p.join(run).join(f)).unwrap();
    let files = ["metrics.jsonl", "last.ckpt", "best.ckpt"];
    let twice = files.iter().all(|f| read("a", f) == read("b", f));
    let resumed = files.iter().all(|f| read("a", f) == read("c", f));
    let log_lines = String::from_utf8(read("a", "metrics.jsonl")).unwrap().lines().count();
    outcome(
        twice && resumed && partial != read("a", "last.ckpt") && log_lines == 28,
        format!(
            "two runs bit-identical: {twice}; stopped at step 9 and resumed: bit-identical {resumed} \
             ({log_lines} log lines, checkpoints and log compared byte for byte)"
        ),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut disamb: Option<Disambiguation> = None;
    let mut failures = Vec::new();
    let criteria: [(usize, &str); 10] = [
        (1, "fusion trace fidelity"),
        (2, "gradient check"),
        (3, "fusion identities"),
        (4, "overfit"),
        (5, "disambiguation ordering"),
        (6, "audio-primary vs video-primary gate"),
        (7, "metric oracles"),
        (8, "decoding"),
        (9, "frontend"),
        (10, "reproducibility"),
    ];
    for (n, name) in criteria {
        if !run(n) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match n {
            1 => fusion_fidelity(),
            2 => gradient_check(),
            3 => fusion_identities(),
            4 => overfit(),
            5 => disambiguation(disamb.get_or_insert_with(Disambiguation::run)),
            6 => audio_vs_video_gate(disamb.get_or_insert_with(Disambiguation::run)),
            7 => metrics_oracles(),
            8 => decoding(),
            9 => frontend(),
            _ => reproducibility(),
        }));
        let o = result.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let expected = EXPECTED_FAIL.contains(&n);
        let tag = match (o.pass, expected) {
            (true, _) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
        };
        println!("criterion {n:>2} {tag}: {name}: {} [{:.1}s]", o.detail, t0.elapsed().as_secs_f64());
        if !o.pass && !expected {
            failures.push(n);
        }
    }
    if !failures.is_empty() {
        eprintln!("unexpected failures: {failures:?}");
        std::process::exit(1);
    }
}
