//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Every oracle below is written independently of the library code it checks.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tssd::audio::{read_wav, write_wav, MemorySource, Utterance};
use tssd::metrics::{eer_from_scores, read_scores, write_scores, ScoreEntry, ScoreSet};
use tssd::models::{count_parameters, load_checkpoint, save_checkpoint, Family, Model, ModelConfig};
use tssd::nn::kernels::{conv1d_forward, ConvDims};
use tssd::nn::{Tape, Tensor, Var};
use tssd::training::{cross_entropy, fit, mixup_loss, wce_loss, ClassWeights, LossMode, TrainConfig};
use tssd::verify::run_gradient_suite;
use tssd::Label;

struct Outcome {
    passed: bool,
    detail: String,
    notes: Vec<String>,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
            notes: Vec::new(),
        }
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("parameter counts", parameter_counts),
        ("parameter rounding", parameter_rounding),
        ("gradient suite", gradient_suite),
        ("convolution oracle", convolution_oracle),
        ("eer oracle", eer_oracle),
        ("loss identities", loss_identities),
        ("separability", separability),
        ("length trace", length_trace),
        ("determinism", determinism),
        ("round trips", round_trips),
        ("cli usage", cli_usage),
    ];
    // `ACCEPTANCE_FILTER=<substring>` runs only the matching criteria.
    let filter = std::env::var("ACCEPTANCE_FILTER").unwrap_or_default();
    let selected: Vec<_> = criteria.into_iter().filter(|(name, _)| name.contains(&filter)).collect();
    let mut failed = 0;
    for &(name, check) in &selected {
        let start = Instant::now();
        let outcome = check();
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {name}: {} ({:.2?})", outcome.detail, start.elapsed());
        for note in &outcome.notes {
            println!("       {note}");
        }
        failed += usize::from(!outcome.passed);
    }
    println!("{} of {} criteria passed", selected.len() - failed, selected.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn conv_count(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
    cin * cout * k + if bias { cout } else { 0 }
}

/// Layer-by-layer count: stem conv+BN, per-block convs+BNs, three linear layers.
fn hand_count(family: Family, channels: &[usize], branches: usize, skip: bool, bias: bool) -> usize {
    let conv_bn = |cin, cout, k| conv_count(cin, cout, k, bias) + 2 * cout;
    let mut total = conv_bn(1, 16, 7);
    let mut cin = 16;
    for &c in channels {
        if family == Family::Res {
            total += conv_bn(cin, c, 3) + 2 * conv_bn(c, c, 3);
            if skip {
                total += conv_bn(cin, c, 1);
            }
            cin = c;
        } else {
            total += branches * conv_bn(cin, c, 3);
            cin = branches * c;
        }
    }
    total + cin * 64 + 64 + 64 * 32 + 32 + 32 * 2 + 2
}

/// `(config, exact count, published figure in millions)`.
fn table() -> Vec<(ModelConfig, usize, &'static str)> {
    let mut no_skip = ModelConfig::res(4).unwrap();
    no_skip.use_skip = false;
    vec![
        (ModelConfig::res(4).unwrap(), 350_658, "0.35"),
        (ModelConfig::res(3).unwrap(), 185_282, "0.18"),
        (ModelConfig::res(5).unwrap(), 516_034, "0.51"),
        (no_skip, 322_466, "0.32"),
        (ModelConfig::inc(4, 4).unwrap(), 93_026, "0.09"),
        (ModelConfig::inc(3, 4).unwrap(), 43_490, "0.04"),
        (ModelConfig::inc(4, 8).unwrap(), 343_426, "0.34"),
        (ModelConfig::inc(5, 4).unwrap(), 348_130, "0.35"),
        (ModelConfig::inc(5, 8).unwrap(), 1_345_154, "1.34"),
    ]
}

fn describe(cfg: &ModelConfig) -> String {
    format!(
        "{} m={} branches={} skip={}",
        cfg.family,
        cfg.blocks(),
        cfg.branches,
        cfg.use_skip
    )
}

fn parameter_counts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut notes = Vec::new();
    for (cfg, expected, _) in table() {
        let declared = count_parameters(&cfg).unwrap();
        let built = Model::<f32>::build(&cfg, &mut rng).unwrap().count_parameters();
        let hand = hand_count(cfg.family, &cfg.channels, cfg.branches, cfg.use_skip, true);
        if declared != expected || built != expected || hand != expected {
            notes.push(format!("{}: declared {declared}, built {built}, hand {hand}, expected {expected}", describe(&cfg)));
        }
    }
    let mut o = Outcome::new(notes.is_empty(), format!("{} of 9 configurations exact", 9 - notes.len()));
    o.notes = notes;
    o
}

fn millions(n: usize) -> String {
    format!("{:.2}", n as f64 / 1e6)
}

fn parameter_rounding() -> Outcome {
    let mut notes = Vec::new();
    let mut bias_free_ok = 0;
    for (cfg, count, figure) in table() {
        if millions(count) != figure {
            notes.push(format!(
                "{}: {count} rounds to {}M, published {figure}M",
                describe(&cfg),
                millions(count)
            ));
        }
        let mut bare = cfg.clone();
        bare.conv_bias = false;
        let bare_count = count_parameters(&bare).unwrap();
        assert_eq!(bare_count, hand_count(cfg.family, &cfg.channels, cfg.branches, cfg.use_skip, false));
        bias_free_ok += usize::from(millions(bare_count) == figure);
    }
    notes.push(format!(
        "without convolution biases {bias_free_ok} of 9 counts round to the published figures"
    ));
    let mismatches = notes.len() - 1;
    let mut o = Outcome::new(mismatches == 0, format!("{} of 9 counts round to the published figures", 9 - mismatches));
    o.notes = notes;
    o
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let reports = run_gradient_suite(2024).unwrap();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failing: Vec<String> = reports
        .iter()
        .filter(|r| r.max_rel_error >= 1e-4)
        .map(|r| format!("{} max_rel_err={:.3e}", r.name, r.max_rel_error))
        .collect();
    let fast = start.elapsed() < Duration::from_secs(120);
    let mut o = Outcome::new(
        failing.is_empty() && fast,
        format!("{} checks, worst relative error {worst:.2e} < 1e-4", reports.len()),
    );
    o.notes = failing;
    o
}

#[allow(clippy::too_many_arguments)]
fn naive_conv(x: &[f64], w: &[f64], bias: &[f64], b: usize, cin: usize, cout: usize, l: usize, k: usize, d: usize) -> Vec<f64> {
    let left = (d * (k - 1)) as i64 / 2;
    let mut y = vec![0.0; b * cout * l];
    for n in 0..b {
        for o in 0..cout {
            for t in 0..l {
                let mut acc = bias[o];
                for c in 0..cin {
                    for j in 0..k {
                        let pos = t as i64 + (j * d) as i64 - left;
                        if (0..l as i64).contains(&pos) {
                            acc += w[(o * cin + c) * k + j] * x[(n * cin + c) * l + pos as usize];
                        }
                    }
                }
                y[(n * cout + o) * l + t] = acc;
            }
        }
    }
    y
}

fn convolution_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let grid: Vec<(usize, usize)> = [1, 3, 7]
        .into_iter()
        .flat_map(|k| [1, 2, 4, 8, 128].into_iter().map(move |d| (k, d)))
        .collect();
    let mut worst = 0.0f64;
    for case in 0..500 {
        let (k, d) = grid[case % grid.len()];
        let (b, cin, cout) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let l = rng.random_range(1..=if d == 128 { 400 } else { 60 });
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>();
        let (x, w, bias) = (draw(b * cin * l), draw(cout * cin * k), draw(cout));
        let dims = ConvDims {
            batch: b,
            in_channels: cin,
            out_channels: cout,
            length: l,
            kernel: k,
            dilation: d,
        };
        let got = conv1d_forward(&x, &w, &bias, &dims);
        let up = |v: &[f32]| v.iter().map(|&a| f64::from(a)).collect::<Vec<_>>();
        let want = naive_conv(&up(&x), &up(&w), &up(&bias), b, cin, cout, l, k, d);
        if got.len() != want.len() {
            return Outcome::new(false, format!("case {case}: output length {} != {}", got.len(), want.len()));
        }
        for (g, e) in got.iter().zip(&want) {
            worst = worst.max((f64::from(*g) - e).abs() / e.abs().max(1.0));
        }
    }
    Outcome::new(worst < 1e-5, format!("500 cases over k in {{1,3,7}}, d in {{1,2,4,8,128}}, worst relative error {worst:.2e}"))
}

/// Every observed score and +inf as threshold; smallest |FAR - FRR| wins.
fn brute_force_eer(bona: &[f64], spoof: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(f64::total_cmp);
    let mut best = (f64::INFINITY, 0.0);
    for t in thresholds {
        let far = spoof.iter().filter(|&&s| s >= t).count() as f64 / spoof.len() as f64;
        let frr = bona.iter().filter(|&&s| s < t).count() as f64 / bona.len() as f64;
        if (far - frr).abs() < best.0 {
            best = ((far - frr).abs(), (far + frr) / 2.0);
        }
    }
    best.1
}

fn eer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let levels = rng.random_range(2..60);
        let nb = rng.random_range(1..=100);
        let ns = rng.random_range(1..=100);
        let mut draw = |n: usize, shift: i32| {
            (0..n)
                .map(|_| f64::from(rng.random_range(0..levels) + shift) / 8.0)
                .collect::<Vec<_>>()
        };
        let (bona, spoof) = (draw(nb, 3), draw(ns, 0));
        if eer_from_scores(&bona, &spoof).unwrap().eer != brute_force_eer(&bona, &spoof) {
            mismatches += 1;
        }
    }
    let hand = eer_from_scores(&[0.9, 0.8, 0.7, 0.3], &[0.6, 0.4, 0.2, 0.1]).unwrap().eer;
    Outcome::new(
        mismatches == 0 && hand == 0.25,
        format!("{} of 1000 random sets match exactly, 4+4 example gives {hand}", 1000 - mismatches),
    )
}

fn reference_ce(logits: &[f64], labels: &[Label]) -> f64 {
    let mut total = 0.0;
    for (row, l) in logits.chunks(2).zip(labels) {
        let m = row[0].max(row[1]);
        let lse = m + ((row[0] - m).exp() + (row[1] - m).exp()).ln();
        let y = usize::from(*l == Label::Bonafide);
        total -= row[y] - lse;
    }
    total / labels.len() as f64
}

fn loss_of(logits: &[f64], f: impl Fn(&mut Tape<f64>, Var) -> Var) -> f64 {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::new(vec![logits.len() / 2, 2], logits.to_vec()).unwrap());
    let lp = tape.log_softmax(z).unwrap();
    let loss = f(&mut tape, lp);
    tape.value(loss).values()[0]
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let label = |b: bool| if b { Label::Bonafide } else { Label::Spoof };
    let (mut wce_gap, mut endpoint_fail, mut symmetry_fail) = (0.0f64, 0, 0);
    for trial in 0..500 {
        let n = rng.random_range(1..20);
        let z: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-8.0..8.0)).collect();
        let y: Vec<Label> = (0..n).map(|_| label(rng.random())).collect();
        let p: Vec<Label> = (0..n).map(|_| label(rng.random())).collect();
        let wce = loss_of(&z, |t, lp| wce_loss(t, lp, &y, &ClassWeights([1.0, 1.0])).unwrap());
        wce_gap = wce_gap.max((wce - reference_ce(&z, &y)).abs());

        let ce_y = loss_of(&z, |t, lp| cross_entropy(t, lp, &y).unwrap());
        let ce_p = loss_of(&z, |t, lp| cross_entropy(t, lp, &p).unwrap());
        let at_one = loss_of(&z, |t, lp| mixup_loss(t, lp, &y, &p, 1.0).unwrap());
        let at_zero = loss_of(&z, |t, lp| mixup_loss(t, lp, &y, &p, 0.0).unwrap());
        endpoint_fail += usize::from(at_one != ce_y || at_zero != ce_p);

        // Exactly representable complements: λ in [0.5, 1] or a dyadic fraction.
        let lambda = if trial % 2 == 0 {
            rng.random_range(0.5..=1.0)
        } else {
            f64::from(rng.random_range(0..=1024u32)) / 1024.0
        };
        let a = loss_of(&z, |t, lp| mixup_loss(t, lp, &y, &p, lambda).unwrap());
        let b = loss_of(&z, |t, lp| mixup_loss(t, lp, &p, &y, 1.0 - lambda).unwrap());
        symmetry_fail += usize::from(a != b);
    }
    Outcome::new(
        wce_gap <= 1e-12 && endpoint_fail == 0 && symmetry_fail == 0,
        format!(
            "500 batches: unit-weight WCE vs CE gap {wce_gap:.1e}, {endpoint_fail} endpoint and {symmetry_fail} symmetry mismatches"
        ),
    )
}

fn tssd(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tssd")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, n: &str, seed: &str) -> bool {
    tssd(&["synth", "--n", n, "--seed", seed, "--out", p(dir)]).status.success()
}

fn train_args(train: &Path, dev: &Path, out: &Path, extra: &[&str]) -> Vec<String> {
    let own = |path: std::path::PathBuf| path.to_string_lossy().into_owned();
    let mut args = vec![
        "train".to_string(),
        "--train-protocol".into(),
        own(train.join("protocol.txt")),
        "--train-audio".into(),
        own(train.join("wav")),
        "--dev-protocol".into(),
        own(dev.join("protocol.txt")),
        "--dev-audio".into(),
        own(dev.join("wav")),
        "--out".into(),
        own(out.to_path_buf()),
    ];
    args.extend(extra.iter().map(|a| a.to_string()));
    args
}

fn run_train(args: &[String]) -> std::process::Output {
    tssd(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn separability() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (train, dev, out) = (dir.path().join("train"), dir.path().join("dev"), dir.path().join("run"));
    if !synth(&train, "200", "11") || !synth(&dev, "100", "12") {
        return Outcome::new(false, "corpus synthesis failed");
    }
    let args = train_args(
        &train,
        &dev,
        &out,
        &["--stem-channels", "8", "--channels", "8,16,16", "--input-length", "16000", "--epochs", "30", "--lr", "3e-3", "--seed", "3"],
    );
    let run = run_train(&args);
    if !run.status.success() {
        return Outcome::new(false, format!("train failed: {}", String::from_utf8_lossy(&run.stderr)));
    }
    let stdout = String::from_utf8_lossy(&run.stdout);
    let best = stdout.lines().find_map(|l| l.strip_prefix("best ")).unwrap_or("");
    let eer: f64 = best
        .split_whitespace()
        .find_map(|f| f.strip_prefix("dev_eer="))
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN);
    let elapsed = start.elapsed();
    Outcome::new(
        eer <= 0.05 && elapsed < Duration::from_secs(15 * 60),
        format!("200/100 per class, 30 epochs at lr 3e-3, best {best}, target dev EER <= 0.05 within 15 min"),
    )
}

fn length_trace() -> Outcome {
    let mut traces = Vec::new();
    for (m, expected) in [(4, vec![96_000, 24_000, 6_000, 1_500, 375]), (5, vec![96_000, 24_000, 6_000, 1_500, 375, 93])] {
        let model: Model<f32> = Model::build(&ModelConfig::res(m).unwrap(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[1, 1, 96_000], |i| ((i as f32) * 0.01).sin() * 0.5));
        let pass = model.forward_tape(&mut tape, x).unwrap();
        let pooled_only = pass.time_trace.windows(2).all(|w| w[1] == w[0] / 4);
        if pass.time_trace != expected || !pooled_only {
            return Outcome::new(false, format!("m={m}: trace {:?}", pass.time_trace));
        }
        traces.push(format!("m={m}: {:?}", pass.time_trace));
    }
    Outcome::new(true, format!("global pooling sees 375 (m=4) and 93 (m=5) steps; {}", traces.join(", ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (train, dev) = (dir.path().join("train"), dir.path().join("dev"));
    if !synth(&train, "8", "21") || !synth(&dev, "4", "22") {
        return Outcome::new(false, "corpus synthesis failed");
    }
    let mut artifacts = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let args = train_args(
            &train,
            &dev,
            &out,
            &[
                "--stem-channels", "4", "--channels", "4,8", "--input-length", "4000", "--epochs", "3",
                "--batch-size", "4", "--mixup-alpha", "0.5", "--seed", "17",
            ],
        );
        let o = run_train(&args);
        if !o.status.success() {
            return Outcome::new(false, format!("train failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        artifacts.push((fs::read(out.join("train.log")).unwrap(), fs::read(out.join("best.tssd")).unwrap()));
    }
    let same = artifacts[0] == artifacts[1];
    Outcome::new(same, "two seeded train runs: epoch logs and checkpoints byte-identical")
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);

    let mut cfg = ModelConfig::with_channels(Family::Inc, vec![4, 4], 2);
    cfg.stem_channels = 4;
    cfg.input_length = 256;
    let utts: Vec<Utterance> = (0..12)
        .map(|i| Utterance {
            id: format!("u{i}"),
            samples: (0..300).map(|_| rng.random_range(-0.5f32..0.5)).collect(),
            label: if i % 2 == 0 { Label::Bonafide } else { Label::Spoof },
        })
        .collect();
    let source = MemorySource::new(utts, 256);
    let train_cfg = TrainConfig {
        batch_size: 4,
        max_epochs: 2,
        loss: LossMode::Weighted,
        ..TrainConfig::default()
    };
    let model = Model::build(&cfg, &mut rng).unwrap();
    let outcome = fit(model, &source, &source, &train_cfg, &mut rng, |_| {}).unwrap();
    let ck_path = dir.path().join("m.tssd");
    save_checkpoint(&outcome.best.model, outcome.best.optimizer.as_ref(), &ck_path).unwrap();
    let back = load_checkpoint(&ck_path).unwrap();
    let model_ok = back.model == outcome.best.model;
    let optimizer_ok = back.optimizer.is_some() && back.optimizer == outcome.best.optimizer;

    let set = ScoreSet {
        entries: (0..1000)
            .map(|i| ScoreEntry {
                id: format!("s{i}"),
                score: f64::from_bits(rng.random::<u64>() >> 2) * if i % 2 == 0 { 1.0 } else { -1.0 },
                label: Label::Unknown,
            })
            .collect(),
    };
    let score_path = dir.path().join("scores.txt");
    write_scores(&set, &score_path).unwrap();
    let read = read_scores(&score_path, None).unwrap().set;
    let scores_ok = read.entries.len() == set.entries.len()
        && read
            .entries
            .iter()
            .zip(&set.entries)
            .all(|(a, b)| a.id == b.id && a.score.to_bits() == b.score.to_bits());

    let samples: Vec<f32> = (0..48_000).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
    let wav_path = dir.path().join("x.wav");
    write_wav(&wav_path, &samples).unwrap();
    let wav = read_wav(&wav_path).unwrap().samples;
    let wav_err = wav.iter().zip(&samples).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    let wav_ok = wav.len() == samples.len() && wav_err <= 1.0 / 32768.0;

    Outcome::new(
        model_ok && optimizer_ok && scores_ok && wav_ok,
        format!(
            "checkpoint model bit-exact {model_ok}, optimizer bit-exact {optimizer_ok}, scores bit-exact {scores_ok}, wav max error {wav_err:.2e} <= 1/32768"
        ),
    )
}

fn cli_usage() -> Outcome {
    let cases: [&[&str]; 3] = [&["bogus"], &["synth", "--n", "0", "--out", "x"], &["params", "--family", "gru"]];
    let codes: Vec<Option<i32>> = cases.iter().map(|a| tssd(a).status.code()).collect();
    let params = String::from_utf8_lossy(&tssd(&["params"]).stdout).trim().to_string();
    Outcome::new(
        codes.iter().all(|c| *c == Some(2)) && params == "350658",
        format!("usage errors exit 2 ({codes:?}), default params prints {params}"),
    )
}
