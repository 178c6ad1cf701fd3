//! Acceptance suite. Prints one PASS/FAIL line per criterion. It exits
//! non-zero when the pipeline itself fails, or on any failed criterion when
//! `ACCEPTANCE_STRICT` is set.
//!
//! Criteria 1-3 and 10 run the full pipeline twice on `configs/desk.json`
//! (override with `ACCEPTANCE_CONFIG`). Criterion 4 reuses the trained
//! general model and eval n-best lists of the first run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use domain_rescore::corpus::{
    build_vocabulary, generate_corpus, lexicon::default_generator_config, select, split_corpus, SlotSpan, SlotType,
    Split, Vocabulary,
};
use domain_rescore::firstpass::NBestList;
use domain_rescore::io::{read_json, read_jsonl};
use domain_rescore::metrics::{align, oracle_wer, utterance_slot_wer, WerBreakdown};
use domain_rescore::neural_lm::{
    perplexity, train_general, LmLoss, NeuralLm, NlmTrainConfig, NoiseDistribution, Objective,
};
use domain_rescore::nn::{gradient_check, softmax_cross_entropy, softmax_rows, Affine, EarlyStopConfig, Matrix};
use domain_rescore::rescorer::{push_forward, push_forward_rescore, PrefixLattice, PushForwardStats, RescoreConfig};
use domain_rescore::weight_opt::{em_mixture_weights, sa_optimize, EmConfig, SaConfig, PROBES};
use domain_rescore_cli::config::ExperimentConfig;
use domain_rescore_cli::report::{Report, SLOT_SPLITS, WER_SPLITS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;
const RUNTIME_LIMIT_SECS: f64 = 30.0 * 60.0;
const DOMAINS: [&str; 3] = ["nav", "music", "shop"];
const SYSTEMS: [&str; 6] = [
    "LM_Genrl",
    "LM_Nav",
    "LM_Music",
    "LM_Shop",
    "DomainAware",
    "AdaptationBaseline",
];

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

struct DeskRun {
    dir: PathBuf,
    config: ExperimentConfig,
    report: Report,
    stage_secs: BTreeMap<String, f64>,
    wall_secs: f64,
}

/// Relative paths are taken from the workspace root, since cargo runs tests
/// in the package directory.
fn config_path() -> PathBuf {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    std::env::var_os("ACCEPTANCE_CONFIG")
        .map(|p| root.join(p))
        .unwrap_or_else(|| root.join("configs/desk.json"))
}

/// Stage durations from the `[stage  12.3s] ...` log lines.
fn stage_times(stderr: &str) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for line in stderr.lines() {
        let Some(rest) = line.strip_prefix('[') else { continue };
        let Some((head, _)) = rest.split_once(']') else {
            continue;
        };
        let mut parts = head.split_whitespace();
        if let (Some(stage), Some(secs)) = (parts.next(), parts.next()) {
            if let Ok(s) = secs.trim_end_matches('s').parse::<f64>() {
                *out.entry(stage.to_string()).or_insert(0.0) += s;
            }
        }
    }
    out
}

fn run_all(dir: &Path) -> Result<DeskRun, String> {
    let config_file = config_path();
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_domain-rescore"))
        .arg("--config")
        .arg(&config_file)
        .arg("--out")
        .arg(dir)
        .arg("run-all")
        .output()
        .map_err(|e| format!("cannot start pipeline: {e}"))?;
    let wall_secs = start.elapsed().as_secs_f64();
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    eprint!("{stderr}");
    if !out.status.success() {
        return Err(format!("run-all failed: {}", stderr.lines().last().unwrap_or("")));
    }
    let report: Report = read_json(&dir.join("reports/report.json")).map_err(|e| e.to_string())?;
    let config = ExperimentConfig::load(&config_file).map_err(|e| e.to_string())?;
    Ok(DeskRun {
        dir: dir.to_path_buf(),
        config,
        report,
        stage_secs: stage_times(&stderr),
        wall_secs,
    })
}

fn secs(run: &DeskRun, stages: &[&str]) -> f64 {
    stages
        .iter()
        .map(|s| run.stage_secs.get(*s).copied().unwrap_or(0.0))
        .sum()
}

fn criterion_1(run: &DeskRun) -> Outcome {
    let ppl = &run.report.ppl;
    let vocab: Vocabulary = read_json(&run.dir.join("vocab.json")).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for d in DOMAINS {
        let own = ppl.relative[d][d];
        let other = ppl.relative[d]["other"];
        ensure(own <= -10.0, format!("LM_{d} on {d}: {own:+.1}% (need <= -10%)"))?;
        ensure(other > 0.0, format!("LM_{d} on other: {other:+.1}% (need > 0)"))?;
        notes.push(format!("{d} {own:+.1}%/other {other:+.1}%"));
    }
    let train = secs(run, &["train-nlm", "finetune-nlm"]);
    ensure(
        train <= RUNTIME_LIMIT_SECS,
        format!("NLM training took {train:.0}s (limit {RUNTIME_LIMIT_SECS:.0}s)"),
    )?;
    Ok(format!(
        "{}; {} utts/domain, vocab {}, H={}, training {train:.0}s",
        notes.join(", "),
        run.config.corpus.utterances_per_domain,
        vocab.len(),
        run.config.nlm.hidden
    ))
}

fn criterion_2(run: &DeskRun) -> Outcome {
    let c = &run.report.classifier;
    ensure(
        c.accuracy_max_class >= 0.90,
        format!("max-class accuracy {:.4} < 0.90", c.accuracy_max_class),
    )?;
    for row in &c.classes {
        ensure(
            row.precision >= 0.85 && row.recall >= 0.85,
            format!(
                "{}: P {:.4} R {:.4} (need >= 0.85)",
                row.class, row.precision, row.recall
            ),
        )?;
    }
    ensure(
        (c.threshold - 0.85).abs() < 1e-12,
        format!("routing threshold is {}, expected 0.85", c.threshold),
    )?;
    ensure(
        c.accuracy_thresholded <= c.accuracy_max_class,
        format!(
            "thresholded accuracy {:.4} > max-class {:.4}",
            c.accuracy_thresholded, c.accuracy_max_class
        ),
    )?;
    let min_pr = c
        .classes
        .iter()
        .map(|r| r.precision.min(r.recall))
        .fold(f64::INFINITY, f64::min);
    Ok(format!(
        "max-class {:.4}, thresholded {:.4}, min P/R {:.4}",
        c.accuracy_max_class, c.accuracy_thresholded, min_pr
    ))
}

fn criterion_3(run: &DeskRun) -> Outcome {
    let r = &run.report;
    let row = |name: &str| r.row(name).ok_or_else(|| format!("report has no {name} row"));
    let fp_all = r.wer.firstpass_wer["all"];
    // (a)
    for name in SYSTEMS {
        let w = row(name)?.wer["all"];
        ensure(w <= fp_all, format!("(a) {name} WER {w:.5} > first pass {fp_all:.5}"))?;
    }
    // (b) and (c)
    let general = row("LM_Genrl")?;
    let aware = row("DomainAware")?;
    for d in DOMAINS {
        let (g, a) = (general.wer[d], aware.wer[d]);
        ensure(a <= g, format!("(b) DomainAware WER on {d} {a:.5} > general {g:.5}"))?;
    }
    let (g, a) = (general.wer["other"], aware.wer["other"]);
    let other_rel = if g > 0.0 {
        100.0 * (a - g) / g
    } else if a > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    ensure(
        other_rel <= 0.5,
        format!("(b) DomainAware on other {other_rel:+.2}% vs general (limit +0.5%)"),
    )?;
    for d in SLOT_SPLITS {
        let (g, a) = (general.slot_wer[d], aware.slot_wer[d]);
        ensure(
            a <= g,
            format!("(c) DomainAware SlotWER on {d} {a:.5} > general {g:.5}"),
        )?;
    }
    // (d)
    let oracle = row("Oracle")?;
    for split in WER_SPLITS {
        let o = oracle.wer[split];
        let fp = r.wer.firstpass_wer[split];
        ensure(
            o < fp,
            format!("(d) oracle {o:.5} not below first pass {fp:.5} on {split}"),
        )?;
        for name in SYSTEMS {
            let w = row(name)?.wer[split];
            ensure(o < w, format!("(d) oracle {o:.5} not below {name} {w:.5} on {split}"))?;
        }
    }
    let rescoring = secs(run, &["optimize-weights", "rescore", "evaluate", "report"]);
    ensure(
        rescoring <= RUNTIME_LIMIT_SECS,
        format!("optimize+rescore+evaluate took {rescoring:.0}s (limit {RUNTIME_LIMIT_SECS:.0}s)"),
    )?;
    let gaps: Vec<String> = DOMAINS
        .iter()
        .map(|d| {
            format!(
                "{d} {:+.1}%/{:+.1}%",
                aware.wer_delta_vs_general[*d], aware.slot_wer_delta_vs_general[*d]
            )
        })
        .collect();
    Ok(format!(
        "first pass {:.2}%, general {:.2}%, domain-aware {:.2}%, oracle {:.2}%; aware vs general WER/SlotWER {}; other {other_rel:+.2}%; {rescoring:.0}s",
        100.0 * fp_all,
        100.0 * general.wer["all"],
        100.0 * aware.wer["all"],
        100.0 * oracle.wer["all"],
        gaps.join(", ")
    ))
}

fn criterion_4(run: &DeskRun) -> Outcome {
    let vocab: Arc<Vocabulary> = Arc::new(read_json(&run.dir.join("vocab.json")).map_err(|e| e.to_string())?);
    let model = NeuralLm::load(&run.dir.join("models/nlm_genrl.drtf"), vocab.clone()).map_err(|e| e.to_string())?;
    let mut lists: Vec<NBestList> = read_jsonl(&run.dir.join("nbest/eval.jsonl")).map_err(|e| e.to_string())?;
    ensure(lists.len() >= 500, format!("only {} eval n-best lists", lists.len()))?;
    lists.truncate(500);
    let lattices: Vec<PrefixLattice> = lists
        .iter()
        .map(|l| PrefixLattice::build(&l.hyps.iter().map(|h| h.tokens.clone()).collect::<Vec<_>>()))
        .collect();
    let refs: Vec<&PrefixLattice> = lattices.iter().collect();
    let mut stats = PushForwardStats::default();
    let trie = push_forward(&model, &vocab, &refs, &mut stats).map_err(|e| e.to_string())?;
    let mut max_diff: f64 = 0.0;
    let mut hyps = 0;
    for (list, per_hyp) in lists.iter().zip(&trie) {
        for (h, scores) in list.hyps.iter().zip(per_hyp) {
            let flat = model.score_sequence(&vocab.encode(&h.tokens));
            ensure(flat.len() == scores.len(), "trie and flat score lengths differ")?;
            for (a, b) in flat.iter().zip(scores) {
                max_diff = max_diff.max((a - b).abs());
            }
            hyps += 1;
        }
    }
    ensure(max_diff <= 1e-10, format!("trie vs flat max diff {max_diff:e}"))?;
    let config = RescoreConfig {
        lambda: 1.0,
        gamma: run.config.channel.lm_weight,
        ..Default::default()
    };
    for list in &lists {
        let ranked = push_forward_rescore(list, &model, &vocab, &config, &mut stats).map_err(|e| e.to_string())?;
        let same = ranked.iter().zip(&list.hyps).all(|(r, h)| r.tokens == h.tokens);
        ensure(
            same && ranked.len() == list.hyps.len(),
            format!("lambda=1 reorders list {}", list.id),
        )?;
    }
    Ok(format!(
        "500 utterances, {hyps} hypotheses, max |trie - flat| {max_diff:.1e}; lambda=1 keeps first-pass order"
    ))
}

fn brute_force(r: &[u8], h: &[u8]) -> usize {
    match (r.split_first(), h.split_first()) {
        (None, _) => h.len(),
        (_, None) => r.len(),
        (Some((a, rr)), Some((b, hr))) => {
            let keep = brute_force(rr, hr) + usize::from(a != b);
            let del = brute_force(rr, h) + 1;
            let ins = brute_force(r, hr) + 1;
            keep.min(del).min(ins)
        }
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let r: Vec<u8> = (0..rng.gen_range(0..=6)).map(|_| rng.gen_range(0..3)).collect();
        let h: Vec<u8> = (0..rng.gen_range(0..=6)).map(|_| rng.gen_range(0..3)).collect();
        let (a, b) = (align(&r, &h).cost(), brute_force(&r, &h));
        ensure(a == b, format!("alignment {a} vs exhaustive {b} on {r:?} / {h:?}"))?;
    }

    let reference = words("play golden heart by queen");
    let spans = [
        SlotSpan {
            start: 1,
            end: 3,
            slot: SlotType::SongName,
        },
        SlotSpan {
            start: 4,
            end: 5,
            slot: SlotType::ArtistName,
        },
    ];
    // (hypothesis, slot errors); three slot reference tokens throughout.
    let cases = [
        ("play golden heart by queen", 0),
        ("play golden hurt by queen", 1),
        ("play heart by queen", 1),
        ("play golden blue heart by queen", 1),
        ("play golden heart by the queen", 0),
        ("golden heart to queen", 0),
        ("play golden heart by kings", 1),
        ("play olden hurt by kings", 3),
    ];
    for (hyp, errors) in cases {
        let b = utterance_slot_wer(&reference, &words(hyp), &spans);
        ensure(
            b.errors() == errors && b.ref_tokens == 3,
            format!(
                "SlotWER of '{hyp}': {}/{} (expected {errors}/3)",
                b.errors(),
                b.ref_tokens
            ),
        )?;
    }
    let none = utterance_slot_wer(&reference, &words("play"), &[]);
    ensure(none.ref_tokens == 0 && none.rate().is_none(), "no slots must give 0/0")?;
    let pooled: WerBreakdown = [
        utterance_slot_wer(&reference, &words("play golden hurt by queen"), &spans),
        none,
    ]
    .into_iter()
    .sum();
    ensure(
        pooled.errors() == 1 && pooled.ref_tokens == 3,
        "utterances without slots must not change the pooled SlotWER",
    )?;

    for _ in 0..100 {
        let r: Vec<u8> = (0..rng.gen_range(1..=8)).map(|_| rng.gen_range(0..4)).collect();
        let hyps: Vec<Vec<u8>> = (0..10)
            .map(|_| (0..rng.gen_range(0..=9)).map(|_| rng.gen_range(0..4)).collect())
            .collect();
        let mut prev = usize::MAX;
        for n in 1..=hyps.len() {
            let e = oracle_wer(&[(r.clone(), hyps[..n].to_vec())])
                .map_err(|e| e.to_string())?
                .errors();
            ensure(e <= prev, format!("oracle errors rose from {prev} to {e} at N={n}"))?;
            prev = e;
        }
    }
    Ok("1000 alignment pairs, 8 SlotWER hand cases + 0/0, 100 oracle lists".into())
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn tiny_lm(rng: &mut ChaCha8Rng, seed: u64) -> (NeuralLm, Vec<Vec<usize>>) {
    let v = rng.gen_range(3..=7);
    let vocab = Vocabulary::from_tokens((1..v).map(|i| format!("w{i}")), v).expect("vocab");
    let lm = NeuralLm::new(Arc::new(vocab), rng.gen_range(2..=5), rng.gen_range(2..=5), 0.5, seed);
    let sentences = (0..rng.gen_range(1..=3))
        .map(|_| (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(0..v)).collect())
        .collect();
    (lm, sentences)
}

fn criterion_6() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..GRAD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + seed);
        let (n, i, o) = (rng.gen_range(1..=5), rng.gen_range(1..=8), rng.gen_range(2..=8));
        let mut layer = Affine::new(i, o, 0.5, &mut rng);
        layer.bias.value = random_matrix(&mut rng, 1, o);
        let x = random_matrix(&mut rng, n, i);
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..o)).collect();
        let report = gradient_check(
            &mut layer,
            |l: &mut Affine| {
                let (loss, d) = softmax_cross_entropy(&l.forward(&x), &targets);
                l.backward(&x, &d);
                loss
            },
            GRAD_TOL,
            usize::MAX,
        );
        ensure(
            report.passed(),
            format!("affine/softmax-CE seed {seed}: {}", report.max_rel_error),
        )?;
        worst = worst.max(report.max_rel_error);

        // Embedding -> LSTM x2 -> affine, under softmax-CE and NCE.
        let (mut lm, sentences) = tiny_lm(&mut rng, seed);
        let refs: Vec<&[usize]> = sentences.iter().map(Vec::as_slice).collect();
        let report = gradient_check(
            &mut lm,
            |m: &mut NeuralLm| m.batch_loss::<ChaCha8Rng>(&refs, Objective::Softmax).expect("loss"),
            GRAD_TOL,
            usize::MAX,
        );
        ensure(
            report.passed(),
            format!("LM softmax seed {seed}: {}", report.max_rel_error),
        )?;
        worst = worst.max(report.max_rel_error);

        let all: Vec<Vec<usize>> = (0..lm.vocab().len()).map(|i| vec![i]).collect();
        let noise = NoiseDistribution::unigram(&all, lm.output_size()).expect("noise");
        let report = gradient_check(
            &mut lm,
            |m: &mut NeuralLm| {
                let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
                m.batch_loss(
                    &refs,
                    Objective::Nce {
                        noise: &noise,
                        samples: 5,
                        rng: &mut noise_rng,
                    },
                )
                .expect("loss")
            },
            GRAD_TOL,
            usize::MAX,
        );
        ensure(report.passed(), format!("LM NCE seed {seed}: {}", report.max_rel_error))?;
        worst = worst.max(report.max_rel_error);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut max_dev: f64 = 0.0;
    for _ in 0..200 {
        let scale = 10f64.powi(rng.gen_range(-2..=3));
        let cols = rng.gen_range(1..=50);
        let logits = random_matrix(&mut rng, 4, cols) * scale;
        for row in softmax_rows(&logits).rows() {
            max_dev = max_dev.max((row.sum() - 1.0).abs());
        }
    }
    ensure(max_dev <= 1e-12, format!("softmax row sums deviate by {max_dev:e}"))?;
    Ok(format!(
        "{GRAD_SEEDS} seeds x (affine+softmax-CE, LM softmax, LM NCE), worst rel error {worst:.1e}; softmax sums within {max_dev:.1e}"
    ))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let k = rng.gen_range(2..=5);
        let t = rng.gen_range(1..=30);
        let probs: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..t).map(|_| rng.gen_range(1e-6..1.0)).collect())
            .collect();
        let r = em_mixture_weights(&probs, &EmConfig::default()).map_err(|e| e.to_string())?;
        for w in r.log_likelihood.windows(2) {
            ensure(
                w[1] >= w[0] - 1e-12,
                format!("log-likelihood fell {} -> {}", w[0], w[1]),
            )?;
        }
        let sum: f64 = r.weights.iter().sum();
        ensure(
            r.weights.iter().all(|&w| w >= 0.0) && (sum - 1.0).abs() < 1e-12,
            format!("weights off the simplex: {:?}", r.weights),
        )?;
    }
    let one = em_mixture_weights(
        &[vec![0.4], vec![0.1]],
        &EmConfig {
            max_iterations: 1,
            tolerance: 1e-6,
        },
    )
    .map_err(|e| e.to_string())?;
    ensure(
        one.weights == vec![0.8, 0.2],
        format!("one step gave {:?}", one.weights),
    )?;
    Ok("100 instances monotone, on simplex; (0.4, 0.1) -> (0.8, 0.2)".into())
}

fn criterion_8() -> Outcome {
    let target = (0.3, 1.2);
    let quadratic = |l: f64, g: f64| (l - target.0).powi(2) + (g - target.1).powi(2);
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let config = SaConfig {
            seed,
            ..Default::default()
        };
        let a = sa_optimize(quadratic, &config).map_err(|e| e.to_string())?;
        let b = sa_optimize(quadratic, &config).map_err(|e| e.to_string())?;
        ensure(a == b, format!("seed {seed}: two runs differ"))?;
        let err = (a.best.lambda - target.0).abs().max((a.best.gamma - target.1).abs());
        ensure(
            err <= 0.05,
            format!("seed {seed}: best {:?} is {err:.3} from the minimum", a.best),
        )?;
        worst = worst.max(err);
        for (l, g) in PROBES {
            ensure(
                a.best_value <= quadratic(l, g),
                format!("seed {seed}: best above probe ({l}, {g})"),
            )?;
        }
        for (_, v) in &a.probes {
            ensure(a.best_value <= *v, format!("seed {seed}: best above a recorded probe"))?;
        }
    }
    Ok(format!("10 seeds, worst L-inf error {worst:.4}, deterministic"))
}

fn criterion_9() -> Outcome {
    let corpus = split_corpus(
        &generate_corpus(&default_generator_config(17, 150)).map_err(|e| e.to_string())?,
        17,
    )
    .map_err(|e| e.to_string())?;
    let vocab = Arc::new(build_vocabulary(select(&corpus, Some(Split::Train), None), 150).map_err(|e| e.to_string())?);
    let ids = |split| -> Vec<Vec<usize>> {
        select(&corpus, Some(split), None)
            .iter()
            .map(|u| vocab.encode(&u.tokens))
            .collect()
    };
    let (train, dev) = (ids(Split::Train), ids(Split::Dev));
    let config = |loss, noise_samples| NlmTrainConfig {
        embedding_dim: 16,
        hidden: 32,
        learning_rate: 0.01,
        epochs: 6,
        loss,
        noise_samples,
        early_stop: EarlyStopConfig {
            patience: 2,
            min_delta: 1e-4,
        },
        ..Default::default()
    };
    let (softmax, _) =
        train_general(vocab.clone(), &train, &dev, &config(LmLoss::Softmax, 0)).map_err(|e| e.to_string())?;
    let (nce, _) = train_general(vocab.clone(), &train, &dev, &config(LmLoss::Nce, 20)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut total = 0.0;
    for _ in 0..100 {
        let s = &dev[rng.gen_range(0..dev.len())];
        let cut = rng.gen_range(0..=s.len());
        total += nce.log_partition(&s[..cut]).abs();
    }
    let mean_abs = total / 100.0;
    let p_sm = perplexity(&softmax, &dev).map_err(|e| e.to_string())?;
    let p_nce = perplexity(&nce, &dev).map_err(|e| e.to_string())?;
    let gap = (p_nce - p_sm).abs() / p_sm;
    ensure(mean_abs < 0.5, format!("mean |log Z| {mean_abs:.3} >= 0.5"))?;
    ensure(
        gap < 0.15,
        format!("dev PPL gap {:.1}% (softmax {p_sm:.2}, NCE {p_nce:.2})", 100.0 * gap),
    )?;
    Ok(format!(
        "mean |log Z| {mean_abs:.3}; dev PPL softmax {p_sm:.2}, NCE k=20 {p_nce:.2} (gap {:.1}%)",
        100.0 * gap
    ))
}

fn criterion_10(a: &DeskRun, b: &DeskRun) -> Outcome {
    for f in ["reports/report.json", "reports/report.txt"] {
        let x = std::fs::read(a.dir.join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.dir.join(f)).map_err(|e| e.to_string())?;
        ensure(x == y, format!("{f} differs between runs"))?;
    }
    Ok(format!(
        "report.json and report.txt identical (runs took {:.0}s and {:.0}s)",
        a.wall_secs, b.wall_secs
    ))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let dirs = (tempfile::tempdir(), tempfile::tempdir());
    let (Ok(dir_a), Ok(dir_b)) = dirs else {
        eprintln!("cannot create temporary directories");
        return ExitCode::FAILURE;
    };
    let first = run_all(dir_a.path());
    let second = first.as_ref().ok().map(|_| run_all(dir_b.path()));
    let pipeline = |f: &dyn Fn(&DeskRun) -> Outcome| match &first {
        Ok(run) => f(run),
        Err(e) => Err(e.clone()),
    };
    results.push((1, pipeline(&criterion_1)));
    results.push((2, pipeline(&criterion_2)));
    results.push((3, pipeline(&criterion_3)));
    results.push((4, pipeline(&criterion_4)));
    results.push((5, criterion_5()));
    results.push((6, criterion_6()));
    results.push((7, criterion_7()));
    results.push((8, criterion_8()));
    results.push((9, criterion_9()));
    results.push((
        10,
        match (&first, &second) {
            (Ok(a), Some(Ok(b))) => criterion_10(a, b),
            (Err(e), _) | (_, Some(Err(e))) => Err(e.clone()),
            _ => Err("second run did not start".into()),
        },
    ));

    let mut failed = 0;
    for (id, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {id:>2}: PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2}: FAIL  {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    let strict = std::env::var_os("ACCEPTANCE_STRICT").is_some();
    if first.is_err() || (strict && failed > 0) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
