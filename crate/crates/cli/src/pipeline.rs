//! Pipeline stages. Each stage reads earlier artifacts from the output
//! directory, writes its own artifacts and a manifest next to each one.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use domain_rescore::classifier::{evaluate_classifier, train_classifier, ClassifierReport, DomainClassifier};
use domain_rescore::corpus::{build_vocabulary, generate_corpus, read_corpus, select, split_corpus, write_corpus};
use domain_rescore::corpus::{Domain, Split, Utterance, Vocabulary};
use domain_rescore::firstpass::{simulate_corpus, NBestList};
use domain_rescore::io::{read_json, read_jsonl, write_json, write_jsonl};
use domain_rescore::metrics::{oracle_choice, utterance_slot_wer, utterance_wer, WerBreakdown};
use domain_rescore::neural_lm::{finetune, perplexity, train_general, NeuralLm, NoiseDistribution};
use domain_rescore::ngram::{train_kneser_ney, NGramModel};
use domain_rescore::rescorer::{best_index, score_lists, ModelBank, PushForwardStats, RescoreConfig, RescoreRecord};
use domain_rescore::rescorer::{ScoredList, System};
use domain_rescore::weight_opt::{sa_optimize, GridMemo, SaObjective};

use crate::config::{ExperimentConfig, WeightTuning};
use crate::manifest::{input_hash, manifest_path, relative, sha256_file, Manifest};
use crate::report::{
    build_report, render_text, split_key, Evaluation, OptimizerReport, Rate, SplitMetrics, SystemEvaluation,
    TuningOutcome, PPL_COLUMNS, WER_SPLITS,
};

/// Grid resolution of the memoized rescoring objective.
const MEMO_STEP: f64 = 1e-3;

pub const STAGES: [&str; 10] = [
    "gen-corpus",
    "train-ngram",
    "train-nlm",
    "finetune-nlm",
    "train-classifier",
    "simulate-nbest",
    "optimize-weights",
    "rescore",
    "evaluate",
    "report",
];

pub struct Workspace {
    pub config: ExperimentConfig,
    pub root: PathBuf,
    /// Allow replacing artifacts that already exist.
    pub force: bool,
}

fn log(stage: &str, start: Instant, msg: impl AsRef<str>) {
    eprintln!("[{stage} {:7.1}s] {}", start.elapsed().as_secs_f64(), msg.as_ref());
}

impl Workspace {
    pub fn new(config: ExperimentConfig, force: bool) -> Result<Workspace> {
        config.validate()?;
        let root = config.out_dir.clone();
        Ok(Workspace { config, root, force })
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.path(&self.config.paths.corpus)
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.path(&self.config.paths.vocab)
    }

    pub fn ngram_path(&self) -> PathBuf {
        self.path(&self.config.paths.models).join("ngram.json")
    }

    /// `tag` is `genrl` or a domain tag.
    pub fn nlm_path(&self, tag: &str) -> PathBuf {
        self.path(&self.config.paths.models).join(format!("nlm_{tag}.drtf"))
    }

    pub fn classifier_path(&self) -> PathBuf {
        self.path(&self.config.paths.models).join("classifier.drtf")
    }

    pub fn nbest_path(&self, split: Split) -> PathBuf {
        let name = match split {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        };
        self.path(&self.config.paths.nbest).join(format!("{name}.jsonl"))
    }

    pub fn optimizer_path(&self, system: System) -> PathBuf {
        self.path(&self.config.paths.reports)
            .join(format!("optimizer_{}.json", system.tag()))
    }

    pub fn rescore_path(&self, system: System) -> PathBuf {
        self.path(&self.config.paths.rescore)
            .join(format!("{}.jsonl", system.tag()))
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.path(&self.config.paths.reports).join(name)
    }

    fn rel(&self, path: &Path) -> String {
        relative(&self.root, path)
    }

    fn require(&self, path: &Path, producer: &str) -> Result<()> {
        if !path.exists() {
            bail!(
                "missing artifact {} (produced by `{producer}`) under {}",
                self.rel(path),
                self.root.display()
            );
        }
        Ok(())
    }

    fn ensure_writable(&self, paths: &[PathBuf]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        for p in paths {
            if p.exists() {
                bail!(
                    "artifact {} already exists; artifacts are never overwritten (use --force or a fresh --out)",
                    self.rel(p)
                );
            }
        }
        Ok(())
    }

    /// Writes an artifact and its manifest.
    fn commit<S: Serialize>(
        &self,
        stage: &str,
        seed: u64,
        artifact: &Path,
        inputs: &[PathBuf],
        parent: Option<&Path>,
        settings: &S,
        write: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<()> {
        if let Some(dir) = artifact.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
        write(artifact).with_context(|| format!("writing {}", self.rel(artifact)))?;
        let manifest = Manifest {
            artifact: self.rel(artifact),
            sha256: sha256_file(artifact)?,
            stage: stage.into(),
            config_hash: self.config.hash(),
            seed,
            inputs: inputs
                .iter()
                .map(|p| input_hash(&self.root, p))
                .collect::<Result<_>>()?,
            parent: parent.map(|p| input_hash(&self.root, p)).transpose()?,
            settings: serde_json::to_value(settings)?,
        };
        write_json(&manifest_path(artifact), &manifest)?;
        Ok(())
    }

    fn load_corpus(&self) -> Result<Vec<Utterance>> {
        let path = self.corpus_path();
        self.require(&path, "gen-corpus")?;
        Ok(read_corpus(&path)?)
    }

    fn load_vocab(&self) -> Result<Arc<Vocabulary>> {
        let path = self.vocab_path();
        self.require(&path, "gen-corpus")?;
        Ok(Arc::new(read_json(&path)?))
    }

    fn load_nlm(&self, tag: &str, vocab: &Arc<Vocabulary>) -> Result<NeuralLm> {
        let path = self.nlm_path(tag);
        self.require(&path, if tag == "genrl" { "train-nlm" } else { "finetune-nlm" })?;
        Ok(NeuralLm::load(&path, vocab.clone())?)
    }

    fn load_bank(&self, vocab: &Arc<Vocabulary>) -> Result<ModelBank> {
        Ok(ModelBank::new(
            self.load_nlm("genrl", vocab)?,
            self.load_nlm(Domain::Music.tag(), vocab)?,
            self.load_nlm(Domain::Navigation.tag(), vocab)?,
            self.load_nlm(Domain::Shopping.tag(), vocab)?,
        )?)
    }

    fn bank_inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.nlm_path("genrl")];
        v.extend(Domain::ADAPTED.iter().map(|d| self.nlm_path(d.tag())));
        v
    }

    fn load_classifier(&self, vocab: &Arc<Vocabulary>) -> Result<DomainClassifier> {
        let path = self.classifier_path();
        self.require(&path, "train-classifier")?;
        Ok(DomainClassifier::load(&path, vocab.clone())?)
    }

    fn load_nbest(&self, split: Split) -> Result<Vec<NBestList>> {
        let path = self.nbest_path(split);
        self.require(&path, "simulate-nbest")?;
        Ok(read_jsonl(&path)?)
    }

    fn encode(vocab: &Vocabulary, utts: &[&Utterance]) -> Vec<Vec<usize>> {
        utts.iter().map(|u| vocab.encode(&u.tokens)).collect()
    }

    pub fn run_stage(&self, stage: &str, systems: Option<&[System]>) -> Result<()> {
        match stage {
            "gen-corpus" => self.gen_corpus(),
            "train-ngram" => self.train_ngram(),
            "train-nlm" => self.train_nlm(),
            "finetune-nlm" => self.finetune_nlm(),
            "train-classifier" => self.train_classifier(),
            "simulate-nbest" => self.simulate_nbest(),
            "optimize-weights" => self.optimize_weights(systems),
            "rescore" => self.rescore(systems),
            "evaluate" => self.evaluate(),
            "report" => self.report(),
            other => bail!("unknown stage {other}"),
        }
    }

    pub fn run_all(&self) -> Result<()> {
        for stage in STAGES {
            self.run_stage(stage, None)?;
        }
        Ok(())
    }

    pub fn gen_corpus(&self) -> Result<()> {
        let start = Instant::now();
        let (corpus_path, vocab_path) = (self.corpus_path(), self.vocab_path());
        self.ensure_writable(&[corpus_path.clone(), vocab_path.clone()])?;
        let generator = self.config.generator();
        let corpus = split_corpus(&generate_corpus(&generator)?, self.config.stage_seed("split"))?;
        let vocab = build_vocabulary(select(&corpus, Some(Split::Train), None), self.config.corpus.vocab_cap)?;
        let settings = serde_json::json!({
            "utterances_per_domain": generator.utterances_per_domain,
            "zipf_exponent": generator.zipf_exponent,
            "split_seed": self.config.stage_seed("split"),
        });
        self.commit("gen-corpus", generator.seed, &corpus_path, &[], None, &settings, |p| {
            Ok(write_corpus(p, &corpus)?)
        })?;
        let vocab_settings = serde_json::json!({ "cap": self.config.corpus.vocab_cap });
        self.commit(
            "gen-corpus",
            generator.seed,
            &vocab_path,
            std::slice::from_ref(&corpus_path),
            None,
            &vocab_settings,
            |p| Ok(write_json(p, &vocab)?),
        )?;
        log(
            "gen-corpus",
            start,
            format!("{} utterances, vocabulary {}", corpus.len(), vocab.len()),
        );
        Ok(())
    }

    pub fn train_ngram(&self) -> Result<()> {
        let start = Instant::now();
        let out = self.ngram_path();
        self.ensure_writable(std::slice::from_ref(&out))?;
        let corpus = self.load_corpus()?;
        let vocab = self.load_vocab()?;
        let train = Self::encode(&vocab, &select(&corpus, Some(Split::Train), None));
        let s = &self.config.ngram;
        let model = train_kneser_ney(&train, vocab.len(), s.order, s.discount)?;
        self.commit(
            "train-ngram",
            0,
            &out,
            &[self.corpus_path(), self.vocab_path()],
            None,
            s,
            |p| Ok(model.save(p)?),
        )?;
        log(
            "train-ngram",
            start,
            format!("order {} on {} sentences", s.order, train.len()),
        );
        Ok(())
    }

    pub fn train_nlm(&self) -> Result<()> {
        let start = Instant::now();
        let out = self.nlm_path("genrl");
        let history_path = self.report_path("nlm_genrl_history.json");
        self.ensure_writable(&[out.clone(), history_path.clone()])?;
        let corpus = self.load_corpus()?;
        let vocab = self.load_vocab()?;
        let train = Self::encode(&vocab, &select(&corpus, Some(Split::Train), None));
        let dev = Self::encode(&vocab, &select(&corpus, Some(Split::Dev), None));
        let config = self.config.nlm_config();
        let (model, history) = train_general(vocab.clone(), &train, &dev, &config)?;
        let inputs = [self.corpus_path(), self.vocab_path()];
        self.commit("train-nlm", config.seed, &out, &inputs, None, &config, |p| {
            Ok(model.save(p)?)
        })?;
        self.commit(
            "train-nlm",
            config.seed,
            &history_path,
            std::slice::from_ref(&out),
            None,
            &config,
            |p| Ok(write_json(p, &history)?),
        )?;
        log(
            "train-nlm",
            start,
            format!(
                "dev ppl {:.2} -> {:.2} after {} epochs",
                history.initial_dev_ppl,
                history.best_dev_ppl,
                history.epochs.len()
            ),
        );
        Ok(())
    }

    pub fn finetune_nlm(&self) -> Result<()> {
        let start = Instant::now();
        let outs: Vec<PathBuf> = Domain::ADAPTED
            .iter()
            .flat_map(|d| {
                [
                    self.nlm_path(d.tag()),
                    self.report_path(&format!("nlm_{}_history.json", d.tag())),
                ]
            })
            .collect();
        self.ensure_writable(&outs)?;
        let corpus = self.load_corpus()?;
        let vocab = self.load_vocab()?;
        let general = self.load_nlm("genrl", &vocab)?;
        let all_train = Self::encode(&vocab, &select(&corpus, Some(Split::Train), None));
        let noise = NoiseDistribution::unigram(&all_train, general.output_size())?;
        let jobs = self.config.jobs.max(1);
        let run = |domain: Domain| -> Result<()> {
            let train = Self::encode(&vocab, &select(&corpus, Some(Split::Train), Some(domain)));
            let dev = Self::encode(&vocab, &select(&corpus, Some(Split::Dev), Some(domain)));
            let config = self.config.finetune_config(domain);
            let (model, history) = finetune(&general, &train, &dev, Some(&noise), &config, &self.config.nlm)?;
            let out = self.nlm_path(domain.tag());
            let parent = self.nlm_path("genrl");
            let inputs = [self.corpus_path(), self.vocab_path()];
            self.commit(
                "finetune-nlm",
                config.seed,
                &out,
                &inputs,
                Some(&parent),
                &config,
                |p| Ok(model.save(p)?),
            )?;
            let hist = self.report_path(&format!("nlm_{}_history.json", domain.tag()));
            self.commit("finetune-nlm", config.seed, &hist, std::slice::from_ref(&out), None, &config, |p| {
                Ok(write_json(p, &history)?)
            })?;
            log(
                "finetune-nlm",
                start,
                format!(
                    "{}: dev ppl {:.2} -> {:.2} after {} epochs",
                    domain.tag(),
                    history.initial_dev_ppl,
                    history.best_dev_ppl,
                    history.epochs.len()
                ),
            );
            Ok(())
        };
        for group in Domain::ADAPTED.chunks(jobs) {
            if group.len() == 1 {
                run(group[0])?;
                continue;
            }
            std::thread::scope(|scope| -> Result<()> {
                let handles: Vec<_> = group.iter().map(|&d| scope.spawn(move || run(d))).collect();
                for h in handles {
                    h.join().map_err(|_| anyhow!("fine-tuning thread panicked"))??;
                }
                Ok(())
            })?;
        }
        Ok(())
    }

    pub fn train_classifier(&self) -> Result<()> {
        let start = Instant::now();
        let out = self.classifier_path();
        let report_path = self.report_path("classifier.json");
        let history_path = self.report_path("classifier_history.json");
        self.ensure_writable(&[out.clone(), report_path.clone(), history_path.clone()])?;
        let corpus = self.load_corpus()?;
        let vocab = self.load_vocab()?;
        let config = self.config.classifier_config();
        let train = select(&corpus, Some(Split::Train), None);
        let dev = select(&corpus, Some(Split::Dev), None);
        let (model, history) = train_classifier(vocab.clone(), &train, &dev, &config)?;
        let report = evaluate_classifier(&model, &select(&corpus, Some(Split::Eval), None), &self.config.routing)?;
        let inputs = [self.corpus_path(), self.vocab_path()];
        self.commit("train-classifier", config.seed, &out, &inputs, None, &config, |p| {
            Ok(model.save(p)?)
        })?;
        self.commit(
            "train-classifier",
            config.seed,
            &history_path,
            std::slice::from_ref(&out),
            None,
            &config,
            |p| Ok(write_json(p, &history)?),
        )?;
        let eval_inputs = [out.clone(), self.corpus_path()];
        self.commit(
            "train-classifier",
            config.seed,
            &report_path,
            &eval_inputs,
            None,
            &self.config.routing,
            |p| Ok(write_json(p, &report)?),
        )?;
        log(
            "train-classifier",
            start,
            format!(
                "eval accuracy {:.4}, thresholded {:.4}",
                report.accuracy, report.thresholded_accuracy
            ),
        );
        Ok(())
    }

    pub fn simulate_nbest(&self) -> Result<()> {
        let start = Instant::now();
        let outs = [self.nbest_path(Split::Dev), self.nbest_path(Split::Eval)];
        self.ensure_writable(&outs)?;
        let corpus = self.load_corpus()?;
        let vocab = self.load_vocab()?;
        let ngram_path = self.ngram_path();
        self.require(&ngram_path, "train-ngram")?;
        let ngram = NGramModel::load(&ngram_path)?;
        let channel = self.config.channel_config();
        let inputs = [self.corpus_path(), self.vocab_path(), ngram_path.clone()];
        for (split, out) in [Split::Dev, Split::Eval].into_iter().zip(&outs) {
            let lists = simulate_corpus(&select(&corpus, Some(split), None), &channel, &vocab, &ngram)?;
            self.commit("simulate-nbest", channel.seed, out, &inputs, None, &channel, |p| {
                Ok(write_jsonl(p, &lists)?)
            })?;
            let pairs: Vec<(&[String], &[String])> = lists
                .iter()
                .map(|l| (l.reference.as_slice(), l.hyps[0].tokens.as_slice()))
                .collect();
            let onebest: WerBreakdown = pairs.iter().map(|(r, h)| utterance_wer(r, h)).sum();
            log(
                "simulate-nbest",
                start,
                format!("{:?}: {} lists, one-best WER {:.4}", split, lists.len(), onebest.wer()),
            );
        }
        Ok(())
    }

    /// Push-forward scores of every list under every model, plus routing and
    /// EM weights.
    fn score(&self, split: Split, vocab: &Arc<Vocabulary>) -> Result<(Vec<ScoredList>, PushForwardStats)> {
        let lists = self.load_nbest(split)?;
        let bank = self.load_bank(vocab)?;
        let classifier = self.load_classifier(vocab)?;
        let mut stats = PushForwardStats::default();
        let scored = score_lists(
            &lists,
            &bank,
            &classifier,
            &self.config.routing,
            &self.config.em,
            &mut stats,
        )?;
        Ok((scored, stats))
    }

    fn weight_source(&self, system: System) -> System {
        match self.config.weight_tuning {
            WeightTuning::PerSystem => system,
            WeightTuning::Shared => System::General,
        }
    }

    pub fn optimize_weights(&self, systems: Option<&[System]>) -> Result<()> {
        let start = Instant::now();
        let mut targets: Vec<System> = systems.map(<[System]>::to_vec).unwrap_or_else(|| System::ALL.to_vec());
        if self.config.weight_tuning == WeightTuning::Shared {
            targets = vec![System::General];
        }
        let outs: Vec<PathBuf> = targets.iter().map(|&s| self.optimizer_path(s)).collect();
        self.ensure_writable(&outs)?;
        let corpus = self.load_corpus()?;
        let vocab = self.load_vocab()?;
        let (scored, _) = self.score(Split::Dev, &vocab)?;
        let by_id: HashMap<&str, &Utterance> = corpus.iter().map(|u| (u.id.as_str(), u)).collect();
        let tables = ErrorTables::new(&scored, &by_id)?;
        let mut inputs = vec![self.nbest_path(Split::Dev), self.corpus_path(), self.classifier_path()];
        inputs.extend(self.bank_inputs());
        for (system, out) in targets.iter().zip(&outs) {
            let lm_sp: Vec<Vec<f64>> = scored
                .iter()
                .map(|s| s.system_lm_sp(*system, self.config.rescore.unk_scale))
                .collect();
            let sa = self.config.sa_config(system.tag());
            let run = |objective: SaObjective| -> Result<(domain_rescore::weight_opt::SaResult, usize)> {
                let mut memo = GridMemo::new(|l, g| tables.objective(&scored, &lm_sp, l, g, objective), MEMO_STEP);
                let cfg = domain_rescore::weight_opt::SaConfig {
                    objective,
                    ..sa.clone()
                };
                let result = sa_optimize(|l, g| memo.call(l, g), &cfg)?;
                Ok((result, memo.evaluations))
            };
            let alternate_objective = match sa.objective {
                SaObjective::Wer => SaObjective::SlotWer,
                SaObjective::SlotWer => SaObjective::Wer,
            };
            let (main, evaluations) = run(sa.objective)?;
            let (alt, _) = run(alternate_objective)?;
            let (l, g) = (main.best.lambda, main.best.gamma);
            let (al, ag) = (alt.best.lambda, alt.best.gamma);
            let report = OptimizerReport {
                system: system.tag().into(),
                best_lambda: l,
                best_gamma: g,
                best_wer: main.best_value,
                objective: sa.objective,
                dev_wer: tables.objective(&scored, &lm_sp, l, g, SaObjective::Wer),
                dev_slot_wer: tables.objective(&scored, &lm_sp, l, g, SaObjective::SlotWer),
                probes: main.probes.clone(),
                evaluations,
                trace: main.trace.clone(),
                alternate: TuningOutcome {
                    objective: alternate_objective,
                    lambda: al,
                    gamma: ag,
                    value: alt.best_value,
                    dev_wer: tables.objective(&scored, &lm_sp, al, ag, SaObjective::Wer),
                    dev_slot_wer: tables.objective(&scored, &lm_sp, al, ag, SaObjective::SlotWer),
                },
            };
            self.commit("optimize-weights", sa.seed, out, &inputs, None, &sa, |p| {
                Ok(write_json(p, &report)?)
            })?;
            log(
                "optimize-weights",
                start,
                format!(
                    "{}: lambda {:.3} gamma {:.3} dev {:?} {:.4}",
                    system.tag(),
                    l,
                    g,
                    sa.objective,
                    main.best_value
                ),
            );
        }
        Ok(())
    }

    fn load_weights(&self, system: System) -> Result<(RescoreConfig, PathBuf)> {
        let path = self.optimizer_path(self.weight_source(system));
        self.require(&path, "optimize-weights")?;
        let report: OptimizerReport = read_json(&path)?;
        let config = RescoreConfig {
            lambda: report.best_lambda,
            gamma: report.best_gamma,
            ..self.config.rescore
        };
        config.validate()?;
        Ok((config, path))
    }

    pub fn rescore(&self, systems: Option<&[System]>) -> Result<()> {
        let start = Instant::now();
        let targets: Vec<System> = systems.map(<[System]>::to_vec).unwrap_or_else(|| System::ALL.to_vec());
        let outs: Vec<PathBuf> = targets.iter().map(|&s| self.rescore_path(s)).collect();
        self.ensure_writable(&outs)?;
        let weights: Vec<(RescoreConfig, PathBuf)> =
            targets.iter().map(|&s| self.load_weights(s)).collect::<Result<_>>()?;
        let vocab = self.load_vocab()?;
        let (scored, stats) = self.score(Split::Eval, &vocab)?;
        let mut inputs = vec![self.nbest_path(Split::Eval), self.classifier_path()];
        inputs.extend(self.bank_inputs());
        for ((system, out), (config, weight_path)) in targets.iter().zip(&outs).zip(&weights) {
            let records: Vec<RescoreRecord> = scored.iter().map(|s| s.rescore(*system, config)).collect();
            let mut all_inputs = inputs.clone();
            all_inputs.push(weight_path.clone());
            let settings = serde_json::json!({
                "system": system.tag(),
                "rescore": config,
                "routing": self.config.routing,
                "em": self.config.em,
            });
            self.commit("rescore", 0, out, &all_inputs, None, &settings, |p| {
                Ok(write_jsonl(p, &records)?)
            })?;
        }
        log(
            "rescore",
            start,
            format!(
                "{} lists, {} systems, {} LSTM steps, {} end-of-sentence steps",
                scored.len(),
                targets.len(),
                stats.token_steps,
                stats.eos_steps
            ),
        );
        Ok(())
    }

    pub fn evaluate(&self) -> Result<()> {
        let start = Instant::now();
        let out = self.report_path("evaluation.json");
        self.ensure_writable(std::slice::from_ref(&out))?;
        let corpus = self.load_corpus()?;
        let vocab = self.load_vocab()?;
        let lists = self.load_nbest(Split::Eval)?;
        let by_id: HashMap<&str, &Utterance> = corpus.iter().map(|u| (u.id.as_str(), u)).collect();
        let classifier_path = self.report_path("classifier.json");
        self.require(&classifier_path, "train-classifier")?;
        let classifier: ClassifierReport = read_json(&classifier_path)?;

        let mut inputs = vec![self.corpus_path(), self.nbest_path(Split::Eval), classifier_path];
        let present: Vec<System> = System::ALL
            .into_iter()
            .filter(|&s| self.rescore_path(s).exists())
            .collect();
        if present.is_empty() {
            self.require(&self.rescore_path(System::General), "rescore")?;
        }

        let mut acc = SplitAccumulator::default();
        for l in &lists {
            let utt = lookup(&by_id, &l.id)?;
            let hyps: Vec<&[String]> = l.hyps.iter().map(|h| h.tokens.as_slice()).collect();
            acc.add(utt, hyps[0]);
        }
        let firstpass = acc.finish();

        let mut acc = SplitAccumulator::default();
        for l in &lists {
            let utt = lookup(&by_id, &l.id)?;
            let hyps: Vec<&[String]> = l.hyps.iter().map(|h| h.tokens.as_slice()).collect();
            let i = oracle_choice(&utt.tokens, &hyps).ok_or_else(|| anyhow!("empty n-best list {}", l.id))?;
            acc.add(utt, hyps[i]);
        }
        let oracle = acc.finish();

        let mut systems = BTreeMap::new();
        for system in present {
            let path = self.rescore_path(system);
            let records: Vec<RescoreRecord> = read_jsonl(&path)?;
            if records.len() != lists.len() {
                bail!(
                    "{} has {} records for {} n-best lists",
                    self.rel(&path),
                    records.len(),
                    lists.len()
                );
            }
            let (config, weight_path) = self.load_weights(system)?;
            let mut acc = SplitAccumulator::default();
            let mut chosen: BTreeMap<String, usize> = BTreeMap::new();
            for r in &records {
                let utt = lookup(&by_id, &r.id)?;
                let top = r.ranked.first().ok_or_else(|| anyhow!("empty ranking for {}", r.id))?;
                acc.add(utt, &top.tokens);
                *chosen.entry(r.chosen_model.clone()).or_default() += 1;
            }
            systems.insert(
                system.tag().to_string(),
                SystemEvaluation {
                    lambda: config.lambda,
                    gamma: config.gamma,
                    metrics: acc.finish(),
                    chosen_models: chosen,
                },
            );
            inputs.push(path);
            inputs.push(weight_path);
        }

        let bank = self.load_bank(&vocab)?;
        inputs.extend(self.bank_inputs());
        let mut ppl = BTreeMap::new();
        for (tag, sel) in [
            ("genrl", domain_rescore::classifier::ModelSelector::General),
            ("nav", domain_rescore::classifier::ModelSelector::Navigation),
            ("music", domain_rescore::classifier::ModelSelector::Music),
            ("shop", domain_rescore::classifier::ModelSelector::Shopping),
        ] {
            let mut row = BTreeMap::new();
            for col in PPL_COLUMNS {
                let domain: Domain = col.parse()?;
                let ids = Self::encode(&vocab, &select(&corpus, Some(Split::Eval), Some(domain)));
                row.insert(col.to_string(), perplexity(bank.get(sel), &ids)?);
            }
            ppl.insert(tag.to_string(), row);
        }

        let evaluation = Evaluation {
            utterances: lists.len(),
            mean_nbest_size: lists.iter().map(|l| l.hyps.len()).sum::<usize>() as f64 / lists.len().max(1) as f64,
            firstpass,
            oracle,
            systems,
            ppl,
            classifier,
        };
        self.commit("evaluate", 0, &out, &inputs, None, &serde_json::Value::Null, |p| {
            Ok(write_json(p, &evaluation)?)
        })?;
        log(
            "evaluate",
            start,
            format!("{} systems scored", evaluation.systems.len()),
        );
        Ok(())
    }

    pub fn report(&self) -> Result<()> {
        let start = Instant::now();
        let json_out = self.report_path("report.json");
        let text_out = self.report_path("report.txt");
        self.ensure_writable(&[json_out.clone(), text_out.clone()])?;
        let eval_path = self.report_path("evaluation.json");
        self.require(&eval_path, "evaluate")?;
        let evaluation: Evaluation = read_json(&eval_path)?;
        let mut inputs = vec![eval_path];
        let mut optimizers = Vec::new();
        for system in System::ALL {
            let p = self.optimizer_path(system);
            if p.exists() {
                optimizers.push(read_json::<OptimizerReport>(&p)?);
                inputs.push(p);
            }
        }
        let report = build_report(&evaluation, &optimizers)?;
        let text = render_text(&report);
        self.commit("report", 0, &json_out, &inputs, None, &serde_json::Value::Null, |p| {
            Ok(write_json(p, &report)?)
        })?;
        self.commit("report", 0, &text_out, &inputs, None, &serde_json::Value::Null, |p| {
            Ok(std::fs::write(p, &text)?)
        })?;
        log("report", start, format!("wrote {}", self.rel(&text_out)));
        eprint!("{text}");
        Ok(())
    }
}

fn lookup<'a>(by_id: &HashMap<&str, &'a Utterance>, id: &str) -> Result<&'a Utterance> {
    by_id
        .get(id)
        .copied()
        .ok_or_else(|| anyhow!("utterance {id} is not in the corpus"))
}

/// Pools WER and SlotWER per domain split and overall.
#[derive(Default)]
struct SplitAccumulator {
    wer: BTreeMap<&'static str, WerBreakdown>,
    slot: BTreeMap<&'static str, WerBreakdown>,
}

impl SplitAccumulator {
    fn add(&mut self, utt: &Utterance, hyp: &[String]) {
        let w = utterance_wer(&utt.tokens, hyp);
        let s = utterance_slot_wer(&utt.tokens, hyp, &utt.slots);
        for key in [split_key(utt.domain), "all"] {
            self.wer.entry(key).or_default().add(&w);
            self.slot.entry(key).or_default().add(&s);
        }
    }

    fn finish(self) -> BTreeMap<String, SplitMetrics> {
        WER_SPLITS
            .iter()
            .filter_map(|&k| {
                let wer = *self.wer.get(k)?;
                let slot = self.slot.get(k).copied().unwrap_or_default();
                Some((
                    k.to_string(),
                    SplitMetrics {
                        wer: Rate::from(wer),
                        slot_wer: (slot.ref_tokens > 0).then(|| Rate::from(slot)),
                    },
                ))
            })
            .collect()
    }
}

/// Per-hypothesis error counts on the dev set, so that the annealing
/// objective only has to re-rank.
struct ErrorTables {
    wer_errors: Vec<Vec<usize>>,
    slot_errors: Vec<Vec<usize>>,
    ref_tokens: usize,
    slot_tokens: usize,
}

impl ErrorTables {
    fn new(scored: &[ScoredList], by_id: &HashMap<&str, &Utterance>) -> Result<ErrorTables> {
        let mut t = ErrorTables {
            wer_errors: Vec::with_capacity(scored.len()),
            slot_errors: Vec::with_capacity(scored.len()),
            ref_tokens: 0,
            slot_tokens: 0,
        };
        for s in scored {
            let utt = lookup(by_id, &s.id)?;
            t.ref_tokens += utt.tokens.len();
            t.slot_tokens += utt.slot_token_count();
            t.wer_errors
                .push(s.hyps.iter().map(|h| utterance_wer(&utt.tokens, h).errors()).collect());
            t.slot_errors.push(
                s.hyps
                    .iter()
                    .map(|h| utterance_slot_wer(&utt.tokens, h, &utt.slots).errors())
                    .collect(),
            );
        }
        Ok(t)
    }

    fn objective(&self, scored: &[ScoredList], lm_sp: &[Vec<f64>], lambda: f64, gamma: f64, which: SaObjective) -> f64 {
        let config = RescoreConfig {
            lambda,
            gamma,
            ..Default::default()
        };
        let (table, denom) = match which {
            SaObjective::Wer => (&self.wer_errors, self.ref_tokens),
            SaObjective::SlotWer => (&self.slot_errors, self.slot_tokens),
        };
        if denom == 0 {
            return 0.0;
        }
        let errors: usize = scored
            .iter()
            .zip(lm_sp)
            .zip(table)
            .map(|((s, sp), errs)| errs[best_index(&s.am, &s.lm_fp, sp, &config)])
            .sum();
        errors as f64 / denom as f64
    }
}
