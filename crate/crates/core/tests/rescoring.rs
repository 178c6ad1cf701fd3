//! Push-forward against flat per-hypothesis scoring, plus rescoring
//! invariants on random n-best lists.

use std::sync::Arc;

use domain_rescore::classifier::{ClfTrainConfig, DomainClassifier, ModelSelector, RoutingPolicy};
use domain_rescore::corpus::Vocabulary;
use domain_rescore::firstpass::{Hypothesis, NBestList};
use domain_rescore::neural_lm::NeuralLm;
use domain_rescore::rescorer::{
    push_forward, push_forward_rescore, rank, score_lists, ModelBank, PrefixLattice, PushForwardStats, RescoreConfig,
    System,
};
use domain_rescore::weight_opt::EmConfig;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vocab() -> Arc<Vocabulary> {
    Arc::new(Vocabulary::from_tokens((0..30).map(|i| format!("w{i}")), 31).unwrap())
}

/// N-best lists built by perturbing a base sentence, so prefixes are shared.
fn random_lists(rng: &mut ChaCha8Rng, n: usize) -> Vec<NBestList> {
    (0..n)
        .map(|u| {
            let len = rng.gen_range(1..=8);
            let base: Vec<String> = (0..len).map(|_| format!("w{}", rng.gen_range(0..32))).collect();
            let mut hyps: Vec<Vec<String>> = vec![base.clone()];
            while hyps.len() < 10 {
                let mut h = base.clone();
                let pos = rng.gen_range(0..h.len());
                match rng.gen_range(0..3) {
                    0 => h[pos] = format!("w{}", rng.gen_range(0..32)),
                    1 if h.len() > 1 => {
                        h.remove(pos);
                    }
                    _ => h.insert(pos, format!("w{}", rng.gen_range(0..32))),
                }
                if !hyps.contains(&h) {
                    hyps.push(h);
                }
                if rng.gen_bool(0.05) {
                    break;
                }
            }
            hyps.shuffle(rng);
            NBestList {
                id: format!("u{u}"),
                reference: base,
                hyps: hyps
                    .into_iter()
                    .map(|tokens| Hypothesis {
                        am: rng.gen_range(-10.0..0.0),
                        lm: rng.gen_range(-30.0..-1.0),
                        tokens,
                    })
                    .collect(),
            }
        })
        .collect()
}

#[test]
fn trie_scores_match_flat_scores() {
    let v = vocab();
    let model = NeuralLm::new(v.clone(), 8, 12, 0.3, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lists = random_lists(&mut rng, 500);
    let lattices: Vec<PrefixLattice> = lists
        .iter()
        .map(|l| PrefixLattice::build(&l.hyps.iter().map(|h| h.tokens.clone()).collect::<Vec<_>>()))
        .collect();
    let refs: Vec<&PrefixLattice> = lattices.iter().collect();
    let mut stats = PushForwardStats::default();
    let scores = push_forward(&model, &v, &refs, &mut stats).unwrap();
    let arcs: usize = lattices.iter().map(|l| l.arc_count()).sum();
    let leaves: usize = lattices.iter().map(|l| l.leaf_count()).sum();
    assert_eq!(stats.token_steps, arcs);
    assert_eq!(stats.eos_steps, leaves);
    let mut max_diff: f64 = 0.0;
    for (list, per_hyp) in lists.iter().zip(&scores) {
        for (h, trie) in list.hyps.iter().zip(per_hyp) {
            let flat = model.score_sequence(&v.encode(&h.tokens));
            assert_eq!(flat.len(), trie.len());
            for (a, b) in flat.iter().zip(trie) {
                max_diff = max_diff.max((a - b).abs());
            }
        }
    }
    assert!(max_diff <= 1e-10, "max diff {max_diff}");
}

#[test]
fn lambda_one_reproduces_firstpass_and_unk_penalty_bites() {
    let v = vocab();
    let model = NeuralLm::new(v.clone(), 8, 12, 0.3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut stats = PushForwardStats::default();
    for list in random_lists(&mut rng, 50) {
        let cfg = RescoreConfig {
            lambda: 1.0,
            gamma: 1.0,
            ..Default::default()
        };
        let ranked = push_forward_rescore(&list, &model, &v, &cfg, &mut stats).unwrap();
        let am: Vec<f64> = list.hyps.iter().map(|h| h.am).collect();
        let fp: Vec<f64> = list.hyps.iter().map(|h| h.lm).collect();
        let expected = rank(&am, &fp, &vec![0.0; am.len()], &cfg);
        let got: Vec<&Vec<String>> = ranked.iter().map(|r| &r.tokens).collect();
        let want: Vec<&Vec<String>> = expected.iter().map(|&(i, _)| &list.hyps[i].tokens).collect();
        assert_eq!(got, want);
        assert_eq!(ranked.len(), list.hyps.len());

        // One in-vocabulary token replaced by an OOV token lowers the score.
        let cfg = RescoreConfig {
            lambda: 0.3,
            gamma: 0.7,
            ..Default::default()
        };
        let mut oov = list.clone();
        oov.hyps.truncate(1);
        let base = push_forward_rescore(&oov, &model, &v, &cfg, &mut stats).unwrap()[0].score;
        let w = oov.hyps[0].tokens.iter().position(|t| v.get(t).is_some());
        if let Some(p) = w {
            oov.hyps[0].tokens[p] = "zz-unseen".into();
            let replaced = push_forward_rescore(&oov, &model, &v, &cfg, &mut stats).unwrap()[0].score;
            assert!(replaced < base);
        }
    }
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let v = vocab();
    let other = Arc::new(Vocabulary::from_tokens(vec!["x".to_string()], 5).unwrap());
    let model = NeuralLm::new(other, 4, 4, 0.1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let list = &random_lists(&mut rng, 1)[0];
    let mut stats = PushForwardStats::default();
    assert!(push_forward_rescore(list, &model, &v, &RescoreConfig::default(), &mut stats).is_err());
}

#[test]
fn systems_over_cached_scores() {
    let v = vocab();
    let general = NeuralLm::new(v.clone(), 8, 12, 0.3, 11);
    let bank = ModelBank::new(
        general.clone(),
        NeuralLm::new(v.clone(), 8, 12, 0.3, 12),
        NeuralLm::new(v.clone(), 8, 12, 0.3, 13),
        NeuralLm::new(v.clone(), 8, 12, 0.3, 14),
    )
    .unwrap();
    assert!(bank.shares_vocab_object());
    let clf = DomainClassifier::new(
        v.clone(),
        &ClfTrainConfig {
            embedding_dim: 4,
            hidden: 4,
            fc_dim: 4,
            ..Default::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lists = random_lists(&mut rng, 60);
    let mut stats = PushForwardStats::default();
    let scored = score_lists(
        &lists,
        &bank,
        &clf,
        &RoutingPolicy::default(),
        &EmConfig::default(),
        &mut stats,
    )
    .unwrap();
    let cfg = RescoreConfig::default();
    for (s, list) in scored.iter().zip(&lists) {
        // EM weights live on the simplex.
        assert!(s.em.weights.iter().all(|&w| w >= 0.0));
        assert!((s.em.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Degenerate mixture equals the general model.
        let mix = s.mixture_lm_sp(&[1.0, 0.0, 0.0, 0.0], cfg.unk_scale);
        let gen = s.model_lm_sp(ModelSelector::General, cfg.unk_scale);
        for (a, b) in mix.iter().zip(&gen) {
            assert!((a - b).abs() <= 1e-10);
        }
        // Each system output is a permutation of the n-best.
        for sys in System::ALL {
            let rec = s.rescore(sys, &cfg);
            let mut got: Vec<_> = rec.ranked.iter().map(|r| r.tokens.clone()).collect();
            let mut want: Vec<_> = list.hyps.iter().map(|h| h.tokens.clone()).collect();
            got.sort();
            want.sort();
            assert_eq!(got, want);
            assert_eq!(rec.weights.is_some(), sys == System::EmBaseline);
        }
        // Cached general scores equal direct push-forward rescoring.
        let direct = push_forward_rescore(list, &general, &v, &cfg, &mut PushForwardStats::default()).unwrap();
        let cached = s.rescore(System::General, &cfg).ranked;
        for (a, b) in direct.iter().zip(&cached) {
            assert_eq!(a.tokens, b.tokens);
            assert!((a.score - b.score).abs() < 1e-10);
        }
    }
}
