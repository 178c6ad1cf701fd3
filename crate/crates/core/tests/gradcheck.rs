//! Finite-difference gradient checks over seeded random small instances.

use std::sync::Arc;

use domain_rescore::corpus::Vocabulary;
use domain_rescore::neural_lm::{NeuralLm, NoiseDistribution, Objective};
use domain_rescore::nn::{
    gradient_check, nce_loss, softmax_cross_entropy, visit_nested, visit_nested_mut, Affine, Embedding, Lstm,
    LstmState, Matrix, PackedBatch, Param, Parameters,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn assert_passes(what: &str, seed: u64, report: domain_rescore::nn::GradCheckReport) {
    assert!(
        report.passed(),
        "{what} seed {seed}: max rel error {} at {:?}",
        report.max_rel_error,
        report.worst
    );
}

#[test]
fn affine_softmax_ce() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
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
            TOL,
            usize::MAX,
        );
        assert_passes("affine", seed, report);
    }
}

#[test]
fn softmax_ce_logits() {
    struct Logits(Param);
    impl Parameters for Logits {
        fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
            f("logits", &self.0);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
            f("logits", &mut self.0);
        }
    }
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (n, c) = (rng.gen_range(1..=6), rng.gen_range(2..=8));
        let mut m = Logits(Param::new(random_matrix(&mut rng, n, c) * 3.0));
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let report = gradient_check(
            &mut m,
            |m: &mut Logits| {
                let (loss, d) = softmax_cross_entropy(&m.0.value, &targets);
                m.0.grad += &d;
                loss
            },
            TOL,
            usize::MAX,
        );
        assert_passes("softmax-ce", seed, report);
    }
}

#[derive(Clone)]
struct EmbedAffine {
    embedding: Embedding,
    affine: Affine,
}

impl Parameters for EmbedAffine {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_nested("embedding", &self.embedding, f);
        visit_nested("affine", &self.affine, f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_nested_mut("embedding", &mut self.embedding, f);
        visit_nested_mut("affine", &mut self.affine, f);
    }
}

#[test]
fn embedding_lookup() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (rows, dim, out) = (rng.gen_range(3..=8), rng.gen_range(1..=8), rng.gen_range(2..=6));
        let mut m = EmbedAffine {
            embedding: Embedding::new(rows, dim, 0.5, &mut rng),
            affine: Affine::new(dim, out, 0.5, &mut rng),
        };
        let n = rng.gen_range(1..=5);
        let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..rows - 1)).collect();
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..out)).collect();
        let loss = |m: &mut EmbedAffine| {
            let x = m.embedding.forward(&ids);
            let (loss, d) = softmax_cross_entropy(&m.affine.forward(&x), &targets);
            let dx = m.affine.backward(&x, &d);
            m.embedding.backward(&ids, &dx);
            loss
        };
        let report = gradient_check(&mut m, loss, TOL, usize::MAX);
        assert_passes("embedding", seed, report);

        // Rows never looked up receive exactly zero gradient.
        m.zero_grads();
        loss(&mut m);
        for r in 0..rows {
            if !ids.contains(&r) {
                assert!(m.embedding.table.grad.row(r).iter().all(|&g| g == 0.0));
            }
        }
        assert!(m.embedding.table.grad.row(ids[0]).iter().any(|&g| g != 0.0));
    }
}

#[derive(Clone)]
struct StackedLstm {
    layers: Vec<Lstm>,
}

impl Parameters for StackedLstm {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            visit_nested(&format!("lstm{i}"), l, f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            visit_nested_mut(&format!("lstm{i}"), l, f);
        }
    }
}

/// Loss = Σ_t <P_t, h_t> + <Q_h, h_T> + <Q_c, c_T> over packed rows of the
/// top layer, so every output and both final states carry gradient.
fn lstm_check(layers: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(300 + seed + 1000 * layers as u64);
    let input = rng.gen_range(1..=6);
    let hidden = rng.gen_range(1..=6);
    let mut m = StackedLstm {
        layers: (0..layers)
            .map(|l| Lstm::new(if l == 0 { input } else { hidden }, hidden, 0.5, &mut rng))
            .collect(),
    };
    for l in &mut m.layers {
        l.bias.value = random_matrix(&mut rng, 1, 4 * hidden) * 0.5;
    }
    let batch = rng.gen_range(1..=4);
    let lengths: Vec<usize> = (0..batch).map(|_| rng.gen_range(1..=5)).collect();
    let packed = PackedBatch::new(&lengths);
    let xs: Vec<Matrix> = packed
        .batch_sizes
        .iter()
        .map(|&b| random_matrix(&mut rng, b, input))
        .collect();
    let proj: Vec<Matrix> = packed
        .batch_sizes
        .iter()
        .map(|&b| random_matrix(&mut rng, b, hidden))
        .collect();
    let init = LstmState {
        h: random_matrix(&mut rng, batch, hidden) * 0.5,
        c: random_matrix(&mut rng, batch, hidden) * 0.5,
    };
    let final_proj = LstmState {
        h: random_matrix(&mut rng, batch, hidden),
        c: random_matrix(&mut rng, batch, hidden),
    };
    let report = gradient_check(
        &mut m,
        |m: &mut StackedLstm| {
            let mut inputs = xs.clone();
            let mut caches = Vec::new();
            let mut last = None;
            for layer in &m.layers {
                let (hs, fin, cache) = layer.forward(&inputs, &init).unwrap();
                caches.push(cache);
                inputs = hs;
                last = Some(fin);
            }
            let fin = last.unwrap();
            let mut loss: f64 = inputs.iter().zip(&proj).map(|(h, p)| (h * p).sum()).sum();
            loss += (&fin.h * &final_proj.h).sum() + (&fin.c * &final_proj.c).sum();
            let mut grads = proj.clone();
            for (i, layer) in m.layers.iter_mut().enumerate().rev() {
                let top = i + 1 == layers;
                let (dxs, _) = layer.backward(&caches[i], &grads, if top { Some(&final_proj) } else { None });
                grads = dxs;
            }
            loss
        },
        TOL,
        usize::MAX,
    );
    assert_passes(&format!("lstm x{layers}"), seed, report);
}

#[test]
fn lstm_single_layer() {
    for seed in 0..SEEDS {
        lstm_check(1, seed);
    }
}

#[test]
fn lstm_two_layers() {
    for seed in 0..SEEDS {
        lstm_check(2, seed);
    }
}

#[test]
fn nce_scores() {
    struct Scores(Param);
    impl Parameters for Scores {
        fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
            f("scores", &self.0);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
            f("scores", &mut self.0);
        }
    }
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let k = rng.gen_range(1..=8);
        let mut m = Scores(Param::new(random_matrix(&mut rng, 1, k + 1) * 3.0));
        let log_q: Vec<f64> = (0..=k).map(|_| rng.gen_range(0.01f64..1.0).ln()).collect();
        let report = gradient_check(
            &mut m,
            |m: &mut Scores| {
                let s = m.0.value.row(0).to_vec();
                let out = nce_loss(s[0], log_q[0], &s[1..], &log_q[1..]).unwrap();
                m.0.grad[[0, 0]] += out.d_target;
                for (j, d) in out.d_noise.iter().enumerate() {
                    m.0.grad[[0, j + 1]] += d;
                }
                out.loss
            },
            TOL,
            usize::MAX,
        );
        assert_passes("nce", seed, report);
    }
}

fn tiny_lm(rng: &mut ChaCha8Rng, seed: u64) -> (NeuralLm, Vec<Vec<usize>>) {
    let v = rng.gen_range(3..=7);
    let vocab = Vocabulary::from_tokens((1..v).map(|i| format!("w{i}")), v).unwrap();
    let mut lm = NeuralLm::new(Arc::new(vocab), rng.gen_range(2..=5), rng.gen_range(2..=5), 0.5, seed);
    // Non-trivial biases so every gate is exercised away from its init value.
    lm.visit_params_mut(&mut |name, p| {
        if name.ends_with("bias") {
            p.value.mapv_inplace(|b| b + 0.3);
        }
    });
    let sentences = (0..rng.gen_range(1..=3))
        .map(|_| (0..rng.gen_range(0..=4)).map(|_| rng.gen_range(0..v)).collect())
        .collect();
    (lm, sentences)
}

#[test]
fn neural_lm_end_to_end_softmax() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let (mut lm, sentences) = tiny_lm(&mut rng, seed);
        let refs: Vec<&[usize]> = sentences.iter().map(Vec::as_slice).collect();
        let report = gradient_check(
            &mut lm,
            |m: &mut NeuralLm| m.batch_loss::<ChaCha8Rng>(&refs, Objective::Softmax).unwrap(),
            TOL,
            64,
        );
        assert_passes("lm softmax", seed, report);
    }
}

#[test]
fn neural_lm_end_to_end_nce() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let (mut lm, sentences) = tiny_lm(&mut rng, seed);
        let all: Vec<Vec<usize>> = (0..lm.vocab().len()).map(|i| vec![i]).collect();
        let noise = NoiseDistribution::unigram(&all, lm.output_size()).unwrap();
        let refs: Vec<&[usize]> = sentences.iter().map(Vec::as_slice).collect();
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
                .unwrap()
            },
            TOL,
            64,
        );
        assert_passes("lm nce", seed, report);
    }
}
