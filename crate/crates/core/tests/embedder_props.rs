use std::time::Instant;

use genekg_core::embedder::*;
use genekg_core::walker::{Walk, WalkCorpus};
use rand::{Rng, SeedableRng};

fn corpus(walks: &[&[&str]]) -> WalkCorpus {
    let mut c = WalkCorpus::default();
    for w in walks {
        c.walks.push(Walk {
            tokens: w.iter().map(|t| t.to_string()).collect(),
        });
    }
    c
}

fn params(dim: usize, epochs: usize) -> SkipGramParams {
    SkipGramParams {
        dim,
        epochs,
        ..SkipGramParams::default()
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn pair_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let d = rng.random_range(1..=12);
        let k = rng.random_range(0..=5);
        let scale = rng.random_range(0.05..1.5);
        let mut vec = || (0..d).map(|_| rng.random_range(-scale..scale)).collect::<Vec<f64>>();
        let center = vec();
        let context = vec();
        let negs: Vec<Vec<f64>> = (0..k).map(|_| vec()).collect();
        let refs = |n: &[Vec<f64>]| n.iter().map(|v| v.to_vec()).collect::<Vec<_>>();
        let loss = |c: &[f64], x: &[f64], n: &[Vec<f64>]| {
            let r: Vec<&[f64]> = n.iter().map(Vec::as_slice).collect();
            pair_loss(c, x, &r)
        };
        let nrefs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let g = pair_gradients(&center, &context, &nrefs);

        // which vector, which component
        let mut check = |which: usize, i: usize, analytic: f64| {
            let (mut cp, mut cm) = (center.clone(), center.clone());
            let (mut xp, mut xm) = (context.clone(), context.clone());
            let (mut np, mut nm) = (refs(&negs), refs(&negs));
            match which {
                0 => {
                    cp[i] += eps;
                    cm[i] -= eps;
                }
                1 => {
                    xp[i] += eps;
                    xm[i] -= eps;
                }
                j => {
                    np[j - 2][i] += eps;
                    nm[j - 2][i] -= eps;
                }
            }
            let numeric = (loss(&cp, &xp, &np) - loss(&cm, &xm, &nm)) / (2.0 * eps);
            let e = if analytic.abs() < 1e-7 && numeric.abs() < 1e-7 { 0.0 } else { rel_err(analytic, numeric) };
            worst = worst.max(e);
        };
        for i in 0..d {
            check(0, i, g.center[i]);
            check(1, i, g.context[i]);
            for j in 0..k {
                check(j + 2, i, g.negatives[j][i]);
            }
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn co_occurring_tokens_end_up_closer() {
    let mut walks: Vec<&[&str]> = vec![&["A", "p", "B"]; 200];
    walks.extend(vec![&["X", "q", "Y"] as &[&str]; 200]);
    let m = train_skipgram(&corpus(&walks), &params(16, 5), 4).unwrap();
    assert!(m.cosine("A", "B").unwrap() > m.cosine("A", "X").unwrap());
    assert!(m.cosine("A", "B").unwrap() > m.cosine("A", "Y").unwrap());
}

fn random_corpus(rng: &mut impl Rng, n_walks: usize, prefix: &str) -> WalkCorpus {
    let mut c = WalkCorpus::default();
    for _ in 0..n_walks {
        let len = 1 + 2 * rng.random_range(0..4);
        c.walks.push(Walk {
            tokens: (0..len).map(|_| format!("{prefix}{}", rng.random_range(0..20))).collect(),
        });
    }
    c
}

#[test]
fn epoch_loss_decreases_for_most_seeds() {
    let mut good = 0;
    for seed in 0..5u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100 + seed);
        // walks stay inside one of four token clusters
        let mut c = WalkCorpus::default();
        for _ in 0..300 {
            let cluster = rng.random_range(0..4);
            let len = 3 + 2 * rng.random_range(0..3);
            c.walks.push(Walk {
                tokens: (0..len).map(|_| format!("c{cluster}t{}", rng.random_range(0..5))).collect(),
            });
        }
        let p = SkipGramParams {
            learning_rate: 0.005,
            ..params(16, 5)
        };
        let m = train_skipgram(&c, &p, seed).unwrap();
        let l = m.epoch_losses();
        if l.windows(2).all(|w| w[1] <= w[0]) {
            good += 1;
        }
    }
    assert!(good >= 4, "{good} of 5 seeds had non-increasing loss");
}

#[test]
fn update_leaves_absent_tokens_untouched() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let base = train_skipgram(&random_corpus(&mut rng, 200, "t"), &params(10, 3), 1).unwrap();
    // new corpus touches t0..t4 and ten patients
    let mut new = WalkCorpus::default();
    for p in 0..10 {
        for t in 0..5 {
            new.walks.push(Walk {
                tokens: vec![format!("patient{p}"), "expresses".into(), format!("t{t}")],
            });
        }
    }
    let updated = update_model(&base, &new, 2).unwrap();
    assert_eq!(updated.vocab().len(), base.vocab().len() + 11);
    let touched: Vec<String> = (0..5).map(|t| format!("t{t}")).collect();
    let mut moved = 0;
    for (i, tok) in base.vocab().tokens().iter().enumerate() {
        let j = updated.vocab().get(tok).unwrap();
        if touched.contains(tok) {
            moved += usize::from(base.input_row(i) != updated.input_row(j));
        } else {
            assert_eq!(
                base.input_row(i).iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                updated.input_row(j).iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                "{tok} moved"
            );
        }
    }
    assert_eq!(moved, 5);
    assert_eq!(updated.get_embedding("patient3").unwrap().len(), 10);
    assert!(updated.get_embedding("patient10").is_err());
}

#[test]
fn persisted_model_updates_like_the_original() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let base = train_skipgram(&random_corpus(&mut rng, 100, "t"), &params(8, 2), 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_model(&base, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded, base);
    let extra = random_corpus(&mut rng, 50, "u");
    assert_eq!(update_model(&loaded, &extra, 5).unwrap(), update_model(&base, &extra, 5).unwrap());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_model(&path).is_err());
}

#[test]
fn training_is_reproducible() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let c = random_corpus(&mut rng, 80, "t");
    let a = train_skipgram(&c, &params(6, 2), 3).unwrap();
    let b = train_skipgram(&c, &params(6, 2), 3).unwrap();
    assert_eq!(a, b);
    let e = a.get_embedding("t1").unwrap();
    assert_eq!(e, a.get_embedding("t1").unwrap());
}
