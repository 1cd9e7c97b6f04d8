//! Dropout layers, networks, training, evaluation, pruning and data.

use advdrop::data::{load_csv, load_idx, split, synthetic, CsvSchema, Dataset, Normalization, SyntheticKind, TargetColumn, Targets};
use advdrop::dropout::{AdvancedConfig, AdvancedDropoutLayer, Mode, Noise};
use advdrop::eval::{auroc, entropy, mc_infer, predict_all};
use advdrop::network::{DropoutPolicy, FcSpec, Model};
use advdrop::params::{ParamGroup, ParamStore};
use advdrop::pruning::{install_masks, lottery_cycle, prune_round, reset_to_init, Granularity, PruneMethod, PruneState};
use advdrop::training::{fit, fit_with, sgvb_loss, LossKind, Sgd, TrainConfig};
use advdrop::{Graph, Tensor};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn advanced(init_mu: f64, init_sigma: f64) -> DropoutPolicy {
    DropoutPolicy::Advanced(AdvancedConfig {
        init_mu,
        init_sigma,
        ..Default::default()
    })
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(vec![rows, cols], |_| rng.sample(StandardNormal))
}

/// Largest relative error between backward and central differences over
/// every parameter of an advanced-dropout 13-8-1 regression net, with the
/// sampled ε recorded once and replayed for each perturbed evaluation.
pub fn full_graph_gradient_error() -> (f64, String) {
    let x = gaussian_matrix(16, 13, 1);
    let y: Vec<f64> = (0..16).map(|i| x.row(i).iter().sum::<f64>() * 0.3 + 1.0).collect();
    let targets = Targets::Values(y);
    let mut m = Model::build(FcSpec::new(vec![13, 8, 1], advanced(0.0, 3.0), true), 2).unwrap();
    // move the encoders off their near-zero start so every path carries signal
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..m.params().len() {
        if m.params().get(k).group == ParamGroup::Lambda {
            for v in m.params_mut().value_mut(k).data_mut() {
                *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let loss_at = |m: &mut Model, noise: &mut Noise, grads: bool| -> (f64, Vec<Option<Tensor>>) {
        let mut g = Graph::new();
        let vars = m.params().bind(&mut g, true);
        let (l, _) = sgvb_loss(m, &mut g, &vars, &x, &targets, LossKind::Mse, noise).unwrap();
        let value = g.value(l).item().unwrap();
        let mut out = vec![None; m.params().len()];
        if grads {
            g.backward(l).unwrap();
            for (k, gr) in g.param_grads() {
                out[k] = Some(gr.clone());
            }
        }
        (value, out)
    };
    let mut rec = Noise::recording(4);
    let (_, grads) = loss_at(&mut m, &mut rec, true);
    let tape = rec.into_tape();
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    for k in 0..m.params().len() {
        for i in 0..m.params().value(k).numel() {
            let orig = m.params().value(k).data()[i];
            m.params_mut().value_mut(k).data_mut()[i] = orig + h;
            let (up, _) = loss_at(&mut m, &mut Noise::replay(tape.clone()), false);
            m.params_mut().value_mut(k).data_mut()[i] = orig - h;
            let (down, _) = loss_at(&mut m, &mut Noise::replay(tape.clone()), false);
            m.params_mut().value_mut(k).data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads[k].as_ref().map_or(0.0, |g| g.data()[i]);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            if rel > worst.0 {
                worst = (rel, format!("{}[{i}] analytic {an:e} numeric {fd:e}", m.params().get(k).name));
            }
        }
    }
    worst
}

pub fn reparameterized_gradients() {
    let (err, at) = full_graph_gradient_error();
    assert!(err <= 1e-4, "relative error {err:e} at {at}");
}

fn layer(init_sigma: f64, width: usize) -> (AdvancedDropoutLayer, ParamStore) {
    let mut store = ParamStore::new();
    let cfg = AdvancedConfig {
        init_sigma,
        ..Default::default()
    };
    let l = AdvancedDropoutLayer::new("site", width, cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    (l, store)
}

fn layer_out(l: &mut AdvancedDropoutLayer, store: &ParamStore, pre: &Tensor, mode: Mode, noise: &mut Noise) -> Tensor {
    let mut g = Graph::new();
    let vars = store.bind(&mut g, false);
    let p = g.constant(pre.clone());
    let out = l.forward(&mut g, &vars, p, mode, noise).unwrap();
    g.value(out).clone()
}

/// Eval output is sampling-free and matches the average of 10⁴ train-mode
/// outputs within 1% per element. A seed spread of 0.5 keeps the MC
/// standard error of each element near 0.25%.
pub fn dropout_eval_matches_expectation() {
    let (mut l, store) = layer(0.5, 6);
    let pre = gaussian_matrix(4, 6, 9).map(|v| if v.abs() < 0.1 { 0.5 } else { v });
    let a = layer_out(&mut l, &store, &pre, Mode::Eval, &mut Noise::seeded(1));
    let b = layer_out(&mut l, &store, &pre, Mode::Eval, &mut Noise::seeded(2));
    assert_eq!(a, b, "eval forward changed between calls");
    let mut noise = Noise::seeded(3);
    let n = 10_000;
    let mut avg = Tensor::zeros(pre.shape().to_vec());
    for _ in 0..n {
        avg.add_assign(&layer_out(&mut l, &store, &pre, Mode::Train, &mut noise)).unwrap();
    }
    let avg = avg.scale(1.0 / n as f64);
    for (i, (&m, &e)) in avg.data().iter().zip(a.data()).enumerate() {
        assert!((m - e).abs() <= 0.01 * e.abs(), "element {i}: train mean {m} vs eval {e}");
    }
    let (_, rate) = l.dropout_rate().unwrap();
    assert!(rate > 0.0 && rate < 1.0);
}

pub fn dropout_rate_in_unit_interval() {
    runner(64)
        .run(&(-8.0f64..8.0, 0.05f64..20.0, any::<u64>()), |(mu, sigma, seed)| {
            let mut m = Model::build(FcSpec::new(vec![3, 5, 4, 2], advanced(mu, sigma), true), seed).unwrap();
            m.predict(&gaussian_matrix(7, 3, seed), Mode::Train, &mut Noise::seeded(seed)).unwrap();
            for r in m.dropout_rates() {
                prop_assert!(r.rate > 0.0 && r.rate < 1.0, "{} rate {}", r.layer, r.rate);
            }
            Ok(())
        })
        .unwrap();
    for bad in [DropoutPolicy::Bernoulli { p: 0.0 }, DropoutPolicy::Bernoulli { p: 1.0 }, DropoutPolicy::Gaussian { v: 0.0 }] {
        assert!(FcSpec::new(vec![2, 3, 2], bad, false).validate().is_err());
    }
}

pub fn registry_and_structure() {
    let ds = synthetic(SyntheticKind::TwoGaussians, 64, 1).unwrap();
    for (dims, mask_input) in [(vec![2, 5, 2], false), (vec![2, 7, 6, 2], true)] {
        let mut m = Model::build(FcSpec::new(dims.clone(), advanced(0.0, 3.0), mask_input), 1).unwrap();
        let layers = dims.len() - 1;
        let sites = layers - 1 + usize::from(mask_input);
        assert_eq!(m.hidden_sites().len(), layers - 1, "output logits must not be masked");
        assert_eq!(m.input_site().is_some(), mask_input);
        let tensors = |grp| m.params().iter().filter(|p| p.group == grp).count();
        let (theta, lambda) = (tensors(ParamGroup::Theta), tensors(ParamGroup::Lambda));
        assert_eq!((theta, lambda), (2 * layers, 6 * sites));
        assert_eq!(m.params().len(), theta + lambda);
        let theta_scalars: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let widths = if mask_input { &dims[..layers] } else { &dims[1..layers] };
        let lambda_scalars: usize = widths.iter().map(|&k| {
            let h = k.min(64);
            h * k + h + 2 * (k * h + k)
        }).sum();
        assert_eq!(m.params().count(ParamGroup::Theta), theta_scalars);
        assert_eq!(m.params().count(ParamGroup::Lambda), lambda_scalars);
        let names: Vec<String> = m.params().iter().map(|p| p.name.clone()).collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            ..Default::default()
        };
        fit(&mut m, &ds, None, &cfg).unwrap();
        assert_eq!(m.params().iter().map(|p| p.name.clone()).collect::<Vec<_>>(), names);
    }
}

pub fn loss_decreases_on_separable_data() {
    let ds = synthetic(SyntheticKind::TwoGaussians, 256, 4).unwrap();
    let mut m = Model::build(FcSpec::new(vec![2, 16, 2], advanced(0.0, 3.0), false), 4).unwrap();
    // 50 steps: 10 epochs of 5 batches
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 52,
        lr: 0.05,
        ..Default::default()
    };
    let rec = fit(&mut m, &ds, None, &cfg).unwrap();
    let first = rec.rows.first().unwrap().train_loss;
    let last = rec.rows.last().unwrap().train_loss;
    assert!(last < 0.5 * first, "loss {first} -> {last}");
    assert!(rec.rows.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
}

pub fn training_is_deterministic() {
    let ds = synthetic(SyntheticKind::Xor, 96, 5).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 32,
        seed: 12,
        ..Default::default()
    };
    let run = || {
        let mut m = Model::build(FcSpec::new(vec![2, 8, 8, 2], advanced(0.0, 3.0), true), 6).unwrap();
        let rec = fit(&mut m, &ds, Some(&ds), &cfg).unwrap();
        (rec.to_jsonl(false).unwrap(), m.params().clone())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    for (x, y) in pa.iter().zip(pb.iter()) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.value), bits(&y.value), "{}", x.name);
    }
}

/// Noisy linear targets, far fewer rows than parameters.
fn overfit_split() -> (Dataset, Dataset) {
    let d = 8;
    let w: Vec<f64> = (0..d).map(|j| (j as f64 - 3.5) / 2.0).collect();
    let make = |n: usize, seed: u64| {
        let x = gaussian_matrix(n, d, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let y = (0..n)
            .map(|i| x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
            .collect();
        Dataset::new(x, Targets::Values(y)).unwrap()
    };
    (make(24, 1), make(500, 2))
}

/// Train/test RMSE gap after overtraining a net with no dropout, so weight
/// decay is the only regularizer, with and without decay.
pub fn weight_decay_gaps() -> (f64, f64) {
    let (train, test) = overfit_split();
    let gap = |wd: f64| {
        let mut m = Model::build(FcSpec::new(vec![8, 64, 64, 1], DropoutPolicy::None, false), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 1000,
            batch_size: 8,
            lr: 0.01,
            weight_decay: wd,
            loss: LossKind::Mse,
            ..Default::default()
        };
        let rec = fit(&mut m, &train, Some(&test), &cfg).unwrap();
        let row = rec.rows.last().unwrap();
        row.test_rmse.unwrap() - row.train_rmse.unwrap()
    };
    (gap(5e-4), gap(0.0))
}

pub fn weight_decay_limits_overfitting() {
    // decay reaches network weights and encoder parameters alike
    let mut m = Model::build(FcSpec::new(vec![3, 4, 2], advanced(0.0, 3.0), true), 1).unwrap();
    let before = m.params().clone();
    let zeros: Vec<Option<Tensor>> = before.iter().map(|p| Some(p.value.zeros_like())).collect();
    let (lr, wd) = (0.1, 0.01);
    Sgd::new().step(m.params_mut(), &zeros, &[], lr, 0.9, wd).unwrap();
    for (a, b) in before.iter().zip(m.params().iter()) {
        for (x, y) in a.value.data().iter().zip(b.value.data()) {
            assert!((y - x * (1.0 - lr * wd)).abs() <= 1e-15 * x.abs().max(1.0), "{} not decayed", a.name);
        }
    }
    let (with, without) = weight_decay_gaps();
    assert!(without > with * 1.05, "gap with decay {with}, without {without}");
}

pub fn entropy_bounds() {
    runner(256)
        .run(&prop::collection::vec(0.0f64..1.0, 2..12), |raw| {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let ln_c = (p.len() as f64).ln();
            let h = entropy(&p);
            prop_assert!(h >= 0.0 && h <= ln_c + 1e-12);
            let spread = p.iter().cloned().fold(0.0, f64::max) - p.iter().cloned().fold(1.0, f64::min);
            if spread > 1e-3 {
                prop_assert!(h < ln_c - 1e-9, "non-uniform {:?} reaches the bound", p);
            }
            let uniform = vec![1.0 / p.len() as f64; p.len()];
            prop_assert!((entropy(&uniform) - ln_c).abs() <= 1e-9);
            Ok(())
        })
        .unwrap();
}

pub fn auroc_monotone_invariance() {
    let case = prop::collection::vec((-50i32..50, any::<bool>()), 2..60);
    runner(256)
        .run(&case, |pairs| {
            let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let s: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 10.0).collect();
            let base = auroc(&s, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&base));
            let maps: [fn(f64) -> f64; 4] = [|x| 3.0 * x + 1.0, f64::exp, f64::atan, |x| x * x * x + x];
            for f in maps {
                let t: Vec<f64> = s.iter().map(|&x| f(x)).collect();
                prop_assert_eq!(auroc(&t, &labels).unwrap(), base);
            }
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            prop_assert!((auroc(&s, &flipped).unwrap() - (1.0 - base)).abs() < 1e-12);
            Ok(())
        })
        .unwrap();
}

pub fn mc_inference_properties() {
    let mut m = Model::build(FcSpec::new(vec![4, 9, 3], advanced(0.0, 3.0), true), 2).unwrap();
    let x = gaussian_matrix(12, 4, 5);
    let passes = 17;
    let a = mc_infer(&mut m, &x, passes, 33).unwrap();
    let b = mc_infer(&mut m, &x, passes, 33).unwrap();
    assert_eq!(a, b, "same seed must give identical reports");

    // independent two-pass recomputation with the population (÷T) variance
    let mut noise = Noise::seeded(33);
    let probs: Vec<Tensor> = (0..passes)
        .map(|_| predict_all(&mut m, &x, Mode::Sample, &mut noise).unwrap().softmax_rows().unwrap())
        .collect();
    for j in 0..a.mean.numel() {
        let mean = probs.iter().map(|p| p.data()[j]).sum::<f64>() / passes as f64;
        let var = probs.iter().map(|p| (p.data()[j] - mean).powi(2)).sum::<f64>() / passes as f64;
        assert!((a.mean.data()[j] - mean).abs() < 1e-12);
        assert!((a.variance.data()[j] - var).abs() < 1e-12, "variance {j}: {} vs {var}", a.variance.data()[j]);
        assert!(a.variance.data()[j] >= 0.0);
    }
    let ln_c = 3f64.ln();
    for i in 0..x.shape()[0] {
        assert!(a.max_p[i] > 0.0 && a.max_p[i] <= 1.0);
        assert!(a.entropy[i] >= 0.0 && a.entropy[i] <= ln_c + 1e-12);
    }
}

fn small_prune_setup() -> (FcSpec, Dataset, Dataset, TrainConfig) {
    let ds = synthetic(SyntheticKind::TwoGaussians, 240, 7).unwrap();
    let (train, test) = split(&ds, 0.75, 1).unwrap();
    let spec = FcSpec::new(vec![2, 12, 10, 2], advanced(0.0, 3.0), false);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 30,
        seed: 4,
        ..Default::default()
    };
    (spec, train, test, cfg)
}

fn pruned_entries_are_zero(m: &Model) -> bool {
    m.masks().iter().enumerate().all(|(k, mask)| {
        mask.as_ref().map_or(true, |mask| {
            mask.data().iter().zip(m.params().value(k).data()).all(|(&keep, &w)| keep != 0.0 || w == 0.0)
        })
    })
}

pub fn pruning_invariants() {
    let (spec, train, test, cfg) = small_prune_setup();
    for gran in [Granularity::Node, Granularity::Parameter] {
        for method in [PruneMethod::Rate, PruneMethod::Random] {
            let mut m = Model::build(spec.clone(), 9).unwrap();
            let mut state = PruneState::new(&m, gran);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut fraction = state.kept_fraction();
            assert_eq!(fraction, 1.0);
            for _ in 0..3 {
                fit_with(&mut m, &train, Some(&test), &cfg, |_, model| {
                    assert!(pruned_entries_are_zero(model), "pruned weight revived during training");
                    Ok(())
                })
                .unwrap();
                let rates = advdrop::pruning::node_rates(&mut m, &train.features).unwrap();
                let next = prune_round(&mut m, &state, 10.0, method, Some(&rates), &mut rng).unwrap();
                for (old, new) in state.kept.iter().zip(&next.kept) {
                    assert!(old.iter().zip(new).all(|(&o, &n)| o || !n), "a pruned entry came back");
                }
                assert!(next.kept_fraction() < fraction, "kept fraction did not shrink");
                fraction = next.kept_fraction();
                state = next;
                reset_to_init(&mut m, &state).unwrap();
                for k in 0..m.params().len() {
                    let init = state.init.value(k).data();
                    let now = m.params().value(k).data();
                    let mask = m.mask(k).map(|t| t.data().to_vec());
                    for i in 0..now.len() {
                        let kept = mask.as_ref().map_or(true, |mk| mk[i] != 0.0);
                        let want = if kept { init[i] } else { 0.0 };
                        assert_eq!(now[i].to_bits(), want.to_bits(), "{}[{i}] after reset", m.params().get(k).name);
                    }
                }
            }
            install_masks(&mut m, &state).unwrap();
            assert!(pruned_entries_are_zero(&m));
        }
    }
}

pub fn unpruned_round_matches_plain_training() {
    let (spec, train, test, cfg) = small_prune_setup();
    let points = lottery_cycle(&spec, 9, &train, &test, &cfg, 1, 10.0, Granularity::Node, PruneMethod::Rate).unwrap();
    assert_eq!(points[0].kept_fraction, 1.0);
    let mut m = Model::build(spec, 9).unwrap();
    let rec = fit(&mut m, &train, Some(&test), &cfg).unwrap();
    assert_eq!(points[0].metric.to_bits(), rec.final_metric().unwrap().to_bits());
}

pub fn normalization_round_trip() {
    let case = (1usize..20, 1usize..6).prop_flat_map(|(n, d)| prop::collection::vec(-100.0f64..100.0, n * d).prop_map(move |v| (n, d, v)));
    runner(128)
        .run(&case, |(n, d, v)| {
            let x = Tensor::new(vec![n, d], v).unwrap();
            for norm in [Normalization::fit_zscore(&x).unwrap(), Normalization::Scale { factor: 255.0 }] {
                let back = norm.invert(&norm.apply(&x).unwrap()).unwrap();
                for (a, b) in x.data().iter().zip(back.data()) {
                    prop_assert!((a - b).abs() <= 1e-12, "{:?}: {} -> {}", norm, a, b);
                }
            }
            Ok(())
        })
        .unwrap();
}

pub fn split_partitions_rows() {
    runner(64)
        .run(&(4usize..200, 0.05f64..0.95, any::<u64>()), |(n, fraction, seed)| {
            let ids: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let ds = Dataset::new(gaussian_matrix(n, 2, seed), Targets::Values(ids)).unwrap();
            let Ok((tr, te)) = split(&ds, fraction, seed) else {
                return Ok(());
            };
            let mut seen: Vec<usize> = [&tr, &te]
                .iter()
                .flat_map(|d| match &d.targets {
                    Targets::Values(v) => v.iter().map(|&i| i as usize).collect::<Vec<_>>(),
                    _ => unreachable!(),
                })
                .collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            Ok(())
        })
        .unwrap();
}

pub fn loaders_are_pure() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("table.csv");
    std::fs::write(&csv, "a,b,y\n1.5,2,3\n-0.25,4e-3,5\n7,8,NaN\n9,10,11\n").unwrap();
    let schema = CsvSchema {
        missing: advdrop::data::MissingPolicy::DropRow,
        ..Default::default()
    };
    let a = load_csv(&csv, &TargetColumn::Name("y".into()), &schema).unwrap();
    let b = load_csv(&csv, &TargetColumn::Name("y".into()), &schema).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    assert!(a.features.all_finite());

    let (images, labels) = (dir.path().join("img"), dir.path().join("lbl"));
    let mut ib = vec![0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 2];
    ib.extend((0u8..12).map(|v| v * 21));
    std::fs::write(&images, ib).unwrap();
    std::fs::write(&labels, [0, 0, 8, 1, 0, 0, 0, 3, 4, 0, 9]).unwrap();
    let a = load_idx(&images, &labels).unwrap();
    let b = load_idx(&images, &labels).unwrap();
    let bits = |d: &Dataset| d.features.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.targets, b.targets);
    assert_eq!(a.raw_features().unwrap().data()[11], 231.0);
}
