use advdrop::dropout::Noise;
use advdrop::network::DropoutPolicy;
use advdrop::training::{sgvb_loss, LossKind, Sgd};
use advdrop::Graph;
use advdrop_bench::{mnist_batch, mnist_fc};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn step(c: &mut Criterion) {
    let batch = mnist_batch(256);
    let mut group = c.benchmark_group("sgd_step_784_800_800_10_b256");
    group.sample_size(10);
    for (name, policy) in [
        ("none", DropoutPolicy::None),
        ("bernoulli", DropoutPolicy::Bernoulli { p: 0.5 }),
        ("advanced", DropoutPolicy::default()),
    ] {
        let mut model = mnist_fc(policy);
        let mut sgd = Sgd::new();
        let mut noise = Noise::seeded(0);
        group.bench_function(name, |bench| {
            bench.iter(|| {
                let mut g = Graph::new();
                let vars = model.params().bind(&mut g, true);
                let (loss, _) = sgvb_loss(
                    &mut model,
                    &mut g,
                    &vars,
                    &batch.features,
                    &batch.targets,
                    LossKind::CrossEntropy,
                    &mut noise,
                )
                .unwrap();
                g.backward(loss).unwrap();
                let mut grads = vec![None; model.params().len()];
                for (k, t) in g.param_grads() {
                    grads[k] = Some(t.clone());
                }
                drop(g);
                let masks = model.masks().to_vec();
                sgd.step(model.params_mut(), &grads, &masks, 0.01, 0.9, 5e-4).unwrap();
                black_box(model.params().value(0).data()[0])
            })
        });
    }
    group.finish();
}

criterion_group!(benches, step);
criterion_main!(benches);
