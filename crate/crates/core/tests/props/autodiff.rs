//! Every graph op against central finite differences.

use advdrop::{Graph, Result, Tensor, Var};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn runner() -> TestRunner {
    TestRunner::new(Config {
        cases: 100,
        failure_persistence: None,
        ..Config::default()
    })
}

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Tensor::new(vec![rows, cols], v).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..5, 1usize..5)
}

/// Fixed weights that turn any output into a scalar `Σ w ⊙ out`.
fn weights(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |i| 0.3 + ((i * 7919) % 13) as f64 / 10.0)
}

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

fn scalar_of(g: &mut Graph, out: Var) -> Var {
    if g.value(out).numel() == 1 && g.value(out).ndim() == 0 {
        return out;
    }
    let w = g.constant(weights(g.value(out).shape()));
    let p = g.mul(out, w).unwrap();
    g.sum(p, None).unwrap()
}

fn eval(inputs: &[Tensor], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let s = scalar_of(&mut g, out);
    g.value(s).item().unwrap()
}

/// Compares analytic gradients of every input with central differences.
pub fn check(inputs: &[Tensor], build: &Build) -> std::result::Result<(), TestCaseError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars).unwrap();
    let s = scalar_of(&mut g, out);
    g.backward(s).unwrap();
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape().to_vec()));
        for i in 0..inputs[k].numel() {
            let mut up = inputs.to_vec();
            up[k].data_mut()[i] += H;
            let mut down = inputs.to_vec();
            down[k].data_mut()[i] -= H;
            let fd = (eval(&up, build) - eval(&down, build)) / (2.0 * H);
            let an = analytic.data()[i];
            // relative error, floored so entries near zero compare absolutely
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            prop_assert!(
                rel <= TOL,
                "input {k} entry {i}: analytic {an} vs numeric {fd}"
            );
        }
    }
    Ok(())
}

/// Keeps inputs away from the kinks of relu and clamp.
fn off_kink(t: Tensor, at: f64) -> Tensor {
    t.map(|v| if (v - at).abs() < 1e-3 { at + 0.1 } else { v })
}

pub fn unary_ops() {
    let cases: Vec<(&str, Box<Build>)> = vec![
        ("neg", Box::new(|g, v| Ok(g.neg(v[0])))),
        ("relu", Box::new(|g, v| Ok(g.relu(v[0])))),
        ("sigmoid", Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("softplus", Box::new(|g, v| Ok(g.softplus(v[0])))),
        ("exp", Box::new(|g, v| Ok(g.exp(v[0])))),
        ("ln", Box::new(|g, v| {
            let e = g.exp(v[0]);
            g.ln(e)
        })),
        ("scale", Box::new(|g, v| Ok(g.scale(v[0], -1.7)))),
        ("add_scalar", Box::new(|g, v| Ok(g.add_scalar(v[0], 0.4)))),
        ("clamp_min", Box::new(|g, v| Ok(g.clamp_min(v[0], 0.25)))),
        ("reshape", Box::new(|g, v| {
            let n = g.value(v[0]).numel();
            g.reshape(v[0], vec![n])
        })),
        ("sum_all", Box::new(|g, v| g.sum(v[0], None))),
        ("sum_rows", Box::new(|g, v| g.sum(v[0], Some(0)))),
        ("sum_cols", Box::new(|g, v| g.sum(v[0], Some(1)))),
        ("mean_all", Box::new(|g, v| g.mean(v[0], None))),
        ("mean_rows", Box::new(|g, v| g.mean(v[0], Some(0)))),
        ("mean_cols", Box::new(|g, v| g.mean(v[0], Some(1)))),
    ];
    for (name, build) in cases {
        runner()
            .run(&dims().prop_flat_map(|(r, c)| matrix(r, c, -2.0, 2.0)), |x| {
                let x = off_kink(off_kink(x, 0.0), 0.25);
                check(&[x], &*build)
            })
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

pub fn binary_ops() {
    let pair = || dims().prop_flat_map(|(r, c)| (matrix(r, c, -2.0, 2.0), matrix(r, c, -2.0, 2.0)));
    let same: Vec<(&str, Box<Build>)> = vec![
        ("add", Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", Box::new(|g, v| g.mul(v[0], v[1]))),
    ];
    for (name, build) in &same {
        runner()
            .run(&pair(), |(a, b)| check(&[a, b], &**build))
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        // scalar operand on either side
        runner()
            .run(&(dims().prop_flat_map(|(r, c)| matrix(r, c, -2.0, 2.0)), -2.0f64..2.0), |(a, s)| {
                check(&[a.clone(), Tensor::scalar(s)], &**build)?;
                check(&[Tensor::scalar(s), a], &**build)
            })
            .unwrap_or_else(|e| panic!("{name} (scalar): {e}"));
    }

    let mm = (1usize..4, 1usize..4, 1usize..4)
        .prop_flat_map(|(m, k, n)| (matrix(m, k, -1.5, 1.5), matrix(k, n, -1.5, 1.5), matrix(n, k, -1.5, 1.5)));
    runner()
        .run(&mm, |(a, b, bt)| {
            check(&[a.clone(), b], &|g, v| g.matmul(v[0], v[1]))?;
            check(&[a, bt], &|g, v| g.matmul_t(v[0], v[1]))
        })
        .unwrap_or_else(|e| panic!("matmul: {e}"));

    let rows = dims().prop_flat_map(|(n, k)| (matrix(n, k, -2.0, 2.0), prop::collection::vec(-2.0f64..2.0, k)));
    runner()
        .run(&rows, |(x, b)| {
            let n = x.shape()[0];
            let b = Tensor::from_vec(b);
            check(&[x, b.clone()], &|g, v| g.bias_add(v[0], v[1]))?;
            check(&[b], &move |g, v| g.broadcast_rows(v[0], n))
        })
        .unwrap_or_else(|e| panic!("bias_add/broadcast_rows: {e}"));
}

pub fn losses() {
    let cases = (1usize..5, 2usize..5).prop_flat_map(|(n, c)| {
        (
            matrix(n, c, -3.0, 3.0),
            prop::collection::vec(0..c, n),
            matrix(n, 1, -2.0, 2.0),
            matrix(n, 1, -2.0, 2.0),
        )
    });
    runner()
        .run(&cases, |(logits, labels, pred, target)| {
            check(&[logits], &move |g, v| g.softmax_cross_entropy(v[0], &labels))?;
            check(&[pred], &move |g, v| g.mse(v[0], &target))
        })
        .unwrap_or_else(|e| panic!("losses: {e}"));
}

/// Shared subexpressions accumulate gradients from every use.
pub fn fan_out() {
    runner()
        .run(&dims().prop_flat_map(|(r, c)| matrix(r, c, -1.0, 1.0)), |x| {
            check(&[x], &|g, v| {
                let s = g.sigmoid(v[0]);
                let p = g.mul(s, v[0])?;
                let q = g.add(p, s)?;
                g.mul(q, s)
            })
        })
        .unwrap_or_else(|e| panic!("fan-out: {e}"));
}

/// Backward touches each node once; forward values repeat bitwise.
pub fn visits_and_determinism() {
    runner()
        .run(&dims().prop_flat_map(|(r, c)| (matrix(r, c, -1.0, 1.0), matrix(c, r, -1.0, 1.0))), |(a, b)| {
            let build = |g: &mut Graph| -> Result<Var> {
                let x = g.leaf(a.clone(), true);
                let w = g.leaf(b.clone(), true);
                let h = g.matmul(x, w)?;
                let s = g.sigmoid(h);
                let t = g.softplus(s);
                let u = g.mul(s, t)?;
                g.mean(u, None)
            };
            let mut g1 = Graph::new();
            let l1 = build(&mut g1).unwrap();
            g1.backward(l1).unwrap();
            prop_assert_eq!(g1.visit_counts().len(), g1.len());
            prop_assert!(g1.visit_counts().iter().all(|&c| c == 1));
            let mut g2 = Graph::new();
            let l2 = build(&mut g2).unwrap();
            prop_assert_eq!(g1.value(l1).data()[0].to_bits(), g2.value(l2).data()[0].to_bits());
            Ok(())
        })
        .unwrap_or_else(|e| panic!("visits/determinism: {e}"));
}
