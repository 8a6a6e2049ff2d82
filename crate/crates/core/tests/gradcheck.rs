//! Central finite differences against the reverse sweep.

use nas_core::autodiff::{Graph, Var};
use nas_core::data::{generate_dataset, DatasetKind, DatasetSpec};
use nas_core::discretize::projection_margin;
use nas_core::regularize::{AdmmConfig, AdmmState, ProximityConfig};
use nas_core::search::{alpha_objective, weight_gradient, Regularizer};
use nas_core::space::{ActivationMode, AlphaStore, OpKind, SearchSpaceConfig};
use nas_core::supernet::Supernet;
use nas_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = dyn Fn(&mut Graph, &[Var]) -> Var;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(1e-12, f64::max);
    diff / scale
}

/// Reduces `y` to a scalar with fixed, non-uniform weights.
fn reduce(g: &mut Graph, y: Var) -> Var {
    let n = g.value(y).len();
    if n == 1 {
        return y;
    }
    let w = (0..n).map(|i| (i as f64 * 1.3 + 0.7).sin()).collect();
    let m = g.mul_const(y, w).unwrap();
    g.sum_all(m).unwrap()
}

fn value(build: &Build, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let y = build(&mut g, &vars);
    let out = reduce(&mut g, y);
    g.value(out).data()[0]
}

/// Worst relative error over all inputs.
fn check(build: &Build, inputs: &[Tensor], eps: f64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(&t.clone().param())).collect();
    let y = build(&mut g, &vars);
    let out = reduce(&mut g, y);
    g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[i]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        let mut numeric = vec![0.0; t.len()];
        for (k, n) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= eps;
            *n = (value(build, &plus) - value(build, &minus)) / (2.0 * eps);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Values in `[-2, 2]` kept at least `gap` away from each point in `avoid`.
fn tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, avoid: &[f64], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(-2.0..2.0);
            if avoid.iter().all(|a| (v - a).abs() > gap) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

const INSTANCES: usize = 100;
const TOL: f64 = 1e-6;

fn run_primitive(name: &str, mut make: impl FnMut(&mut ChaCha8Rng) -> (Box<Build>, Vec<Tensor>)) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (build, inputs) = make(&mut rng);
        worst = worst.max(check(build.as_ref(), &inputs, 1e-6));
    }
    assert!(worst <= TOL, "{name}: worst relative error {worst:e}");
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5))
}

#[test]
fn affine_matches_fd() {
    run_primitive("affine", |rng| {
        let (r, i) = dims(rng);
        let o = rng.random_range(1..5);
        let bias = rng.random_bool(0.5);
        let mut inputs = vec![tensor(rng, vec![r, i], &[], 0.0), tensor(rng, vec![i, o], &[], 0.0)];
        if bias {
            inputs.push(tensor(rng, vec![o], &[], 0.0));
        }
        let b: Box<Build> = Box::new(move |g, v| g.affine(v[0], v[1], v.get(2).copied()).unwrap());
        (b, inputs)
    });
}

#[test]
fn elementwise_activations_match_fd() {
    run_primitive("relu", |rng| {
        let (r, c) = dims(rng);
        (Box::new(|g, v| g.relu(v[0]).unwrap()), vec![tensor(rng, vec![r, c], &[0.0], 1e-2)])
    });
    run_primitive("tanh", |rng| {
        let (r, c) = dims(rng);
        (Box::new(|g, v| g.tanh(v[0]).unwrap()), vec![tensor(rng, vec![r, c], &[], 0.0)])
    });
    run_primitive("clip", |rng| {
        let (r, c) = dims(rng);
        (Box::new(|g, v| g.clip(v[0], -0.5, 0.5).unwrap()), vec![tensor(rng, vec![r, c], &[-0.5, 0.5], 1e-2)])
    });
}

#[test]
fn products_match_fd() {
    run_primitive("mul", |rng| {
        let (r, c) = dims(rng);
        let inputs = vec![tensor(rng, vec![r, c], &[], 0.0), tensor(rng, vec![r, c], &[], 0.0)];
        (Box::new(|g, v| g.mul(v[0], v[1]).unwrap()), inputs)
    });
    run_primitive("mul_const", |rng| {
        let (r, c) = dims(rng);
        let k: Vec<f64> = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        (Box::new(move |g, v| g.mul_const(v[0], k.clone()).unwrap()), vec![tensor(rng, vec![r, c], &[], 0.0)])
    });
    run_primitive("scale", |rng| {
        let (r, c) = dims(rng);
        let n = rng.random_range(1..6);
        let idx = rng.random_range(0..n);
        let inputs = vec![tensor(rng, vec![r, c], &[], 0.0), tensor(rng, vec![1, n], &[], 0.0)];
        (Box::new(move |g, v| g.scale(v[0], v[1], idx).unwrap()), inputs)
    });
}

#[test]
fn normalizations_match_fd() {
    run_primitive("softmax_rows", |rng| {
        let (r, c) = dims(rng);
        (Box::new(|g, v| g.softmax_rows(v[0]).unwrap()), vec![tensor(rng, vec![r, c + 1], &[], 0.0)])
    });
    run_primitive("batch_norm", |rng| {
        let r = rng.random_range(3..7);
        let c = rng.random_range(1..4);
        (Box::new(|g, v| g.batch_norm(v[0], 1e-5).unwrap()), vec![tensor(rng, vec![r, c], &[], 0.0)])
    });
    run_primitive("cross_entropy", |rng| {
        let (r, c) = dims(rng);
        let labels: Vec<usize> = (0..r).map(|_| rng.random_range(0..c + 1)).collect();
        (Box::new(move |g, v| g.cross_entropy(v[0], &labels).unwrap()), vec![tensor(rng, vec![r, c + 1], &[], 0.0)])
    });
}

#[test]
fn structural_ops_match_fd() {
    run_primitive("add_n", |rng| {
        let (r, c) = dims(rng);
        let k = rng.random_range(1..4);
        let inputs = (0..k).map(|_| tensor(rng, vec![r, c], &[], 0.0)).collect();
        (Box::new(|g, v| g.add_n(v).unwrap()), inputs)
    });
    run_primitive("concat_cols", |rng| {
        let r = rng.random_range(1..4);
        let k = rng.random_range(1..4);
        let inputs = (0..k).map(|_| {
            let c = rng.random_range(1..4);
            tensor(rng, vec![r, c], &[], 0.0)
        });
        (Box::new(|g, v| g.concat_cols(v).unwrap()), inputs.collect())
    });
    run_primitive("chain", |rng| {
        let (r, i) = dims(rng);
        let inputs = vec![tensor(rng, vec![r, i], &[], 0.0), tensor(rng, vec![i, 3], &[], 0.0)];
        (
            Box::new(|g, v| {
                let h = g.affine(v[0], v[1], None).unwrap();
                let t = g.tanh(h).unwrap();
                let s = g.softmax_rows(t).unwrap();
                g.mul(s, t).unwrap()
            }),
            inputs,
        )
    });
}

fn small_space(mode: ActivationMode, states: usize) -> SearchSpaceConfig {
    let mut ops = vec![OpKind::None, OpKind::Skip, OpKind::AffineTanh, OpKind::AvgProj];
    if mode == ActivationMode::Crb {
        ops.remove(0);
    }
    SearchSpaceConfig { num_states: states, operators: ops, state_width: 3, cells: 2, activation: mode, ..Default::default() }
}

#[test]
fn weight_gradient_matches_fd() {
    let data = generate_dataset(&DatasetSpec { kind: DatasetKind::Blobs, size: 12, noise: 0.5, ..Default::default() }).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, y) = data.batch(&idx);
    for (seed, mode) in [(1, ActivationMode::Softmax), (2, ActivationMode::Crb)] {
        let (mut net, alpha) = Supernet::build(&small_space(mode, 2), seed).unwrap();
        let (_, grad) = weight_gradient(&mut net, &alpha, &x, &y).unwrap();
        let loss_at = |net: &Supernet| {
            let (g, _, l) = net.loss(&alpha, &x, &y, false, false).unwrap();
            g.value(l).data()[0]
        };
        let mut numeric = Vec::with_capacity(grad.len());
        let eps = 1e-6;
        for t in 0..net.params.tensors.len() {
            for k in 0..net.params.tensors[t].len() {
                let orig = net.params.tensors[t].data()[k];
                net.params.tensors[t].data_mut()[k] = orig + eps;
                let p = loss_at(&net);
                net.params.tensors[t].data_mut()[k] = orig - eps;
                let m = loss_at(&net);
                net.params.tensors[t].data_mut()[k] = orig;
                numeric.push((p - m) / (2.0 * eps));
            }
        }
        let err = rel_err(&grad, &numeric);
        assert!(err < 1e-5, "{mode:?}: relative error {err:e}");
    }
}

fn random_alpha(rng: &mut ChaCha8Rng, space: &SearchSpaceConfig) -> AlphaStore {
    let layout = space.layout();
    loop {
        let raw: Vec<Vec<f64>> = (0..space.num_cell_types)
            .map(|_| {
                (0..layout.len())
                    .map(|_| match space.activation {
                        ActivationMode::Softmax => rng.random_range(-2.0..2.0),
                        ActivationMode::Crb => rng.random_range(0.02..0.98),
                    })
                    .collect()
            })
            .collect();
        let store = AlphaStore::from_raw(layout.clone(), space.activation, raw).unwrap();
        if projection_margin(&layout, &store.activate().cells) >= 1e-3 {
            return store;
        }
    }
}

#[test]
fn alpha_objective_matches_fd() {
    let data = generate_dataset(&DatasetSpec { size: 16, ..Default::default() }).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, y) = data.batch(&idx);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..12 {
        let mode = if trial % 2 == 0 { ActivationMode::Softmax } else { ActivationMode::Crb };
        let space = small_space(mode, 1 + trial % 3);
        let (net, _) = Supernet::build(&space, trial as u64).unwrap();
        let alpha = random_alpha(&mut rng, &space);
        let regs = [
            (Regularizer::Proximity(ProximityConfig::default()), 0.25),
            (Regularizer::Proximity(ProximityConfig { squared: true, ..Default::default() }), 1.0),
            (Regularizer::Admm(AdmmState::init(&alpha.activate(), AdmmConfig::default()).unwrap()), 1.0),
        ];
        for (reg, c) in regs {
            let obj = alpha_objective(&net, &alpha, &x, &y, &reg, c).unwrap();
            let analytic: Vec<f64> = obj.grad.concat();
            let mut numeric = Vec::new();
            let eps = 1e-6;
            for ct in 0..alpha.cell_types() {
                for k in 0..alpha.layout.len() {
                    let mut a = alpha.clone();
                    a.raw[ct].data_mut()[k] += eps;
                    let p = alpha_objective(&net, &a, &x, &y, &reg, c).unwrap().value();
                    a.raw[ct].data_mut()[k] -= 2.0 * eps;
                    let m = alpha_objective(&net, &a, &x, &y, &reg, c).unwrap().value();
                    numeric.push((p - m) / (2.0 * eps));
                }
            }
            let err = rel_err(&analytic, &numeric);
            assert!(err < 1e-5, "trial {trial} {reg:?}: relative error {err:e}");
        }
    }
}
