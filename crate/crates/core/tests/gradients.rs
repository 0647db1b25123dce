mod common;

use art_core::head::MinScope;
use art_core::tensor::{finite_difference_gradient, relative_error, Graph, Parameter, ParamStore, Tensor};
use art_core::ArtError;
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape, v.to_vec()).unwrap()
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
    let b = g.constant(t(&[2, 1], &[3.0, 4.0]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[11.0]);

    let x = g.constant(Tensor::zeros(&[2, 3]));
    let y = g.constant(Tensor::zeros(&[4, 5]));
    assert!(matches!(g.matmul(x, y), Err(ArtError::Shape { .. })));
}

#[test]
fn softmax_and_sigmoid_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2], &[0.0, 3f64.ln()]));
    let s = g.softmax(x, 0).unwrap();
    let v = g.value(s).data();
    assert!((v[0] - 0.25).abs() < 1e-12 && (v[1] - 0.75).abs() < 1e-12);

    let big = g.constant(t(&[2], &[1000.0, 1000.0]));
    let s = g.softmax(big, 0).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);

    let z = g.constant(t(&[1], &[3f64.ln()]));
    let s = g.sigmoid(z);
    assert!((g.value(s).item() - 0.75).abs() < 1e-12);
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::new();
    store.insert("p", t(&[2], &[1.0, 2.0])).unwrap();
    store.insert("unused", t(&[3], &[1.0, 1.0, 1.0])).unwrap();
    let mut g = Graph::new();
    let p = g.param_by_name(&store, "p").unwrap();
    let _ = g.param_by_name(&store, "unused").unwrap();
    let sq = g.mul(p, p).unwrap();
    let s = g.sum(sq);
    let loss = g.scale(s, 0.5);
    let grads = g.backward(loss).unwrap().param_grads(&g, store.len());
    assert_eq!(grads[0].as_deref(), Some(&[1.0, 2.0][..]));
    assert!(grads[1].as_ref().map_or(true, |v| v.iter().all(|&x| x == 0.0)));

    assert!(g.backward(sq).is_err());
}

#[test]
fn finite_difference_of_square() {
    let p = Parameter::new("x", t(&[1], &[3.0]));
    let fd = finite_difference_gradient(|x| x.data()[0] * x.data()[0], &p, 1e-5);
    assert!((fd.data()[0] - 6.0).abs() < 1e-6);
}

/// Each differentiable op against central differences of `Σ c ⊙ op(x)`.
#[test]
fn every_op_matches_finite_differences() {
    type Op = fn(&mut Graph, art_core::tensor::Var) -> art_core::tensor::Var;
    let ops: Vec<(&str, &[usize], Op)> = vec![
        ("matmul", &[3, 4], |g, x| {
            let w = g.constant(Tensor::new(&[4, 2], (0..8).map(|i| 0.3 * i as f64 - 1.0).collect()).unwrap());
            g.matmul(x, w).unwrap()
        }),
        ("mul", &[3, 4], |g, x| g.mul(x, x).unwrap()),
        ("sub", &[3, 4], |g, x| {
            let y = g.scale(x, 0.5);
            g.sub(y, x).unwrap()
        }),
        ("add_bias", &[3, 4], |g, x| {
            let b = g.mean_axis(x, 0).unwrap();
            g.add_bias(x, b).unwrap()
        }),
        ("sum_axis", &[3, 4], |g, x| g.sum_axis(x, 1).unwrap()),
        ("softmax", &[3, 4], |g, x| g.softmax(x, 1).unwrap()),
        ("masked_softmax", &[2, 3], |g, x| {
            g.masked_softmax(x, 1, &[true, false, true, true, true, false]).unwrap()
        }),
        ("sigmoid", &[3, 4], |g, x| g.sigmoid(x)),
        ("gelu", &[3, 4], |g, x| g.gelu(x)),
        ("norm_last", &[3, 4], |g, x| g.norm_last(x).unwrap()),
        ("permute", &[2, 3, 2], |g, x| {
            let y = g.permute(x, &[2, 0, 1]).unwrap();
            g.mul(y, y).unwrap()
        }),
        ("transpose01", &[3, 4], |g, x| {
            let y = g.transpose01(x).unwrap();
            g.sigmoid(y)
        }),
        ("expand", &[3, 4], |g, x| {
            let y = g.expand(x, 1, 3).unwrap();
            g.gelu(y)
        }),
        ("concat", &[3, 4], |g, x| {
            let y = g.sigmoid(x);
            g.concat(&[x, y], 1).unwrap()
        }),
        ("cumsum", &[3, 4], |g, x| {
            let y = g.cumsum(x, 1).unwrap();
            g.mul(y, y).unwrap()
        }),
        ("min_axis", &[3, 4], |g, x| g.min_axis(x, 1).unwrap()),
        ("reshape", &[3, 4], |g, x| {
            let y = g.reshape(x, &[2, 6]).unwrap();
            g.softmax(y, 1).unwrap()
        }),
    ];
    for (i, (name, shape, op)) in ops.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let mut store = ParamStore::new();
        store.insert("x", uniform(shape, 1.5, &mut rng)).unwrap();
        let report = probe_gradients(&store, 12, i as u64, |s| {
            let mut g = Graph::new();
            let x = g.param_by_name(s, "x")?;
            let y = op(&mut g, x);
            let loss = weighted_sum(&mut g, y, 99)?;
            let grads = g.backward(loss)?;
            Ok((g.value(loss).item(), grads.param_grads(&g, s.len())))
        });
        assert!(report.max_rel_err < FD_TOL, "{name}: {report:?}");
    }
}

#[test]
fn relative_error_floor() {
    assert_eq!(relative_error(1e-12, 0.0, 1e-6), 1e-6);
    assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
}

#[test]
fn relation_graph_gradients() {
    let r = targ_suite(120, 11);
    assert!(r.max_rel_err < FD_TOL, "{r:?}");
}

#[test]
fn relational_transformer_gradients() {
    let r = rt_suite(120, 12);
    assert!(r.max_rel_err < FD_TOL, "{r:?}");
}

#[test]
fn prediction_head_gradients() {
    for scope in [MinScope::PerStep, MinScope::PerTrajectory] {
        let r = head_suite(120, 13, scope);
        assert!(r.max_rel_err < FD_TOL, "{scope}: {r:?}");
    }
}

#[test]
fn full_model_gradients() {
    let r = model_suite(120, 14);
    assert!(r.max_rel_err < FD_TOL, "{r:?}");
}
