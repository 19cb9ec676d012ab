use super::*;
use crate::nn::check::{check_gradients, primitive_suite};
use crate::nn::{init_uniform, ParamRng};

fn t(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

#[test]
fn matmul_by_identity() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let a = g.input(t(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
    let i = g.input(t(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
    let m = g.matmul(a, i).unwrap();
    assert_eq!(g.value(m).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn softmax_values() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let z = g.input(Tensor::row(&[0.0, 0.0])).unwrap();
    let p = g.softmax(z, 1).unwrap();
    assert_eq!(g.value(p).data(), &[0.5, 0.5]);

    let mut rng = ParamRng::new(3).stream(0);
    let x = g.input(init_uniform(&mut rng, 5, 7, 30.0)).unwrap();
    for axis in [0, 1] {
        let p = g.softmax(x, axis).unwrap();
        let v = g.value(p);
        let (r, c) = (v.rows(), v.cols());
        let lanes: Vec<f64> = if axis == 1 {
            (0..r).map(|i| v.data()[i * c..(i + 1) * c].iter().sum()).collect()
        } else {
            (0..c).map(|j| (0..r).map(|i| v.data()[i * c + j]).sum()).collect()
        };
        assert!(lanes.iter().all(|s| (s - 1.0).abs() < 1e-12), "{lanes:?}");
    }
}

#[test]
fn cross_entropy_of_uniform_logits_is_log_v() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    for v in [2usize, 7, 100] {
        let z = g.input(Tensor::row(&vec![0.3; v])).unwrap();
        let l = g.cross_entropy(z, v - 1).unwrap();
        assert!((g.value(l).item() - (v as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn gradient_of_sum_is_ones_and_unused_params_get_zero() {
    let mut s = ParamStore::new();
    let p = s.add("p", t(&[&[1.0, -2.0], &[0.5, 4.0]]));
    let q = s.add("q", Tensor::row(&[9.0]));
    let mut g = Graph::new(&s);
    let pv = g.param(p);
    let l = g.sum(pv).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(p).data(), &[1.0; 4]);
    assert_eq!(grads.get(q).data(), &[0.0]);
}

#[test]
fn shape_errors() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let a = g.input(Tensor::zeros(2, 3)).unwrap();
    let b = g.input(Tensor::zeros(2, 3)).unwrap();
    assert!(matches!(g.matmul(a, b), Err(NnError::ShapeMismatch { .. })));
    let c = g.input(Tensor::zeros(3, 2)).unwrap();
    assert!(g.add(a, c).is_err());
    assert!(g.concat(&[a, c], 0).is_err());
    assert!(g.slice(a, 1, 2, 2).is_err());
    assert!(g.cross_entropy(a, 0).is_err());
    assert!(g.embedding(a, &[2]).is_err());
}

#[test]
fn non_finite_values_raise() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let z = g.input(Tensor::row(&[0.0, 1.0])).unwrap();
    assert_eq!(g.log(z), Err(NnError::NonFiniteValue { op: "log" }));
    let big = g.input(Tensor::row(&[1000.0])).unwrap();
    assert_eq!(g.exp(big), Err(NnError::NonFiniteValue { op: "exp" }));
    assert!(g.input(Tensor::row(&[f64::NAN])).is_err());
}

fn gru_store(i: usize, h: usize, seed: u64, scale: f64) -> (ParamStore, [ParamId; 6]) {
    let r = ParamRng::new(seed);
    let mut s = ParamStore::new();
    let shapes = [(1, i), (1, h), (i, 3 * h), (h, 3 * h), (1, 3 * h), (1, 3 * h)];
    let names = ["x", "h", "w_x", "w_h", "b_x", "b_h"];
    let ids: Vec<ParamId> = shapes
        .iter()
        .zip(names)
        .enumerate()
        .map(|(k, (&(a, b), n))| s.add(n, init_uniform(&mut r.stream(k as u64), a, b, scale)))
        .collect();
    (s, ids.try_into().unwrap())
}

#[test]
fn gru_with_zero_weights_halves_the_state() {
    // r = z = σ(0) = 1/2, n = tanh(0) = 0, so h' = (1 - 1/2)·0 + 1/2·h.
    let (mut s, ids) = gru_store(3, 4, 1, 1.0);
    for &id in &ids[2..] {
        s.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let mut g = Graph::new(&s);
    let v: Vec<Var> = ids.iter().map(|&i| g.param(i)).collect();
    let h2 = g.gru_cell(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
    let expected: Vec<f64> = s.get(ids[1]).data().iter().map(|x| 0.5 * x).collect();
    assert_eq!(g.value(h2).data(), expected.as_slice());
}

#[test]
fn saturated_update_gate_copies_the_state() {
    let (mut s, ids) = gru_store(3, 4, 2, 1.0);
    let b_x = s.get_mut(ids[4]).data_mut();
    b_x[4..8].iter_mut().for_each(|x| *x = 60.0);
    let mut g = Graph::new(&s);
    let v: Vec<Var> = ids.iter().map(|&i| g.param(i)).collect();
    let h2 = g.gru_cell(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
    for (a, b) in g.value(h2).data().iter().zip(s.get(ids[1]).data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

/// The same cell assembled from primitives.
fn gru_composed(g: &mut Graph, v: &[Var], hd: usize) -> Result<Var, NnError> {
    let gx = g.matmul(v[0], v[2])?;
    let gx = g.add(gx, v[4])?;
    let gh = g.matmul(v[1], v[3])?;
    let gh = g.add(gh, v[5])?;
    let part = |g: &mut Graph, t: Var, k: usize| g.slice(t, 1, k * hd, hd);
    let (xr, xz, xn) = (part(g, gx, 0)?, part(g, gx, 1)?, part(g, gx, 2)?);
    let (hr, hz, hn) = (part(g, gh, 0)?, part(g, gh, 1)?, part(g, gh, 2)?);
    let r = g.add(xr, hr)?;
    let r = g.sigmoid(r)?;
    let z = g.add(xz, hz)?;
    let z = g.sigmoid(z)?;
    let rn = g.mul(r, hn)?;
    let n = g.add(xn, rn)?;
    let n = g.tanh(n)?;
    let keep = g.one_minus(z)?;
    let a = g.mul(keep, n)?;
    let b = g.mul(z, v[1])?;
    g.add(a, b)
}

#[test]
fn fused_gru_matches_composed_gru() {
    let (s, ids) = gru_store(5, 6, 9, 0.8);
    let mix = init_uniform(&mut ParamRng::new(10).stream(0), 1, 6, 1.0);
    let run = |fused: bool| {
        let mut g = Graph::new(&s);
        let v: Vec<Var> = ids.iter().map(|&i| g.param(i)).collect();
        let out = if fused {
            g.gru_cell(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap()
        } else {
            gru_composed(&mut g, &v, 6).unwrap()
        };
        let m = g.input(mix.clone()).unwrap();
        let w = g.mul(out, m).unwrap();
        let l = g.sum(w).unwrap();
        (g.value(out).clone(), g.backward(l).unwrap())
    };
    let (fo, fg) = run(true);
    let (co, cg) = run(false);
    for (a, b) in fo.data().iter().zip(co.data()) {
        assert!((a - b).abs() < 1e-14);
    }
    for id in ids {
        for (a, b) in fg.get(id).data().iter().zip(cg.get(id).data()) {
            assert!((a - b).abs() < 1e-12, "{} {a} {b}", s.name(id));
        }
    }
}

#[test]
fn every_primitive_passes_gradient_check() {
    for (name, report) in primitive_suite(42, 20).unwrap() {
        assert_eq!(report.coordinates, 20);
        assert!(report.max_rel_error < 1e-4, "{name}: {report:?}");
    }
}

#[test]
fn recurrent_chain_gradient_check() {
    // Unrolled cell over several steps, shared weights.
    let (s, ids) = gru_store(4, 5, 21, 0.7);
    let loss = |s: &ParamStore| -> Result<(f64, Gradients), NnError> {
        let mut g = Graph::new(s);
        let v: Vec<Var> = ids.iter().map(|&i| g.param(i)).collect();
        let mut h = v[1];
        for _ in 0..4 {
            h = g.gru_cell(v[0], h, v[2], v[3], v[4], v[5])?;
        }
        let l = g.cross_entropy(h, 2)?;
        Ok((g.value(l).item(), g.backward(l)?))
    };
    let (_, grads) = loss(&s).unwrap();
    let rep = check_gradients(&s, &grads, 40, 5, |p| loss(p).map(|x| x.0)).unwrap();
    assert!(rep.max_rel_error < 1e-4, "{rep:?}");
}

#[test]
fn backward_is_deterministic() {
    let a = primitive_suite(7, 20).unwrap();
    let b = primitive_suite(7, 20).unwrap();
    assert_eq!(a, b);
}
