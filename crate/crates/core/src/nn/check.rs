//! Finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{init_uniform, Gradients, Graph, NnError, ParamId, ParamStore, Tensor, Var};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is (numerically) zero compare on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// (parameter name, flat index, analytic, numeric) at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` at `coords`
/// coordinates drawn uniformly over all parameter values.
pub fn check_gradients(
    store: &ParamStore,
    analytic: &Gradients,
    coords: usize,
    seed: u64,
    loss: impl Fn(&ParamStore) -> Result<f64, NnError>,
) -> Result<GradCheckReport, NnError> {
    let total = store.num_values();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        coordinates: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for _ in 0..coords {
        let mut flat = rng.gen_range(0..total);
        let mut id = ParamId(0);
        for pid in store.ids() {
            let n = store.get(pid).len();
            if flat < n {
                id = pid;
                break;
            }
            flat -= n;
        }
        let orig = store.get(id).data()[flat];
        probe.get_mut(id).data_mut()[flat] = orig + FD_STEP;
        let up = loss(&probe)?;
        probe.get_mut(id).data_mut()[flat] = orig - FD_STEP;
        let down = loss(&probe)?;
        probe.get_mut(id).data_mut()[flat] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic.get(id).data()[flat];
        let err = relative_error(a, numeric);
        report.coordinates += 1;
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((store.name(id).to_string(), flat, a, numeric));
        }
    }
    Ok(report)
}

type Build = fn(&mut Graph, &[Var]) -> Result<Var, NnError>;

struct Case {
    name: &'static str,
    shapes: &'static [(usize, usize)],
    positive: bool,
    build: Build,
}

const CASES: &[Case] = &[
    Case { name: "matmul", shapes: &[(3, 4), (4, 5)], positive: false, build: |g, p| g.matmul(p[0], p[1]) },
    Case { name: "add", shapes: &[(4, 5), (4, 5)], positive: false, build: |g, p| g.add(p[0], p[1]) },
    Case { name: "sub", shapes: &[(4, 5), (4, 5)], positive: false, build: |g, p| g.sub(p[0], p[1]) },
    Case { name: "mul", shapes: &[(4, 5), (4, 5)], positive: false, build: |g, p| g.mul(p[0], p[1]) },
    Case { name: "scale_by", shapes: &[(1, 1), (4, 6)], positive: false, build: |g, p| g.scale_by(p[0], p[1]) },
    Case { name: "scale", shapes: &[(4, 6)], positive: false, build: |g, p| g.scale(p[0], -1.7) },
    Case { name: "one_minus", shapes: &[(4, 6)], positive: false, build: |g, p| g.one_minus(p[0]) },
    Case { name: "tanh", shapes: &[(4, 6)], positive: false, build: |g, p| g.tanh(p[0]) },
    Case { name: "sigmoid", shapes: &[(4, 6)], positive: false, build: |g, p| g.sigmoid(p[0]) },
    Case { name: "exp", shapes: &[(4, 6)], positive: false, build: |g, p| g.exp(p[0]) },
    Case { name: "log", shapes: &[(4, 6)], positive: true, build: |g, p| g.log(p[0]) },
    Case { name: "concat_rows", shapes: &[(2, 5), (3, 5)], positive: false, build: |g, p| g.concat(&[p[0], p[1]], 0) },
    Case { name: "concat_cols", shapes: &[(4, 2), (4, 5)], positive: false, build: |g, p| g.concat(&[p[0], p[1]], 1) },
    Case { name: "slice_rows", shapes: &[(6, 5)], positive: false, build: |g, p| g.slice(p[0], 0, 1, 3) },
    Case { name: "slice_cols", shapes: &[(5, 6)], positive: false, build: |g, p| g.slice(p[0], 1, 2, 3) },
    Case { name: "transpose", shapes: &[(4, 6)], positive: false, build: |g, p| g.transpose(p[0]) },
    Case { name: "softmax_rows", shapes: &[(4, 6)], positive: false, build: |g, p| g.softmax(p[0], 1) },
    Case { name: "softmax_cols", shapes: &[(4, 6)], positive: false, build: |g, p| g.softmax(p[0], 0) },
    Case { name: "embedding", shapes: &[(6, 5)], positive: false, build: |g, p| g.embedding(p[0], &[3, 0, 3, 5]) },
    Case { name: "cross_entropy", shapes: &[(1, 24)], positive: false, build: |g, p| g.cross_entropy(p[0], 7) },
    Case { name: "sum", shapes: &[(4, 6)], positive: false, build: |g, p| g.sum(p[0]) },
    Case { name: "scatter_add", shapes: &[(1, 24)], positive: false, build: |g, p| {
        let idx: Vec<usize> = (0..24).map(|i| (i * 7) % 9).collect();
        g.scatter_add(p[0], &idx, 10)
    } },
    Case { name: "gru_cell", shapes: &[(1, 4), (1, 5), (4, 15), (5, 15), (1, 15), (1, 15)], positive: false, build: |g, p| {
        g.gru_cell(p[0], p[1], p[2], p[3], p[4], p[5])
    } },
    Case { name: "three_layer", shapes: &[(1, 6), (6, 8), (1, 8), (8, 7), (7, 5)], positive: false, build: |g, p| {
        let a = g.matmul(p[0], p[1])?;
        let a = g.add(a, p[2])?;
        let a = g.tanh(a)?;
        let b = g.matmul(a, p[3])?;
        let b = g.sigmoid(b)?;
        let c = g.matmul(b, p[4])?;
        let s = g.softmax(c, 1)?;
        let l = g.log(s)?;
        let e = g.exp(l)?;
        g.mul(e, c)
    } },
];

pub fn primitive_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

fn case_loss(case: &Case, store: &ParamStore, ids: &[ParamId], mix: &Tensor) -> Result<(f64, Gradients), NnError> {
    let mut g = Graph::new(store);
    let vars: Vec<Var> = ids.iter().map(|&i| g.param(i)).collect();
    let out = (case.build)(&mut g, &vars)?;
    let w = g.input(mix.clone())?;
    let weighted = g.mul(out, w)?;
    let loss = g.sum(weighted)?;
    Ok((g.value(loss).item(), g.backward(loss)?))
}

/// Runs a gradient check for every primitive (plus the fused GRU cell and a
/// small three-layer graph). The loss of each case is `sum(op(params) ⊙ M)`
/// with a fixed random `M`, so every output coordinate matters.
pub fn primitive_suite(seed: u64, coords: usize) -> Result<Vec<(&'static str, GradCheckReport)>, NnError> {
    let mut results = Vec::new();
    for (ci, case) in CASES.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (ci as u64).wrapping_mul(0x9E37_79B9));
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = case
            .shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                let mut t = init_uniform(&mut rng, r, c, 1.0);
                if case.positive {
                    t.data_mut().iter_mut().for_each(|x| *x = 1.25 + 0.75 * *x);
                }
                store.add(format!("p{i}"), t)
            })
            .collect();
        let out_shape = {
            let mut g = Graph::new(&store);
            let vars: Vec<Var> = ids.iter().map(|&i| g.param(i)).collect();
            let out = (case.build)(&mut g, &vars)?;
            (g.value(out).rows(), g.value(out).cols())
        };
        let mix = init_uniform(&mut rng, out_shape.0, out_shape.1, 1.0);
        let (_, analytic) = case_loss(case, &store, &ids, &mix)?;
        let report = check_gradients(&store, &analytic, coords, seed + ci as u64, |s| {
            case_loss(case, s, &ids, &mix).map(|(l, _)| l)
        })?;
        results.push((case.name, report));
    }
    Ok(results)
}
