use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::corpus::{BOS, EOS, PAD, UNK};
use crate::nn::{Graph, Var};

use super::net::{self, Session};
use super::{name_of, Model, ModelError, Prepared, Suggestion};

/// Tokens that are never emitted. EOS is additionally barred at the first
/// step so every name has at least one sub-token.
fn allowed(token: usize, step: usize) -> bool {
    !(token == PAD || token == BOS || token == UNK || (token == EOS && step == 0))
}

struct Hyp {
    tokens: Vec<usize>,
    logp: f64,
    state: Var,
}

struct Done {
    tokens: Vec<usize>,
    logp: f64,
}

fn suggestion(model: &Model, p: &Prepared, d: &Done) -> Suggestion {
    let sub_tokens: Vec<String> = d.tokens.iter().map(|&t| model.ext_token(p, t).to_string()).collect();
    Suggestion {
        name: name_of(&sub_tokens),
        score: d.logp / d.tokens.len().max(1) as f64,
        sub_tokens,
    }
}

fn decode(model: &Model, g: &mut Graph, s: &Session, prev: usize, state: Var) -> Result<(Var, Vec<f64>), ModelError> {
    let out = net::step(&model.ids, g, s, prev, state)?;
    let probs = net::step_probs(g, &out)?;
    Ok((out.state, probs))
}

fn run(model: &Model, p: &Prepared, width: usize) -> Result<Vec<Done>, ModelError> {
    let mut g = Graph::new(&model.params);
    let session = net::start(&model.ids, &model.config, &mut g, p)?;
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        logp: 0.0,
        state: session.init,
    }];
    let mut done = Vec::new();
    for step in 0..model.config.max_output_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (hi, h) in live.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let (state, probs) = decode(model, &mut g, &session, prev, h.state)?;
            states.push(state);
            for (w, &pw) in probs.iter().enumerate() {
                if allowed(w, step) && pw > 0.0 {
                    cands.push((h.logp + pw.ln(), hi, w));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(width);
        let mut next = Vec::with_capacity(cands.len());
        for (logp, hi, w) in cands {
            let tokens = live[hi].tokens.clone();
            if w == EOS {
                done.push(Done { tokens, logp });
            } else {
                let mut tokens = tokens;
                tokens.push(w);
                next.push(Hyp {
                    tokens,
                    logp,
                    state: states[hi],
                });
            }
        }
        live = next;
        if done.len() >= width || live.is_empty() {
            break;
        }
    }
    done.extend(live.into_iter().map(|h| Done {
        tokens: h.tokens,
        logp: h.logp,
    }));
    Ok(done)
}

fn rank(model: &Model, p: &Prepared, done: &[Done]) -> Vec<Suggestion> {
    let mut best: BTreeMap<String, Suggestion> = BTreeMap::new();
    for d in done.iter().filter(|d| !d.tokens.is_empty()) {
        let s = suggestion(model, p, d);
        match best.get(&s.name) {
            Some(prev) if prev.score >= s.score => {}
            _ => {
                best.insert(s.name.clone(), s);
            }
        }
    }
    let mut out: Vec<Suggestion> = best.into_values().collect();
    out.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.name.cmp(&b.name),
        o => o,
    });
    out
}

/// Beam search of width `k`. If different token paths collapse onto the same
/// name and fewer than `k` distinct names remain, the beam is widened (up to
/// `8k`) and the search rerun.
pub(crate) fn search(model: &Model, p: &Prepared, k: usize) -> Result<Vec<Suggestion>, ModelError> {
    let mut width = k;
    loop {
        let mut ranked = rank(model, p, &run(model, p, width)?);
        if ranked.len() >= k || width >= 8 * k {
            ranked.truncate(k);
            return Ok(ranked);
        }
        width *= 2;
    }
}

pub(crate) fn greedy(model: &Model, p: &Prepared) -> Result<Suggestion, ModelError> {
    let mut g = Graph::new(&model.params);
    let session = net::start(&model.ids, &model.config, &mut g, p)?;
    let (mut state, mut prev) = (session.init, BOS);
    let mut d = Done {
        tokens: Vec::new(),
        logp: 0.0,
    };
    for step in 0..model.config.max_output_len {
        let (next, probs) = decode(model, &mut g, &session, prev, state)?;
        // Same key as the beam ranking, so width 1 picks the same token.
        let Some((w, score)) = probs
            .iter()
            .enumerate()
            .filter(|&(w, &pw)| allowed(w, step) && pw > 0.0)
            .map(|(w, &pw)| (w, d.logp + pw.ln()))
            .fold(None, |best: Option<(usize, f64)>, (w, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((w, s)),
            })
        else {
            break;
        };
        d.logp = score;
        if w == EOS {
            break;
        }
        d.tokens.push(w);
        state = next;
        prev = w;
    }
    Ok(suggestion(model, p, &d))
}
