//! Parameter layout and the forward computation of the network.

use crate::corpus::{BOS, UNK};
use crate::nn::{glorot_bound, init_uniform, Gradients, Graph, NnError, ParamId, ParamRng, ParamStore, Tensor, Var};

use super::{ModelConfig, Prepared};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GruIds {
    w_x: ParamId,
    w_h: ParamId,
    b_x: ParamId,
    b_h: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EncoderIds {
    pub embed: ParamId,
    pub fwd: GruIds,
    pub bwd: Option<GruIds>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NetIds {
    pub encoders: Vec<EncoderIds>,
    combine_w: ParamId,
    combine_b: ParamId,
    dec_embed: ParamId,
    dec_gru: GruIds,
    attn_w: Option<ParamId>,
    out_w: ParamId,
    vocab_w: ParamId,
    vocab_b: ParamId,
    pub copy_w: Option<ParamId>,
    pub copy_b: Option<ParamId>,
}

#[derive(Clone, Copy)]
enum Init {
    Embedding,
    Glorot,
    Zero,
}

struct Registrar<'a> {
    store: &'a mut ParamStore,
    rng: Option<ParamRng>,
}

impl Registrar<'_> {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> ParamId {
        let stream = self.store.len() as u64;
        let t = match (self.rng, init) {
            (Some(r), Init::Embedding) => init_uniform(&mut r.stream(stream), rows, cols, 0.1),
            (Some(r), Init::Glorot) => init_uniform(&mut r.stream(stream), rows, cols, glorot_bound(rows, cols)),
            _ => Tensor::zeros(rows, cols),
        };
        self.store.add(name, t)
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) -> GruIds {
        GruIds {
            w_x: self.add(format!("{prefix}.w_x"), input, 3 * hidden, Init::Glorot),
            w_h: self.add(format!("{prefix}.w_h"), hidden, 3 * hidden, Init::Glorot),
            b_x: self.add(format!("{prefix}.b_x"), 1, 3 * hidden, Init::Zero),
            b_h: self.add(format!("{prefix}.b_h"), 1, 3 * hidden, Init::Zero),
        }
    }
}

/// Registers every parameter in a fixed order. Without an RNG all values
/// are zero, which gives the expected names and shapes of a checkpoint.
pub(crate) fn register(
    cfg: &ModelConfig,
    input_vocab_sizes: &[usize],
    output_vocab_size: usize,
    store: &mut ParamStore,
    rng: Option<ParamRng>,
) -> NetIds {
    let mut r = Registrar { store, rng };
    let (e, h) = (cfg.embed_dim, cfg.hidden_dim);
    let enc_h = if cfg.bidirectional { h / 2 } else { h };
    let encoders = cfg
        .inputs
        .iter()
        .zip(input_vocab_sizes)
        .map(|(stream, &v)| {
            let p = format!("enc.{}", stream.label());
            EncoderIds {
                embed: r.add(format!("{p}.embed"), v, e, Init::Embedding),
                fwd: r.gru(&format!("{p}.fwd"), e, enc_h),
                bwd: cfg.bidirectional.then(|| r.gru(&format!("{p}.bwd"), e, enc_h)),
            }
        })
        .collect::<Vec<_>>();
    let n_in = encoders.len();
    let combine_w = r.add("combine.w".into(), n_in * h, h, Init::Glorot);
    let combine_b = r.add("combine.b".into(), 1, h, Init::Zero);
    let dec_embed = r.add("dec.embed".into(), output_vocab_size, e, Init::Embedding);
    let dec_gru = r.gru("dec.gru", e, h);
    let attn_w = cfg.use_attention.then(|| r.add("attn.w".into(), h, h, Init::Glorot));
    let out_in = if cfg.use_attention { 2 * h } else { h };
    let out_w = r.add("out.w".into(), out_in, h, Init::Glorot);
    let vocab_w = r.add("vocab.w".into(), h, output_vocab_size, Init::Glorot);
    let vocab_b = r.add("vocab.b".into(), 1, output_vocab_size, Init::Zero);
    let (copy_w, copy_b) = if cfg.use_copy {
        (
            Some(r.add("copy.w".into(), 2 * h + e, 1, Init::Glorot)),
            Some(r.add("copy.b".into(), 1, 1, Init::Zero)),
        )
    } else {
        (None, None)
    };
    NetIds {
        encoders,
        combine_w,
        combine_b,
        dec_embed,
        dec_gru,
        attn_w,
        out_w,
        vocab_w,
        vocab_b,
        copy_w,
        copy_b,
    }
}

fn gru(g: &mut Graph, ids: &GruIds, x: Var, h: Var) -> Result<Var, NnError> {
    let (wx, wh, bx, bh) = (g.param(ids.w_x), g.param(ids.w_h), g.param(ids.b_x), g.param(ids.b_h));
    g.gru_cell(x, h, wx, wh, bx, bh)
}

/// Runs one encoder; returns the per-position outputs `[L, H]` and the final
/// state `[1, H]` (last forward state joined with the first backward state).
pub(crate) fn encode(g: &mut Graph, cfg: &ModelConfig, enc: &EncoderIds, ids: &[usize]) -> Result<(Var, Var), NnError> {
    let enc_h = if cfg.bidirectional { cfg.hidden_dim / 2 } else { cfg.hidden_dim };
    let table = g.param(enc.embed);
    let xs = ids
        .iter()
        .map(|&id| g.embedding(table, &[id]))
        .collect::<Result<Vec<_>, _>>()?;
    let zero = g.input(Tensor::zeros(1, enc_h))?;
    let mut fwd = Vec::with_capacity(xs.len());
    let mut h = zero;
    for &x in &xs {
        h = gru(g, &enc.fwd, x, h)?;
        fwd.push(h);
    }
    let fwd_seq = g.concat(&fwd, 0)?;
    let Some(bwd_ids) = &enc.bwd else {
        return Ok((fwd_seq, *fwd.last().expect("non-empty input")));
    };
    let mut bwd = Vec::with_capacity(xs.len());
    let mut h = zero;
    for &x in xs.iter().rev() {
        h = gru(g, bwd_ids, x, h)?;
        bwd.push(h);
    }
    bwd.reverse();
    let bwd_seq = g.concat(&bwd, 0)?;
    let outputs = g.concat(&[fwd_seq, bwd_seq], 1)?;
    let last = g.concat(&[*fwd.last().unwrap(), bwd[0]], 1)?;
    Ok((outputs, last))
}

pub(crate) struct Session {
    pub init: Var,
    memory: Var,
    memory_t: Option<Var>,
    source_ext: Vec<usize>,
    vocab_size: usize,
    oov_zeros: Option<Var>,
}

/// Encodes every enabled input and combines the final states.
pub(crate) fn start(ids: &NetIds, cfg: &ModelConfig, g: &mut Graph, p: &Prepared) -> Result<Session, NnError> {
    let mut outputs = Vec::with_capacity(ids.encoders.len());
    let mut finals = Vec::with_capacity(ids.encoders.len());
    for (enc, inp) in ids.encoders.iter().zip(&p.inputs) {
        let (o, f) = encode(g, cfg, enc, inp)?;
        outputs.push(o);
        finals.push(f);
    }
    let memory = if outputs.len() == 1 { outputs[0] } else { g.concat(&outputs, 0)? };
    let joined = if finals.len() == 1 { finals[0] } else { g.concat(&finals, 1)? };
    let (w, b) = (g.param(ids.combine_w), g.param(ids.combine_b));
    let pre = g.matmul(joined, w)?;
    let pre = g.add(pre, b)?;
    let init = g.tanh(pre)?;
    let memory_t = if cfg.use_attention { Some(g.transpose(memory)?) } else { None };
    let vb = g.param(ids.vocab_b);
    let vocab_size = g.value(vb).cols();
    let oov_zeros = if cfg.use_copy && !p.oov.is_empty() {
        Some(g.input(Tensor::zeros(1, p.oov.len()))?)
    } else {
        None
    };
    Ok(Session {
        init,
        memory,
        memory_t,
        source_ext: p.source_ext.clone(),
        vocab_size,
        oov_zeros,
    })
}

pub(crate) struct StepOut {
    pub state: Var,
    pub logits: Var,
    /// Mixed distribution over the extended vocabulary (copy only).
    pub probs: Option<Var>,
    pub attention: Option<Var>,
    pub p_gen: Option<Var>,
}

/// One decoder step fed with `prev` (an extended id; out-of-vocabulary ids
/// are embedded as UNK).
pub(crate) fn step(ids: &NetIds, g: &mut Graph, s: &Session, prev: usize, state: Var) -> Result<StepOut, NnError> {
    let input = if prev < s.vocab_size { prev } else { UNK };
    let table = g.param(ids.dec_embed);
    let x = g.embedding(table, &[input])?;
    let h = gru(g, &ids.dec_gru, x, state)?;
    let out_w = g.param(ids.out_w);
    let (feat, attention, context) = match (ids.attn_w, s.memory_t) {
        (Some(aw), Some(mt)) => {
            let aw = g.param(aw);
            let q = g.matmul(h, aw)?;
            let scores = g.matmul(q, mt)?;
            let attn = g.softmax(scores, 1)?;
            let ctx = g.matmul(attn, s.memory)?;
            (g.concat(&[ctx, h], 1)?, Some(attn), Some(ctx))
        }
        _ => (h, None, None),
    };
    let mixed = g.matmul(feat, out_w)?;
    let mixed = g.tanh(mixed)?;
    let (vw, vb) = (g.param(ids.vocab_w), g.param(ids.vocab_b));
    let logits = g.matmul(mixed, vw)?;
    let logits = g.add(logits, vb)?;

    let (probs, p_gen) = match (ids.copy_w, ids.copy_b, attention, context) {
        (Some(cw), Some(cb), Some(attn), Some(ctx)) => {
            let gate_in = g.concat(&[ctx, h, x], 1)?;
            let (cw, cb) = (g.param(cw), g.param(cb));
            let gate = g.matmul(gate_in, cw)?;
            let gate = g.add(gate, cb)?;
            let p_gen = g.sigmoid(gate)?;
            let p_vocab = g.softmax(logits, 1)?;
            let mut gen = g.scale_by(p_gen, p_vocab)?;
            if let Some(z) = s.oov_zeros {
                gen = g.concat(&[gen, z], 1)?;
            }
            let p_copy = g.one_minus(p_gen)?;
            let weights = g.scale_by(p_copy, attn)?;
            let width = g.value(gen).cols();
            let copied = g.scatter_add(weights, &s.source_ext, width)?;
            (Some(g.add(gen, copied)?), Some(p_gen))
        }
        _ => (None, None),
    };
    Ok(StepOut {
        state: h,
        logits,
        probs,
        attention,
        p_gen,
    })
}

/// Output distribution of a step as plain values.
pub(crate) fn step_probs(g: &mut Graph, out: &StepOut) -> Result<Vec<f64>, NnError> {
    let v = match out.probs {
        Some(p) => p,
        None => g.softmax(out.logits, 1)?,
    };
    Ok(g.value(v).data().to_vec())
}

/// Summed negative log-likelihood of the targets under teacher forcing.
pub(crate) fn example_loss(ids: &NetIds, cfg: &ModelConfig, g: &mut Graph, p: &Prepared) -> Result<Var, NnError> {
    let s = start(ids, cfg, g, p)?;
    let mut state = s.init;
    let mut prev = BOS;
    let mut losses = Vec::with_capacity(p.targets.len());
    for &t in &p.targets {
        let out = step(ids, g, &s, prev, state)?;
        let l = match out.probs {
            Some(probs) => {
                let pt = g.slice(probs, 1, t, 1)?;
                let lp = g.log(pt)?;
                g.scale(lp, -1.0)?
            }
            None => g.cross_entropy(out.logits, t)?,
        };
        losses.push(l);
        state = out.state;
        prev = t;
    }
    let all = g.concat(&losses, 1)?;
    g.sum(all)
}

pub(crate) fn example_loss_and_grads(
    ids: &NetIds,
    cfg: &ModelConfig,
    params: &ParamStore,
    p: &Prepared,
) -> Result<(f64, Gradients), NnError> {
    let mut g = Graph::new(params);
    let loss = example_loss(ids, cfg, &mut g, p)?;
    Ok((g.value(loss).item(), g.backward(loss)?))
}
