//! Binary checkpoint container.
//!
//! ```text
//! magic            8 bytes   "RSTRCKPT"
//! format_version   u32 LE
//! header_len       u64 LE
//! header           JSON (config, config_digest, chop, lexicon, vocabularies, training, parameters)
//! per parameter:   u32 LE name_len, name (UTF-8), u32 LE rank, rank × u64 LE dims,
//!                  product(dims) × f64 LE values
//! checksum         32 bytes  SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chop::ChopConfig;
use crate::corpus::Vocabulary;
use crate::nn::{ParamStore, Tensor};
use crate::subtok::SuffixLexicon;

use super::{net, Model, ModelConfig, ModelError, TrainConfig};

pub const MAGIC: &[u8; 8] = b"RSTRCKPT";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    config_digest: String,
    chop: ChopConfig,
    lexicon: SuffixLexicon,
    input_vocabularies: Vec<Vocabulary>,
    output_vocabulary: Vocabulary,
    training: Option<TrainConfig>,
    parameters: usize,
}

fn config_digest(cfg: &ModelConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let header = Header {
        config: model.config.clone(),
        config_digest: config_digest(&model.config),
        chop: model.chop.clone(),
        lexicon: model.lexicon.clone(),
        input_vocabularies: model.input_vocabs.clone(),
        output_vocabulary: model.output_vocab.clone(),
        training: model.training.clone(),
        parameters: model.params.len(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(64 + header.len() + model.params.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptCheckpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize, ModelError> {
        usize::try_from(self.u64(what)?).map_err(|_| corrupt(format!("{what} out of range")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model, ModelError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < r.pos + CHECKSUM_LEN {
        return Err(corrupt("truncated before checksum"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != sum {
        return Err(corrupt("checksum mismatch (file truncated or modified)"));
    }
    r.buf = body;

    let header_len = r.len("header length")?;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| corrupt(format!("header: {e}")))?;
    if config_digest(&header.config) != header.config_digest {
        return Err(corrupt("config digest mismatch"));
    }
    header.config.validate()?;
    if header.input_vocabularies.len() != header.config.inputs.len() {
        return Err(corrupt("vocabulary count does not match inputs"));
    }

    let mut params = ParamStore::new();
    let sizes: Vec<usize> = header.input_vocabularies.iter().map(Vocabulary::len).collect();
    let ids = net::register(&header.config, &sizes, header.output_vocabulary.len(), &mut params, None);
    if header.parameters != params.len() {
        return Err(corrupt(format!(
            "header declares {} parameters, configuration needs {}",
            header.parameters,
            params.len()
        )));
    }
    for id in params.ids().collect::<Vec<_>>() {
        let name_len = r.u32("parameter name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| corrupt("parameter name is not UTF-8"))?;
        if name != params.name(id) {
            return Err(corrupt(format!("expected parameter `{}`, found `{name}`", params.name(id))));
        }
        let rank = r.u32("rank")? as usize;
        let dims = (0..rank).map(|_| r.len("dimension")).collect::<Result<Vec<_>, _>>()?;
        if dims != params.get(id).shape() {
            return Err(corrupt(format!(
                "parameter `{name}` has shape {dims:?}, expected {:?}",
                params.get(id).shape()
            )));
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * 8, "parameter values")?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(corrupt(format!("parameter `{name}` holds non-finite values")));
        }
        *params.get_mut(id) = Tensor::new(dims, data).map_err(|e| corrupt(e.to_string()))?;
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes after parameters"));
    }
    Ok(Model {
        config: header.config,
        chop: header.chop,
        lexicon: header.lexicon,
        input_vocabs: header.input_vocabularies,
        output_vocab: header.output_vocabulary,
        training: header.training,
        params,
        ids,
    })
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<(), ModelError> {
    fs::write(path, to_bytes(model)).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}
