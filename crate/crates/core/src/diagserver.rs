//! JSON-RPC 2.0 over stdio with `Content-Length` framing, serving naming
//! suggestions as diagnostics.
//!
//! Methods:
//!
//! | method                    | params            | result                               |
//! |---------------------------|-------------------|--------------------------------------|
//! | `initialize`              | any               | `{serverInfo, capabilities}`         |
//! | `roosterize/suggestNaming`| `{"uri": <path>}` | array of [`Diagnostic`]              |
//! | `shutdown`                | none              | `null`                               |
//! | `exit`                    | none              | no reply; the server stops           |
//!
//! `uri` is a lemma-dataset file, either a plain path or a `file://` URI.
//! Messages without an `id` are notifications and never answered.

use std::io::{self, BufRead, ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::load_document;
use crate::model::{Model, Suggestion};
use crate::report::{ReportEntry, SuggestionReport};

pub const SERVER_NAME: &str = "roosterize";
pub const SERVER_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SUGGEST_METHOD: &str = "roosterize/suggestNaming";

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;

/// LSP `DiagnosticSeverity.Information`.
pub const SEVERITY_INFORMATION: u8 = 3;

/// Column where the name starts on its line, assuming `Lemma <name>`.
pub const NAME_COLUMN: usize = "Lemma ".len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagRange {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: PathBuf,
    pub line: u32,
    pub range: DiagRange,
    pub severity: u8,
    pub name: String,
    pub message: String,
    pub data: Vec<Suggestion>,
}

impl Diagnostic {
    pub fn from_entry(e: &ReportEntry) -> Self {
        let names: Vec<&str> = e.suggestions.iter().map(|s| s.name.as_str()).collect();
        Diagnostic {
            file: e.file.clone(),
            line: e.line,
            range: DiagRange {
                start: NAME_COLUMN,
                end: NAME_COLUMN + e.name.chars().count(),
            },
            severity: SEVERITY_INFORMATION,
            name: e.name.clone(),
            message: format!("name does not conform; suggestions: {}", names.join(", ")),
            data: e.suggestions.clone(),
        }
    }
}

/// Diagnostics for the non-conforming entries of a report, in file order.
pub fn diagnostics(report: &SuggestionReport) -> Vec<Diagnostic> {
    report.non_conforming().map(Diagnostic::from_entry).collect()
}

#[derive(Debug, PartialEq)]
pub enum Frame {
    Message(Vec<u8>),
    /// Header block without a usable `Content-Length`.
    BadHeader(String),
    Eof,
}

pub fn read_frame<R: BufRead>(r: &mut R) -> io::Result<Frame> {
    let mut length: Option<usize> = None;
    let mut bad: Option<String> = None;
    let mut seen_any = false;
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Ok(Frame::Eof);
        }
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            if !seen_any {
                continue;
            }
            break;
        }
        seen_any = true;
        match line.split_once(':') {
            Some((k, v)) if k.trim().eq_ignore_ascii_case("content-length") => match v.trim().parse() {
                Ok(n) => length = Some(n),
                Err(_) => bad = Some(format!("bad Content-Length `{}`", v.trim())),
            },
            Some(_) => {}
            None => bad = Some(format!("malformed header line `{line}`")),
        }
    }
    if let Some(b) = bad {
        return Ok(Frame::BadHeader(b));
    }
    let Some(n) = length else {
        return Ok(Frame::BadHeader("missing Content-Length".into()));
    };
    let mut body = vec![0; n];
    match r.read_exact(&mut body) {
        Ok(()) => Ok(Frame::Message(body)),
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => Ok(Frame::Eof),
        Err(e) => Err(e),
    }
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Value) -> io::Result<()> {
    let body = serde_json::to_string(msg).expect("JSON value serializes");
    write!(w, "Content-Length: {}\r\n\r\n{body}", body.len())?;
    w.flush()
}

fn error_response(id: Value, code: i64, message: &str) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "error": {"code": code, "message": message}})
}

fn uri_to_path(uri: &str) -> PathBuf {
    PathBuf::from(uri.strip_prefix("file://").unwrap_or(uri))
}

pub struct DiagServer<'m> {
    model: &'m Model,
    k: usize,
    shutting_down: bool,
}

/// What the transport should do after a message.
#[derive(Debug, PartialEq)]
pub struct Outcome {
    pub reply: Option<Value>,
    pub exit: bool,
}

impl<'m> DiagServer<'m> {
    pub fn new(model: &'m Model, k: usize) -> Self {
        DiagServer {
            model,
            k,
            shutting_down: false,
        }
    }

    pub fn suggest_naming(&self, path: &Path) -> Result<Vec<Diagnostic>, String> {
        let doc = load_document(path).map_err(|e| e.to_string())?;
        let report = SuggestionReport::build(self.model, &doc.records, self.k).map_err(|e| e.to_string())?;
        Ok(diagnostics(&report))
    }

    pub fn handle(&mut self, body: &[u8]) -> Outcome {
        let reply = |v| Outcome {
            reply: Some(v),
            exit: false,
        };
        let msg: Value = match serde_json::from_slice(body) {
            Ok(v) => v,
            Err(e) => return reply(error_response(Value::Null, PARSE_ERROR, &format!("parse error: {e}"))),
        };
        let id = msg.get("id").cloned();
        let id_ok = matches!(id, None | Some(Value::Null | Value::Number(_) | Value::String(_)));
        let method = msg.get("method").and_then(Value::as_str);
        let (Some(method), true, true) = (method, msg.get("jsonrpc") == Some(&json!("2.0")), id_ok) else {
            let id = if id_ok { id.unwrap_or(Value::Null) } else { Value::Null };
            return reply(error_response(id, INVALID_REQUEST, "invalid request"));
        };
        log::debug!("<- {method}");
        if method == "exit" {
            return Outcome { reply: None, exit: true };
        }
        let Some(id) = id else {
            // Notification: act on nothing we know, answer nothing.
            return Outcome { reply: None, exit: false };
        };
        if self.shutting_down {
            return reply(error_response(id, INVALID_REQUEST, "server is shutting down"));
        }
        let result = match method {
            "initialize" => Ok(json!({
                "serverInfo": {"name": SERVER_NAME, "version": SERVER_VERSION},
                "capabilities": {"experimental": {SUGGEST_METHOD: true}},
            })),
            "shutdown" => {
                self.shutting_down = true;
                Ok(Value::Null)
            }
            SUGGEST_METHOD => match msg.get("params").and_then(|p| p.get("uri")).and_then(Value::as_str) {
                None => Err((INVALID_PARAMS, "params.uri (string) is required".to_string())),
                Some(uri) => self
                    .suggest_naming(&uri_to_path(uri))
                    .map(|d| serde_json::to_value(d).expect("diagnostics serialize"))
                    .map_err(|e| (INTERNAL_ERROR, e)),
            },
            _ => Err((METHOD_NOT_FOUND, format!("method not found: {method}"))),
        };
        reply(match result {
            Ok(r) => json!({"jsonrpc": "2.0", "id": id, "result": r}),
            Err((code, m)) => {
                log::warn!("{method}: {m}");
                error_response(id, code, &m)
            }
        })
    }
}

/// Runs until `exit` or end of input. Only framed messages reach `output`.
pub fn serve<R: BufRead, W: Write>(input: &mut R, output: &mut W, model: &Model, k: usize) -> io::Result<()> {
    let mut server = DiagServer::new(model, k);
    loop {
        let outcome = match read_frame(input)? {
            Frame::Eof => return Ok(()),
            Frame::BadHeader(why) => {
                log::warn!("{why}");
                Outcome {
                    reply: Some(error_response(Value::Null, INVALID_REQUEST, &why)),
                    exit: false,
                }
            }
            Frame::Message(body) => server.handle(&body),
        };
        if let Some(r) = outcome.reply {
            write_frame(output, &r)?;
        }
        if outcome.exit {
            return Ok(());
        }
    }
}
