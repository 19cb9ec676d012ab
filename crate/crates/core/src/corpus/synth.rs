//! Synthetic lemma corpora with a known compositional naming grammar.
//!
//! A name is built from a structure prefix, an operation, a carrier suffix
//! letter and a property suffix (`extprod_mulgA`). The statement and both
//! trees encode exactly the same components, so the name is recoverable
//! from any single input.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{render_document, CorpusError, LemmaRecord, SourceLocation, DATASET_EXTENSION};
use crate::sexp::SExp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticStyle {
    /// `prefix_opDomainProp` names drawn without replacement from the grammar.
    Conventions,
    /// `word_opDomainProp` names where `word` is a fresh carrier name that
    /// occurs once in the statement and never in any other lemma.
    NovelCarrier,
}

#[derive(Debug, Clone, Copy)]
enum Fixity {
    Infix(&'static str),
    /// Prefix function call; the statement spells it `op` + carrier letter.
    Call,
}

#[derive(Debug, Clone, Copy)]
struct Op {
    name: &'static str,
    fixity: Fixity,
}

const OPS: [Op; 8] = [
    Op { name: "mul", fixity: Fixity::Infix("*") },
    Op { name: "add", fixity: Fixity::Infix("+") },
    Op { name: "sub", fixity: Fixity::Infix("-") },
    Op { name: "div", fixity: Fixity::Infix("%/") },
    Op { name: "mod", fixity: Fixity::Infix("%%") },
    Op { name: "exp", fixity: Fixity::Infix("^") },
    Op { name: "max", fixity: Fixity::Call },
    Op { name: "min", fixity: Fixity::Call },
];

#[derive(Debug, Clone, Copy)]
struct Domain {
    letter: &'static str,
    type_name: &'static str,
    library: &'static str,
}

const DOMAINS: [Domain; 3] = [
    Domain { letter: "n", type_name: "nat", library: "ssrnat" },
    Domain { letter: "g", type_name: "gT", library: "fingroup" },
    Domain { letter: "z", type_name: "int", library: "ssrint" },
];

const PREFIXES: [Option<&str>; 7] = [
    None,
    Some("extprod"),
    Some("mx"),
    Some("poly"),
    Some("perm"),
    Some("fset"),
    Some("quot"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Prop {
    Assoc,
    Comm,
    LeftComm,
    RightComm,
    Zero,
    One,
    Distr,
}

const PROPS: [Prop; 7] = [
    Prop::Assoc,
    Prop::Comm,
    Prop::LeftComm,
    Prop::RightComm,
    Prop::Zero,
    Prop::One,
    Prop::Distr,
];

impl Prop {
    fn suffix(self) -> &'static str {
        match self {
            Prop::Assoc => "A",
            Prop::Comm => "C",
            Prop::LeftComm => "CA",
            Prop::RightComm => "AC",
            Prop::Zero => "0",
            Prop::One => "1",
            Prop::Distr => "D",
        }
    }

    fn arity(self) -> usize {
        match self {
            Prop::Comm => 2,
            Prop::Zero | Prop::One => 1,
            _ => 3,
        }
    }
}

const VAR_SETS: [[&str; 3]; 4] = [["x", "y", "z"], ["a", "b", "c"], ["u", "v", "w"], ["i", "j", "k"]];

#[derive(Debug, Clone)]
enum Expr {
    Var(usize),
    Num(u32),
    Bin(Op, Box<Expr>, Box<Expr>),
}

fn bin(op: Op, l: Expr, r: Expr) -> Expr {
    Expr::Bin(op, Box::new(l), Box::new(r))
}

const ADD: Op = OPS[1];

fn equation(op: Op, prop: Prop) -> (Expr, Expr) {
    use Expr::Var;
    let (a, b, c) = (Var(0), Var(1), Var(2));
    match prop {
        Prop::Assoc => (
            bin(op, a.clone(), bin(op, b.clone(), c.clone())),
            bin(op, bin(op, a, b), c),
        ),
        Prop::Comm => (bin(op, a.clone(), b.clone()), bin(op, b, a)),
        Prop::LeftComm => (
            bin(op, a.clone(), bin(op, b.clone(), c.clone())),
            bin(op, b, bin(op, a, c)),
        ),
        Prop::RightComm => (
            bin(op, bin(op, a.clone(), b.clone()), c.clone()),
            bin(op, bin(op, a, c), b),
        ),
        Prop::Zero => (bin(op, a.clone(), Expr::Num(0)), a),
        Prop::One => (bin(op, a.clone(), Expr::Num(1)), a),
        Prop::Distr => (
            bin(op, a.clone(), bin(ADD, b.clone(), c.clone())),
            bin(ADD, bin(op, a.clone(), b), bin(op, a, c)),
        ),
    }
}

#[derive(Debug, Clone)]
struct Lemma {
    prefix: Option<String>,
    op: Op,
    domain: Domain,
    prop: Prop,
    vars: [&'static str; 3],
}

impl Lemma {
    fn name(&self) -> String {
        let core = format!("{}{}{}", self.op.name, self.domain.letter, self.prop.suffix());
        match &self.prefix {
            Some(p) => format!("{p}_{core}"),
            None => core,
        }
    }

    fn call_name(&self, op: Op) -> String {
        format!("{}{}", op.name, self.domain.letter)
    }

    fn statement(&self) -> Vec<String> {
        let mut toks: Vec<String> = vec!["forall".into(), "(".into()];
        toks.extend(self.vars[..self.prop.arity()].iter().map(|v| v.to_string()));
        toks.push(":".into());
        if let Some(p) = &self.prefix {
            toks.push(p.clone());
        }
        toks.push(self.domain.type_name.into());
        toks.push(")".into());
        toks.push(",".into());
        let (lhs, rhs) = equation(self.op, self.prop);
        self.expr_tokens(&lhs, &mut toks);
        toks.push("=".into());
        self.expr_tokens(&rhs, &mut toks);
        toks
    }

    fn expr_tokens(&self, e: &Expr, out: &mut Vec<String>) {
        let operand = |child: &Expr, wrap: bool, out: &mut Vec<String>| {
            if wrap && matches!(child, Expr::Bin(..)) {
                out.push("(".into());
                self.expr_tokens(child, out);
                out.push(")".into());
            } else {
                self.expr_tokens(child, out);
            }
        };
        match e {
            Expr::Var(i) => out.push(self.vars[*i].into()),
            Expr::Num(n) => out.push(n.to_string()),
            Expr::Bin(op, l, r) => match op.fixity {
                Fixity::Infix(sym) => {
                    let same_left = matches!(&**l, Expr::Bin(lop, ..) if lop.name == op.name);
                    operand(l, !same_left, out);
                    out.push(sym.into());
                    operand(r, true, out);
                }
                Fixity::Call => {
                    out.push(self.call_name(*op));
                    operand(l, true, out);
                    operand(r, true, out);
                }
            },
        }
    }

    fn syntax_tree(&self, line: u32) -> SExp {
        let mut cols = 0u32;
        let mut loc = || {
            cols += 2;
            s(&["loc", &format!("(((line {line}) (bp {}) (ep {})))", cols, cols + 1)])
        };
        let mut cref = |lib: &[&str], id: &str| {
            let path = SExp::List(lib.iter().map(|a| SExp::atom(*a)).collect());
            SExp::list([
                SExp::atom("CRef"),
                SExp::list([SExp::atom("Ser_Qualid"), SExp::list([SExp::atom("DirPath"), path]), id_node(id)]),
                loc(),
            ])
        };
        let ty = {
            let base = cref(&["Datatypes", "Init", "Coq"], self.domain.type_name);
            match &self.prefix {
                Some(p) => SExp::list([
                    SExp::atom("CApp"),
                    cref(&[p.as_str(), "mathcomp"], p),
                    SExp::list([base]),
                ]),
                None => base,
            }
        };
        let binders = SExp::List(
            self.vars[..self.prop.arity()]
                .iter()
                .map(|v| SExp::list([SExp::atom("Name"), id_node(v)]))
                .collect(),
        );
        let assum = SExp::list([
            SExp::atom("CLocalAssum"),
            binders,
            SExp::list([SExp::atom("Default"), SExp::atom("Explicit")]),
            ty,
        ]);
        let (lhs, rhs) = equation(self.op, self.prop);
        let l = self.cst_expr(&lhs, &mut cref);
        let r = self.cst_expr(&rhs, &mut cref);
        SExp::list([
            SExp::atom("CProdN"),
            SExp::list([assum]),
            notation("_=_", l, r),
        ])
    }

    fn cst_expr(&self, e: &Expr, cref: &mut impl FnMut(&[&str], &str) -> SExp) -> SExp {
        match e {
            Expr::Var(i) => cref(&[], self.vars[*i]),
            Expr::Num(n) => SExp::list([
                SExp::atom("CPrim"),
                SExp::list([SExp::atom("Numeral"), SExp::atom(n.to_string())]),
            ]),
            Expr::Bin(op, l, r) => {
                let (l, r) = (self.cst_expr(l, cref), self.cst_expr(r, cref));
                match op.fixity {
                    Fixity::Infix(sym) => notation(&format!("_{sym}_"), l, r),
                    Fixity::Call => SExp::list([
                        SExp::atom("CApp"),
                        cref(&[self.domain.library, "mathcomp"], &self.call_name(*op)),
                        SExp::list([l, r]),
                    ]),
                }
            }
        }
    }

    fn kernel_tree(&self) -> SExp {
        let arity = self.prop.arity();
        let base = match self.domain.type_name {
            "gT" => SExp::list([SExp::atom("Var"), id_node("gT")]),
            t => SExp::list([
                SExp::atom("Ind"),
                SExp::list([qualid(&["Datatypes", "Init", "Coq"], t), SExp::atom("0")]),
            ]),
        };
        let ty = match &self.prefix {
            Some(p) => SExp::list([
                SExp::atom("App"),
                SExp::list([SExp::atom("Const"), SExp::list([qualid(&[p.as_str(), "mathcomp"], p), SExp::List(vec![])])]),
                base,
            ]),
            None => base,
        };
        let (lhs, rhs) = equation(self.op, self.prop);
        let mut body = SExp::list([
            SExp::atom("App"),
            SExp::list([
                SExp::atom("Ind"),
                SExp::list([qualid(&["Logic", "Init", "Coq"], "eq"), SExp::atom("0")]),
            ]),
            ty.clone(),
            self.ckt_expr(&lhs, arity),
            self.ckt_expr(&rhs, arity),
        ]);
        for v in self.vars[..arity].iter().rev() {
            body = SExp::list([
                SExp::atom("Prod"),
                SExp::list([SExp::atom("Name"), id_node(v)]),
                ty.clone(),
                body,
            ]);
        }
        body
    }

    fn ckt_expr(&self, e: &Expr, arity: usize) -> SExp {
        match e {
            // de Bruijn: the innermost binder is Rel 1.
            Expr::Var(i) => SExp::list([SExp::atom("Rel"), SExp::atom((arity - i).to_string())]),
            Expr::Num(n) => SExp::list([SExp::atom("Num"), SExp::atom(n.to_string())]),
            Expr::Bin(op, l, r) => SExp::list([
                SExp::atom("App"),
                SExp::list([
                    SExp::atom("Const"),
                    SExp::list([
                        qualid(&[self.domain.library, "mathcomp"], &self.call_name(*op)),
                        SExp::List(vec![]),
                    ]),
                ]),
                self.ckt_expr(l, arity),
                self.ckt_expr(r, arity),
            ]),
        }
    }
}

fn s(parts: &[&str]) -> SExp {
    crate::sexp::parse_one(&format!("({})", parts.join(" "))).expect("static tree text")
}

fn id_node(id: &str) -> SExp {
    SExp::list([SExp::atom("Id"), SExp::atom(id)])
}

fn qualid(path: &[&str], id: &str) -> SExp {
    SExp::list([
        SExp::atom("Ser_Qualid"),
        SExp::list([
            SExp::atom("DirPath"),
            SExp::List(path.iter().map(|a| SExp::atom(*a)).collect()),
        ]),
        id_node(id),
    ])
}

fn notation(sym: &str, l: SExp, r: SExp) -> SExp {
    SExp::list([
        SExp::atom("CNotation"),
        SExp::list([SExp::atom("InConstrEntrySomeLevel"), SExp::atom(sym)]),
        SExp::list([SExp::list([l, r])]),
    ])
}

const CONSONANTS: &[u8] = b"bdfhklmpqrstvw";
const VOWELS: &[u8] = b"aeiou";

/// A lowercase pseudo-word ending in a vowel, so it never loses a suffix letter.
fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
    }
    w
}

fn plan(style: SyntheticStyle, total: usize, rng: &mut ChaCha8Rng) -> Vec<Lemma> {
    let vars = |rng: &mut ChaCha8Rng| VAR_SETS[rng.gen_range(0..VAR_SETS.len())];
    match style {
        SyntheticStyle::Conventions => {
            let mut combos = Vec::new();
            for prefix in PREFIXES {
                for op in OPS {
                    for domain in DOMAINS {
                        for prop in PROPS {
                            combos.push((prefix, op, domain, prop));
                        }
                    }
                }
            }
            combos.shuffle(rng);
            // Past the grammar's size, names repeat with fresh variable names.
            (0..total)
                .map(|i| {
                    let (prefix, op, domain, prop) = combos[i % combos.len()];
                    Lemma {
                        prefix: prefix.map(String::from),
                        op,
                        domain,
                        prop,
                        vars: vars(rng),
                    }
                })
                .collect()
        }
        SyntheticStyle::NovelCarrier => {
            let ops = [OPS[0], OPS[1], OPS[6], OPS[7]];
            let props = [Prop::Assoc, Prop::Comm, Prop::LeftComm];
            let reserved: HashSet<&str> = PREFIXES
                .iter()
                .flatten()
                .copied()
                .chain(VAR_SETS.iter().flatten().copied())
                .chain(["forall", "nat", "int"])
                .collect();
            let mut seen = HashSet::new();
            (0..total)
                .map(|_| {
                    let word = loop {
                        let w = pseudo_word(rng);
                        if !reserved.contains(w.as_str()) && seen.insert(w.clone()) {
                            break w;
                        }
                    };
                    Lemma {
                        prefix: Some(word),
                        op: ops[rng.gen_range(0..ops.len())],
                        domain: DOMAINS[rng.gen_range(0..DOMAINS.len())],
                        prop: props[rng.gen_range(0..props.len())],
                        vars: vars(rng),
                    }
                })
                .collect()
        }
    }
}

pub fn document_file_name(index: usize) -> String {
    format!("doc_{index:03}.{DATASET_EXTENSION}")
}

/// Generates the records of a synthetic corpus, grouped by document.
pub fn synthetic_documents(
    seed: u64,
    n_docs: usize,
    lemmas_per_doc: usize,
    style: SyntheticStyle,
) -> Vec<(String, Vec<LemmaRecord>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lemmas = plan(style, n_docs * lemmas_per_doc, &mut rng);
    lemmas
        .chunks(lemmas_per_doc.max(1))
        .take(n_docs)
        .enumerate()
        .map(|(d, chunk)| {
            let file = document_file_name(d);
            let stem = file.trim_end_matches(&format!(".{DATASET_EXTENSION}")).to_string();
            let records = chunk
                .iter()
                .enumerate()
                .map(|(i, lemma)| {
                    let line = 3 + 4 * i as u32;
                    LemmaRecord {
                        name: lemma.name(),
                        module_path: vec!["synth".into(), stem.clone()],
                        statement_tokens: lemma.statement(),
                        syntax_tree: lemma.syntax_tree(line),
                        kernel_tree: lemma.kernel_tree(),
                        source: SourceLocation {
                            file: PathBuf::from(&file),
                            line,
                        },
                    }
                })
                .collect();
            (file, records)
        })
        .collect()
}

/// Writes a synthetic corpus to `out_dir`, returning the files in order.
pub fn generate_synthetic_corpus(
    seed: u64,
    n_docs: usize,
    lemmas_per_doc: usize,
    style: SyntheticStyle,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CorpusError> {
    fs::create_dir_all(out_dir).map_err(|e| CorpusError::io(out_dir, e))?;
    synthetic_documents(seed, n_docs, lemmas_per_doc, style)
        .into_iter()
        .map(|(file, records)| {
            let path = out_dir.join(file);
            fs::write(&path, render_document(&records)).map_err(|e| CorpusError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
