//! Line-oriented text dumps of client datasets and model parameters.
//!
//! Both formats start with a magic line, then `key value` header lines,
//! then one numeric record per line, then `end`. Blank lines and lines
//! starting with `#` are ignored. Floats are written in Rust's shortest
//! round-trip form, so load(dump(x)) == x bit for bit.
//!
//! ```text
//! fairfed-dataset 1
//! input_dim 3
//! num_classes 2
//! clients 1
//! client 0 train 2 test 1
//! 1 0.5 -1.25 3
//! 0 0.1 0.2 0.3
//! 1 2 2 2
//! end
//! ```
//!
//! Each sample line is `label x_1 ... x_d`; a client's train rows come
//! first, then its test rows.
//!
//! ```text
//! fairfed-model 1
//! kind mlp
//! input_dim 3
//! hidden_dim 4
//! num_classes 2
//! params 26
//! 0.013
//! ...
//! end
//! ```
//!
//! `hidden_dim` is 0 for the linear model. Parameters are listed in the
//! model's flat layout.

use std::fmt::Write as _;
use std::str::FromStr;

use fairfed_core::data::ClientDataset;
use fairfed_core::models::{Batch, ModelKind, ModelSpec};
use fairfed_core::ParamVector;

const DATASET_MAGIC: &str = "fairfed-dataset 1";
const MODEL_MAGIC: &str = "fairfed-model 1";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unexpected end of input: {0}")]
    Truncated(&'static str),
    #[error(transparent)]
    Core(#[from] fairfed_core::Error),
}

pub fn dump_dataset(clients: &[ClientDataset], num_classes: usize) -> String {
    let input_dim = clients.first().map_or(0, |c| c.train.input_dim());
    let mut out = String::new();
    writeln!(out, "{DATASET_MAGIC}").unwrap();
    writeln!(out, "input_dim {input_dim}").unwrap();
    writeln!(out, "num_classes {num_classes}").unwrap();
    writeln!(out, "clients {}", clients.len()).unwrap();
    for c in clients {
        writeln!(out, "client {} train {} test {}", c.client_id, c.train.len(), c.test.len()).unwrap();
        for batch in [&c.train, &c.test] {
            for i in 0..batch.len() {
                write!(out, "{}", batch.labels()[i]).unwrap();
                for v in batch.row(i) {
                    write!(out, " {v}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    out.push_str("end\n");
    out
}

pub fn dump_model(spec: &ModelSpec, params: &ParamVector) -> String {
    let (kind, hidden) = match spec.kind {
        ModelKind::LinearSoftmax => ("linear", 0),
        ModelKind::Mlp { hidden_dim } => ("mlp", hidden_dim),
    };
    let mut out = String::new();
    writeln!(out, "{MODEL_MAGIC}").unwrap();
    writeln!(out, "kind {kind}").unwrap();
    writeln!(out, "input_dim {}", spec.input_dim).unwrap();
    writeln!(out, "hidden_dim {hidden}").unwrap();
    writeln!(out, "num_classes {}", spec.num_classes).unwrap();
    writeln!(out, "params {}", params.dim()).unwrap();
    for v in params.iter() {
        writeln!(out, "{v}").unwrap();
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            line: 0,
        }
    }

    fn next(&mut self, what: &'static str) -> Result<&'a str, FormatError> {
        for (i, l) in self.inner.by_ref() {
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            self.line = i + 1;
            return Ok(t);
        }
        Err(FormatError::Truncated(what))
    }

    fn err(&self, msg: impl Into<String>) -> FormatError {
        FormatError::Syntax {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn expect(&mut self, exact: &'static str) -> Result<(), FormatError> {
        let l = self.next(exact)?;
        if l != exact {
            return Err(self.err(format!("expected `{exact}`, found `{l}`")));
        }
        Ok(())
    }

    fn parse<T: FromStr>(&self, tok: &str) -> Result<T, FormatError> {
        tok.parse().map_err(|_| self.err(format!("bad number `{tok}`")))
    }

    fn header<T: FromStr>(&mut self, key: &'static str) -> Result<T, FormatError> {
        let l = self.next(key)?;
        match l.split_once(char::is_whitespace) {
            Some((k, v)) if k == key => self.parse(v.trim()),
            _ => Err(self.err(format!("expected `{key} <value>`, found `{l}`"))),
        }
    }
}

fn read_rows(lines: &mut Lines<'_>, n: usize, input_dim: usize, num_classes: usize) -> Result<Batch, FormatError> {
    let mut inputs = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let l = lines.next("sample row")?;
        let mut toks = l.split_whitespace();
        let label: usize = lines.parse(toks.next().unwrap_or(""))?;
        if label >= num_classes {
            return Err(lines.err(format!("label {label} out of range")));
        }
        let before = inputs.len();
        for t in toks {
            let v: f64 = lines.parse(t)?;
            if !v.is_finite() {
                return Err(lines.err("non-finite feature"));
            }
            inputs.push(v);
        }
        if inputs.len() - before != input_dim {
            return Err(lines.err(format!("expected {input_dim} features, found {}", inputs.len() - before)));
        }
        labels.push(label);
    }
    Ok(Batch::new(inputs, input_dim, labels)?)
}

/// Parses a dataset dump. Returns the clients and the class count.
pub fn load_dataset(text: &str) -> Result<(Vec<ClientDataset>, usize), FormatError> {
    let mut lines = Lines::new(text);
    lines.expect(DATASET_MAGIC)?;
    let input_dim: usize = lines.header("input_dim")?;
    let num_classes: usize = lines.header("num_classes")?;
    let n_clients: usize = lines.header("clients")?;
    if input_dim == 0 || num_classes < 2 {
        return Err(lines.err("input_dim must be positive and num_classes at least 2"));
    }
    let mut clients = Vec::with_capacity(n_clients);
    for expected_id in 0..n_clients {
        let l = lines.next("client header")?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let [kw, id, tr, n_train, te, n_test] = toks[..] else {
            return Err(lines.err(format!("expected client header, found `{l}`")));
        };
        if kw != "client" || tr != "train" || te != "test" {
            return Err(lines.err(format!("expected client header, found `{l}`")));
        }
        let id: usize = lines.parse(id)?;
        if id != expected_id {
            return Err(lines.err(format!("client ids must be 0..{n_clients} in order")));
        }
        let n_train: usize = lines.parse(n_train)?;
        let n_test: usize = lines.parse(n_test)?;
        let train = read_rows(&mut lines, n_train, input_dim, num_classes)?;
        let test = read_rows(&mut lines, n_test, input_dim, num_classes)?;
        clients.push(ClientDataset {
            client_id: id,
            train,
            test,
        });
    }
    lines.expect("end")?;
    Ok((clients, num_classes))
}

pub fn load_model(text: &str) -> Result<(ModelSpec, ParamVector), FormatError> {
    let mut lines = Lines::new(text);
    lines.expect(MODEL_MAGIC)?;
    let kind: String = lines.header("kind")?;
    let input_dim: usize = lines.header("input_dim")?;
    let hidden_dim: usize = lines.header("hidden_dim")?;
    let num_classes: usize = lines.header("num_classes")?;
    let spec = match kind.as_str() {
        "linear" => ModelSpec::linear(input_dim, num_classes),
        "mlp" => ModelSpec::mlp(input_dim, hidden_dim, num_classes),
        other => return Err(lines.err(format!("unknown model kind `{other}`"))),
    };
    spec.validate()?;
    let n: usize = lines.header("params")?;
    if n != spec.num_params() {
        return Err(lines.err(format!("model needs {} params, header says {n}", spec.num_params())));
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let l = lines.next("parameter")?;
        values.push(lines.parse::<f64>(l)?);
    }
    lines.expect("end")?;
    Ok((spec, ParamVector::new(values)?))
}
