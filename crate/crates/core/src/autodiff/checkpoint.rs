//! Plain-text parameter checkpoints.
//!
//! ```text
//! qsim-checkpoint 1
//! meta arch rcnn
//! meta pretrained false
//! tensor rcnn.w1 2 400 200
//! 1.5e-2 -3.1e-2 ...
//! end
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the same `f64`, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "qsim-checkpoint";
const VERSION: &str = "1";
const VALUES_PER_LINE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

impl Checkpoint {
    pub fn new(params: ParamStore) -> Self {
        Checkpoint {
            meta: BTreeMap::new(),
            params,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{MAGIC} {VERSION}")?;
        for (k, v) in &self.meta {
            if !is_token(k) || !is_token(v) {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint meta `{k}`=`{v}` contains whitespace"
                )));
            }
            writeln!(w, "meta {k} {v}")?;
        }
        for (_, name, t) in self.params.iter() {
            if !is_token(name) {
                return Err(Error::InvalidArgument(format!(
                    "parameter name `{name}` contains whitespace"
                )));
            }
            write!(w, "tensor {name} {}", t.shape().len())?;
            for d in t.shape() {
                write!(w, " {d}")?;
            }
            writeln!(w)?;
            for chunk in t.data().chunks(VALUES_PER_LINE) {
                let line: Vec<String> = chunk.iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let src = "checkpoint";
        let mut lines = BufReader::new(r).lines().enumerate();
        let mut next = || -> Result<Option<(usize, String)>> {
            match lines.next() {
                Some((i, l)) => Ok(Some((i + 1, l?))),
                None => Ok(None),
            }
        };
        let (_, header) = next()?.ok_or_else(|| Error::parse(src, 1, "empty file"))?;
        if header.trim() != format!("{MAGIC} {VERSION}") {
            return Err(Error::parse(src, 1, format!("bad header `{header}`")));
        }
        let mut ck = Checkpoint::new(ParamStore::new());
        loop {
            let (lineno, line) = next()?.ok_or_else(|| Error::parse(src, 0, "missing `end`"))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.first().copied() {
                Some("end") => break,
                Some("meta") if fields.len() == 3 => {
                    ck.meta.insert(fields[1].to_string(), fields[2].to_string());
                }
                Some("tensor") if fields.len() >= 3 => {
                    let name = fields[1].to_string();
                    let rank: usize = fields[2].parse().map_err(|_| Error::parse(src, lineno, "bad rank"))?;
                    if fields.len() != 3 + rank {
                        return Err(Error::parse(src, lineno, "rank does not match dimension count"));
                    }
                    let shape = fields[3..]
                        .iter()
                        .map(|d| {
                            d.parse::<usize>()
                                .map_err(|_| Error::parse(src, lineno, "bad dimension"))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let n: usize = shape.iter().product();
                    let mut data = Vec::with_capacity(n);
                    while data.len() < n {
                        let (vl, values) = next()?.ok_or_else(|| Error::parse(src, lineno, "truncated tensor"))?;
                        for tok in values.split_whitespace() {
                            let v: f64 = tok
                                .parse()
                                .map_err(|_| Error::parse(src, vl, format!("bad value `{tok}`")))?;
                            data.push(v);
                        }
                    }
                    if data.len() != n {
                        return Err(Error::parse(src, lineno, "too many values for tensor"));
                    }
                    if ck.params.id(&name).is_some() {
                        return Err(Error::parse(src, lineno, format!("duplicate tensor `{name}`")));
                    }
                    ck.params.add(name, Tensor::new(shape, data)?);
                }
                _ => return Err(Error::parse(src, lineno, format!("unexpected line `{line}`"))),
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::read_from(fs::File::open(path)?)
    }
}
