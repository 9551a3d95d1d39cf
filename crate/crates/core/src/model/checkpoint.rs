//! Checkpoint file: a short text header (magic with config hash, model
//! dims, the run config, the adjacent margins in force) followed by every
//! parameter as a named block in the portable tensor format.
//!
//! ```text
//! MMOCKPT v1 <config-hash>
//! dims prompt=<p> speech=<s> hidden=<h> ffn=<f> levels=8 rotary=<0|1>
//! epoch <e>
//! margins <m1> ... <m7>
//! config <n-bytes>
//! <n bytes of TOML>
//! params <count>
//! param <name>
//! TNSR v1 <rows> <cols>
//! <payload>
//! ...
//! ```

use std::io::{BufRead, Write};

use super::{AspectModel, ModelDims};
use crate::config::RunConfig;
use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::labels::NUM_LEVELS;
use crate::numerics::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &str = "MMOCKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: AspectModel<f32>,
    pub epoch: usize,
    pub margins: [f64; NUM_LEVELS - 1],
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, self)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        read_checkpoint(&mut std::io::BufReader::new(file))
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let d = ckpt.model.dims;
    let config = ckpt.config.to_toml_string();
    writeln!(w, "{CHECKPOINT_MAGIC} v1 {}", ckpt.config.hash())?;
    writeln!(
        w,
        "dims prompt={} speech={} hidden={} ffn={} levels={NUM_LEVELS} rotary={}",
        d.prompt, d.speech, d.hidden, d.ffn, ckpt.model.rotary as u8
    )?;
    writeln!(w, "epoch {}", ckpt.epoch)?;
    let margins: Vec<String> = ckpt.margins.iter().map(|m| m.to_string()).collect();
    writeln!(w, "margins {}", margins.join(" "))?;
    writeln!(w, "config {}", config.len())?;
    w.write_all(config.as_bytes())?;
    writeln!(w, "params {}", ckpt.model.params.len())?;
    for p in ckpt.model.params.iter() {
        writeln!(w, "param {}", p.name)?;
        let m = Matrix::new(p.tensor.rows(), p.tensor.cols(), p.tensor.data().to_vec())?;
        m.write_to(&mut w)?;
    }
    Ok(())
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut s = String::new();
    if r.read_line(&mut s)? == 0 {
        return Err(Error::Checkpoint("unexpected end of file".into()));
    }
    Ok(s.trim_end_matches(['\n', '\r']).to_string())
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Checkpoint(format!("expected `{key}` line, found {line:?}")))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("bad {what} {s:?}")))
}

pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<Checkpoint> {
    let magic = read_line(r)?;
    let hash = field(&magic, &format!("{CHECKPOINT_MAGIC} v1"))?.to_string();

    let dims_line = read_line(r)?;
    let mut kv = std::collections::HashMap::new();
    for tok in field(&dims_line, "dims")?.split(' ') {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad dims token {tok:?}")))?;
        kv.insert(k, parse::<usize>(v, k)?);
    }
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("dims missing {k}")))
    };
    if get("levels")? != NUM_LEVELS {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} levels",
            get("levels")?
        )));
    }
    let dims = ModelDims {
        prompt: get("prompt")?,
        speech: get("speech")?,
        hidden: get("hidden")?,
        ffn: get("ffn")?,
    };
    let rotary = get("rotary")? != 0;
    let epoch = parse(field(&read_line(r)?, "epoch")?, "epoch")?;

    let margin_line = read_line(r)?;
    let values: Vec<f64> = field(&margin_line, "margins")?
        .split(' ')
        .map(|m| parse(m, "margin"))
        .collect::<Result<_>>()?;
    let margins: [f64; NUM_LEVELS - 1] = values
        .try_into()
        .map_err(|_| Error::Checkpoint("expected 7 margins".into()))?;

    let n: usize = parse(field(&read_line(r)?, "config")?, "config length")?;
    let mut text = vec![0u8; n];
    r.read_exact(&mut text)?;
    let text =
        String::from_utf8(text).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let config = RunConfig::from_toml_str(&text)?;
    if config.hash() != hash {
        return Err(Error::Checkpoint(format!(
            "config hash {} does not match header {hash}",
            config.hash()
        )));
    }

    let count: usize = parse(field(&read_line(r)?, "params")?, "parameter count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = field(&read_line(r)?, "param")?.to_string();
        let m = Matrix::read_from(r)?;
        params.push(name, Tensor::matrix(m.rows(), m.cols(), m.data().to_vec())?);
    }
    let model = AspectModel::from_params(dims, rotary, params)?;
    Ok(Checkpoint {
        config,
        model,
        epoch,
        margins,
    })
}
