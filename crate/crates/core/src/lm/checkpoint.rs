//! On-disk model format.
//!
//! A checkpoint is a directory holding `manifest.txt` (header, kind, config
//! as one JSON line, blob digest, then one `tensor` line per array giving
//! name, dtype, shape and byte range) and `tensors.bin`, the concatenated
//! little-endian `f64` data. A full checkpoint may also carry `vocab.txt`.
//! Adapter exports use the same layout restricted to adapters and critic.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::{ModelParams, ParamSet};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tokenizer::Vocab;

const HEADER: &str = "lmagent-checkpoint 1";
const MANIFEST: &str = "manifest.txt";
const BLOB: &str = "tensors.bin";
const VOCAB: &str = "vocab.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Full,
    Adapters,
}

impl Kind {
    fn as_str(self) -> &'static str {
        match self {
            Kind::Full => "full",
            Kind::Adapters => "adapters",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Option<Vocab>,
}

/// Expected shape of a named tensor under `cfg`.
fn shape_of(name: &str, cfg: &ModelConfig) -> Vec<usize> {
    let (d, f, r) = (cfg.embed_dim, cfg.ff_dim(), cfg.adapter_rank);
    let (h1, h2) = cfg.critic_hidden;
    let leaf = name.rsplit('.').next().unwrap_or(name);
    match name {
        "tok_emb" => vec![cfg.vocab_size, d],
        "pos_emb" => vec![cfg.context_length, d],
        "critic.w1" => vec![d, h1],
        "critic.b1" => vec![h1],
        "critic.w2" => vec![h1, h2],
        "critic.b2" => vec![h2],
        "critic.w3" => vec![h2, 1],
        "critic.b3" => vec![1],
        _ if name.starts_with("adapter") => match leaf {
            "a" => vec![d, r],
            _ => vec![r, d],
        },
        _ => match leaf {
            "wq" | "wk" | "wv" | "wo" => vec![d, d],
            "w1" => vec![d, f],
            "b1" => vec![f],
            "w2" => vec![f, d],
            _ => vec![d],
        },
    }
}

fn named_tensors(params: &ModelParams, kind: Kind) -> Vec<(String, &[f64])> {
    let mut out = Vec::new();
    if kind == Kind::Full {
        out.extend(params.base.tensors());
    }
    out.extend(params.adapters.tensors());
    out.extend(params.critic.tensors());
    out
}

fn write(dir: &Path, params: &ModelParams, kind: Kind) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tensors = named_tensors(params, kind);
    let mut blob = Vec::with_capacity(tensors.iter().map(|(_, t)| t.len() * 8).sum());
    let mut lines = Vec::new();
    for (name, t) in &tensors {
        let shape = shape_of(name, &params.config);
        debug_assert_eq!(shape.iter().product::<usize>(), t.len(), "{name}");
        let start = blob.len();
        for v in t.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let dims: Vec<String> = shape.iter().map(|s| s.to_string()).collect();
        lines.push(format!("tensor {name} f64 {} {start} {}", dims.join("x"), blob.len() - start));
    }
    let digest = hex(&Sha256::digest(&blob));
    let mut manifest = format!(
        "{HEADER}\nkind {}\nconfig {}\nblob {BLOB} {} sha256={digest}\n",
        kind.as_str(),
        serde_json::to_string(&params.config)?,
        blob.len()
    );
    for l in lines {
        manifest.push_str(&l);
        manifest.push('\n');
    }
    fs::write(dir.join(BLOB), &blob)?;
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Parsed {
    kind: Kind,
    config: ModelConfig,
    tensors: Vec<(String, Vec<usize>, usize, usize)>,
    blob: Vec<u8>,
}

fn read(dir: &Path) -> Result<Parsed> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", dir.join(MANIFEST).display()));
    let mut lines = text.lines();
    match lines.next() {
        Some(HEADER) => {}
        Some(h) if h.starts_with("lmagent-checkpoint") => {
            return Err(Error::Mismatch(format!("unsupported checkpoint version {h:?}")))
        }
        _ => return Err(bad("missing header")),
    }
    let kind = match lines.next().and_then(|l| l.strip_prefix("kind ")) {
        Some("full") => Kind::Full,
        Some("adapters") => Kind::Adapters,
        _ => return Err(bad("missing or unknown kind")),
    };
    let config: ModelConfig = lines
        .next()
        .and_then(|l| l.strip_prefix("config "))
        .ok_or_else(|| bad("missing config"))
        .and_then(|j| serde_json::from_str(j).map_err(|e| bad(&e.to_string())))?;
    config.validate().map_err(|e| bad(&e.to_string()))?;
    let blob_line = lines.next().and_then(|l| l.strip_prefix("blob ")).ok_or_else(|| bad("missing blob line"))?;
    let parts: Vec<&str> = blob_line.split_whitespace().collect();
    let (len, digest) = match parts.as_slice() {
        [_, len, sum] => (
            len.parse::<usize>().map_err(|_| bad("bad blob length"))?,
            sum.strip_prefix("sha256=").ok_or_else(|| bad("bad blob digest"))?,
        ),
        _ => return Err(bad("bad blob line")),
    };
    let blob = fs::read(dir.join(BLOB))?;
    if blob.len() != len || hex(&Sha256::digest(&blob)) != digest {
        return Err(bad("tensor blob does not match its manifest"));
    }
    let mut tensors = Vec::new();
    for l in lines.filter(|l| !l.trim().is_empty()) {
        let p: Vec<&str> = l.split_whitespace().collect();
        match p.as_slice() {
            ["tensor", name, "f64", dims, off, n] => {
                let shape = dims
                    .split('x')
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad shape"))?;
                let off = off.parse::<usize>().map_err(|_| bad("bad offset"))?;
                let n = n.parse::<usize>().map_err(|_| bad("bad byte count"))?;
                if off + n > blob.len() || n != shape.iter().product::<usize>() * 8 {
                    return Err(bad(&format!("tensor {name} out of range")));
                }
                tensors.push((name.to_string(), shape, off, n));
            }
            _ => return Err(bad(&format!("unrecognized line {l:?}"))),
        }
    }
    Ok(Parsed { kind, config, tensors, blob })
}

fn fill(parsed: &Parsed, target: Vec<(String, &mut [f64])>) -> Result<()> {
    if parsed.tensors.len() != target.len() {
        return Err(Error::Mismatch(format!(
            "expected {} tensors, manifest lists {}",
            target.len(),
            parsed.tensors.len()
        )));
    }
    for ((name, shape, off, n), (want, dst)) in parsed.tensors.iter().zip(target) {
        if *name != want {
            return Err(Error::Mismatch(format!("expected tensor {want}, found {name}")));
        }
        if *n != dst.len() * 8 {
            return Err(Error::Mismatch(format!("tensor {name} has shape {shape:?}, expected {} values", dst.len())));
        }
        for (v, chunk) in dst.iter_mut().zip(parsed.blob[*off..off + n].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    Ok(())
}

fn names_with_mut(names: Vec<String>, slots: Vec<&mut [f64]>) -> Vec<(String, &mut [f64])> {
    names.into_iter().zip(slots).collect()
}

pub fn save_checkpoint(dir: &Path, params: &ModelParams, vocab: Option<&Vocab>) -> Result<()> {
    write(dir, params, Kind::Full)?;
    match vocab {
        Some(v) => v.save(&dir.join(VOCAB))?,
        None => {
            let _ = fs::remove_file(dir.join(VOCAB));
        }
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let parsed = read(dir)?;
    if parsed.kind != Kind::Full {
        return Err(Error::Mismatch(format!("{} is an adapter export, not a full checkpoint", dir.display())));
    }
    let mut params = ModelParams::init(&parsed.config, 0);
    {
        let names: Vec<String> = named_tensors(&params, Kind::Full).into_iter().map(|(n, _)| n).collect();
        let mut slots = params.base.tensors_mut();
        slots.extend(params.adapters.tensors_mut());
        slots.extend(params.critic.tensors_mut());
        fill(&parsed, names_with_mut(names, slots))?;
    }
    let vocab_path = dir.join(VOCAB);
    let vocab = if vocab_path.exists() { Some(Vocab::load(&vocab_path)?) } else { None };
    if let Some(v) = &vocab {
        if v.len() > parsed.config.vocab_size {
            return Err(Error::Mismatch(format!(
                "vocabulary has {} entries but the model only {}",
                v.len(),
                parsed.config.vocab_size
            )));
        }
    }
    Ok(Checkpoint { params, vocab })
}

/// Writes only the adapter pairs and the critic head.
pub fn save_adapters(dir: &Path, params: &ModelParams) -> Result<()> {
    write(dir, params, Kind::Adapters)
}

/// Loads an adapter export onto `params`, whose config must match exactly.
pub fn load_adapters(dir: &Path, params: &mut ModelParams) -> Result<()> {
    let parsed = read(dir)?;
    if parsed.kind != Kind::Adapters {
        return Err(Error::Mismatch(format!("{} is not an adapter export", dir.display())));
    }
    if parsed.config != params.config {
        return Err(Error::Mismatch("adapter export was made for a different model config".into()));
    }
    let names: Vec<String> = named_tensors(params, Kind::Adapters).into_iter().map(|(n, _)| n).collect();
    let mut slots = params.adapters.tensors_mut();
    slots.extend(params.critic.tensors_mut());
    fill(&parsed, names_with_mut(names, slots))?;
    params.touch();
    Ok(())
}
