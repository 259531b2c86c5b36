//! Checkpoint container.
//!
//! Layout:
//!
//! ```text
//! advasr-checkpoint 1
//! tensors <n>
//! <name> <d0,d1,..|-> f32 <byte offset>     (n lines)
//! meta <m>
//! <key> <value>                            (m lines)
//! end
//! <little-endian f32 payload>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::tensor::{Element, Tensor};

const MAGIC: &str = "advasr-checkpoint";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    tensors: Vec<(String, Tensor<f32>)>,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<F: Element>(&mut self, name: impl Into<String>, t: &Tensor<F>) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(bad(format!("invalid tensor name {name:?}")));
        }
        if self.tensors.iter().any(|(n, _)| *n == name) {
            return Err(TensorError::DuplicateName(name));
        }
        self.tensors.push((name, t.cast()));
        Ok(())
    }

    /// Add every tensor of `store` under `prefix`.
    pub fn add_store<F: Element>(&mut self, prefix: &str, store: &ParamStore<F>) -> Result<()> {
        for (_, p) in store.iter() {
            self.insert(format!("{prefix}{}", p.name), &p.value)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    /// Load values for every tensor of `store` from entries named
    /// `prefix + name`, checking shapes against the constructed model.
    pub fn restore_store<F: Element>(&self, prefix: &str, store: &mut ParamStore<F>) -> Result<()> {
        let mut updates = Vec::with_capacity(store.len());
        for (id, p) in store.iter() {
            let key = format!("{prefix}{}", p.name);
            let t = self.get(&key).ok_or_else(|| bad(format!("missing tensor `{key}`")))?;
            if t.shape() != p.value.shape() {
                return Err(bad(format!(
                    "`{key}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            updates.push((id, t.cast::<F>()));
        }
        for (id, t) in updates {
            store.set_value(id, t)?;
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut header = format!("{MAGIC} {VERSION}\ntensors {}\n", self.tensors.len());
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let shape = if t.shape().is_empty() {
                "-".to_string()
            } else {
                t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
            };
            header.push_str(&format!("{name} {shape} f32 {offset}\n"));
            offset += t.numel() * 4;
        }
        header.push_str(&format!("meta {}\n", self.meta.len()));
        for (k, v) in &self.meta {
            if k.chars().any(char::is_whitespace) || v.contains('\n') {
                return Err(bad(format!("invalid meta entry {k:?}")));
            }
            header.push_str(&format!("{k} {v}\n"));
        }
        header.push_str("end\n");
        w.write_all(header.as_bytes())?;
        let mut payload = Vec::with_capacity(offset);
        for (_, t) in &self.tensors {
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let mut next_line = |r: &mut BufReader<_>| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("unexpected end of header"));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        let first = next_line(&mut r)?;
        let version = first
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad("not a checkpoint file"))?;
        if version != VERSION.to_string() {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let count = parse_count(&next_line(&mut r)?, "tensors")?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let l = next_line(&mut r)?;
            let parts: Vec<&str> = l.split(' ').collect();
            let [name, shape, dtype, offset] = parts[..] else {
                return Err(bad(format!("malformed tensor line {l:?}")));
            };
            if dtype != "f32" {
                return Err(bad(format!("unsupported dtype {dtype}")));
            }
            let shape: Vec<usize> = if shape == "-" {
                Vec::new()
            } else {
                shape
                    .split(',')
                    .map(|d| d.parse().map_err(|_| bad(format!("bad shape in {l:?}"))))
                    .collect::<Result<_>>()?
            };
            let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset in {l:?}")))?;
            entries.push((name.to_string(), shape, offset));
        }
        let mcount = parse_count(&next_line(&mut r)?, "meta")?;
        let mut meta = BTreeMap::new();
        for _ in 0..mcount {
            let l = next_line(&mut r)?;
            let (k, v) = l.split_once(' ').ok_or_else(|| bad(format!("malformed meta line {l:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        if next_line(&mut r)? != "end" {
            return Err(bad("missing header terminator"));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, shape, offset) in entries {
            let n: usize = shape.iter().product();
            let end = offset + n * 4;
            let bytes = payload
                .get(offset..end)
                .ok_or_else(|| bad(format!("payload too short for `{name}`")))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { tensors, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

fn parse_count(line: &str, key: &str) -> Result<usize> {
    line.strip_prefix(key)
        .and_then(|r| r.trim().parse().ok())
        .ok_or_else(|| bad(format!("expected `{key} <n>`, got {line:?}")))
}
