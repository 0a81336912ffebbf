//! Versioned binary container for model parameters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "CVCK" | u32 version
//! str capacity | u64 d_u | u64 d_c | u64 vocab_size | u64 emb_dim
//! u32 meta_count | meta_count x (str key, str value)
//! u64 token_count | token_count x (str token, u64 count)
//! u32 param_count | param_count x (str name, u32 ndim, ndim x u64 dim, n x f64)
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes. Parameter values are
//! raw IEEE-754 bits, so a write/read round trip is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::optim::ParamStore;
use crate::kernel::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CVCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub capacity: String,
    pub utterance_hidden: usize,
    pub conversation_hidden: usize,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub meta: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    /// Vocabulary tokens in id order starting at id 2 (0 and 1 are the
    /// reserved padding and unknown rows), each with its training count.
    pub tokens: Vec<(String, u64)>,
    pub params: Vec<(String, Tensor)>,
}

impl CheckpointHeader {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

impl Checkpoint {
    pub fn from_store(header: CheckpointHeader, tokens: Vec<(String, u64)>, store: &ParamStore) -> Self {
        Checkpoint {
            header,
            tokens,
            params: store
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    /// Rebuild a parameter store (grads zeroed) in record order.
    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, value) in &self.params {
            store.insert(name, value.clone())?;
        }
        Ok(store)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Serialize into a writer.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(w, &self.header.capacity)?;
        for v in [
            self.header.utterance_hidden,
            self.header.conversation_hidden,
            self.header.vocab_size,
            self.header.embedding_dim,
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&(self.header.meta.len() as u32).to_le_bytes())?;
        for (k, v) in &self.header.meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_all(&(self.tokens.len() as u64).to_le_bytes())?;
        for (token, count) in &self.tokens {
            write_str(w, token)?;
            w.write_all(&count.to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.params {
            write_str(w, name)?;
            w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
            for &d in tensor.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in tensor.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, path: &str) -> Result<Self> {
        let bad = |reason: &str| Error::BadCheckpoint {
            path: path.to_string(),
            reason: reason.to_string(),
        };
        let io_err = |e: std::io::Error| Error::io(path, e);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(bad("wrong magic bytes"));
        }
        let version = read_u32(r).map_err(io_err)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let capacity = read_str(r).map_err(io_err)?;
        let utterance_hidden = read_u64(r).map_err(io_err)? as usize;
        let conversation_hidden = read_u64(r).map_err(io_err)? as usize;
        let vocab_size = read_u64(r).map_err(io_err)? as usize;
        let embedding_dim = read_u64(r).map_err(io_err)? as usize;
        let meta_count = read_u32(r).map_err(io_err)? as usize;
        let mut meta = Vec::with_capacity(meta_count);
        for _ in 0..meta_count {
            let k = read_str(r).map_err(io_err)?;
            let v = read_str(r).map_err(io_err)?;
            meta.push((k, v));
        }
        let token_count = read_u64(r).map_err(io_err)? as usize;
        let mut tokens = Vec::with_capacity(token_count);
        for _ in 0..token_count {
            let token = read_str(r).map_err(io_err)?;
            let count = read_u64(r).map_err(io_err)?;
            tokens.push((token, count));
        }
        let param_count = read_u32(r).map_err(io_err)? as usize;
        let mut params = Vec::with_capacity(param_count);
        for _ in 0..param_count {
            let name = read_str(r).map_err(io_err)?;
            let ndim = read_u32(r).map_err(io_err)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(r).map_err(io_err)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = vec![0.0f64; n];
            let mut buf = [0u8; 8];
            for slot in data.iter_mut() {
                r.read_exact(&mut buf).map_err(io_err)?;
                *slot = f64::from_le_bytes(buf);
            }
            let tensor = Tensor::new(shape, data)
                .map_err(|_| bad(&format!("inconsistent shape for `{name}`")))?;
            params.push((name, tensor));
        }
        Ok(Checkpoint {
            header: CheckpointHeader {
                capacity,
                utterance_hidden,
                conversation_hidden,
                vocab_size,
                embedding_dim,
                meta,
            },
            tokens,
            params,
        })
    }

    /// Atomic save: write to a sibling temp file, then rename into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let tmp = path.with_extension("tmp");
        {
            let file = File::create(&tmp).map_err(|e| Error::io(&display, e))?;
            let mut w = BufWriter::new(file);
            self.write_to(&mut w).map_err(|e| Error::io(&display, e))?;
            w.flush().map_err(|e| Error::io(&display, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(&display, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(&display, e))?;
        let mut r = BufReader::new(file);
        Checkpoint::read_from(&mut r, &display)
    }
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
