//! Word-embedding table: reserved padding/unknown rows, optional loading
//! from a plain-text vector file, and the tape lookup path.

use std::io::BufRead;
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::kernel::{ParamStore, SeedRng, Tape, Tensor, Var};

pub const EMB_PARAM: &str = "emb.table";

/// Initialization range for embedding rows that have no loaded vector.
const INIT_RANGE: f64 = 0.5;

/// Embedding metadata; the matrix itself lives in the parameter store under
/// [`EMB_PARAM`] so that checkpointing and (when unfrozen) optimization see
/// it like any other parameter.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub vocab_size: usize,
    pub dim: usize,
    /// When false the table never enters the tape, so it receives no
    /// gradient and the optimizer cannot move it.
    pub trainable: bool,
}

/// Coverage report from loading a word-vector file.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorCoverage {
    pub matched: usize,
    pub vocab_tokens: usize,
}

impl VectorCoverage {
    pub fn fraction(&self) -> f64 {
        if self.vocab_tokens == 0 {
            0.0
        } else {
            self.matched as f64 / self.vocab_tokens as f64
        }
    }
}

impl EmbeddingTable {
    /// Random table: padding row zero, every other row uniform in
    /// (-INIT_RANGE, INIT_RANGE).
    pub fn init_random(
        store: &mut ParamStore,
        vocab_size: usize,
        dim: usize,
        trainable: bool,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        let mut data = vec![0.0; vocab_size * dim];
        for row in 1..vocab_size {
            for v in &mut data[row * dim..(row + 1) * dim] {
                *v = rng.uniform(-INIT_RANGE, INIT_RANGE);
            }
        }
        store.insert(EMB_PARAM, Tensor::matrix(vocab_size, dim, data)?)?;
        Ok(EmbeddingTable {
            vocab_size,
            dim,
            trainable,
        })
    }

    /// Overwrite rows from a text file of `token v1 v2 ... vD` lines.
    /// Tokens absent from the vocabulary are ignored; vocabulary tokens
    /// absent from the file keep their random initialization. Returns how
    /// many vocabulary tokens were matched.
    pub fn load_vectors(
        &self,
        store: &mut ParamStore,
        vocab: &Vocabulary,
        path: &Path,
    ) -> Result<VectorCoverage> {
        let display = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
        let reader = std::io::BufReader::new(file);
        let mut matched = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(&display, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("non-empty line has a first field");
            let values: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|_| Error::MalformedInput {
                        path: display.clone(),
                        line: lineno + 1,
                        reason: format!("bad vector component `{p}`"),
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != self.dim {
                return Err(Error::MalformedInput {
                    path: display.clone(),
                    line: lineno + 1,
                    reason: format!("expected {} components, found {}", self.dim, values.len()),
                });
            }
            if let Some(id) = vocab.lookup(token) {
                let table = store.get_mut(EMB_PARAM)?;
                table.value.row_mut(id as usize).copy_from_slice(&values);
                matched += 1;
            }
        }
        Ok(VectorCoverage {
            matched,
            vocab_tokens: vocab.token_count(),
        })
    }

    /// Token vectors as tape nodes. Trainable tables are bound as a
    /// parameter so gradients flow into the rows that were used; frozen
    /// tables enter as constants.
    pub fn lookup(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ids: &[u32],
    ) -> Result<Vec<Var>> {
        if ids.is_empty() {
            return Err(Error::EmptySequence {
                op: "embedding lookup",
            });
        }
        for &id in ids {
            if id as usize >= self.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab_size: self.vocab_size,
                });
            }
        }
        if self.trainable {
            let table = tape.param(store, EMB_PARAM)?;
            ids.iter().map(|&id| tape.row(table, id as usize)).collect()
        } else {
            let table = &store.get(EMB_PARAM)?.value;
            Ok(ids
                .iter()
                .map(|&id| tape.leaf(Tensor::vector(table.row(id as usize).to_vec())))
                .collect())
        }
    }
}
