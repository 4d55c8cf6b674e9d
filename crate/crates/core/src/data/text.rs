use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;

pub const BYTE_VOCAB: usize = 256;

/// Small English corpus shipped with the crate for smoke training.
pub const BUNDLED_CORPUS: &[u8] = include_bytes!("../../data/corpus.txt");

/// Fixed-length byte windows; the trailing partial window is dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenWindows {
    pub seq_len: usize,
    pub windows: Vec<Vec<usize>>,
}

impl TokenWindows {
    pub fn from_bytes(bytes: &[u8], seq_len: usize) -> Result<Self, DataError> {
        if bytes.is_empty() {
            return Err(DataError::Empty("text input has no bytes".into()));
        }
        if seq_len == 0 {
            return Err(DataError::Spec("seq_len must be >= 1".into()));
        }
        let windows: Vec<Vec<usize>> = bytes
            .chunks_exact(seq_len)
            .map(|c| c.iter().map(|&b| b as usize).collect())
            .collect();
        if windows.is_empty() {
            return Err(DataError::Empty(format!(
                "{} bytes is shorter than one window of {seq_len}",
                bytes.len()
            )));
        }
        Ok(Self { seq_len, windows })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Window order for one epoch, fixed by `seed`.
    pub fn shuffled_order(&self, seed: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }

    /// Splits off the last `fraction` of windows as held-out data.
    pub fn split_holdout(mut self, fraction: f64) -> Result<(Self, Self), DataError> {
        let n_test = ((self.len() as f64 * fraction).round() as usize).max(1);
        if n_test >= self.len() {
            return Err(DataError::Empty(format!("{} windows cannot be split", self.len())));
        }
        let test = self.windows.split_off(self.len() - n_test);
        Ok((
            self.clone(),
            Self {
                seq_len: self.seq_len,
                windows: test,
            },
        ))
    }
}

pub fn ingest_text(path: &Path, seq_len: usize) -> Result<TokenWindows, DataError> {
    let bytes = std::fs::read(path)?;
    TokenWindows::from_bytes(&bytes, seq_len)
}

pub fn detokenize(tokens: &[usize]) -> Vec<u8> {
    tokens.iter().map(|&t| t as u8).collect()
}
