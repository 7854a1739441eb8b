use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SemanticError;
use crate::service::ServiceClient;

/// Maps text to a fixed-size embedding vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>, SemanticError>;
}

/// Deterministic stand-in for a real text encoder: SHA-256 of a domain tag,
/// the seed, a chunk counter and the text is expanded into `d_h` uniform
/// values in `[-1, 1]`, then normalized to unit length.
#[derive(Clone, Debug)]
pub struct PseudoEmbedder {
    pub seed: u64,
    pub d_h: usize,
}

impl PseudoEmbedder {
    pub fn new(seed: u64, d_h: usize) -> Self {
        Self { seed, d_h }
    }
}

pub const PSEUDO_DOMAIN: &[u8] = b"semsds-pseudo-v1";

/// Raw (unnormalized) pseudo-embedding values.
pub fn pseudo_values(seed: u64, text: &str, d_h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d_h);
    let mut chunk: u32 = 0;
    while out.len() < d_h {
        let mut h = Sha256::new();
        h.update(PSEUDO_DOMAIN);
        h.update(seed.to_le_bytes());
        h.update(chunk.to_le_bytes());
        h.update(text.as_bytes());
        let digest = h.finalize();
        for word in digest.chunks_exact(4) {
            if out.len() == d_h {
                break;
            }
            let u = u32::from_le_bytes([word[0], word[1], word[2], word[3]]);
            out.push(u as f64 / u32::MAX as f64 * 2.0 - 1.0);
        }
        chunk += 1;
    }
    out
}

pub fn normalize(v: &mut [f64]) -> Result<(), SemanticError> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(SemanticError::InvalidInput("embedding has zero or non-finite norm".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

impl EmbeddingProvider for PseudoEmbedder {
    fn dim(&self) -> usize {
        self.d_h
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>, SemanticError> {
        let mut v = pseudo_values(self.seed, text, self.d_h);
        normalize(&mut v)?;
        Ok(v)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableEntry {
    pub text: String,
    /// Byte offset into the payload.
    pub offset: u64,
}

/// JSON header of an embedding table. The payload is a separate file of
/// little-endian f32 values; `payload` names it relative to the header and
/// defaults to the header path with a `.bin` extension.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableHeader {
    pub d_h: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    pub entries: Vec<TableEntry>,
}

/// Lookup-table provider backed by an embedding table file.
#[derive(Clone, Debug)]
pub struct FileEmbedder {
    d_h: usize,
    table: HashMap<String, Vec<f64>>,
}

impl FileEmbedder {
    pub fn load(header_path: &Path) -> Result<Self, SemanticError> {
        let header: TableHeader = serde_json::from_slice(&fs::read(header_path)?)?;
        let payload_path = match &header.payload {
            Some(p) => header_path.parent().unwrap_or(Path::new(".")).join(p),
            None => header_path.with_extension("bin"),
        };
        let payload = fs::read(&payload_path)?;
        let mut table = HashMap::new();
        for e in &header.entries {
            let start = e.offset as usize;
            let end = start + 4 * header.d_h;
            let bytes = payload.get(start..end).ok_or_else(|| {
                SemanticError::Format(format!("entry '{}' at offset {} runs past the payload", e.text, e.offset))
            })?;
            let v = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
            table.insert(e.text.clone(), v);
        }
        Ok(Self { d_h: header.d_h, table })
    }

    /// Writes `entries` as a header file plus payload next to it.
    pub fn write(header_path: &Path, d_h: usize, entries: &[(String, Vec<f64>)]) -> Result<(), SemanticError> {
        let mut payload = Vec::new();
        let mut header = TableHeader { d_h, payload: None, entries: Vec::new() };
        for (text, v) in entries {
            if v.len() != d_h {
                return Err(SemanticError::InvalidInput(format!("'{text}' has {} values, expected {d_h}", v.len())));
            }
            header.entries.push(TableEntry { text: text.clone(), offset: payload.len() as u64 });
            payload.extend(v.iter().flat_map(|x| (*x as f32).to_le_bytes()));
        }
        fs::write(header_path.with_extension("bin"), payload)?;
        fs::write(header_path, serde_json::to_vec_pretty(&header)?)?;
        Ok(())
    }
}

impl EmbeddingProvider for FileEmbedder {
    fn dim(&self) -> usize {
        self.d_h
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>, SemanticError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| SemanticError::NotFound(format!("no embedding for '{text}' in the table")))
    }
}

/// Text encoder served by the guidance service.
#[derive(Debug)]
pub struct RemoteEmbedder {
    client: ServiceClient,
    d_h: usize,
}

impl RemoteEmbedder {
    /// Performs the health handshake to learn `d_h`.
    pub fn connect(client: ServiceClient) -> Result<Self, SemanticError> {
        let health = client.health()?;
        let d_h = health
            .d_h
            .ok_or_else(|| SemanticError::InvalidInput("service health did not report d_h".into()))?;
        Ok(Self { client, d_h })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.d_h
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>, SemanticError> {
        let v: Vec<f64> = self.client.encode_text(text)?.into_iter().map(f64::from).collect();
        if v.len() != self.d_h {
            return Err(SemanticError::InvalidInput(format!(
                "service returned {} values, handshake declared {}",
                v.len(),
                self.d_h
            )));
        }
        Ok(v)
    }
}
