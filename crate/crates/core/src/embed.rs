//! Per-utterance embeddings and saliency scores from a frozen vowel CNN,
//! and their on-disk form: one little-endian f32 file per speaker plus a
//! JSON index.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::LogMelExtractor;
use crate::corpus::SpeakerRecord;
use crate::error::{Error, Result};
use crate::vowel::{SaliencyStrategy, VowelCnn};

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbeddings {
    pub speaker_id: String,
    pub label: u8,
    /// One row per utterance, in utterance order.
    pub rows: Vec<Vec<f32>>,
    pub saliency: Vec<f64>,
}

impl SpeakerEmbeddings {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Embed every utterance of `speaker` with the frozen model.
pub fn embed_speaker(
    model: &VowelCnn<f32>,
    extractor: &LogMelExtractor,
    speaker: &SpeakerRecord,
    strategy: SaliencyStrategy,
) -> Result<SpeakerEmbeddings> {
    let sr = extractor.config().sample_rate;
    let per_utt = crate::par::try_map_slice(&speaker.utterances, |u| {
        let w = u.load_waveform(sr)?;
        let patch = extractor.extract(&w)?;
        model.embed(&patch, strategy)
    })?;
    let (rows, saliency) = per_utt.into_iter().map(|e| (e.values, e.saliency)).unzip();
    Ok(SpeakerEmbeddings {
        speaker_id: speaker.speaker_id.clone(),
        label: speaker.label,
        rows,
        saliency,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndexEntry {
    pub speaker_id: String,
    pub label: u8,
    pub utterances: usize,
    pub file: String,
    pub saliency: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    pub dim: usize,
    pub strategy: SaliencyStrategy,
    pub speakers: Vec<EmbeddingIndexEntry>,
}

pub fn rows_to_bytes(rows: &[Vec<f32>]) -> Vec<u8> {
    rows.iter().flatten().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_rows(bytes: &[u8], dim: usize, path: &Path) -> Result<Vec<Vec<f32>>> {
    if dim == 0 || !bytes.len().is_multiple_of(4 * dim) {
        return Err(Error::Format {
            what: "embedding rows",
            path: path.to_path_buf(),
            detail: format!("{} bytes is not a whole number of {dim}-float rows", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4 * dim)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        })
        .collect())
}

pub fn write_embeddings(dir: &Path, speakers: &[SpeakerEmbeddings], strategy: SaliencyStrategy) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(speakers.len());
    for s in speakers {
        let file = format!("{}.bin", s.speaker_id);
        let path = dir.join(&file);
        fs::write(&path, rows_to_bytes(&s.rows)).map_err(|e| Error::io(&path, e))?;
        entries.push(EmbeddingIndexEntry {
            speaker_id: s.speaker_id.clone(),
            label: s.label,
            utterances: s.rows.len(),
            file,
            saliency: s.saliency.clone(),
        });
    }
    let index = EmbeddingIndex {
        dim: speakers.first().map_or(0, SpeakerEmbeddings::dim),
        strategy,
        speakers: entries,
    };
    let path = dir.join("index.json");
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_embeddings(dir: &Path) -> Result<(EmbeddingIndex, Vec<SpeakerEmbeddings>)> {
    let path = dir.join("index.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: EmbeddingIndex = serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "embedding index",
        path: path.clone(),
        detail: e.to_string(),
    })?;
    let mut speakers = Vec::with_capacity(index.speakers.len());
    for e in &index.speakers {
        let p = dir.join(&e.file);
        let bytes = fs::read(&p).map_err(|err| Error::io(&p, err))?;
        let rows = bytes_to_rows(&bytes, index.dim, &p)?;
        if rows.len() != e.utterances || e.saliency.len() != e.utterances {
            return Err(Error::Format {
                what: "embedding rows",
                path: p,
                detail: format!(
                    "index lists {} utterances, file has {} rows and {} saliency values",
                    e.utterances,
                    rows.len(),
                    e.saliency.len()
                ),
            });
        }
        speakers.push(SpeakerEmbeddings {
            speaker_id: e.speaker_id.clone(),
            label: e.label,
            rows,
            saliency: e.saliency.clone(),
        });
    }
    Ok((index, speakers))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = SpeakerEmbeddings {
            speaker_id: "S01".into(),
            label: 1,
            rows: vec![vec![0.5, -1.0, f32::MIN_POSITIVE], vec![3.0, 2.0, 1.0]],
            saliency: vec![0.25, 4.0],
        };
        write_embeddings(dir.path(), std::slice::from_ref(&s), SaliencyStrategy::EmbNorm).unwrap();
        let (index, back) = read_embeddings(dir.path()).unwrap();
        assert_eq!(index.strategy, SaliencyStrategy::EmbNorm);
        assert_eq!(back, vec![s]);
    }
}
