//! Preprocessed samples ready for training: clip pairs plus attribute tokens.

use std::path::{Path, PathBuf};

use numcore::Tensor;
use rayon::prelude::*;

use crate::encoders::ClipPair;
use crate::facs::{describe, parse_au_string, tokenize, Vocabulary};
use crate::flowprep::{load_frames, preprocess, ClipTensors, FrameSequence, PrepConfig};
use crate::synthdata::{class_au_table, read_manifest, render_sample, write_manifest, ManifestRow, SynthSpec, MANIFEST};
use crate::{Error, Result};

/// Padded length of attribute token sequences.
pub const MAX_TOKENS: usize = 16;

pub struct Dataset {
    pub clips: Vec<ClipPair>,
    /// `tokens[i]` belongs to `clips[i]`.
    pub tokens: Vec<Vec<u32>>,
    pub n_classes: usize,
    pub vocab_size: usize,
}

impl Dataset {
    pub fn from_clips(clips: Vec<ClipPair>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Contract("dataset is empty".into()));
        }
        let vocab = Vocabulary::from_codebook();
        let tokens = clips
            .iter()
            .map(|c| Ok(tokenize(&describe(&parse_au_string(&c.au_string)?)?, &vocab, MAX_TOKENS)))
            .collect::<Result<Vec<_>>>()?;
        let n_classes = clips.iter().map(|c| c.class_id).max().unwrap_or(0) + 1;
        if n_classes < 2 {
            return Err(Error::Config("dataset needs at least 2 classes".into()));
        }
        let mut ids: Vec<u64> = clips.iter().map(|c| c.sample_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Format("duplicate sample ids".into()));
        }
        Ok(Dataset { clips, tokens, n_classes, vocab_size: vocab.len() })
    }

    /// Render and preprocess a synthetic set in memory.
    pub fn synthetic(spec: &SynthSpec, prep: &PrepConfig) -> Result<Self> {
        spec.validate()?;
        let classes = class_au_table(spec.n_classes, spec.seed)?;
        let clips = (0..spec.n_samples() as u64)
            .into_par_iter()
            .map(|id| {
                let class_id = id as usize / spec.samples_per_class;
                let class = &classes[class_id];
                let seq = FrameSequence::new(render_sample(spec, class, id)?)?;
                ClipPair::new(preprocess(&seq, prep)?, id, spec.subject_of(id), class_id, class.au_string())
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::from_clips(clips)
    }

    /// Read `manifest.jsonl` under `dir`. Rows with preprocessed clips load
    /// them; others are preprocessed from their frames. With `strict` unset,
    /// unreadable samples are skipped with a warning.
    pub fn load(dir: &Path, prep: &PrepConfig, strict: bool) -> Result<Self> {
        let rows = read_manifest(&dir.join(MANIFEST))?;
        let loaded: Vec<Option<ClipPair>> = rows
            .par_iter()
            .map(|row| match load_row(dir, row, prep) {
                Ok(c) => Ok(Some(c)),
                Err(e) if !strict && is_sample_fault(&e) => {
                    log::warn!("skipping sample {}: {e}", row.sample_id);
                    Ok(None)
                }
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        Dataset::from_clips(loaded.into_iter().flatten().collect())
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Positions of the given sample ids, in the order given.
    pub fn indices(&self, sample_ids: &[u64]) -> Result<Vec<usize>> {
        sample_ids
            .iter()
            .map(|id| {
                self.clips
                    .iter()
                    .position(|c| c.sample_id == *id)
                    .ok_or_else(|| Error::Contract(format!("sample {id} not in dataset")))
            })
            .collect()
    }

    /// `(sample_id, subject_id)` of every clip.
    pub fn subjects(&self) -> Vec<(u64, u32)> {
        self.clips.iter().map(|c| (c.sample_id, c.subject_id)).collect()
    }
}

fn is_sample_fault(e: &Error) -> bool {
    matches!(e, Error::Io { .. } | Error::Format(_) | Error::Num(_) | Error::Contract(_) | Error::Degenerate(_))
}

fn load_tensor(path: &Path) -> Result<Tensor> {
    numcore::mxt::load::<f32>(path).map_err(|e| match e {
        numcore::NumError::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    numcore::mxt::save(path, t).map_err(|e| match e {
        numcore::NumError::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

fn load_row(dir: &Path, row: &ManifestRow, prep: &PrepConfig) -> Result<ClipPair> {
    let streams = match (&row.clip_rgb_path, &row.clip_flow_path) {
        (Some(r), Some(f)) => ClipTensors { rgb: load_tensor(&dir.join(r))?, flow: load_tensor(&dir.join(f))? },
        _ => preprocess(&load_frames(&dir.join(&row.rgb_path))?, prep)?,
    };
    ClipPair::new(streams, row.sample_id, row.subject_id, row.class_id, row.au.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrepSummary {
    pub written: usize,
    pub skipped: usize,
}

/// Preprocess every sample of the dataset in `input` into `output/clips` and
/// write a manifest there whose rows carry the clip paths.
pub fn prep_dir(input: &Path, output: &Path, prep: &PrepConfig, strict: bool) -> Result<PrepSummary> {
    prep.farneback.validate()?;
    let rows = read_manifest(&input.join(MANIFEST))?;
    let clips = output.join("clips");
    std::fs::create_dir_all(&clips).map_err(|e| Error::io(&clips, e))?;
    let done: Vec<Option<ManifestRow>> = rows
        .par_iter()
        .map(|row| {
            let frames_path = input.join(&row.rgb_path);
            let streams = match load_frames(&frames_path).and_then(|s| preprocess(&s, prep)) {
                Ok(s) => s,
                Err(e) if !strict && is_sample_fault(&e) => {
                    log::warn!("skipping sample {}: {e}", row.sample_id);
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            let rgb = format!("clips/sample_{:05}.rgb.mxt", row.sample_id);
            let flow = format!("clips/sample_{:05}.flow.mxt", row.sample_id);
            save_tensor(&output.join(&rgb), &streams.rgb)?;
            save_tensor(&output.join(&flow), &streams.flow)?;
            let rgb_path = relative_source(input, output, &row.rgb_path);
            Ok(Some(ManifestRow {
                rgb_path,
                frames: prep.frames,
                clip_rgb_path: Some(rgb),
                clip_flow_path: Some(flow),
                ..row.clone()
            }))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<ManifestRow> = done.into_iter().flatten().collect();
    write_manifest(&output.join(MANIFEST), &kept)?;
    Ok(PrepSummary { written: kept.len(), skipped: rows.len() - kept.len() })
}

/// Path of the original frames as seen from `output`.
fn relative_source(input: &Path, output: &Path, rel: &str) -> String {
    if input == output {
        return rel.to_string();
    }
    let abs: PathBuf = std::path::absolute(input.join(rel)).unwrap_or_else(|_| input.join(rel));
    abs.to_string_lossy().into_owned()
}
