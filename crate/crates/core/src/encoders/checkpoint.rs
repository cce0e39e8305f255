//! Checkpoints: concatenated MXT1 tensors plus a JSON index with the
//! construction arguments and each parameter's byte offset.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use numcore::mxt;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::resnet::ResNet3DConfig;
use super::{AttributeEncoder, VideoEncoder};
use crate::{Error, Result};

/// `(tensor file, index file)` names inside a checkpoint directory.
pub const VIDEO_FILES: (&str, &str) = ("video.mxt", "video.json");
pub const ATTRIBUTE_FILES: (&str, &str) = ("attribute.mxt", "attribute.json");

const FORMAT: &str = "xmodal-checkpoint-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    name: String,
    offset: u64,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index<M> {
    format: String,
    seed: u64,
    meta: M,
    params: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoMeta {
    config: ResNet3DConfig,
    n_classes: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeMeta {
    vocab_size: usize,
    max_len: usize,
    n_classes: usize,
}

fn write_store<M: Serialize>(store: &ParamStore, dir: &Path, files: (&str, &str), seed: u64, meta: M) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensor_path = dir.join(files.0);
    let file = File::create(&tensor_path).map_err(|e| Error::io(&tensor_path, e))?;
    let mut w = BufWriter::new(file);
    let mut offset = 0;
    let mut params = Vec::with_capacity(store.len());
    for id in store.ids() {
        let t = store.get(id);
        mxt::write_tensor(&mut w, t).map_err(|e| Error::Format(format!("{}: {e}", tensor_path.display())))?;
        params.push(IndexEntry { name: store.name(id).to_string(), offset, shape: t.shape().to_vec() });
        offset += mxt::encoded_len(t);
    }
    w.flush().map_err(|e| Error::io(&tensor_path, e))?;
    let index = Index { format: FORMAT.into(), seed, meta, params };
    let index_path = dir.join(files.1);
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    std::fs::write(&index_path, json).map_err(|e| Error::io(&index_path, e))
}

fn read_index<M: for<'de> Deserialize<'de>>(dir: &Path, files: (&str, &str)) -> Result<Index<M>> {
    let path = dir.join(files.1);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: Index<M> =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if index.format != FORMAT {
        return Err(Error::Format(format!("{}: unsupported format {}", path.display(), index.format)));
    }
    Ok(index)
}

fn fill_store<M>(store: &mut ParamStore, dir: &Path, files: (&str, &str), index: &Index<M>) -> Result<()> {
    let path = dir.join(files.0);
    if index.params.len() != store.len() {
        return Err(Error::Format(format!(
            "{}: {} parameters in index, model has {}",
            path.display(),
            index.params.len(),
            store.len()
        )));
    }
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    for entry in &index.params {
        let start = usize::try_from(entry.offset).ok().filter(|&o| o <= bytes.len());
        let start = start.ok_or_else(|| Error::Format(format!("{}: offset past end", entry.name)))?;
        let t = mxt::read_tensor::<f32, _>(&mut &bytes[start..])
            .map_err(|e| Error::Format(format!("{} ({}): {e}", path.display(), entry.name)))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::Format(format!("{}: shape differs from index", entry.name)));
        }
        store.set(&entry.name, t)?;
    }
    Ok(())
}

pub fn save_video(enc: &VideoEncoder, dir: &Path) -> Result<()> {
    let meta = VideoMeta { config: enc.net.config.clone(), n_classes: enc.n_classes() };
    write_store(&enc.params, dir, VIDEO_FILES, enc.seed, meta)
}

pub fn load_video(dir: &Path) -> Result<VideoEncoder> {
    let index: Index<VideoMeta> = read_index(dir, VIDEO_FILES)?;
    let mut enc = VideoEncoder::new(&index.meta.config, index.meta.n_classes, index.seed)?;
    fill_store(&mut enc.params, dir, VIDEO_FILES, &index)?;
    Ok(enc)
}

pub fn save_attribute(enc: &AttributeEncoder, dir: &Path) -> Result<()> {
    let meta = AttributeMeta { vocab_size: enc.net.text.vocab_size(), max_len: enc.net.max_len, n_classes: enc.n_classes() };
    write_store(&enc.params, dir, ATTRIBUTE_FILES, enc.seed, meta)
}

pub fn load_attribute(dir: &Path) -> Result<AttributeEncoder> {
    let index: Index<AttributeMeta> = read_index(dir, ATTRIBUTE_FILES)?;
    let m = &index.meta;
    let mut enc = AttributeEncoder::new(m.vocab_size, m.max_len, m.n_classes, index.seed)?;
    fill_store(&mut enc.params, dir, ATTRIBUTE_FILES, &index)?;
    Ok(enc)
}
