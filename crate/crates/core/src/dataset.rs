//! On-disk window datasets.
//!
//! A dataset directory holds
//! - `manifest.json`: counts, sample rate, seed and format version
//! - `samples.f32`: little-endian `f32`, laid out `[window][E, N, Z][sample]`
//! - `labels.csv`: `index,label,p_time,s_time` (picks empty for noise)
//! - `meta.csv`: generator parameters per window (optional)

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{derive_seed, make_event, make_noise, GenConfig};
use crate::tensor::FeatureMap;
use crate::window::{Label, Picks, SourceMeta, Window, CHANNEL_NAMES};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const SAMPLES: &str = "samples.f32";
pub const LABELS: &str = "labels.csv";
pub const META: &str = "meta.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub count: usize,
    pub n_signal: usize,
    pub n_noise: usize,
    pub sample_rate: f32,
    pub length: usize,
    pub channels: Vec<String>,
    pub seed: u64,
    /// Id of the first window; ids are consecutive.
    pub id_offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub windows: Vec<Window>,
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    index: usize,
    label: Label,
    p_time: Option<usize>,
    s_time: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct MetaRow {
    index: usize,
    p_amplitude: Option<f64>,
    s_amplitude: Option<f64>,
    p_freq: Option<f64>,
    s_freq: Option<f64>,
    azimuth: Option<f64>,
    background_sd: Option<f64>,
    transient: Option<bool>,
}

impl MetaRow {
    fn new(index: usize, m: Option<&SourceMeta>) -> Self {
        Self {
            index,
            p_amplitude: m.map(|m| m.p_amplitude),
            s_amplitude: m.map(|m| m.s_amplitude),
            p_freq: m.map(|m| m.p_freq),
            s_freq: m.map(|m| m.s_freq),
            azimuth: m.map(|m| m.azimuth),
            background_sd: m.map(|m| m.background_sd),
            transient: m.map(|m| m.transient),
        }
    }

    fn meta(&self) -> Option<SourceMeta> {
        Some(SourceMeta {
            p_amplitude: self.p_amplitude?,
            s_amplitude: self.s_amplitude?,
            p_freq: self.p_freq?,
            s_freq: self.s_freq?,
            azimuth: self.azimuth?,
            background_sd: self.background_sd?,
            transient: self.transient?,
        })
    }
}

/// Generate `n_signal` events followed by `n_noise` noise windows. Window `i`
/// draws from its own generator seeded by `(seed, i)` so the output does not
/// depend on scheduling.
pub fn generate(cfg: &GenConfig, n_signal: usize, n_noise: usize, seed: u64, id_offset: usize) -> Result<Dataset> {
    cfg.validate()?;
    if n_signal + n_noise == 0 {
        return Err(Error::Empty("requested dataset"));
    }
    let windows = (0..n_signal + n_noise)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let mut w = if i < n_signal {
                make_event(&mut rng, cfg)?
            } else {
                make_noise(&mut rng, cfg)?
            };
            w.id = id_offset + i;
            Ok(w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest: Manifest {
            format_version: FORMAT_VERSION,
            count: windows.len(),
            n_signal,
            n_noise,
            sample_rate: cfg.sample_rate as f32,
            length: cfg.length,
            channels: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
            seed,
            id_offset,
        },
        windows,
    })
}

/// Generate and write a dataset directory.
pub fn build_dataset(
    cfg: &GenConfig,
    n_signal: usize,
    n_noise: usize,
    seed: u64,
    id_offset: usize,
    out: impl AsRef<Path>,
) -> Result<Dataset> {
    let ds = generate(cfg, n_signal, n_noise, seed, id_offset)?;
    ds.write(out)?;
    Ok(ds)
}

impl Dataset {
    pub fn from_windows(windows: Vec<Window>, seed: u64) -> Result<Self> {
        let first = windows.first().ok_or(Error::Empty("window set"))?;
        let n_signal = windows.iter().filter(|w| w.label.is_signal()).count();
        Ok(Self {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                count: windows.len(),
                n_signal,
                n_noise: windows.len() - n_signal,
                sample_rate: first.sample_rate,
                length: first.len(),
                channels: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
                seed,
                id_offset: first.id,
            },
            windows,
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&self.manifest)? + "\n")?;

        let mut f = BufWriter::new(fs::File::create(dir.join(SAMPLES))?);
        for w in &self.windows {
            for v in w.samples.as_slice() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;

        let mut csv = csv::Writer::from_path(dir.join(LABELS))?;
        for w in &self.windows {
            csv.serialize(LabelRow {
                index: w.id,
                label: w.label,
                p_time: w.picks.map(|p| p.p_time),
                s_time: w.picks.map(|p| p.s_time),
            })?;
        }
        csv.flush()?;

        let mut csv = csv::Writer::from_path(dir.join(META))?;
        for w in &self.windows {
            csv.serialize(MetaRow::new(w.id, w.meta.as_ref()))?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "dataset format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let per_window = 3 * manifest.length;
        let bytes = fs::read(dir.join(SAMPLES))?;
        if bytes.len() != manifest.count * per_window * 4 {
            return Err(Error::Truncated(format!(
                "{} holds {} bytes, manifest implies {}",
                SAMPLES,
                bytes.len(),
                manifest.count * per_window * 4
            )));
        }
        let mut rdr = csv::Reader::from_path(dir.join(LABELS))?;
        let rows: Vec<LabelRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        if rows.len() != manifest.count {
            return Err(Error::InvalidInput(format!(
                "{LABELS} has {} rows, manifest says {}",
                rows.len(),
                manifest.count
            )));
        }
        let meta: Vec<Option<SourceMeta>> = if dir.join(META).exists() {
            let mut rdr = csv::Reader::from_path(dir.join(META))?;
            let rows: Vec<MetaRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
            if rows.len() != manifest.count {
                return Err(Error::InvalidInput(format!(
                    "{META} has {} rows, manifest says {}",
                    rows.len(),
                    manifest.count
                )));
            }
            rows.iter().map(MetaRow::meta).collect()
        } else {
            vec![None; manifest.count]
        };
        let windows = rows
            .into_iter()
            .zip(meta)
            .zip(bytes.chunks_exact(per_window * 4))
            .map(|((row, meta), chunk)| {
                let data = chunk
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                let picks = match (row.p_time, row.s_time) {
                    (Some(p_time), Some(s_time)) => Some(Picks { p_time, s_time }),
                    _ => None,
                };
                let mut w = Window::new(row.index, FeatureMap::new(3, manifest.length, data)?, row.label, picks)?;
                w.sample_rate = manifest.sample_rate;
                w.meta = meta;
                Ok(w)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, windows })
    }

    pub fn signals(&self) -> impl Iterator<Item = &Window> {
        self.windows.iter().filter(|w| w.label.is_signal())
    }

    pub fn noise(&self) -> impl Iterator<Item = &Window> {
        self.windows.iter().filter(|w| !w.label.is_signal())
    }
}
