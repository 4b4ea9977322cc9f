//! Binary weights file.
//!
//! ```text
//! "PNW1"            4 bytes magic
//! version           u16
//! config            input_length, input_channels, class_count, stage_count,
//!                   kernel_size, stage_stride, width count (u32 each),
//!                   widths (u32 each), seed (u64)
//! layer count       u32
//! per layer         kind (u8: 0 conv, 1 transposed), in, out, kernel, stride (u32),
//!                   weights then bias as f32
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LayerKind, Model, ModelConfig};
use crate::tensor::ConvParams;

pub const MAGIC: [u8; 4] = *b"PNW1";
pub const VERSION: u16 = 1;

pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * model.parameter_count());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let c = &model.config;
    for v in [
        c.input_length,
        c.input_channels,
        c.class_count,
        c.stage_count,
        c.kernel_size,
        c.stage_stride,
        c.channel_widths.len(),
    ]
    .into_iter()
    .chain(c.channel_widths.iter().copied())
    {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for layer in &model.layers {
        let p = &layer.params;
        out.push(match layer.kind {
            LayerKind::Conv => 0,
            LayerKind::Transposed => 1,
        });
        for v in [p.in_channels, p.out_channels, p.kernel_size, p.stride] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for w in p.weights.iter().chain(&p.bias) {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "weights file ends at byte {} while reading {what}",
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = match r.take(4, "magic") {
        Ok(m) => m.try_into().unwrap(),
        Err(_) => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            return Err(Error::BadMagic(m));
        }
    };
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let input_length = r.u32("config")?;
    let input_channels = r.u32("config")?;
    let class_count = r.u32("config")?;
    let stage_count = r.u32("config")?;
    let kernel_size = r.u32("config")?;
    let stage_stride = r.u32("config")?;
    let n_widths = r.u32("config")?;
    if n_widths > 64 {
        return Err(Error::InvalidConfig(format!("implausible width count {n_widths}")));
    }
    let channel_widths = (0..n_widths).map(|_| r.u32("widths")).collect::<Result<Vec<_>>>()?;
    let seed = r.u64("seed")?;
    let config = ModelConfig {
        input_length,
        input_channels,
        class_count,
        stage_count,
        kernel_size,
        stage_stride,
        channel_widths,
        seed,
    };
    config.validate()?;
    let template = Model::<f32>::assemble(config.clone())?;
    let n_layers = r.u32("layer count")?;
    if n_layers != template.layers.len() {
        return Err(Error::shape("weights layer count", template.layers.len(), n_layers));
    }
    let mut layers = template.layers;
    for layer in layers.iter_mut() {
        let kind = match r.u8("layer kind")? {
            0 => LayerKind::Conv,
            1 => LayerKind::Transposed,
            k => return Err(Error::InvalidInput(format!("unknown layer kind {k}"))),
        };
        let dims = [r.u32("dims")?, r.u32("dims")?, r.u32("dims")?, r.u32("dims")?];
        let p = &layer.params;
        if kind != layer.kind || dims != [p.in_channels, p.out_channels, p.kernel_size, p.stride] {
            return Err(Error::InvalidConfig(format!(
                "layer {} record {dims:?} does not match the configured topology",
                layer.id
            )));
        }
        let weights = r.f32s(p.weights.len(), "weights")?;
        let bias = r.f32s(p.bias.len(), "bias")?;
        layer.params = ConvParams::new(dims[0], dims[1], dims[2], dims[3], weights, bias)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::InvalidInput(format!(
            "{} trailing bytes after last layer",
            bytes.len() - r.pos
        )));
    }
    Model::from_parts(config, layers)
}

pub fn save(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model<f32>> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Model<f32> {
        Model::assemble(ModelConfig {
            seed: 12,
            ..ModelConfig::toy()
        })
        .unwrap()
    }

    #[test]
    fn save_load_save_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pnw");
        let m = toy();
        save(&m, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded, m);
        let first = fs::read(&path).unwrap();
        save(&loaded, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode(&toy());
        bytes[0] = b'X';
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, Error::BadMagic(_)));
        assert!(err.to_string().contains("not a weights file"));
        assert!(matches!(decode(b"PN"), Err(Error::BadMagic(_))));
    }

    #[test]
    fn future_version() {
        let mut bytes = encode(&toy());
        bytes[4..6].copy_from_slice(&2u16.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(Error::UnsupportedVersion { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn truncated() {
        let bytes = encode(&toy());
        for cut in [5, 20, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Truncated(_))), "cut {cut}");
        }
    }
}
