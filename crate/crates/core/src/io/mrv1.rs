//! The MRV1 binary volume format.

use std::fs;
use std::path::Path;

use super::atomic_write;
use crate::error::{Error, Result};
use crate::pyramid::LabeledVolume;

const MAGIC: &[u8; 4] = b"MRV1";

pub fn write_volume(path: &Path, volume: &LabeledVolume) -> Result<()> {
    let (x, y, z) = volume.dims;
    let n = x * y * z;
    let labels_flag = u32::from(volume.labels.is_some());
    let mut bytes =
        Vec::with_capacity(4 + 20 + volume.n_chan() * n * 4 + if labels_flag == 1 { n * 2 } else { 0 });
    bytes.extend_from_slice(MAGIC);
    for v in [x as u32, y as u32, z as u32, volume.n_chan() as u32, labels_flag] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for chan in &volume.channels {
        for &v in chan {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(labels) = &volume.labels {
        for &l in labels {
            bytes.extend_from_slice(&l.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

pub fn read_volume(path: &Path) -> Result<LabeledVolume> {
    let bytes = fs::read(path)?;
    if bytes.len() < 24 || &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("{} is not an MRV1 volume", path.display())));
    }
    let field = |i: usize| -> usize {
        u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize
    };
    let (x, y, z, n_chan, labels_flag) = (field(0), field(1), field(2), field(3), field(4));
    let n = x * y * z;
    let expected = 24 + n_chan * n * 4 + if labels_flag == 1 { n * 2 } else { 0 };
    if labels_flag > 1 || bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut offset = 24;
    let mut channels = Vec::with_capacity(n_chan);
    for _ in 0..n_chan {
        let mut chan = Vec::with_capacity(n);
        for i in 0..n {
            let at = offset + 4 * i;
            chan.push(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()));
        }
        offset += 4 * n;
        channels.push(chan);
    }
    let labels = if labels_flag == 1 {
        let mut l = Vec::with_capacity(n);
        for i in 0..n {
            let at = offset + 2 * i;
            l.push(u16::from_le_bytes(bytes[at..at + 2].try_into().unwrap()));
        }
        Some(l)
    } else {
        None
    };
    LabeledVolume::new((x, y, z), channels, labels)
}
