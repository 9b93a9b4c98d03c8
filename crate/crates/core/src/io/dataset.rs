use std::path::Path;

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::phantom::SampleRecord;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"DECT";
pub const VERSION: u32 = 1;
pub const FLAG_MONO: u8 = 1;
pub const FLAG_LABEL: u8 = 2;
const HEADER_LEN: usize = 4 + 4 * 4 + 1;

/// A dataset file: fixed image size, uniform annotation flags.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub height: usize,
    pub width: usize,
    pub flags: u8,
    pub records: Vec<SampleRecord>,
}

impl DatasetFile {
    /// Infers size and flags from the records, which must agree on both.
    pub fn from_records(records: Vec<SampleRecord>) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::contract("a dataset needs at least one record"))?;
        let (height, width) = (first.height(), first.width());
        let flags = flag_bits(first);
        for r in &records {
            if r.poly.shape() != [1, height, width] || r.mono.as_ref().is_some_and(|m| m.shape() != [1, height, width]) {
                return Err(Error::dim(format!("patient {}: image size differs from {height}x{width}", r.patient_id)));
            }
            if flag_bits(r) != flags {
                return Err(Error::contract(format!(
                    "patient {}: annotations differ from the first record's",
                    r.patient_id
                )));
            }
        }
        Ok(DatasetFile { height, width, flags, records })
    }

    pub fn has_mono(&self) -> bool {
        self.flags & FLAG_MONO != 0
    }

    pub fn has_labels(&self) -> bool {
        self.flags & FLAG_LABEL != 0
    }

    pub fn encode(&self) -> Vec<u8> {
        let px = self.height * self.width;
        let per = 4 + 4 * px * (1 + usize::from(self.has_mono())) + usize::from(self.has_labels());
        let mut out = Vec::with_capacity(HEADER_LEN + per * self.records.len());
        out.extend_from_slice(&MAGIC);
        for v in [VERSION, self.records.len() as u32, self.height as u32, self.width as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.flags);
        for r in &self.records {
            out.extend_from_slice(&r.patient_id.to_le_bytes());
            put_f32s(&mut out, r.poly.data());
            if let Some(m) = &r.mono {
                put_f32s(&mut out, m.data());
            }
            if let Some(z) = r.label {
                out.push(z);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(bad("missing DECT magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let (n, height, width) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
        let flags = bytes[20];
        if flags & !(FLAG_MONO | FLAG_LABEL) != 0 {
            return Err(bad(format!("unknown flag bits {flags:#04x}")));
        }
        if height == 0 || width == 0 {
            return Err(bad(format!("image size {height}x{width}")));
        }
        let px = height * width;
        let (mono, labels) = (flags & FLAG_MONO != 0, flags & FLAG_LABEL != 0);
        let per = 4 + 4 * px * (1 + usize::from(mono)) + usize::from(labels);
        let expected = n.checked_mul(per).and_then(|p| p.checked_add(HEADER_LEN));
        if expected != Some(bytes.len()) {
            return Err(bad(format!("{n} samples need {expected:?} bytes, found {}", bytes.len())));
        }
        let mut pos = HEADER_LEN;
        let mut records = Vec::with_capacity(n);
        let image = |pos: &mut usize| {
            let data = get_f32s(&bytes[*pos..*pos + 4 * px]);
            *pos += 4 * px;
            Tensor::new(vec![1, height, width], data).expect("sized above")
        };
        for i in 0..n {
            let patient_id = u32_at(pos);
            pos += 4;
            let poly = image(&mut pos);
            let mono = mono.then(|| image(&mut pos));
            let label = if labels {
                let z = bytes[pos];
                pos += 1;
                if z > 1 {
                    return Err(bad(format!("sample {i}: label {z} is not 0 or 1")));
                }
                Some(z)
            } else {
                None
            };
            records.push(SampleRecord { patient_id, poly, mono, label });
        }
        Ok(DatasetFile { height, width, flags, records })
    }
}

fn flag_bits(r: &SampleRecord) -> u8 {
    (if r.mono.is_some() { FLAG_MONO } else { 0 }) | (if r.label.is_some() { FLAG_LABEL } else { 0 })
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect()
}

pub fn write_dataset(path: &Path, file: &DatasetFile) -> Result<()> {
    write_atomic(path, &file.encode())
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    DatasetFile::decode(&read_file(path)?, path)
}
