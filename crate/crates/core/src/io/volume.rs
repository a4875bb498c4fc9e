//! Raw voxel volume format.
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 6    | ASCII `CFVOL1`                            |
//! | 6      | 12   | nx, ny, nz as u32 LE                      |
//! | 18     | 24   | voxel size x, y, z in µm as f64 LE        |
//! | 42     | 1    | channel tag (0 scatter, 1 fluorescence)   |
//! | 43     | 21   | zero                                      |
//! | 64     | 2·N  | u16 LE intensities, x fastest, then y, z  |

use std::io::Read;
use std::path::Path;

use super::{open_read, write_file, IoError};
use crate::imaging::{Channel, VoxelVolume};

pub const RAW_MAGIC: &[u8; 6] = b"CFVOL1";
pub const RAW_HEADER_LEN: usize = 64;

pub fn encode_raw_volume(v: &VoxelVolume) -> Result<Vec<u8>, IoError> {
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + 2 * v.data.len());
    out.extend_from_slice(RAW_MAGIC);
    for d in v.dims {
        let d = u32::try_from(d)
            .map_err(|_| IoError::BadVolumeHeader(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for s in v.voxel_um {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.push(v.channel.tag());
    out.resize(RAW_HEADER_LEN, 0);
    for x in &v.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raw_volume(bytes: &[u8]) -> Result<VoxelVolume, IoError> {
    if bytes.len() < RAW_HEADER_LEN {
        if bytes.len() >= 6 && &bytes[..6] != RAW_MAGIC {
            return Err(IoError::BadMagic {
                found: bytes[..6].to_vec(),
            });
        }
        return Err(IoError::TruncatedHeader { got: bytes.len() });
    }
    if &bytes[..6] != RAW_MAGIC {
        return Err(IoError::BadMagic {
            found: bytes[..6].to_vec(),
        });
    }
    let u32_at =
        |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let dims = [u32_at(6), u32_at(10), u32_at(14)];
    let voxel_um = [f64_at(18), f64_at(26), f64_at(34)];
    let channel = Channel::from_tag(bytes[42]).ok_or(IoError::BadChannel(bytes[42]))?;
    if let Some((i, &b)) = bytes[43..RAW_HEADER_LEN]
        .iter()
        .enumerate()
        .find(|(_, b)| **b != 0)
    {
        return Err(IoError::NonZeroPadding {
            offset: 43 + i,
            value: b,
        });
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| IoError::BadVolumeHeader(format!("dims {dims:?} overflow")))?;
    let payload = &bytes[RAW_HEADER_LEN..];
    if payload.len() < n {
        return Err(IoError::TruncatedPayload {
            expected: n,
            got: payload.len(),
        });
    }
    if payload.len() > n {
        return Err(IoError::TrailingBytes {
            expected: n,
            extra: payload.len() - n,
        });
    }
    let data = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    VoxelVolume::from_data(dims, voxel_um, channel, data)
        .map_err(|e| IoError::BadVolumeHeader(e.to_string()))
}

impl VoxelVolume {
    pub fn read_raw(path: &Path) -> Result<VoxelVolume, IoError> {
        let mut bytes = Vec::new();
        open_read(path)?
            .read_to_end(&mut bytes)
            .map_err(|e| IoError::io(format!("read {}", path.display()), e))?;
        decode_raw_volume(&bytes)
    }

    pub fn write_raw(&self, path: &Path) -> Result<(), IoError> {
        let bytes = encode_raw_volume(self)?;
        write_file(path, |w| {
            w.write_all(&bytes)
                .map_err(|e| IoError::io(format!("write {}", path.display()), e))
        })
    }
}
