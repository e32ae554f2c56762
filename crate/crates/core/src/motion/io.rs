//! MOTN: little-endian binary motion container.
//!
//! ```text
//! "MOTN"  u32 version=1  u32 J  f32 fps  u64 N  N·3J × f32 (row-major)
//! ```

use std::fs;
use std::path::Path;

use super::MotionSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MOTN_MAGIC: &[u8; 4] = b"MOTN";
pub const MOTN_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

pub fn write_motion(seq: &MotionSequence) -> Vec<u8> {
    let frames = seq.frames();
    let mut out = Vec::with_capacity(HEADER_LEN + frames.len() * 4);
    out.extend_from_slice(MOTN_MAGIC);
    out.extend_from_slice(&MOTN_VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.joints() as u32).to_le_bytes());
    out.extend_from_slice(&seq.fps().to_le_bytes());
    out.extend_from_slice(&(seq.len() as u64).to_le_bytes());
    for &v in frames.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_motion(bytes: &[u8]) -> Result<MotionSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MOTN_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != MOTN_VERSION {
        return Err(Error::Format(format!("unsupported MOTN version {version}")));
    }
    let joints = u32_at(8) as usize;
    let fps = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let frames = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    if frames == 0 {
        return Err(Error::Length("MOTN file holds zero frames".into()));
    }
    if joints == 0 {
        return Err(Error::Data("MOTN file declares zero joints".into()));
    }
    let count = frames
        .checked_mul(3 * joints)
        .ok_or_else(|| Error::Length("frame count overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(Error::Length(format!(
            "payload has {} bytes, header implies {}",
            payload.len(),
            count * 4
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite value at payload index {i}"
        )));
    }
    MotionSequence::new(joints, fps, Tensor::new([frames, 3 * joints], data)?)
}

pub fn load_motion_file(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_motion(&bytes)
}

pub fn save_motion_file(path: impl AsRef<Path>, seq: &MotionSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_motion(seq)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(joints: u32, frames: u64) -> Vec<u8> {
        let mut b = MOTN_MAGIC.to_vec();
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&joints.to_le_bytes());
        b.extend_from_slice(&50f32.to_le_bytes());
        b.extend_from_slice(&frames.to_le_bytes());
        b
    }

    #[test]
    fn known_bytes_decode_exactly() {
        let mut bytes = header(5, 2);
        let values: Vec<f32> = (0..30).map(|i| i as f32 * 0.25 - 3.0).collect();
        for v in &values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let seq = read_motion(&bytes).unwrap();
        assert_eq!(seq.frames().shape(), &[2, 15]);
        assert_eq!(seq.fps(), 50.0);
        for (a, b) in seq.frames().data().iter().zip(&values) {
            assert_eq!(*a, f64::from(*b));
        }
        assert_eq!(write_motion(&seq), bytes);
    }

    #[test]
    fn zero_frames_is_length_error() {
        assert!(matches!(read_motion(&header(5, 0)), Err(Error::Length(_))));
    }

    #[test]
    fn nan_payload_is_data_error() {
        let mut bytes = header(1, 1);
        for v in [0.0f32, f32::NAN, 1.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(read_motion(&bytes), Err(Error::Data(_))));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = header(1, 1);
        bytes.extend_from_slice(&[0u8; 12]);
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(read_motion(&wrong), Err(Error::Format(_))));
        let mut wrong = bytes.clone();
        wrong[4] = 2;
        assert!(matches!(read_motion(&wrong), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = header(1, 2);
        bytes.extend_from_slice(&[0u8; 20]);
        assert!(matches!(read_motion(&bytes), Err(Error::Length(_))));
        assert!(matches!(read_motion(&bytes[..10]), Err(Error::Length(_))));
    }
}
