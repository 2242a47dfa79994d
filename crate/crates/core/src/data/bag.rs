use std::fs;
use std::path::{Path, PathBuf};

use crate::data::Label;
use crate::error::{Error, FormatError, Result};
use crate::math::Matrix;

pub const FB1_MAGIC: &[u8; 4] = b"FBAG";
pub const FB1_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// One video's snippet features with its video-level label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    pub video_id: String,
    /// `T × D`.
    pub features: Matrix,
    pub label: Label,
    pub source: Option<PathBuf>,
}

impl FeatureBag {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// FB1 encoding: `"FBAG"`, u32 version, u32 T, u32 D, then `T·D` f32, all little-endian.
///
/// Values are narrowed to f32; inputs that are already f32-representable
/// round-trip bit-exactly.
pub fn encode_bag(features: &Matrix) -> Result<Vec<u8>> {
    let to_u32 =
        |v: usize| u32::try_from(v).map_err(|_| Error::Data(format!("dimension {v} exceeds u32")));
    let mut buf = Vec::with_capacity(HEADER_LEN + features.len() * 4);
    buf.extend_from_slice(FB1_MAGIC);
    buf.extend_from_slice(&FB1_VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u32(features.rows())?.to_le_bytes());
    buf.extend_from_slice(&to_u32(features.cols())?.to_le_bytes());
    for &v in features.data() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinite("bag features".into()));
        }
        buf.extend_from_slice(&f.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_bag(bytes: &[u8]) -> std::result::Result<Matrix, FormatError> {
    if bytes.len() < 4 || &bytes[..4] != FB1_MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated);
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FB1_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let (t_len, dim) = (word(8) as usize, word(12) as usize);
    let count = t_len
        .checked_mul(dim)
        .ok_or_else(|| FormatError::InvalidHeader(format!("{t_len}x{dim} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < count * 4 {
        return Err(FormatError::Truncated);
    }
    if payload.len() > count * 4 {
        return Err(FormatError::TrailingBytes);
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(FormatError::NonFiniteValue(i));
        }
        data.push(v as f64);
    }
    Matrix::from_vec(t_len, dim, data).map_err(|e| FormatError::InvalidHeader(e.to_string()))
}

/// Reads an FB1 file. Bags need at least two snippets.
pub fn read_bag(path: impl AsRef<Path>, video_id: &str, label: Label) -> Result<FeatureBag> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let features = decode_bag(&bytes).map_err(|k| Error::format(path, k))?;
    if features.rows() < 2 {
        return Err(Error::format(
            path,
            FormatError::InvalidHeader(format!(
                "bag has {} snippets, need at least 2",
                features.rows()
            )),
        ));
    }
    Ok(FeatureBag {
        video_id: video_id.to_string(),
        features,
        label,
        source: Some(path.to_path_buf()),
    })
}

pub fn write_bag(bag: &FeatureBag, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_bag(&bag.features)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn fb1_round_trip_is_bit_exact(
            t in 0usize..12,
            d in 1usize..9,
            seed in proptest::collection::vec(-1e6f32..1e6f32, 108)
        ) {
            let data: Vec<f64> = seed.iter().take(t * d).map(|&v| v as f64).collect();
            let m = Matrix::from_vec(t, d, data).unwrap();
            let decoded = decode_bag(&encode_bag(&m).unwrap()).unwrap();
            prop_assert_eq!(decoded.shape(), m.shape());
            for (a, b) in decoded.data().iter().zip(m.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.fb1");
        let data: Vec<f64> = (0..35).map(|i| (i as f32 * 0.31).sin() as f64).collect();
        let bag = FeatureBag {
            video_id: "v".into(),
            features: Matrix::from_vec(7, 5, data).unwrap(),
            label: Label::Abnormal,
            source: None,
        };
        write_bag(&bag, &path).unwrap();
        let back = read_bag(&path, "v", Label::Abnormal).unwrap();
        assert_eq!(back.features, bag.features);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_bag(&Matrix::zeros(2, 2)).unwrap();
        bytes[0] = b'X';
        assert_eq!(decode_bag(&bytes), Err(FormatError::BadMagic));
        let err = Error::format("f", FormatError::BadMagic).to_string();
        assert!(err.contains("bad magic"));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode_bag(&Matrix::zeros(3, 2)).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert_eq!(decode_bag(&bytes), Err(FormatError::Truncated));
        assert_eq!(decode_bag(&bytes[..10]), Err(FormatError::Truncated));
    }

    #[test]
    fn non_finite_payload() {
        let mut bytes = encode_bag(&Matrix::zeros(2, 2)).unwrap();
        bytes[HEADER_LEN + 4..HEADER_LEN + 8].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(decode_bag(&bytes), Err(FormatError::NonFiniteValue(1)));
    }

    #[test]
    fn single_snippet_bag_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.fb1");
        std::fs::write(&path, encode_bag(&Matrix::zeros(1, 3)).unwrap()).unwrap();
        assert!(read_bag(&path, "s", Label::Normal).is_err());
    }
}
