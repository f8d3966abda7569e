//! The `CBCTVOL1` volume container and JSON helpers.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! magic "CBCTVOL1"  8 bytes
//! nx, ny, nz        3 x u32
//! sx, sy, sz        3 x f32   millimeters per voxel
//! payload           nx*ny*nz x i16, index = x + nx*(y + ny*z)
//! ```
//!
//! A `.json` path is treated as a raw-payload sidecar instead:
//! `{"dims": [nx, ny, nz], "spacing_mm": [sx, sy, sz], "data": "file.raw"}`
//! with the raw file resolved relative to the sidecar and holding the same
//! i16 little-endian payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use toothbox_core::phantom::{GroundTruth, PhantomSpec};
use toothbox_core::volume::VoxelVolume;

use crate::IoError;

pub const MAGIC: &[u8; 8] = b"CBCTVOL1";
pub const HEADER_LEN: u64 = 8 + 12 + 12;

/// Writes the binary container; bit-exact for a given volume.
pub fn save_volume(vol: &VoxelVolume, path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| {
        w.write_all(MAGIC)?;
        let (nx, ny, nz) = vol.dims();
        for n in [nx, ny, nz] {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        let (sx, sy, sz) = vol.spacing();
        for s in [sx, sy, sz] {
            w.write_all(&s.to_le_bytes())?;
        }
        for v in vol.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    })();
    res.map_err(|e| IoError::io(path, e))
}

/// Loads a volume: the binary container, or a JSON sidecar when the path
/// ends in `.json`.
pub fn load_volume(path: &Path) -> Result<VoxelVolume, IoError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        load_sidecar(path)
    } else {
        load_binary(path)
    }
}

fn load_binary(path: &Path) -> Result<VoxelVolume, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    read_exact_or(&mut r, &mut magic, path, "header")?;
    if &magic != MAGIC {
        return Err(IoError::BadMagic { path: path.to_path_buf() });
    }

    let mut dims = [0u32; 3];
    for (i, field) in ["nx", "ny", "nz"].iter().enumerate() {
        let mut buf = [0u8; 4];
        read_exact_or(&mut r, &mut buf, path, "header")?;
        dims[i] = u32::from_le_bytes(buf);
        if dims[i] == 0 {
            return Err(IoError::BadField {
                path: path.to_path_buf(),
                field,
                message: "must be >= 1".into(),
            });
        }
    }
    let mut spacing = [0f32; 3];
    for (i, field) in ["sx", "sy", "sz"].iter().enumerate() {
        let mut buf = [0u8; 4];
        read_exact_or(&mut r, &mut buf, path, "header")?;
        spacing[i] = f32::from_le_bytes(buf);
        if !spacing[i].is_finite() || spacing[i] <= 0.0 {
            return Err(IoError::BadField {
                path: path.to_path_buf(),
                field,
                message: format!("must be positive and finite, got {}", spacing[i]),
            });
        }
    }

    let count = dims[0] as usize * dims[1] as usize * dims[2] as usize;
    let expected = 2 * count as u64;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| IoError::io(path, e))?;
    if (payload.len() as u64) < expected {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN + expected,
            found: HEADER_LEN + payload.len() as u64,
        });
    }
    if payload.len() as u64 > expected {
        return Err(IoError::BadField {
            path: path.to_path_buf(),
            field: "payload",
            message: format!("{} trailing bytes", payload.len() as u64 - expected),
        });
    }
    let data: Vec<i16> = payload
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();

    VoxelVolume::new(
        (dims[0] as usize, dims[1] as usize, dims[2] as usize),
        (spacing[0], spacing[1], spacing[2]),
        data,
    )
    .map_err(IoError::from)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    dims: [usize; 3],
    spacing_mm: [f32; 3],
    /// Raw i16 little-endian payload, relative to the sidecar file.
    data: String,
}

fn load_sidecar(path: &Path) -> Result<VoxelVolume, IoError> {
    let sidecar: Sidecar = read_json(path)?;
    let raw_path = path.parent().unwrap_or_else(|| Path::new(".")).join(&sidecar.data);
    let mut payload = Vec::new();
    File::open(&raw_path)
        .and_then(|mut f| f.read_to_end(&mut payload))
        .map_err(|e| IoError::io(&raw_path, e))?;
    let count = sidecar.dims.iter().product::<usize>();
    if payload.len() != 2 * count {
        return Err(IoError::Truncated {
            path: raw_path,
            expected: 2 * count as u64,
            found: payload.len() as u64,
        });
    }
    let data: Vec<i16> = payload
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    VoxelVolume::new(
        (sidecar.dims[0], sidecar.dims[1], sidecar.dims[2]),
        (sidecar.spacing_mm[0], sidecar.spacing_mm[1], sidecar.spacing_mm[2]),
        data,
    )
    .map_err(IoError::from)
}

fn read_exact_or(
    r: &mut impl Read,
    buf: &mut [u8],
    path: &Path,
    field: &'static str,
) -> Result<(), IoError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            IoError::BadField {
                path: path.to_path_buf(),
                field,
                message: "file ends inside the header".into(),
            }
        } else {
            IoError::io(path, e)
        }
    })
}

/// Reads any JSON document.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| IoError::Json { path: path.to_path_buf(), source: e })
}

/// Writes pretty-printed JSON with a trailing newline; byte-deterministic
/// for a given value.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut buf =
        serde_json::to_vec_pretty(value).map_err(|e| IoError::Json { path: path.to_path_buf(), source: e })?;
    buf.push(b'\n');
    std::fs::write(path, buf).map_err(|e| IoError::io(path, e))
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth, IoError> {
    read_json(path)
}

pub fn save_ground_truth(gt: &GroundTruth, path: &Path) -> Result<(), IoError> {
    write_json(path, gt)
}

pub fn load_phantom_spec(path: &Path) -> Result<PhantomSpec, IoError> {
    read_json(path)
}

pub fn save_phantom_spec(spec: &PhantomSpec, path: &Path) -> Result<(), IoError> {
    write_json(path, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn zero_volume_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.cbct");
        let vol = VoxelVolume::filled((2, 2, 2), (0.5, 0.5, 0.5), 0).unwrap();
        save_volume(&vol, &path).unwrap();
        assert_eq!(load_volume(&path).unwrap(), vol);
    }

    #[test]
    fn file_size_is_header_plus_payload() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.cbct");
        let vol = VoxelVolume::filled((1, 1, 1), (0.5, 0.5, 0.5), 100).unwrap();
        save_volume(&vol, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), HEADER_LEN + 2);
    }

    #[test]
    fn save_is_deterministic() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.cbct");
        let b = dir.path().join("b.cbct");
        let vol = VoxelVolume::filled((3, 4, 5), (0.5, 0.6, 0.7), -12).unwrap();
        save_volume(&vol, &a).unwrap();
        save_volume(&vol, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.cbct");
        std::fs::write(&path, b"NOTAVOL!rest").unwrap();
        assert!(matches!(load_volume(&path), Err(IoError::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.cbct");
        let vol = VoxelVolume::filled((4, 4, 4), (0.5, 0.5, 0.5), 7).unwrap();
        save_volume(&vol, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_volume(&path), Err(IoError::Truncated { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.cbct");
        let vol = VoxelVolume::filled((2, 2, 2), (0.5, 0.5, 0.5), 7).unwrap();
        save_volume(&vol, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0, 0, 0]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_volume(&path), Err(IoError::BadField { field: "payload", .. })));
    }

    #[test]
    fn zero_dim_named_in_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.cbct");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes()); // ny = 0
        bytes.extend_from_slice(&1u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_volume(&path) {
            Err(IoError::BadField { field, .. }) => assert_eq!(field, "ny"),
            other => panic!("expected BadField, got {other:?}"),
        }
    }

    #[test]
    fn readonly_destination_errors_with_path() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("missing-dir").join("v.cbct");
        let vol = VoxelVolume::filled((1, 1, 1), (0.5, 0.5, 0.5), 0).unwrap();
        let err = save_volume(&vol, &path).unwrap_err();
        assert!(format!("{err}").contains("missing-dir"));
    }

    #[test]
    fn sidecar_import() {
        let dir = tempdir().unwrap();
        let vol = VoxelVolume::new((2, 1, 2), (0.5, 0.5, 1.0), vec![1, -2, 3, -4]).unwrap();
        let raw: Vec<u8> = vol.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(dir.path().join("v.raw"), &raw).unwrap();
        let sidecar = serde_json::json!({
            "dims": [2, 1, 2],
            "spacing_mm": [0.5, 0.5, 1.0],
            "data": "v.raw",
        });
        let path = dir.path().join("v.json");
        std::fs::write(&path, serde_json::to_vec(&sidecar).unwrap()).unwrap();
        assert_eq!(load_volume(&path).unwrap(), vol);
    }

    #[test]
    fn ground_truth_round_trips() {
        use toothbox_core::phantom::generate_phantom;
        let dir = tempdir().unwrap();
        let spec = PhantomSpec::arches(4, 4, 3.0, 1);
        let (_, gt) = generate_phantom(&spec).unwrap();
        let path = dir.path().join("gt.json");
        save_ground_truth(&gt, &path).unwrap();
        assert_eq!(load_ground_truth(&path).unwrap(), gt);
    }
}
