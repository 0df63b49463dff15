//! Binary probe-grid files, little-endian.
//!
//! ```text
//! "SPLATIRP"  u32 version
//! 3 x u32 lattice resolution, 6 x f64 bounds, u32 face resolution, f64 threshold
//! u64 n, n bytes of packed occlusion bits
//! u64 m, m x 3 f64 indirect SH coefficients
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::binary::{ByteReader, ByteWriter};
use crate::math::{Rgb, Vec3};
use crate::probes::{bit_bytes, ProbeGrid, INDIRECT_SH_COEFFS};
use crate::scene::Aabb;

pub const MAGIC: &[u8; 8] = b"SPLATIRP";
pub const VERSION: u32 = 1;

pub fn encode_probes(g: &ProbeGrid) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    for r in g.resolution {
        w.u32(r as u32);
    }
    for v in g.bounds.min.iter().chain(g.bounds.max.iter()) {
        w.f64(*v);
    }
    w.u32(g.face_resolution as u32);
    w.f64(g.distance_threshold);
    w.u64(g.bits.len() as u64);
    w.bytes(&g.bits);
    w.u64(g.indirect.len() as u64);
    for c in &g.indirect {
        for v in c.iter() {
            w.f64(*v);
        }
    }
    w.buf
}

pub fn decode_probes(data: &[u8]) -> Result<ProbeGrid> {
    let mut r = ByteReader::new(data, "probe file");
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("probe file version {version} is not supported")));
    }
    let resolution = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let mut b = [0.0; 6];
    for v in &mut b {
        *v = r.f64()?;
    }
    let face_resolution = r.u32()? as usize;
    let distance_threshold = r.f64()?;
    let n = r.len(1)?;
    let bits = r.bytes(n)?.to_vec();
    let m = r.len(24)?;
    let mut indirect = Vec::with_capacity(m);
    for _ in 0..m {
        indirect.push(Rgb::new(r.f64()?, r.f64()?, r.f64()?));
    }
    r.finish()?;
    let probes = resolution.iter().product::<usize>();
    if bits.len() != bit_bytes(probes, face_resolution) {
        return Err(Error::Format("probe file: bit array size does not match the lattice".into()));
    }
    if !(indirect.is_empty() || indirect.len() == probes * INDIRECT_SH_COEFFS) {
        return Err(Error::Format("probe file: indirect table size does not match the lattice".into()));
    }
    Ok(ProbeGrid {
        resolution,
        bounds: Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5])),
        face_resolution,
        distance_threshold,
        bits,
        indirect,
    })
}

pub fn write_probes(path: &Path, g: &ProbeGrid) -> Result<()> {
    std::fs::write(path, encode_probes(g)).map_err(|e| Error::io(path, e))
}

pub fn read_probes(path: &Path) -> Result<ProbeGrid> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_probes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::ProbeGridConfig;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ProbeGridConfig {
            face_resolution: 4,
            ..ProbeGridConfig::new([2, 3, 2], Aabb::cube(1.0))
        };
        let mut g = ProbeGrid::empty(&cfg).unwrap();
        g.set_bit(5, true);
        g.set_bit(77, true);
        g.indirect = (0..g.probe_count() * INDIRECT_SH_COEFFS).map(|i| Rgb::repeat(i as f64 * 0.1)).collect();
        let bytes = encode_probes(&g);
        let back = decode_probes(&bytes).unwrap();
        assert_eq!(back, g);
        assert!(decode_probes(&bytes[..bytes.len() - 3]).is_err());
    }
}
