//! On-disk cache of prefiltered environment products, keyed by the SHA-256
//! of the radiance map and the prefilter settings.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::binary::{ByteReader, ByteWriter};
use crate::math::Rgb;
use crate::shading::brdf::BrdfLut;
use crate::shading::prefilter::PrefilterConfig;
use crate::shading::{EnvMap, EnvironmentLight};

const MAGIC: &[u8; 8] = b"SPLATIRE";
const VERSION: u32 = 1;

pub fn cache_key(env: &EnvMap, cfg: &PrefilterConfig) -> String {
    let mut h = Sha256::new();
    h.update(VERSION.to_le_bytes());
    for v in [
        env.width,
        env.height,
        cfg.irradiance_width,
        cfg.irradiance_height,
        cfg.diffuse_source_width,
        cfg.diffuse_subsamples,
        cfg.specular_source_width,
        cfg.specular_subsamples,
        cfg.mip_count,
    ] {
        h.update((v as u64).to_le_bytes());
    }
    for c in &env.data {
        for v in c.iter() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn put_map(w: &mut ByteWriter, m: &EnvMap) {
    w.u32(m.width as u32);
    w.u32(m.height as u32);
    for c in &m.data {
        for v in c.iter() {
            w.f64(*v);
        }
    }
}

fn get_map(r: &mut ByteReader) -> Result<EnvMap> {
    let w = r.u32()? as usize;
    let h = r.u32()? as usize;
    let mut data = Vec::new();
    for _ in 0..w * h {
        data.push(Rgb::new(r.f64()?, r.f64()?, r.f64()?));
    }
    EnvMap::new(w, h, data)
}

pub struct EnvCache {
    pub dir: PathBuf,
}

impl EnvCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        EnvCache { dir: dir.into() }
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.envcache"))
    }

    /// Loads cached products for `env`, prefiltering and storing them on a miss.
    pub fn light(&self, env: EnvMap, cfg: &PrefilterConfig) -> Result<EnvironmentLight> {
        let key = cache_key(&env, cfg);
        let path = self.path_for(&key);
        if path.exists() {
            match read_products(&path) {
                Ok((irr, mips)) if mips.len() == cfg.mip_count => {
                    return Ok(EnvironmentLight::from_parts(env, irr, mips, BrdfLut::shared(), cfg.clone()));
                }
                Ok(_) => log::warn!("ignoring mismatched environment cache {}", path.display()),
                Err(e) => log::warn!("ignoring unreadable environment cache {}: {e}", path.display()),
            }
        }
        let light = EnvironmentLight::with_config(env, cfg.clone(), BrdfLut::shared())?;
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        write_products(&path, &light)?;
        Ok(light)
    }
}

fn write_products(path: &Path, light: &EnvironmentLight) -> Result<()> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    put_map(&mut w, &light.irradiance);
    w.u32(light.specular_mips.len() as u32);
    for m in &light.specular_mips {
        put_map(&mut w, m);
    }
    std::fs::write(path, w.buf).map_err(|e| Error::io(path, e))
}

fn read_products(path: &Path) -> Result<(EnvMap, Vec<EnvMap>)> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&data, "environment cache");
    r.expect_magic(MAGIC)?;
    if r.u32()? != VERSION {
        return Err(Error::Format("environment cache version mismatch".into()));
    }
    let irr = get_map(&mut r)?;
    let n = r.u32()? as usize;
    let mips = (0..n).map(|_| get_map(&mut r)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((irr, mips))
}
