//! Versioned binary checkpoints, little-endian throughout.
//!
//! ```text
//! "SPLATIRC"  u32 version
//! u8 stage    u64 iteration
//! 6 x f64     scene bounds (min xyz, max xyz)
//! u64 n       n x 18 f64 particle parameters (parameter-vector layout)
//! u32 w, u32 h, w*h*3 f64 environment radiance
//! u8 flag     [adam block: f64 beta1, beta2, eps; u64 step; f64 array m; f64 array v]
//! u8 flag     [adam block for the environment]
//! ```
//! Arrays are a u64 length followed by the values.

use std::path::Path;

use crate::diff::{ParameterVector, PARAMS_PER_PARTICLE};
use crate::error::{Error, Result};
use crate::io::binary::{ByteReader, ByteWriter};
use crate::math::{Rgb, Vec3};
use crate::optimize::adam::{Adam, AdamConfig};
use crate::optimize::train::{Checkpoint, OptimizerState};
use crate::optimize::Stage;
use crate::scene::{Aabb, GaussianParticle, Scene};
use crate::shading::EnvMap;

pub const MAGIC: &[u8; 8] = b"SPLATIRC";
pub const VERSION: u32 = 1;

fn put_adam(w: &mut ByteWriter, a: &Adam) {
    w.f64(a.config.beta1);
    w.f64(a.config.beta2);
    w.f64(a.config.eps);
    w.u64(a.step);
    w.f64s(&a.m);
    w.f64s(&a.v);
}

fn get_adam(r: &mut ByteReader) -> Result<Adam> {
    let config = AdamConfig {
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
    };
    let step = r.u64()?;
    let m = r.f64s()?;
    let v = r.f64s()?;
    if m.len() != v.len() {
        return Err(Error::Format("checkpoint: optimizer moment lengths differ".into()));
    }
    Ok(Adam { config, step, m, v })
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u8(match c.stage {
        Stage::One => 1,
        Stage::Two => 2,
    });
    w.u64(c.iteration);
    for v in c.scene.bounds.min.iter().chain(c.scene.bounds.max.iter()) {
        w.f64(*v);
    }
    w.u64(c.scene.len() as u64);
    for v in ParameterVector::gather(&c.scene).values {
        w.f64(v);
    }
    w.u32(c.env.width as u32);
    w.u32(c.env.height as u32);
    for t in &c.env.data {
        for v in t.iter() {
            w.f64(*v);
        }
    }
    match &c.optimizer {
        Some(o) => {
            w.u8(1);
            put_adam(&mut w, &o.particles);
            match &o.environment {
                Some(e) => {
                    w.u8(1);
                    put_adam(&mut w, e);
                }
                None => w.u8(0),
            }
        }
        None => {
            w.u8(0);
            w.u8(0);
        }
    }
    w.buf
}

pub fn decode_checkpoint(data: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(data, "checkpoint");
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("checkpoint version {version} is not supported")));
    }
    let stage = match r.u8()? {
        1 => Stage::One,
        2 => Stage::Two,
        s => return Err(Error::Format(format!("checkpoint: unknown stage {s}"))),
    };
    let iteration = r.u64()?;
    let mut b = [0.0; 6];
    for v in &mut b {
        *v = r.f64()?;
    }
    let bounds = Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]));
    let n = r.len(8 * PARAMS_PER_PARTICLE)?;
    let values = (0..n * PARAMS_PER_PARTICLE)
        .map(|_| r.f64())
        .collect::<Result<Vec<_>>>()?;
    let mut scene = Scene {
        particles: vec![GaussianParticle::new(Vec3::zeros(), [1.0, 0.0, 0.0, 0.0], Vec3::repeat(1.0), 0.5, Rgb::zeros(), Rgb::zeros(), 0.5); n],
        bounds,
    };
    ParameterVector { values }.scatter(&mut scene)?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let texels = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("checkpoint: environment size overflows".into()))?;
    let mut env_data = Vec::with_capacity(texels.min(data.len() / 24));
    for _ in 0..texels {
        env_data.push(Rgb::new(r.f64()?, r.f64()?, r.f64()?));
    }
    let env = EnvMap::new(width, height, env_data)?;
    let optimizer = if r.u8()? == 1 {
        let particles = get_adam(&mut r)?;
        let environment = if r.u8()? == 1 { Some(get_adam(&mut r)?) } else { None };
        Some(OptimizerState { particles, environment })
    } else {
        r.u8()?;
        None
    };
    r.finish()?;
    Ok(Checkpoint {
        scene,
        env,
        stage,
        iteration,
        optimizer,
    })
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(c)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&data)
}
