//! PLY export of particles (binary little-endian, one `vertex` per particle).
//!
//! Properties, all `float`:
//! `x y z` position, `nx ny nz` shortest-axis direction (unsigned),
//! `rot_0..rot_3` quaternion `(w, x, y, z)`, `scale_0..scale_2` natural-log
//! extents, `opacity` pre-sigmoid opacity, `albedo_0..albedo_2` diffuse
//! albedo, `specular_0..specular_2` specular color, `roughness` pre-sigmoid
//! roughness.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::math::{Rgb, Vec3};
use crate::scene::{shortest_axis, GaussianParticle, Scene};

pub const PROPERTIES: [&str; 21] = [
    "x", "y", "z", "nx", "ny", "nz", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2", "opacity",
    "albedo_0", "albedo_1", "albedo_2", "specular_0", "specular_1", "specular_2", "roughness",
];

pub fn write_ply(mut w: impl Write, scene: &Scene) -> std::io::Result<()> {
    writeln!(w, "ply\nformat binary_little_endian 1.0\nelement vertex {}", scene.len())?;
    for p in PROPERTIES {
        writeln!(w, "property float {p}")?;
    }
    writeln!(w, "end_header")?;
    let mut buf = Vec::with_capacity(scene.len() * PROPERTIES.len() * 4);
    for p in &scene.particles {
        let axis = p.rotation_matrix().column(shortest_axis(&p.log_scale)).into_owned();
        let vals = [
            p.position.x,
            p.position.y,
            p.position.z,
            axis.x,
            axis.y,
            axis.z,
            p.rotation[0],
            p.rotation[1],
            p.rotation[2],
            p.rotation[3],
            p.log_scale.x,
            p.log_scale.y,
            p.log_scale.z,
            p.opacity_logit,
            p.diffuse_albedo.x,
            p.diffuse_albedo.y,
            p.diffuse_albedo.z,
            p.specular_color.x,
            p.specular_color.y,
            p.specular_color.z,
            p.roughness_logit,
        ];
        for v in vals {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)
}

/// Reads a file written by [`write_ply`]; values come back at single precision.
pub fn read_ply(mut r: impl BufRead) -> Result<Scene> {
    let bad = |m: &str| Error::Format(format!("ply: {m}"));
    let mut line = String::new();
    let mut count = None;
    let mut props = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(|e| bad(&e.to_string()))? == 0 {
            return Err(bad("missing end_header"));
        }
        let l = line.trim();
        if l == "end_header" {
            break;
        }
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["ply"] | ["comment", ..] => {}
            ["format", f, _] if *f != "binary_little_endian" => return Err(bad("only binary_little_endian is supported")),
            ["format", ..] => {}
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?),
            ["property", "float", name] => props.push(name.to_string()),
            _ => return Err(bad(&format!("unsupported header line '{l}'"))),
        }
    }
    if props != PROPERTIES {
        return Err(bad("unexpected property list"));
    }
    let n = count.ok_or_else(|| bad("no vertex element"))?;
    let mut data = Vec::new();
    r.read_to_end(&mut data).map_err(|e| bad(&e.to_string()))?;
    if data.len() != n * PROPERTIES.len() * 4 {
        return Err(bad("vertex data size does not match header"));
    }
    let vals: Vec<f64> = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let particles = vals
        .chunks_exact(PROPERTIES.len())
        .map(|v| GaussianParticle {
            position: Vec3::new(v[0], v[1], v[2]),
            rotation: [v[6], v[7], v[8], v[9]],
            log_scale: Vec3::new(v[10], v[11], v[12]),
            opacity_logit: v[13],
            diffuse_albedo: Rgb::new(v[14], v[15], v[16]),
            specular_color: Rgb::new(v[17], v[18], v[19]),
            roughness_logit: v[20],
        })
        .collect();
    Ok(Scene::from_particles(particles, 0.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::gradcheck_scene;

    #[test]
    fn round_trip_at_single_precision() {
        let scene = gradcheck_scene().unwrap().scene;
        let mut bytes = Vec::new();
        write_ply(&mut bytes, &scene).unwrap();
        let back = read_ply(&bytes[..]).unwrap();
        for (a, b) in scene.particles.iter().zip(&back.particles) {
            assert_eq!(b.position, a.position.map(|v| v as f32 as f64));
            assert_eq!(b.opacity_logit, a.opacity_logit as f32 as f64);
        }
        let mut again = Vec::new();
        write_ply(&mut again, &back).unwrap();
        assert_eq!(read_ply(&again[..]).unwrap().particles, back.particles);
    }
}
