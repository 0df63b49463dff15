//! Flat view over the optimizable particle fields.

use std::fmt;

use crate::error::{Error, Result};
use crate::scene::Scene;

pub const PARAMS_PER_PARTICLE: usize = 18;

/// One scalar field of a particle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Position(usize),
    Rotation(usize),
    LogScale(usize),
    OpacityLogit,
    Albedo(usize),
    Specular(usize),
    RoughnessLogit,
}

impl ParamKind {
    pub fn offset(self) -> usize {
        match self {
            ParamKind::Position(a) => a,
            ParamKind::Rotation(k) => 3 + k,
            ParamKind::LogScale(a) => 7 + a,
            ParamKind::OpacityLogit => 10,
            ParamKind::Albedo(c) => 11 + c,
            ParamKind::Specular(c) => 14 + c,
            ParamKind::RoughnessLogit => 17,
        }
    }

    pub fn from_offset(o: usize) -> Option<Self> {
        Some(match o {
            0..=2 => ParamKind::Position(o),
            3..=6 => ParamKind::Rotation(o - 3),
            7..=9 => ParamKind::LogScale(o - 7),
            10 => ParamKind::OpacityLogit,
            11..=13 => ParamKind::Albedo(o - 11),
            14..=16 => ParamKind::Specular(o - 14),
            17 => ParamKind::RoughnessLogit,
            _ => return None,
        })
    }

    pub fn is_geometry(self) -> bool {
        matches!(
            self,
            ParamKind::Position(_) | ParamKind::Rotation(_) | ParamKind::LogScale(_) | ParamKind::OpacityLogit
        )
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const XYZ: [&str; 3] = ["x", "y", "z"];
        const WXYZ: [&str; 4] = ["w", "x", "y", "z"];
        const RGB: [&str; 3] = ["r", "g", "b"];
        match *self {
            ParamKind::Position(a) => write!(f, "position.{}", XYZ[a]),
            ParamKind::Rotation(k) => write!(f, "rotation.{}", WXYZ[k]),
            ParamKind::LogScale(a) => write!(f, "log_scale.{}", XYZ[a]),
            ParamKind::OpacityLogit => write!(f, "opacity_logit"),
            ParamKind::Albedo(c) => write!(f, "albedo.{}", RGB[c]),
            ParamKind::Specular(c) => write!(f, "specular.{}", RGB[c]),
            ParamKind::RoughnessLogit => write!(f, "roughness_logit"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(particles: usize) -> Self {
        ParameterVector {
            values: vec![0.0; particles * PARAMS_PER_PARTICLE],
        }
    }

    pub fn gather(scene: &Scene) -> Self {
        let mut values = Vec::with_capacity(scene.len() * PARAMS_PER_PARTICLE);
        for p in &scene.particles {
            values.extend(p.position.iter());
            values.extend(p.rotation.iter());
            values.extend(p.log_scale.iter());
            values.push(p.opacity_logit);
            values.extend(p.diffuse_albedo.iter());
            values.extend(p.specular_color.iter());
            values.push(p.roughness_logit);
        }
        ParameterVector { values }
    }

    /// Writes the values back into `scene` verbatim (no invariant enforcement).
    pub fn scatter(&self, scene: &mut Scene) -> Result<()> {
        if self.values.len() != scene.len() * PARAMS_PER_PARTICLE {
            return Err(Error::Contract(format!(
                "{} parameters for {} particles",
                self.values.len(),
                scene.len()
            )));
        }
        for (p, v) in scene.particles.iter_mut().zip(self.values.chunks(PARAMS_PER_PARTICLE)) {
            p.position.copy_from_slice(&v[0..3]);
            p.rotation.copy_from_slice(&v[3..7]);
            p.log_scale.copy_from_slice(&v[7..10]);
            p.opacity_logit = v[10];
            p.diffuse_albedo.copy_from_slice(&v[11..14]);
            p.specular_color.copy_from_slice(&v[14..17]);
            p.roughness_logit = v[17];
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(particle: usize, kind: ParamKind) -> usize {
        particle * PARAMS_PER_PARTICLE + kind.offset()
    }

    pub fn describe(index: usize) -> (usize, ParamKind) {
        (
            index / PARAMS_PER_PARTICLE,
            ParamKind::from_offset(index % PARAMS_PER_PARTICLE).expect("offset in range"),
        )
    }

    pub fn particle_mut(&mut self, particle: usize) -> &mut [f64] {
        &mut self.values[particle * PARAMS_PER_PARTICLE..(particle + 1) * PARAMS_PER_PARTICLE]
    }

    pub fn particle(&self, particle: usize) -> &[f64] {
        &self.values[particle * PARAMS_PER_PARTICLE..(particle + 1) * PARAMS_PER_PARTICLE]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_round_trip_through_offsets() {
        for o in 0..PARAMS_PER_PARTICLE {
            assert_eq!(ParamKind::from_offset(o).unwrap().offset(), o);
        }
        assert!(ParamKind::from_offset(PARAMS_PER_PARTICLE).is_none());
        assert_eq!(ParameterVector::describe(ParameterVector::index(3, ParamKind::Albedo(1))), (3, ParamKind::Albedo(1)));
    }
}
