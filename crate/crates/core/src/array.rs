//! Microphone array geometries with real/virtual channel designations.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MicRole {
    Real,
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Positions relative to the array centre, in the array frame.
    pub positions: Vec<[f64; 3]>,
    pub roles: Vec<MicRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrayKind {
    CircularPlusVertical {
        radius: f64,
        vertical: f64,
        /// Indices of the real microphones; the rest are virtual.
        real: Vec<usize>,
    },
    Custom {
        positions: Vec<[f64; 3]>,
        real: Vec<usize>,
    },
}

impl Default for ArrayKind {
    fn default() -> Self {
        ArrayKind::CircularPlusVertical {
            radius: 0.10,
            vertical: 0.10,
            real: vec![0, 2],
        }
    }
}

fn assign_roles(n: usize, real: &[usize]) -> Result<Vec<MicRole>> {
    if real.is_empty() {
        return Err(CoreError::Config("array needs at least one real microphone".into()));
    }
    let mut roles = vec![MicRole::Virtual; n];
    for &r in real {
        if r >= n {
            return Err(CoreError::Config(format!("real mic index {r} out of range for {n} mics")));
        }
        if roles[r] == MicRole::Real {
            return Err(CoreError::Config(format!("real mic index {r} listed twice")));
        }
        roles[r] = MicRole::Real;
    }
    Ok(roles)
}

/// Builds the geometry. Circle microphones sit at azimuths 0, 90, 180 and
/// 270 degrees, so mic 0 lies on the front (+x) axis.
pub fn build_array(kind: &ArrayKind) -> Result<ArrayGeometry> {
    match kind {
        ArrayKind::CircularPlusVertical { radius, vertical, real } => {
            if !(*radius > 0.0) || !(*vertical > 0.0) {
                return Err(CoreError::Config(format!(
                    "radius {radius} and vertical offset {vertical} must be positive"
                )));
            }
            let mut positions: Vec<[f64; 3]> = (0..4)
                .map(|i| {
                    let a = i as f64 * std::f64::consts::FRAC_PI_2;
                    [radius * a.cos(), radius * a.sin(), 0.0]
                })
                .collect();
            positions.push([0.0, 0.0, *vertical]);
            positions.push([0.0, 0.0, -vertical]);
            let roles = assign_roles(6, real)?;
            Ok(ArrayGeometry { positions, roles })
        }
        ArrayKind::Custom { positions, real } => {
            if positions.is_empty() {
                return Err(CoreError::Config("custom array needs at least one microphone".into()));
            }
            if positions.iter().flatten().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite("array positions"));
            }
            let roles = assign_roles(positions.len(), real)?;
            Ok(ArrayGeometry {
                positions: positions.clone(),
                roles,
            })
        }
    }
}

impl ArrayGeometry {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn real_channels(&self) -> Vec<usize> {
        self.channels_with(MicRole::Real)
    }

    pub fn virtual_channels(&self) -> Vec<usize> {
        self.channels_with(MicRole::Virtual)
    }

    fn channels_with(&self, role: MicRole) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.roles[i] == role).collect()
    }

    /// The first real microphone.
    pub fn reference(&self) -> usize {
        self.real_channels()[0]
    }

    /// Positions in room coordinates for an array centred at `center` and
    /// rotated by `yaw` radians about the vertical axis.
    pub fn world_positions(&self, center: [f64; 3], yaw: f64) -> Vec<[f64; 3]> {
        let (s, c) = yaw.sin_cos();
        self.positions
            .iter()
            .map(|p| [center[0] + c * p[0] - s * p[1], center[1] + s * p[0] + c * p[1], center[2] + p[2]])
            .collect()
    }

    /// Largest distance of any microphone from the centre.
    pub fn aperture_radius(&self) -> f64 {
        self.positions
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_two_real_and_four_virtual() {
        let a = build_array(&ArrayKind::default()).unwrap();
        assert_eq!(a.real_channels(), vec![0, 2]);
        assert_eq!(a.virtual_channels(), vec![1, 3, 4, 5]);
        assert_eq!(a.reference(), 0);
    }

    #[test]
    fn singleton_custom() {
        let a = build_array(&ArrayKind::Custom {
            positions: vec![[0.0; 3]],
            real: vec![0],
        })
        .unwrap();
        assert_eq!(a.len(), 1);
        assert!(a.virtual_channels().is_empty());
    }

    #[test]
    fn rejects_bad_radius() {
        let k = ArrayKind::CircularPlusVertical {
            radius: 0.0,
            vertical: 0.1,
            real: vec![0],
        };
        assert!(build_array(&k).is_err());
    }

    #[test]
    fn yaw_rotates_front_axis() {
        let a = build_array(&ArrayKind::default()).unwrap();
        let w = a.world_positions([1.0, 1.0, 1.0], std::f64::consts::FRAC_PI_2);
        assert!((w[0][0] - 1.0).abs() < 1e-12 && (w[0][1] - 1.1).abs() < 1e-12);
    }
}
