use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainKind {
    Plane,
    Rough,
    Stair,
    Slope,
}

impl TerrainKind {
    pub const ALL: [TerrainKind; 4] = [
        TerrainKind::Plane,
        TerrainKind::Rough,
        TerrainKind::Stair,
        TerrainKind::Slope,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainKind::Plane => "plane",
            TerrainKind::Rough => "rough",
            TerrainKind::Stair => "stair",
            TerrainKind::Slope => "slope",
        }
    }
}

impl std::str::FromStr for TerrainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(TerrainKind::Plane),
            "rough" => Ok(TerrainKind::Rough),
            "stair" => Ok(TerrainKind::Stair),
            "slope" => Ok(TerrainKind::Slope),
            other => Err(Error::config("terrain", format!("unknown terrain kind `{other}`"))),
        }
    }
}

/// Height profile z = h(x) of the ground in the sagittal plane.
///
/// Stairs ascend toward +x. Rough ground is piecewise linear between nodes
/// spaced one correlation length apart, with node heights drawn uniformly in
/// `[-amplitude, amplitude]` from a counter-based hash of `(seed, node)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TerrainProfile {
    Plane,
    Rough {
        amplitude: f64,
        correlation_length: f64,
        seed: u64,
    },
    Stair {
        step_height: f64,
        step_width: f64,
    },
    Slope {
        angle: f64,
    },
}

/// Ground contact geometry at a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundContact {
    /// Depth of the point below the surface along `normal` (m, > 0).
    pub penetration: f64,
    /// Outward unit surface normal.
    pub normal: [f64; 2],
}

impl TerrainProfile {
    pub fn kind(&self) -> TerrainKind {
        match self {
            TerrainProfile::Plane => TerrainKind::Plane,
            TerrainProfile::Rough { .. } => TerrainKind::Rough,
            TerrainProfile::Stair { .. } => TerrainKind::Stair,
            TerrainProfile::Slope { .. } => TerrainKind::Slope,
        }
    }

    pub fn validate(&self, max_step_height: f64) -> Result<()> {
        match *self {
            TerrainProfile::Plane => Ok(()),
            TerrainProfile::Rough {
                amplitude,
                correlation_length,
                ..
            } => {
                if !(amplitude >= 0.0) {
                    return Err(Error::config("terrain.amplitude", "must be >= 0"));
                }
                if !(correlation_length > 0.0) {
                    return Err(Error::config("terrain.correlation_length", "must be > 0"));
                }
                Ok(())
            }
            TerrainProfile::Stair {
                step_height,
                step_width,
            } => {
                if !(step_height >= 0.0 && step_height <= max_step_height) {
                    return Err(Error::config(
                        "terrain.step_height",
                        format!("must lie in [0, {max_step_height}]"),
                    ));
                }
                if !(step_width > 0.0) {
                    return Err(Error::config("terrain.step_width", "must be > 0"));
                }
                Ok(())
            }
            TerrainProfile::Slope { angle } => {
                if !(angle.abs() < std::f64::consts::FRAC_PI_2) {
                    return Err(Error::config("terrain.angle", "must lie in (-pi/2, pi/2)"));
                }
                Ok(())
            }
        }
    }

    /// Ground height at `x`.
    pub fn sample_height(&self, x: f64) -> f64 {
        match *self {
            TerrainProfile::Plane => 0.0,
            TerrainProfile::Rough {
                amplitude,
                correlation_length,
                seed,
            } => {
                let u = x / correlation_length;
                let i = u.floor();
                let frac = u - i;
                let i = i as i64;
                let h0 = node_height(seed, i, amplitude);
                let h1 = node_height(seed, i + 1, amplitude);
                h0 + (h1 - h0) * frac
            }
            TerrainProfile::Stair {
                step_height,
                step_width,
            } => (x / step_width).floor() * step_height,
            TerrainProfile::Slope { angle } => x * angle.tan(),
        }
    }

    /// dh/dx of the smooth part of the profile (zero on stair treads).
    pub fn slope_at(&self, x: f64) -> f64 {
        match *self {
            TerrainProfile::Plane | TerrainProfile::Stair { .. } => 0.0,
            TerrainProfile::Rough {
                amplitude,
                correlation_length,
                seed,
            } => {
                let i = (x / correlation_length).floor() as i64;
                (node_height(seed, i + 1, amplitude) - node_height(seed, i, amplitude))
                    / correlation_length
            }
            TerrainProfile::Slope { angle } => angle.tan(),
        }
    }

    /// Contact query for a point; `None` when the point is above the ground.
    pub fn contact(&self, x: f64, z: f64) -> Option<GroundContact> {
        let h = self.sample_height(x);
        let depth = h - z;
        if depth <= 0.0 {
            return None;
        }
        if let TerrainProfile::Stair {
            step_height,
            step_width,
        } = *self
        {
            // Inside a step column: push out through whichever face is closer.
            let riser_x = (x / step_width).floor() * step_width;
            let into_riser = x - riser_x;
            if step_height > 0.0 && into_riser < depth {
                return Some(GroundContact {
                    penetration: into_riser,
                    normal: [-1.0, 0.0],
                });
            }
            return Some(GroundContact {
                penetration: depth,
                normal: [0.0, 1.0],
            });
        }
        let s = self.slope_at(x);
        let norm = (1.0 + s * s).sqrt();
        Some(GroundContact {
            penetration: depth / norm,
            normal: [-s / norm, 1.0 / norm],
        })
    }
}

fn node_height(seed: u64, node: i64, amplitude: f64) -> f64 {
    let bits = splitmix64(seed ^ splitmix64(node as u64));
    let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
    (2.0 * unit - 1.0) * amplitude
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stair_height_counts_whole_steps() {
        let t = TerrainProfile::Stair {
            step_height: 0.05,
            step_width: 0.2,
        };
        assert!((t.sample_height(0.45) - 0.10).abs() < 1e-15);
        assert_eq!(t.sample_height(0.0), 0.0);
        assert!((t.sample_height(-0.01) + 0.05).abs() < 1e-15);
    }

    #[test]
    fn plane_is_flat() {
        for x in [-3.0, 0.0, 0.7, 12.5] {
            assert_eq!(TerrainProfile::Plane.sample_height(x), 0.0);
        }
    }

    #[test]
    fn slope_follows_tangent() {
        let t = TerrainProfile::Slope {
            angle: 26f64.to_radians(),
        };
        let h = t.sample_height(1.0);
        assert!((h - 26f64.to_radians().tan()).abs() < 1e-15);
        assert!((h - 0.4877).abs() < 1e-4);
        let c = t.contact(1.0, h - 0.01).unwrap();
        assert!((c.normal[0] + 26f64.to_radians().sin()).abs() < 1e-12);
        assert!((c.penetration - 0.01 * 26f64.to_radians().cos()).abs() < 1e-12);
    }

    #[test]
    fn rough_is_deterministic_and_bounded() {
        let t = TerrainProfile::Rough {
            amplitude: 0.04,
            correlation_length: 0.1,
            seed: 11,
        };
        let other = TerrainProfile::Rough {
            amplitude: 0.04,
            correlation_length: 0.1,
            seed: 12,
        };
        let mut differs = false;
        for k in -200..200 {
            let x = k as f64 * 0.013;
            let h = t.sample_height(x);
            assert_eq!(h, t.sample_height(x));
            assert!(h.abs() <= 0.04);
            differs |= h != other.sample_height(x);
        }
        assert!(differs);
    }

    #[test]
    fn stair_riser_pushes_backward() {
        let t = TerrainProfile::Stair {
            step_height: 0.05,
            step_width: 0.2,
        };
        // Just past the riser at x = 0.2, well below the tread.
        let c = t.contact(0.201, 0.0).unwrap();
        assert_eq!(c.normal, [-1.0, 0.0]);
        assert!((c.penetration - 0.001).abs() < 1e-12);
        // Middle of a tread, barely below it.
        let c = t.contact(0.3, 0.049).unwrap();
        assert_eq!(c.normal, [0.0, 1.0]);
        assert!(t.contact(0.3, 0.051).is_none());
    }

    #[test]
    fn stair_height_limit_is_enforced() {
        let t = TerrainProfile::Stair {
            step_height: 0.09,
            step_width: 0.3,
        };
        assert!(t.validate(0.085).is_err());
        assert!(t.validate(0.1).is_ok());
    }
}
