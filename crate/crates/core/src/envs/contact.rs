//! Soft-contact slot geometry: a table surface with a rectangular channel,
//! modeled with one-sided stiff spring-damper penalty forces.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

/// A slot of `width` cut `depth` deep into a table whose top face lies at
/// `surface_y`. Material fills everything below the surface except the
/// channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotGeometry {
    pub center_x: f64,
    pub surface_y: f64,
    pub width: f64,
    pub depth: f64,
    pub stiffness: f64,
    pub damping: f64,
}

impl SlotGeometry {
    /// Penalty force on a point at `pos` with velocity `vel`.
    ///
    /// Zero strictly outside the material. Inside, the force acts along the
    /// minimum-penetration exit direction: spring proportional to the
    /// penetration plus a damper on the approach velocity, clamped so the
    /// contact never pulls.
    pub fn contact_force(&self, pos: &Vector2<f64>, vel: &Vector2<f64>) -> Vector2<f64> {
        if self.width <= 0.0 || self.stiffness <= 0.0 {
            return Vector2::zeros();
        }
        let rel_x = pos.x - self.center_x;
        let below = self.surface_y - pos.y;
        if below <= 0.0 {
            return Vector2::zeros();
        }
        let half = self.width / 2.0;
        let in_channel_x = rel_x.abs() < half;
        let above_bottom = pos.y > self.surface_y - self.depth;

        if in_channel_x {
            if above_bottom {
                // Free space inside the channel.
                return Vector2::zeros();
            }
            // Bottom face pushes up.
            let pen = (self.surface_y - self.depth) - pos.y;
            return self.one_sided(pen, Vector2::new(0.0, 1.0), vel);
        }

        // Inside table material: exit up through the surface or sideways
        // into the channel, whichever face is closer.
        let pen_up = below;
        let pen_side = rel_x.abs() - half;
        if above_bottom && pen_side < pen_up {
            let dir = if rel_x > 0.0 { 1.0 } else { -1.0 };
            // Push toward the channel.
            self.one_sided(pen_side, Vector2::new(-dir, 0.0), vel)
        } else {
            self.one_sided(pen_up, Vector2::new(0.0, 1.0), vel)
        }
    }

    fn one_sided(&self, pen: f64, normal: Vector2<f64>, vel: &Vector2<f64>) -> Vector2<f64> {
        let magnitude = self.stiffness * pen - self.damping * vel.dot(&normal);
        normal * magnitude.max(0.0)
    }

    /// True when the point is inside solid material.
    pub fn penetrates(&self, pos: &Vector2<f64>) -> bool {
        let rel_x = pos.x - self.center_x;
        pos.y < self.surface_y
            && !(rel_x.abs() < self.width / 2.0 && pos.y > self.surface_y - self.depth)
    }
}
