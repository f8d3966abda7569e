//! Axis-aligned box primitives.
//!
//! All boxes are half-open: `min` is the first voxel inside, `max` the first
//! voxel outside, so extents are simply `max - min`.

use serde::{Deserialize, Serialize};

/// 2D integer box on an axial plane, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Box2i {
    pub x_min: i32,
    pub y_min: i32,
    pub x_max: i32,
    pub y_max: i32,
}

impl Box2i {
    pub fn new(x_min: i32, y_min: i32, x_max: i32, y_max: i32) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn width(&self) -> i32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> i32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> i64 {
        if self.x_max <= self.x_min || self.y_max <= self.y_min {
            return 0;
        }
        i64::from(self.width()) * i64::from(self.height())
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn center(&self) -> (f64, f64) {
        (
            f64::from(self.x_min + self.x_max) / 2.0,
            f64::from(self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn intersection_area(&self, other: &Box2i) -> i64 {
        let w = i64::from(self.x_max.min(other.x_max)) - i64::from(self.x_min.max(other.x_min));
        let h = i64::from(self.y_max.min(other.y_max)) - i64::from(self.y_min.max(other.y_min));
        if w <= 0 || h <= 0 {
            0
        } else {
            w * h
        }
    }
}

/// Intersection over union of two axial boxes. Zero when either is empty.
pub fn iou(a: &Box2i, b: &Box2i) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// 2D box with fractional coordinates, produced by interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2f {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl From<Box2i> for Box2f {
    fn from(b: Box2i) -> Self {
        Self {
            x_min: f64::from(b.x_min),
            y_min: f64::from(b.y_min),
            x_max: f64::from(b.x_max),
            y_max: f64::from(b.y_max),
        }
    }
}

/// 3D integer box in voxel coordinates, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Box3i {
    pub x_min: i32,
    pub y_min: i32,
    pub z_min: i32,
    pub x_max: i32,
    pub y_max: i32,
    pub z_max: i32,
}

impl Box3i {
    #[allow(clippy::too_many_arguments)]
    pub fn new(x_min: i32, y_min: i32, z_min: i32, x_max: i32, y_max: i32, z_max: i32) -> Self {
        Self { x_min, y_min, z_min, x_max, y_max, z_max }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max && self.z_min < self.z_max
    }

    pub fn extent(&self) -> (i32, i32, i32) {
        (
            self.x_max - self.x_min,
            self.y_max - self.y_min,
            self.z_max - self.z_min,
        )
    }

    pub fn volume(&self) -> i64 {
        if !self.is_valid() {
            return 0;
        }
        let (ex, ey, ez) = self.extent();
        i64::from(ex) * i64::from(ey) * i64::from(ez)
    }

    pub fn center(&self) -> (f64, f64, f64) {
        (
            f64::from(self.x_min + self.x_max) / 2.0,
            f64::from(self.y_min + self.y_max) / 2.0,
            f64::from(self.z_min + self.z_max) / 2.0,
        )
    }

    pub fn contains(&self, x: i32, y: i32, z: i32) -> bool {
        x >= self.x_min
            && x < self.x_max
            && y >= self.y_min
            && y < self.y_max
            && z >= self.z_min
            && z < self.z_max
    }

    pub fn intersection_volume(&self, other: &Box3i) -> i64 {
        let dx = i64::from(self.x_max.min(other.x_max)) - i64::from(self.x_min.max(other.x_min));
        let dy = i64::from(self.y_max.min(other.y_max)) - i64::from(self.y_min.max(other.y_min));
        let dz = i64::from(self.z_max.min(other.z_max)) - i64::from(self.z_min.max(other.z_min));
        if dx <= 0 || dy <= 0 || dz <= 0 {
            0
        } else {
            dx * dy * dz
        }
    }

    /// Overlap in z only; used to test vertical fusion of GT boxes.
    pub fn z_overlap(&self, other: &Box3i) -> i32 {
        (self.z_max.min(other.z_max) - self.z_min.max(other.z_min)).max(0)
    }
}

/// 3D IoU of two voxel boxes.
pub fn iou3(a: &Box3i, b: &Box3i) -> f64 {
    let inter = a.intersection_volume(b);
    let union = a.volume() + b.volume() - inter;
    if union <= 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// 3D box in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3f {
    pub x_min: f64,
    pub y_min: f64,
    pub z_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub z_max: f64,
}

impl Box3f {
    pub fn from_vox(b: &Box3i, spacing: (f32, f32, f32)) -> Self {
        let (sx, sy, sz) = (
            f64::from(spacing.0),
            f64::from(spacing.1),
            f64::from(spacing.2),
        );
        Self {
            x_min: f64::from(b.x_min) * sx,
            y_min: f64::from(b.y_min) * sy,
            z_min: f64::from(b.z_min) * sz,
            x_max: f64::from(b.x_max) * sx,
            y_max: f64::from(b.y_max) * sy,
            z_max: f64::from(b.z_max) * sz,
        }
    }
}

/// Linear interpolation: `a` at `t = 0`, `b` at `t = 1`.
pub fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}
