//! Scalar-generic planar geometry primitives.
//!
//! Everything here is generic over the float type via `num-traits`; the
//! crate root exposes `f64` aliases which the rest of the pipeline uses.

use num_traits::Float;

/// 2D point / vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2<F> {
    pub x: F,
    pub y: F,
}

impl<F: Float> Point2<F> {
    pub fn new(x: F, y: F) -> Self {
        Point2 { x, y }
    }

    pub fn add(self, o: Self) -> Self {
        Point2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Self) -> Self {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: F) -> Self {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Self) -> F {
        self.x * o.x + self.y * o.y
    }

    /// z component of the cross product.
    pub fn cross(self, o: Self) -> F {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> F {
        self.dot(self).sqrt()
    }

    pub fn dist(self, o: Self) -> F {
        self.sub(o).norm()
    }

    /// Rotate by `angle` radians around `pivot` (counter-clockwise).
    pub fn rotate_around(self, pivot: Self, angle: F) -> Self {
        let (s, c) = angle.sin_cos();
        let d = self.sub(pivot);
        Point2::new(
            pivot.x + c * d.x - s * d.y,
            pivot.y + s * d.x + c * d.y,
        )
    }
}

/// Normalize an angle in degrees to [0, 180).
pub fn fold180<F: Float>(deg: F) -> F {
    let c180 = F::from(180.0).unwrap();
    let mut a = deg % c180;
    if a < F::zero() {
        a = a + c180;
    }
    if a >= c180 {
        a = a - c180;
    }
    a
}

/// Angular distance between two undirected orientations, in [0, 90].
pub fn fold_diff180<F: Float>(a: F, b: F) -> F {
    let c180 = F::from(180.0).unwrap();
    let d = (fold180(a) - fold180(b)).abs();
    d.min(c180 - d)
}

/// Fold an orientation into [0, 90) so that orthogonal pairs coincide.
pub fn fold90<F: Float>(deg: F) -> F {
    let c90 = F::from(90.0).unwrap();
    let mut a = fold180(deg) % c90;
    if a >= c90 {
        a = a - c90;
    }
    a
}

/// Orientation in degrees of the segment a -> b, in [0, 180).
pub fn segment_orientation<F: Float>(a: Point2<F>, b: Point2<F>) -> F {
    let d = b.sub(a);
    fold180(d.y.atan2(d.x).to_degrees())
}

/// Infinite line given by a point and a unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Line2<F> {
    pub point: Point2<F>,
    pub dir: Point2<F>,
}

impl<F: Float> Line2<F> {
    pub fn from_angle_deg(point: Point2<F>, deg: F) -> Self {
        let r = deg.to_radians();
        Line2 {
            point,
            dir: Point2::new(r.cos(), r.sin()),
        }
    }

    /// Intersection of two lines; `None` when (nearly) parallel.
    pub fn intersect(&self, other: &Line2<F>) -> Option<Point2<F>> {
        let denom = self.dir.cross(other.dir);
        if denom.abs() < F::from(1e-12).unwrap() {
            return None;
        }
        let t = other.point.sub(self.point).cross(other.dir) / denom;
        Some(self.point.add(self.dir.scale(t)))
    }
}

/// Signed area of a closed polygon (positive = counter-clockwise).
pub fn polygon_area<F: Float>(pts: &[Point2<F>]) -> F {
    let n = pts.len();
    let mut acc = F::zero();
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        acc = acc + a.cross(b);
    }
    acc / F::from(2.0).unwrap()
}

/// Even-odd point-in-polygon test over a closed vertex loop.
pub fn point_in_polygon<F: Float>(p: Point2<F>, pts: &[Point2<F>]) -> bool {
    let n = pts.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (pts[i], pts[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let xint = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < xint {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Distance from `p` to the segment [a, b].
pub fn dist_point_segment<F: Float>(p: Point2<F>, a: Point2<F>, b: Point2<F>) -> F {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == F::zero() {
        return p.dist(a);
    }
    let t = p.sub(a).dot(ab) / len2;
    let t = t.max(F::zero()).min(F::one());
    p.dist(a.add(ab.scale(t)))
}

/// Distance from `p` to the infinite line through a segment.
pub fn dist_point_line<F: Float>(p: Point2<F>, a: Point2<F>, b: Point2<F>) -> F {
    let ab = b.sub(a);
    let len = ab.norm();
    if len == F::zero() {
        return p.dist(a);
    }
    (p.sub(a).cross(ab) / len).abs()
}

pub fn clamp01<F: Float>(v: F) -> F {
    v.max(F::zero()).min(F::one())
}
