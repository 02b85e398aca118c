//! Convex polygons in the plane and half-plane clipping.

pub type Point = [f64; 2];

/// Axis-aligned box `[u_min, u_max] × [v_min, v_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl BoundingBox {
    pub fn new(u_min: f64, u_max: f64, v_min: f64, v_max: f64) -> Option<Self> {
        (u_min < u_max
            && v_min < v_max
            && [u_min, u_max, v_min, v_max].iter().all(|x| x.is_finite()))
        .then_some(Self {
            u_min,
            u_max,
            v_min,
            v_max,
        })
    }

    pub fn polygon(&self) -> Polygon {
        Polygon::new(vec![
            [self.u_min, self.v_min],
            [self.u_max, self.v_min],
            [self.u_max, self.v_max],
            [self.u_min, self.v_max],
        ])
    }
}

/// Simple polygon with vertices listed once (the closing edge is implicit).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3 || self.area() <= 0.0
    }

    /// Shoelace area; positive for counterclockwise order.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (p, q) = (self.vertices[i], self.vertices[(i + 1) % n]);
                p[0] * q[1] - q[0] * p[1]
            })
            .sum::<f64>()
            / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> Point {
        let n = self.vertices.len();
        let a = self.signed_area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            let (p, q) = (self.vertices[i], self.vertices[(i + 1) % n]);
            let cross = p[0] * q[1] - q[0] * p[1];
            cx += (p[0] + q[0]) * cross;
            cy += (p[1] + q[1]) * cross;
        }
        [cx / (6.0 * a), cy / (6.0 * a)]
    }

    /// Keep the part where `a·u + b·v ≤ c` (Sutherland-Hodgman against one edge).
    pub fn clip(&self, a: f64, b: f64, c: f64) -> Polygon {
        let n = self.vertices.len();
        let side = |p: &Point| a * p[0] + b * p[1] - c;
        let mut out = Vec::with_capacity(n + 1);
        for i in 0..n {
            let (p, q) = (self.vertices[i], self.vertices[(i + 1) % n]);
            let (sp, sq) = (side(&p), side(&q));
            if sp <= 0.0 {
                out.push(p);
            }
            if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
        let mut poly = Polygon::new(out);
        poly.dedup();
        poly
    }

    fn dedup(&mut self) {
        let scale = self
            .vertices
            .iter()
            .flat_map(|p| p.iter())
            .fold(1.0f64, |m, x| m.max(x.abs()));
        let tol = 1e-12 * scale;
        let mut out: Vec<Point> = Vec::with_capacity(self.vertices.len());
        for &p in &self.vertices {
            if out
                .last()
                .is_none_or(|q| (p[0] - q[0]).abs() > tol || (p[1] - q[1]).abs() > tol)
            {
                out.push(p);
            }
        }
        while out.len() > 1 {
            let (f, l) = (out[0], out[out.len() - 1]);
            if (f[0] - l[0]).abs() <= tol && (f[1] - l[1]).abs() <= tol {
                out.pop();
            } else {
                break;
            }
        }
        self.vertices = out;
    }

    /// True when every turn along the boundary has the same orientation.
    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let scale = self.area().max(f64::MIN_POSITIVE);
        let mut sign = 0.0;
        for i in 0..n {
            let (p, q, r) = (
                self.vertices[i],
                self.vertices[(i + 1) % n],
                self.vertices[(i + 2) % n],
            );
            let cross = (q[0] - p[0]) * (r[1] - q[1]) - (q[1] - p[1]) * (r[0] - q[0]);
            if cross.abs() <= 1e-12 * scale {
                continue;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
        true
    }

    /// Point-in-polygon test for convex counterclockwise polygons (boundary excluded).
    pub fn contains_convex(&self, p: Point) -> bool {
        let n = self.vertices.len();
        n >= 3
            && (0..n).all(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) > 0.0
            })
    }
}
