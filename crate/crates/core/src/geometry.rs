//! Closed polygonal boundaries and their panel meshes.

use nalgebra::Vector2;

use crate::error::{Error, Result};

pub type Point = Vector2<f64>;

/// A simple closed polygon with counterclockwise vertex order.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

fn cross(a: &Point, b: &Point) -> f64 {
    a.x * b.y - a.y * b.x
}

fn signed_area(v: &[Point]) -> f64 {
    let n = v.len();
    (0..n).map(|i| cross(&v[i], &v[(i + 1) % n])).sum::<f64>() * 0.5
}

/// Closed-segment intersection test.
fn segments_intersect(p1: &Point, p2: &Point, q1: &Point, q2: &Point, tol: f64) -> bool {
    let d1 = cross(&(q2 - q1), &(p1 - q1));
    let d2 = cross(&(q2 - q1), &(p2 - q1));
    let d3 = cross(&(p2 - p1), &(q1 - p1));
    let d4 = cross(&(p2 - p1), &(q2 - p1));
    if ((d1 > tol && d2 < -tol) || (d1 < -tol && d2 > tol))
        && ((d3 > tol && d4 < -tol) || (d3 < -tol && d4 > tol))
    {
        return true;
    }
    let on_segment = |a: &Point, b: &Point, p: &Point, d: f64| {
        d.abs() <= tol
            && p.x >= a.x.min(b.x) - tol
            && p.x <= a.x.max(b.x) + tol
            && p.y >= a.y.min(b.y) - tol
            && p.y <= a.y.max(b.y) + tol
    };
    on_segment(q1, q2, p1, d1)
        || on_segment(q1, q2, p2, d2)
        || on_segment(p1, p2, q1, d3)
        || on_segment(p1, p2, q2, d4)
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&d) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + d * t)).norm()
}

/// Distance between the segments `[a, b]` and `[c, d]`.
pub fn segment_segment_distance(a: &Point, b: &Point, c: &Point, d: &Point) -> f64 {
    if segments_intersect(a, b, c, d, 0.0) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

impl Polygon {
    /// Validates the vertex list and returns a counterclockwise polygon.
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::Geometry(format!(
                "a polygon needs at least 3 vertices, got {n}"
            )));
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(Error::Geometry("non-finite vertex coordinate".into()));
        }
        let scale = vertices
            .iter()
            .flat_map(|v| [v.x.abs(), v.y.abs()])
            .fold(0.0f64, f64::max)
            .max(1e-300);
        let tol = 1e-12 * scale;
        for i in 0..n {
            if (vertices[(i + 1) % n] - vertices[i]).norm() <= tol {
                return Err(Error::Geometry(format!(
                    "vertices {i} and {} coincide",
                    (i + 1) % n
                )));
            }
        }
        let area = signed_area(&vertices);
        if area.abs() <= 1e-12 * scale * scale {
            return Err(Error::Geometry("polygon is degenerate (zero area)".into()));
        }
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if adjacent {
                    // neighbours may only share their common vertex: reject folds back
                    let (shared, other_i, other_j) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                    let u = other_i - shared;
                    let w = other_j - shared;
                    if cross(&u, &w).abs() <= tol * u.norm().max(w.norm()) && u.dot(&w) > 0.0 {
                        return Err(Error::Geometry(format!(
                            "edges {i} and {j} overlap"
                        )));
                    }
                } else if segments_intersect(&a, &b, &c, &d, tol * tol) {
                    return Err(Error::Geometry(format!(
                        "polygon is self-intersecting (edges {i} and {j})"
                    )));
                }
            }
        }
        let mut vertices = vertices;
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(Polygon { vertices })
    }

    pub fn from_coords(coords: &[[f64; 2]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point::new(c[0], c[1])).collect())
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn num_edges(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge(&self, i: usize) -> (Point, Point) {
        let n = self.vertices.len();
        (self.vertices[i], self.vertices[(i + 1) % n])
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        (0..self.num_edges())
            .map(|i| {
                let (a, b) = self.edge(i);
                (b - a).norm()
            })
            .sum()
    }

    pub fn centroid(&self) -> Point {
        let n = self.vertices.len();
        let a = self.area();
        let mut c = Point::zeros();
        for i in 0..n {
            let (p, q) = self.edge(i);
            c += (p + q) * cross(&p, &q);
        }
        c / (6.0 * a)
    }

    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for a in &self.vertices {
            for b in &self.vertices {
                d = d.max((a - b).norm());
            }
        }
        d
    }

    pub fn max_edge_length(&self) -> f64 {
        (0..self.num_edges())
            .map(|i| {
                let (a, b) = self.edge(i);
                (b - a).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Even–odd point-in-polygon test; points on the boundary are reported as outside.
    pub fn contains(&self, p: &Point) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (vi, vj) = (self.vertices[i], self.vertices[j]);
            if (vi.y > p.y) != (vj.y > p.y) {
                let x = vj.x + (p.y - vj.y) * (vi.x - vj.x) / (vi.y - vj.y);
                if p.x < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside && self.distance_to_boundary(p) > 0.0
    }

    pub fn distance_to_boundary(&self, p: &Point) -> f64 {
        (0..self.num_edges())
            .map(|i| {
                let (a, b) = self.edge(i);
                point_segment_distance(p, &a, &b)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// A straight boundary panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub start: Point,
    pub end: Point,
    pub length: f64,
    /// Unit tangent in the direction of traversal.
    pub tangent: Point,
    /// Unit normal pointing from the interior into the exterior.
    pub normal: Point,
    /// Index of the polygon edge that contains the panel.
    pub edge: usize,
}

impl Panel {
    fn new(start: Point, end: Point, edge: usize) -> Self {
        let d = end - start;
        let length = d.norm();
        let tangent = d / length;
        Panel {
            start,
            end,
            length,
            tangent,
            normal: Point::new(tangent.y, -tangent.x),
            edge,
        }
    }

    /// Point at parameter `t ∈ [0, 1]`.
    #[inline]
    pub fn point(&self, t: f64) -> Point {
        self.start + (self.end - self.start) * t
    }

    pub fn midpoint(&self) -> Point {
        self.point(0.5)
    }

    pub fn distance_to(&self, p: &Point) -> f64 {
        point_segment_distance(p, &self.start, &self.end)
    }
}

/// Panel mesh of a polygon boundary. Panels are ordered along the curve so that the
/// end of panel `i` is the start of panel `i + 1` (cyclically).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMesh {
    polygon: Polygon,
    panels: Vec<Panel>,
}

impl BoundaryMesh {
    /// Uniformly splits every polygon edge into panels of length at most `target_h`.
    pub fn from_polygon(polygon: &Polygon, target_h: f64) -> Result<Self> {
        if !(target_h > 0.0 && target_h.is_finite()) {
            return Err(Error::param("target_h", format!("must be positive, got {target_h}")));
        }
        let mut panels = Vec::new();
        for e in 0..polygon.num_edges() {
            let (a, b) = polygon.edge(e);
            let len = (b - a).norm();
            let n = ((len / target_h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            for j in 0..n {
                let s = a + (b - a) * (j as f64 / n as f64);
                let t = if j + 1 == n {
                    b
                } else {
                    a + (b - a) * ((j + 1) as f64 / n as f64)
                };
                panels.push(Panel::new(s, t, e));
            }
        }
        Ok(BoundaryMesh {
            polygon: polygon.clone(),
            panels,
        })
    }

    /// Bisects every panel.
    pub fn refine_uniform(&self) -> Self {
        let panels = self
            .panels
            .iter()
            .flat_map(|p| {
                let m = p.midpoint();
                let child = |start: Point, end: Point| Panel {
                    start,
                    end,
                    length: 0.5 * p.length,
                    ..p.clone()
                };
                [child(p.start, m), child(m, p.end)]
            })
            .collect();
        BoundaryMesh {
            polygon: self.polygon.clone(),
            panels,
        }
    }

    pub fn refined(&self, times: usize) -> Self {
        (0..times).fold(self.clone(), |m, _| m.refine_uniform())
    }

    pub fn polygon(&self) -> &Polygon {
        &self.polygon
    }

    pub fn panels(&self) -> &[Panel] {
        &self.panels
    }

    pub fn num_panels(&self) -> usize {
        self.panels.len()
    }

    pub fn panel(&self, i: usize) -> &Panel {
        &self.panels[i]
    }

    pub fn next(&self, i: usize) -> usize {
        (i + 1) % self.panels.len()
    }

    pub fn prev(&self, i: usize) -> usize {
        (i + self.panels.len() - 1) % self.panels.len()
    }

    /// Mesh nodes (panel start points), one per panel.
    pub fn nodes(&self) -> Vec<Point> {
        self.panels.iter().map(|p| p.start).collect()
    }

    pub fn total_length(&self) -> f64 {
        self.panels.iter().map(|p| p.length).sum()
    }

    pub fn max_panel_length(&self) -> f64 {
        self.panels.iter().map(|p| p.length).fold(0.0, f64::max)
    }

    pub fn diameter(&self) -> f64 {
        self.polygon.diameter()
    }

    pub fn distance_to_boundary(&self, p: &Point) -> f64 {
        self.polygon.distance_to_boundary(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Polygon {
        Polygon::from_coords(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap()
    }

    fn quad() -> Polygon {
        Polygon::from_coords(&[[0.0, 0.0], [1.0, 0.0], [0.8, 0.8], [0.2, 1.0]]).unwrap()
    }

    #[test]
    fn square_perimeter_and_orientation() {
        let p = square();
        assert!((p.perimeter() - 4.0).abs() < 1e-15);
        assert!(p.area() > 0.0);
        let cw = Polygon::from_coords(&[[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(cw.area() > 0.0);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(Polygon::from_coords(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).is_err());
        assert!(Polygon::from_coords(&[[0.0, 0.0], [1.0, 0.0]]).is_err());
        assert!(Polygon::from_coords(&[[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).is_err());
        // bow tie
        let err = Polygon::from_coords(&[[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(err, Err(Error::Geometry(_))));
    }

    #[test]
    fn meshing_square() {
        let m = BoundaryMesh::from_polygon(&square(), 0.5).unwrap();
        assert_eq!(m.num_panels(), 8);
        assert!(m.panels().iter().all(|p| (p.length - 0.5).abs() < 1e-15));
        let r = m.refine_uniform();
        assert_eq!(r.num_panels(), 16);
        assert!(r.panels().iter().all(|p| (p.length - 0.25).abs() < 1e-15));
        assert_eq!(m.refined(2).num_panels(), 32);
    }

    #[test]
    fn paper_quad_one_panel_per_edge() {
        let q = quad();
        let m = BoundaryMesh::from_polygon(&q, q.max_edge_length()).unwrap();
        assert_eq!(m.num_panels(), 4);
    }

    #[test]
    fn normals_point_outward() {
        let q = quad();
        let c = q.centroid();
        let m = BoundaryMesh::from_polygon(&q, 0.1).unwrap().refine_uniform();
        for p in m.panels() {
            assert!(p.normal.dot(&(p.midpoint() - c)) > 0.0);
            let rot = Point::new(p.tangent.y, -p.tangent.x);
            assert!((rot - p.normal).norm() < 1e-15);
        }
    }

    #[test]
    fn refinement_keeps_children_normals_and_vertices() {
        let m = BoundaryMesh::from_polygon(&quad(), 0.3).unwrap();
        let r = m.refine_uniform();
        for (i, p) in m.panels().iter().enumerate() {
            assert_eq!(r.panel(2 * i).normal, p.normal);
            assert_eq!(r.panel(2 * i + 1).normal, p.normal);
        }
        let new_nodes = r.nodes();
        for v in m.nodes() {
            assert!(new_nodes.iter().any(|w| (w - v).norm() == 0.0));
        }
        // panels chain
        for i in 0..r.num_panels() {
            assert_eq!(r.panel(i).end, r.panel(r.next(i)).start);
        }
    }

    #[test]
    fn point_in_polygon() {
        let q = quad();
        assert!(q.contains(&Point::new(0.5, 0.5)));
        assert!(!q.contains(&Point::new(1.5, 1.6)));
        assert!(!q.contains(&Point::new(0.5, 0.0)));
    }
}
