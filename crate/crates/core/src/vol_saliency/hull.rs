//! 3-D convex hull (quickhull-style conflict lists) with planar and linear fallbacks.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Intrinsic dimension of the hull.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HullDimension {
    Solid,
    /// Coplanar input; `vertices` is the 2-D hull polygon in order.
    Planar,
    /// Collinear input; `vertices` holds the two segment endpoints.
    Linear,
    Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexHull {
    pub vertices: Vec<Vector3<f64>>,
    /// Outward-wound triangles indexing `vertices`; empty unless solid.
    pub faces: Vec<[usize; 3]>,
    pub dimension: HullDimension,
}

impl ConvexHull {
    pub fn is_degenerate(&self) -> bool {
        self.dimension != HullDimension::Solid
    }

    /// Enclosed volume from the signed tetrahedra of the faces.
    pub fn volume(&self) -> f64 {
        let origin = self.vertices.first().copied().unwrap_or_else(Vector3::zeros);
        self.faces
            .iter()
            .map(|f| {
                let (a, b, c) = (
                    self.vertices[f[0]] - origin,
                    self.vertices[f[1]] - origin,
                    self.vertices[f[2]] - origin,
                );
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Largest signed distance of `p` outside any face plane (≤ 0 inside).
    pub fn outside_distance(&self, p: &Vector3<f64>) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let (a, b, c) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
                let n = (b - a).cross(&(c - a)).normalize();
                n.dot(&(p - a))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

struct Face {
    v: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    alive: bool,
    outside: Vec<usize>,
}

impl Face {
    fn new(v: [usize; 3], pts: &[Vector3<f64>]) -> Self {
        let normal = (pts[v[1]] - pts[v[0]]).cross(&(pts[v[2]] - pts[v[0]])).normalize();
        Self {
            v,
            offset: normal.dot(&pts[v[0]]),
            normal,
            alive: true,
            outside: Vec::new(),
        }
    }

    fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

fn farthest_by(points: &[Vector3<f64>], f: impl Fn(&Vector3<f64>) -> f64) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = f(p);
        if d > best.1 {
            best = (i, d);
        }
    }
    best
}

/// Convex hull of `points` (must be non-empty). Coplanar and collinear inputs fall back to
/// the 2-D polygon or the segment endpoints and report it through `dimension`.
pub fn convex_hull(points: &[Vector3<f64>]) -> ConvexHull {
    assert!(!points.is_empty(), "convex hull of an empty point set");
    let scale = points
        .iter()
        .map(|p| p.amax())
        .fold(0.0, f64::max)
        .max(1.0);
    let eps = 1e-12 * scale;

    let i0 = (0..points.len())
        .min_by(|&a, &b| {
            let (p, q) = (points[a], points[b]);
            p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y)).then(p.z.total_cmp(&q.z))
        })
        .unwrap();
    let p0 = points[i0];
    let (i1, d1) = farthest_by(points, |p| (p - p0).norm());
    if d1 <= eps {
        return ConvexHull {
            vertices: vec![p0],
            faces: vec![],
            dimension: HullDimension::Point,
        };
    }
    let axis = (points[i1] - p0) / d1;
    let (i2, d2) = farthest_by(points, |p| {
        let d = p - p0;
        (d - axis * d.dot(&axis)).norm()
    });
    if d2 <= eps {
        let (lo, _) = farthest_by(points, |p| -(p - p0).dot(&axis));
        let (hi, _) = farthest_by(points, |p| (p - p0).dot(&axis));
        return ConvexHull {
            vertices: vec![points[lo], points[hi]],
            faces: vec![],
            dimension: HullDimension::Linear,
        };
    }
    let plane_n = (points[i1] - p0).cross(&(points[i2] - p0)).normalize();
    let (i3, d3) = farthest_by(points, |p| (p - p0).dot(&plane_n).abs());
    if d3 <= eps {
        return planar_hull(points, p0, axis, plane_n);
    }

    let mut faces: Vec<Face> = Vec::new();
    let centroid = (p0 + points[i1] + points[i2] + points[i3]) / 4.0;
    for tri in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        let mut f = Face::new(tri, points);
        if f.distance(&centroid) > 0.0 {
            f = Face::new([tri[0], tri[2], tri[1]], points);
        }
        faces.push(f);
    }
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            edges.insert((f.v[k], f.v[(k + 1) % 3]), fi);
        }
    }

    // conflict lists: every point still outside the hull waits on exactly one face
    let seeds = [i0, i1, i2, i3];
    let assign = |faces: &mut Vec<Face>, candidates: &[usize], pi: usize| {
        if let Some(&fi) = candidates.iter().find(|&&fi| faces[fi].distance(&points[pi]) > eps) {
            faces[fi].outside.push(pi);
        }
    };
    let initial: Vec<usize> = (0..faces.len()).collect();
    for pi in (0..points.len()).filter(|i| !seeds.contains(i)) {
        assign(&mut faces, &initial, pi);
    }
    let mut pending: Vec<usize> = initial.into_iter().rev().collect();
    while let Some(start) = pending.pop() {
        if !faces[start].alive || faces[start].outside.is_empty() {
            continue;
        }
        let pi = *faces[start]
            .outside
            .iter()
            .max_by(|&&a, &&b| {
                let f = &faces[start];
                f.distance(&points[a]).total_cmp(&f.distance(&points[b])).then(b.cmp(&a))
            })
            .unwrap();
        let p = points[pi];

        let mut visible = vec![start];
        faces[start].alive = false;
        let mut horizon = Vec::new();
        let mut i = 0;
        while i < visible.len() {
            let v = faces[visible[i]].v;
            for k in 0..3 {
                let (a, b) = (v[k], v[(k + 1) % 3]);
                match edges.get(&(b, a)) {
                    Some(&across) if !faces[across].alive => {}
                    Some(&across) if faces[across].distance(&p) > eps => {
                        faces[across].alive = false;
                        visible.push(across);
                    }
                    _ => horizon.push((a, b)),
                }
            }
            i += 1;
        }

        let mut orphans = Vec::new();
        for &fi in &visible {
            orphans.append(&mut faces[fi].outside);
            let v = faces[fi].v;
            for k in 0..3 {
                edges.remove(&(v[k], v[(k + 1) % 3]));
            }
        }
        let mut created = Vec::with_capacity(horizon.len());
        for (a, b) in horizon {
            let fi = faces.len();
            faces.push(Face::new([a, b, pi], points));
            edges.insert((a, b), fi);
            edges.insert((b, pi), fi);
            edges.insert((pi, a), fi);
            created.push(fi);
        }
        for q in orphans.into_iter().filter(|&q| q != pi) {
            assign(&mut faces, &created, q);
        }
        pending.extend(created.iter().rev());
    }

    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut out_faces = Vec::new();
    for f in faces.iter().filter(|f| f.alive) {
        let tri = f.v.map(|i| {
            *remap.entry(i).or_insert_with(|| {
                vertices.push(points[i]);
                vertices.len() - 1
            })
        });
        out_faces.push(tri);
    }
    ConvexHull {
        vertices,
        faces: out_faces,
        dimension: HullDimension::Solid,
    }
}

fn planar_hull(points: &[Vector3<f64>], origin: Vector3<f64>, e1: Vector3<f64>, n: Vector3<f64>) -> ConvexHull {
    let e2 = n.cross(&e1);
    let mut uv: Vec<(f64, f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = p - origin;
            (d.dot(&e1), d.dot(&e2), i)
        })
        .collect();
    uv.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    uv.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    let cross = |o: &(f64, f64, usize), a: &(f64, f64, usize), b: &(f64, f64, usize)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    // Andrew's monotone chain
    let mut hull: Vec<(f64, f64, usize)> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64, usize)>> = if pass == 0 {
            Box::new(uv.iter())
        } else {
            Box::new(uv.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    ConvexHull {
        vertices: hull.iter().map(|&(_, _, i)| points[i]).collect(),
        faces: vec![],
        dimension: HullDimension::Planar,
    }
}
