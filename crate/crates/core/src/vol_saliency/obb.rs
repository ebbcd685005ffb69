//! Oriented bounding boxes from hull vertices.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use super::hull::ConvexHull;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientedBoundingBox {
    pub center: Vector3<f64>,
    /// Columns are the box axes; a proper rotation.
    pub axes: Matrix3<f64>,
    /// Half-widths along each axis, meters.
    pub extents: Vector3<f64>,
}

impl OrientedBoundingBox {
    pub fn volume(&self) -> f64 {
        8.0 * self.extents.x * self.extents.y * self.extents.z
    }

    /// Largest amount by which `p` sticks out of the box along any axis.
    pub fn excess(&self, p: &Vector3<f64>) -> f64 {
        let local = self.axes.transpose() * (p - self.center);
        (0..3)
            .map(|k| local[k].abs() - self.extents[k])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, p: &Vector3<f64>, tolerance: f64) -> bool {
        self.excess(p) <= tolerance
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        std::array::from_fn(|i| {
            let s = Vector3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            self.center + self.axes * s.component_mul(&self.extents)
        })
    }
}

/// Tight box around `points` in the frame given by the columns of `axes`.
pub fn fit_box(points: &[Vector3<f64>], axes: Matrix3<f64>) -> OrientedBoundingBox {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        let local = axes.transpose() * p;
        lo = lo.inf(&local);
        hi = hi.sup(&local);
    }
    OrientedBoundingBox {
        center: axes * ((lo + hi) * 0.5),
        axes,
        extents: (hi - lo) * 0.5,
    }
}

fn right_handed(mut axes: Matrix3<f64>) -> Matrix3<f64> {
    if axes.determinant() < 0.0 {
        axes.set_column(2, &(-axes.column(2)));
    }
    axes
}

/// Principal axes of `points`, ordered by decreasing variance.
pub fn principal_axes(points: &[Vector3<f64>]) -> Matrix3<f64> {
    let n = points.len().max(1) as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let cov = points.iter().fold(Matrix3::zeros(), |a, p| {
        let d = p - centroid;
        a + d * d.transpose()
    }) / n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    right_handed(Matrix3::from_columns(&order.map(|i| eig.eigenvectors.column(i).into_owned())))
}

/// The plain PCA box: axes are the principal directions of the hull vertices.
pub fn pca_obb(hull: &ConvexHull) -> OrientedBoundingBox {
    fit_box(&hull.vertices, principal_axes(&hull.vertices))
}

/// Frames flush with a hull face and one of its edges.
fn face_frames(hull: &ConvexHull) -> Vec<Matrix3<f64>> {
    let mut frames = Vec::new();
    for f in &hull.faces {
        let v = f.map(|i| hull.vertices[i]);
        let n = (v[1] - v[0]).cross(&(v[2] - v[0]));
        if n.norm() == 0.0 {
            continue;
        }
        let n = n.normalize();
        for k in 0..3 {
            let e = v[(k + 1) % 3] - v[k];
            if e.norm() == 0.0 {
                continue;
            }
            let e = e.normalize();
            frames.push(Matrix3::from_columns(&[e, n.cross(&e), n]));
        }
    }
    frames
}

/// Box around the hull vertices. Starts from the PCA box and keeps whichever of it, the
/// axis-aligned box, and the face-flush boxes has the least volume, so the result never
/// exceeds the axis-aligned box and is stable when principal directions are degenerate.
pub fn obb_from_hull(hull: &ConvexHull) -> OrientedBoundingBox {
    let mut best = pca_obb(hull);
    let mut candidates = vec![Matrix3::identity()];
    candidates.extend(face_frames(hull));
    for axes in candidates {
        let b = fit_box(&hull.vertices, axes);
        // relative margin keeps the PCA box unless another is meaningfully smaller
        if b.volume() < best.volume() * (1.0 - 1e-12) {
            best = b;
        }
    }
    canonical(best)
}

/// Orders axes by decreasing extent, keeping a right-handed frame.
fn canonical(b: OrientedBoundingBox) -> OrientedBoundingBox {
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| b.extents[j].total_cmp(&b.extents[i]).then(i.cmp(&j)));
    let axes = Matrix3::from_columns(&order.map(|i| b.axes.column(i).into_owned()));
    let extents = Vector3::new(b.extents[order[0]], b.extents[order[1]], b.extents[order[2]]);
    OrientedBoundingBox {
        center: b.center,
        axes: right_handed(axes),
        extents,
    }
}

/// Volume of the axis-aligned box of `points`.
pub fn aabb_volume(points: &[Vector3<f64>]) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let d = hi - lo;
    d.x * d.y * d.z
}
