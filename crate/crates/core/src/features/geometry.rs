//! Back-projection of depth to an organized point cloud and lattice-neighborhood normals.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::rgbd_io::CameraIntrinsics;

/// Back-projects every pixel. Column pairs with `(ox, fx)` and row with `(oy, fy)`.
/// Positions at zero-depth pixels are zero and flagged invalid.
pub fn depth_to_pointcloud(
    depth: &Array2<f64>,
    intrinsics: &CameraIntrinsics,
) -> (Array2<Vector3<f64>>, Array2<bool>) {
    let positions = Array2::from_shape_fn(depth.dim(), |(row, col)| {
        let z = depth[[row, col]];
        if z > 0.0 {
            Vector3::new(
                (col as f64 - intrinsics.ox) * (z / intrinsics.fx),
                (row as f64 - intrinsics.oy) * (z / intrinsics.fy),
                z,
            )
        } else {
            Vector3::zeros()
        }
    });
    let valid = depth.mapv(|z| z > 0.0);
    (positions, valid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    /// Neighbors used in the local plane fit (the pixel itself included).
    pub k: usize,
    /// Side of the square pixel window searched for neighbors; odd.
    pub window: usize,
}

impl Default for NormalParams {
    fn default() -> Self {
        Self { k: 16, window: 7 }
    }
}

/// Normal of the least-squares plane through `points`: eigenvector of the smallest
/// eigenvalue of their covariance, not yet oriented.
pub fn plane_normal(points: &[Vector3<f64>]) -> (Vector3<f64>, [f64; 3]) {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let normal = eig.eigenvectors.column(order[0]).into_owned();
    let values = order.map(|i| eig.eigenvalues[i].max(0.0));
    (normal.normalize(), values)
}

/// Per-pixel normals from the `k` nearest (3-D distance) valid points inside the pixel
/// window. Normals face the camera (`n · p < 0`). Pixels with fewer than `k` valid
/// window neighbors are returned invalid.
pub fn estimate_normals(
    positions: &Array2<Vector3<f64>>,
    valid: &Array2<bool>,
    params: &NormalParams,
) -> Result<(Array2<Vector3<f64>>, Array2<bool>), FeatureError> {
    if params.k < 3 {
        return Err(FeatureError::InvalidParams(format!(
            "normal estimation needs k >= 3, got {}",
            params.k
        )));
    }
    let total_valid = valid.iter().filter(|v| **v).count();
    if total_valid < params.k {
        return Err(FeatureError::InsufficientPoints {
            valid: total_valid,
            k: params.k,
        });
    }
    let (h, w) = positions.dim();
    let half = (params.window / 2) as isize;

    let rows: Vec<Vec<Option<Vector3<f64>>>> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut candidates: Vec<(f64, usize, Vector3<f64>)> = Vec::new();
            let mut neighborhood: Vec<Vector3<f64>> = Vec::with_capacity(params.k);
            (0..w)
                .map(|col| {
                    if !valid[[row, col]] {
                        return None;
                    }
                    let p = positions[[row, col]];
                    candidates.clear();
                    for dr in -half..=half {
                        let r = row as isize + dr;
                        if r < 0 || r >= h as isize {
                            continue;
                        }
                        for dc in -half..=half {
                            let c = col as isize + dc;
                            if c < 0 || c >= w as isize {
                                continue;
                            }
                            let (r, c) = (r as usize, c as usize);
                            if valid[[r, c]] {
                                let q = positions[[r, c]];
                                candidates.push(((q - p).norm_squared(), r * w + c, q));
                            }
                        }
                    }
                    if candidates.len() < params.k {
                        return None;
                    }
                    candidates.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    neighborhood.clear();
                    neighborhood.extend(candidates.iter().take(params.k).map(|c| c.2));
                    let (mut n, _) = plane_normal(&neighborhood);
                    if n.dot(&p) > 0.0 {
                        n = -n;
                    }
                    Some(n)
                })
                .collect()
        })
        .collect();

    let mut normals = Array2::from_elem((h, w), Vector3::zeros());
    let mut normal_valid = Array2::from_elem((h, w), false);
    for (row, cols) in rows.into_iter().enumerate() {
        for (col, n) in cols.into_iter().enumerate() {
            if let Some(n) = n {
                normals[[row, col]] = n;
                normal_valid[[row, col]] = true;
            }
        }
    }
    Ok((normals, normal_valid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(50.0, 50.0, 16.0, 12.0)
    }

    #[test]
    fn principal_point_and_unit_offset() {
        let mut depth = Array2::from_elem((24, 32), 2.0);
        depth[[3, 4]] = 0.0;
        let (p, v) = depth_to_pointcloud(&depth, &intr());
        assert_eq!(p[[12, 16]], Vector3::new(0.0, 0.0, 2.0));
        assert!(!v[[3, 4]]);
        assert!(v[[0, 0]]);

        let intr = CameraIntrinsics::new(3.0, 3.0, 2.0, 2.0);
        let depth = Array2::from_elem((6, 6), 1.0);
        let (p, _) = depth_to_pointcloud(&depth, &intr);
        assert_eq!(p[[2, 5]].x, 1.0);
        assert_eq!(p[[2, 5]].y, 0.0);
    }

    #[test]
    fn pointcloud_is_linear_in_depth() {
        let depth = Array2::from_shape_fn((8, 9), |(r, c)| 0.5 + 0.1 * (r * 9 + c) as f64);
        let (p1, _) = depth_to_pointcloud(&depth, &intr());
        let (p2, _) = depth_to_pointcloud(&depth.mapv(|d| d * 4.0), &intr());
        for (a, b) in p1.iter().zip(p2.iter()) {
            assert_eq!(a * 4.0, *b);
        }
    }

    #[test]
    fn fronto_parallel_plane_faces_camera() {
        let depth = Array2::from_elem((24, 32), 1.5);
        let (p, v) = depth_to_pointcloud(&depth, &intr());
        let (n, nv) = estimate_normals(&p, &v, &NormalParams::default()).unwrap();
        for ((nn, ok), _) in n.iter().zip(nv.iter()).zip(p.iter()) {
            assert!(*ok);
            assert!((nn - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-6, "{nn:?}");
        }
    }

    #[test]
    fn side_plane_normal_points_toward_camera() {
        // plane x = 0.7 seen from the origin: columns right of the principal point
        let (h, w) = (24, 32);
        let intr = intr();
        let depth = Array2::from_shape_fn((h, w), |(_, c)| {
            let u = c as f64 - intr.ox;
            if u > 0.5 {
                0.7 * intr.fx / u
            } else {
                0.0
            }
        });
        let (p, v) = depth_to_pointcloud(&depth, &intr);
        let (n, nv) = estimate_normals(&p, &v, &NormalParams::default()).unwrap();
        let mut checked = 0;
        for (nn, ok) in n.iter().zip(nv.iter()) {
            if *ok {
                assert!((nn - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-6, "{nn:?}");
                assert!((nn.norm() - 1.0).abs() < 1e-6);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn too_few_points() {
        let mut depth = Array2::from_elem((8, 8), 0.0);
        depth[[0, 0]] = 1.0;
        let (p, v) = depth_to_pointcloud(&depth, &intr());
        assert!(matches!(
            estimate_normals(&p, &v, &NormalParams::default()),
            Err(FeatureError::InsufficientPoints { valid: 1, k: 16 })
        ));
    }
}
