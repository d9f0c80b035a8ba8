use crate::pc::Box3D;

/// Signed shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| poly[i][0] * poly[(i + 1) % n][1] - poly[(i + 1) % n][0] * poly[i][1])
        .sum::<f64>()
        * 0.5
}

/// Sutherland–Hodgman clip of `subject` against the convex counter-clockwise `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let (sp, sq) = (side(p), side(q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

/// Area of the overlap of two boxes' bird's-eye footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let poly = clip_convex(&a.bev_corners(), &b.bev_corners());
    if poly.len() < 3 {
        0.0
    } else {
        polygon_area(&poly).max(0.0)
    }
}

fn geometry_key(b: &Box3D) -> [u64; 7] {
    let v = [
        b.center[0],
        b.center[1],
        b.center[2],
        b.dims[0],
        b.dims[1],
        b.dims[2],
        b.yaw,
    ];
    v.map(|x| x.to_bits())
}

/// Full 3D intersection over union: footprint overlap times height overlap.
///
/// Exactly symmetric, since the operands are put in a canonical order before
/// clipping, and exactly 1 for identical geometry.
pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let (ka, kb) = (geometry_key(a), geometry_key(b));
    if ka == kb {
        return 1.0;
    }
    let (a, b) = if ka < kb { (a, b) } else { (b, a) };
    let (az0, az1) = a.z_range();
    let (bz0, bz1) = b.z_range();
    let dz = (az1.min(bz1) - az0.max(bz0)).max(0.0);
    if dz == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pc::ClassLabel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(c: [f64; 3], d: [f64; 3], yaw: f64) -> Box3D {
        Box3D::new(c, d, yaw, ClassLabel::Car).unwrap()
    }

    #[test]
    fn identity_and_disjoint() {
        let a = bx([1.0, 2.0, 0.5], [4.0, 2.0, 1.5], 0.7);
        assert_eq!(iou3d(&a, &a), 1.0);
        let far = bx([30.0, 2.0, 0.5], [4.0, 2.0, 1.5], 0.7);
        assert_eq!(iou3d(&a, &far), 0.0);
        let above = bx([1.0, 2.0, 5.0], [4.0, 2.0, 1.5], 0.7);
        assert_eq!(iou3d(&a, &above), 0.0);
    }

    #[test]
    fn shifted_unit_cubes() {
        let a = bx([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        let b = bx([0.5, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        assert!((iou3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_square_overlap() {
        // A unit square and its 45° rotation about the shared center overlap
        // in a regular octagon of area 2(√2 − 1).
        let a = bx([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        let b = bx(
            [0.0, 0.0, 0.0],
            [1.0, 1.0, 1.0],
            std::f64::consts::FRAC_PI_4,
        );
        let oct = 2.0 * (2f64.sqrt() - 1.0);
        assert!((bev_intersection_area(&a, &b) - oct).abs() < 1e-12);
        assert!((iou3d(&a, &b) - oct / (2.0 - oct)).abs() < 1e-12);
    }

    /// Monte-Carlo oracle: sample the bounding cube of both boxes.
    fn monte_carlo_iou(a: &Box3D, b: &Box3D, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for bb in [a, b] {
            for c in bb.bev_corners() {
                for k in 0..2 {
                    lo[k] = lo[k].min(c[k]);
                    hi[k] = hi[k].max(c[k]);
                }
            }
            let (z0, z1) = bb.z_range();
            lo[2] = lo[2].min(z0);
            hi[2] = hi[2].max(z1);
        }
        let (mut both, mut either) = (0usize, 0usize);
        for _ in 0..samples {
            let p = crate::pc::Point3::new(
                rng.random_range(lo[0]..hi[0]),
                rng.random_range(lo[1]..hi[1]),
                rng.random_range(lo[2]..hi[2]),
            );
            let (ia, ib) = (a.contains(&p), b.contains(&p));
            both += (ia && ib) as usize;
            either += (ia || ib) as usize;
        }
        if either == 0 {
            0.0
        } else {
            both as f64 / either as f64
        }
    }

    #[test]
    fn matches_monte_carlo_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let rand_box = |rng: &mut ChaCha8Rng| {
                bx(
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-0.3..0.3),
                    ],
                    [
                        rng.random_range(0.5..3.0),
                        rng.random_range(0.5..3.0),
                        rng.random_range(0.5..2.0),
                    ],
                    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                )
            };
            let a = rand_box(&mut rng);
            let b = rand_box(&mut rng);
            let exact = iou3d(&a, &b);
            let mc = monte_carlo_iou(&a, &b, 200_000, &mut rng);
            worst = worst.max((exact - mc).abs());
        }
        assert!(worst <= 5e-3, "worst deviation {worst}");
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (
            -5.0f64..5.0,
            -5.0f64..5.0,
            -1.0f64..1.0,
            0.2f64..4.0,
            0.2f64..4.0,
            0.2f64..3.0,
            -3.2f64..3.2,
        )
            .prop_map(|(x, y, z, l, w, h, yaw)| bx([x, y, z], [l, w, h], yaw))
    }

    proptest! {
        #[test]
        fn symmetric_bounded_and_scale_invariant(a in arb_box(), b in arb_box(), s in 0.1f64..10.0) {
            let ab = iou3d(&a, &b);
            prop_assert_eq!(ab, iou3d(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            let scale = |x: &Box3D| bx(x.center.map(|v| v * s), x.dims.map(|v| v * s), x.yaw);
            prop_assert!((ab - iou3d(&scale(&a), &scale(&b))).abs() <= 1e-9);
        }
    }
}
