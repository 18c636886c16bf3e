use proptest::prelude::*;
use pwe_core::geometry::*;

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

#[test]
fn box_room_has_six_inward_surfaces() {
    let fp = Floorplan::box_room(4.0, 3.0, 2.0, [true; 6]).unwrap();
    assert_eq!(fp.surfaces.len(), 6);
    let c = v(2.0, 1.5, 1.0);
    for s in &fp.surfaces {
        let mid = s.point_at(0.5, 0.5);
        assert!((c - mid).dot(s.normal) > 0.0, "normal must face the room interior");
    }
    let areas: f64 = fp.surfaces.iter().map(|s| s.area()).sum();
    assert!((areas - 2.0 * (12.0 + 8.0 + 6.0)).abs() < 1e-12);
}

#[test]
fn ray_hits_ceiling_from_below() {
    let fp = Floorplan::box_room(4.0, 4.0, 3.0, [true; 6]).unwrap();
    let h = ray_hit(v(1.0, 1.0, 1.0), v(0.0, 0.0, 1.0), &fp).unwrap();
    assert_eq!(h.surface, 1);
    assert!((h.distance - 2.0).abs() < 1e-12);
    assert!((h.point.z - 3.0).abs() < 1e-12);
}

#[test]
fn thin_wall_resolves_to_the_facing_side() {
    let a = Surface::axis_aligned(v(2.0, 0.0, 0.0), v(2.0, 4.0, 3.0), true, true).unwrap();
    let b = Surface::axis_aligned(v(2.0, 0.0, 0.0), v(2.0, 4.0, 3.0), false, true).unwrap();
    let mut fp = Floorplan::box_room(4.0, 4.0, 3.0, [true; 6]).unwrap();
    fp.surfaces.push(a);
    fp.surfaces.push(b);
    let h = ray_hit(v(1.0, 2.0, 1.0), v(1.0, 0.0, 0.0), &fp).unwrap();
    assert!(fp.surfaces[h.surface].normal.x < 0.0);
    let h = ray_hit(v(3.0, 2.0, 1.0), v(-1.0, 0.0, 0.0), &fp).unwrap();
    assert!(fp.surfaces[h.surface].normal.x > 0.0);
}

#[test]
fn corner_hit_catches_edge_reflections() {
    let fp = Floorplan::box_room(4.0, 4.0, 3.0, [true; 6]).unwrap();
    // At the ceiling/wall edge, heading into the y=4 wall.
    let origin = v(2.0, 4.0, 3.0);
    let dir = v(0.0, 1.0, -1.0).normalized().unwrap();
    let h = surface_hit(origin, dir, &fp, Some(v(0.0, 0.0, -1.0))).unwrap();
    assert_eq!(h.distance, 0.0);
    assert!(fp.surfaces[h.surface].normal.y < 0.0);
}

#[test]
fn segment_occlusion_by_internal_wall() {
    let mut fp = Floorplan::box_room(4.0, 4.0, 3.0, [true; 6]).unwrap();
    fp.surfaces.push(Surface::axis_aligned(v(2.0, 0.0, 0.0), v(2.0, 2.0, 3.0), true, true).unwrap());
    assert!(fp.segment_occluded(v(1.0, 1.0, 1.0), v(3.0, 1.0, 1.0)));
    assert!(!fp.segment_occluded(v(1.0, 3.0, 1.0), v(3.0, 3.0, 1.0)));
}

#[test]
fn specular_reflection_flips_normal_component() {
    let r = specular_reflect(v(1.0, -1.0, 0.0), v(0.0, 1.0, 0.0));
    assert_eq!(r, v(1.0, 1.0, 0.0));
}

#[test]
fn trajectory_sampling_hits_corners() {
    let t = Trajectory::new(vec![v(0.0, 0.0, 1.0), v(1.0, 0.0, 1.0), v(1.0, 0.5, 1.0)]).unwrap();
    let s = t.sample(0.125);
    assert_eq!(s.len(), 8 + 4 + 1);
    assert_eq!(s[8], v(1.0, 0.0, 1.0));
    assert!((t.length() - 1.5).abs() < 1e-12);
}

#[test]
fn malformed_trajectory_rejected() {
    assert!(Trajectory::new(vec![v(0.0, 0.0, 0.0)]).is_err());
    assert!(Trajectory::new(vec![v(0.0, 0.0, 0.0), v(0.0, 0.0, 0.0)]).is_err());
}

#[test]
fn perpendicular_link_has_zero_deviation() {
    let t = Trajectory::new(vec![v(0.0, 0.0, 1.0), v(10.0, 0.0, 1.0)]).unwrap();
    let at = v(5.0, 0.0, 1.0);
    let d = deviation_from_perpendicular(at, v(5.0, 0.0, 3.0), &t, at).unwrap();
    assert!(d.abs() < 1e-12);
    // Link tilted 45 degrees along the motion.
    let d = deviation_from_perpendicular(at, v(7.0, 0.0, 3.0), &t, at).unwrap();
    assert!((d - 45.0).abs() < 1e-9);
    assert!(deviation_from_perpendicular(at, at, &t, at).is_err());
}

#[test]
fn invalid_sphere_radius() {
    assert!(Sphere::new(Vec3::ZERO, 0.0).is_err());
    assert!(Sphere::new(Vec3::ZERO, f64::NAN).is_err());
}

fn coord() -> impl Strategy<Value = f64> {
    -5.0..5.0f64
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (coord(), coord(), coord()).prop_map(|(x, y, z)| v(x, y, z))
}

proptest! {
    #[test]
    fn segment_sphere_matches_sampled_distance(a in vec3(), b in vec3(), c in vec3(), r in 0.1..2.0f64) {
        prop_assume!(a.distance(b) > 1e-3);
        let s = Sphere::new(c, r).unwrap();
        // Dense sampling oracle for the closest approach.
        let n = 4000;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let p = a + (b - a) * (i as f64 / n as f64);
            best = best.min(p.distance(c));
        }
        let step = a.distance(b) / n as f64;
        if best < r - step {
            prop_assert!(segment_intersects_sphere(a, b, &s));
        }
        if best > r + step {
            prop_assert!(!segment_intersects_sphere(a, b, &s));
        }
    }

    #[test]
    fn reflection_preserves_length_and_is_involutive(d in vec3(), n in vec3()) {
        let n = match n.normalized() { Some(n) => n, None => return Ok(()) };
        let r = specular_reflect(d, n);
        prop_assert!((r.norm() - d.norm()).abs() < 1e-9);
        let back = specular_reflect(r, n);
        prop_assert!((back - d).norm() < 1e-9);
        prop_assert!((r.dot(n) + d.dot(n)).abs() < 1e-9);
    }

    #[test]
    fn ray_hit_point_lies_on_reported_surface(o in (0.1..3.9f64, 0.1..3.9f64, 0.1..2.9f64), d in vec3()) {
        let dir = match d.normalized() { Some(x) => x, None => return Ok(()) };
        let fp = Floorplan::box_room(4.0, 4.0, 3.0, [true; 6]).unwrap();
        let origin = v(o.0, o.1, o.2);
        let h = ray_hit(origin, dir, &fp).expect("closed room");
        let s = &fp.surfaces[h.surface];
        prop_assert!((h.point - s.origin).dot(s.normal).abs() < 1e-9);
        prop_assert!((origin + dir * h.distance - h.point).norm() < 1e-9);
        prop_assert!(dir.dot(s.normal) < 0.0);
    }

    #[test]
    fn deviation_bounded(a in vec3(), b in vec3(), w in vec3()) {
        prop_assume!(a.distance(b) > 1e-6 && w.norm() > 1e-3);
        let t = Trajectory::new(vec![Vec3::ZERO, w]).unwrap();
        let d = deviation_from_perpendicular(a, b, &t, Vec3::ZERO).unwrap();
        prop_assert!((0.0..=90.0).contains(&d));
        let rev = deviation_from_perpendicular(b, a, &t, Vec3::ZERO).unwrap();
        prop_assert!((d - rev).abs() < 1e-9);
    }
}
