//! Small fixed-size vector helpers used throughout the geometry code.

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_sq(a: Vec3) -> f64 {
    dot(a, a)
}

#[inline]
pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub fn dist_sq(a: Vec3, b: Vec3) -> f64 {
    norm_sq(sub(a, b))
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n == 0.0 {
        a
    } else {
        scale(a, 1.0 / n)
    }
}

#[inline]
pub fn lerp(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Exact distance from a point to a triangle (Ericson, Real-Time Collision
/// Detection, closest-point-on-triangle).
pub fn point_triangle_dist_sq(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);

    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return norm_sq(ap);
    }

    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return norm_sq(bp);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return dist_sq(p, add(a, scale(ab, v)));
    }

    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return norm_sq(cp);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return dist_sq(p, add(a, scale(ac, w)));
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return dist_sq(p, add(b, scale(sub(c, b), w)));
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    dist_sq(p, add(a, add(scale(ab, v), scale(ac, w))))
}

/// Moller-Trumbore ray/triangle intersection. Returns the ray parameter t
/// for hits with t > eps, or None.
pub fn ray_triangle(orig: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<f64> {
    const EPS: f64 = 1e-13;
    let ab = sub(b, a);
    let ac = sub(c, a);
    let pvec = cross(dir, ac);
    let det = dot(ab, pvec);
    if det.abs() < EPS {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = sub(orig, a);
    let u = dot(tvec, pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = cross(tvec, ab);
    let v = dot(dir, qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = dot(ac, qvec) * inv_det;
    if t > EPS {
        Some(t)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_distance_interior_and_vertex() {
        let a = [0.0, 0.0, 0.0];
        let b = [1.0, 0.0, 0.0];
        let c = [0.0, 1.0, 0.0];
        // above the interior
        let d = point_triangle_dist_sq([0.25, 0.25, 1.0], a, b, c);
        assert!((d - 1.0).abs() < 1e-12);
        // beyond vertex b
        let d = point_triangle_dist_sq([2.0, 0.0, 0.0], a, b, c);
        assert!((d - 1.0).abs() < 1e-12);
        // beyond edge bc
        let d = point_triangle_dist_sq([1.0, 1.0, 0.0], a, b, c);
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ray_hits_triangle() {
        let a = [0.0, 0.0, 1.0];
        let b = [1.0, 0.0, 1.0];
        let c = [0.0, 1.0, 1.0];
        let t = ray_triangle([0.2, 0.2, 0.0], [0.0, 0.0, 1.0], a, b, c);
        assert!((t.unwrap() - 1.0).abs() < 1e-12);
        assert!(ray_triangle([2.0, 2.0, 0.0], [0.0, 0.0, 1.0], a, b, c).is_none());
    }
}
