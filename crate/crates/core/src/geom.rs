//! Small planar vector helpers. Positions and velocities are `[f64; 2]`.

pub type Vec2 = [f64; 2];

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist(a: Vec2, b: Vec2) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub fn is_finite(a: Vec2) -> bool {
    a[0].is_finite() && a[1].is_finite()
}

/// Scales `a` down so that its norm is at most `max`. Vectors already inside
/// the ball are returned untouched (bit-identical).
pub fn clamp_norm(a: Vec2, max: f64) -> Vec2 {
    let n = norm(a);
    if n <= max {
        a
    } else {
        scale(a, max / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_norm_keeps_short_vectors() {
        assert_eq!(clamp_norm([0.3, 0.4], 1.0), [0.3, 0.4]);
        let c = clamp_norm([3.0, 4.0], 1.0);
        assert!((norm(c) - 1.0).abs() < 1e-15);
        assert!((c[0] - 0.6).abs() < 1e-15);
    }
}
