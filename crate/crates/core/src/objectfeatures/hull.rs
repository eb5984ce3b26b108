//! Convex hull of integer pixel centres and caliper measurements on it.

use alloc::vec::Vec;

#[allow(unused_imports)]
use crate::prelude::*;

pub type Pt = (i64, i64);

fn cross(o: Pt, a: Pt, b: Pt) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise hull without collinear vertices (monotone chain).
pub fn convex_hull(points: &[Pt]) -> Vec<Pt> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<Pt> = Vec::with_capacity(pts.len() + 1);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Inside-or-on test against a hull from [`convex_hull`], exact in integers.
pub fn hull_contains(hull: &[Pt], p: Pt) -> bool {
    match hull.len() {
        0 => false,
        1 => hull[0] == p,
        2 => {
            let (a, b) = (hull[0], hull[1]);
            cross(a, b, p) == 0
                && p.0 >= a.0.min(b.0)
                && p.0 <= a.0.max(b.0)
                && p.1 >= a.1.min(b.1)
                && p.1 <= a.1.max(b.1)
        }
        n => (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0),
    }
}

fn dist(a: Pt, b: Pt) -> f64 {
    let (dx, dy) = ((a.0 - b.0) as f64, (a.1 - b.1) as f64);
    (dx * dx + dy * dy).sqrt()
}

/// Largest distance between two hull vertices.
pub fn max_caliper(hull: &[Pt]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..hull.len() {
        for j in i + 1..hull.len() {
            best = best.max(dist(hull[i], hull[j]));
        }
    }
    best
}

/// Smallest caliper width; attained with one caliper flush to a hull edge.
pub fn min_caliper(hull: &[Pt]) -> f64 {
    let n = hull.len();
    if n < 3 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..n {
        let (a, b) = (hull[i], hull[(i + 1) % n]);
        let len = dist(a, b);
        let far = hull.iter().map(|&v| cross(a, b, v).abs()).max().unwrap_or(0) as f64 / len;
        best = best.min(far);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_hull() {
        let pts: Vec<Pt> = (0..5).flat_map(|x| (0..5).map(move |y| (x, y))).collect();
        let h = convex_hull(&pts);
        assert_eq!(h, [(0, 0), (4, 0), (4, 4), (0, 4)]);
        assert!(pts.iter().all(|&p| hull_contains(&h, p)));
        assert!(!hull_contains(&h, (5, 2)));
        assert_eq!(min_caliper(&h), 4.0);
        assert!((max_caliper(&h) - 32f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_hulls() {
        assert_eq!(convex_hull(&[(3, 3)]), [(3, 3)]);
        let seg = convex_hull(&[(0, 0), (2, 2), (1, 1)]);
        assert_eq!(seg, [(0, 0), (2, 2)]);
        assert!(hull_contains(&seg, (1, 1)));
        assert!(!hull_contains(&seg, (1, 0)));
        assert_eq!(min_caliper(&seg), 0.0);
    }
}
