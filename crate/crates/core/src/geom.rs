//! Planar geometry shared by the footprint, region and metric stages.
//!
//! Coordinates are meters in a projected CRS. Rings are stored open (the
//! closing vertex is implied); exterior rings run counterclockwise and holes
//! clockwise.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    /// Counterclockwise perpendicular.
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Option<Point2> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn rotated(self, angle_rad: f64) -> Point2 {
        let (s, c) = angle_rad.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// A directed line segment with distinct endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub fn new(a: Point2, b: Point2) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Geometry("segment endpoint is not finite".into()));
        }
        if a == b || a.dist(b) == 0.0 {
            return Err(Error::Geometry("segment has zero length".into()));
        }
        Ok(Self { a, b })
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }

    pub fn direction(&self) -> Point2 {
        (self.b - self.a) * (1.0 / self.length())
    }

    pub fn midpoint(&self) -> Point2 {
        (self.a + self.b) * 0.5
    }
}

/// Distance from `p` to the closed segment `a`-`b` (degenerate segments allowed).
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Shoelace area of an open ring; positive when counterclockwise.
pub fn ring_signed_area(ring: &[Point2]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    // Shift to the first vertex to limit cancellation with projected coordinates.
    let o = ring[0];
    let mut acc = 0.0;
    for i in 0..ring.len() {
        let p = ring[i] - o;
        let q = ring[(i + 1) % ring.len()] - o;
        acc += p.cross(q);
    }
    0.5 * acc
}

pub fn ring_perimeter(ring: &[Point2]) -> f64 {
    (0..ring.len())
        .map(|i| ring[i].dist(ring[(i + 1) % ring.len()]))
        .sum()
}

/// Drops an explicit closing vertex and consecutive duplicates.
pub fn open_ring(ring: &[Point2]) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::with_capacity(ring.len());
    for &p in ring {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    while out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

/// Ring edges as index pairs `(i, i+1 mod n)`.
pub fn ring_edges(ring: &[Point2]) -> impl Iterator<Item = (Point2, Point2)> + '_ {
    (0..ring.len()).map(move |i| (ring[i], ring[(i + 1) % ring.len()]))
}

/// Even-odd point in ring test. Points on the boundary may go either way.
pub fn point_in_ring(p: Point2, ring: &[Point2]) -> bool {
    let mut inside = false;
    let n = ring.len();
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (ring[i], ring[j]);
        if (pi.y > p.y) != (pj.y > p.y) {
            let x = pj.x + (p.y - pj.y) * (pi.x - pj.x) / (pi.y - pj.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    exterior: Vec<Point2>,
    holes: Vec<Vec<Point2>>,
}

impl Polygon {
    /// Builds a polygon, normalizing ring orientation and dropping closing vertices.
    pub fn new(exterior: Vec<Point2>, holes: Vec<Vec<Point2>>) -> Result<Self> {
        let mut exterior = open_ring(&exterior);
        check_ring(&exterior)?;
        if ring_signed_area(&exterior) < 0.0 {
            exterior.reverse();
        }
        let mut clean_holes = Vec::with_capacity(holes.len());
        for h in holes {
            let mut h = open_ring(&h);
            check_ring(&h)?;
            if ring_signed_area(&h) > 0.0 {
                h.reverse();
            }
            clean_holes.push(h);
        }
        let poly = Self {
            exterior,
            holes: clean_holes,
        };
        if poly.area() <= 0.0 {
            return Err(Error::Geometry("polygon area is not positive".into()));
        }
        Ok(poly)
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(
            vec![
                Point2::new(x0, y0),
                Point2::new(x1, y0),
                Point2::new(x1, y1),
                Point2::new(x0, y1),
            ],
            vec![],
        )
    }

    pub fn exterior(&self) -> &[Point2] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<Point2>] {
        &self.holes
    }

    pub fn area(&self) -> f64 {
        polygon_area(self)
    }

    pub fn contains(&self, p: Point2) -> bool {
        point_in_ring(p, &self.exterior) && !self.holes.iter().any(|h| point_in_ring(p, h))
    }

    pub fn exterior_segments(&self) -> Vec<Segment> {
        ring_edges(&self.exterior)
            .filter_map(|(a, b)| Segment::new(a, b).ok())
            .collect()
    }

    pub fn hole_segments(&self) -> Vec<Segment> {
        self.holes
            .iter()
            .flat_map(|h| ring_edges(h).filter_map(|(a, b)| Segment::new(a, b).ok()))
            .collect()
    }

    pub fn all_segments(&self) -> Vec<Segment> {
        let mut s = self.exterior_segments();
        s.extend(self.hole_segments());
        s
    }

    pub fn bbox(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.exterior {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polygon {
        let t = Point2::new(dx, dy);
        Polygon {
            exterior: self.exterior.iter().map(|&p| p + t).collect(),
            holes: self
                .holes
                .iter()
                .map(|h| h.iter().map(|&p| p + t).collect())
                .collect(),
        }
    }

    /// Applies `f` to every vertex; orientation is re-normalized afterwards.
    pub fn map_points(&self, mut f: impl FnMut(Point2) -> Point2) -> Result<Polygon> {
        Polygon::new(
            self.exterior.iter().map(|&p| f(p)).collect(),
            self.holes
                .iter()
                .map(|h| h.iter().map(|&p| f(p)).collect())
                .collect(),
        )
    }

    /// True if no two non-adjacent edges of any ring touch or cross.
    pub fn is_simple(&self) -> bool {
        let rings: Vec<&[Point2]> = std::iter::once(self.exterior.as_slice())
            .chain(self.holes.iter().map(|h| h.as_slice()))
            .collect();
        rings.iter().all(|r| ring_is_simple(r))
    }
}

fn check_ring(ring: &[Point2]) -> Result<()> {
    if ring.iter().any(|p| !p.is_finite()) {
        return Err(Error::Geometry("ring has non-finite coordinates".into()));
    }
    let mut distinct: Vec<Point2> = Vec::new();
    for p in ring {
        if !distinct.contains(p) {
            distinct.push(*p);
            if distinct.len() >= 3 {
                return Ok(());
            }
        }
    }
    Err(Error::Geometry(
        "ring needs at least 3 distinct vertices".into(),
    ))
}

fn ring_is_simple(ring: &[Point2]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if j == i + 1 {
                if folds_back(a, b, d) {
                    return false;
                }
                continue;
            }
            if i == 0 && j == n - 1 {
                if folds_back(b, a, c) {
                    return false;
                }
                continue;
            }
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Adjacent edges u-s and s-w overlap when they are collinear and point the same way from s.
fn folds_back(u: Point2, s: Point2, w: Point2) -> bool {
    let (p, q) = (u - s, w - s);
    p.cross(q) == 0.0 && p.dot(q) > 0.0
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed segment intersection (touching counts).
pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Signed area: exterior (positive when counterclockwise) minus hole areas.
pub fn polygon_area(p: &Polygon) -> f64 {
    let ext = ring_signed_area(&p.exterior);
    let holes: f64 = p.holes.iter().map(|h| ring_signed_area(h).abs()).sum();
    ext.signum() * (ext.abs() - holes)
}

fn ring_moments(ring: &[Point2]) -> (f64, Point2) {
    let o = ring[0];
    let mut a = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for (p, q) in ring_edges(ring) {
        let (p, q) = (p - o, q - o);
        let c = p.cross(q);
        a += c;
        cx += (p.x + q.x) * c;
        cy += (p.y + q.y) * c;
    }
    let area = 0.5 * a;
    if area == 0.0 {
        return (0.0, o);
    }
    (area, Point2::new(cx / (6.0 * area), cy / (6.0 * area)) + o)
}

/// Area-weighted centroid with holes removed.
pub fn polygon_centroid(p: &Polygon) -> Result<Point2> {
    let (ea, ec) = ring_moments(&p.exterior);
    let mut total = ea.abs();
    let mut acc = ec * ea.abs();
    for h in &p.holes {
        let (ha, hc) = ring_moments(h);
        total -= ha.abs();
        acc = acc - hc * ha.abs();
    }
    let scale = ring_perimeter(&p.exterior).powi(2).max(f64::MIN_POSITIVE);
    if total <= 1e-12 * scale {
        return Err(Error::Geometry("centroid of a degenerate polygon".into()));
    }
    Ok(acc * (1.0 / total))
}

/// Douglas-Peucker simplification of a closed ring.
///
/// The ring may be given with or without its closing vertex; the result is
/// open. Output vertices are a subsequence of the input, every dropped vertex
/// lies within `epsilon` of the simplified ring, and at least 3 vertices are
/// kept.
pub fn simplify_dp(ring: &[Point2], epsilon: f64) -> Vec<Point2> {
    let ring = open_ring(ring);
    let n = ring.len();
    if n <= 3 || epsilon < 0.0 {
        return ring;
    }
    // Split at vertex 0 and the vertex farthest from it.
    let far = (1..n)
        .max_by(|&i, &j| {
            ring[0]
                .dist(ring[i])
                .partial_cmp(&ring[0].dist(ring[j]))
                .unwrap()
        })
        .unwrap();
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[far] = true;
    dp_chain(&ring, 0, far, epsilon, &mut keep);
    dp_chain(&ring, far, n, epsilon, &mut keep);

    // The split vertex itself may be removable.
    let kept: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    if kept.len() > 3 {
        let prev = ring[kept[kept.len() - 1]];
        let next = ring[kept[1]];
        if covers_span(
            &ring,
            kept[kept.len() - 1],
            n + kept[1],
            prev,
            next,
            epsilon,
        ) {
            keep[0] = false;
        }
    }
    let mut out: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    if out.len() < 3 || ring_signed_area(&out.iter().map(|&i| ring[i]).collect::<Vec<_>>()) == 0.0 {
        out = min_triangle(&ring, &out);
    }
    out.into_iter().map(|i| ring[i]).collect()
}

/// Every vertex strictly between `from` and `to` (indices modulo n) lies within eps of a-b.
fn covers_span(ring: &[Point2], from: usize, to: usize, a: Point2, b: Point2, eps: f64) -> bool {
    let n = ring.len();
    ((from + 1)..to).all(|k| point_segment_distance(ring[k % n], a, b) <= eps)
}

fn dp_chain(ring: &[Point2], first: usize, last: usize, eps: f64, keep: &mut [bool]) {
    let n = ring.len();
    let mut stack = vec![(first, last)];
    while let Some((s, e)) = stack.pop() {
        if e <= s + 1 {
            continue;
        }
        let (a, b) = (ring[s % n], ring[e % n]);
        let mut best = (0.0, s);
        for k in (s + 1)..e {
            let d = point_segment_distance(ring[k % n], a, b);
            if d > best.0 {
                best = (d, k);
            }
        }
        if best.0 > eps {
            keep[best.1 % n] = true;
            stack.push((s, best.1));
            stack.push((best.1, e));
        }
    }
}

/// Largest-area triangle anchored on retained vertices, falling back to the whole ring.
fn min_triangle(ring: &[Point2], kept: &[usize]) -> Vec<usize> {
    let n = ring.len();
    let a = kept.first().copied().unwrap_or(0);
    let b = (0..n)
        .max_by(|&i, &j| {
            ring[a]
                .dist(ring[i])
                .partial_cmp(&ring[a].dist(ring[j]))
                .unwrap()
        })
        .unwrap();
    let c = (0..n)
        .max_by(|&i, &j| {
            let di = orient(ring[a], ring[b], ring[i]).abs();
            let dj = orient(ring[a], ring[b], ring[j]).abs();
            di.partial_cmp(&dj).unwrap()
        })
        .unwrap();
    let mut idx = vec![a, b, c];
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// True iff the acute angle between the segment directions is at most `angle_tol_deg`.
pub fn segments_approx_parallel(e1: &Segment, e2: &Segment, angle_tol_deg: f64) -> bool {
    acute_angle_deg(e1, e2) <= angle_tol_deg
}

pub fn acute_angle_deg(e1: &Segment, e2: &Segment) -> f64 {
    let (u, v) = (e1.b - e1.a, e2.b - e2.a);
    u.cross(v).abs().atan2(u.dot(v).abs()).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Point2,
    pub axis: Point2,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn new(center: Point2, axis: Point2, half_length: f64, half_width: f64) -> Result<Self> {
        let axis = axis
            .normalized()
            .ok_or_else(|| Error::Geometry("rectangle axis has zero length".into()))?;
        if !(half_length > 0.0 && half_width > 0.0) || !center.is_finite() {
            return Err(Error::Geometry(format!(
                "rectangle extents must be positive (got {half_length} x {half_width})"
            )));
        }
        Ok(Self {
            center,
            axis,
            half_length,
            half_width,
        })
    }

    pub fn normal(&self) -> Point2 {
        self.axis.perp()
    }

    /// Rectangle-local (along, across) coordinates.
    pub fn local(&self, p: Point2) -> (f64, f64) {
        let d = p - self.center;
        (d.dot(self.axis), d.dot(self.normal()))
    }

    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        let (u, v) = self.local(p);
        u.abs() <= self.half_length + tol && v.abs() <= self.half_width + tol
    }

    /// Counterclockwise corners.
    pub fn corners(&self) -> [Point2; 4] {
        let (a, n) = (
            self.axis * self.half_length,
            self.normal() * self.half_width,
        );
        let c = self.center;
        [c - a - n, c + a - n, c + a + n, c - a + n]
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_length * self.half_width
    }

    /// The same rectangle pulled in by `eps` on every side (clamped to stay positive).
    pub fn shrunk(&self, eps: f64) -> OrientedRect {
        OrientedRect {
            half_length: (self.half_length - eps).max(self.half_length * 1e-6),
            half_width: (self.half_width - eps).max(self.half_width * 1e-6),
            ..*self
        }
    }

    pub fn to_polygon(&self) -> Result<Polygon> {
        Polygon::new(self.corners().to_vec(), vec![])
    }
}

/// Center rectangle spanned by two roughly parallel edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeGap {
    pub rect: OrientedRect,
    pub separation: f64,
    pub overlap_len: f64,
}

/// Builds the rectangle between two approximately parallel edges.
///
/// The axis is the mean edge direction (second edge flipped when
/// anti-parallel). Returns `None` when the projected overlap is shorter than
/// `min_overlap`, when the support lines cross inside the overlap, or when the
/// separation vanishes.
pub fn rect_between_edges(e1: &Segment, e2: &Segment, min_overlap: f64) -> Option<EdgeGap> {
    let u1 = e1.direction();
    let mut u2 = e2.direction();
    if u1.dot(u2) < 0.0 {
        u2 = -u2;
    }
    let axis = (u1 + u2).normalized()?;
    let normal = axis.perp();
    let origin = e1.a;
    let along = |p: Point2| (p - origin).dot(axis);
    let across = |p: Point2| (p - origin).dot(normal);

    let (t1a, t1b) = (along(e1.a), along(e1.b));
    let (t2a, t2b) = (along(e2.a), along(e2.b));
    let lo = t1a.min(t1b).max(t2a.min(t2b));
    let hi = t1a.max(t1b).min(t2a.max(t2b));
    let overlap = hi - lo;
    if !(overlap > 0.0) || overlap < min_overlap {
        return None;
    }

    // Across-axis offset of an edge's support line at along-position t.
    let line_at = |e: &Segment, ta: f64, tb: f64, t: f64| {
        let s = (t - ta) / (tb - ta);
        let (na, nb) = (across(e.a), across(e.b));
        na + s * (nb - na)
    };
    let (n1lo, n1hi) = (line_at(e1, t1a, t1b, lo), line_at(e1, t1a, t1b, hi));
    let (n2lo, n2hi) = (line_at(e2, t2a, t2b, lo), line_at(e2, t2a, t2b, hi));
    let (s_lo, s_hi) = (n2lo - n1lo, n2hi - n1hi);
    if s_lo * s_hi < 0.0 {
        return None;
    }
    let separation = 0.5 * (s_lo + s_hi).abs();
    if !(separation > 1e-9) {
        return None;
    }
    let n_mid = 0.25 * (n1lo + n1hi + n2lo + n2hi);
    let t_mid = 0.5 * (lo + hi);
    let center = origin + axis * t_mid + normal * n_mid;
    let rect = OrientedRect::new(center, axis, 0.5 * overlap, 0.5 * separation).ok()?;
    Some(EdgeGap {
        rect,
        separation,
        overlap_len: overlap,
    })
}

/// True iff any segment touches or enters the closed rectangle.
pub fn rect_intersects_segments(r: &OrientedRect, edges: &[Segment]) -> bool {
    edges.iter().any(|s| rect_intersects_segment(r, s))
}

pub fn rect_intersects_segment(r: &OrientedRect, s: &Segment) -> bool {
    // Liang-Barsky clip in rectangle-local coordinates.
    let (u0, v0) = r.local(s.a);
    let (u1, v1) = r.local(s.b);
    let (du, dv) = (u1 - u0, v1 - v0);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [
        (-du, u0 + r.half_length),
        (du, r.half_length - u0),
        (-dv, v0 + r.half_width),
        (dv, r.half_width - v0),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}
