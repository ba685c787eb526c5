//! Axis-aligned rectangles in page pixel units.

use serde::{Deserialize, Serialize};

/// Rectangle `[x0, y0, x1, y1]` with `x0 <= x1` and `y0 <= y1` (y grows downwards).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x0, r.y0, r.x1, r.y1]
    }
}

impl Rect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn is_well_formed(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite())
            && self.x0 <= self.x1
            && self.y0 <= self.y1
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) * 0.5, (self.y0 + self.y1) * 0.5)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn contains_center_of(&self, other: &Rect) -> bool {
        let (cx, cy) = other.center();
        self.contains_point(cx, cy)
    }

    /// Containment with an absolute slack on every side.
    pub fn contains_rect(&self, other: &Rect, slack: f64) -> bool {
        other.x0 >= self.x0 - slack
            && other.y0 >= self.y0 - slack
            && other.x1 <= self.x1 + slack
            && other.y1 <= self.y1 + slack
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let r = Rect::new(
            self.x0.max(other.x0),
            self.y0.max(other.y0),
            self.x1.min(other.x1),
            self.y1.min(other.y1),
        );
        (r.x0 < r.x1 && r.y0 < r.y1).then_some(r)
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        self.intersect(other).map_or(0.0, |r| r.area())
    }

    /// Smallest rectangle containing both.
    pub fn hull(&self, other: &Rect) -> Rect {
        Rect::new(
            self.x0.min(other.x0),
            self.y0.min(other.y0),
            self.x1.max(other.x1),
            self.y1.max(other.y1),
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Rect {
        Rect::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }

    pub fn scale(&self, s: f64) -> Rect {
        Rect::new(self.x0 * s, self.y0 * s, self.x1 * s, self.y1 * s)
    }

    /// Grow by `dx` horizontally and `dy` vertically on each side.
    pub fn expand(&self, dx: f64, dy: f64) -> Rect {
        Rect::new(self.x0 - dx, self.y0 - dy, self.x1 + dx, self.y1 + dy)
    }

    /// Euclidean gap between two rectangles, zero when they touch or overlap.
    pub fn gap(&self, other: &Rect) -> f64 {
        let dx = (other.x0 - self.x1).max(self.x0 - other.x1).max(0.0);
        let dy = (other.y0 - self.y1).max(self.y0 - other.y1).max(0.0);
        dx.hypot(dy)
    }

    /// Vertical gap only.
    pub fn vertical_gap(&self, other: &Rect) -> f64 {
        (other.y0 - self.y1).max(self.y0 - other.y1).max(0.0)
    }

    /// Length of the horizontal overlap of the two x-extents.
    pub fn x_overlap(&self, other: &Rect) -> f64 {
        (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0)
    }

    pub fn bounding(rects: impl IntoIterator<Item = Rect>) -> Option<Rect> {
        rects.into_iter().reduce(|a, b| a.hull(&b))
    }
}

/// Area of the union of `rects` restricted to `clip`.
///
/// Exact, by coordinate compression; quadratic in the number of rectangles,
/// which stays small at page scale.
pub fn union_area_within(rects: &[Rect], clip: &Rect) -> f64 {
    let clipped: Vec<Rect> = rects.iter().filter_map(|r| r.intersect(clip)).collect();
    union_area(&clipped)
}

pub fn union_area(rects: &[Rect]) -> f64 {
    let rects: Vec<&Rect> = rects.iter().filter(|r| r.area() > 0.0).collect();
    match rects.len() {
        0 => return 0.0,
        1 => return rects[0].area(),
        _ => {}
    }
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.x0, r.x1]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut total = 0.0;
    let mut spans: Vec<(f64, f64)> = Vec::with_capacity(rects.len());
    for w in xs.windows(2) {
        let (xa, xb) = (w[0], w[1]);
        spans.clear();
        spans.extend(
            rects
                .iter()
                .filter(|r| r.x0 <= xa && r.x1 >= xb)
                .map(|r| (r.y0, r.y1)),
        );
        if spans.is_empty() {
            continue;
        }
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut covered = 0.0;
        let (mut cur0, mut cur1) = spans[0];
        for &(s0, s1) in &spans[1..] {
            if s0 > cur1 {
                covered += cur1 - cur0;
                cur0 = s0;
                cur1 = s1;
            } else if s1 > cur1 {
                cur1 = s1;
            }
        }
        covered += cur1 - cur0;
        total += covered * (xb - xa);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_of_overlapping_squares() {
        let a = Rect::new(0.0, 0.0, 2.0, 2.0);
        let b = Rect::new(1.0, 1.0, 3.0, 3.0);
        assert!((union_area(&[a, b]) - 7.0).abs() < 1e-12);
        assert!((union_area(&[a, a]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn union_clipped() {
        let a = Rect::new(0.0, 0.0, 10.0, 1.0);
        let clip = Rect::new(5.0, 0.0, 20.0, 20.0);
        assert!((union_area_within(&[a], &clip) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn gaps() {
        let a = Rect::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(a.gap(&Rect::new(4.0, 5.0, 6.0, 6.0)), 5.0);
        assert_eq!(a.gap(&Rect::new(0.5, 0.5, 2.0, 2.0)), 0.0);
        assert_eq!(a.vertical_gap(&Rect::new(0.0, 3.0, 1.0, 4.0)), 2.0);
    }

    #[test]
    fn json_is_a_four_array() {
        let r: Rect = serde_json::from_str("[1,2,3,4]").unwrap();
        assert_eq!(r, Rect::new(1.0, 2.0, 3.0, 4.0));
        assert_eq!(serde_json::to_string(&r).unwrap(), "[1.0,2.0,3.0,4.0]");
    }
}
