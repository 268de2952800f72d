use crate::numeric::wrap_angle;

/// Piece of a planar route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Straight {
        length: f64,
    },
    /// Circular arc; positive `angle` turns left.
    Arc {
        radius: f64,
        angle: f64,
    },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } => length,
            Segment::Arc { radius, angle } => radius * angle.abs(),
        }
    }
}

/// Arc-length parametrised path made of straights and arcs. Beyond its end
/// the route continues straight.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    start: [f64; 2],
    heading: f64,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: [f64; 2],
    pub heading: f64,
}

fn advance(pose: Pose, segment: Segment, l: f64) -> Pose {
    let [x, y] = pose.position;
    let h0 = pose.heading;
    match segment {
        Segment::Straight { .. } => Pose {
            position: [x + l * h0.cos(), y + l * h0.sin()],
            heading: h0,
        },
        Segment::Arc { radius, angle } => {
            let kappa = angle.signum() / radius;
            let h1 = h0 + kappa * l;
            Pose {
                position: [
                    x + (h1.sin() - h0.sin()) / kappa,
                    y - (h1.cos() - h0.cos()) / kappa,
                ],
                heading: wrap_angle(h1),
            }
        }
    }
}

impl Route {
    pub fn new(start: [f64; 2], heading: f64, segments: Vec<Segment>) -> Self {
        Self {
            start,
            heading,
            segments,
        }
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    /// Pose after travelling `s` meters (`s >= 0`).
    pub fn pose_at(&self, s: f64) -> Pose {
        let mut pose = Pose {
            position: self.start,
            heading: self.heading,
        };
        let mut remaining = s.max(0.0);
        for &seg in &self.segments {
            let len = seg.length();
            if remaining <= len {
                return advance(pose, seg, remaining);
            }
            pose = advance(pose, seg, len);
            remaining -= len;
        }
        advance(pose, Segment::Straight { length: remaining }, remaining)
    }

    pub fn end_pose(&self) -> Pose {
        self.pose_at(self.length())
    }

    /// Poses every `spacing` meters from `from` to `to`, both ends included.
    pub fn sample(&self, from: f64, to: f64, spacing: f64) -> Vec<Pose> {
        let n = ((to - from) / spacing).ceil().max(1.0) as usize;
        (0..=n)
            .map(|i| self.pose_at(from + (to - from) * i as f64 / n as f64))
            .collect()
    }
}

/// Closed polygon covering a corridor of half-width `half_width` around
/// the sampled poses.
pub fn corridor(poses: &[Pose], half_width: f64) -> Vec<[f64; 2]> {
    let offset = |p: &Pose, side: f64| {
        let (s, c) = p.heading.sin_cos();
        [
            p.position[0] - side * half_width * s,
            p.position[1] + side * half_width * c,
        ]
    };
    let mut polygon: Vec<[f64; 2]> = poses.iter().map(|p| offset(p, 1.0)).collect();
    polygon.extend(poses.iter().rev().map(|p| offset(p, -1.0)));
    polygon
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;

    #[test]
    fn quarter_turn_left() {
        let r = Route::new(
            [0.0, 0.0],
            0.0,
            vec![Segment::Arc {
                radius: 10.0,
                angle: FRAC_PI_2,
            }],
        );
        let end = r.end_pose();
        assert!((end.position[0] - 10.0).abs() < 1e-12);
        assert!((end.position[1] - 10.0).abs() < 1e-12);
        assert!((end.heading - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn continues_straight_after_end() {
        let r = Route::new(
            [1.0, 2.0],
            FRAC_PI_2,
            vec![Segment::Straight { length: 5.0 }],
        );
        let p = r.pose_at(8.0);
        assert!((p.position[0] - 1.0).abs() < 1e-12 && (p.position[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn right_turn_goes_negative_y() {
        let r = Route::new(
            [0.0, 0.0],
            0.0,
            vec![Segment::Arc {
                radius: 5.0,
                angle: -FRAC_PI_2,
            }],
        );
        let end = r.end_pose();
        assert!((end.position[1] + 5.0).abs() < 1e-12);
    }
}
