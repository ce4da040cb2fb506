use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SeriesError {
    #[error("series needs at least one point")]
    Empty,
    #[error("point {index} is not finite")]
    NonFinite { index: usize },
    #[error("point {index} does not increase on the x axis")]
    NotIncreasing { index: usize },
}

/// Sampled series evaluated with step-hold semantics: `value_at(t)` returns
/// the value of the most recent sample at or before `t`, and 0.0 before the
/// first sample. Sample times must be strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    points: Vec<(f64, f64)>,
}

impl TimeSeries {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, SeriesError> {
        check_axis(&points)?;
        Ok(TimeSeries { points })
    }

    pub fn value_at(&self, t: f64) -> f64 {
        // partition_point gives the count of samples with time <= t
        let n = self.points.partition_point(|&(pt, _)| pt <= t);
        if n == 0 {
            0.0
        } else {
            self.points[n - 1].1
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// Lookup curve evaluated by piecewise-linear interpolation, clamped to the
/// first/last point outside the sampled range. X values must be strictly
/// increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    points: Vec<(f64, f64)>,
}

impl Curve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, SeriesError> {
        check_axis(&points)?;
        Ok(Curve { points })
    }

    pub fn value_at(&self, x: f64) -> f64 {
        let pts = &self.points;
        if x <= pts[0].0 {
            return pts[0].1;
        }
        if x >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        let i = pts.partition_point(|&(px, _)| px <= x);
        let (x0, y0) = pts[i - 1];
        let (x1, y1) = pts[i];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn min_x(&self) -> f64 {
        self.points[0].0
    }

    pub fn max_x(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    pub fn min_y(&self) -> f64 {
        self.points.iter().fold(f64::INFINITY, |m, p| m.min(p.1))
    }
}

fn check_axis(points: &[(f64, f64)]) -> Result<(), SeriesError> {
    if points.is_empty() {
        return Err(SeriesError::Empty);
    }
    for (i, &(x, y)) in points.iter().enumerate() {
        if !x.is_finite() || !y.is_finite() {
            return Err(SeriesError::NonFinite { index: i });
        }
        if i > 0 && x <= points[i - 1].0 {
            return Err(SeriesError::NotIncreasing { index: i });
        }
    }
    Ok(())
}
