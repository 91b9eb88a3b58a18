//! The C×H×W field stack and storm-fix records.

use super::{ChannelId, GeoWindow, GridError, Result};
use ndarray::{Array3, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

/// A multi-channel gridded atmospheric state over one window.
#[derive(Clone, Debug)]
pub struct FieldStack {
    pub channels: Vec<ChannelId>,
    pub data: Array3<f32>,
    pub geo: GeoWindow,
    /// Valid time, unix seconds.
    pub valid_time: i64,
    /// Forecast lead time in hours; 0 for analyses and truth fields.
    pub lead_hours: i32,
}

impl FieldStack {
    /// Build a stack, rejecting shape mismatches and non-finite values.
    pub fn new(
        channels: Vec<ChannelId>,
        data: Array3<f32>,
        geo: GeoWindow,
        valid_time: i64,
        lead_hours: i32,
    ) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != channels.len() || h != geo.h || w != geo.w {
            return Err(GridError::ShapeMismatch {
                what: "field stack data",
                expected: vec![channels.len(), geo.h, geo.w],
                got: vec![c, h, w],
            });
        }
        if lead_hours < 0 {
            return Err(GridError::Invalid {
                what: "lead_hours",
                why: format!("{lead_hours} < 0"),
            });
        }
        for (ci, ch) in channels.iter().enumerate() {
            if let Some(((row, col), _)) = data
                .index_axis(ndarray::Axis(0), ci)
                .indexed_iter()
                .find(|(_, v)| !v.is_finite())
            {
                return Err(GridError::NonFinite {
                    channel: *ch,
                    row,
                    col,
                });
            }
        }
        Ok(FieldStack {
            channels,
            data,
            geo,
            valid_time,
            lead_hours,
        })
    }

    /// Stack carrying the full canonical channel set.
    pub fn full(
        data: Array3<f32>,
        geo: GeoWindow,
        valid_time: i64,
        lead_hours: i32,
    ) -> Result<Self> {
        Self::new(ChannelId::ALL.to_vec(), data, geo, valid_time, lead_hours)
    }

    pub fn channel_position(&self, id: ChannelId) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| *c == id)
            .ok_or(GridError::MissingChannel(id))
    }

    pub fn channel(&self, id: ChannelId) -> Result<ArrayView2<'_, f32>> {
        let i = self.channel_position(id)?;
        Ok(self.data.index_axis(ndarray::Axis(0), i))
    }

    pub fn channel_mut(&mut self, id: ChannelId) -> Result<ArrayViewMut2<'_, f32>> {
        let i = self.channel_position(id)?;
        Ok(self.data.index_axis_mut(ndarray::Axis(0), i))
    }

    /// Largest |WS10M − √(U10M²+V10M²)| over the window, for consistency
    /// checks on ground-truth stacks.
    pub fn ws10m_inconsistency(&self) -> Result<f32> {
        let u = self.channel(ChannelId::U10m)?;
        let v = self.channel(ChannelId::V10m)?;
        let ws = self.channel(ChannelId::Ws10m)?;
        let mut worst = 0f32;
        ndarray::Zip::from(&u).and(&v).and(&ws).for_each(|&u, &v, &ws| {
            let d = (ws - u.hypot(v)).abs();
            if d > worst {
                worst = d;
            }
        });
        Ok(worst)
    }
}

/// One time-stamped storm fix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycloneFix {
    /// Unix seconds.
    pub time: i64,
    pub lat: f64,
    pub lon: f64,
    pub vmax_ms: f64,
    pub pmin_pa: f64,
}

impl CycloneFix {
    pub fn validate(&self) -> Result<()> {
        let ok = (-90.0..=90.0).contains(&self.lat)
            && (-180.0..180.0).contains(&self.lon)
            && self.vmax_ms >= 0.0
            && self.pmin_pa > 80_000.0
            && self.pmin_pa < 105_000.0;
        if ok {
            Ok(())
        } else {
            Err(GridError::Invalid {
                what: "cyclone fix",
                why: format!(
                    "lat {} lon {} vmax {} pmin {}",
                    self.lat, self.lon, self.vmax_ms, self.pmin_pa
                ),
            })
        }
    }
}

/// A fix plus the tracker's gap flag (true when the fix was rejected and the
/// position carried forward by extrapolation).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub fix: CycloneFix,
    pub gap: bool,
}

/// Time-ordered storm track.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CycloneTrack {
    pub points: Vec<TrackPoint>,
}

impl CycloneTrack {
    /// Build a track, enforcing strictly increasing times and a translation
    /// speed cap between consecutive non-gap fixes (default cap 30 m/s).
    pub fn new(points: Vec<TrackPoint>, max_speed_ms: f64) -> Result<Self> {
        for pair in points.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.fix.time <= a.fix.time {
                return Err(GridError::Invalid {
                    what: "cyclone track",
                    why: format!("times not strictly increasing at t={}", b.fix.time),
                });
            }
            if !a.gap && !b.gap {
                let dt = (b.fix.time - a.fix.time) as f64;
                let km = super::haversine_km((a.fix.lat, a.fix.lon), (b.fix.lat, b.fix.lon));
                let speed = km * 1000.0 / dt;
                if speed > max_speed_ms {
                    return Err(GridError::Invalid {
                        what: "cyclone track",
                        why: format!("translation speed {speed:.1} m/s exceeds {max_speed_ms}"),
                    });
                }
            }
        }
        Ok(CycloneTrack { points })
    }

    /// Track from pre-validated tracker output (no speed re-check; the
    /// tracker applies its own jump rejection).
    pub fn from_points_unchecked(points: Vec<TrackPoint>) -> Self {
        CycloneTrack { points }
    }

    pub fn fix_at(&self, time: i64) -> Option<&TrackPoint> {
        self.points.iter().find(|p| p.fix.time == time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn geo() -> GeoWindow {
        GeoWindow::square(20.0, 130.0, 10.0, 8).unwrap()
    }

    #[test]
    fn rejects_non_finite() {
        let mut data = Array3::zeros((21, 8, 8));
        data[[3, 2, 5]] = f32::NAN;
        let err = FieldStack::full(data, geo(), 0, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Z200") && msg.contains("(2, 5)"), "{msg}");
    }

    #[test]
    fn rejects_shape_mismatch() {
        let data = Array3::zeros((20, 8, 8));
        assert!(FieldStack::full(data, geo(), 0, 0).is_err());
    }

    #[test]
    fn ws10m_consistency_detects_violation() {
        let mut data = Array3::zeros((21, 8, 8));
        data.index_axis_mut(ndarray::Axis(0), ChannelId::U10m.index())
            .fill(3.0);
        data.index_axis_mut(ndarray::Axis(0), ChannelId::V10m.index())
            .fill(4.0);
        data.index_axis_mut(ndarray::Axis(0), ChannelId::Ws10m.index())
            .fill(5.0);
        let stack = FieldStack::full(data, geo(), 0, 0).unwrap();
        assert!(stack.ws10m_inconsistency().unwrap() < 1e-4);

        let mut stack = stack;
        stack.channel_mut(ChannelId::Ws10m).unwrap().fill(6.0);
        assert!(stack.ws10m_inconsistency().unwrap() > 0.9);
    }

    #[test]
    fn track_rejects_disordered_times() {
        let fix = |t| TrackPoint {
            fix: CycloneFix {
                time: t,
                lat: 20.0,
                lon: 130.0,
                vmax_ms: 30.0,
                pmin_pa: 96_000.0,
            },
            gap: false,
        };
        assert!(CycloneTrack::new(vec![fix(0), fix(0)], 30.0).is_err());
        assert!(CycloneTrack::new(vec![fix(0), fix(3600)], 30.0).is_ok());
    }

    #[test]
    fn track_rejects_excess_speed() {
        let fix = |t, lon| TrackPoint {
            fix: CycloneFix {
                time: t,
                lat: 0.0,
                lon,
                vmax_ms: 30.0,
                pmin_pa: 96_000.0,
            },
            gap: false,
        };
        // 1° of longitude at the equator in one hour is ~31 m/s.
        assert!(CycloneTrack::new(vec![fix(0, 130.0), fix(3600, 131.0)], 30.0).is_err());
        assert!(CycloneTrack::new(vec![fix(0, 130.0), fix(7200, 131.0)], 30.0).is_ok());
    }
}
