use crate::error::{Error, Result};
use crate::features::{Sample, Track};
use crate::numeric::wrap_angle;
use crate::SAMPLE_INTERVAL_MS;

/// Resamples onto the exact 100 ms grid inside the track's time span using
/// linear interpolation between the two bracketing samples. Never
/// extrapolates. Recorded headings are interpolated along the shorter arc
/// when both neighbours carry one.
pub fn resample_100ms(track: &Track) -> Result<Track> {
    resample(track, SAMPLE_INTERVAL_MS)
}

pub fn resample(track: &Track, interval_ms: i64) -> Result<Track> {
    let samples = track.samples();
    if samples.len() < 2 {
        return Err(Error::TooShort {
            len: samples.len(),
            need: 2,
        });
    }
    let first = samples[0].timestamp_ms;
    let last = samples[samples.len() - 1].timestamp_ms;
    let start = first.div_euclid(interval_ms) + i64::from(first.rem_euclid(interval_ms) != 0);
    let end = last.div_euclid(interval_ms);
    let mut out = Vec::new();
    let mut seg = 0;
    for k in start..=end {
        let t = k * interval_ms;
        while samples[seg + 1].timestamp_ms < t {
            seg += 1;
        }
        let (a, b) = (samples[seg], samples[seg + 1]);
        let sample = if t == a.timestamp_ms {
            a
        } else if t == b.timestamp_ms {
            b
        } else {
            let w = (t - a.timestamp_ms) as f64 / (b.timestamp_ms - a.timestamp_ms) as f64;
            Sample {
                timestamp_ms: t,
                x: a.x + w * (b.x - a.x),
                y: a.y + w * (b.y - a.y),
                heading: match (a.heading, b.heading) {
                    (Some(ha), Some(hb)) => Some(wrap_angle(ha + w * wrap_angle(hb - ha))),
                    _ => None,
                },
            }
        };
        out.push(sample);
    }
    if out.len() < 2 {
        return Err(Error::TooShort {
            len: out.len(),
            need: 2,
        });
    }
    Track::new(out)
}
