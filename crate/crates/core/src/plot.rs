//! Static SVG renderings: time-space trajectory diagrams coloured by
//! occupancy, and distortion-weight curves over the quantile grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;

/// Occupancy colour ramp, empty to full.
pub const OCCUPANCY_RAMP: [&str; 5] = ["#2c7bb6", "#abd9e9", "#ffffbf", "#fdae61", "#d7191c"];

/// Categorical palette for weight curves.
const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

/// Index into [`OCCUPANCY_RAMP`] for an occupancy fraction in `[0, 1]`.
pub fn occupancy_bucket(frac: f64) -> usize {
    let n = OCCUPANCY_RAMP.len();
    ((frac.clamp(0.0, 1.0) * n as f64) as usize).min(n - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub bus: usize,
    pub position_km: f64,
    pub occupancy: f64,
}

/// Parses `tick,bus_id,position_km,phase,occupancy` rows (one tick = one
/// second).
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<TrajectoryPoint>> {
    #[derive(Deserialize)]
    struct Row {
        tick: u64,
        bus_id: usize,
        position_km: f64,
        #[allow(dead_code)]
        phase: String,
        occupancy: f64,
    }
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(|e| invalid(format!("trajectory csv: {e}")))?;
        if !(0.0..=1.0).contains(&row.occupancy) {
            return Err(invalid(format!("occupancy fraction {} outside [0, 1]", row.occupancy)));
        }
        out.push(TrajectoryPoint {
            time: row.tick as f64,
            bus: row.bus_id,
            position_km: row.position_km,
            occupancy: row.occupancy,
        });
    }
    Ok(out)
}

/// A run of consecutive samples of one bus sharing an occupancy colour, in
/// pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub bus: usize,
    pub bucket: usize,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn frame_for(points: &[TrajectoryPoint]) -> Frame {
    let (mut t0, mut t1, mut p1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for p in points {
        t0 = t0.min(p.time);
        t1 = t1.max(p.time);
        p1 = p1.max(p.position_km);
    }
    Frame::new(t0, t1, 0.0, p1)
}

/// Splits each bus's trajectory into colour-homogeneous polylines. Adjacent
/// segments share their boundary point so the drawn line is continuous.
pub fn timespace_segments(points: &[TrajectoryPoint]) -> Result<Vec<Segment>> {
    if points.is_empty() {
        return Err(invalid("trajectory log is empty"));
    }
    let frame = frame_for(points);
    let mut by_bus: BTreeMap<usize, Vec<&TrajectoryPoint>> = BTreeMap::new();
    for p in points {
        by_bus.entry(p.bus).or_default().push(p);
    }
    let mut out = Vec::new();
    for (bus, mut pts) in by_bus {
        pts.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut current: Option<Segment> = None;
        for p in pts {
            let xy = (frame.px(p.time), frame.py(p.position_km));
            let bucket = occupancy_bucket(p.occupancy);
            match current.as_mut() {
                Some(seg) if seg.bucket == bucket => seg.points.push(xy),
                Some(seg) => {
                    seg.points.push(xy);
                    let done = std::mem::replace(
                        seg,
                        Segment {
                            bus,
                            bucket,
                            points: vec![xy],
                        },
                    );
                    out.push(done);
                }
                None => {
                    current = Some(Segment {
                        bus,
                        bucket,
                        points: vec![xy],
                    })
                }
            }
        }
        out.extend(current);
    }
    Ok(out)
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="18" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
        WIDTH / 2.0
    );
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (xl, xr) = (MARGIN_L, WIDTH - MARGIN_R);
    let (yt, yb) = (MARGIN_T, HEIGHT - MARGIN_B);
    let _ = writeln!(
        out,
        r#"<path d="M{xl:.1},{yt:.1} L{xl:.1},{yb:.1} L{xr:.1},{yb:.1}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = frame.x0 + f * (frame.x1 - frame.x0);
        let yv = frame.y0 + f * (frame.y1 - frame.y0);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            frame.px(xv),
            yb + 16.0,
            tick_label(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            xl - 6.0,
            frame.py(yv) + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{x_label}</text>"#,
        (xl + xr) / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">{y_label}</text>"#,
        (yt + yb) / 2.0,
        (yt + yb) / 2.0
    );
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn polyline(out: &mut String, pts: &[(f64, f64)], stroke: &str, width: f64) {
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#,
        coords.join(" ")
    );
}

/// Time-space diagram: time on x, route position on y, one polyline per bus
/// coloured by occupancy fraction.
pub fn render_timespace_svg(points: &[TrajectoryPoint]) -> Result<String> {
    let segments = timespace_segments(points)?;
    let frame = frame_for(points);
    let mut out = String::new();
    header(&mut out, "Bus trajectories");
    axes(&mut out, &frame, "time (s)", "position (km)");
    for seg in &segments {
        polyline(&mut out, &seg.points, OCCUPANCY_RAMP[seg.bucket], 2.0);
    }
    for (i, c) in OCCUPANCY_RAMP.iter().enumerate() {
        let x = WIDTH - MARGIN_R - 150.0 + i as f64 * 30.0;
        let _ = writeln!(out, r#"<rect x="{x:.1}" y="6" width="28" height="8" fill="{c}"/>"#);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Weight curves over the quantile-midpoint grid, one per label.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightCurves {
    pub midpoints: Vec<f64>,
    pub curves: BTreeMap<String, Vec<f64>>,
}

impl WeightCurves {
    pub fn validate(&self) -> Result<()> {
        if self.midpoints.is_empty() || self.curves.is_empty() {
            return Err(invalid("weight curves need a grid and at least one curve"));
        }
        for (name, w) in &self.curves {
            if w.len() != self.midpoints.len() {
                return Err(invalid(format!(
                    "curve '{name}' has {} points, grid has {}",
                    w.len(),
                    self.midpoints.len()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("curve '{name}' contains non-finite weights")));
            }
        }
        Ok(())
    }
}

/// Pixel coordinates of every curve, keyed like the input.
pub fn weight_polylines(curves: &WeightCurves) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
    curves.validate()?;
    let frame = weight_frame(curves);
    Ok(curves
        .curves
        .iter()
        .map(|(k, w)| {
            let pts = curves
                .midpoints
                .iter()
                .zip(w)
                .map(|(&t, &v)| (frame.px(t), frame.py(v)))
                .collect();
            (k.clone(), pts)
        })
        .collect())
}

fn weight_frame(curves: &WeightCurves) -> Frame {
    let top = curves
        .curves
        .values()
        .flat_map(|w| w.iter().copied())
        .fold(1.0f64, f64::max);
    Frame::new(0.0, 1.0, 0.0, top * 1.1)
}

pub fn render_weights_svg(curves: &WeightCurves) -> Result<String> {
    let lines = weight_polylines(curves)?;
    let frame = weight_frame(curves);
    let mut out = String::new();
    header(&mut out, "Distortion weights");
    axes(&mut out, &frame, "quantile fraction", "weight");
    for (i, (name, pts)) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        polyline(&mut out, pts, color, 2.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="{color}">{name}</text>"#,
            WIDTH - MARGIN_R - 120.0,
            MARGIN_T + 14.0 * (i as f64 + 1.0)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
