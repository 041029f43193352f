//! Pen strokes and their conversion to network input bitmaps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, DataError, Dataset, IMAGE_SIZE};

/// Side of the square the ink is scaled into, centered in the frame.
const CONTENT_BOX: f64 = 40.0;
/// Full ink within this distance of the pen path; fades to zero one pixel further.
const PEN_RADIUS: f64 = 0.5;

/// One handwritten character as ordered strokes of `[x, y]` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeSample {
    pub strokes: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl StrokeSample {
    pub fn new(strokes: Vec<Vec<[f64; 2]>>, label: Option<usize>) -> Self {
        Self { strokes, label }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.strokes.is_empty() {
            return Err(DataError::InvalidSample("no strokes".into()));
        }
        for (i, s) in self.strokes.iter().enumerate() {
            if s.is_empty() {
                return Err(DataError::InvalidSample(format!("stroke {i} has no points")));
            }
            if s.iter().flatten().any(|v| !v.is_finite()) {
                return Err(DataError::InvalidSample(format!("stroke {i} has a non-finite coordinate")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let s: Self = serde_json::from_str(text).map_err(|source| DataError::Json { line: 1, source })?;
        s.validate()?;
        Ok(s)
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn draw_segment(img: &mut [f32], size: usize, a: (f64, f64), b: (f64, f64)) {
    let reach = PEN_RADIUS + 1.0;
    let lo = |v: f64| ((v - reach).floor().max(0.0)) as usize;
    let hi = |v: f64| ((v + reach).ceil().max(0.0) as usize).min(size);
    for y in lo(a.1.min(b.1))..hi(a.1.max(b.1)) {
        for x in lo(a.0.min(b.0))..hi(a.0.max(b.0)) {
            let d = segment_distance((x as f64 + 0.5, y as f64 + 0.5), a, b);
            let ink = (reach - d).clamp(0.0, 1.0) as f32;
            let px = &mut img[y * size + x];
            *px = px.max(ink);
        }
    }
}

/// Renders strokes into a `size`×`size` bitmap, ink 1 on background 0.
///
/// The ink bounding box is scaled (aspect preserved) into a centered square of
/// side `40/48 · size`; each consecutive point pair becomes an anti-aliased
/// segment two pixels wide.
pub fn rasterize(sample: &StrokeSample, size: usize) -> Result<Vec<f32>, DataError> {
    sample.validate()?;
    let pts = || sample.strokes.iter().flatten();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in pts() {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let extent = (x1 - x0).max(y1 - y0);
    let box_side = CONTENT_BOX * size as f64 / IMAGE_SIZE as f64;
    let scale = if extent > 0.0 { box_side / extent } else { 0.0 };
    let (mx, my) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let center = size as f64 / 2.0;
    let map = |p: &[f64; 2]| (center + (p[0] - mx) * scale, center + (p[1] - my) * scale);

    let mut img = vec![0.0f32; size * size];
    for stroke in &sample.strokes {
        if stroke.len() == 1 {
            let p = map(&stroke[0]);
            draw_segment(&mut img, size, p, p);
        }
        for w in stroke.windows(2) {
            draw_segment(&mut img, size, map(&w[0]), map(&w[1]));
        }
    }
    Ok(img)
}

/// Reads one labeled stroke sample per line and rasterizes each to 48×48.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let sample: StrokeSample =
            serde_json::from_str(line).map_err(|source| DataError::Json { line: i + 1, source })?;
        let label = sample
            .label
            .ok_or_else(|| DataError::InvalidSample(format!("line {}: missing label", i + 1)))?;
        images.extend(rasterize(&sample, IMAGE_SIZE)?);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(DataError::Invalid(format!("{}: no samples", path.display())));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(IMAGE_SIZE, IMAGE_SIZE, images, labels, classes)
}
