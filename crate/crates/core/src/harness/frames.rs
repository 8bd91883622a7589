//! Binary PPM snapshots of a bubble.

use std::io::Write;
use std::path::Path;

use crate::error::{AqError, Result};
use crate::model::{probability_weights, Bubble, Part, Population, Sign, Vec3};

pub struct Image {
    pub size: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn new(size: usize) -> Self {
        Image { size, rgb: vec![0; 3 * size * size] }
    }

    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.size && y < self.size {
            let k = 3 * (y * self.size + x);
            self.rgb[k..k + 3].copy_from_slice(&c);
        }
    }

    fn disc(&mut self, cx: f64, cy: f64, r: f64, c: [u8; 3]) {
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, (cx + r).ceil().max(0.0) as usize);
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, (cy + r).ceil().max(0.0) as usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.put(x, y, c);
                }
            }
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| AqError::Io { path: path.display().to_string(), message: e.to_string() };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        write!(f, "P6\n{} {}\n255\n", self.size, self.size).map_err(io)?;
        f.write_all(&self.rgb).map_err(io)?;
        f.flush().map_err(io)
    }
}

/// Square view `(min corner, side)` around the points.
fn view(points: &[Vec3]) -> ([f64; 2], f64) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if !lo[0].is_finite() {
        return ([-1.0, -1.0], 2.0);
    }
    let side = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9) * 1.1;
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    ([mid[0] - side / 2.0, mid[1] - side / 2.0], side)
}

fn color(part: Part, sign: Sign) -> [u8; 3] {
    match (part, sign) {
        (Part::Re, Sign::Plus) => [255, 80, 60],
        (Part::Re, Sign::Minus) => [120, 30, 20],
        (Part::Im, Sign::Plus) => [60, 140, 255],
        (Part::Im, Sign::Minus) => [20, 50, 120],
    }
}

/// x-y projection: quanta as dots, grains as discs scaled by probability,
/// otherwise a bar chart of the probability weights.
pub fn render(bubble: &Bubble, size: usize) -> Result<Image> {
    let mut img = Image::new(size);
    let s = size as f64;
    let membrane: Vec<Vec3> = bubble.membrane.iter().map(|c| c.coords).collect();
    match (&bubble.population, &bubble.grain_coords) {
        (Population::Particles(q), _) => {
            let pts: Vec<Vec3> = membrane.iter().copied().chain(q.iter().map(|a| a.position)).collect();
            let (lo, side) = view(&pts);
            let at = |p: Vec3| ((p[0] - lo[0]) / side * s, (1.0 - (p[1] - lo[1]) / side) * s);
            for p in &membrane {
                let (x, y) = at(*p);
                img.disc(x, y, 0.5, [90, 90, 90]);
            }
            for a in q {
                let (x, y) = at(a.position);
                img.disc(x, y, 0.7, color(a.kind.species.part, a.kind.species.sign));
            }
        }
        (Population::Counts(_), Some(grains)) => {
            let p = probability_weights(bubble)?;
            let pts: Vec<Vec3> = grains.iter().copied().chain(membrane.iter().copied()).collect();
            let (lo, side) = view(&pts);
            let at = |p: Vec3| ((p[0] - lo[0]) / side * s, (1.0 - (p[1] - lo[1]) / side) * s);
            for c in &membrane {
                let (x, y) = at(*c);
                img.disc(x, y, 0.5, [90, 90, 90]);
            }
            let pmax = p.iter().cloned().fold(0.0, f64::max).max(1e-12);
            let r = s / (2.5 * (grains.len() as f64).max(1.0));
            for (g, w) in grains.iter().zip(&p) {
                let (x, y) = at(*g);
                let v = (255.0 * w / pmax) as u8;
                img.disc(x, y, r.max(1.0), [v, v, 40]);
            }
        }
        (Population::Counts(_), None) => {
            let p = probability_weights(bubble)?;
            let w = size / p.len().max(1);
            for (j, pj) in p.iter().enumerate() {
                let h = (pj * s) as usize;
                for x in j * w..(j * w + w.saturating_sub(1)).min(size) {
                    for y in size - h.min(size)..size {
                        img.put(x, y, [230, 200, 60]);
                    }
                }
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Loading, StateVector};

    #[test]
    fn bar_chart_frame_has_ppm_header() {
        let b = Bubble::from_state(&StateVector::basis(2, 1), &Loading::default());
        let img = render(&b, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("0000.ppm");
        img.write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n16 16\n255\n"));
        assert_eq!(bytes.len(), 13 + 3 * 256);
        // the empty left bar stays black, the full right bar is lit
        assert_eq!(&img.rgb[3 * (15 * 16 + 2)..3 * (15 * 16 + 2) + 3], &[0, 0, 0]);
        assert_ne!(&img.rgb[3 * (15 * 16 + 10)..3 * (15 * 16 + 10) + 3], &[0, 0, 0]);
    }
}
