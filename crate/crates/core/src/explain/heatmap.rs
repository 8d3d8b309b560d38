//! Rasterising per-instance weights onto the tile grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights are stored with nine significant digits; rasterising the quantised
/// values makes CSV → raster reproduce the original raster exactly.
pub fn quantize(w: f64) -> f64 {
    format!("{w:.8e}").parse().expect("formatted float parses")
}

/// Dense grid over the bounding box of the coordinates, row-major in `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub x0: i32,
    pub y0: i32,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<f64>,
}

impl Raster {
    pub fn at(&self, x: i32, y: i32) -> f64 {
        let (cx, cy) = ((x - self.x0) as usize, (y - self.y0) as usize);
        self.cells[cy * self.width + cx]
    }

    /// Min-max scaled to 0..=255. A constant grid maps to 255 when positive
    /// and 0 otherwise.
    pub fn to_gray(&self) -> Vec<u8> {
        let min = self.cells.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.cells.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == min {
            let v = if max > 0.0 { 255 } else { 0 };
            return vec![v; self.cells.len()];
        }
        self.cells
            .iter()
            .map(|&c| (255.0 * (c - min) / (max - min)).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_gray());
        out
    }
}

/// Places each quantised weight at its coordinate; cells nobody covers stay 0
/// and repeated coordinates are summed.
pub fn rasterize(weights: &[f64], coords: &[(i32, i32)]) -> Result<Raster> {
    if weights.len() != coords.len() {
        return Err(Error::Dimension {
            op: "heatmap",
            lhs: vec![weights.len()],
            rhs: vec![coords.len(), 2],
        });
    }
    if weights.is_empty() {
        return Err(Error::EmptyBag);
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::Numerical(format!("heatmap weight {w}")));
    }
    let x0 = coords.iter().map(|c| c.0).min().expect("non-empty");
    let x1 = coords.iter().map(|c| c.0).max().expect("non-empty");
    let y0 = coords.iter().map(|c| c.1).min().expect("non-empty");
    let y1 = coords.iter().map(|c| c.1).max().expect("non-empty");
    let width = (x1 as i64 - x0 as i64 + 1) as usize;
    let height = (y1 as i64 - y0 as i64 + 1) as usize;

    // Canonical order so duplicate sums do not depend on input order.
    let mut pairs: Vec<((i32, i32), f64)> = coords.iter().copied().zip(weights.iter().map(|&w| quantize(w))).collect();
    pairs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let duplicates = pairs.windows(2).filter(|w| w[0].0 == w[1].0).count();
    if duplicates > 0 {
        log::warn!("heatmap: {duplicates} repeated coordinates, summing their weights");
    }
    let mut cells = vec![0.0; width * height];
    for ((x, y), w) in pairs {
        cells[(y - y0) as usize * width + (x - x0) as usize] += w;
    }
    Ok(Raster {
        x0,
        y0,
        width,
        height,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeatmapFormat {
    /// `x,y,weight`, one row per instance.
    Csv,
    /// 8-bit binary PGM of the min-max normalised raster.
    Pgm,
}

/// Writes one heatmap file and returns the raster it encodes.
pub fn heatmap_export(
    weights: &[f64],
    coords: &[(i32, i32)],
    path: impl AsRef<Path>,
    format: HeatmapFormat,
) -> Result<Raster> {
    let path = path.as_ref();
    let raster = rasterize(weights, coords)?;
    match format {
        HeatmapFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(["x", "y", "weight"])?;
            for (&(x, y), &v) in coords.iter().zip(weights) {
                w.write_record([x.to_string(), y.to_string(), format!("{v:.8e}")])?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        HeatmapFormat::Pgm => std::fs::write(path, raster.to_pgm()).map_err(|e| Error::io(path, e))?,
    }
    Ok(raster)
}

/// Reads a heatmap CSV back into `(weights, coords)`.
pub fn read_heatmap_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<(i32, i32)>)> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let mut weights = Vec::new();
    let mut coords = Vec::new();
    for row in r.deserialize() {
        let (x, y, w): (i32, i32, f64) = row?;
        coords.push((x, y));
        weights.push(w);
    }
    Ok((weights, coords))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tile() {
        let r = rasterize(&[1.0], &[(0, 0)]).unwrap();
        assert_eq!(r.to_pgm(), b"P5\n1 1\n255\n\xff".to_vec());
    }

    #[test]
    fn uniform_square() {
        let r = rasterize(&[0.25; 4], &[(0, 0), (1, 0), (0, 1), (1, 1)]).unwrap();
        let g = r.to_gray();
        assert!(g.iter().all(|&v| v == g[0]));
    }

    #[test]
    fn gaps_and_offsets() {
        let r = rasterize(&[2.0, 1.0], &[(3, 5), (5, 6)]).unwrap();
        assert_eq!((r.x0, r.y0, r.width, r.height), (3, 5, 3, 2));
        assert_eq!(r.cells, vec![2.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(r.to_gray(), vec![255, 0, 0, 0, 0, 128]);
    }

    #[test]
    fn duplicates_sum() {
        let r = rasterize(&[0.5, 0.25, 1.0], &[(0, 0), (0, 0), (1, 0)]).unwrap();
        assert_eq!(r.cells, vec![0.75, 1.0]);
    }

    #[test]
    fn mismatched_lengths() {
        assert!(rasterize(&[1.0, 2.0], &[(0, 0)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let weights = [0.123456789123, 1.0 / 3.0, 2e-9, 0.5, 0.1];
        let coords = [(0, 0), (1, 0), (2, 1), (1, 0), (-1, 2)];
        let csv = dir.path().join("h.csv");
        let pgm = dir.path().join("h.pgm");
        heatmap_export(&weights, &coords, &csv, HeatmapFormat::Csv).unwrap();
        let raster = heatmap_export(&weights, &coords, &pgm, HeatmapFormat::Pgm).unwrap();
        let (w2, c2) = read_heatmap_csv(&csv).unwrap();
        assert_eq!(c2, coords);
        let again = rasterize(&w2, &c2).unwrap();
        assert_eq!(again, raster);
        assert_eq!(again.to_pgm(), std::fs::read(&pgm).unwrap());
    }
}
