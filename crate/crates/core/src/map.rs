//! Static map rasterization and the latent subdivision grid.
//!
//! Raster and grid share one layout: row 0 sits at the minimum `y` of the
//! extent, column 0 at the minimum `x`, and flat indices are row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{TargetPosition, VcsFrame};

/// Axis-aligned rectangle in VCS meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

impl Default for Extent {
    /// Biased forward so the vehicle sits near the bottom-middle of the map.
    fn default() -> Self {
        Self::new(-12.8, 51.2, -32.0, 32.0)
    }
}

/// Raster geometry: extent plus pixel size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub extent: Extent,
    /// Meters per pixel.
    pub resolution: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            extent: Extent::default(),
            resolution: 0.5,
        }
    }
}

impl MapConfig {
    /// Same extent rendered with `pixels` pixels per side.
    pub fn with_pixels(extent: Extent, pixels: usize) -> Self {
        Self {
            extent,
            resolution: extent.width() / pixels as f64,
        }
    }

    /// `(height, width)` in pixels, validating that the extent is an exact
    /// multiple of the resolution on both axes.
    pub fn shape(&self) -> Result<(usize, usize)> {
        let res = self.resolution;
        if !(res > 0.0) || !(self.extent.width() > 0.0) || !(self.extent.height() > 0.0) {
            return Err(Error::InvalidConfig(
                "map extent and resolution must be positive".into(),
            ));
        }
        let to_pixels = |span: f64| -> Result<usize> {
            let n = (span / res).round();
            if n < 1.0 || (n * res - span).abs() > 1e-9 * span.max(1.0) {
                return Err(Error::InvalidConfig(format!(
                    "map span {span} m is not a multiple of resolution {res} m"
                )));
            }
            Ok(n as usize)
        };
        Ok((
            to_pixels(self.extent.height())?,
            to_pixels(self.extent.width())?,
        ))
    }
}

/// Road geometry of one scenario in global meters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGeometry {
    #[serde(rename = "driveable")]
    pub driveable_polygons: Vec<Vec<[f64; 2]>>,
    pub centerlines: Vec<Vec<[f64; 2]>>,
}

pub const CHANNEL_DRIVEABLE: usize = 0;
pub const CHANNEL_CENTERLINE: usize = 1;

/// Two-channel binary occupancy raster in a vehicle frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticMapRaster {
    height: usize,
    width: usize,
    extent: Extent,
    resolution: f64,
    /// `channel * height * width + row * width + col`, values 0 or 1.
    cells: Vec<u8>,
}

impl StaticMapRaster {
    pub fn empty(config: &MapConfig) -> Result<Self> {
        let (height, width) = config.shape()?;
        Ok(Self {
            height,
            width,
            extent: config.extent,
            resolution: config.resolution,
            cells: vec![0; 2 * height * width],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.cells[(channel * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: u8) {
        self.cells[(channel * self.height + row) * self.width + col] = value;
    }

    pub fn channel(&self, channel: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.cells[channel * n..(channel + 1) * n]
    }

    /// Center of pixel `(row, col)` in VCS meters.
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.extent.x_min + (col as f64 + 0.5) * self.resolution,
            self.extent.y_min + (row as f64 + 0.5) * self.resolution,
        ]
    }

    /// Binary PGM of one channel with values 0/255, `+y` pointing up.
    pub fn to_pgm(&self, channel: usize) -> Vec<u8> {
        let data: Vec<u8> = self
            .channel(channel)
            .iter()
            .map(|&v| if v > 0 { 255 } else { 0 })
            .collect();
        encode_pgm(self.width, self.height, &data)
    }
}

/// Encodes row-major 8-bit data (row 0 = minimum `y`) as binary PGM with the
/// rows flipped so that `+y` is up in image viewers.
pub fn encode_pgm(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    assert_eq!(data.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for row in (0..height).rev() {
        out.extend_from_slice(&data[row * width..(row + 1) * width]);
    }
    out
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: [f64; 2], polygon: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x_cross = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Renders `geometry` in the VCS of `frame`: channel 0 marks pixels whose
/// center lies inside a driveable polygon, channel 1 marks the 1-pixel-wide
/// trace of every centerline.
pub fn rasterize(
    geometry: &ScenarioGeometry,
    frame: &VcsFrame,
    config: &MapConfig,
) -> Result<StaticMapRaster> {
    let mut raster = StaticMapRaster::empty(config)?;
    for polygon in &geometry.driveable_polygons {
        let local: Vec<[f64; 2]> = polygon.iter().map(|&p| frame.to_vcs(p)).collect();
        fill_polygon(&mut raster, &local);
    }
    for line in &geometry.centerlines {
        let local: Vec<[f64; 2]> = line.iter().map(|&p| frame.to_vcs(p)).collect();
        for seg in local.windows(2) {
            draw_segment(&mut raster, seg[0], seg[1]);
        }
    }
    Ok(raster)
}

/// Scanline fill at pixel-center rows. Equivalent to running
/// [`point_in_polygon`] on every pixel center.
fn fill_polygon(raster: &mut StaticMapRaster, polygon: &[[f64; 2]]) {
    let n = polygon.len();
    if n < 3 {
        return;
    }
    let (y_lo, y_hi) = polygon
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p[1]), hi.max(p[1]))
        });
    let ext = raster.extent;
    let res = raster.resolution;
    let row_lo = (((y_lo - ext.y_min) / res - 0.5).floor().max(0.0)) as usize;
    let row_hi = (((y_hi - ext.y_min) / res).ceil().max(0.0) as usize).min(raster.height);
    let mut crossings = Vec::new();
    for row in row_lo..row_hi {
        let yc = ext.y_min + (row as f64 + 0.5) * res;
        crossings.clear();
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (polygon[i], polygon[j]);
            if (a[1] > yc) != (b[1] > yc) {
                crossings.push(a[0] + (yc - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
            }
            j = i;
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            // Pixel centers xc with pair[0] <= xc < pair[1].
            let first = ((pair[0] - ext.x_min) / res - 0.5).ceil().max(0.0);
            let mut col = first as usize;
            while col < raster.width {
                let xc = ext.x_min + (col as f64 + 0.5) * res;
                if xc >= pair[1] {
                    break;
                }
                if xc >= pair[0] {
                    raster.set(CHANNEL_DRIVEABLE, row, col, 1);
                }
                col += 1;
            }
        }
    }
}

/// Liang-Barsky clip of segment `a -> b` to the extent.
fn clip_segment(a: [f64; 2], b: [f64; 2], ext: &Extent) -> Option<([f64; 2], [f64; 2])> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let checks = [
        (-d[0], a[0] - ext.x_min),
        (d[0], ext.x_max - a[0]),
        (-d[1], a[1] - ext.y_min),
        (d[1], ext.y_max - a[1]),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    Some((
        [a[0] + t0 * d[0], a[1] + t0 * d[1]],
        [a[0] + t1 * d[0], a[1] + t1 * d[1]],
    ))
}

fn draw_segment(raster: &mut StaticMapRaster, a: [f64; 2], b: [f64; 2]) {
    let Some((a, b)) = clip_segment(a, b, &raster.extent) else {
        return;
    };
    let ext = raster.extent;
    let res = raster.resolution;
    let to_cell = |p: [f64; 2]| -> (i64, i64) {
        let col = (((p[0] - ext.x_min) / res).floor() as i64).clamp(0, raster.width as i64 - 1);
        let row = (((p[1] - ext.y_min) / res).floor() as i64).clamp(0, raster.height as i64 - 1);
        (col, row)
    };
    let (mut x0, mut y0) = to_cell(a);
    let (x1, y1) = to_cell(b);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        raster.set(CHANNEL_CENTERLINE, y0 as usize, x0 as usize, 1);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// `n x n` subdivision of the map extent; cell `j = row * n + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    n: usize,
    extent: Extent,
    centers: Vec<[f64; 2]>,
}

impl GridSpec {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of cells, `n^2`.
    pub fn k(&self) -> usize {
        self.n * self.n
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn cell_size(&self) -> [f64; 2] {
        [
            self.extent.width() / self.n as f64,
            self.extent.height() / self.n as f64,
        ]
    }

    /// Cell containing `p`. Cells are half-open except along the maximum
    /// edges, so a point on a shared border goes to the larger index.
    pub fn assign(&self, p: [f64; 2]) -> Result<usize> {
        if !self.extent.contains(p) || !p[0].is_finite() || !p[1].is_finite() {
            return Err(Error::OutOfExtent { x: p[0], y: p[1] });
        }
        let [w, h] = self.cell_size();
        let col = (((p[0] - self.extent.x_min) / w).floor() as usize).min(self.n - 1);
        let row = (((p[1] - self.extent.y_min) / h).floor() as usize).min(self.n - 1);
        Ok(row * self.n + col)
    }

    /// Half-open bounds `[x_lo, x_hi) x [y_lo, y_hi)` of cell `j`.
    pub fn cell_bounds(&self, j: usize) -> Extent {
        let [w, h] = self.cell_size();
        let (row, col) = (j / self.n, j % self.n);
        let x_lo = self.extent.x_min + col as f64 * w;
        let y_lo = self.extent.y_min + row as f64 * h;
        Extent::new(x_lo, x_lo + w, y_lo, y_lo + h)
    }
}

pub fn make_grid(extent: Extent, n: usize) -> Result<GridSpec> {
    if n == 0 {
        return Err(Error::InvalidConfig("grid size must be at least 1".into()));
    }
    let w = extent.width() / n as f64;
    let h = extent.height() / n as f64;
    let centers = (0..n * n)
        .map(|j| {
            let (row, col) = (j / n, j % n);
            [
                extent.x_min + (col as f64 + 0.5) * w,
                extent.y_min + (row as f64 + 0.5) * h,
            ]
        })
        .collect();
    Ok(GridSpec { n, extent, centers })
}

pub fn assign_latent(target: &TargetPosition, grid: &GridSpec) -> Result<usize> {
    grid.assign(target.position())
}
