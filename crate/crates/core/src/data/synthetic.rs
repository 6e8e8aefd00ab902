//! Procedural corn-ear renderer with exact kernel positions.
//!
//! Kernels are shaded ellipses laid out on a rows × cols grid (columns
//! across the ear, rows along it) over a dark cob body, optionally rotated
//! in-plane, lit by a linear brightness gradient and sprinkled with sensor
//! noise. The returned centers are the exact ellipse centers used for
//! rendering.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_image, RgbImage};
use crate::error::{bail, Error, Result};

/// Kernel half-width as a fraction of its half-height.
pub const KERNEL_ASPECT: f64 = 0.72;
/// Cob gap between neighbouring kernels, pixels.
pub const KERNEL_GAP: f64 = 2.0;
pub const DEFAULT_HIDDEN_RATIO: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Plain,
    Gradient,
    Texture,
    /// Plain backdrop strewn with clusters of kernel-shaped pebbles in
    /// non-kernel colors.
    Clutter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarParams {
    pub rows: usize,
    pub cols: usize,
    /// Kernel half-height in pixels.
    pub kernel_radius: f64,
    /// Maximum per-kernel displacement along each axis, pixels.
    pub jitter: f64,
    /// Relative brightness change across the image (0 = even lighting).
    pub lighting_gradient: f64,
    pub background: Background,
    /// In-plane rotation of each ear about its own center, degrees.
    pub angle_deg: f64,
    pub width: usize,
    pub height: usize,
    /// Number of identical-layout ears placed side by side.
    pub ears: usize,
    pub hidden_ratio: f64,
}

impl Default for EarParams {
    fn default() -> Self {
        Self {
            rows: 20,
            cols: 12,
            kernel_radius: 14.0,
            jitter: 1.0,
            lighting_gradient: 0.3,
            background: Background::Plain,
            angle_deg: 0.0,
            width: 1024,
            height: 768,
            ears: 1,
            hidden_ratio: DEFAULT_HIDDEN_RATIO,
        }
    }
}

impl EarParams {
    pub fn pitch(&self) -> (f64, f64) {
        (
            2.0 * KERNEL_ASPECT * self.kernel_radius + KERNEL_GAP,
            2.0 * self.kernel_radius + KERNEL_GAP,
        )
    }

    /// Randomized layout for a corpus of varied ears: kernel size, density,
    /// lighting, background and rotation (|angle| ≤ `max_angle`) all drawn
    /// from `rng`, with rows/cols shrunk until the ear fits.
    pub fn varied(rng: &mut impl Rng, width: usize, height: usize, max_angle: f64) -> Result<Self> {
        let mut p = EarParams {
            kernel_radius: rng.gen_range(12.5..15.0),
            jitter: rng.gen_range(0.0..1.5),
            lighting_gradient: rng.gen_range(0.0..0.5),
            background: [Background::Plain, Background::Gradient, Background::Texture, Background::Clutter][rng.gen_range(0..4)],
            angle_deg: if max_angle > 0.0 { rng.gen_range(-max_angle..=max_angle) } else { 0.0 },
            width,
            height,
            ..EarParams::default()
        };
        let (px, py) = p.pitch();
        let max_cols = ((width as f64 - 60.0) / px).floor().max(1.0) as usize;
        let max_rows = ((height as f64 - 60.0) / py).floor().max(1.0) as usize;
        p.cols = rng.gen_range(max_cols.div_ceil(2).max(1)..=max_cols);
        p.rows = rng.gen_range(max_rows.div_ceil(2).max(1)..=max_rows);
        while p.layout_centers(&[]).is_err() {
            if p.rows >= p.cols && p.rows > 1 {
                p.rows -= 1;
            } else if p.cols > 1 {
                p.cols -= 1;
            } else {
                bail!(InvalidArgument, "no ear fits a {width}x{height} image");
            }
        }
        Ok(p)
    }

    fn ear_centers(&self) -> Vec<(f64, f64)> {
        let (w, h) = (self.width as f64, self.height as f64);
        (0..self.ears)
            .map(|k| (w * (k as f64 + 0.5) / self.ears as f64, h / 2.0))
            .collect()
    }

    /// Grid centers (with per-kernel offsets in local ear coordinates) after
    /// rotation, or an error if any kernel would leave the image.
    fn layout_centers(&self, offsets: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
        if self.rows == 0 || self.cols == 0 || self.ears == 0 {
            bail!(InvalidArgument, "rows, cols and ears must be >= 1");
        }
        if !(self.kernel_radius >= 2.0) {
            bail!(InvalidArgument, "kernel radius must be >= 2 px");
        }
        let (px, py) = self.pitch();
        let (s, c) = (self.angle_deg * PI / 180.0).sin_cos();
        let per_ear = self.rows * self.cols;
        let mut out = Vec::with_capacity(per_ear * self.ears);
        for (e, &(ex, ey)) in self.ear_centers().iter().enumerate() {
            for i in 0..self.rows {
                for j in 0..self.cols {
                    let (dx, dy) = offsets.get(e * per_ear + i * self.cols + j).copied().unwrap_or((0.0, 0.0));
                    let lx = (j as f64 - (self.cols as f64 - 1.0) / 2.0) * px + dx;
                    let ly = (i as f64 - (self.rows as f64 - 1.0) / 2.0) * py + dy;
                    out.push((ex + c * lx - s * ly, ey + s * lx + c * ly));
                }
            }
        }
        // Every kernel plus a margin for a full detection window must stay
        // inside the image and inside its own ear's horizontal slot.
        let margin = self.kernel_radius + 4.0;
        let slot = self.width as f64 / self.ears as f64;
        for (k, &(x, y)) in out.iter().enumerate() {
            let e = (k / per_ear) as f64;
            if x < e * slot + margin
                || x > (e + 1.0) * slot - margin
                || y < margin
                || y > self.height as f64 - margin
            {
                bail!(
                    InvalidArgument,
                    "{}x{} kernels of radius {} do not fit a {}x{} image with {} ear(s)",
                    self.rows,
                    self.cols,
                    self.kernel_radius,
                    self.width,
                    self.height,
                    self.ears
                );
            }
        }
        Ok(out)
    }
}

/// Exact ground truth for one rendered image.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticEarTruth {
    pub image: RgbImage,
    pub centers: Vec<[f64; 2]>,
    pub visible_count: usize,
    pub hidden_ratio: f64,
    pub seed: u64,
    /// Centers of decoy pebbles (kernel-shaped, not kernels).
    pub decoys: Vec<[f64; 2]>,
}

/// On-disk sidecar: everything in the truth except the pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub centers: Vec<[f64; 2]>,
    pub visible_count: usize,
    pub hidden_ratio: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decoys: Vec<[f64; 2]>,
}

/// `ear_003.png` → `ear_003.truth.json`.
pub fn sidecar_path(image_path: &Path) -> PathBuf {
    image_path.with_extension("truth.json")
}

impl SyntheticEarTruth {
    pub fn sidecar(&self) -> TruthSidecar {
        TruthSidecar {
            centers: self.centers.clone(),
            visible_count: self.visible_count,
            hidden_ratio: self.hidden_ratio,
            seed: self.seed,
            decoys: self.decoys.clone(),
        }
    }

    /// Writes the image and its truth sidecar.
    pub fn save(&self, image_path: impl AsRef<Path>) -> Result<()> {
        let image_path = image_path.as_ref();
        write_image(&self.image, image_path)?;
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        fs::write(sidecar_path(image_path), json + "\n")?;
        Ok(())
    }

    pub fn load(image_path: impl AsRef<Path>) -> Result<Self> {
        let image_path = image_path.as_ref();
        let image = crate::data::read_image(image_path)?;
        let side = sidecar_path(image_path);
        let text = fs::read_to_string(&side)?;
        let s: TruthSidecar =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
        if s.visible_count != s.centers.len() {
            bail!(Format, "{}: visible_count disagrees with the center list", side.display());
        }
        Ok(Self {
            image,
            centers: s.centers,
            visible_count: s.visible_count,
            hidden_ratio: s.hidden_ratio,
            seed: s.seed,
            decoys: s.decoys,
        })
    }
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn blend(&mut self, x: usize, y: usize, rgb: [f64; 3], alpha: f64) {
        let p = &mut self.px[y * self.w + x];
        for c in 0..3 {
            p[c] = p[c] * (1.0 - alpha) + rgb[c] * alpha;
        }
    }
}

fn vary(rng: &mut ChaCha8Rng, base: [f64; 3], spread: f64) -> [f64; 3] {
    let k = 1.0 + rng.gen_range(-spread..=spread);
    base.map(|v| v * k + rng.gen_range(-spread..=spread) * 40.0)
}

fn paint_background(canvas: &mut Canvas, kind: Background, rng: &mut ChaCha8Rng) {
    const PALETTE: [[f64; 3]; 4] = [[40.0, 52.0, 90.0], [120.0, 120.0, 118.0], [225.0, 222.0, 215.0], [60.0, 90.0, 60.0]];
    let (ia, ib) = (rng.gen_range(0..PALETTE.len()), rng.gen_range(0..PALETTE.len()));
    let a = vary(rng, PALETTE[ia], 0.1);
    let b = vary(rng, PALETTE[ib], 0.1);
    // Low-frequency texture: a few random plane waves.
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let theta = rng.gen_range(0.0..PI);
            let freq = rng.gen_range(0.01..0.06);
            (theta.cos() * freq, theta.sin() * freq, rng.gen_range(0.0..2.0 * PI), rng.gen_range(5.0..15.0))
        })
        .collect();
    let (w, h) = (canvas.w, canvas.h);
    for y in 0..h {
        for x in 0..w {
            let t = y as f64 / h.max(2) as f64;
            let rgb = match kind {
                Background::Plain | Background::Clutter => a,
                Background::Gradient => [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t),
                Background::Texture => {
                    let d: f64 = waves
                        .iter()
                        .map(|&(fx, fy, ph, amp)| amp * (fx * x as f64 + fy * y as f64 + ph).sin())
                        .sum();
                    a.map(|v| v + d)
                }
            };
            canvas.px[y * w + x] = rgb;
        }
    }
}

/// Coverage of a unit-normalized ellipse distance `rho` for a shape whose
/// smallest semi-axis is `minor` pixels (one-pixel soft edge).
fn coverage(rho: f64, minor: f64) -> f64 {
    ((1.0 - rho) * minor + 0.5).clamp(0.0, 1.0)
}

/// Shaded ellipse: dome falloff, a highlight toward the upper left and a
/// darker dent near the crown. `rot` is (sin, cos) of the rotation.
fn draw_dome(canvas: &mut Canvas, (cx, cy): (f64, f64), (rx, ry): (f64, f64), (s, c): (f64, f64), base: [f64; 3]) {
    let reach = rx.max(ry) + 2.0;
    let (w, h) = (canvas.w, canvas.h);
    let x0 = (cx - reach).floor().max(0.0) as usize;
    let x1 = ((cx + reach).ceil().max(0.0) as usize).min(w);
    let y0 = (cy - reach).floor().max(0.0) as usize;
    let y1 = ((cy + reach).ceil().max(0.0) as usize).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
            let (ux, uy) = (lx / rx, ly / ry);
            let rho = (ux * ux + uy * uy).sqrt();
            let a = coverage(rho, rx.min(ry));
            if a <= 0.0 {
                continue;
            }
            let dome = 0.62 + 0.38 * (1.0 - rho * rho).max(0.0).sqrt();
            let hl = (-((ux + 0.3).powi(2) + (uy + 0.35).powi(2)) * 6.0).exp() * 0.25;
            let dent = (-(ux.powi(2) + (uy + 0.55).powi(2)) * 18.0).exp() * 0.12;
            let k = dome + hl - dent;
            canvas.blend(x, y, base.map(|v| v * k), a);
        }
    }
}

/// Decoy clusters: jittered grids of kernel-sized pebbles on a dark mat,
/// both roughly matching the brightness of kernels and cob but in slate,
/// sage or grey hues. Clusters overlapping an ear body are skipped.
fn paint_clutter(
    canvas: &mut Canvas,
    params: &EarParams,
    body: &dyn Fn(f64, f64) -> bool,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 2]> {
    let mut decoys = Vec::new();
    const PEBBLES: [[f64; 3]; 3] = [[150.0, 185.0, 215.0], [165.0, 195.0, 150.0], [180.0, 180.0, 182.0]];
    const MATS: [[f64; 3]; 3] = [[30.0, 62.0, 95.0], [40.0, 70.0, 45.0], [58.0, 58.0, 62.0]];
    let (w, h) = (canvas.w as f64, canvas.h as f64);
    let (pitch_x, pitch_y) = params.pitch();
    let clusters = 2 + (w * h / 40_000.0) as usize;
    for _ in 0..clusters {
        let (rows, cols) = (rng.gen_range(2..=5usize), rng.gen_range(2..=5usize));
        let spread = rng.gen_range(0.9..1.2);
        let (px, py) = (pitch_x * spread, pitch_y * spread);
        let (ox, oy) = (rng.gen_range(0.0..w), rng.gen_range(0.0..h));
        let (ps, pc) = rng.gen_range(-0.4f64..0.4).sin_cos();
        let tone = rng.gen_range(0..PEBBLES.len());
        let mat = vary(rng, MATS[tone], 0.1);
        let half = (cols as f64 * px / 2.0 + 2.0, rows as f64 * py / 2.0 + 4.0);
        let corners = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0), (0.0, 0.0)];
        if corners.iter().any(|&(u, v)| {
            let (lx, ly) = (u * half.0, v * half.1);
            body(ox + pc * lx - ps * ly, oy + ps * lx + pc * ly)
        }) {
            continue;
        }
        let reach = half.0.hypot(half.1) + 1.0;
        let x0 = (ox - reach).max(0.0) as usize;
        let x1 = ((ox + reach).max(0.0) as usize).min(canvas.w);
        let y0 = (oy - reach).max(0.0) as usize;
        let y1 = ((oy + reach).max(0.0) as usize).min(canvas.h);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 + 0.5 - ox, y as f64 + 0.5 - oy);
                let (lx, ly) = (pc * dx + ps * dy, -ps * dx + pc * dy);
                let rho = ((lx / half.0).powi(10) + (ly / half.1).powi(10)).powf(0.1);
                let a = coverage(rho, half.0.min(half.1));
                if a > 0.0 {
                    canvas.blend(x, y, mat, a);
                }
            }
        }
        for i in 0..rows {
            for j in 0..cols {
                let lx = (j as f64 - (cols as f64 - 1.0) / 2.0) * px + rng.gen_range(-1.5..1.5);
                let ly = (i as f64 - (rows as f64 - 1.0) / 2.0) * py + rng.gen_range(-1.5..1.5);
                let ry = params.kernel_radius * rng.gen_range(0.85..1.1);
                let rx = KERNEL_ASPECT * ry * rng.gen_range(0.9..1.1);
                let color = vary(rng, PEBBLES[tone], 0.08);
                let (x, y) = (ox + pc * lx - ps * ly, oy + ps * lx + pc * ly);
                draw_dome(canvas, (x, y), (rx, ry), (ps, pc), color);
                if x >= 0.0 && y >= 0.0 && x < w && y < h {
                    decoys.push([x, y]);
                }
            }
        }
    }
    decoys
}

/// Renders an ear image and returns its exact kernel centers.
pub fn generate_synthetic_ear(params: &EarParams, seed: u64) -> Result<SyntheticEarTruth> {
    if params.width == 0 || params.height == 0 {
        bail!(InvalidArgument, "image dimensions must be positive");
    }
    if !(params.jitter >= 0.0) || !(params.hidden_ratio > 0.0) {
        bail!(InvalidArgument, "jitter must be >= 0 and hidden ratio > 0");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.rows * params.cols * params.ears;
    let offsets: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            if params.jitter > 0.0 {
                (
                    rng.gen_range(-params.jitter..=params.jitter),
                    rng.gen_range(-params.jitter..=params.jitter),
                )
            } else {
                (0.0, 0.0)
            }
        })
        .collect();
    let centers = params.layout_centers(&offsets)?;

    let (w, h) = (params.width, params.height);
    let mut canvas = Canvas {
        w,
        h,
        px: vec![[0.0; 3]; w * h],
    };
    paint_background(&mut canvas, params.background, &mut rng);

    let (s, c) = (params.angle_deg * PI / 180.0).sin_cos();
    let (pitch_x, pitch_y) = params.pitch();
    let r = params.kernel_radius;

    let half_w = params.cols as f64 * pitch_x / 2.0 + 2.0;
    let half_h = params.rows as f64 * pitch_y / 2.0 + 4.0;
    let mut decoys = Vec::new();
    if params.background == Background::Clutter {
        let body = |x: f64, y: f64| {
            params.ear_centers().iter().any(|&(ex, ey)| {
                let (dx, dy) = (x - ex, y - ey);
                let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
                lx.abs() < half_w + 2.0 * r && ly.abs() < half_h + 2.0 * r
            })
        };
        decoys = paint_clutter(&mut canvas, params, &body, &mut rng);
    }

    // Cob body: a rotated rounded rectangle (superellipse) behind the grid.
    let cob = vary(&mut rng, [95.0, 45.0, 30.0], 0.1);
    for &(ex, ey) in &params.ear_centers() {
        let reach = half_w.hypot(half_h) + 2.0;
        let (x0, x1) = ((ex - reach).floor().max(0.0) as usize, ((ex + reach).ceil() as usize).min(w));
        let (y0, y1) = ((ey - reach).floor().max(0.0) as usize, ((ey + reach).ceil() as usize).min(h));
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 + 0.5 - ex, y as f64 + 0.5 - ey);
                let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
                let rho = ((lx / half_w).powi(10) + (ly / half_h).powi(10)).powf(0.1);
                let a = coverage(rho, half_w.min(half_h));
                if a > 0.0 {
                    canvas.blend(x, y, cob, a);
                }
            }
        }
    }

    // Kernels.
    for &(cx, cy) in &centers {
        let base = vary(&mut rng, [232.0, 178.0, 58.0], 0.08);
        let ry = r * rng.gen_range(0.95..=1.0);
        let rx = KERNEL_ASPECT * r * rng.gen_range(0.95..=1.0);
        draw_dome(&mut canvas, (cx, cy), (rx, ry), (s, c), base);
    }

    // Global lighting gradient in a random direction, then sensor noise.
    let phi = rng.gen_range(0.0..2.0 * PI);
    let (ls, lc) = phi.sin_cos();
    let diag = (w as f64).hypot(h as f64);
    let mut pixels = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let t = ((x as f64 - w as f64 / 2.0) * lc + (y as f64 - h as f64 / 2.0) * ls) / diag;
            let gain = 1.0 + params.lighting_gradient * t;
            for v in canvas.px[y * w + x] {
                let noisy = v * gain + rng.gen_range(-4.0..=4.0);
                pixels.push(noisy.round().clamp(0.0, 255.0) as u8);
            }
        }
    }

    let centers: Vec<[f64; 2]> = centers.into_iter().map(|(x, y)| [x, y]).collect();
    Ok(SyntheticEarTruth {
        image: RgbImage::new(w, h, pixels)?,
        visible_count: centers.len(),
        centers,
        hidden_ratio: params.hidden_ratio,
        seed,
        decoys,
    })
}

/// `ears` varied images of `width × height` (rotation up to `max_angle`
/// degrees), reproducible from `seed`.
pub fn synthetic_corpus(ears: usize, width: usize, height: usize, max_angle: f64, seed: u64) -> Result<Vec<SyntheticEarTruth>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..ears)
        .map(|_| {
            let params = EarParams::varied(&mut rng, width, height, max_angle)?;
            generate_synthetic_ear(&params, rng.gen())
        })
        .collect()
}
