//! Batch plot emission: a PCKh-vs-threshold curve per method and a
//! per-joint accuracy bar chart, both as PNG files. Rendering is
//! self-contained (direct rasterization plus an embedded 5x7 pixel font),
//! so it works on headless machines with no font stack.

use std::path::{Path, PathBuf};

use thermopose::types::JOINT_NAMES;

use crate::stages::ReportFile;

const SERIES_COLORS: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

/// Writes `pckh_curve.png` and `per_joint.png`; returns the file paths.
pub fn emit_plots(reports: &[ReportFile], dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if reports.is_empty() {
        anyhow::bail!("emit_plots needs at least one report");
    }
    std::fs::create_dir_all(dir)?;
    let curve = dir.join("pckh_curve.png");
    let bars = dir.join("per_joint.png");
    draw_curve(reports, &curve)?;
    draw_bars(reports, &bars)?;
    Ok(vec![curve, bars])
}

fn draw_curve(reports: &[ReportFile], path: &Path) -> anyhow::Result<()> {
    let (w, h) = (900usize, 600usize);
    let mut canvas = Canvas::new(w, h);
    let plot = Rect { x0: 80, y0: 50, x1: w - 30, y1: h - 70 };
    canvas.text_scaled("pckh vs threshold", plot.x0, 18, [0, 0, 0], 2);

    let t_max = reports
        .iter()
        .flat_map(|r| r.sweep.iter().map(|(t, _)| *t))
        .fold(0.5f64, f64::max);

    canvas.frame_and_grid(&plot, t_max, 100.0);
    canvas.text_scaled("threshold (fraction of head length)", plot.x0 + 140, h - 30, [0, 0, 0], 1);
    canvas.vtext("pckh %", 20, plot.y0 + 150, [0, 0, 0]);

    for (i, report) in reports.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let mut pts = report.sweep.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut prev: Option<(usize, usize)> = None;
        for &(t, acc) in &pts {
            let px = plot.x0 + ((t / t_max) * (plot.x1 - plot.x0) as f64) as usize;
            let py = plot.y1 - ((acc / 100.0) * (plot.y1 - plot.y0) as f64) as usize;
            canvas.disc(px, py, 3, color);
            if let Some((qx, qy)) = prev {
                canvas.line(qx, qy, px, py, color);
            }
            prev = Some((px, py));
        }
        // legend entry
        let ly = plot.y0 + 16 * i + 8;
        canvas.fill_rect(plot.x1 - 190, ly, plot.x1 - 174, ly + 8, color);
        canvas.text(&report.method, plot.x1 - 168, ly, [0, 0, 0]);
    }
    canvas.save(path)
}

fn draw_bars(reports: &[ReportFile], path: &Path) -> anyhow::Result<()> {
    let (w, h) = (1200usize, 600usize);
    let mut canvas = Canvas::new(w, h);
    let plot = Rect { x0: 80, y0: 50, x1: w - 30, y1: h - 90 };
    canvas.text_scaled("per-joint pckh", plot.x0, 18, [0, 0, 0], 2);
    canvas.frame_and_grid(&plot, JOINT_NAMES.len() as f64, 100.0);
    canvas.vtext("pckh %", 20, plot.y0 + 150, [0, 0, 0]);

    let k = JOINT_NAMES.len();
    let slot = (plot.x1 - plot.x0) as f64 / k as f64;
    let bar_w = (slot * 0.85 / reports.len() as f64).max(2.0);

    for (j, name) in JOINT_NAMES.iter().enumerate() {
        let base_x = plot.x0 as f64 + j as f64 * slot;
        // stagger labels to keep them readable in narrow slots
        let label_y = plot.y1 + 10 + (j % 2) * 14;
        canvas.text(name, base_x as usize + 2, label_y, [0, 0, 0]);
        for (i, report) in reports.iter().enumerate() {
            let acc = report.per_joint.get(j).copied().unwrap_or(0.0);
            let x0 = base_x + slot * 0.075 + i as f64 * bar_w;
            let y_top = plot.y1 as f64 - (acc / 100.0) * (plot.y1 - plot.y0) as f64;
            canvas.fill_rect(
                x0 as usize,
                y_top as usize,
                (x0 + bar_w * 0.9) as usize,
                plot.y1,
                SERIES_COLORS[i % SERIES_COLORS.len()],
            );
        }
    }
    for (i, report) in reports.iter().enumerate() {
        let ly = plot.y0 + 16 * i + 8;
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        canvas.fill_rect(plot.x1 - 190, ly, plot.x1 - 174, ly + 8, color);
        canvas.text(&report.method, plot.x1 - 168, ly, [0, 0, 0]);
    }
    canvas.save(path)
}

struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self { w, h, px: vec![255; w * h * 3] }
    }

    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.w && y < self.h {
            let at = (y * self.w + x) * 3;
            self.px[at..at + 3].copy_from_slice(&c);
        }
    }

    fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, c: [u8; 3]) {
        for y in y0..=y1.min(self.h - 1) {
            for x in x0..=x1.min(self.w - 1) {
                self.put(x, y, c);
            }
        }
    }

    fn line(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, c: [u8; 3]) {
        // Bresenham over isize
        let (mut x, mut y) = (x0 as isize, y0 as isize);
        let (x1, y1) = (x1 as isize, y1 as isize);
        let dx = (x1 - x).abs();
        let dy = -(y1 - y).abs();
        let sx = if x < x1 { 1 } else { -1 };
        let sy = if y < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.put(x as usize, y as usize, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn disc(&mut self, cx: usize, cy: usize, r: isize, c: [u8; 3]) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    let x = cx as isize + dx;
                    let y = cy as isize + dy;
                    if x >= 0 && y >= 0 {
                        self.put(x as usize, y as usize, c);
                    }
                }
            }
        }
    }

    fn frame_and_grid(&mut self, plot: &Rect, x_max: f64, y_max: f64) {
        let grey = [210, 210, 210];
        let black = [0, 0, 0];
        // horizontal gridlines every 20 units of y plus tick labels
        let mut v = 0.0;
        while v <= y_max + 1e-9 {
            let y = plot.y1 - ((v / y_max) * (plot.y1 - plot.y0) as f64) as usize;
            if v > 0.0 && v < y_max {
                for x in plot.x0..plot.x1 {
                    self.put(x, y, grey);
                }
            }
            self.text(&format!("{v:.0}"), plot.x0.saturating_sub(34), y.saturating_sub(3), black);
            v += 20.0;
        }
        // x tick labels at quarters
        for q in 0..=4 {
            let t = x_max * q as f64 / 4.0;
            let x = plot.x0 + ((t / x_max) * (plot.x1 - plot.x0) as f64) as usize;
            self.text(&format!("{t:.2}"), x.saturating_sub(10), plot.y1 + 6, black);
        }
        // frame
        self.line(plot.x0, plot.y0, plot.x1, plot.y0, black);
        self.line(plot.x0, plot.y1, plot.x1, plot.y1, black);
        self.line(plot.x0, plot.y0, plot.x0, plot.y1, black);
        self.line(plot.x1, plot.y0, plot.x1, plot.y1, black);
    }

    fn text(&mut self, s: &str, x: usize, y: usize, c: [u8; 3]) {
        self.text_scaled(s, x, y, c, 1);
    }

    fn text_scaled(&mut self, s: &str, x: usize, y: usize, c: [u8; 3], scale: usize) {
        let mut cx = x;
        for ch in s.chars() {
            let glyph = glyph_for(ch.to_ascii_lowercase());
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..5 {
                    if bits & (0b10000 >> col) != 0 {
                        for sy in 0..scale {
                            for sx in 0..scale {
                                self.put(cx + col * scale + sx, y + row * scale + sy, c);
                            }
                        }
                    }
                }
            }
            cx += 6 * scale;
        }
    }

    // vertical text, marching downward
    fn vtext(&mut self, s: &str, x: usize, y: usize, c: [u8; 3]) {
        for (i, ch) in s.chars().enumerate() {
            let mut one = String::new();
            one.push(ch);
            self.text(&one, x, y + i * 9, c);
        }
    }

    fn save(&self, path: &Path) -> anyhow::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), self.w as u32, self.h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.px)?;
        Ok(())
    }
}

// 5x7 bitmap glyphs; each byte is one row, low 5 bits used.
fn glyph_for(ch: char) -> [u8; 7] {
    match ch {
        'a' => [0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F, 0x00],
        'b' => [0x10, 0x10, 0x1E, 0x11, 0x11, 0x1E, 0x00],
        'c' => [0x00, 0x0E, 0x10, 0x10, 0x10, 0x0E, 0x00],
        'd' => [0x01, 0x01, 0x0F, 0x11, 0x11, 0x0F, 0x00],
        'e' => [0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E, 0x00],
        'f' => [0x06, 0x08, 0x1C, 0x08, 0x08, 0x08, 0x00],
        'g' => [0x00, 0x0F, 0x11, 0x0F, 0x01, 0x0E, 0x00],
        'h' => [0x10, 0x10, 0x1E, 0x11, 0x11, 0x11, 0x00],
        'i' => [0x04, 0x00, 0x0C, 0x04, 0x04, 0x0E, 0x00],
        'j' => [0x02, 0x00, 0x06, 0x02, 0x12, 0x0C, 0x00],
        'k' => [0x10, 0x12, 0x14, 0x18, 0x14, 0x12, 0x00],
        'l' => [0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E, 0x00],
        'm' => [0x00, 0x1A, 0x15, 0x15, 0x15, 0x15, 0x00],
        'n' => [0x00, 0x1E, 0x11, 0x11, 0x11, 0x11, 0x00],
        'o' => [0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E, 0x00],
        'p' => [0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10, 0x00],
        'q' => [0x00, 0x0F, 0x11, 0x0F, 0x01, 0x01, 0x00],
        'r' => [0x00, 0x16, 0x18, 0x10, 0x10, 0x10, 0x00],
        's' => [0x00, 0x0F, 0x10, 0x0E, 0x01, 0x1E, 0x00],
        't' => [0x08, 0x1C, 0x08, 0x08, 0x08, 0x06, 0x00],
        'u' => [0x00, 0x11, 0x11, 0x11, 0x11, 0x0F, 0x00],
        'v' => [0x00, 0x11, 0x11, 0x11, 0x0A, 0x04, 0x00],
        'w' => [0x00, 0x15, 0x15, 0x15, 0x15, 0x0A, 0x00],
        'x' => [0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x00],
        'y' => [0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E, 0x00],
        'z' => [0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F, 0x00],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x0E, 0x00],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x0E, 0x00],
        '2' => [0x0E, 0x11, 0x02, 0x04, 0x08, 0x1F, 0x00],
        '3' => [0x1E, 0x01, 0x0E, 0x01, 0x01, 0x1E, 0x00],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x00],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x1E, 0x00],
        '6' => [0x0E, 0x10, 0x1E, 0x11, 0x11, 0x0E, 0x00],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x00],
        '8' => [0x0E, 0x11, 0x0E, 0x11, 0x11, 0x0E, 0x00],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x0E, 0x00],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x04, 0x00],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x04, 0x08, 0x00],
        '-' => [0x00, 0x00, 0x1F, 0x00, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x1F, 0x00],
        '%' => [0x19, 0x1A, 0x02, 0x04, 0x0B, 0x13, 0x00],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x04, 0x02, 0x00],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x04, 0x08, 0x00],
        '@' => [0x0E, 0x11, 0x17, 0x15, 0x17, 0x0E, 0x00],
        '/' => [0x01, 0x02, 0x04, 0x08, 0x10, 0x10, 0x00],
        ':' => [0x00, 0x04, 0x00, 0x00, 0x04, 0x00, 0x00],
        _ => [0x00; 7],
    }
}
