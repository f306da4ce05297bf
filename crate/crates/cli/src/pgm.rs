use std::fmt::Write as _;

/// Maps dBm linearly onto 0..=255 over `[lo, hi]`, clamping outside the
/// window. Missing values (NaN) render black.
pub fn gray_level(v: f64, lo: f64, hi: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * 255.0).round() as u8
}

/// ASCII PGM (P2). `values` is row-major with row 0 at the top (north).
pub fn render_p2(width: usize, height: usize, values: &[f64], lo: f64, hi: f64) -> String {
    assert_eq!(values.len(), width * height, "pixel count mismatch");
    let mut s = format!("P2\n# RSS window [{lo}, {hi}] dBm\n{width} {height}\n255\n");
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(|&v| gray_level(v, lo, hi).to_string()).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}
