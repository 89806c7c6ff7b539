use std::f64::consts::PI;

use crate::error::{shape_err, Error, Result};
use crate::linalg::{c64, cis, ZERO};

/// `eᴴ(Ψ) x = Σ_k e^{j2π f_k Ψ} x_k`.
fn matched(row: &[c64], freqs: &[f64], psi: f64) -> c64 {
    row.iter()
        .zip(freqs)
        .fold(ZERO, |acc, (x, f)| acc + cis(2.0 * PI * f * psi) * x)
}

fn objective(row: &[c64], freqs: &[f64], psi: f64) -> f64 {
    matched(row, freqs, psi).norm_sqr()
}

/// Vertex of the parabola through `(−h, a), (0, b), (h, c)`, as a multiple of `h`.
fn parabolic_vertex(a: f64, b: f64, c: f64) -> f64 {
    let denom = a - 2.0 * b + c;
    if denom < 0.0 {
        (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Delay `Ψ̂` and gain `Υ̂` of one coefficient row `x_k = Υ e^{-j2π f_k Ψ}`.
///
/// `Ψ̂` maximizes `|eᴴ(Ψ) x|²` over `grid` points in `[0, window)`, refined by
/// repeated three-point parabolic fits with shrinking step. `Υ̂ = eᴴ(Ψ̂) x / K`.
pub fn estimate_delay_gain(row: &[c64], freqs: &[f64], window: f64, grid: usize) -> Result<(c64, f64)> {
    if row.len() != freqs.len() {
        return Err(shape_err("delay row", freqs.len(), row.len()));
    }
    if row.is_empty() || grid < 3 || !(window > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delay search needs data, ≥3 grid points and a positive window (got {} / {grid} / {window})",
            row.len()
        )));
    }
    let step = window / grid as f64;
    let values: Vec<f64> = (0..grid).map(|g| objective(row, freqs, g as f64 * step)).collect();
    let best = values
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > values[b] { i } else { b });
    let prev = values[(best + grid - 1) % grid];
    let next = values[(best + 1) % grid];
    let mut psi = best as f64 * step + parabolic_vertex(prev, values[best], next) * step;
    let mut h = step / 8.0;
    for _ in 0..3 {
        let (a, b, c) = (
            objective(row, freqs, psi - h),
            objective(row, freqs, psi),
            objective(row, freqs, psi + h),
        );
        psi += parabolic_vertex(a, b, c) * h;
        h /= 8.0;
    }
    let psi = psi.rem_euclid(window);
    let gain = matched(row, freqs, psi) / row.len() as f64;
    Ok((gain, psi))
}
