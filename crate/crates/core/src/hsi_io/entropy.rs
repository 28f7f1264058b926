use super::HsiCube;

pub const ENTROPY_BINS: usize = 256;

/// Shannon entropy (nats) of each band's 256-bin histogram after min–max
/// normalisation. A constant band fills one bin and scores 0.
pub fn band_entropy(cube: &HsiCube) -> Vec<f64> {
    (0..cube.bands())
        .map(|b| histogram_entropy(cube.band(b)))
        .collect()
}

fn histogram_entropy(values: &[f32]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return 0.0;
    }
    let mut hist = [0usize; ENTROPY_BINS];
    for &v in values {
        let t = (v as f64 - lo) / range;
        let bin = ((t * ENTROPY_BINS as f64) as usize).min(ENTROPY_BINS - 1);
        hist[bin] += 1;
    }
    let n = values.len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}
