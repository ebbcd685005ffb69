//! sRGB to CIE L*a*b* (D65).

const WHITE_D65: [f64; 3] = [0.950_47, 1.0, 1.088_83];

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn srgb_to_linear(c: f64) -> f64 {
    let c = c / 255.0;
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts 8-bit sRGB (values may be fractional, expected in `[0, 255]`) to `[L, a, b]`.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let mut xyz = [0.0; 3];
    for (row, out) in SRGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn rgb8_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    rgb_to_lab(rgb.map(f64::from))
}

/// Rec. 601 luma, rounded to 8 bits.
pub fn luma(rgb: [u8; 3]) -> u8 {
    let y = 0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64;
    y.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn black_and_white() {
        let k = rgb8_to_lab([0, 0, 0]);
        assert!(k.iter().all(|v| v.abs() < 1e-12), "{k:?}");
        let w = rgb8_to_lab([255, 255, 255]);
        assert!((w[0] - 100.0).abs() < 0.01 && w[1].abs() < 0.01 && w[2].abs() < 0.01, "{w:?}");
    }

    #[test]
    fn matches_reference_colorimetry() {
        // skimage.color.rgb2lab([[[128, 64, 32]]] / 255), D65 2°
        let expected = [34.724_796, 24.999_568, 31.372_840];
        let got = rgb8_to_lab([128, 64, 32]);
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 0.05, "{got:?} vs {expected:?}");
        }
    }

    #[test]
    fn injective_on_sampled_gamut() {
        let mut seen = HashSet::new();
        for r in (0..=255).step_by(5) {
            for g in (0..=255).step_by(5) {
                for b in (0..=255).step_by(5) {
                    let lab = rgb8_to_lab([r as u8, g as u8, b as u8]);
                    let key = lab.map(|v| (v * 1e9).round() as i64);
                    assert!(seen.insert(key), "collision at {r},{g},{b}");
                }
            }
        }
    }
}
