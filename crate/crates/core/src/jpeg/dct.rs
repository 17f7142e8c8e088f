//! 8×8 transforms: an exact separable forward DCT and the classic
//! fixed-point (12-bit constant) inverse DCT used by baseline decoders.

use std::f64::consts::PI;
use std::sync::OnceLock;

fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let cu = if u == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5 * cu * (((2 * x + 1) as f64) * u as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

/// Forward DCT of a level-shifted block (natural order in and out).
pub fn forward_dct(block: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for x in 0..8 {
                s += b[u][x] * block[y * 8 + x];
            }
            tmp[y * 8 + u] = s;
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for y in 0..8 {
                s += b[v][y] * tmp[y * 8 + u];
            }
            out[v * 8 + u] = s;
        }
    }
    out
}

/// Reference floating-point inverse DCT, used by tests.
#[cfg(test)]
pub fn inverse_dct_f64(coefs: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut s = 0.0;
            for v in 0..8 {
                for u in 0..8 {
                    s += b[v][y] * b[u][x] * coefs[v * 8 + u];
                }
            }
            out[y * 8 + x] = s;
        }
    }
    out
}

const fn fix(x: f64) -> i32 {
    (x * 4096.0 + 0.5) as i32
}

struct Stage {
    x0: i32,
    x1: i32,
    x2: i32,
    x3: i32,
    t0: i32,
    t1: i32,
    t2: i32,
    t3: i32,
}

#[inline(always)]
fn idct_1d(s: [i32; 8]) -> Stage {
    // even part
    let p1 = (s[2] + s[6]).wrapping_mul(fix(0.541_196_1));
    let t2 = p1 + s[6].wrapping_mul(fix(-1.847_759_065));
    let t3 = p1 + s[2].wrapping_mul(fix(0.765_366_865));
    let t0 = (s[0] + s[4]) << 12;
    let t1 = (s[0] - s[4]) << 12;
    let (x0, x3, x1, x2) = (t0 + t3, t0 - t3, t1 + t2, t1 - t2);
    // odd part
    let (mut t0, mut t1, mut t2, mut t3) = (s[7], s[5], s[3], s[1]);
    let p3 = t0 + t2;
    let p4 = t1 + t3;
    let p1 = t0 + t3;
    let p2 = t1 + t2;
    let p5 = (p3 + p4).wrapping_mul(fix(1.175_875_602));
    t0 = t0.wrapping_mul(fix(0.298_631_336));
    t1 = t1.wrapping_mul(fix(2.053_119_869));
    t2 = t2.wrapping_mul(fix(3.072_711_026));
    t3 = t3.wrapping_mul(fix(1.501_321_110));
    let p1 = p5 + p1.wrapping_mul(fix(-0.899_976_223));
    let p2 = p5 + p2.wrapping_mul(fix(-2.562_915_447));
    let p3 = p3.wrapping_mul(fix(-1.961_570_560));
    let p4 = p4.wrapping_mul(fix(-0.390_180_644));
    Stage {
        x0,
        x1,
        x2,
        x3,
        t0: t0 + p1 + p3,
        t1: t1 + p2 + p4,
        t2: t2 + p2 + p3,
        t3: t3 + p1 + p4,
    }
}

/// Inverse DCT of dequantized coefficients (natural order) to level-shifted,
/// clamped 8-bit samples.
pub fn inverse_dct(coefs: &[i32; 64], out: &mut [u8; 64]) {
    if coefs[1..].iter().all(|&c| c == 0) {
        let v = ((coefs[0] + 4 + 1024) >> 3).clamp(0, 255) as u8;
        out.fill(v);
        return;
    }
    let mut tmp = [0i32; 64];
    for col in 0..8 {
        let s = std::array::from_fn(|k| coefs[k * 8 + col]);
        let st = idct_1d(s);
        let (x0, x1, x2, x3) = (st.x0 + 512, st.x1 + 512, st.x2 + 512, st.x3 + 512);
        tmp[col] = (x0 + st.t3) >> 10;
        tmp[col + 56] = (x0 - st.t3) >> 10;
        tmp[col + 8] = (x1 + st.t2) >> 10;
        tmp[col + 48] = (x1 - st.t2) >> 10;
        tmp[col + 16] = (x2 + st.t1) >> 10;
        tmp[col + 40] = (x2 - st.t1) >> 10;
        tmp[col + 24] = (x3 + st.t0) >> 10;
        tmp[col + 32] = (x3 - st.t0) >> 10;
    }
    // rows: rounding for both passes plus the +128 level shift, folded into one constant
    const BIAS: i32 = 512 + 65536 + (128 << 17);
    let clamp = |v: i32| (v >> 17).clamp(0, 255) as u8;
    for row in 0..8 {
        let s = std::array::from_fn(|k| tmp[row * 8 + k]);
        let st = idct_1d(s);
        let (x0, x1, x2, x3) = (st.x0 + BIAS, st.x1 + BIAS, st.x2 + BIAS, st.x3 + BIAS);
        let o = &mut out[row * 8..row * 8 + 8];
        o[0] = clamp(x0 + st.t3);
        o[7] = clamp(x0 - st.t3);
        o[1] = clamp(x1 + st.t2);
        o[6] = clamp(x1 - st.t2);
        o[2] = clamp(x2 + st.t1);
        o[5] = clamp(x2 - st.t1);
        o[3] = clamp(x3 + st.t0);
        o[4] = clamp(x3 - st.t0);
    }
}
