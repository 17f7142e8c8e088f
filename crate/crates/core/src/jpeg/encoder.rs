use super::dct::forward_dct;
use super::tables::*;
use super::{ChromaSubsampling, JpegBytes, JpegConfig, JpegError};
use crate::lightfield::Image;

struct HuffmanCodes {
    // (code, length) per symbol
    table: [(u16, u8); 256],
}

impl HuffmanCodes {
    fn new(bits: &[u8; 16], vals: &[u8]) -> Self {
        let mut table = [(0u16, 0u8); 256];
        let mut code: u16 = 0;
        let mut k = 0;
        for (len_minus_one, &count) in bits.iter().enumerate() {
            for _ in 0..count {
                table[vals[k] as usize] = (code, len_minus_one as u8 + 1);
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        HuffmanCodes { table }
    }
}

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl BitWriter {
    fn new(out: Vec<u8>) -> Self {
        BitWriter {
            out,
            acc: 0,
            nbits: 0,
        }
    }

    fn put(&mut self, bits: u32, len: u32) {
        debug_assert!(len <= 16);
        if len == 0 {
            return;
        }
        self.acc = (self.acc << len) | (bits & ((1 << len) - 1));
        self.nbits += len;
        while self.nbits >= 8 {
            let byte = (self.acc >> (self.nbits - 8)) as u8;
            self.out.push(byte);
            if byte == 0xFF {
                self.out.push(0x00);
            }
            self.nbits -= 8;
        }
        self.acc &= (1 << self.nbits) - 1;
    }

    /// Pads the final partial byte with one-bits.
    fn flush(&mut self) {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put((1 << pad) - 1, pad);
        }
    }

    fn marker(&mut self, m: u8) {
        self.flush();
        self.out.push(0xFF);
        self.out.push(m);
    }
}

fn category(v: i32) -> u32 {
    32 - v.unsigned_abs().leading_zeros()
}

fn magnitude_bits(v: i32, n: u32) -> u32 {
    if v >= 0 {
        v as u32
    } else {
        (v + (1 << n) - 1) as u32
    }
}

struct Plane {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Plane {
    #[inline]
    fn at(&self, y: usize, x: usize) -> u8 {
        let y = y.min(self.height - 1);
        let x = x.min(self.width - 1);
        self.data[y * self.width + x]
    }
}

#[inline]
fn round_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn to_ycbcr(img: &Image) -> [Plane; 3] {
    let (h, w) = img.dims();
    let rgb = img.to_rgb8();
    let mut y = Vec::with_capacity(h * w);
    let mut cb = Vec::with_capacity(h * w);
    let mut cr = Vec::with_capacity(h * w);
    for px in rgb.chunks_exact(3) {
        let (r, g, b) = (f64::from(px[0]), f64::from(px[1]), f64::from(px[2]));
        y.push(round_u8(0.299 * r + 0.587 * g + 0.114 * b));
        cb.push(round_u8(-0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0));
        cr.push(round_u8(0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0));
    }
    let plane = |data| Plane {
        width: w,
        height: h,
        data,
    };
    [plane(y), plane(cb), plane(cr)]
}

fn downsample_2x2(p: &Plane) -> Plane {
    let width = p.width.div_ceil(2);
    let height = p.height.div_ceil(2);
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let s = u32::from(p.at(2 * y, 2 * x))
                + u32::from(p.at(2 * y, 2 * x + 1))
                + u32::from(p.at(2 * y + 1, 2 * x))
                + u32::from(p.at(2 * y + 1, 2 * x + 1));
            data.push(((s + 2) >> 2) as u8);
        }
    }
    Plane {
        width,
        height,
        data,
    }
}

fn write_segment(out: &mut Vec<u8>, marker: u8, payload: &[u8]) {
    out.extend_from_slice(&[0xFF, marker]);
    out.extend_from_slice(&((payload.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(payload);
}

fn write_dht(out: &mut Vec<u8>, class_id: u8, bits: &[u8; 16], vals: &[u8]) {
    let mut p = vec![class_id];
    p.extend_from_slice(bits);
    p.extend_from_slice(vals);
    write_segment(out, 0xC4, &p);
}

pub(super) fn encode(img: &Image, cfg: &JpegConfig) -> Result<JpegBytes, JpegError> {
    cfg.validate()?;
    let (h, w) = img.dims();
    if h > 65535 || w > 65535 {
        return Err(JpegError::TooLarge {
            width: w,
            height: h,
        });
    }

    let luma_q = scaled_quant(&BASE_LUMA_QUANT, cfg.quality);
    let chroma_q = scaled_quant(&BASE_CHROMA_QUANT, cfg.quality);

    let [y_plane, cb_full, cr_full] = to_ycbcr(img);
    let (hmax, vmax, cb, cr) = match cfg.chroma_subsampling {
        ChromaSubsampling::Yuv444 => (1, 1, cb_full, cr_full),
        ChromaSubsampling::Yuv420 => (2, 2, downsample_2x2(&cb_full), downsample_2x2(&cr_full)),
    };
    let planes = [&y_plane, &cb, &cr];
    let sampling = [(hmax, vmax), (1, 1), (1, 1)];

    let mut out = Vec::with_capacity(h * w / 4 + 1024);
    out.extend_from_slice(&[0xFF, 0xD8]);
    // JFIF 1.01, no density units, 1:1 aspect, no thumbnail
    write_segment(
        &mut out,
        0xE0,
        &[b'J', b'F', b'I', b'F', 0, 1, 1, 0, 0, 1, 0, 1, 0, 0],
    );
    for (id, table) in [(0u8, &luma_q), (1u8, &chroma_q)] {
        let mut p = vec![id];
        p.extend(ZIGZAG.iter().map(|&n| table[n] as u8));
        write_segment(&mut out, 0xDB, &p);
    }
    let mut sof = vec![8];
    sof.extend_from_slice(&(h as u16).to_be_bytes());
    sof.extend_from_slice(&(w as u16).to_be_bytes());
    sof.push(3);
    for (i, &(hs, vs)) in sampling.iter().enumerate() {
        sof.extend_from_slice(&[i as u8 + 1, ((hs as u8) << 4) | vs as u8, (i > 0) as u8]);
    }
    write_segment(&mut out, 0xC0, &sof);
    write_dht(&mut out, 0x00, &DC_LUMA_BITS, &DC_LUMA_VALS);
    write_dht(&mut out, 0x10, &AC_LUMA_BITS, &AC_LUMA_VALS);
    write_dht(&mut out, 0x01, &DC_CHROMA_BITS, &DC_CHROMA_VALS);
    write_dht(&mut out, 0x11, &AC_CHROMA_BITS, &AC_CHROMA_VALS);
    if cfg.restart_interval > 0 {
        write_segment(&mut out, 0xDD, &cfg.restart_interval.to_be_bytes());
    }
    write_segment(&mut out, 0xDA, &[3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0]);

    let dc_codes = [
        HuffmanCodes::new(&DC_LUMA_BITS, &DC_LUMA_VALS),
        HuffmanCodes::new(&DC_CHROMA_BITS, &DC_CHROMA_VALS),
    ];
    let ac_codes = [
        HuffmanCodes::new(&AC_LUMA_BITS, &AC_LUMA_VALS),
        HuffmanCodes::new(&AC_CHROMA_BITS, &AC_CHROMA_VALS),
    ];
    let quant = [&luma_q, &chroma_q, &chroma_q];

    let mcus_x = w.div_ceil(8 * hmax);
    let mcus_y = h.div_ceil(8 * vmax);
    let mut writer = BitWriter::new(out);
    let mut pred = [0i32; 3];
    let mut block = [0f64; 64];
    let mut restarts = 0u8;
    let ri = usize::from(cfg.restart_interval);

    for my in 0..mcus_y {
        for mx in 0..mcus_x {
            let index = my * mcus_x + mx;
            if ri > 0 && index > 0 && index % ri == 0 {
                writer.marker(0xD0 + (restarts & 7));
                restarts = restarts.wrapping_add(1);
                pred = [0; 3];
            }
            for c in 0..3 {
                let (hs, vs) = sampling[c];
                let table = usize::from(c > 0);
                for by in 0..vs {
                    for bx in 0..hs {
                        let y0 = (my * vs + by) * 8;
                        let x0 = (mx * hs + bx) * 8;
                        for yy in 0..8 {
                            for xx in 0..8 {
                                block[yy * 8 + xx] =
                                    f64::from(planes[c].at(y0 + yy, x0 + xx)) - 128.0;
                            }
                        }
                        let coefs = forward_dct(&block);
                        let mut zz = [0i32; 64];
                        for (k, &n) in ZIGZAG.iter().enumerate() {
                            zz[k] = (coefs[n] / f64::from(quant[c][n])).round() as i32;
                        }
                        encode_block(
                            &mut writer,
                            &zz,
                            &mut pred[c],
                            &dc_codes[table],
                            &ac_codes[table],
                        );
                    }
                }
            }
        }
    }
    writer.marker(0xD9);
    Ok(JpegBytes(writer.out))
}

fn encode_block(
    w: &mut BitWriter,
    zz: &[i32; 64],
    pred: &mut i32,
    dc: &HuffmanCodes,
    ac: &HuffmanCodes,
) {
    let diff = zz[0] - *pred;
    *pred = zz[0];
    let n = category(diff);
    let (code, len) = dc.table[n as usize];
    w.put(u32::from(code), u32::from(len));
    w.put(magnitude_bits(diff, n), n);

    let mut run = 0;
    for &v in &zz[1..] {
        if v == 0 {
            run += 1;
            continue;
        }
        while run > 15 {
            let (code, len) = ac.table[0xF0];
            w.put(u32::from(code), u32::from(len));
            run -= 16;
        }
        let n = category(v);
        let (code, len) = ac.table[((run << 4) | n) as usize];
        w.put(u32::from(code), u32::from(len));
        w.put(magnitude_bits(v, n), n);
        run = 0;
    }
    if run > 0 {
        let (code, len) = ac.table[0x00];
        w.put(u32::from(code), u32::from(len));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories() {
        assert_eq!(category(0), 0);
        assert_eq!(category(1), 1);
        assert_eq!(category(-1), 1);
        assert_eq!(category(-3), 2);
        assert_eq!(category(255), 8);
        assert_eq!(magnitude_bits(-1, 1), 0);
        assert_eq!(magnitude_bits(-3, 2), 0);
        assert_eq!(magnitude_bits(-2, 2), 1);
    }

    #[test]
    fn canonical_codes_for_dc_luma() {
        let t = HuffmanCodes::new(&DC_LUMA_BITS, &DC_LUMA_VALS);
        assert_eq!(t.table[0], (0b00, 2));
        assert_eq!(t.table[1], (0b010, 3));
        assert_eq!(t.table[5], (0b110, 3));
        assert_eq!(t.table[6], (0b1110, 4));
        assert_eq!(t.table[11], (0b1_1111_1110, 9));
    }

    #[test]
    fn byte_stuffing() {
        let mut w = BitWriter::new(Vec::new());
        w.put(0xFF, 8);
        w.put(0x1, 1);
        w.flush();
        assert_eq!(w.out, vec![0xFF, 0x00, 0xFF, 0x00]);
    }
}
