use super::dct::inverse_dct;
use super::tables::ZIGZAG;
use super::JpegError;
use crate::lightfield::Image;

#[derive(Clone)]
struct HuffmanTable {
    // canonical decoding tables indexed by code length 1..=16
    maxcode: [i32; 18],
    valptr: [i32; 17],
    mincode: [i32; 17],
    vals: Vec<u8>,
}

impl HuffmanTable {
    fn new(bits: &[u8; 16], vals: Vec<u8>) -> Result<Self, JpegError> {
        let total: usize = bits.iter().map(|&b| b as usize).sum();
        if total != vals.len() || total > 256 {
            return Err(JpegError::Corrupt("inconsistent huffman table".into()));
        }
        let mut maxcode = [-1i32; 18];
        let mut valptr = [0i32; 17];
        let mut mincode = [0i32; 17];
        let mut code = 0i32;
        let mut k = 0i32;
        for len in 1..=16 {
            let n = i32::from(bits[len - 1]);
            if n > 0 {
                valptr[len] = k;
                mincode[len] = code;
                code += n;
                k += n;
                maxcode[len] = code - 1;
            }
            if code > (1 << len) {
                return Err(JpegError::Corrupt("over-subscribed huffman table".into()));
            }
            code <<= 1;
        }
        maxcode[17] = i32::MAX;
        Ok(HuffmanTable {
            maxcode,
            valptr,
            mincode,
            vals,
        })
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u32,
    nbits: u32,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8], pos: usize) -> Self {
        BitReader {
            data,
            pos,
            acc: 0,
            nbits: 0,
        }
    }

    fn fill(&mut self) -> Result<(), JpegError> {
        let byte = *self.data.get(self.pos).ok_or(JpegError::Truncated)?;
        if byte == 0xFF {
            match self.data.get(self.pos + 1) {
                Some(0x00) => self.pos += 2,
                // a marker inside entropy-coded data means the scan ended early
                Some(_) => return Err(JpegError::Truncated),
                None => return Err(JpegError::Truncated),
            }
        } else {
            self.pos += 1;
        }
        self.acc = (self.acc << 8) | u32::from(byte);
        self.nbits += 8;
        Ok(())
    }

    fn bit(&mut self) -> Result<i32, JpegError> {
        if self.nbits == 0 {
            self.fill()?;
        }
        self.nbits -= 1;
        Ok(((self.acc >> self.nbits) & 1) as i32)
    }

    fn bits(&mut self, n: u32) -> Result<i32, JpegError> {
        while self.nbits < n {
            self.fill()?;
        }
        self.nbits -= n;
        Ok(((self.acc >> self.nbits) & ((1 << n) - 1)) as i32)
    }

    fn decode(&mut self, table: &HuffmanTable) -> Result<u8, JpegError> {
        let mut code = self.bit()?;
        let mut len = 1;
        while len <= 16 && code > table.maxcode[len] {
            code = (code << 1) | self.bit()?;
            len += 1;
        }
        if len > 16 {
            return Err(JpegError::Corrupt("invalid huffman code".into()));
        }
        let idx = table.valptr[len] + code - table.mincode[len];
        table
            .vals
            .get(idx as usize)
            .copied()
            .ok_or_else(|| JpegError::Corrupt("huffman index out of range".into()))
    }

    fn receive_extend(&mut self, s: u8) -> Result<i32, JpegError> {
        if s == 0 {
            return Ok(0);
        }
        if s > 16 {
            return Err(JpegError::Corrupt("coefficient magnitude category > 16".into()));
        }
        let v = self.bits(u32::from(s))?;
        Ok(if v < (1 << (s - 1)) {
            v - (1 << s) + 1
        } else {
            v
        })
    }

    /// Drops buffered bits and expects an `RSTn` marker next.
    fn restart(&mut self) -> Result<(), JpegError> {
        self.acc = 0;
        self.nbits = 0;
        // tolerate fill bytes before the marker
        while self.data.get(self.pos) == Some(&0xFF) && self.data.get(self.pos + 1) == Some(&0xFF)
        {
            self.pos += 1;
        }
        match (self.data.get(self.pos), self.data.get(self.pos + 1)) {
            (Some(0xFF), Some(m)) if (0xD0..=0xD7).contains(m) => {
                self.pos += 2;
                Ok(())
            }
            (None, _) | (_, None) => Err(JpegError::Truncated),
            _ => Err(JpegError::Corrupt("missing restart marker".into())),
        }
    }
}

#[derive(Clone)]
struct Component {
    id: u8,
    h: usize,
    v: usize,
    tq: usize,
    // blocks across/down in the padded MCU grid
    bw: usize,
    bh: usize,
    samples: Vec<u8>,
    dc_table: usize,
    ac_table: usize,
    pred: i32,
}

impl Component {
    fn stride(&self) -> usize {
        self.bw * 8
    }
}

struct Frame {
    width: usize,
    height: usize,
    hmax: usize,
    vmax: usize,
    mcus_x: usize,
    mcus_y: usize,
    components: Vec<Component>,
}

fn read_u16(data: &[u8], pos: usize) -> Result<usize, JpegError> {
    match data.get(pos..pos + 2) {
        Some(b) => Ok(usize::from(u16::from_be_bytes([b[0], b[1]]))),
        None => Err(JpegError::Truncated),
    }
}

fn segment(data: &[u8], pos: usize) -> Result<&[u8], JpegError> {
    let len = read_u16(data, pos)?;
    if len < 2 {
        return Err(JpegError::Corrupt("segment length < 2".into()));
    }
    data.get(pos + 2..pos + len).ok_or(JpegError::Truncated)
}

pub(super) fn decode(data: &[u8]) -> Result<Image, JpegError> {
    if data.len() < 2 || data[0] != 0xFF || data[1] != 0xD8 {
        return Err(JpegError::NotJpeg);
    }
    let mut pos = 2;
    let mut qt: [Option<[u16; 64]>; 4] = [None; 4];
    let mut dc_tables: [Option<HuffmanTable>; 4] = [None, None, None, None];
    let mut ac_tables: [Option<HuffmanTable>; 4] = [None, None, None, None];
    let mut restart_interval = 0usize;
    let mut frame: Option<Frame> = None;
    let mut scanned = false;

    loop {
        // find the next marker, skipping fill bytes
        while data.get(pos) == Some(&0xFF) && data.get(pos + 1) == Some(&0xFF) {
            pos += 1;
        }
        let (Some(&0xFF), Some(&marker)) = (data.get(pos), data.get(pos + 1)) else {
            return Err(if pos >= data.len() {
                JpegError::Truncated
            } else {
                JpegError::Corrupt(format!("expected marker at offset {pos}"))
            });
        };
        pos += 2;
        match marker {
            0xD9 => break,
            0xC0 | 0xC1 => {
                let seg = segment(data, pos)?;
                frame = Some(parse_frame(seg)?);
                pos += seg.len() + 2;
            }
            0xC2 | 0xC6 | 0xCA | 0xCE => {
                return Err(JpegError::Unsupported("progressive coding"));
            }
            0xC3 | 0xC7 | 0xCB | 0xCF => {
                return Err(JpegError::Unsupported("lossless coding"));
            }
            0xC5 => return Err(JpegError::Unsupported("hierarchical coding")),
            0xC9 | 0xCC => return Err(JpegError::Unsupported("arithmetic coding")),
            0xC4 => {
                let seg = segment(data, pos)?;
                let mut p = 0;
                while p < seg.len() {
                    let tc = seg[p] >> 4;
                    let th = usize::from(seg[p] & 15);
                    let bits: [u8; 16] = seg
                        .get(p + 1..p + 17)
                        .ok_or(JpegError::Truncated)?
                        .try_into()
                        .expect("16 bytes");
                    let n: usize = bits.iter().map(|&b| b as usize).sum();
                    let vals = seg.get(p + 17..p + 17 + n).ok_or(JpegError::Truncated)?;
                    if th > 3 || tc > 1 {
                        return Err(JpegError::Corrupt("bad huffman table id".into()));
                    }
                    let table = HuffmanTable::new(&bits, vals.to_vec())?;
                    if tc == 0 {
                        dc_tables[th] = Some(table);
                    } else {
                        ac_tables[th] = Some(table);
                    }
                    p += 17 + n;
                }
                pos += seg.len() + 2;
            }
            0xDB => {
                let seg = segment(data, pos)?;
                let mut p = 0;
                while p < seg.len() {
                    let precision = seg[p] >> 4;
                    let id = usize::from(seg[p] & 15);
                    if id > 3 {
                        return Err(JpegError::Corrupt("bad quantization table id".into()));
                    }
                    let mut table = [0u16; 64];
                    if precision == 0 {
                        let vals = seg.get(p + 1..p + 65).ok_or(JpegError::Truncated)?;
                        for (k, &v) in vals.iter().enumerate() {
                            table[ZIGZAG[k]] = u16::from(v);
                        }
                        p += 65;
                    } else {
                        let vals = seg.get(p + 1..p + 129).ok_or(JpegError::Truncated)?;
                        for k in 0..64 {
                            table[ZIGZAG[k]] = u16::from_be_bytes([vals[2 * k], vals[2 * k + 1]]);
                        }
                        p += 129;
                    }
                    qt[id] = Some(table);
                }
                pos += seg.len() + 2;
            }
            0xDD => {
                let seg = segment(data, pos)?;
                restart_interval = read_u16(seg, 0)?;
                pos += seg.len() + 2;
            }
            0xDA => {
                let seg = segment(data, pos)?;
                pos += seg.len() + 2;
                let fr = frame
                    .as_mut()
                    .ok_or_else(|| JpegError::Corrupt("scan before frame header".into()))?;
                pos = decode_scan(
                    data,
                    pos,
                    seg,
                    fr,
                    &qt,
                    &dc_tables,
                    &ac_tables,
                    restart_interval,
                )?;
                scanned = true;
            }
            0xD0..=0xD7 | 0x01 => {}
            0xE0..=0xEF | 0xFE | 0xDC | 0xDE | 0xDF => {
                let seg = segment(data, pos)?;
                pos += seg.len() + 2;
            }
            other => {
                return Err(JpegError::Corrupt(format!("unexpected marker 0xFF{other:02X}")));
            }
        }
    }

    let frame = frame.ok_or_else(|| JpegError::Corrupt("no frame header".into()))?;
    if !scanned {
        return Err(JpegError::Truncated);
    }
    Ok(assemble(&frame))
}

fn parse_frame(seg: &[u8]) -> Result<Frame, JpegError> {
    if seg.len() < 6 {
        return Err(JpegError::Truncated);
    }
    if seg[0] != 8 {
        return Err(JpegError::Unsupported("sample precision other than 8 bits"));
    }
    let height = read_u16(seg, 1)?;
    let width = read_u16(seg, 3)?;
    let nc = usize::from(seg[5]);
    if height == 0 || width == 0 {
        return Err(JpegError::Unsupported("zero or deferred image height"));
    }
    if nc != 1 && nc != 3 {
        return Err(JpegError::Unsupported("component count other than 1 or 3"));
    }
    if seg.len() < 6 + 3 * nc {
        return Err(JpegError::Truncated);
    }
    let mut components = Vec::with_capacity(nc);
    for i in 0..nc {
        let c = &seg[6 + 3 * i..9 + 3 * i];
        let (h, v) = (usize::from(c[1] >> 4), usize::from(c[1] & 15));
        if !(1..=4).contains(&h) || !(1..=4).contains(&v) || c[2] > 3 {
            return Err(JpegError::Corrupt("bad component parameters".into()));
        }
        components.push(Component {
            id: c[0],
            h,
            v,
            tq: usize::from(c[2]),
            bw: 0,
            bh: 0,
            samples: Vec::new(),
            dc_table: 0,
            ac_table: 0,
            pred: 0,
        });
    }
    let hmax = components.iter().map(|c| c.h).max().unwrap_or(1);
    let vmax = components.iter().map(|c| c.v).max().unwrap_or(1);
    let mcus_x = width.div_ceil(8 * hmax);
    let mcus_y = height.div_ceil(8 * vmax);
    for c in &mut components {
        c.bw = mcus_x * c.h;
        c.bh = mcus_y * c.v;
        c.samples = vec![0; c.bw * c.bh * 64];
    }
    Ok(Frame {
        width,
        height,
        hmax,
        vmax,
        mcus_x,
        mcus_y,
        components,
    })
}

#[allow(clippy::too_many_arguments)]
fn decode_scan(
    data: &[u8],
    pos: usize,
    header: &[u8],
    frame: &mut Frame,
    qt: &[Option<[u16; 64]>; 4],
    dc_tables: &[Option<HuffmanTable>; 4],
    ac_tables: &[Option<HuffmanTable>; 4],
    restart_interval: usize,
) -> Result<usize, JpegError> {
    let ns = usize::from(*header.first().ok_or(JpegError::Truncated)?);
    if ns == 0 || header.len() < 1 + 2 * ns + 3 {
        return Err(JpegError::Corrupt("bad scan header".into()));
    }
    let mut members = Vec::with_capacity(ns);
    for i in 0..ns {
        let id = header[1 + 2 * i];
        let tables = header[2 + 2 * i];
        let ci = frame
            .components
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| JpegError::Corrupt(format!("scan references unknown component {id}")))?;
        let comp = &mut frame.components[ci];
        comp.dc_table = usize::from(tables >> 4);
        comp.ac_table = usize::from(tables & 15);
        if comp.dc_table > 3 || comp.ac_table > 3 {
            return Err(JpegError::Corrupt("bad huffman table selector".into()));
        }
        comp.pred = 0;
        members.push(ci);
    }
    let (ss, se, a) = (header[1 + 2 * ns], header[2 + 2 * ns], header[3 + 2 * ns]);
    if ss != 0 || se != 63 || a != 0 {
        return Err(JpegError::Unsupported("spectral selection or successive approximation"));
    }
    for &ci in &members {
        let c = &frame.components[ci];
        if qt[c.tq].is_none() {
            return Err(JpegError::Corrupt("missing quantization table".into()));
        }
        if dc_tables[c.dc_table].is_none() || ac_tables[c.ac_table].is_none() {
            return Err(JpegError::Corrupt("missing huffman table".into()));
        }
    }

    let mut reader = BitReader::new(data, pos);
    let mut coefs = [0i32; 64];
    let mut block = [0u8; 64];

    // a single-component scan is non-interleaved: one block per MCU
    let (units_x, units_y) = if ns == 1 {
        let c = &frame.components[members[0]];
        (
            (frame.width * c.h).div_ceil(8 * frame.hmax),
            (frame.height * c.v).div_ceil(8 * frame.vmax),
        )
    } else {
        (frame.mcus_x, frame.mcus_y)
    };

    for my in 0..units_y {
        for mx in 0..units_x {
            let index = my * units_x + mx;
            if restart_interval > 0 && index > 0 && index % restart_interval == 0 {
                reader.restart()?;
                for &ci in &members {
                    frame.components[ci].pred = 0;
                }
            }
            for &ci in &members {
                let comp = &mut frame.components[ci];
                let (bh, bv) = if ns == 1 { (1, 1) } else { (comp.h, comp.v) };
                let q = qt[comp.tq].as_ref().expect("checked");
                let dc = dc_tables[comp.dc_table].as_ref().expect("checked");
                let ac = ac_tables[comp.ac_table].as_ref().expect("checked");
                for by in 0..bv {
                    for bx in 0..bh {
                        decode_block(&mut reader, dc, ac, q, &mut comp.pred, &mut coefs)?;
                        inverse_dct(&coefs, &mut block);
                        let (row, col) = if ns == 1 {
                            (my, mx)
                        } else {
                            (my * comp.v + by, mx * comp.h + bx)
                        };
                        let stride = comp.stride();
                        for yy in 0..8 {
                            let off = (row * 8 + yy) * stride + col * 8;
                            comp.samples[off..off + 8].copy_from_slice(&block[yy * 8..yy * 8 + 8]);
                        }
                    }
                }
            }
        }
    }
    Ok(reader.pos)
}

fn decode_block(
    r: &mut BitReader<'_>,
    dc: &HuffmanTable,
    ac: &HuffmanTable,
    q: &[u16; 64],
    pred: &mut i32,
    coefs: &mut [i32; 64],
) -> Result<(), JpegError> {
    coefs.fill(0);
    let t = r.decode(dc)?;
    let diff = r.receive_extend(t)?;
    *pred += diff;
    coefs[0] = dequant(*pred, q[0]);
    let mut k = 1;
    while k < 64 {
        let rs = r.decode(ac)?;
        let (run, size) = (usize::from(rs >> 4), rs & 15);
        if size == 0 {
            if run == 15 {
                k += 16;
                continue;
            }
            break;
        }
        k += run;
        if k > 63 {
            return Err(JpegError::Corrupt("coefficient index past 63".into()));
        }
        let n = ZIGZAG[k];
        coefs[n] = dequant(r.receive_extend(size)?, q[n]);
        k += 1;
    }
    Ok(())
}

#[inline]
fn dequant(v: i32, q: u16) -> i32 {
    // keeps the fixed-point transform clear of overflow on corrupt input
    (v * i32::from(q)).clamp(-8192, 8191)
}

/// Triangle-filter upsampling by two along rows (`(3·near + far + 2) >> 2`).
fn upsample_rows(src: &[i32], width: usize, height: usize) -> Vec<i32> {
    let mut out = vec![0; width * height * 2];
    for y in 0..height {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(height - 1);
        for x in 0..width {
            let c = 3 * src[y * width + x] + 2;
            out[(2 * y) * width + x] = (c + src[up * width + x]) >> 2;
            out[(2 * y + 1) * width + x] = (c + src[down * width + x]) >> 2;
        }
    }
    out
}

fn upsample_cols(src: &[i32], width: usize, height: usize) -> Vec<i32> {
    let mut out = vec![0; width * height * 2];
    let ow = width * 2;
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..width {
            let left = row[x.saturating_sub(1)];
            let right = row[(x + 1).min(width - 1)];
            let c = 3 * row[x] + 2;
            out[y * ow + 2 * x] = (c + left) >> 2;
            out[y * ow + 2 * x + 1] = (c + right) >> 2;
        }
    }
    out
}

/// Produces a full-resolution plane (`frame.width × frame.height`) for a component.
fn full_plane(frame: &Frame, c: &Component) -> Vec<i32> {
    let (w, h) = (frame.width, frame.height);
    // the component's own (unpadded) extent
    let cw = (w * c.h).div_ceil(frame.hmax);
    let chh = (h * c.v).div_ceil(frame.vmax);
    let stride = c.stride();
    // one decoded padding sample past each edge, when present, is the
    // triangle filter's outer neighbour
    let cw = (cw + 1).min(stride);
    let chh = (chh + 1).min(c.samples.len() / stride);
    let mut plane: Vec<i32> = (0..chh)
        .flat_map(|y| c.samples[y * stride..y * stride + cw].iter().map(|&v| i32::from(v)))
        .collect();
    let (mut pw, mut ph) = (cw, chh);
    let rows_full = c.v == frame.vmax || c.v * 2 == frame.vmax;
    let cols_full = c.h == frame.hmax || c.h * 2 == frame.hmax;
    if c.v * 2 == frame.vmax {
        plane = upsample_rows(&plane, pw, ph);
        ph *= 2;
    }
    if c.h * 2 == frame.hmax {
        plane = upsample_cols(&plane, pw, ph);
        pw *= 2;
    }
    // nearest-neighbour for other ratios, then crop to the frame
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let py = if rows_full { y } else { y * c.v / frame.vmax }.min(ph - 1);
        for x in 0..w {
            let px = if cols_full { x } else { x * c.h / frame.hmax }.min(pw - 1);
            out.push(plane[py * pw + px]);
        }
    }
    out
}

fn assemble(frame: &Frame) -> Image {
    let (w, h) = (frame.width, frame.height);
    let planes: Vec<Vec<i32>> = frame
        .components
        .iter()
        .map(|c| full_plane(frame, c))
        .collect();
    let mut rgb = Vec::with_capacity(w * h * 3);
    if planes.len() == 1 {
        for &y in &planes[0] {
            let v = y.clamp(0, 255) as u8;
            rgb.extend_from_slice(&[v, v, v]);
        }
    } else {
        // 16-bit fixed-point full-range YCbCr -> RGB
        const CR_R: i32 = 91_881; // 1.402
        const CB_G: i32 = 22_554; // 0.344136
        const CR_G: i32 = 46_802; // 0.714136
        const CB_B: i32 = 116_130; // 1.772
        const HALF: i32 = 1 << 15;
        for ((&y, &cb), &cr) in planes[0].iter().zip(&planes[1]).zip(&planes[2]).take(w * h) {
            let y = y << 16;
            let (cb, cr) = (cb - 128, cr - 128);
            let r = (y + CR_R * cr + HALF) >> 16;
            let g = (y - CB_G * cb - CR_G * cr + HALF) >> 16;
            let b = (y + CB_B * cb + HALF) >> 16;
            rgb.extend_from_slice(&[
                r.clamp(0, 255) as u8,
                g.clamp(0, 255) as u8,
                b.clamp(0, 255) as u8,
            ]);
        }
    }
    Image::from_rgb8(h, w, &rgb)
}
