//! Dense 2D grids with a channel dimension, the value type flowing through
//! augmentation, mixing, the network, and the losses.
//!
//! Layout is row-major channel-last: element (y, x, c) lives at
//! `(y * W + x) * C + c`. Grids are immutable in practice (operations return
//! new grids), so sharing across threads is safe.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// H×W×C grid of f64 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Shape(format!("grid dims must be >= 1, got {h}x{w}x{c}")));
        }
        if data.len() != h * w * c {
            return Err(Error::Shape(format!(
                "data length {} does not match {h}x{w}x{c} = {}",
                data.len(),
                h * w * c
            )));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self::filled(h, w, c, 0.0)
    }

    pub fn filled(h: usize, w: usize, c: usize, v: f64) -> Self {
        assert!(h >= 1 && w >= 1 && c >= 1, "grid dims must be >= 1");
        Self { h, w, c, data: vec![v; h * w * c] }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        debug_assert!(y < self.h && x < self.w && c < self.c);
        (y * self.w + x) * self.c + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.idx(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.idx(y, x, c);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.h == other.h && self.w == other.w && self.c == other.c
    }

    pub fn spatial_matches(&self, other: &Grid) -> bool {
        self.h == other.h && self.w == other.w
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid { h: self.h, w: self.w, c: self.c, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Affine rescale so min maps to -1 and max to +1; constant grids map to 0.
    pub fn renormalized(&self) -> Grid {
        let (lo, hi) = self.min_max();
        if hi - lo < 1e-12 {
            return Grid::zeros(self.h, self.w, self.c);
        }
        self.map(|v| 2.0 * (v - lo) / (hi - lo) - 1.0)
    }

    /// Center pad (with `fill`) or crop to the target spatial size.
    pub fn pad_crop_center(&self, th: usize, tw: usize, fill: f64) -> Grid {
        let mut out = Grid::filled(th, tw, self.c, fill);
        // Offsets of the copied window in source/destination coordinates.
        let (sy, dy) = if self.h >= th { ((self.h - th) / 2, 0) } else { (0, (th - self.h) / 2) };
        let (sx, dx) = if self.w >= tw { ((self.w - tw) / 2, 0) } else { (0, (tw - self.w) / 2) };
        let ch = self.h.min(th);
        let cw = self.w.min(tw);
        for y in 0..ch {
            for x in 0..cw {
                for c in 0..self.c {
                    out.set(dy + y, dx + x, c, self.get(sy + y, sx + x, c));
                }
            }
        }
        out
    }

    /// Write the binary tensor dump: magic `MDG1`, three u32 LE dims
    /// (H, W, channels), then H*W*channels f32 LE values row-major
    /// channel-last.
    pub fn write_mdg1<W2: Write>(&self, mut out: W2) -> std::io::Result<()> {
        out.write_all(b"MDG1")?;
        out.write_all(&(self.h as u32).to_le_bytes())?;
        out.write_all(&(self.w as u32).to_le_bytes())?;
        out.write_all(&(self.c as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn read_mdg1<R: Read>(mut inp: R) -> Result<Grid> {
        let mut magic = [0u8; 4];
        inp.read_exact(&mut magic).map_err(|e| Error::Parse {
            offset: 0,
            msg: format!("missing MDG1 magic: {e}"),
        })?;
        if &magic != b"MDG1" {
            return Err(Error::Parse { offset: 0, msg: "bad magic, expected MDG1".into() });
        }
        let mut dims = [0usize; 3];
        for (i, d) in dims.iter_mut().enumerate() {
            let mut b = [0u8; 4];
            inp.read_exact(&mut b).map_err(|e| Error::Parse {
                offset: 4 + 4 * i,
                msg: format!("truncated dims: {e}"),
            })?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [h, w, c] = dims;
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::Parse { offset: 4, msg: "dims overflow".into() })?;
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 4];
        for i in 0..n {
            inp.read_exact(&mut b).map_err(|e| Error::Parse {
                offset: 16 + 4 * i,
                msg: format!("truncated payload: {e}"),
            })?;
            data.push(f32::from_le_bytes(b) as f64);
        }
        Grid::new(h, w, c, data)
    }

    pub fn write_mdg1_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_mdg1(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn read_mdg1_file(path: &Path) -> Result<Grid> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Grid::read_mdg1(std::io::BufReader::new(f))
    }
}

/// One-hot H×W×C map: per pixel exactly one channel equals 1.
#[derive(Clone, Debug, PartialEq)]
pub struct OneHotMap(Grid);

impl OneHotMap {
    pub fn new(grid: Grid) -> Result<Self> {
        for y in 0..grid.height() {
            for x in 0..grid.width() {
                let mut ones = 0usize;
                for c in 0..grid.channels() {
                    let v = grid.get(y, x, c);
                    if v == 1.0 {
                        ones += 1;
                    } else if v != 0.0 {
                        return Err(Error::Shape(format!(
                            "one-hot map has non-binary entry {v} at ({y},{x},{c})"
                        )));
                    }
                }
                if ones != 1 {
                    return Err(Error::Shape(format!(
                        "one-hot map has {ones} active channels at ({y},{x})"
                    )));
                }
            }
        }
        Ok(Self(grid))
    }

    /// Build from per-pixel class indices.
    pub fn from_classes(h: usize, w: usize, c: usize, classes: &[usize]) -> Result<Self> {
        if classes.len() != h * w {
            return Err(Error::Shape(format!(
                "class index length {} != {h}x{w}",
                classes.len()
            )));
        }
        let mut g = Grid::zeros(h, w, c);
        for y in 0..h {
            for x in 0..w {
                let k = classes[y * w + x];
                if k >= c {
                    return Err(Error::Shape(format!("class {k} out of range 0..{c}")));
                }
                g.set(y, x, k, 1.0);
            }
        }
        Ok(Self(g))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn class_at(&self, y: usize, x: usize) -> usize {
        let g = &self.0;
        (0..g.channels()).find(|&c| g.get(y, x, c) == 1.0).expect("validated one-hot")
    }
}

/// out = a ⊙ mask + b ⊙ (1 − mask), with the H×W mask broadcast across
/// channels when `a`/`b` carry more than one.
pub fn elementwise_mix(a: &Grid, b: &Grid, mask: &Grid) -> Result<Grid> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "mix operands differ: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    if !mask.spatial_matches(a) || mask.channels() != 1 {
        return Err(Error::Shape(format!(
            "mask {}x{}x{} does not broadcast over {}x{}x{}",
            mask.height(),
            mask.width(),
            mask.channels(),
            a.height(),
            a.width(),
            a.channels()
        )));
    }
    let c = a.channels();
    let mut data = Vec::with_capacity(a.data().len());
    for (i, (&va, &vb)) in a.data().iter().zip(b.data().iter()).enumerate() {
        let m = mask.data()[i / c];
        data.push(va * m + vb * (1.0 - m));
    }
    Grid::new(a.height(), a.width(), c, data)
}

/// Per-pixel argmax over channels, ties broken by lowest channel index.
pub fn argmax_channels(p: &Grid) -> Result<OneHotMap> {
    if p.channels() < 2 {
        return Err(Error::Shape(format!(
            "argmax needs >= 2 channels, got {}",
            p.channels()
        )));
    }
    let (h, w, c) = (p.height(), p.width(), p.channels());
    let mut g = Grid::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            let mut best_v = p.get(y, x, 0);
            for k in 1..c {
                let v = p.get(y, x, k);
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            g.set(y, x, best, 1.0);
        }
    }
    Ok(OneHotMap(g))
}
