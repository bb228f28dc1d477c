//! Byte-exact file formats. All multi-byte fields are little-endian.
//!
//! Model (`.satr`):
//! ```text
//! "SATR" | version u16 | spec_len u32 | spec JSON (UTF-8, spec_len bytes)
//! | block_count u32 | blocks...
//! block: layer_index u32 | name_len u8 | name | rank u8 | dims u32 * rank | values f32 * prod(dims)
//! ```
//!
//! Real raster (`.sasr`): `"SASR" | width u32 | height u32 | values f32 * width*height`, row-major.
//!
//! SVM (`.ssvm`):
//! ```text
//! "SSVM" | version u16 | K u32 | dim u32 | C f64
//! | K * (name_len u8 | name)
//! | K * (w f64 * dim | b f64)
//! | mean f64 * dim | scale f64 * dim
//! ```
//!
//! 8-bit images are binary PGM (`P5`, maxval 1..=255).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Network, NetworkSpec, ParamBlock, ParamKind, WeightStore};
use crate::raster::{GrayImage, Raster};
use crate::svm::SvmModel;

pub const MODEL_MAGIC: [u8; 4] = *b"SATR";
pub const MODEL_VERSION: u16 = 1;
pub const RASTER_MAGIC: [u8; 4] = *b"SASR";
pub const SVM_MAGIC: [u8; 4] = *b"SSVM";
pub const SVM_VERSION: u16 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let avail = self.buf.len() - self.pos;
        if n > avail {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n - avail,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Header("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Header("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found = self.array::<4>()?;
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(Error::TrailingBytes(n)),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::file(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

fn push_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::arg(format!("{what} ({n}) does not fit in u32")))
}

/// Serializes a model. Weights are narrowed to `f32` with round-to-nearest.
pub fn encode_model(net: &Network) -> Result<Vec<u8>> {
    let spec = net.spec().to_json();
    let blocks = &net.weights().blocks;
    let mut out = Vec::with_capacity(14 + spec.len() + 4 * net.weights().param_count() + 32 * blocks.len());
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&len_u32(spec.len(), "spec length")?.to_le_bytes());
    out.extend_from_slice(spec.as_bytes());
    out.extend_from_slice(&len_u32(blocks.len(), "block count")?.to_le_bytes());
    for b in blocks {
        out.extend_from_slice(&len_u32(b.layer_index, "layer index")?.to_le_bytes());
        let name = b.kind.as_str();
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
        out.push(b.shape.len() as u8);
        for &d in &b.shape {
            out.extend_from_slice(&len_u32(d, "dimension")?.to_le_bytes());
        }
        push_f32s(&mut out, &b.values);
    }
    Ok(out)
}

/// Parses a model file, widening weights to `f64`.
pub fn decode_model(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let spec_len = r.u32()? as usize;
    let spec_text = std::str::from_utf8(r.take(spec_len)?)
        .map_err(|e| Error::Header(format!("spec is not UTF-8: {e}")))?;
    let spec = NetworkSpec::from_json(spec_text)?;
    let count = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let layer_index = r.u32()? as usize;
        let name_len = r.u8()? as usize;
        let name = r.take(name_len)?;
        let kind = std::str::from_utf8(name)
            .ok()
            .and_then(ParamKind::parse)
            .ok_or_else(|| Error::ShapeMismatch(format!("unknown block name {:?}", String::from_utf8_lossy(name))))?;
        let rank = r.u8()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Header("block size overflow".into()))?;
        let values = r.f32s(n)?;
        blocks.push(ParamBlock {
            layer_index,
            kind,
            shape,
            values,
        });
    }
    r.finish()?;
    Network::new(spec, WeightStore { blocks })
}

pub fn save_model(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    write_file(path.as_ref(), &encode_model(net)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    decode_model(&read_file(path.as_ref())?)
}

pub fn encode_raster(r: &Raster) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * r.data().len());
    out.extend_from_slice(&RASTER_MAGIC);
    out.extend_from_slice(&len_u32(r.width(), "width")?.to_le_bytes());
    out.extend_from_slice(&len_u32(r.height(), "height")?.to_le_bytes());
    push_f32s(&mut out, r.data());
    Ok(out)
}

pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    let mut r = Reader::new(bytes);
    r.magic(RASTER_MAGIC)?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    if width == 0 || height == 0 {
        return Err(Error::Header(format!("empty raster {width}x{height}")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Header("raster size overflow".into()))?;
    let values = r.f32s(n)?;
    r.finish()?;
    Raster::new(width, height, values)
}

pub fn write_sasr(path: impl AsRef<Path>, r: &Raster) -> Result<()> {
    write_file(path.as_ref(), &encode_raster(r)?)
}

pub fn read_sasr(path: impl AsRef<Path>) -> Result<Raster> {
    decode_raster(&read_file(path.as_ref())?)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Header("not a binary PGM (missing P5 magic)".into()));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // whitespace and '#' comments may separate header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Header("header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Header(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("digits")
            .parse()
            .map_err(|_| Error::Header("header number out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Header("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval == 0 {
        return Err(Error::Header("maxval must be positive".into()));
    }
    if maxval > 255 {
        return Err(Error::UnsupportedDepth(maxval));
    }
    let n = (width as usize)
        .checked_mul(height as usize)
        .ok_or_else(|| Error::Header("image size overflow".into()))?;
    let mut r = Reader { buf: bytes, pos };
    let pixels = r.take(n)?.to_vec();
    if let Some(index) = pixels.iter().position(|&p| u32::from(p) > maxval) {
        return Err(Error::ValueOverflow {
            index,
            value: f64::from(pixels[index]),
        });
    }
    r.finish()?;
    GrayImage::new(width as usize, height as usize, pixels).map_err(|e| Error::Header(e.to_string()))
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    write_file(path.as_ref(), &encode_pgm(img))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    decode_pgm(&read_file(path.as_ref())?)
}

/// Loads either raster flavour by extension: `.pgm` as 8-bit, anything else as SASR.
pub fn read_image(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    if is_pgm(path) {
        Ok(read_pgm(path)?.to_raster())
    } else {
        read_sasr(path)
    }
}

pub fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

pub fn encode_svm(model: &SvmModel) -> Result<Vec<u8>> {
    let k = model.class_names().len();
    let dim = model.dim();
    let mut out = Vec::with_capacity(26 + 16 * k + 8 * (k + 2) * dim + 8 * k);
    out.extend_from_slice(&SVM_MAGIC);
    out.extend_from_slice(&SVM_VERSION.to_le_bytes());
    out.extend_from_slice(&len_u32(k, "class count")?.to_le_bytes());
    out.extend_from_slice(&len_u32(dim, "feature dim")?.to_le_bytes());
    out.extend_from_slice(&model.c().to_le_bytes());
    for name in model.class_names() {
        let bytes = name.as_bytes();
        let len = u8::try_from(bytes.len()).map_err(|_| Error::arg(format!("class name {name:?} longer than 255 bytes")))?;
        out.push(len);
        out.extend_from_slice(bytes);
    }
    for (w, b) in model.weights().iter().zip(model.biases()) {
        push_f64s(&mut out, w);
        out.extend_from_slice(&b.to_le_bytes());
    }
    push_f64s(&mut out, model.mean());
    push_f64s(&mut out, model.scale());
    Ok(out)
}

pub fn decode_svm(bytes: &[u8]) -> Result<SvmModel> {
    let mut r = Reader::new(bytes);
    r.magic(SVM_MAGIC)?;
    let version = r.u16()?;
    if version != SVM_VERSION {
        return Err(Error::Version {
            expected: SVM_VERSION,
            found: version,
        });
    }
    let k = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let c = r.f64()?;
    let mut names = Vec::with_capacity(k.min(1024));
    for _ in 0..k {
        let len = r.u8()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Header(format!("class name is not UTF-8: {e}")))?;
        names.push(name.to_string());
    }
    let mut weights = Vec::with_capacity(k.min(1024));
    let mut biases = Vec::with_capacity(k.min(1024));
    for _ in 0..k {
        weights.push(r.f64s(dim)?);
        biases.push(r.f64()?);
    }
    let mean = r.f64s(dim)?;
    let scale = r.f64s(dim)?;
    r.finish()?;
    SvmModel::from_parts(names, weights, biases, c, mean, scale)
}

pub fn save_svm(path: impl AsRef<Path>, model: &SvmModel) -> Result<()> {
    write_file(path.as_ref(), &encode_svm(model)?)
}

pub fn load_svm(path: impl AsRef<Path>) -> Result<SvmModel> {
    decode_svm(&read_file(path.as_ref())?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    /// Written with exactly six decimals.
    Real(f64),
    /// A metric that is undefined (zero denominator), written as `NA`.
    Undefined,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Real(v) => format!("{v:.6}"),
            Cell::Undefined => "NA".to_string(),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Undefined, Cell::Real)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultsTable {
    pub fn new(header: &[&str]) -> Self {
        ResultsTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::arg(format!(
                "row has {} cells, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    /// UTF-8 CSV with a header row and LF line endings.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

pub fn write_results_csv(path: impl AsRef<Path>, table: &ResultsTable) -> Result<()> {
    let path = path.as_ref();
    let bytes = table.to_csv()?;
    let mut f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::file(path, e))
}
